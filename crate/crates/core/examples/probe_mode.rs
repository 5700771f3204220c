// per-column normalization variant of the mode-plugging EM, for comparison
use nalgebra::{DMatrix, DVector};
use probica::dist::ModelKernel;
use probica::estimators::pca_init;
use probica::eval::{align, generate, Scenario};
use probica::model::HiddenState;
use probica::recon::logistic_mode;
use rayon::prelude::*;

fn main() {
    for sigma in [0.5, 1.5] {
        let scenario = Scenario::bg_cross_square(100, sigma).unwrap();
        let mses: Vec<f64> = (0..6u64)
            .into_par_iter()
            .map(|r| {
                let seed = probica::rng::mix(42, &[r]);
                let (data, _) = generate(&scenario, seed).unwrap();
                let spec = probica::ModelSpec::new(probica::ModelKind::Log, 2, 256).unwrap();
                let kernel = ModelKernel::new(spec.clone());
                let mut theta = pca_init(&spec, &data, seed).unwrap();
                let mut modes = vec![DVector::<f64>::zeros(2); 100];
                for _t in 0..1000 {
                    for k in 0..100 {
                        let xc = data.row(k) - theta.mu0.as_ref().unwrap();
                        let (b, _) = logistic_mode(&theta.a, theta.sigma2, &xc, &modes[k], 1e-8, 50_000).unwrap();
                        modes[k] = b;
                    }
                    let stats: Vec<_> = (0..100)
                        .map(|k| kernel.extract_stats(data.row(k), &HiddenState::Continuous { beta: modes[k].clone() }).unwrap())
                        .collect();
                    let mean = probica::SuffStats::mean_of(&stats).unwrap();
                    theta = kernel.m_step(&mean).unwrap();
                    // per-column rescale
                    for j in 0..2 {
                        let msq: f64 = modes.iter().map(|b| b[j] * b[j]).sum::<f64>() / 100.0;
                        if msq > 0.0 {
                            let c = (std::f64::consts::LN_2 / msq).sqrt();
                            for b in &mut modes {
                                b[j] *= c;
                            }
                            let col = theta.a.column(j) / c;
                            theta.a.set_column(j, &col);
                        }
                    }
                }
                align(&theta.a, &scenario.truth.a).unwrap().mse
            })
            .collect();
        let mean = mses.iter().sum::<f64>() / mses.len() as f64;
        println!("sigma {sigma} per-column famem mean {mean:.3} {:?}", mses.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>());
    }
    let _ = DMatrix::<f64>::zeros(1, 1);
}
