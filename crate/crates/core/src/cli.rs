//! Command-line front end: `generate`, `fit`, `reconstruct`, `eval`,
//! `benchmark`, `alpha-study` and `pgm` subcommands with deterministic,
//! documented file I/O.
//!
//! Every run writes its fully resolved configuration (`run_config.json`)
//! next to its outputs for provenance. With a fixed `--seed` and
//! `--threads 1` all outputs are byte-identical across runs; timing never
//! enters output files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    famem_fit, ifa_em_fit, mcem_fit, pca_init, saem_fit, FamemConfig, FitTrace, IfaEmConfig,
    McemConfig, SaemConfig,
};
use crate::eval::{
    self, align, convergence_time, generate, run_benchmark, BenchmarkConfig, EstimatorKind,
    Scenario,
};
use crate::io;
use crate::model::{ModelKind, ModelSpec, Parameters};
use crate::recon::{reconstruct, ReconOptions};

/// Environment variable overriding the default worker-thread count.
pub const THREADS_ENV: &str = "PROBICA_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "probica",
    version,
    about = "Probabilistic ICA: SAEM/MCEM/EM estimation, MAP reconstruction and synthetic benchmarks"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a synthetic dataset (data.csv, truth.json, hidden.csv).
    Generate(GenerateArgs),
    /// Fit a model to a CSV dataset (params.json, trace.csv, summary.json).
    Fit(Box<FitArgs>),
    /// MAP-reconstruct hidden components for each observation.
    Reconstruct(ReconstructArgs),
    /// Compare fitted parameters against a reference (aligned MSE, t_conv).
    Eval(EvalArgs),
    /// Run the cross/square benchmark suite (report.csv, report.md, images).
    Benchmark(BenchmarkArgs),
    /// Estimated activation probability as a function of the component count.
    AlphaStudy(AlphaStudyArgs),
    /// Dump decomposition columns as PGM images.
    Pgm(PgmArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Built-in scenario: bg-cross-square | intervals8.
    #[arg(long, conflicts_with = "params")]
    scenario: Option<String>,
    /// Generate from an explicit parameter file instead.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Noise standard deviation (scenario generators only).
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Default)]
struct FitArgs {
    /// Dataset CSV (one observation per row).
    data: Option<PathBuf>,
    /// Optional JSON config; explicit flags win over file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// log | lap | eg | ifa | bg | ebg | et | te | teoff.
    #[arg(long)]
    model: Option<String>,
    /// saem | mcem | em-ifa | fam-em.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    p: Option<usize>,
    /// IFA mixture size K.
    #[arg(long = "K")]
    mixture_size: Option<usize>,
    /// Shift the Gaussian part of the components (eg/bg/ebg).
    #[arg(long)]
    shifted: bool,
    /// Do not estimate the constant mean mu0.
    #[arg(long)]
    no_mu0: bool,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    step_exponent: Option<f64>,
    #[arg(long)]
    sweeps: Option<usize>,
    /// Monte Carlo samples per E-step (mcem).
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Keep every THIN-th trace row.
    #[arg(long)]
    thin: Option<usize>,
    /// Warm-start parameters instead of the PCA initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    /// The dataset CSV has a header row.
    #[arg(long)]
    has_header: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// File form of the fit configuration; any subset of fields may be present.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitFileConfig {
    data: Option<PathBuf>,
    model: Option<String>,
    estimator: Option<String>,
    p: Option<usize>,
    mixture_size: Option<usize>,
    shifted: Option<bool>,
    no_mu0: Option<bool>,
    iters: Option<usize>,
    burn_in: Option<usize>,
    step_exponent: Option<f64>,
    sweeps: Option<usize>,
    mc_samples: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    thin: Option<usize>,
    init: Option<PathBuf>,
    has_header: Option<bool>,
    out_dir: Option<PathBuf>,
}

/// Fully resolved fit settings, serialized for provenance.
#[derive(Debug, Serialize)]
struct ResolvedFitConfig {
    data: PathBuf,
    model: String,
    estimator: String,
    p: usize,
    mixture_size: Option<usize>,
    shifted: bool,
    estimate_mu0: bool,
    iterations: usize,
    burn_in: usize,
    step_exponent: f64,
    sweeps_per_iter: usize,
    mc_samples: usize,
    seed: u64,
    threads: usize,
    thin: usize,
    init: Option<PathBuf>,
    has_header: bool,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Observations CSV.
    data: PathBuf,
    #[arg(long)]
    params: PathBuf,
    #[arg(long, default_value = "recon.csv")]
    out: PathBuf,
    #[arg(long)]
    has_header: bool,
    /// Disable the local-search fallback beyond the exhaustive budgets.
    #[arg(long)]
    no_local_search: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Estimated parameter file.
    #[arg(long)]
    est: PathBuf,
    /// Reference parameter file.
    #[arg(long)]
    truth: PathBuf,
    /// Optional trace CSV for the convergence time.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Output file; omit to print to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Suite name; `table1-desk` is the built-in cross/square comparison.
    #[arg(long, default_value = "table1-desk")]
    suite: String,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigmas: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "benchmark-out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct AlphaStudyArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Comma-separated component counts.
    #[arg(long, default_value = "8,16,32")]
    p_list: String,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 1200)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "alpha_study.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PgmArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Entry point used by the binary.
pub fn run_from_env() -> Result<()> {
    let cli = Cli::parse();
    run(cli)
}

/// Entry point for tests: parse explicit arguments.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Parse(e.to_string()))?;
    run(cli)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Fit(args) => cmd_fit(*args),
        Command::Reconstruct(args) => cmd_reconstruct(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::AlphaStudy(args) => cmd_alpha_study(args),
        Command::Pgm(args) => cmd_pgm(args),
    }
}

fn env_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

fn resolve_threads(flag: Option<usize>) -> usize {
    flag.unwrap_or_else(env_threads)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_run_config<T: Serialize>(dir: &Path, config: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(config)
        .map_err(|e| Error::Parse(format!("serializing run config: {e}")))?;
    body.push('\n');
    std::fs::write(dir.join("run_config.json"), body)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    ensure_dir(&args.out_dir)?;
    let scenario = match (&args.scenario, &args.params) {
        (Some(name), None) => match name.as_str() {
            "bg-cross-square" => Scenario::bg_cross_square(args.n, args.sigma)?,
            "intervals8" => Scenario::intervals8(args.n, args.sigma)?,
            other => {
                return Err(Error::Parse(format!(
                    "unknown scenario '{other}' (expected bg-cross-square or intervals8)"
                )))
            }
        },
        (None, Some(path)) => {
            let (spec, theta) = io::read_params_json(path)?;
            Scenario::custom("custom", spec, theta, args.n)
        }
        _ => {
            return Err(Error::Parse(
                "exactly one of --scenario and --params is required".into(),
            ))
        }
    };

    let (data, hidden) = generate(&scenario, args.seed)?;
    io::write_dataset_csv(&args.out_dir.join("data.csv"), &data)?;
    io::write_params_json(
        &args.out_dir.join("truth.json"),
        &scenario.spec,
        &scenario.truth,
        Some(args.seed),
    )?;
    io::write_hidden_csv(&args.out_dir.join("hidden.csv"), &scenario.spec, &hidden)?;

    #[derive(Serialize)]
    struct GenerateConfig<'a> {
        scenario: &'a str,
        n: usize,
        sigma: f64,
        seed: u64,
    }
    write_run_config(
        &args.out_dir,
        &GenerateConfig {
            scenario: &scenario.name,
            n: args.n,
            sigma: scenario.sigma(),
            seed: args.seed,
        },
    )?;
    eprintln!(
        "wrote {} observations of dimension {} to {}",
        data.n(),
        data.dim(),
        args.out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

fn merge_fit_args(mut args: FitArgs) -> Result<FitArgs> {
    let Some(config_path) = args.config.take() else {
        return Ok(args);
    };
    let body = std::fs::read_to_string(&config_path)?;
    let file: FitFileConfig = serde_json::from_str(&body)
        .map_err(|e| Error::Parse(format!("{}: {e}", config_path.display())))?;
    // flags win over file values
    args.data = args.data.or(file.data);
    args.model = args.model.or(file.model);
    args.estimator = args.estimator.or(file.estimator);
    args.p = args.p.or(file.p);
    args.mixture_size = args.mixture_size.or(file.mixture_size);
    args.shifted = args.shifted || file.shifted.unwrap_or(false);
    args.no_mu0 = args.no_mu0 || file.no_mu0.unwrap_or(false);
    args.iters = args.iters.or(file.iters);
    args.burn_in = args.burn_in.or(file.burn_in);
    args.step_exponent = args.step_exponent.or(file.step_exponent);
    args.sweeps = args.sweeps.or(file.sweeps);
    args.mc_samples = args.mc_samples.or(file.mc_samples);
    args.seed = args.seed.or(file.seed);
    args.threads = args.threads.or(file.threads);
    args.thin = args.thin.or(file.thin);
    args.init = args.init.or(file.init);
    args.has_header = args.has_header || file.has_header.unwrap_or(false);
    args.out_dir = args.out_dir.or(file.out_dir);
    Ok(args)
}

#[derive(Serialize)]
struct FitSummary<'a> {
    model: &'a str,
    estimator: &'a str,
    n: usize,
    d: usize,
    p: usize,
    iterations: usize,
    final_sigma2: f64,
    acceptance: &'a [f64],
    truncation_resets: usize,
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let args = merge_fit_args(args)?;
    let data_path = args
        .data
        .clone()
        .ok_or_else(|| Error::Parse("missing dataset path".into()))?;
    let model: ModelKind = args
        .model
        .as_deref()
        .ok_or_else(|| Error::Parse("missing --model".into()))?
        .parse()?;
    let estimator: EstimatorKind = args
        .estimator
        .as_deref()
        .ok_or_else(|| Error::Parse("missing --estimator".into()))?
        .parse()?;
    match estimator {
        EstimatorKind::EmIfa if model != ModelKind::Ifa => {
            return Err(Error::InvalidSpec("em-ifa requires model ifa".into()))
        }
        EstimatorKind::FamEm if model != ModelKind::Log => {
            return Err(Error::InvalidSpec("fam-em requires model log".into()))
        }
        _ => {}
    }

    let data = io::read_dataset_csv(&data_path, args.has_header)?;
    let p = args.p.unwrap_or(2);
    let mut spec = ModelSpec::new(model, p, data.dim())?;
    if let Some(k) = args.mixture_size {
        spec = spec.with_mixture_size(k)?;
    }
    if args.shifted {
        spec = spec.with_shift()?;
    }
    if args.no_mu0 && spec.kind != ModelKind::TeOff {
        spec = spec.with_estimate_mu0(false)?;
    }

    let iterations = args.iters.unwrap_or(5000);
    let seed = args.seed.unwrap_or(0);
    let threads = resolve_threads(args.threads);
    let thin = args.thin.unwrap_or(1).max(1);
    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out_dir)?;

    let init = match &args.init {
        Some(path) => {
            let (init_spec, init_theta) = io::read_params_json(path)?;
            if init_spec != spec {
                return Err(Error::InvalidSpec(
                    "warm-start parameters do not match the requested model".into(),
                ));
            }
            init_theta
        }
        None => pca_init(&spec, &data, seed)?,
    };

    let mut saem_cfg = SaemConfig::new(iterations).with_seed(seed);
    if let Some(b) = args.burn_in {
        saem_cfg.burn_in = b;
    }
    if let Some(a) = args.step_exponent {
        saem_cfg.step_exponent = a;
    }
    if let Some(s) = args.sweeps {
        saem_cfg.sweeps_per_iter = s;
    }
    saem_cfg.threads = threads;
    saem_cfg.thin = thin;
    let mc_samples = args.mc_samples.unwrap_or(10);

    let (theta, trace): (Parameters, FitTrace) = match estimator {
        EstimatorKind::Saem => saem_fit(&spec, &data, &init, &saem_cfg)?,
        EstimatorKind::Mcem => {
            let mut cfg = McemConfig::new(iterations, mc_samples);
            cfg.seed = seed;
            cfg.threads = threads;
            cfg.thin = thin;
            mcem_fit(&spec, &data, &init, &cfg)?
        }
        EstimatorKind::EmIfa => {
            let mut cfg = IfaEmConfig::new(iterations);
            cfg.threads = threads;
            cfg.thin = thin;
            ifa_em_fit(&spec, &data, &init, &cfg)?
        }
        EstimatorKind::FamEm => {
            let mut cfg = FamemConfig::new(iterations);
            cfg.threads = threads;
            cfg.thin = thin;
            famem_fit(&spec, &data, &init, &cfg)?
        }
    };

    io::write_params_json(&out_dir.join("params.json"), &spec, &theta, Some(seed))?;
    io::write_trace_csv(&out_dir.join("trace.csv"), &trace)?;
    let summary = FitSummary {
        model: model.as_str(),
        estimator: estimator.as_str(),
        n: data.n(),
        d: data.dim(),
        p,
        iterations,
        final_sigma2: theta.sigma2,
        acceptance: &trace.acceptance,
        truncation_resets: trace.truncation_resets,
    };
    let mut body = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Parse(format!("serializing summary: {e}")))?;
    body.push('\n');
    std::fs::write(out_dir.join("summary.json"), body)?;

    write_run_config(
        &out_dir,
        &ResolvedFitConfig {
            data: data_path,
            model: model.to_string(),
            estimator: estimator.as_str().to_string(),
            p,
            mixture_size: spec.mixture_size,
            shifted: spec.shifted,
            estimate_mu0: spec.estimate_mu0,
            iterations,
            burn_in: saem_cfg.burn_in,
            step_exponent: saem_cfg.step_exponent,
            sweeps_per_iter: saem_cfg.sweeps_per_iter,
            mc_samples,
            seed,
            threads,
            thin,
            init: args.init.clone(),
            has_header: args.has_header,
        },
    )?;
    eprintln!(
        "fit complete: sigma2 = {:.6}, outputs in {} ({:.1}s)",
        theta.sigma2,
        out_dir.display(),
        trace.total_seconds
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------

fn cmd_reconstruct(args: ReconstructArgs) -> Result<()> {
    let (spec, theta) = io::read_params_json(&args.params)?;
    let data = io::read_dataset_csv(&args.data, args.has_header)?;
    if data.dim() != spec.d {
        return Err(Error::DimensionMismatch(format!(
            "observations have dimension {}, parameters expect {}",
            data.dim(),
            spec.d
        )));
    }
    let opts = ReconOptions {
        allow_local_search: !args.no_local_search,
        seed: args.seed,
        ..ReconOptions::default()
    };
    let results = (0..data.n())
        .map(|k| reconstruct(&spec, &theta, data.row(k), &opts))
        .collect::<Result<Vec<_>>>()?;
    io::write_recon_csv(&args.out, &spec, &results)?;
    eprintln!("wrote {} reconstructions to {}", results.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (_spec_est, theta_est) = io::read_params_json(&args.est)?;
    let (_spec_true, theta_true) = io::read_params_json(&args.truth)?;
    let alignment = align(&theta_est.a, &theta_true.a)?;
    let mut out = String::new();
    out.push_str("metric,value\n");
    out.push_str(&format!("aligned_mse,{}\n", alignment.mse));
    out.push_str(&format!(
        "sigma2_est,{}\nsigma2_true,{}\n",
        theta_est.sigma2, theta_true.sigma2
    ));
    if let Some(trace_path) = &args.trace {
        let trace = io::read_trace_csv(trace_path)?;
        out.push_str(&format!("t_conv,{}\n", convergence_time(&trace)?));
    }
    match &args.out {
        Some(path) => std::fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

fn cmd_benchmark(args: BenchmarkArgs) -> Result<()> {
    if args.suite != "table1-desk" {
        return Err(Error::Parse(format!(
            "unknown suite '{}' (available: table1-desk)",
            args.suite
        )));
    }
    let mut cfg = BenchmarkConfig::table1_desk();
    if let Some(r) = args.repeats {
        cfg.repeats = r;
    }
    if let Some(i) = args.iters {
        cfg.iterations = i;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(s) = &args.sigmas {
        cfg.sigmas = s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad sigma '{v}'")))
            })
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.threads = resolve_threads(args.threads);

    ensure_dir(&args.out_dir)?;
    let report = run_benchmark(&cfg)?;
    std::fs::write(args.out_dir.join("report.csv"), report.to_csv())?;
    std::fs::write(args.out_dir.join("report.md"), report.to_markdown())?;

    // true components for visual comparison
    let components_dir = args.out_dir.join("components");
    ensure_dir(&components_dir)?;
    io::write_pgm(
        &components_dir.join("true_cross.pgm"),
        &eval::cross_image(),
        eval::IMAGE_SIDE,
        eval::IMAGE_SIDE,
    )?;
    io::write_pgm(
        &components_dir.join("true_square.pgm"),
        &eval::square_image(),
        eval::IMAGE_SIDE,
        eval::IMAGE_SIDE,
    )?;
    for (label, a) in &report.example_components {
        for j in 0..a.ncols() {
            let name = format!("{}_col{}.pgm", label.replace('/', "-"), j);
            io::write_pgm(
                &components_dir.join(name),
                &a.column(j).into_owned(),
                eval::IMAGE_SIDE,
                eval::IMAGE_SIDE,
            )?;
        }
    }

    #[derive(Serialize)]
    struct BenchRunConfig<'a> {
        suite: &'a str,
        sigmas: &'a [f64],
        n: usize,
        repeats: usize,
        iterations: usize,
        famem_iterations: usize,
        mcem_iterations: usize,
        mcem_samples: usize,
        seed: u64,
        threads: usize,
    }
    write_run_config(
        &args.out_dir,
        &BenchRunConfig {
            suite: &args.suite,
            sigmas: &cfg.sigmas,
            n: cfg.n,
            repeats: cfg.repeats,
            iterations: cfg.iterations,
            famem_iterations: cfg.famem_iterations,
            mcem_iterations: cfg.mcem_iterations,
            mcem_samples: cfg.mcem_samples,
            seed: cfg.seed,
            threads: cfg.threads,
        },
    )?;
    eprintln!("benchmark report written to {}", args.out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// alpha-study
// ---------------------------------------------------------------------------

fn cmd_alpha_study(args: AlphaStudyArgs) -> Result<()> {
    let p_list = args
        .p_list
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad component count '{v}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let threads = resolve_threads(args.threads);
    let rows = if threads == 0 {
        eval::alpha_vs_p_study(args.n, args.sigma, &p_list, args.repeats, args.iters, args.seed)?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
            .install(|| {
                eval::alpha_vs_p_study(
                    args.n,
                    args.sigma,
                    &p_list,
                    args.repeats,
                    args.iters,
                    args.seed,
                )
            })?
    };
    let mut out = String::from("p,median_alpha,expected_active,median_mse,alpha_hats\n");
    for row in &rows {
        let hats = row
            .alpha_hats
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.p, row.median_alpha, row.expected_active, row.median_mse, hats
        ));
    }
    std::fs::write(&args.out, out)?;
    eprintln!("alpha study written to {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// pgm
// ---------------------------------------------------------------------------

fn cmd_pgm(args: PgmArgs) -> Result<()> {
    let (spec, theta) = io::read_params_json(&args.params)?;
    if args.rows * args.cols != spec.d {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} image does not match d = {}",
            args.rows, args.cols, spec.d
        )));
    }
    ensure_dir(&args.out_dir)?;
    for j in 0..spec.p {
        io::write_pgm(
            &args.out_dir.join(format!("component_{j}.pgm")),
            &theta.a.column(j).into_owned(),
            args.rows,
            args.cols,
        )?;
    }
    if let Some(mu0) = &theta.mu0 {
        io::write_pgm(&args.out_dir.join("mu0.pgm"), mu0, args.rows, args.cols)?;
    }
    eprintln!("wrote {} component images to {}", spec.p, args.out_dir.display());
    Ok(())
}
