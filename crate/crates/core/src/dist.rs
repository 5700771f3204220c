//! Per-model exponential-family machinery.
//!
//! Every component family is driven through one [`ModelKernel`] bundling
//! prior sampling, the complete-data log-likelihood, sufficient-statistic
//! extraction, the closed-form M-step and single-coordinate prior-conditional
//! proposals for the Gibbs sampler. The complete likelihood of each model
//! factors as `phi(theta) . S(x,z) - log C(theta)`, so the M-step only ever
//! sees averaged statistics.
//!
//! Conventions:
//! - logistic components have CDF `1/(1+exp(-2t))`, sampled by inverse CDF
//!   `t = logit(u)/2`; Laplacians are sign-flipped exponentials;
//! - the ternary probability is `gamma = P(Y=1) = P(Y=-1)`, so its maximum
//!   likelihood update is `gamma = [zeta]/(2p)`;
//! - discrete probabilities used in proposals are clipped away from their
//!   boundaries so the Gibbs kernel stays irreducible.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{beta_of, HiddenState, Mixture, ModelKind, ModelSpec, Parameters, SuffStats};

/// Floor keeping discrete probabilities away from degenerate boundaries.
pub const PROB_FLOOR: f64 = 1e-3;
/// Condition-number threshold beyond which `[beta beta^T]` is ridged.
pub const COND_LIMIT: f64 = 1e12;
/// Ridge scale relative to `trace/q`.
pub const RIDGE_SCALE: f64 = 1e-8;
/// Floor for the noise variance produced by the M-step.
pub const SIGMA2_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn clip_alpha(alpha: f64) -> f64 {
    alpha.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

pub fn clip_gamma(gamma: f64) -> f64 {
    gamma.clamp(PROB_FLOOR, 0.5 - PROB_FLOOR)
}

pub fn clip_weights(weights: &[f64]) -> Vec<f64> {
    let mut w: Vec<f64> = weights.iter().map(|v| v.max(PROB_FLOOR)).collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

// ---------------------------------------------------------------------------
// Scalar samplers and log-densities
// ---------------------------------------------------------------------------

fn unit_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    u.clamp(1e-16, 1.0 - 1e-16)
}

/// Logistic with CDF `1/(1+exp(-2t))`, via inverse CDF.
pub fn sample_logistic<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u = unit_open(rng);
    0.5 * (u / (1.0 - u)).ln()
}

/// Laplacian with density `exp(-|t|)/2`, as a sign-flipped exponential.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let magnitude = sample_exp(rng);
    if rng.random::<f64>() < 0.5 {
        -magnitude
    } else {
        magnitude
    }
}

/// Exponential with rate 1.
pub fn sample_exp<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    -(-u).ln_1p() // -ln(1-u)
}

pub fn sample_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + z
}

pub fn sample_bernoulli<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> u8 {
    u8::from(rng.random::<f64>() < alpha)
}

/// Ternary draw with `P(1) = P(-1) = gamma`.
pub fn sample_ternary<R: Rng + ?Sized>(rng: &mut R, gamma: f64) -> i8 {
    let u: f64 = rng.random();
    if u < gamma {
        1
    } else if u < 2.0 * gamma {
        -1
    } else {
        0
    }
}

pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return k;
        }
    }
    weights.len() - 1
}

pub fn log_logistic(t: f64) -> f64 {
    // density 2 / (e^t + e^{-t})^2
    let ln_cosh_term = t.abs() + (-2.0 * t.abs()).exp().ln_1p();
    std::f64::consts::LN_2 - 2.0 * ln_cosh_term
}

pub fn log_laplace(t: f64) -> f64 {
    -t.abs() - std::f64::consts::LN_2
}

pub fn log_exp(s: f64) -> f64 {
    if s < 0.0 {
        f64::NEG_INFINITY
    } else {
        -s
    }
}

pub fn log_normal(y: f64, mean: f64) -> f64 {
    let r = y - mean;
    -0.5 * r * r - 0.5 * LN_2PI
}

pub fn log_bernoulli(b: u8, alpha: f64) -> f64 {
    if b == 1 {
        alpha.ln()
    } else {
        (1.0 - alpha).ln()
    }
}

pub fn log_ternary(y: i8, gamma: f64) -> f64 {
    if y == 0 {
        (1.0 - 2.0 * gamma).ln()
    } else {
        gamma.ln()
    }
}

// ---------------------------------------------------------------------------
// Coordinate groups
// ---------------------------------------------------------------------------

/// One latent coordinate-group of the Gibbs scan.
///
/// The scan order is fixed: component index ascending with the scale update
/// before the discrete ones inside each component; the shared scale of the
/// TE models comes first and the offset last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    /// Per-component exponential scale `s^j`.
    Scale(usize),
    /// Per-component Gaussian `y^j`.
    Gauss(usize),
    /// Per-component Bernoulli switch `b^j`.
    Switch(usize),
    /// Per-component ternary coordinate `y^j`.
    Ternary(usize),
    /// IFA mixture label `t^j`.
    Label(usize),
    /// IFA sign `b^j`.
    Sign(usize),
    /// Component `beta^j` itself (Log/Lap, and the IFA Gaussian layer).
    Beta(usize),
    /// Shared scale `s` (TE/TEoff).
    SharedScale,
    /// Scalar offset (TEoff).
    Offset,
}

fn group_layout(spec: &ModelSpec) -> Vec<Group> {
    let p = spec.p;
    let mut groups = Vec::new();
    match spec.kind {
        ModelKind::Log | ModelKind::Lap => {
            groups.extend((0..p).map(Group::Beta));
        }
        ModelKind::Eg => {
            for j in 0..p {
                groups.push(Group::Scale(j));
                groups.push(Group::Gauss(j));
            }
        }
        ModelKind::Ifa => {
            for j in 0..p {
                groups.push(Group::Label(j));
                groups.push(Group::Sign(j));
                groups.push(Group::Beta(j));
            }
        }
        ModelKind::Bg => {
            for j in 0..p {
                groups.push(Group::Switch(j));
                groups.push(Group::Gauss(j));
            }
        }
        ModelKind::Ebg => {
            for j in 0..p {
                groups.push(Group::Scale(j));
                groups.push(Group::Switch(j));
                groups.push(Group::Gauss(j));
            }
        }
        ModelKind::Et => {
            for j in 0..p {
                groups.push(Group::Scale(j));
                groups.push(Group::Ternary(j));
            }
        }
        ModelKind::Te => {
            groups.push(Group::SharedScale);
            groups.extend((0..p).map(Group::Ternary));
        }
        ModelKind::TeOff => {
            groups.push(Group::SharedScale);
            groups.extend((0..p).map(Group::Ternary));
            groups.push(Group::Offset);
        }
    }
    groups
}

/// New value for a single coordinate-group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroupValue {
    Real(f64),
    Bit(u8),
    Tern(i8),
    Label(usize),
    Sign(i8),
}

// ---------------------------------------------------------------------------
// Kernel
// ---------------------------------------------------------------------------

/// Stateless bundle of the per-model operations. All methods are re-entrant;
/// random streams are caller-owned.
#[derive(Debug, Clone)]
pub struct ModelKernel {
    spec: ModelSpec,
    groups: Vec<Group>,
}

impl ModelKernel {
    pub fn new(spec: ModelSpec) -> Self {
        let groups = group_layout(&spec);
        ModelKernel { spec, groups }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    fn shift(&self, theta: &Parameters) -> f64 {
        theta.mu_shift.unwrap_or(0.0)
    }

    /// Draws a hidden state from the prior `q_m(.; theta)`.
    ///
    /// The caller is expected to have validated `theta`; degenerate
    /// probabilities are honored as-is (e.g. `alpha = 1` always activates).
    pub fn sample_prior<R: Rng + ?Sized>(&self, theta: &Parameters, rng: &mut R) -> HiddenState {
        let p = self.spec.p;
        let mu = self.shift(theta);
        match self.spec.kind {
            ModelKind::Log => HiddenState::Continuous {
                beta: DVector::from_fn(p, |_, _| sample_logistic(rng)),
            },
            ModelKind::Lap => HiddenState::Continuous {
                beta: DVector::from_fn(p, |_, _| sample_laplace(rng)),
            },
            ModelKind::Eg => {
                let s = DVector::from_fn(p, |_, _| sample_exp(rng));
                let y = DVector::from_fn(p, |_, _| sample_normal(rng, mu));
                HiddenState::ScaledGauss { s, y }
            }
            ModelKind::Ifa => {
                let mix = theta.mixture.as_ref().expect("ifa parameters");
                let mut b = Vec::with_capacity(p);
                let mut t = Vec::with_capacity(p);
                let mut beta = DVector::zeros(p);
                for j in 0..p {
                    let tj = sample_categorical(rng, &mix.weights);
                    let bj: i8 = if rng.random::<f64>() < 0.5 { 1 } else { -1 };
                    beta[j] = sample_normal(rng, f64::from(bj) * mix.mean(tj));
                    b.push(bj);
                    t.push(tj);
                }
                HiddenState::Ifa { beta, b, t }
            }
            ModelKind::Bg => {
                let alpha = theta.alpha.expect("bg parameters");
                let b: Vec<u8> = (0..p).map(|_| sample_bernoulli(rng, alpha)).collect();
                let y = DVector::from_fn(p, |_, _| sample_normal(rng, mu));
                HiddenState::Censored { b, y }
            }
            ModelKind::Ebg => {
                let alpha = theta.alpha.expect("ebg parameters");
                let s = DVector::from_fn(p, |_, _| sample_exp(rng));
                let b: Vec<u8> = (0..p).map(|_| sample_bernoulli(rng, alpha)).collect();
                let y = DVector::from_fn(p, |_, _| sample_normal(rng, mu));
                HiddenState::ScaledCensored { s, b, y }
            }
            ModelKind::Et => {
                let gamma = theta.gamma.expect("et parameters");
                let s = DVector::from_fn(p, |_, _| sample_exp(rng));
                let y: Vec<i8> = (0..p).map(|_| sample_ternary(rng, gamma)).collect();
                HiddenState::ScaledTernary { s, y }
            }
            ModelKind::Te => {
                let gamma = theta.gamma.expect("te parameters");
                let s = sample_exp(rng);
                let y: Vec<i8> = (0..p).map(|_| sample_ternary(rng, gamma)).collect();
                HiddenState::SharedScaleTernary { s, y }
            }
            ModelKind::TeOff => {
                let gamma = theta.gamma.expect("teoff parameters");
                let s = sample_exp(rng);
                let y: Vec<i8> = (0..p).map(|_| sample_ternary(rng, gamma)).collect();
                let offset = sample_laplace(rng);
                HiddenState::SharedScaleTernaryOffset { s, y, offset }
            }
        }
    }

    /// Complete-data log-likelihood `log q(x, z; theta)`, all normalizing
    /// constants included.
    pub fn log_complete(
        &self,
        theta: &Parameters,
        x: &DVector<f64>,
        z: &HiddenState,
    ) -> Result<f64> {
        if x.len() != self.spec.d {
            return Err(Error::DimensionMismatch(format!(
                "observation has length {}, expected {}",
                x.len(),
                self.spec.d
            )));
        }
        let beta = beta_of(&self.spec, z)?;
        let mean = theta.predict(&beta, z.offset());
        let resid2 = (x - mean).norm_squared();
        let d = self.spec.d as f64;
        let mut ll = -0.5 * resid2 / theta.sigma2 - 0.5 * d * (LN_2PI + theta.sigma2.ln());

        let mu = self.shift(theta);
        match z {
            HiddenState::Continuous { beta } => {
                let log_density: fn(f64) -> f64 = match self.spec.kind {
                    ModelKind::Log => log_logistic,
                    _ => log_laplace,
                };
                ll += beta.iter().map(|&t| log_density(t)).sum::<f64>();
            }
            HiddenState::ScaledGauss { s, y } => {
                ll += s.iter().map(|&v| log_exp(v)).sum::<f64>();
                ll += y.iter().map(|&v| log_normal(v, mu)).sum::<f64>();
            }
            HiddenState::Ifa { beta, b, t } => {
                let mix = theta.mixture.as_ref().expect("ifa parameters");
                for j in 0..beta.len() {
                    ll += log_normal(beta[j], f64::from(b[j]) * mix.mean(t[j]));
                    ll += mix.weights[t[j]].ln();
                    ll -= std::f64::consts::LN_2; // sign prior 1/2
                }
            }
            HiddenState::Censored { b, y } => {
                let alpha = theta.alpha.expect("bg parameters");
                ll += b.iter().map(|&v| log_bernoulli(v, alpha)).sum::<f64>();
                ll += y.iter().map(|&v| log_normal(v, mu)).sum::<f64>();
            }
            HiddenState::ScaledCensored { s, b, y } => {
                let alpha = theta.alpha.expect("ebg parameters");
                ll += s.iter().map(|&v| log_exp(v)).sum::<f64>();
                ll += b.iter().map(|&v| log_bernoulli(v, alpha)).sum::<f64>();
                ll += y.iter().map(|&v| log_normal(v, mu)).sum::<f64>();
            }
            HiddenState::ScaledTernary { s, y } => {
                let gamma = theta.gamma.expect("et parameters");
                ll += s.iter().map(|&v| log_exp(v)).sum::<f64>();
                ll += y.iter().map(|&v| log_ternary(v, gamma)).sum::<f64>();
            }
            HiddenState::SharedScaleTernary { s, y } => {
                let gamma = theta.gamma.expect("te parameters");
                ll += log_exp(*s);
                ll += y.iter().map(|&v| log_ternary(v, gamma)).sum::<f64>();
            }
            HiddenState::SharedScaleTernaryOffset { s, y, offset } => {
                let gamma = theta.gamma.expect("teoff parameters");
                ll += log_exp(*s);
                ll += y.iter().map(|&v| log_ternary(v, gamma)).sum::<f64>();
                ll += log_laplace(*offset);
            }
        }
        Ok(ll)
    }

    /// Extracts `S(x, z)`.
    pub fn extract_stats(&self, x: &DVector<f64>, z: &HiddenState) -> Result<SuffStats> {
        if x.len() != self.spec.d {
            return Err(Error::DimensionMismatch(format!(
                "observation has length {}, expected {}",
                x.len(),
                self.spec.d
            )));
        }
        let beta = beta_of(&self.spec, z)?;
        let offset = z.offset();
        let x_eff = if offset != 0.0 {
            x.map(|v| v - offset)
        } else {
            x.clone()
        };

        let mut stats = SuffStats::zeros(&self.spec);
        let p = self.spec.p;
        let aug = usize::from(self.spec.estimate_mu0);
        if aug == 1 {
            stats.bbt[(0, 0)] = 1.0;
            for j in 0..p {
                stats.bbt[(0, j + 1)] = beta[j];
                stats.bbt[(j + 1, 0)] = beta[j];
            }
            stats.xbt.set_column(0, &x_eff);
        }
        for i in 0..p {
            for j in 0..p {
                stats.bbt[(i + aug, j + aug)] = beta[i] * beta[j];
            }
            stats.xbt.set_column(i + aug, &(&x_eff * beta[i]));
        }
        stats.x2 = x_eff.norm_squared();

        match z {
            HiddenState::Censored { b, y } => {
                stats.nu = b.iter().map(|&v| f64::from(v)).sum();
                if self.spec.shifted {
                    stats.y_sum = y.sum();
                }
            }
            HiddenState::ScaledCensored { b, y, .. } => {
                stats.nu = b.iter().map(|&v| f64::from(v)).sum();
                if self.spec.shifted {
                    stats.y_sum = y.sum();
                }
            }
            HiddenState::ScaledGauss { y, .. } => {
                if self.spec.shifted {
                    stats.y_sum = y.sum();
                }
            }
            HiddenState::ScaledTernary { y, .. }
            | HiddenState::SharedScaleTernary { y, .. }
            | HiddenState::SharedScaleTernaryOffset { y, .. } => {
                stats.zeta = y.iter().map(|&v| f64::from(v.abs())).sum();
            }
            HiddenState::Ifa { beta, b, t } => {
                for j in 0..p {
                    stats.s0[t[j]] += 1.0;
                    stats.s1[t[j]] += f64::from(b[j]) * beta[j];
                }
            }
            HiddenState::Continuous { .. } => {}
        }
        Ok(stats)
    }

    /// Closed-form M-step on averaged statistics.
    pub fn m_step(&self, stats: &SuffStats) -> Result<Parameters> {
        let spec = &self.spec;
        let q = spec.stat_cols();
        if stats.bbt.nrows() != q || stats.xbt.ncols() != q || stats.xbt.nrows() != spec.d {
            return Err(Error::DimensionMismatch(
                "sufficient statistics do not match the spec".into(),
            ));
        }

        let a_aug = solve_decomposition(&stats.bbt, &stats.xbt)?;
        let resid = residual_sum(&a_aug, stats);
        let sigma2 = (resid / spec.d as f64).max(SIGMA2_FLOOR);

        let (mu0, a) = if spec.estimate_mu0 {
            let mu0 = DVector::from_column_slice(a_aug.column(0).as_slice());
            let a = a_aug.columns(1, spec.p).into_owned();
            (Some(mu0), a)
        } else {
            (None, a_aug)
        };

        let p = spec.p as f64;
        let alpha = spec.kind.has_switch().then(|| clip_alpha(stats.nu / p));
        // gamma = P(Y=1) = P(Y=-1), so E[zeta] = 2 p gamma.
        let gamma = spec
            .kind
            .is_ternary()
            .then(|| clip_gamma(stats.zeta / (2.0 * p)));
        let mu_shift = spec.shifted.then_some(stats.y_sum / p);
        let mixture = spec.mixture_size.map(|k| {
            let weights = clip_weights(
                &stats
                    .s0
                    .iter()
                    .map(|&s| s / p)
                    .collect::<Vec<f64>>(),
            );
            let means = (1..=k)
                .map(|i| {
                    if stats.s0[i] > 1e-12 {
                        stats.s1[i] / stats.s0[i]
                    } else {
                        0.0
                    }
                })
                .collect();
            Mixture { weights, means }
        });

        Ok(Parameters {
            a,
            sigma2,
            mu0,
            alpha,
            gamma,
            mu_shift,
            mixture,
        })
    }

    /// Averaged complete log-likelihood `phi(theta) . [S] - log C(theta)`,
    /// up to additive terms that do not depend on `theta`. The M-step output
    /// is its stationary point over the parameter domain.
    pub fn expected_complete_loglik(&self, theta: &Parameters, stats: &SuffStats) -> Result<f64> {
        let spec = &self.spec;
        let q = spec.stat_cols();
        let a_aug = augment(spec, theta);
        if a_aug.ncols() != q {
            return Err(Error::DimensionMismatch("parameters do not match stats".into()));
        }
        let resid = residual_sum(&a_aug, stats);
        let d = spec.d as f64;
        let p = spec.p as f64;
        let mut ll = -0.5 * resid / theta.sigma2 - 0.5 * d * (LN_2PI + theta.sigma2.ln());

        if let Some(alpha) = theta.alpha {
            ll += stats.nu * (alpha / (1.0 - alpha)).ln() + p * (1.0 - alpha).ln();
        }
        if let Some(gamma) = theta.gamma {
            ll += stats.zeta * (gamma / (1.0 - 2.0 * gamma)).ln() + p * (1.0 - 2.0 * gamma).ln();
        }
        if let Some(mu) = theta.mu_shift {
            ll += mu * stats.y_sum - 0.5 * p * mu * mu;
        }
        if let Some(mix) = &theta.mixture {
            let aug = usize::from(spec.estimate_mu0);
            let mut tr = 0.0;
            for j in 0..spec.p {
                tr += stats.bbt[(j + aug, j + aug)];
            }
            ll -= 0.5 * tr;
            for (k, w) in mix.weights.iter().enumerate() {
                ll += stats.s0[k] * w.ln();
                let m = mix.mean(k);
                ll += m * stats.s1[k] - 0.5 * m * m * stats.s0[k];
            }
        }
        Ok(ll)
    }

    /// Samples a replacement for coordinate-group `g` from its prior
    /// conditional given the rest of the state. Discrete probabilities are
    /// clipped to keep the proposal nondegenerate.
    pub fn propose_coordinate<R: Rng + ?Sized>(
        &self,
        theta: &Parameters,
        z: &HiddenState,
        g: usize,
        rng: &mut R,
    ) -> Result<HiddenState> {
        let group = *self
            .groups
            .get(g)
            .ok_or_else(|| Error::InvalidParameters(format!("group index {g} out of range")))?;
        let value = self.propose_value(theta, z, group, rng);
        let mut out = z.clone();
        apply_value(&mut out, group, value);
        Ok(out)
    }

    pub(crate) fn propose_value<R: Rng + ?Sized>(
        &self,
        theta: &Parameters,
        z: &HiddenState,
        group: Group,
        rng: &mut R,
    ) -> GroupValue {
        let mu = self.shift(theta);
        match group {
            Group::Scale(_) | Group::SharedScale => GroupValue::Real(sample_exp(rng)),
            Group::Gauss(_) => GroupValue::Real(sample_normal(rng, mu)),
            Group::Switch(_) => {
                let alpha = clip_alpha(theta.alpha.expect("switch model"));
                GroupValue::Bit(sample_bernoulli(rng, alpha))
            }
            Group::Ternary(_) => {
                let gamma = clip_gamma(theta.gamma.expect("ternary model"));
                GroupValue::Tern(sample_ternary(rng, gamma))
            }
            Group::Offset => GroupValue::Real(sample_laplace(rng)),
            Group::Beta(j) => match (self.spec.kind, z) {
                (ModelKind::Log, _) => GroupValue::Real(sample_logistic(rng)),
                (ModelKind::Lap, _) => GroupValue::Real(sample_laplace(rng)),
                (ModelKind::Ifa, HiddenState::Ifa { b, t, .. }) => {
                    let mix = theta.mixture.as_ref().expect("ifa parameters");
                    GroupValue::Real(sample_normal(rng, f64::from(b[j]) * mix.mean(t[j])))
                }
                _ => unreachable!("beta group on unexpected state"),
            },
            Group::Label(j) => {
                let HiddenState::Ifa { beta, b, .. } = z else {
                    unreachable!("label group on non-ifa state")
                };
                let probs = self.label_conditional(theta, beta[j], b[j]);
                GroupValue::Label(sample_categorical(rng, &probs))
            }
            Group::Sign(j) => {
                let HiddenState::Ifa { beta, t, .. } = z else {
                    unreachable!("sign group on non-ifa state")
                };
                let p_plus = self.sign_conditional(theta, beta[j], t[j]);
                GroupValue::Sign(if rng.random::<f64>() < p_plus { 1 } else { -1 })
            }
        }
    }

    /// Prior conditional of the IFA label given `(beta_j, b_j)`, with clipped
    /// weights (normalized).
    fn label_conditional(&self, theta: &Parameters, beta_j: f64, b_j: i8) -> Vec<f64> {
        let mix = theta.mixture.as_ref().expect("ifa parameters");
        let w = clip_weights(&mix.weights);
        let mut probs: Vec<f64> = (0..w.len())
            .map(|k| {
                let r = beta_j - f64::from(b_j) * mix.mean(k);
                w[k] * (-0.5 * r * r).exp()
            })
            .collect();
        let total: f64 = probs.iter().sum();
        if total > 0.0 {
            for v in &mut probs {
                *v /= total;
            }
        } else {
            let uniform = 1.0 / probs.len() as f64;
            probs.iter_mut().for_each(|v| *v = uniform);
        }
        probs
    }

    /// Prior conditional probability of `b_j = +1` given `(beta_j, t_j)`.
    fn sign_conditional(&self, theta: &Parameters, beta_j: f64, t_j: usize) -> f64 {
        let mix = theta.mixture.as_ref().expect("ifa parameters");
        let m = mix.mean(t_j);
        // 1 / (1 + exp(-2 m beta))
        1.0 / (1.0 + (-2.0 * m * beta_j).exp())
    }

    /// Log-density of the current value of group `g` under the proposal
    /// distribution used by `propose_coordinate`.
    pub fn group_log_proposal(&self, theta: &Parameters, z: &HiddenState, g: usize) -> Result<f64> {
        let group = *self
            .groups
            .get(g)
            .ok_or_else(|| Error::InvalidParameters(format!("group index {g} out of range")))?;
        let mu = self.shift(theta);
        Ok(match group {
            Group::Scale(j) => log_exp(scale_at(z, j)),
            Group::SharedScale => log_exp(shared_scale(z)),
            Group::Gauss(j) => log_normal(gauss_at(z, j), mu),
            Group::Switch(j) => log_bernoulli(switch_at(z, j), clip_alpha(theta.alpha.unwrap())),
            Group::Ternary(j) => log_ternary(ternary_at(z, j), clip_gamma(theta.gamma.unwrap())),
            Group::Offset => log_laplace(z.offset()),
            Group::Beta(j) => match (self.spec.kind, z) {
                (ModelKind::Log, HiddenState::Continuous { beta }) => log_logistic(beta[j]),
                (ModelKind::Lap, HiddenState::Continuous { beta }) => log_laplace(beta[j]),
                (ModelKind::Ifa, HiddenState::Ifa { beta, b, t }) => {
                    let mix = theta.mixture.as_ref().expect("ifa parameters");
                    log_normal(beta[j], f64::from(b[j]) * mix.mean(t[j]))
                }
                _ => return Err(Error::InvalidParameters("state/spec mismatch".into())),
            },
            Group::Label(j) => {
                let HiddenState::Ifa { beta, b, t } = z else {
                    return Err(Error::InvalidParameters("state/spec mismatch".into()));
                };
                self.label_conditional(theta, beta[j], b[j])[t[j]].ln()
            }
            Group::Sign(j) => {
                let HiddenState::Ifa { beta, b, t } = z else {
                    return Err(Error::InvalidParameters("state/spec mismatch".into()));
                };
                let p_plus = self.sign_conditional(theta, beta[j], t[j]);
                if b[j] == 1 {
                    p_plus.ln()
                } else {
                    (1.0 - p_plus).ln()
                }
            }
        })
    }
}

// Group accessors; panic on variant mismatch, which the kernel rules out.
fn scale_at(z: &HiddenState, j: usize) -> f64 {
    match z {
        HiddenState::ScaledGauss { s, .. }
        | HiddenState::ScaledCensored { s, .. }
        | HiddenState::ScaledTernary { s, .. } => s[j],
        _ => unreachable!("scale group on unexpected state"),
    }
}

fn shared_scale(z: &HiddenState) -> f64 {
    match z {
        HiddenState::SharedScaleTernary { s, .. }
        | HiddenState::SharedScaleTernaryOffset { s, .. } => *s,
        _ => unreachable!("shared scale on unexpected state"),
    }
}

fn gauss_at(z: &HiddenState, j: usize) -> f64 {
    match z {
        HiddenState::ScaledGauss { y, .. }
        | HiddenState::Censored { y, .. }
        | HiddenState::ScaledCensored { y, .. } => y[j],
        _ => unreachable!("gauss group on unexpected state"),
    }
}

fn switch_at(z: &HiddenState, j: usize) -> u8 {
    match z {
        HiddenState::Censored { b, .. } | HiddenState::ScaledCensored { b, .. } => b[j],
        _ => unreachable!("switch group on unexpected state"),
    }
}

fn ternary_at(z: &HiddenState, j: usize) -> i8 {
    match z {
        HiddenState::ScaledTernary { y, .. }
        | HiddenState::SharedScaleTernary { y, .. }
        | HiddenState::SharedScaleTernaryOffset { y, .. } => y[j],
        _ => unreachable!("ternary group on unexpected state"),
    }
}

pub(crate) fn apply_value(z: &mut HiddenState, group: Group, value: GroupValue) {
    match (group, value) {
        (Group::Scale(j), GroupValue::Real(v)) => match z {
            HiddenState::ScaledGauss { s, .. }
            | HiddenState::ScaledCensored { s, .. }
            | HiddenState::ScaledTernary { s, .. } => s[j] = v,
            _ => unreachable!(),
        },
        (Group::SharedScale, GroupValue::Real(v)) => match z {
            HiddenState::SharedScaleTernary { s, .. }
            | HiddenState::SharedScaleTernaryOffset { s, .. } => *s = v,
            _ => unreachable!(),
        },
        (Group::Gauss(j), GroupValue::Real(v)) => match z {
            HiddenState::ScaledGauss { y, .. }
            | HiddenState::Censored { y, .. }
            | HiddenState::ScaledCensored { y, .. } => y[j] = v,
            _ => unreachable!(),
        },
        (Group::Switch(j), GroupValue::Bit(v)) => match z {
            HiddenState::Censored { b, .. } | HiddenState::ScaledCensored { b, .. } => b[j] = v,
            _ => unreachable!(),
        },
        (Group::Ternary(j), GroupValue::Tern(v)) => match z {
            HiddenState::ScaledTernary { y, .. }
            | HiddenState::SharedScaleTernary { y, .. }
            | HiddenState::SharedScaleTernaryOffset { y, .. } => y[j] = v,
            _ => unreachable!(),
        },
        (Group::Offset, GroupValue::Real(v)) => match z {
            HiddenState::SharedScaleTernaryOffset { offset, .. } => *offset = v,
            _ => unreachable!(),
        },
        (Group::Beta(j), GroupValue::Real(v)) => match z {
            HiddenState::Continuous { beta } | HiddenState::Ifa { beta, .. } => beta[j] = v,
            _ => unreachable!(),
        },
        (Group::Label(j), GroupValue::Label(v)) => match z {
            HiddenState::Ifa { t, .. } => t[j] = v,
            _ => unreachable!(),
        },
        (Group::Sign(j), GroupValue::Sign(v)) => match z {
            HiddenState::Ifa { b, .. } => b[j] = v,
            _ => unreachable!(),
        },
        _ => unreachable!("group/value mismatch"),
    }
}

// ---------------------------------------------------------------------------
// M-step linear algebra
// ---------------------------------------------------------------------------

fn augment(spec: &ModelSpec, theta: &Parameters) -> DMatrix<f64> {
    if spec.estimate_mu0 {
        let mu0 = theta.mu0.as_ref().expect("mu0 present when estimated");
        let mut a_aug = DMatrix::zeros(spec.d, spec.p + 1);
        a_aug.set_column(0, mu0);
        for j in 0..spec.p {
            a_aug.set_column(j + 1, &theta.a.column(j));
        }
        a_aug
    } else {
        theta.a.clone()
    }
}

/// `[|x - A beta|^2]` evaluated from averaged statistics; nonnegative for any
/// `A` because the statistics are convex combinations of squared norms.
fn residual_sum(a_aug: &DMatrix<f64>, stats: &SuffStats) -> f64 {
    let cross = a_aug.dot(&stats.xbt);
    let gram = (a_aug.transpose() * a_aug).dot(&stats.bbt);
    (stats.x2 - 2.0 * cross + gram).max(0.0)
}

fn solve_decomposition(bbt: &DMatrix<f64>, xbt: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = bbt.nrows();
    let sv = bbt.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut reg = bbt.clone();
    if !(smin > 0.0) || smax / smin > COND_LIMIT {
        let ridge = RIDGE_SCALE * bbt.trace() / q as f64;
        for i in 0..q {
            reg[(i, i)] += ridge;
        }
    }
    let lu = reg.lu();
    let rhs = xbt.transpose();
    match lu.solve(&rhs) {
        Some(sol) => Ok(sol.transpose()),
        None => Err(Error::SingularStatistic(
            "[beta beta^T] is singular beyond the regularization tolerance".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// EG tail
// ---------------------------------------------------------------------------

/// Empirical log-survival `log P(s Y > t)` of the exponentially scaled
/// Gaussian from `n_samples` Monte Carlo draws.
pub fn eg_tail_survival<R: Rng + ?Sized>(t: f64, n_samples: usize, rng: &mut R) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidParameters("n_samples must be positive".into()));
    }
    let mut count = 0usize;
    for _ in 0..n_samples {
        let s = sample_exp(rng);
        let y: f64 = rng.sample(StandardNormal);
        if s * y > t {
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Numerical(format!(
            "insufficient samples for t = {t}: no exceedances in {n_samples} draws"
        )));
    }
    Ok((count as f64 / n_samples as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate;
    use crate::rng::substream;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn kernel(kind: ModelKind, p: usize, d: usize) -> ModelKernel {
        ModelKernel::new(ModelSpec::new(kind, p, d).unwrap())
    }

    fn theta_for(spec: &ModelSpec, seed: u64) -> Parameters {
        let mut rng = substream(seed, &[99]);
        let a = DMatrix::from_fn(spec.d, spec.p, |_, _| sample_normal(&mut rng, 0.0));
        let mut theta = Parameters::from_a_sigma2(spec, a, 0.7);
        if spec.estimate_mu0 {
            theta.mu0 = Some(DVector::from_fn(spec.d, |_, _| {
                0.3 * sample_normal(&mut rng, 0.0)
            }));
        }
        if spec.kind.has_switch() {
            theta.alpha = Some(0.7);
        }
        if spec.kind.is_ternary() {
            theta.gamma = Some(0.3);
        }
        if spec.shifted {
            theta.mu_shift = Some(1.5);
        }
        if spec.kind == ModelKind::Ifa {
            theta.mixture = Some(Mixture {
                weights: vec![0.5, 0.5],
                means: vec![2.0],
            });
        }
        theta
    }

    fn all_specs(p: usize, d: usize) -> Vec<ModelSpec> {
        let mut specs: Vec<ModelSpec> = ModelKind::ALL
            .iter()
            .map(|&k| ModelSpec::new(k, p, d).unwrap())
            .collect();
        specs.push(
            ModelSpec::new(ModelKind::Bg, p, d)
                .unwrap()
                .with_shift()
                .unwrap()
                .with_estimate_mu0(false)
                .unwrap(),
        );
        specs.push(
            ModelSpec::new(ModelKind::Eg, p, d)
                .unwrap()
                .with_shift()
                .unwrap(),
        );
        specs
    }

    #[test]
    fn log_complete_logistic_at_origin() {
        let k = kernel(ModelKind::Log, 1, 1);
        let spec = k.spec().clone();
        let mut theta = Parameters::from_a_sigma2(&spec, DMatrix::from_element(1, 1, 0.0), 1.0);
        theta.mu0 = Some(DVector::zeros(1));
        let z = HiddenState::Continuous {
            beta: DVector::zeros(1),
        };
        let ll = k.log_complete(&theta, &DVector::zeros(1), &z).unwrap();
        assert_relative_eq!(ll, 0.5_f64.ln() - 0.918_938_533_204_672_7, epsilon = 1e-9);
    }

    #[test]
    fn log_complete_bg_direct_substitution() {
        let spec = ModelSpec::new(ModelKind::Bg, 1, 1)
            .unwrap()
            .with_estimate_mu0(false)
            .unwrap();
        let k = ModelKernel::new(spec.clone());
        let theta = Parameters::from_a_sigma2(&spec, DMatrix::from_element(1, 1, 1.0), 1.0);
        let z = HiddenState::Censored {
            b: vec![1],
            y: DVector::from_vec(vec![0.7]),
        };
        let ll = k
            .log_complete(&theta, &DVector::from_vec(vec![0.7]), &z)
            .unwrap();
        assert_relative_eq!(ll, -2.776_025, epsilon = 1e-5);
    }

    #[test]
    fn log_complete_matches_oracle_on_all_models() {
        for spec in all_specs(3, 4) {
            let k = ModelKernel::new(spec.clone());
            let theta = theta_for(&spec, 11);
            validate(&spec, &theta).unwrap();
            let mut rng = substream(17, &[spec.kind as u64, 1]);
            for trial in 0..20 {
                let z = k.sample_prior(&theta, &mut rng);
                let x = DVector::from_fn(spec.d, |_, _| sample_normal(&mut rng, 0.0) * 2.0);
                let ours = k.log_complete(&theta, &x, &z).unwrap();
                let oracle = crate::oracle::log_complete_reference(&spec, &theta, &x, &z);
                assert_relative_eq!(ours, oracle, epsilon = 1e-10, max_relative = 1e-10);
                let _ = trial;
            }
        }
    }

    #[test]
    fn extract_stats_counts_and_products() {
        let k = kernel(ModelKind::Bg, 2, 2);
        let z = HiddenState::Censored {
            b: vec![1, 0],
            y: DVector::from_vec(vec![1.0, 2.0]),
        };
        let stats = k.extract_stats(&DVector::from_vec(vec![0.5, -0.5]), &z).unwrap();
        assert_eq!(stats.nu, 1.0);

        let k = kernel(ModelKind::Et, 3, 2);
        let z = HiddenState::ScaledTernary {
            s: DVector::from_vec(vec![1.0, 1.0, 1.0]),
            y: vec![1, -1, 0],
        };
        let stats = k.extract_stats(&DVector::zeros(2), &z).unwrap();
        assert_eq!(stats.zeta, 2.0);

        // Scalar products without augmentation.
        let spec = ModelSpec::new(ModelKind::Log, 1, 1)
            .unwrap()
            .with_estimate_mu0(false)
            .unwrap();
        let k = ModelKernel::new(spec);
        let z = HiddenState::Continuous {
            beta: DVector::from_vec(vec![3.0]),
        };
        let stats = k.extract_stats(&DVector::from_vec(vec![2.0]), &z).unwrap();
        assert_eq!(stats.bbt[(0, 0)], 9.0);
        assert_eq!(stats.xbt[(0, 0)], 6.0);
        assert_eq!(stats.x2, 4.0);
    }

    #[test]
    fn m_step_scalar_example() {
        let spec = ModelSpec::new(ModelKind::Log, 1, 1)
            .unwrap()
            .with_estimate_mu0(false)
            .unwrap();
        let k = ModelKernel::new(spec.clone());
        let mut stats = SuffStats::zeros(&spec);
        stats.bbt[(0, 0)] = 1.0;
        stats.xbt[(0, 0)] = 2.0;
        stats.x2 = 4.5;
        let theta = k.m_step(&stats).unwrap();
        assert_relative_eq!(theta.a[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(theta.sigma2, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn m_step_bg_alpha() {
        let spec = ModelSpec::new(ModelKind::Bg, 2, 3).unwrap();
        let k = ModelKernel::new(spec.clone());
        let mut stats = SuffStats::zeros(&spec);
        stats.bbt[(0, 0)] = 1.0;
        stats.bbt[(1, 1)] = 1.0;
        stats.bbt[(2, 2)] = 1.0;
        stats.x2 = 3.0;
        stats.nu = 1.6;
        let theta = k.m_step(&stats).unwrap();
        assert_relative_eq!(theta.alpha.unwrap(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn m_step_singular_stats_error_names_bbt() {
        let spec = ModelSpec::new(ModelKind::Log, 2, 2)
            .unwrap()
            .with_estimate_mu0(false)
            .unwrap();
        let k = ModelKernel::new(spec.clone());
        let stats = SuffStats::zeros(&spec);
        let err = k.m_step(&stats).unwrap_err();
        assert!(err.to_string().contains("beta beta^T"));
    }

    #[test]
    fn m_step_idempotent_on_exact_decompositions() {
        for spec in all_specs(2, 3) {
            let k = ModelKernel::new(spec.clone());
            let theta = theta_for(&spec, 5);
            let mut rng = substream(23, &[spec.kind as u64, 2]);
            let mut acc: Option<SuffStats> = None;
            let n = 400;
            for _ in 0..n {
                let z = k.sample_prior(&theta, &mut rng);
                let beta = beta_of(&spec, &z).unwrap();
                let x = theta.predict(&beta, z.offset());
                let stats = k.extract_stats(&x, &z).unwrap();
                match &mut acc {
                    Some(a) => a.add_assign(&stats),
                    None => acc = Some(stats),
                }
            }
            let mut mean = acc.unwrap();
            mean.scale(1.0 / n as f64);
            let fitted = k.m_step(&mean).unwrap();
            let err = (&fitted.a - &theta.a).norm();
            assert!(
                err < 1e-8,
                "model {}: A not recovered, err = {err:.3e}",
                spec.kind
            );
            if spec.estimate_mu0 {
                let merr = (fitted.mu0.as_ref().unwrap() - theta.mu0.as_ref().unwrap()).norm();
                assert!(merr < 1e-8, "model {}: mu0 err {merr:.3e}", spec.kind);
            }
            validate(&spec, &fitted).unwrap();
        }
    }

    #[test]
    fn m_step_output_always_validates() {
        for spec in all_specs(2, 4) {
            let k = ModelKernel::new(spec.clone());
            let theta = theta_for(&spec, 31);
            let mut rng = substream(37, &[spec.kind as u64, 3]);
            for trial in 0..5 {
                let mut acc: Option<SuffStats> = None;
                let n = 50;
                for _ in 0..n {
                    let z = k.sample_prior(&theta, &mut rng);
                    let beta = beta_of(&spec, &z).unwrap();
                    let noise = DVector::from_fn(spec.d, |_, _| sample_normal(&mut rng, 0.0));
                    let x = theta.predict(&beta, z.offset()) + noise * 0.8;
                    let stats = k.extract_stats(&x, &z).unwrap();
                    match &mut acc {
                        Some(a) => a.add_assign(&stats),
                        None => acc = Some(stats),
                    }
                }
                let mut mean = acc.unwrap();
                mean.scale(1.0 / n as f64);
                let fitted = k.m_step(&mean).unwrap();
                validate(&spec, &fitted)
                    .unwrap_or_else(|e| panic!("model {} trial {trial}: {e}", spec.kind));
            }
        }
    }

    #[test]
    fn sample_prior_degenerate_bernoulli_all_on() {
        let spec = ModelSpec::new(ModelKind::Bg, 4, 2).unwrap();
        let k = ModelKernel::new(spec.clone());
        let mut theta = Parameters::from_a_sigma2(&spec, DMatrix::zeros(2, 4), 1.0);
        theta.alpha = Some(1.0);
        for seed in 0..5 {
            let mut rng = substream(seed, &[0]);
            let z = k.sample_prior(&theta, &mut rng);
            let HiddenState::Censored { b, .. } = z else { panic!() };
            assert_eq!(b, vec![1, 1, 1, 1]);
        }
    }

    #[test]
    fn sample_prior_eg_scale_mean_is_one() {
        let spec = ModelSpec::new(ModelKind::Eg, 1, 1).unwrap();
        let k = ModelKernel::new(spec.clone());
        let theta = Parameters::from_a_sigma2(&spec, DMatrix::zeros(1, 1), 1.0);
        let mut rng = substream(101, &[1]);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let HiddenState::ScaledGauss { s, .. } = k.sample_prior(&theta, &mut rng) else {
                panic!()
            };
            sum += s[0];
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean = {mean}");
    }

    #[test]
    fn sample_prior_logistic_cdf_at_one() {
        let spec = ModelSpec::new(ModelKind::Log, 1, 1).unwrap();
        let k = ModelKernel::new(spec.clone());
        let theta = Parameters::from_a_sigma2(&spec, DMatrix::zeros(1, 1), 1.0);
        let mut rng = substream(103, &[2]);
        let n = 1_000_000;
        let mut count = 0usize;
        for _ in 0..n {
            let HiddenState::Continuous { beta } = k.sample_prior(&theta, &mut rng) else {
                panic!()
            };
            if beta[0] <= 1.0 {
                count += 1;
            }
        }
        let frac = count as f64 / n as f64;
        let expected = 1.0 / (1.0 + (-2.0_f64).exp());
        assert!((frac - expected).abs() < 0.002, "frac = {frac}");
    }

    // Per-coordinate prior moments within 4 standard errors at one million
    // draws, for every model family.
    #[test]
    fn sample_prior_moment_checks() {
        let n = 1_000_000usize;
        for spec in all_specs(2, 1) {
            let k = ModelKernel::new(spec.clone());
            let theta = theta_for(&spec, 3);
            let mut rng = substream(moment_seed(spec.kind), &[7]);
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            let mut sum4 = 0.0;
            for _ in 0..n {
                let z = k.sample_prior(&theta, &mut rng);
                let beta = beta_of(&spec, &z).unwrap();
                let v = beta[0];
                sum += v;
                sum2 += v * v;
                sum4 += v * v * v * v;
            }
            let nf = n as f64;
            let mean = sum / nf;
            let m2 = sum2 / nf;
            let m4 = sum4 / nf;
            let (expect_mean, expect_m2) = prior_beta_moments(&spec, &theta);
            let se_mean = (m2 / nf).sqrt();
            let se_m2 = ((m4 - m2 * m2).max(0.0) / nf).sqrt();
            assert!(
                (mean - expect_mean).abs() <= 4.0 * se_mean + 1e-9,
                "model {}: mean {mean} vs {expect_mean} (se {se_mean:.2e})",
                spec.kind
            );
            assert!(
                (m2 - expect_m2).abs() <= 4.0 * se_m2,
                "model {}: E[beta^2] {m2} vs {expect_m2} (se {se_m2:.2e})",
                spec.kind
            );
        }
    }

    // Disambiguates substreams per model kind in the moment test.
    fn moment_seed(kind: ModelKind) -> u64 {
        200 + kind as u64
    }

    fn prior_beta_moments(spec: &ModelSpec, theta: &Parameters) -> (f64, f64) {
        let shift = theta.mu_shift.unwrap_or(0.0);
        match spec.kind {
            // logistic with CDF 1/(1+e^{-2t}): variance pi^2/12
            ModelKind::Log => (0.0, std::f64::consts::PI.powi(2) / 12.0),
            ModelKind::Lap => (0.0, 2.0),
            // beta = s y, s ~ Exp(1): E[s]=1, E[s^2]=2
            ModelKind::Eg => (shift, 2.0 * (1.0 + shift * shift)),
            ModelKind::Ifa => {
                let mix = theta.mixture.as_ref().unwrap();
                let m2 = 1.0
                    + mix
                        .weights
                        .iter()
                        .enumerate()
                        .map(|(k, w)| w * mix.mean(k) * mix.mean(k))
                        .sum::<f64>();
                (0.0, m2)
            }
            ModelKind::Bg => {
                let alpha = theta.alpha.unwrap();
                (alpha * shift, alpha * (1.0 + shift * shift))
            }
            ModelKind::Ebg => {
                let alpha = theta.alpha.unwrap();
                (alpha * shift, 2.0 * alpha * (1.0 + shift * shift))
            }
            ModelKind::Et => (0.0, 2.0 * 2.0 * theta.gamma.unwrap()),
            ModelKind::Te | ModelKind::TeOff => (0.0, 2.0 * 2.0 * theta.gamma.unwrap()),
        }
    }

    #[test]
    fn propose_is_single_site() {
        let spec = ModelSpec::new(ModelKind::Log, 2, 2).unwrap();
        let k = ModelKernel::new(spec.clone());
        let theta = theta_for(&spec, 1);
        let z = HiddenState::Continuous {
            beta: DVector::from_vec(vec![0.3, -0.7]),
        };
        let mut rng = substream(5, &[1]);
        let z_new = k.propose_coordinate(&theta, &z, 0, &mut rng).unwrap();
        let HiddenState::Continuous { beta } = &z_new else { panic!() };
        assert_eq!(beta[1], -0.7);
        assert!(k.propose_coordinate(&theta, &z, 2, &mut rng).is_err());
    }

    #[test]
    fn propose_bg_switch_marginal_rate() {
        let spec = ModelSpec::new(ModelKind::Bg, 1, 1).unwrap();
        let k = ModelKernel::new(spec.clone());
        let mut theta = theta_for(&spec, 2);
        theta.alpha = Some(0.37);
        let z = HiddenState::Censored {
            b: vec![0],
            y: DVector::zeros(1),
        };
        let mut rng = substream(6, &[2]);
        let n = 1_000_000;
        let mut ones = 0usize;
        for _ in 0..n {
            let GroupValue::Bit(b) = k.propose_value(&theta, &z, Group::Switch(0), &mut rng)
            else {
                panic!()
            };
            ones += usize::from(b);
        }
        let rate = ones as f64 / n as f64;
        assert!((rate - 0.37).abs() < 0.002, "rate = {rate}");
    }

    #[test]
    fn propose_offset_laplacian_median() {
        let spec = ModelSpec::new(ModelKind::TeOff, 1, 1).unwrap();
        let k = ModelKernel::new(spec.clone());
        let theta = theta_for(&spec, 3);
        let z = HiddenState::SharedScaleTernaryOffset {
            s: 1.0,
            y: vec![0],
            offset: 0.0,
        };
        let mut rng = substream(7, &[3]);
        let n = 1_000_000;
        let mut draws: Vec<f64> = Vec::with_capacity(n);
        for _ in 0..n {
            let GroupValue::Real(v) = k.propose_value(&theta, &z, Group::Offset, &mut rng) else {
                panic!()
            };
            draws.push(v);
        }
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = draws[n / 2];
        assert!(median.abs() < 0.01, "median = {median}");
    }

    // The complete log-likelihood must be affine in the tracked statistics
    // for any fixed pair of parameter vectors: fit the coefficient vector of
    // log q(.; theta1) - log q(.; theta2) on random states by least squares
    // and check the residual vanishes.
    #[test]
    fn exponential_family_coherence() {
        for spec in all_specs(2, 3) {
            let k = ModelKernel::new(spec.clone());
            let theta1 = theta_for(&spec, 41);
            let mut theta2 = theta_for(&spec, 42);
            theta2.sigma2 = 1.3;
            if spec.kind.has_switch() {
                theta2.alpha = Some(0.35);
            }
            if spec.kind.is_ternary() {
                theta2.gamma = Some(0.15);
            }
            if spec.shifted {
                theta2.mu_shift = Some(-0.4);
            }
            if spec.kind == ModelKind::Ifa {
                theta2.mixture = Some(Mixture {
                    weights: vec![0.3, 0.7],
                    means: vec![1.2],
                });
            }
            let mut rng = substream(59, &[spec.kind as u64, u64::from(spec.shifted)]);
            let x = DVector::from_fn(spec.d, |_, _| sample_normal(&mut rng, 0.0));
            let m = 60;
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
            let mut fs: Vec<f64> = Vec::with_capacity(m);
            for _ in 0..m {
                let z = k.sample_prior(&theta1, &mut rng);
                let mut row = k.extract_stats(&x, &z).unwrap().flatten();
                row.push(1.0);
                rows.push(row);
                fs.push(
                    k.log_complete(&theta1, &x, &z).unwrap()
                        - k.log_complete(&theta2, &x, &z).unwrap(),
                );
            }
            let cols = rows[0].len();
            let design = DMatrix::from_fn(m, cols, |i, j| rows[i][j]);
            let target = DVector::from_vec(fs);
            let svd = design.clone().svd(true, true);
            let coef = svd.solve(&target, 1e-12).unwrap();
            let resid = (&design * coef - target).norm();
            assert!(
                resid < 1e-7,
                "model {} (shifted={}): affinity residual {resid:.3e}",
                spec.kind,
                spec.shifted
            );
        }
    }

    #[test]
    fn eg_tail_at_zero_is_log_half() {
        let mut rng = substream(71, &[0]);
        let ls = eg_tail_survival(0.0, 2_000_000, &mut rng).unwrap();
        assert!((ls - 0.5_f64.ln()).abs() < 0.01, "log survival = {ls}");
    }

    #[test]
    fn eg_tail_errors_without_exceedances() {
        let mut rng = substream(72, &[0]);
        let err = eg_tail_survival(1e9, 100, &mut rng).unwrap_err();
        assert!(err.to_string().contains("insufficient samples"));
    }
}
