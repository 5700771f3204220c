//! MAP reconstruction of the hidden components for a new observation under a
//! fitted model: `argmax_z log q(z | X = x; theta)`.
//!
//! Each family has its own solver:
//! - Log: smooth convex descent (gradient descent with backtracking),
//! - Lap: lasso-type objective by cyclic coordinate descent with exact
//!   soft-threshold updates,
//! - EG/EBG: alternating least squares in `y` and a nonnegative quadratic
//!   program in `s` (stationary point, not guaranteed global),
//! - IFA/BG/ET/TE: discrete search over the integer layer (exhaustive within
//!   an explicit budget, otherwise first-improvement local search with
//!   random restarts), continuous layer solved in closed form per candidate,
//! - TEoff: block coordinate descent with the offset updated in closed form.
//!
//! The discrete penalties are `rho_alpha = log((1-alpha)/alpha)` per active
//! switch and `rho_gamma = log((1-2 gamma)/gamma)` per nonzero ternary
//! coordinate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{validate, HiddenState, ModelKind, ModelSpec, Parameters};
use crate::rng::{self, substream};

/// Options controlling the discrete-search budgets and solver tolerances.
#[derive(Debug, Clone)]
pub struct ReconOptions {
    /// Exhaustive `2^p` search allowed up to this `p` (BG/EBG).
    pub binary_budget: usize,
    /// Exhaustive `3^p` search allowed up to this `p` (ET/TE/TEoff).
    pub ternary_budget: usize,
    /// Exhaustive `(2K+1)^p` assignment search allowed up to this many
    /// configurations (IFA).
    pub ifa_budget: usize,
    /// Fall back to local search when a budget is exceeded.
    pub allow_local_search: bool,
    /// Random restarts of the local search.
    pub restarts: usize,
    pub seed: u64,
    /// Gradient-norm target of the smooth solvers.
    pub smooth_tol: f64,
    /// KKT tolerance of the coordinate-descent lasso solver.
    pub cd_tol: f64,
    /// Stop alternating solvers when the objective decrease falls below this.
    pub alt_tol: f64,
    pub max_iter: usize,
}

impl Default for ReconOptions {
    fn default() -> Self {
        ReconOptions {
            binary_budget: 20,
            ternary_budget: 12,
            ifa_budget: 1 << 20,
            allow_local_search: true,
            restarts: 10,
            seed: 0,
            smooth_tol: 1e-8,
            cd_tol: 1e-8,
            alt_tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// MAP estimate with solver diagnostics.
#[derive(Debug, Clone)]
pub struct ReconResult {
    pub state: HiddenState,
    pub beta: DVector<f64>,
    /// Value of the penalized-residual objective at the returned state.
    pub objective: f64,
    pub iterations: usize,
    /// Whether the discrete layer was searched exhaustively (true for the
    /// purely continuous models).
    pub exhaustive: bool,
    /// Objective after each outer iteration of the alternating solvers.
    pub history: Vec<f64>,
}

/// Penalized-residual objective minimized by the MAP reconstruction: the
/// negative complete log-likelihood with `theta`-only constants dropped.
pub fn objective(
    spec: &ModelSpec,
    theta: &Parameters,
    x: &DVector<f64>,
    z: &HiddenState,
) -> Result<f64> {
    z.validate_for(spec)?;
    let beta = crate::model::beta_of(spec, z)?;
    let x_centered = centered(theta, x);
    let mu = theta.mu_shift.unwrap_or(0.0);
    let mut obj = match z {
        HiddenState::SharedScaleTernaryOffset { offset, .. } => {
            let r = x.map(|v| v - offset) - &theta.a * &beta;
            r.norm_squared() / (2.0 * theta.sigma2)
        }
        _ => {
            let r = &x_centered - &theta.a * &beta;
            r.norm_squared() / (2.0 * theta.sigma2)
        }
    };
    match z {
        HiddenState::Continuous { beta } => {
            if spec.kind == ModelKind::Log {
                obj += beta.iter().map(|&b| xi_logistic(b)).sum::<f64>();
            } else {
                obj += beta.iter().map(|&b| b.abs()).sum::<f64>();
            }
        }
        HiddenState::ScaledGauss { s, y } => {
            obj += s.sum();
            obj += 0.5 * y.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>();
        }
        HiddenState::Ifa { beta, b, t } => {
            let mix = theta.mixture.as_ref().expect("ifa parameters");
            for j in 0..beta.len() {
                let r = beta[j] - f64::from(b[j]) * mix.mean(t[j]);
                obj += 0.5 * r * r;
                obj -= mix.weights[t[j]].ln();
            }
        }
        HiddenState::Censored { b, y } => {
            let rho = rho_alpha(theta);
            obj += rho * b.iter().map(|&v| f64::from(v)).sum::<f64>();
            obj += 0.5 * y.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>();
        }
        HiddenState::ScaledCensored { s, b, y } => {
            let rho = rho_alpha(theta);
            obj += s.sum();
            obj += rho * b.iter().map(|&v| f64::from(v)).sum::<f64>();
            obj += 0.5 * y.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>();
        }
        HiddenState::ScaledTernary { s, y } => {
            obj += s.sum();
            obj += rho_gamma(theta) * zeta_of(y);
        }
        HiddenState::SharedScaleTernary { s, y } => {
            obj += s;
            obj += rho_gamma(theta) * zeta_of(y);
        }
        HiddenState::SharedScaleTernaryOffset { s, y, .. } => {
            obj += s;
            obj += rho_gamma(theta) * zeta_of(y);
        }
    }
    Ok(obj)
}

fn xi_logistic(b: f64) -> f64 {
    // 2 log(e^b + e^{-b})
    2.0 * (b.abs() + (-2.0 * b.abs()).exp().ln_1p())
}

fn rho_alpha(theta: &Parameters) -> f64 {
    let alpha = theta.alpha.expect("switch model");
    ((1.0 - alpha) / alpha).ln()
}

fn rho_gamma(theta: &Parameters) -> f64 {
    let gamma = theta.gamma.expect("ternary model");
    ((1.0 - 2.0 * gamma) / gamma).ln()
}

fn zeta_of(y: &[i8]) -> f64 {
    y.iter().map(|&v| f64::from(v.abs())).sum()
}

fn centered(theta: &Parameters, x: &DVector<f64>) -> DVector<f64> {
    match &theta.mu0 {
        Some(mu0) => x - mu0,
        None => x.clone(),
    }
}

/// MAP reconstruction of the hidden variables for one observation.
pub fn reconstruct(
    spec: &ModelSpec,
    theta: &Parameters,
    x: &DVector<f64>,
    opts: &ReconOptions,
) -> Result<ReconResult> {
    validate(spec, theta)?;
    if x.len() != spec.d {
        return Err(Error::DimensionMismatch(format!(
            "observation has length {}, expected {}",
            x.len(),
            spec.d
        )));
    }
    let x_centered = centered(theta, x);
    match spec.kind {
        ModelKind::Log => recon_log(spec, theta, x, &x_centered, opts),
        ModelKind::Lap => recon_lap(spec, theta, x, &x_centered, opts),
        ModelKind::Eg => recon_eg(spec, theta, x, &x_centered, opts),
        ModelKind::Ifa => recon_ifa(spec, theta, x, &x_centered, opts),
        ModelKind::Bg | ModelKind::Ebg => recon_censored(spec, theta, x, &x_centered, opts),
        ModelKind::Et => recon_et(spec, theta, x, &x_centered, opts),
        ModelKind::Te => recon_te(spec, theta, x, &x_centered, opts),
        ModelKind::TeOff => recon_teoff(spec, theta, x, opts),
    }
}

// ---------------------------------------------------------------------------
// Log
// ---------------------------------------------------------------------------

/// Minimizes `|x - A beta|^2 / 2 + sigma2 * sum_j xi(beta^j)` (the
/// sigma2-scaled logistic MAP objective), warm-started at `init`. Returns
/// the minimizer and the iteration count. The unscaled gradient-norm target
/// is `tol`, floored at the float-representable optimum.
///
/// Damped Newton with backtracking: the objective is smooth and strictly
/// convex (`xi'' = 2 sech^2 > 0`), and the mode-plugging EM feeds this
/// solver badly conditioned `A^T A` for which first-order steps stall far
/// above the tolerances used here.
pub fn logistic_mode(
    a: &DMatrix<f64>,
    sigma2: f64,
    x_centered: &DVector<f64>,
    init: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)> {
    let p = a.ncols();
    let ata = a.transpose() * a;
    let atx = a.transpose() * x_centered;

    // Scaled objective keeps the arithmetic well conditioned for small
    // sigma2; stationary points are unchanged.
    let f = |b: &DVector<f64>| -> f64 {
        let r = x_centered - a * b;
        0.5 * r.norm_squared() + sigma2 * b.iter().map(|&v| xi_logistic(v)).sum::<f64>()
    };
    let grad = |b: &DVector<f64>| -> DVector<f64> {
        &ata * b - &atx + DVector::from_fn(b.len(), |j, _| 2.0 * sigma2 * b[j].tanh())
    };
    let hessian = |b: &DVector<f64>| -> DMatrix<f64> {
        let mut h = ata.clone();
        for j in 0..p {
            let sech2 = {
                let t = b[j].tanh();
                1.0 - t * t
            };
            h[(j, j)] += 2.0 * sigma2 * sech2;
        }
        h
    };

    let scale = 1.0 + atx.norm() + ata.norm();
    let tol_scaled = (tol * sigma2).max(64.0 * f64::EPSILON * scale);
    let mut beta = init.clone();
    let mut fv = f(&beta);
    for it in 0..max_iter {
        let g = grad(&beta);
        let gn = g.norm();
        if gn <= tol_scaled {
            return Ok((beta, it));
        }
        let mut h = hessian(&beta);
        let dir = loop {
            match nalgebra::Cholesky::new(h.clone()) {
                Some(chol) => break chol.solve(&g),
                None => {
                    // sech^2 underflow on a rank-deficient A^T A: ridge it
                    let bump = 1e-12 * (1.0 + h.trace() / p as f64);
                    for j in 0..p {
                        h[(j, j)] += bump;
                    }
                }
            }
        };
        let slope = g.dot(&dir);
        let mut step = 1.0;
        loop {
            let cand = &beta - &dir * step;
            let fc = f(&cand);
            // strict decrease: once improvements fall below one ulp of f the
            // iterate sits at the float-representable optimum
            if fc < fv && fc <= fv - 0.25 * step * slope {
                beta = cand;
                fv = fc;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return Ok((beta, it));
            }
        }
    }
    let g = grad(&beta).norm();
    if g <= tol_scaled * 100.0 {
        Ok((beta, max_iter))
    } else {
        Err(Error::Numerical(format!(
            "logistic mode solver did not reach tolerance (gradient {g:.3e})"
        )))
    }
}

fn recon_log(
    spec: &ModelSpec,
    theta: &Parameters,
    x: &DVector<f64>,
    x_centered: &DVector<f64>,
    opts: &ReconOptions,
) -> Result<ReconResult> {
    let (beta, iterations) = logistic_mode(
        &theta.a,
        theta.sigma2,
        x_centered,
        &DVector::zeros(spec.p),
        opts.smooth_tol,
        opts.max_iter,
    )?;
    let state = HiddenState::Continuous { beta: beta.clone() };
    let objective = objective(spec, theta, x, &state)?;
    Ok(ReconResult {
        state,
        beta,
        objective,
        iterations,
        exhaustive: true,
        history: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Lap
// ---------------------------------------------------------------------------

fn recon_lap(
    spec: &ModelSpec,
    theta: &Parameters,
    x: &DVector<f64>,
    x_centered: &DVector<f64>,
    opts: &ReconOptions,
) -> Result<ReconResult> {
    let p = spec.p;
    let sigma2 = theta.sigma2;
    let col_norms: Vec<f64> = (0..p).map(|j| theta.a.column(j).norm_squared()).collect();
    let mut beta = DVector::zeros(p);
    let mut resid = x_centered.clone();
    let mut iterations = 0usize;

    loop {
        for j in 0..p {
            if col_norms[j] == 0.0 {
                continue;
            }
            let col = theta.a.column(j);
            let rho = col.dot(&resid) + col_norms[j] * beta[j];
            let new = soft_threshold(rho, sigma2) / col_norms[j];
            let delta: f64 = new - beta[j];
            if delta != 0.0 {
                resid.axpy(-delta, &col.into_owned(), 1.0);
                beta[j] = new;
            }
        }
        iterations += 1;

        // KKT check: |a_j^T r| / sigma2 <= 1, equality where beta_j != 0.
        let mut worst = 0.0_f64;
        for j in 0..p {
            let g = theta.a.column(j).dot(&resid) / sigma2;
            let violation = if beta[j] != 0.0 {
                (g - beta[j].signum()).abs()
            } else {
                (g.abs() - 1.0).max(0.0)
            };
            worst = worst.max(violation);
        }
        if worst <= opts.cd_tol || iterations >= opts.max_iter {
            if worst > opts.cd_tol {
                return Err(Error::Numerical(format!(
                    "lasso solver stalled with KKT residual {worst:.3e}"
                )));
            }
            break;
        }
    }

    let state = HiddenState::Continuous { beta: beta.clone() };
    let objective = objective(spec, theta, x, &state)?;
    Ok(ReconResult {
        state,
        beta,
        objective,
        iterations,
        exhaustive: true,
        history: Vec::new(),
    })
}

fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// EG / EBG continuous block
// ---------------------------------------------------------------------------

/// Minimizes `|x - A diag(s) y|^2/(2 sigma2) + sum s + 1/2 |y - mu|^2` over
/// `s >= 0` and free `y` by alternation, starting from the given state.
/// Returns `(s, y, history)`.
fn eg_alternation(
    a: &DMatrix<f64>,
    sigma2: f64,
    x_centered: &DVector<f64>,
    mu: f64,
    mut s: DVector<f64>,
    mut y: DVector<f64>,
    opts: &ReconOptions,
) -> Result<(DVector<f64>, DVector<f64>, Vec<f64>)> {
    let p = a.ncols();
    let ata = a.transpose() * a;
    let atx = a.transpose() * x_centered;
    let eval = |s: &DVector<f64>, y: &DVector<f64>| -> f64 {
        let beta = s.component_mul(y);
        let r = x_centered - a * beta;
        r.norm_squared() / (2.0 * sigma2)
            + s.sum()
            + 0.5 * y.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>()
    };

    let mut history = vec![eval(&s, &y)];
    for _ in 0..opts.max_iter {
        // y-step: ridge system (D_s A^T A D_s / sigma2 + I) y = D_s A^T x / sigma2 + mu 1
        let mut m = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                m[(i, j)] = s[i] * ata[(i, j)] * s[j] / sigma2;
            }
            m[(i, i)] += 1.0;
        }
        let rhs = DVector::from_fn(p, |j, _| s[j] * atx[j] / sigma2 + mu);
        let chol = nalgebra::Cholesky::new(m)
            .ok_or_else(|| Error::Numerical("EG alternation: ridge system not SPD".into()))?;
        y = chol.solve(&rhs);

        // s-step: nonnegative QP by cyclic coordinate descent.
        let q = DMatrix::from_fn(p, p, |i, j| y[i] * ata[(i, j)] * y[j] / sigma2);
        let c = DVector::from_fn(p, |j, _| y[j] * atx[j] / sigma2 - 1.0);
        nonneg_qp(&q, &c, &mut s, 200);

        let obj = eval(&s, &y);
        let prev = *history.last().unwrap();
        history.push(obj);
        if prev - obj < opts.alt_tol {
            break;
        }
    }
    Ok((s, y, history))
}

/// Cyclic coordinate descent for `min 1/2 s^T Q s - c^T s` s.t. `s >= 0`.
fn nonneg_qp(q: &DMatrix<f64>, c: &DVector<f64>, s: &mut DVector<f64>, rounds: usize) {
    let p = c.len();
    for _ in 0..rounds {
        let mut moved = 0.0_f64;
        for j in 0..p {
            if q[(j, j)] <= 0.0 {
                // degenerate direction: only the linear term acts
                let new = if c[j] > 0.0 { s[j] } else { 0.0 };
                moved = moved.max((new - s[j]).abs());
                s[j] = new;
                continue;
            }
            let mut lin = c[j];
            for i in 0..p {
                if i != j {
                    lin -= q[(j, i)] * s[i];
                }
            }
            let new = (lin / q[(j, j)]).max(0.0);
            moved = moved.max((new - s[j]).abs());
            s[j] = new;
        }
        if moved < 1e-14 {
            break;
        }
    }
}

fn recon_eg(
    spec: &ModelSpec,
    theta: &Parameters,
    x: &DVector<f64>,
    x_centered: &DVector<f64>,
    opts: &ReconOptions,
) -> Result<ReconResult> {
    let p = spec.p;
    let mu = theta.mu_shift.unwrap_or(0.0);
    let s0 = DVector::from_element(p, 1.0);
    let y0 = DVector::from_element(p, mu);
    let (s, y, history) = eg_alternation(&theta.a, theta.sigma2, x_centered, mu, s0, y0, opts)?;
    let state = HiddenState::ScaledGauss { s, y };
    let beta = crate::model::beta_of(spec, &state)?;
    let objective = objective(spec, theta, x, &state)?;
    Ok(ReconResult {
        state,
        beta,
        objective,
        iterations: history.len(),
        exhaustive: true,
        history,
    })
}

// ---------------------------------------------------------------------------
// Discrete searches
// ---------------------------------------------------------------------------

/// Generic discrete-layer search: exhaustively enumerate all configurations
/// when allowed, otherwise first-improvement local search over
/// single-coordinate changes with random restarts.
fn search_discrete<F>(
    n_coords: usize,
    alphabet: usize,
    exhaustive_ok: bool,
    opts: &ReconOptions,
    mut score: F,
) -> Result<(Vec<usize>, f64, bool, usize)>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    if exhaustive_ok {
        let mut digits = vec![0usize; n_coords];
        let total = alphabet.pow(n_coords as u32);
        let mut best = digits.clone();
        let mut best_obj = score(&digits)?;
        let mut evals = 1usize;
        for _ in 1..total {
            let mut j = 0;
            loop {
                digits[j] += 1;
                if digits[j] < alphabet {
                    break;
                }
                digits[j] = 0;
                j += 1;
            }
            let obj = score(&digits)?;
            evals += 1;
            if obj < best_obj {
                best_obj = obj;
                best = digits.clone();
            }
        }
        return Ok((best, best_obj, true, evals));
    }
    if !opts.allow_local_search {
        return Err(Error::BudgetExceeded(format!(
            "{alphabet}^{n_coords} configurations exceed the exhaustive budget \
             and local search is disabled"
        )));
    }

    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut evals = 0usize;
    for r in 0..opts.restarts.max(1) {
        let mut rng = substream(opts.seed, &[rng::TAG_RESTART, r as u64]);
        let mut digits: Vec<usize> = if r == 0 {
            vec![0; n_coords]
        } else {
            (0..n_coords)
                .map(|_| rng.random_range(0..alphabet))
                .collect()
        };
        let mut obj = score(&digits)?;
        evals += 1;
        // first-improvement sweeps until a full pass makes no move
        loop {
            let mut improved = false;
            for j in 0..n_coords {
                let current = digits[j];
                for v in 0..alphabet {
                    if v == current {
                        continue;
                    }
                    digits[j] = v;
                    let cand = score(&digits)?;
                    evals += 1;
                    if cand < obj - 1e-15 {
                        obj = cand;
                        improved = true;
                        break;
                    }
                    digits[j] = current;
                }
            }
            if !improved {
                break;
            }
        }
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((digits, obj));
        }
    }
    let (digits, obj) = best.expect("at least one restart");
    Ok((digits, obj, false, evals))
}

/// BG / EBG: switches enumerated or searched, continuous block in closed
/// form (ridge least squares for BG, EG alternation for EBG).
fn recon_censored(
    spec: &ModelSpec,
    theta: &Parameters,
    x: &DVector<f64>,
    x_centered: &DVector<f64>,
    opts: &ReconOptions,
) -> Result<ReconResult> {
    let p = spec.p;
    let mu = theta.mu_shift.unwrap_or(0.0);
    let sigma2 = theta.sigma2;
    let ata = theta.a.transpose() * &theta.a;
    let atx = theta.a.transpose() * x_centered;
    let is_ebg = spec.kind == ModelKind::Ebg;

    let solve_config = |bits: &[usize]| -> Result<(HiddenState, f64)> {
        let active: Vec<usize> = (0..p).filter(|&j| bits[j] == 1).collect();
        let k = active.len();
        let mut y = DVector::from_element(p, mu);
        let mut s = DVector::zeros(p);
        if k > 0 {
            // ridge solve on the active block
            let mut m = DMatrix::zeros(k, k);
            for (ii, &i) in active.iter().enumerate() {
                for (jj, &j) in active.iter().enumerate() {
                    m[(ii, jj)] = ata[(i, j)] / sigma2;
                }
                m[(ii, ii)] += 1.0;
            }
            let rhs = DVector::from_fn(k, |ii, _| atx[active[ii]] / sigma2 + mu);
            let chol = nalgebra::Cholesky::new(m)
                .ok_or_else(|| Error::Numerical("censored ridge system not SPD".into()))?;
            let y_act = chol.solve(&rhs);
            for (ii, &j) in active.iter().enumerate() {
                y[j] = y_act[ii];
            }
            if is_ebg {
                // refine (s, y) on the active block by alternation
                let a_act = DMatrix::from_fn(spec.d, k, |i, jj| theta.a[(i, active[jj])]);
                let s_init = DVector::from_element(k, 1.0);
                let y_init = DVector::from_fn(k, |ii, _| y[active[ii]]);
                let (s_act, y_act, _) =
                    eg_alternation(&a_act, sigma2, x_centered, mu, s_init, y_init, opts)?;
                for (ii, &j) in active.iter().enumerate() {
                    s[j] = s_act[ii];
                    y[j] = y_act[ii];
                }
            }
        }
        let b: Vec<u8> = bits.iter().map(|&v| v as u8).collect();
        let state = if is_ebg {
            HiddenState::ScaledCensored { s, b, y }
        } else {
            HiddenState::Censored { b, y }
        };
        let obj = objective(spec, theta, x, &state)?;
        Ok((state, obj))
    };

    let exhaustive_ok = p <= opts.binary_budget;
    let (bits, _obj, exhaustive, evals) =
        search_discrete(p, 2, exhaustive_ok, opts, |bits| Ok(solve_config(bits)?.1))?;
    let (state, obj) = solve_config(&bits)?;
    let beta = crate::model::beta_of(spec, &state)?;
    Ok(ReconResult {
        state,
        beta,
        objective: obj,
        iterations: evals,
        exhaustive,
        history: Vec::new(),
    })
}

/// ET: ternary coordinates searched, per-component scales by a nonnegative
/// quadratic program.
fn recon_et(
    spec: &ModelSpec,
    theta: &Parameters,
    x: &DVector<f64>,
    x_centered: &DVector<f64>,
    opts: &ReconOptions,
) -> Result<ReconResult> {
    let p = spec.p;
    let sigma2 = theta.sigma2;
    let ata = theta.a.transpose() * &theta.a;
    let atx = theta.a.transpose() * x_centered;

    let solve_config = |digits: &[usize]| -> Result<(HiddenState, f64)> {
        let y: Vec<i8> = digits.iter().map(|&v| DIGIT_TO_TERN[v]).collect();
        let mut s = DVector::zeros(p);
        let active: Vec<usize> = (0..p).filter(|&j| y[j] != 0).collect();
        if !active.is_empty() {
            let k = active.len();
            let q = DMatrix::from_fn(k, k, |ii, jj| {
                let (i, j) = (active[ii], active[jj]);
                f64::from(y[i]) * ata[(i, j)] * f64::from(y[j]) / sigma2
            });
            let c = DVector::from_fn(k, |ii, _| {
                f64::from(y[active[ii]]) * atx[active[ii]] / sigma2 - 1.0
            });
            let mut s_act = DVector::from_element(k, 0.5);
            nonneg_qp(&q, &c, &mut s_act, 400);
            for (ii, &j) in active.iter().enumerate() {
                s[j] = s_act[ii];
            }
        }
        let state = HiddenState::ScaledTernary { s, y };
        let obj = objective(spec, theta, x, &state)?;
        Ok((state, obj))
    };

    let exhaustive_ok = p <= opts.ternary_budget;
    let (digits, _obj, exhaustive, evals) =
        search_discrete(p, 3, exhaustive_ok, opts, |d| Ok(solve_config(d)?.1))?;
    let (state, obj) = solve_config(&digits)?;
    let beta = crate::model::beta_of(spec, &state)?;
    Ok(ReconResult {
        state,
        beta,
        objective: obj,
        iterations: evals,
        exhaustive,
        history: Vec::new(),
    })
}

const DIGIT_TO_TERN: [i8; 3] = [0, 1, -1];

/// TE inner solve: optimal `s >= 0` and objective for a fixed ternary
/// pattern against `x_target`.
fn te_solve_config(
    theta: &Parameters,
    x_target: &DVector<f64>,
    digits: &[usize],
) -> (f64, Vec<i8>, f64) {
    let y: Vec<i8> = digits.iter().map(|&v| DIGIT_TO_TERN[v]).collect();
    let mut u = DVector::zeros(x_target.len());
    for (j, &yj) in y.iter().enumerate() {
        if yj != 0 {
            u.axpy(f64::from(yj), &theta.a.column(j).into_owned(), 1.0);
        }
    }
    let un2 = u.norm_squared();
    let s = if un2 > 0.0 {
        ((u.dot(x_target) - theta.sigma2) / un2).max(0.0)
    } else {
        0.0
    };
    let r = x_target - u * s;
    let obj = r.norm_squared() / (2.0 * theta.sigma2)
        + s
        + rho_gamma(theta) * zeta_of(&y);
    (s, y, obj)
}

fn recon_te(
    spec: &ModelSpec,
    theta: &Parameters,
    x: &DVector<f64>,
    x_centered: &DVector<f64>,
    opts: &ReconOptions,
) -> Result<ReconResult> {
    let exhaustive_ok = spec.p <= opts.ternary_budget;
    let (digits, _obj, exhaustive, evals) = search_discrete(spec.p, 3, exhaustive_ok, opts, |d| {
        Ok(te_solve_config(theta, x_centered, d).2)
    })?;
    let (s, y, _) = te_solve_config(theta, x_centered, &digits);
    let state = HiddenState::SharedScaleTernary { s, y };
    let beta = crate::model::beta_of(spec, &state)?;
    let obj = objective(spec, theta, x, &state)?;
    Ok(ReconResult {
        state,
        beta,
        objective: obj,
        iterations: evals,
        exhaustive,
        history: Vec::new(),
    })
}

/// TEoff: block coordinate descent alternating the TE subproblem with the
/// closed-form offset `mu = mean(x - s A y)`.
fn recon_teoff(
    spec: &ModelSpec,
    theta: &Parameters,
    x: &DVector<f64>,
    opts: &ReconOptions,
) -> Result<ReconResult> {
    let exhaustive_ok = spec.p <= opts.ternary_budget;
    let mut offset = x.mean();
    let mut best_state = HiddenState::SharedScaleTernaryOffset {
        s: 0.0,
        y: vec![0; spec.p],
        offset,
    };
    let mut history = vec![objective(spec, theta, x, &best_state)?];
    let mut exhaustive = exhaustive_ok;
    let mut evals = 0usize;

    for _ in 0..opts.max_iter {
        let x_target = x.map(|v| v - offset);
        let (digits, _o, exh, ev) = search_discrete(spec.p, 3, exhaustive_ok, opts, |d| {
            Ok(te_solve_config(theta, &x_target, d).2)
        })?;
        exhaustive &= exh;
        evals += ev;
        let (s, y, _) = te_solve_config(theta, &x_target, &digits);

        // closed-form offset given (s, y)
        let mut u = DVector::zeros(spec.d);
        for (j, &yj) in y.iter().enumerate() {
            if yj != 0 {
                u.axpy(f64::from(yj), &theta.a.column(j).into_owned(), 1.0);
            }
        }
        offset = (x - u * s).mean();

        let state = HiddenState::SharedScaleTernaryOffset { s, y, offset };
        let obj = objective(spec, theta, x, &state)?;
        let prev = *history.last().unwrap();
        history.push(obj);
        best_state = state;
        if prev - obj < opts.alt_tol {
            break;
        }
    }

    let beta = crate::model::beta_of(spec, &best_state)?;
    let obj = *history.last().unwrap();
    Ok(ReconResult {
        state: best_state,
        beta,
        objective: obj,
        iterations: evals,
        exhaustive,
        history,
    })
}

/// IFA: signed mixture assignments searched, `beta` solved per candidate.
fn recon_ifa(
    spec: &ModelSpec,
    theta: &Parameters,
    x: &DVector<f64>,
    x_centered: &DVector<f64>,
    opts: &ReconOptions,
) -> Result<ReconResult> {
    let p = spec.p;
    let sigma2 = theta.sigma2;
    let mix = theta.mixture.as_ref().expect("ifa parameters");
    let classes = 2 * mix.k() + 1;
    let lambda = DMatrix::identity(p, p) + theta.a.transpose() * &theta.a / sigma2;
    let chol = nalgebra::Cholesky::new(lambda)
        .ok_or_else(|| Error::Numerical("IFA posterior precision not SPD".into()))?;
    let g = theta.a.transpose() * x_centered / sigma2;

    let digit_to_class_sign = |digit: usize| -> (usize, i8) {
        if digit == 0 {
            (0, 1)
        } else {
            ((digit + 1) / 2, if digit % 2 == 1 { 1 } else { -1 })
        }
    };

    let solve_config = |digits: &[usize]| -> Result<(HiddenState, f64)> {
        let mut mu_c = DVector::zeros(p);
        let mut b = vec![1i8; p];
        let mut t = vec![0usize; p];
        for j in 0..p {
            let (class, sign) = digit_to_class_sign(digits[j]);
            t[j] = class;
            b[j] = sign;
            mu_c[j] = f64::from(sign) * mix.mean(class);
        }
        let beta = chol.solve(&(&g + &mu_c));
        let state = HiddenState::Ifa { beta, b, t };
        let obj = objective(spec, theta, x, &state)?;
        Ok((state, obj))
    };

    let mut total: usize = 1;
    let mut within = true;
    for _ in 0..p {
        total = total.saturating_mul(classes);
        if total > opts.ifa_budget {
            within = false;
            break;
        }
    }
    let (digits, _obj, exhaustive, evals) =
        search_discrete(p, classes, within, opts, |d| Ok(solve_config(d)?.1))?;
    let (state, obj) = solve_config(&digits)?;
    let beta = crate::model::beta_of(spec, &state)?;
    Ok(ReconResult {
        state,
        beta,
        objective: obj,
        iterations: evals,
        exhaustive,
        history: Vec::new(),
    })
}
