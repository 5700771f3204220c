//! Shared domain types: model specification, parameters, hidden states,
//! datasets and sufficient statistics.
//!
//! Conventions used throughout the crate:
//! - Observations are rows of an `n x d` table; components are the `p`
//!   columns of the decomposition matrix `A`.
//! - When the constant mean `mu0` is estimated it is carried internally as
//!   column 0 of an augmented decomposition (`beta^0 = 1`), so the sufficient
//!   statistics and the M-step treat it uniformly with the other columns.
//!   The public [`Parameters`] type keeps `mu0` as a separate field.
//! - For shifted variants the stored Gaussian entries `y` already include the
//!   shift (their prior is `N(mu_shift, 1)`), so `beta_of` and
//!   `extract_stats` stay parameter-free.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Component distribution family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Logistic components, CDF `1/(1+exp(-2t))`.
    Log,
    /// Laplacian components, density `exp(-|t|)/2`.
    Lap,
    /// Exponentially scaled Gaussian: `beta^j = s^j Y^j`, `s ~ Exp(1)`.
    Eg,
    /// Independent factor analysis: symmetric mixture of `2K+1` unit-variance
    /// Gaussians with mirrored means.
    Ifa,
    /// Bernoulli-censored Gaussian: `beta^j = b^j Y^j`, `b ~ Bern(alpha)`.
    Bg,
    /// Exponentially scaled Bernoulli-censored Gaussian: `beta^j = s^j b^j Y^j`.
    Ebg,
    /// Exponentially scaled ternary: `beta^j = s^j Y^j`, `Y ∈ {-1,0,1}`.
    Et,
    /// Single shared scale ternary: `beta^j = s Y^j`.
    Te,
    /// Shared-scale ternary with a random scalar offset on every coordinate.
    TeOff,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Log,
        ModelKind::Lap,
        ModelKind::Eg,
        ModelKind::Ifa,
        ModelKind::Bg,
        ModelKind::Ebg,
        ModelKind::Et,
        ModelKind::Te,
        ModelKind::TeOff,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Log => "log",
            ModelKind::Lap => "lap",
            ModelKind::Eg => "eg",
            ModelKind::Ifa => "ifa",
            ModelKind::Bg => "bg",
            ModelKind::Ebg => "ebg",
            ModelKind::Et => "et",
            ModelKind::Te => "te",
            ModelKind::TeOff => "teoff",
        }
    }

    /// True for the families carrying a Bernoulli activation switch.
    pub fn has_switch(&self) -> bool {
        matches!(self, ModelKind::Bg | ModelKind::Ebg)
    }

    /// True for the ternary families (parameter `gamma`).
    pub fn is_ternary(&self) -> bool {
        matches!(self, ModelKind::Et | ModelKind::Te | ModelKind::TeOff)
    }

    /// True when a scalar shift of the Gaussian part is supported.
    pub fn supports_shift(&self) -> bool {
        matches!(self, ModelKind::Eg | ModelKind::Bg | ModelKind::Ebg)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "log" => Ok(ModelKind::Log),
            "lap" => Ok(ModelKind::Lap),
            "eg" => Ok(ModelKind::Eg),
            "ifa" => Ok(ModelKind::Ifa),
            "bg" => Ok(ModelKind::Bg),
            "ebg" => Ok(ModelKind::Ebg),
            "et" => Ok(ModelKind::Et),
            "te" => Ok(ModelKind::Te),
            "teoff" => Ok(ModelKind::TeOff),
            other => Err(Error::Parse(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Structural description of a model: family, dimensions and options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Number of components.
    pub p: usize,
    /// Data dimension.
    pub d: usize,
    /// Scalar shift of the Gaussian part (EG/BG/EBG only).
    pub shifted: bool,
    /// Mixture size `K` (IFA only, `K >= 1`; the mixture has `2K+1` classes).
    pub mixture_size: Option<usize>,
    /// Whether the constant mean `mu0` is a parameter. Always false for the
    /// offset model, where the per-observation offset is a hidden variable.
    pub estimate_mu0: bool,
}

impl ModelSpec {
    /// Spec with default options: `mu0` estimated (except for the offset
    /// model), no shift, `K = 1` for IFA.
    pub fn new(kind: ModelKind, p: usize, d: usize) -> Result<Self> {
        if p == 0 || d == 0 {
            return Err(Error::InvalidSpec(format!(
                "p and d must be >= 1, got p={p}, d={d}"
            )));
        }
        Ok(ModelSpec {
            kind,
            p,
            d,
            shifted: false,
            mixture_size: if kind == ModelKind::Ifa { Some(1) } else { None },
            estimate_mu0: kind != ModelKind::TeOff,
        })
    }

    pub fn with_mixture_size(mut self, k: usize) -> Result<Self> {
        if self.kind != ModelKind::Ifa {
            return Err(Error::InvalidSpec(
                "mixture size applies to the ifa model only".into(),
            ));
        }
        if k == 0 {
            return Err(Error::InvalidSpec("mixture size K must be >= 1".into()));
        }
        self.mixture_size = Some(k);
        Ok(self)
    }

    pub fn with_shift(mut self) -> Result<Self> {
        if !self.kind.supports_shift() {
            return Err(Error::InvalidSpec(format!(
                "model '{}' does not support a component shift",
                self.kind
            )));
        }
        self.shifted = true;
        Ok(self)
    }

    pub fn with_estimate_mu0(mut self, estimate: bool) -> Result<Self> {
        if estimate && self.kind == ModelKind::TeOff {
            return Err(Error::InvalidSpec(
                "the offset model replaces mu0 by a hidden offset".into(),
            ));
        }
        self.estimate_mu0 = estimate;
        Ok(self)
    }

    pub fn mixture_classes(&self) -> usize {
        self.mixture_size.map_or(0, |k| k + 1)
    }

    /// Side of the `bbt`/`xbt` statistics: `p`, plus one when `mu0` is
    /// carried as the augmented column 0.
    pub fn stat_cols(&self) -> usize {
        self.p + usize::from(self.estimate_mu0)
    }
}

/// Symmetric Gaussian mixture for the IFA model: class `0` is centered,
/// class `k >= 1` has mirrored means `±m_k`; all classes have unit variance.
/// `weights` has length `K+1`, `means` holds `m_1..m_K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
}

impl Mixture {
    pub fn uniform(k: usize) -> Self {
        Mixture {
            weights: vec![1.0 / (k + 1) as f64; k + 1],
            means: (1..=k).map(|i| i as f64).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    /// Mean of class `k` (`m_0 = 0`).
    pub fn mean(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.means[k - 1]
        }
    }
}

/// Model parameters `theta`.
///
/// Only the fields demanded by the accompanying [`ModelSpec`] may be present;
/// [`validate`] enforces this.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    /// Decomposition matrix, `d x p`, components as columns.
    pub a: DMatrix<f64>,
    /// Noise variance, `> 0`.
    pub sigma2: f64,
    /// Constant mean (present iff `estimate_mu0`).
    pub mu0: Option<DVector<f64>>,
    /// Activation probability in `(0,1)` (BG/EBG).
    pub alpha: Option<f64>,
    /// Ternary probability `gamma = P(Y=1) = P(Y=-1)` in `(0, 1/2)`.
    pub gamma: Option<f64>,
    /// Scalar shift of the Gaussian part (shifted variants).
    pub mu_shift: Option<f64>,
    /// Gaussian mixture (IFA).
    pub mixture: Option<Mixture>,
}

impl Parameters {
    /// Parameters with `A`, `sigma2` and neutral model-specific extras for
    /// `spec` (`alpha = 1/2`, `gamma = 1/4`, `mu_shift = 0`, uniform mixture).
    pub fn from_a_sigma2(spec: &ModelSpec, a: DMatrix<f64>, sigma2: f64) -> Self {
        Parameters {
            a,
            sigma2,
            mu0: spec.estimate_mu0.then(|| DVector::zeros(spec.d)),
            alpha: spec.kind.has_switch().then_some(0.5),
            gamma: spec.kind.is_ternary().then_some(0.25),
            mu_shift: spec.shifted.then_some(0.0),
            mixture: spec.mixture_size.map(Mixture::uniform),
        }
    }

    /// Mean of the observation model given `beta` (and the offset for the
    /// offset model).
    pub fn predict(&self, beta: &DVector<f64>, offset: f64) -> DVector<f64> {
        let mut m = &self.a * beta;
        if let Some(mu0) = &self.mu0 {
            m += mu0;
        }
        if offset != 0.0 {
            m.add_scalar_mut(offset);
        }
        m
    }
}

/// Weight-simplex tolerance used by [`validate`].
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Checks every parameter invariant demanded by `spec`.
pub fn validate(spec: &ModelSpec, theta: &Parameters) -> Result<()> {
    if spec.kind == ModelKind::TeOff && spec.estimate_mu0 {
        return Err(Error::InvalidSpec(
            "the offset model cannot estimate mu0".into(),
        ));
    }
    if let Some(k) = spec.mixture_size {
        if spec.kind != ModelKind::Ifa {
            return Err(Error::InvalidSpec(
                "mixture size present for a non-ifa model".into(),
            ));
        }
        if k == 0 {
            return Err(Error::InvalidSpec("mixture size K must be >= 1".into()));
        }
    } else if spec.kind == ModelKind::Ifa {
        return Err(Error::InvalidSpec("ifa model requires a mixture size".into()));
    }
    if spec.shifted && !spec.kind.supports_shift() {
        return Err(Error::InvalidSpec(format!(
            "model '{}' does not support a component shift",
            spec.kind
        )));
    }

    if theta.a.nrows() != spec.d || theta.a.ncols() != spec.p {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, expected {}x{}",
            theta.a.nrows(),
            theta.a.ncols(),
            spec.d,
            spec.p
        )));
    }
    if !theta.a.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameters("A has non-finite entries".into()));
    }
    if !(theta.sigma2.is_finite() && theta.sigma2 > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "sigma2 must be > 0, got {}",
            theta.sigma2
        )));
    }

    match (&theta.mu0, spec.estimate_mu0) {
        (Some(mu0), true) => {
            if mu0.len() != spec.d {
                return Err(Error::DimensionMismatch(format!(
                    "mu0 has length {}, expected {}",
                    mu0.len(),
                    spec.d
                )));
            }
            if !mu0.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidParameters("mu0 has non-finite entries".into()));
            }
        }
        (None, false) => {}
        (Some(_), false) => {
            return Err(Error::InvalidParameters(
                "mu0 present but the spec does not estimate it".into(),
            ))
        }
        (None, true) => {
            return Err(Error::InvalidParameters("mu0 missing".into()));
        }
    }

    match (theta.alpha, spec.kind.has_switch()) {
        (Some(alpha), true) => {
            if !(alpha.is_finite() && alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidParameters(format!(
                    "alpha out of open interval (0,1): {alpha}"
                )));
            }
        }
        (None, false) => {}
        (Some(_), false) => {
            return Err(Error::InvalidParameters(
                "alpha present for a model without an activation switch".into(),
            ))
        }
        (None, true) => return Err(Error::InvalidParameters("alpha missing".into())),
    }

    match (theta.gamma, spec.kind.is_ternary()) {
        (Some(gamma), true) => {
            if !(gamma.is_finite() && gamma > 0.0 && gamma < 0.5) {
                return Err(Error::InvalidParameters(format!(
                    "gamma out of open interval (0,1/2): {gamma}"
                )));
            }
        }
        (None, false) => {}
        (Some(_), false) => {
            return Err(Error::InvalidParameters(
                "gamma present for a non-ternary model".into(),
            ))
        }
        (None, true) => return Err(Error::InvalidParameters("gamma missing".into())),
    }

    match (theta.mu_shift, spec.shifted) {
        (Some(mu), true) => {
            if !mu.is_finite() {
                return Err(Error::InvalidParameters("mu_shift not finite".into()));
            }
        }
        (None, false) => {}
        (Some(_), false) => {
            return Err(Error::InvalidParameters(
                "mu_shift present for an unshifted model".into(),
            ))
        }
        (None, true) => return Err(Error::InvalidParameters("mu_shift missing".into())),
    }

    match (&theta.mixture, spec.mixture_size) {
        (Some(mix), Some(k)) => {
            if mix.weights.len() != k + 1 || mix.means.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "mixture sizes: {} weights / {} means, expected {} / {}",
                    mix.weights.len(),
                    mix.means.len(),
                    k + 1,
                    k
                )));
            }
            if !mix.weights.iter().all(|w| w.is_finite() && *w >= 0.0) {
                return Err(Error::InvalidParameters(
                    "mixture weights must be finite and >= 0".into(),
                ));
            }
            let sum: f64 = mix.weights.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::InvalidParameters(format!(
                    "mixture weights sum to {sum}, expected 1"
                )));
            }
            if !mix.means.iter().all(|m| m.is_finite()) {
                return Err(Error::InvalidParameters("mixture means not finite".into()));
            }
        }
        (None, None) => {}
        (Some(_), None) => {
            return Err(Error::InvalidParameters(
                "mixture present for a non-ifa model".into(),
            ))
        }
        (None, Some(_)) => return Err(Error::InvalidParameters("mixture missing".into())),
    }

    Ok(())
}

/// Per-observation hidden variables, tagged by model structure.
///
/// For shifted specs the Gaussian entries `y` are stored with the shift
/// included: their prior is `N(mu_shift, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub enum HiddenState {
    /// Log, Lap: the components themselves.
    Continuous { beta: DVector<f64> },
    /// EG: per-component exponential scales and Gaussians, `beta^j = s^j y^j`.
    ScaledGauss { s: DVector<f64>, y: DVector<f64> },
    /// IFA: components plus mixture labels `t ∈ {0..K}` and signs `b ∈ {-1,1}`.
    Ifa {
        beta: DVector<f64>,
        b: Vec<i8>,
        t: Vec<usize>,
    },
    /// BG: Bernoulli switches and Gaussians, `beta^j = b^j y^j`.
    Censored { b: Vec<u8>, y: DVector<f64> },
    /// EBG: scales, switches and Gaussians, `beta^j = s^j b^j y^j`.
    ScaledCensored {
        s: DVector<f64>,
        b: Vec<u8>,
        y: DVector<f64>,
    },
    /// ET: per-component scales and ternary signs, `beta^j = s^j y^j`.
    ScaledTernary { s: DVector<f64>, y: Vec<i8> },
    /// TE: one shared scale, `beta^j = s y^j`.
    SharedScaleTernary { s: f64, y: Vec<i8> },
    /// TEoff: TE plus a scalar offset applied to every coordinate of `x`.
    SharedScaleTernaryOffset { s: f64, y: Vec<i8>, offset: f64 },
}

impl HiddenState {
    /// The scalar offset carried by the state (0 unless the offset model).
    pub fn offset(&self) -> f64 {
        match self {
            HiddenState::SharedScaleTernaryOffset { offset, .. } => *offset,
            _ => 0.0,
        }
    }

    /// Checks the state matches `spec` and its coordinates stay in their
    /// alphabets (`s >= 0`, bits in `{0,1}`, ternary in `{-1,0,1}`).
    pub fn validate_for(&self, spec: &ModelSpec) -> Result<()> {
        let p = spec.p;
        let bad = |msg: &str| Err(Error::InvalidParameters(format!("hidden state: {msg}")));
        match (spec.kind, self) {
            (ModelKind::Log | ModelKind::Lap, HiddenState::Continuous { beta }) => {
                if beta.len() != p {
                    return bad("beta length mismatch");
                }
                if !beta.iter().all(|v| v.is_finite()) {
                    return bad("beta not finite");
                }
            }
            (ModelKind::Eg, HiddenState::ScaledGauss { s, y }) => {
                if s.len() != p || y.len() != p {
                    return bad("s/y length mismatch");
                }
                if !s.iter().all(|v| v.is_finite() && *v >= 0.0) {
                    return bad("scales must be finite and >= 0");
                }
                if !y.iter().all(|v| v.is_finite()) {
                    return bad("y not finite");
                }
            }
            (ModelKind::Ifa, HiddenState::Ifa { beta, b, t }) => {
                if beta.len() != p || b.len() != p || t.len() != p {
                    return bad("beta/b/t length mismatch");
                }
                if !beta.iter().all(|v| v.is_finite()) {
                    return bad("beta not finite");
                }
                if !b.iter().all(|v| *v == 1 || *v == -1) {
                    return bad("signs must be ±1");
                }
                let classes = spec.mixture_classes();
                if !t.iter().all(|v| *v < classes) {
                    return bad("label out of range");
                }
            }
            (ModelKind::Bg, HiddenState::Censored { b, y }) => {
                if b.len() != p || y.len() != p {
                    return bad("b/y length mismatch");
                }
                if !b.iter().all(|v| *v <= 1) {
                    return bad("switches must be 0/1");
                }
                if !y.iter().all(|v| v.is_finite()) {
                    return bad("y not finite");
                }
            }
            (ModelKind::Ebg, HiddenState::ScaledCensored { s, b, y }) => {
                if s.len() != p || b.len() != p || y.len() != p {
                    return bad("s/b/y length mismatch");
                }
                if !s.iter().all(|v| v.is_finite() && *v >= 0.0) {
                    return bad("scales must be finite and >= 0");
                }
                if !b.iter().all(|v| *v <= 1) {
                    return bad("switches must be 0/1");
                }
                if !y.iter().all(|v| v.is_finite()) {
                    return bad("y not finite");
                }
            }
            (ModelKind::Et, HiddenState::ScaledTernary { s, y }) => {
                if s.len() != p || y.len() != p {
                    return bad("s/y length mismatch");
                }
                if !s.iter().all(|v| v.is_finite() && *v >= 0.0) {
                    return bad("scales must be finite and >= 0");
                }
                if !y.iter().all(|v| (-1..=1).contains(v)) {
                    return bad("ternary coordinate out of alphabet");
                }
            }
            (ModelKind::Te, HiddenState::SharedScaleTernary { s, y }) => {
                if y.len() != p {
                    return bad("y length mismatch");
                }
                if !(s.is_finite() && *s >= 0.0) {
                    return bad("scale must be finite and >= 0");
                }
                if !y.iter().all(|v| (-1..=1).contains(v)) {
                    return bad("ternary coordinate out of alphabet");
                }
            }
            (ModelKind::TeOff, HiddenState::SharedScaleTernaryOffset { s, y, offset }) => {
                if y.len() != p {
                    return bad("y length mismatch");
                }
                if !(s.is_finite() && *s >= 0.0) {
                    return bad("scale must be finite and >= 0");
                }
                if !y.iter().all(|v| (-1..=1).contains(v)) {
                    return bad("ternary coordinate out of alphabet");
                }
                if !offset.is_finite() {
                    return bad("offset not finite");
                }
            }
            _ => {
                return Err(Error::InvalidParameters(format!(
                    "hidden state variant does not match model '{}'",
                    spec.kind
                )))
            }
        }
        Ok(())
    }
}

/// Assembles the component vector `beta` from a hidden state.
///
/// Total and deterministic on valid states: every variant yields a vector in
/// R^p (`beta^j = s^j y^j` for EG/ET, `b^j y^j` for BG, `s^j b^j y^j` for
/// EBG, `s y^j` for TE/TEoff, identity for Log/Lap/IFA).
pub fn beta_of(spec: &ModelSpec, z: &HiddenState) -> Result<DVector<f64>> {
    z.validate_for(spec)?;
    Ok(match z {
        HiddenState::Continuous { beta } => beta.clone(),
        HiddenState::ScaledGauss { s, y } => s.component_mul(y),
        HiddenState::Ifa { beta, .. } => beta.clone(),
        HiddenState::Censored { b, y } => {
            DVector::from_fn(y.len(), |j, _| f64::from(b[j]) * y[j])
        }
        HiddenState::ScaledCensored { s, b, y } => {
            DVector::from_fn(y.len(), |j, _| s[j] * f64::from(b[j]) * y[j])
        }
        HiddenState::ScaledTernary { s, y } => {
            DVector::from_fn(y.len(), |j, _| s[j] * f64::from(y[j]))
        }
        HiddenState::SharedScaleTernary { s, y } => {
            DVector::from_fn(y.len(), |j, _| s * f64::from(y[j]))
        }
        HiddenState::SharedScaleTernaryOffset { s, y, .. } => {
            DVector::from_fn(y.len(), |j, _| s * f64::from(y[j]))
        }
    })
}

/// Immutable dataset: `n` observations of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<DVector<f64>>,
    ids: Option<Vec<String>>,
}

impl Dataset {
    pub fn from_rows(rows: Vec<DVector<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameters("dataset must have n >= 1".into()));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::InvalidParameters("dataset must have d >= 1".into()));
        }
        for (k, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "row {k} has {} columns, expected {d}",
                    r.len()
                )));
            }
            if !r.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidParameters(format!(
                    "row {k} has non-finite entries"
                )));
            }
        }
        Ok(Dataset { rows, ids: None })
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.rows.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} ids for {} rows",
                ids.len(),
                self.rows.len()
            )));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, k: usize) -> &DVector<f64> {
        &self.rows[k]
    }

    pub fn rows(&self) -> &[DVector<f64>] {
        &self.rows
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Dense `n x d` copy.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.dim(), |i, j| self.rows[i][j])
    }
}

/// Exponential-family sufficient statistics (averaged or per sample).
///
/// `bbt`/`xbt` carry the augmented column when `mu0` is estimated (entry
/// `[0,0]` of `bbt` is then the constant 1). For the offset model the `x`
/// entering `xbt`/`x2` is the offset-corrected observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    /// `[beta beta^T]`, `q x q` with `q = spec.stat_cols()`.
    pub bbt: DMatrix<f64>,
    /// `[x beta^T]`, `d x q`.
    pub xbt: DMatrix<f64>,
    /// `[|x|^2]`.
    pub x2: f64,
    /// `[nu]`: number of active switches (BG/EBG).
    pub nu: f64,
    /// `[zeta]`: number of nonzero ternary coordinates.
    pub zeta: f64,
    /// `[sum_j y^j]` for shifted variants.
    pub y_sum: f64,
    /// IFA class counts `S0[k] = sum_j 1{t_j = k}`, length `K+1`.
    pub s0: Vec<f64>,
    /// IFA signed component sums `S1[k] = sum_j 1{t_j = k} b^j beta^j`.
    pub s1: Vec<f64>,
}

impl SuffStats {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let q = spec.stat_cols();
        let classes = spec.mixture_classes();
        SuffStats {
            bbt: DMatrix::zeros(q, q),
            xbt: DMatrix::zeros(spec.d, q),
            x2: 0.0,
            nu: 0.0,
            zeta: 0.0,
            y_sum: 0.0,
            s0: vec![0.0; classes],
            s1: vec![0.0; classes],
        }
    }

    pub fn add_assign(&mut self, other: &SuffStats) {
        self.bbt += &other.bbt;
        self.xbt += &other.xbt;
        self.x2 += other.x2;
        self.nu += other.nu;
        self.zeta += other.zeta;
        self.y_sum += other.y_sum;
        for (a, b) in self.s0.iter_mut().zip(&other.s0) {
            *a += b;
        }
        for (a, b) in self.s1.iter_mut().zip(&other.s1) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.bbt *= c;
        self.xbt *= c;
        self.x2 *= c;
        self.nu *= c;
        self.zeta *= c;
        self.y_sum *= c;
        for a in &mut self.s0 {
            *a *= c;
        }
        for a in &mut self.s1 {
            *a *= c;
        }
    }

    /// `self <- self + delta * (target - self)`; the stochastic-approximation
    /// update. Valid statistics are closed under this convex combination.
    pub fn blend(&mut self, target: &SuffStats, delta: f64) {
        let keep = 1.0 - delta;
        self.bbt = &self.bbt * keep + &target.bbt * delta;
        self.xbt = &self.xbt * keep + &target.xbt * delta;
        self.x2 = self.x2 * keep + target.x2 * delta;
        self.nu = self.nu * keep + target.nu * delta;
        self.zeta = self.zeta * keep + target.zeta * delta;
        self.y_sum = self.y_sum * keep + target.y_sum * delta;
        for (a, b) in self.s0.iter_mut().zip(&target.s0) {
            *a = *a * keep + b * delta;
        }
        for (a, b) in self.s1.iter_mut().zip(&target.s1) {
            *a = *a * keep + b * delta;
        }
    }

    /// Fixed-order mean of per-observation statistics.
    pub fn mean_of(parts: &[SuffStats]) -> Option<SuffStats> {
        let mut it = parts.iter();
        let mut acc = it.next()?.clone();
        for part in it {
            acc.add_assign(part);
        }
        acc.scale(1.0 / parts.len() as f64);
        Some(acc)
    }

    pub fn is_finite(&self) -> bool {
        self.bbt.iter().all(|v| v.is_finite())
            && self.xbt.iter().all(|v| v.is_finite())
            && self.x2.is_finite()
            && self.nu.is_finite()
            && self.zeta.is_finite()
            && self.y_sum.is_finite()
            && self.s0.iter().all(|v| v.is_finite())
            && self.s1.iter().all(|v| v.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::with_capacity(self.bbt.len() + self.xbt.len() + 8);
        v.extend(self.bbt.iter());
        v.extend(self.xbt.iter());
        v.push(self.x2);
        v.push(self.nu);
        v.push(self.zeta);
        v.push(self.y_sum);
        v.extend(&self.s0);
        v.extend(&self.s1);
        v
    }

    /// Euclidean norm over all entries (used by the truncation safeguard).
    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &SuffStats) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}
