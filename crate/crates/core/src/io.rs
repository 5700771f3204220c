//! File formats: dataset CSV, parameter JSON, trace CSV, hidden-state CSV
//! and PGM component images.
//!
//! Numeric CSV fields use Rust's shortest round-trip float formatting, so
//! repeated runs with the same seed produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::FitTrace;
use crate::model::{Dataset, HiddenState, Mixture, ModelKind, ModelSpec, Parameters};

// ---------------------------------------------------------------------------
// Dataset CSV
// ---------------------------------------------------------------------------

/// Reads a dataset: one observation per row, comma-separated values,
/// optional single header row skipped when `has_header` is set.
pub fn read_dataset_csv(path: &Path, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let mut row = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "{}: row {}, column {}: '{}' is not a number",
                    path.display(),
                    i + 1,
                    j + 1,
                    field
                ))
            })?;
            row.push(v);
        }
        rows.push(DVector::from_vec(row));
    }
    Dataset::from_rows(rows)
}

pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for k in 0..data.n() {
        write_float_row(&mut w, data.row(k).iter())?;
    }
    Ok(())
}

fn write_float_row<'a, W: Write>(w: &mut W, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            w.write_all(b",")?;
        }
        write!(w, "{v}")?;
        first = false;
    }
    w.write_all(b"\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Parameters JSON
// ---------------------------------------------------------------------------

/// On-disk parameter document. `A` is row-major `d x p`; optional fields are
/// present exactly when the model demands them (`mu_shift` marks shifted
/// variants, `weights`/`means` the mixture model). `seed` is provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsFile {
    pub model: String,
    pub p: usize,
    pub d: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub sigma2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_shift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ParamsFile {
    pub fn from_model(spec: &ModelSpec, theta: &Parameters, seed: Option<u64>) -> ParamsFile {
        let mut a = Vec::with_capacity(spec.d * spec.p);
        for i in 0..spec.d {
            for j in 0..spec.p {
                a.push(theta.a[(i, j)]);
            }
        }
        ParamsFile {
            model: spec.kind.to_string(),
            p: spec.p,
            d: spec.d,
            a,
            sigma2: theta.sigma2,
            mu0: theta.mu0.as_ref().map(|m| m.iter().cloned().collect()),
            alpha: theta.alpha,
            gamma: theta.gamma,
            mu_shift: theta.mu_shift,
            weights: theta.mixture.as_ref().map(|m| m.weights.clone()),
            means: theta.mixture.as_ref().map(|m| m.means.clone()),
            seed,
        }
    }

    pub fn into_model(self) -> Result<(ModelSpec, Parameters)> {
        let kind: ModelKind = self.model.parse()?;
        let mut spec = ModelSpec::new(kind, self.p, self.d)?;
        spec.estimate_mu0 = self.mu0.is_some();
        spec.shifted = self.mu_shift.is_some();
        if let Some(w) = &self.weights {
            if w.is_empty() {
                return Err(Error::Parse("weights must be nonempty".into()));
            }
            spec = spec.with_mixture_size(w.len() - 1)?;
        } else if kind == ModelKind::Ifa {
            return Err(Error::Parse("ifa parameters require weights".into()));
        }
        if self.a.len() != self.d * self.p {
            return Err(Error::Parse(format!(
                "A has {} entries, expected {} x {}",
                self.a.len(),
                self.d,
                self.p
            )));
        }
        let a = DMatrix::from_row_slice(self.d, self.p, &self.a);
        let mixture = match (self.weights, self.means) {
            (Some(weights), Some(means)) => Some(Mixture { weights, means }),
            (None, None) => None,
            _ => {
                return Err(Error::Parse(
                    "weights and means must be present together".into(),
                ))
            }
        };
        let theta = Parameters {
            a,
            sigma2: self.sigma2,
            mu0: self.mu0.map(DVector::from_vec),
            alpha: self.alpha,
            gamma: self.gamma,
            mu_shift: self.mu_shift,
            mixture,
        };
        crate::model::validate(&spec, &theta)?;
        Ok((spec, theta))
    }
}

pub fn write_params_json(
    path: &Path,
    spec: &ModelSpec,
    theta: &Parameters,
    seed: Option<u64>,
) -> Result<()> {
    let file = ParamsFile::from_model(spec, theta, seed);
    let mut out = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Parse(format!("serializing parameters: {e}")))?;
    out.push('\n');
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_params_json(path: &Path) -> Result<(ModelSpec, Parameters)> {
    let mut contents = String::new();
    File::open(path)?.read_to_string(&mut contents)?;
    let file: ParamsFile = serde_json::from_str(&contents)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    file.into_model()
}

// ---------------------------------------------------------------------------
// Trace CSV
// ---------------------------------------------------------------------------

/// Writes the trace: `iteration,delta,sigma2,accept_mean,a_0_0,...` with the
/// decomposition flattened row-major. Timing is deliberately not included.
pub fn write_trace_csv(path: &Path, trace: &FitTrace) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (d, p) = trace
        .rows
        .first()
        .map(|r| (r.a.nrows(), r.a.ncols()))
        .unwrap_or((0, 0));
    write!(w, "iteration,delta,sigma2,accept_mean")?;
    for i in 0..d {
        for j in 0..p {
            write!(w, ",a_{i}_{j}")?;
        }
    }
    w.write_all(b"\n")?;
    for row in &trace.rows {
        write!(
            w,
            "{},{},{},{}",
            row.iteration, row.delta, row.sigma2, row.accept_mean
        )?;
        for i in 0..d {
            for j in 0..p {
                write!(w, ",{}", row.a[(i, j)])?;
            }
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Hidden states CSV
// ---------------------------------------------------------------------------

fn hidden_header(spec: &ModelSpec) -> String {
    let p = spec.p;
    let cols = |prefix: &str| -> String {
        (1..=p)
            .map(|j| format!("{prefix}{j}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut parts = vec![cols("beta")];
    match spec.kind {
        ModelKind::Log | ModelKind::Lap => {}
        ModelKind::Eg => parts.extend([cols("s"), cols("y")]),
        ModelKind::Ifa => parts.extend([cols("b"), cols("t")]),
        ModelKind::Bg => parts.extend([cols("b"), cols("y")]),
        ModelKind::Ebg => parts.extend([cols("s"), cols("b"), cols("y")]),
        ModelKind::Et => parts.extend([cols("s"), cols("y")]),
        ModelKind::Te => parts.extend(["s".to_string(), cols("y")]),
        ModelKind::TeOff => parts.extend(["s".to_string(), cols("y"), "offset".to_string()]),
    }
    parts.join(",")
}

fn push_floats(out: &mut Vec<String>, it: impl Iterator<Item = f64>) {
    out.extend(it.map(|v| format!("{v}")));
}

fn hidden_fields(spec: &ModelSpec, z: &HiddenState) -> Result<Vec<String>> {
    let beta = crate::model::beta_of(spec, z)?;
    let mut fields = Vec::new();
    push_floats(&mut fields, beta.iter().cloned());
    match z {
        HiddenState::Continuous { .. } => {}
        HiddenState::ScaledGauss { s, y } => {
            push_floats(&mut fields, s.iter().cloned());
            push_floats(&mut fields, y.iter().cloned());
        }
        HiddenState::Ifa { b, t, .. } => {
            fields.extend(b.iter().map(|v| v.to_string()));
            fields.extend(t.iter().map(|v| v.to_string()));
        }
        HiddenState::Censored { b, y } => {
            fields.extend(b.iter().map(|v| v.to_string()));
            push_floats(&mut fields, y.iter().cloned());
        }
        HiddenState::ScaledCensored { s, b, y } => {
            push_floats(&mut fields, s.iter().cloned());
            fields.extend(b.iter().map(|v| v.to_string()));
            push_floats(&mut fields, y.iter().cloned());
        }
        HiddenState::ScaledTernary { s, y } => {
            push_floats(&mut fields, s.iter().cloned());
            fields.extend(y.iter().map(|v| v.to_string()));
        }
        HiddenState::SharedScaleTernary { s, y } => {
            fields.push(format!("{s}"));
            fields.extend(y.iter().map(|v| v.to_string()));
        }
        HiddenState::SharedScaleTernaryOffset { s, y, offset } => {
            fields.push(format!("{s}"));
            fields.extend(y.iter().map(|v| v.to_string()));
            fields.push(format!("{offset}"));
        }
    }
    Ok(fields)
}

/// Writes hidden states, one observation per row, `beta` first and the
/// model-specific latents after (see the header for the exact layout).
pub fn write_hidden_csv(path: &Path, spec: &ModelSpec, states: &[HiddenState]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", hidden_header(spec))?;
    for z in states {
        writeln!(w, "{}", hidden_fields(spec, z)?.join(","))?;
    }
    Ok(())
}

/// Writes MAP reconstructions: the hidden-state layout plus a trailing
/// `objective` column.
pub fn write_recon_csv(
    path: &Path,
    spec: &ModelSpec,
    results: &[crate::recon::ReconResult],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{},objective", hidden_header(spec))?;
    for res in results {
        let mut fields = hidden_fields(spec, &res.state)?;
        fields.push(format!("{}", res.objective));
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Reads a trace CSV back into a [`FitTrace`] (only the fields present in
/// the file; timing and statistics are not part of the format).
pub fn read_trace_csv(path: &Path) -> Result<FitTrace> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .clone();
    let mut d = 0usize;
    let mut p = 0usize;
    for h in headers.iter() {
        if let Some(rest) = h.strip_prefix("a_") {
            let mut parts = rest.split('_');
            let i: usize = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad trace column '{h}'")))?;
            let j: usize = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad trace column '{h}'")))?;
            d = d.max(i + 1);
            p = p.max(j + 1);
        }
    }
    let mut trace = FitTrace::default();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let get = |idx: usize| -> Result<f64> {
            record
                .get(idx)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| {
                    Error::Parse(format!("{}: row {}: bad field {idx}", path.display(), r + 1))
                })
        };
        let iteration = get(0)? as usize;
        let delta = get(1)?;
        let sigma2 = get(2)?;
        let accept_mean = get(3)?;
        let mut a = DMatrix::zeros(d, p);
        for i in 0..d {
            for j in 0..p {
                a[(i, j)] = get(4 + i * p + j)?;
            }
        }
        trace.rows.push(crate::estimators::TraceRow {
            iteration,
            delta,
            sigma2,
            accept_mean,
            a,
        });
    }
    if trace.rows.is_empty() {
        return Err(Error::Parse(format!("{}: empty trace", path.display())));
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// PGM images
// ---------------------------------------------------------------------------

/// Writes an 8-bit binary PGM (P5) with per-image min-max scaling, plus a
/// sidecar `<path>.scale.txt` recording the scale so values can be
/// recovered.
pub fn write_pgm(path: &Path, values: &DVector<f64>, rows: usize, cols: usize) -> Result<()> {
    if values.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a {rows}x{cols} image",
            values.len()
        )));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if max > min { max - min } else { 1.0 };
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{cols} {rows}\n255\n")?;
    let bytes: Vec<u8> = values
        .iter()
        .map(|&v| (255.0 * (v - min) / span).round().clamp(0.0, 255.0) as u8)
        .collect();
    w.write_all(&bytes)?;
    drop(w);
    let sidecar = format!("{}.scale.txt", path.display());
    std::fs::write(sidecar, format!("min {min}\nmax {max}\n"))?;
    Ok(())
}
