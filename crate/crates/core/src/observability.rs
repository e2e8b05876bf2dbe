//! Local observability of the joint system `(f̃, (h, h_pm))`.
//!
//! The observability map stacks the outputs along `ñ` iterates of the Euler
//! step from a probe point; the system is locally observable there when the
//! Jacobian of that map has full column rank `ñ`. The Jacobian is taken by
//! central differences.
//!
//! Iterates are taken with a probe step that may differ from the filter step:
//! at `Δt = 0.01` the stacked rows are so close to collinear that the smaller
//! singular values drop to the level of finite-difference rounding.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{numerical_rank, singular_values};
use crate::models::{JointModel, JointState, ModelError};
use crate::srukf::PseudoMeasurement;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObservabilityError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("probe is within {distance:e} of a kink of h_pm ({what})")]
    ProbeAtKink { what: String, distance: f64 },
    #[error("probe has dimension {got}, model needs {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservabilityOptions {
    /// Relative singular-value threshold for the rank decision.
    pub tol: f64,
    /// Step used for the probe iterates; `None` keeps the model's own `dt`.
    pub probe_dt: Option<f64>,
    /// Reject probes near the kinks of `h_pm` instead of warning.
    pub strict: bool,
}

impl Default for ObservabilityOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            probe_dt: Some(0.2),
            strict: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub rank: usize,
    pub required: usize,
    pub singular_values: Vec<f64>,
    pub observable: bool,
    pub probe: JointState,
    pub warnings: Vec<String>,
}

/// Stacked `(h, h_pm)` along `ñ` iterates of the joint step, starting with
/// the probe itself. Without a pseudo-measurement only `h` is stacked.
pub fn observability_map(
    model: &JointModel,
    pm: Option<&PseudoMeasurement>,
    s: &JointState,
    u: f64,
) -> Result<DVector<f64>, ModelError> {
    let n = model.dim();
    let m = model.output_dim();
    let per_block = m + usize::from(pm.is_some());
    let mut out = Vec::with_capacity(n * per_block);
    let mut z = s.clone();
    for l in 0..n {
        out.extend(model.observe(z.x.as_slice(), u).iter());
        if let Some(pm) = pm {
            out.push(crate::srukf::h_pm(pm, &z));
        }
        if l + 1 < n {
            z = model.step(&z, u)?;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteOutput("observability map".into()));
    }
    Ok(DVector::from_vec(out))
}

fn fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

fn kink_warnings(pm: &PseudoMeasurement, probe: &JointState) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (i, &t) in probe.theta.iter().enumerate() {
        let margin = 10.0 * fd_step(t);
        if t.abs() <= margin {
            out.push((format!("theta[{}] = {t:e} is near 0", i + 1), t.abs()));
        }
    }
    let l1: f64 = probe.theta.iter().map(|t| t.abs()).sum();
    let max_step = probe.theta.iter().map(|&t| fd_step(t)).fold(0.0, f64::max);
    let gap = (l1 - pm.epsilon).abs();
    if !probe.theta.is_empty() && gap <= 10.0 * max_step * probe.theta.len() as f64 {
        out.push((format!("sum |theta| = {l1:e} is near epsilon"), gap));
    }
    out
}

/// Central-difference Jacobian of the observability map at `probe`.
pub fn observability_jacobian(
    model: &JointModel,
    pm: Option<&PseudoMeasurement>,
    probe: &JointState,
    u: f64,
) -> Result<DMatrix<f64>, ModelError> {
    let n = model.dim();
    let base = probe.to_vector();
    let rows = n * (model.output_dim() + usize::from(pm.is_some()));
    let mut jac = DMatrix::zeros(rows, n);
    for j in 0..n {
        let h = fd_step(base[j]);
        let mut plus = base.clone();
        plus[j] += h;
        let mut minus = base.clone();
        minus[j] -= h;
        let fp = observability_map(model, pm, &JointState::from_vector(&plus, model.n_x()), u)?;
        let fm = observability_map(model, pm, &JointState::from_vector(&minus, model.n_x()), u)?;
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac)
}

pub fn check_observability(
    model: &JointModel,
    pm: Option<&PseudoMeasurement>,
    probe: &JointState,
    u: f64,
    opts: &ObservabilityOptions,
) -> Result<ObservabilityReport, ObservabilityError> {
    if !(opts.tol > 0.0) {
        return Err(ObservabilityError::InvalidTolerance(opts.tol));
    }
    if probe.dim() != model.dim() || probe.n_x() != model.n_x() {
        return Err(ObservabilityError::DimensionMismatch {
            expected: model.dim(),
            got: probe.dim(),
        });
    }
    let mut warnings = Vec::new();
    if let Some(pm) = pm {
        for (what, distance) in kink_warnings(pm, probe) {
            if opts.strict {
                return Err(ObservabilityError::ProbeAtKink { what, distance });
            }
            warnings.push(what);
        }
    }
    let probe_model;
    let model = match opts.probe_dt {
        Some(dt) if dt != model.dt => {
            probe_model = JointModel::new(model.system.clone(), model.library.clone(), dt, model.injection.clone())?;
            &probe_model
        }
        _ => model,
    };
    let jac = observability_jacobian(model, pm, probe, u)?;
    let rank = numerical_rank(&jac, opts.tol);
    let required = model.dim();
    Ok(ObservabilityReport {
        rank,
        required,
        singular_values: singular_values(&jac),
        observable: rank == required,
        probe: probe.clone(),
        warnings,
    })
}
