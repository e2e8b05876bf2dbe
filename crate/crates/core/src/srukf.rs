//! Square-root unscented Kalman filter and the two-pass joint estimator.
//!
//! A joint step runs two filters back to back:
//!
//! 1. the joint model `(f̃, h)` on the real measurement with `κ = 3 − ñ`;
//! 2. identity dynamics observed through the sparsity pseudo-measurement
//!    `h_pm(x̃) = max(Σ|θᵢ| − ε, 0)` asserted to be `0`, with
//!    `κ = 3σ⋆² − ñ` where `σ⋆²` is the expected horseshoe variance.
//!
//! The result of pass 1 is kept except for the `θ` entries of the mean and the
//! `θ–θ` block of the covariance, which come from pass 2.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{chol_with_clip, qr_compress, rank1_update, LinalgError, Sign, SqrtFactor};
use crate::models::{JointModel, JointState, ModelError};
use crate::prior::{self, HorseshoeSpec, PriorError};

/// Lower bound on `n + λ`.
pub const SCALE_FLOOR: f64 = 1e-8;
/// Floor on the diagonal of noise square-root factors.
pub const NOISE_FLOOR: f64 = 1e-12;
/// Eigenvalue clip, relative to the trace, used by every PD recovery path.
pub const CLIP_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("unscented scale n+λ = {0:e} is below the floor")]
    ScaleFloorViolation(f64),
    #[error("invalid filter parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFiniteOutput(String),
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("merged covariance could not be factorized: {0}")]
    MergeNotPd(LinalgError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prior(#[from] PriorError),
}

/// Scaled unscented transform parameters for an `n`-dimensional state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub n: usize,
}

impl UtParams {
    pub fn new(alpha: f64, beta: f64, kappa: f64, n: usize) -> Self {
        Self { alpha, beta, kappa, n }
    }

    /// `λ = α²(n + κ) − n`.
    pub fn lambda(&self) -> f64 {
        self.alpha * self.alpha * (self.n as f64 + self.kappa) - self.n as f64
    }

    /// `n + λ`, the squared sigma-point spread.
    pub fn scale(&self) -> f64 {
        self.alpha * self.alpha * (self.n as f64 + self.kappa)
    }

    /// Raises `κ` just enough that `n + λ` reaches `floor`. Returns whether it moved.
    pub fn clamp_scale(&mut self, floor: f64) -> bool {
        if self.scale() >= floor {
            return false;
        }
        self.kappa = floor / (self.alpha * self.alpha) - self.n as f64;
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtWeights {
    pub mean: DVector<f64>,
    pub cov: DVector<f64>,
    pub scale: f64,
}

pub fn ut_weights(p: &UtParams) -> Result<UtWeights, FilterError> {
    if !(p.alpha > 0.0 && p.alpha <= 1.0) {
        return Err(FilterError::InvalidParameter(format!("alpha = {}", p.alpha)));
    }
    let scale = p.scale();
    if !(scale >= SCALE_FLOOR) {
        return Err(FilterError::ScaleFloorViolation(scale));
    }
    let count = 2 * p.n + 1;
    let lambda = p.lambda();
    let w = 1.0 / (2.0 * scale);
    let mut mean = DVector::from_element(count, w);
    let mut cov = DVector::from_element(count, w);
    mean[0] = lambda / scale;
    cov[0] = mean[0] + 1.0 - p.alpha * p.alpha + p.beta;
    Ok(UtWeights { mean, cov, scale })
}

/// Columns are the `2n + 1` sigma points `x̄, x̄ ± √(n+λ)·Sᵢ`.
pub fn sigma_points(mean: &DVector<f64>, s: &SqrtFactor, p: &UtParams) -> Result<DMatrix<f64>, FilterError> {
    let n = mean.len();
    if s.dim() != n || p.n != n {
        return Err(FilterError::DimensionMismatch { expected: n, got: s.dim() });
    }
    let scale = p.scale();
    if !(scale >= SCALE_FLOOR) {
        return Err(FilterError::ScaleFloorViolation(scale));
    }
    let spread = scale.sqrt();
    let mut pts = DMatrix::zeros(n, 2 * n + 1);
    pts.set_column(0, mean);
    for i in 0..n {
        let d = s.matrix().column(i) * spread;
        pts.set_column(i + 1, &(mean + &d));
        pts.set_column(i + 1 + n, &(mean - &d));
    }
    Ok(pts)
}

/// Counters for recovery paths taken while filtering.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub downdate_recoveries: usize,
    pub merge_clips: usize,
    pub scale_clamps: usize,
}

/// Mean and square-root covariance of the filtered state.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub mean: DVector<f64>,
    pub sqrt_cov: SqrtFactor,
    pub n_x: usize,
    pub step: usize,
}

impl FilterState {
    pub fn new(mean: DVector<f64>, sqrt_cov: SqrtFactor, n_x: usize) -> Result<Self, FilterError> {
        if sqrt_cov.dim() != mean.len() {
            return Err(FilterError::DimensionMismatch {
                expected: mean.len(),
                got: sqrt_cov.dim(),
            });
        }
        Ok(Self {
            mean,
            sqrt_cov,
            n_x,
            step: 0,
        })
    }

    pub fn joint(&self) -> JointState {
        JointState::from_vector(&self.mean, self.n_x)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.sqrt_cov.covariance()
    }
}

/// Floors the diagonal of a noise factor so it stays a valid factor.
pub fn floor_noise(s: &SqrtFactor) -> SqrtFactor {
    let mut m = s.matrix().clone();
    for i in 0..m.nrows() {
        m[(i, i)] = m[(i, i)].max(NOISE_FLOOR);
    }
    SqrtFactor::from_lower(m)
}

/// Downdate, falling back to an eigenvalue-clipped refactorization of
/// `S·Sᵀ − v·vᵀ` when the hyperbolic rotation breaks down.
fn downdate_or_recover(
    s: &SqrtFactor,
    v: &DVector<f64>,
    diag: &mut Diagnostics,
) -> Result<SqrtFactor, FilterError> {
    match rank1_update(s, v, Sign::Minus) {
        Ok(out) => Ok(out),
        Err(LinalgError::DowndateBreakdown(_)) => {
            diag.downdate_recoveries += 1;
            let p = s.covariance() - v * v.transpose();
            Ok(chol_with_clip(&p, CLIP_FLOOR)?.0)
        }
        Err(e) => Err(e.into()),
    }
}

/// Folds the zeroth sigma point's deviation into a factor with weight `w0`.
fn apply_center_weight(
    s: SqrtFactor,
    dev0: &DVector<f64>,
    w0: f64,
    diag: &mut Diagnostics,
) -> Result<SqrtFactor, FilterError> {
    let v = dev0 * w0.abs().sqrt();
    if w0 >= 0.0 {
        Ok(rank1_update(&s, &v, Sign::Plus)?)
    } else {
        downdate_or_recover(&s, &v, diag)
    }
}

/// Weighted mean and square-root covariance of transformed sigma points,
/// with an additive noise factor.
fn unscented_moments(
    pts: &DMatrix<f64>,
    w: &UtWeights,
    noise: &SqrtFactor,
    diag: &mut Diagnostics,
) -> Result<(DVector<f64>, SqrtFactor, DMatrix<f64>), FilterError> {
    let (d, count) = pts.shape();
    if noise.dim() != d {
        return Err(FilterError::DimensionMismatch { expected: d, got: noise.dim() });
    }
    let mean = pts * &w.mean;
    let devs = pts - &mean * DMatrix::from_element(1, count, 1.0);
    let wi = w.cov[1].sqrt();
    let mut block = DMatrix::zeros(count - 1 + d, d);
    for i in 1..count {
        block.set_row(i - 1, &(devs.column(i).transpose() * wi));
    }
    block.view_mut((count - 1, 0), (d, d)).copy_from(&noise.matrix().transpose());
    let s = qr_compress(&block)?;
    let s = apply_center_weight(s, &devs.column(0).clone_owned(), w.cov[0], diag)?;
    Ok((mean, s, devs))
}

fn check_finite(v: &DVector<f64>, what: &str) -> Result<(), FilterError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(FilterError::NonFiniteOutput(what.to_string()))
    }
}

/// Square-root UT time update through `dynamics` with additive noise `q_sqrt`.
pub fn predict<F>(
    mean: &DVector<f64>,
    s: &SqrtFactor,
    dynamics: F,
    q_sqrt: &SqrtFactor,
    p: &UtParams,
    diag: &mut Diagnostics,
) -> Result<(DVector<f64>, SqrtFactor), FilterError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, FilterError>,
{
    let w = ut_weights(p)?;
    let pts = sigma_points(mean, s, p)?;
    let mut moved = DMatrix::zeros(mean.len(), pts.ncols());
    for (i, col) in pts.column_iter().enumerate() {
        let next = dynamics(&col.clone_owned())?;
        if next.len() != mean.len() {
            return Err(FilterError::DimensionMismatch { expected: mean.len(), got: next.len() });
        }
        moved.set_column(i, &next);
    }
    let (m, s, _) = unscented_moments(&moved, &w, &floor_noise(q_sqrt), diag)?;
    check_finite(&m, "predicted mean")?;
    Ok((m, s))
}

/// Square-root UT measurement update with measurement `y`.
pub fn update<H>(
    mean: &DVector<f64>,
    s: &SqrtFactor,
    observe: H,
    r_sqrt: &SqrtFactor,
    y: &DVector<f64>,
    p: &UtParams,
    diag: &mut Diagnostics,
) -> Result<(DVector<f64>, SqrtFactor), FilterError>
where
    H: Fn(&DVector<f64>) -> Result<DVector<f64>, FilterError>,
{
    let w = ut_weights(p)?;
    let pts = sigma_points(mean, s, p)?;
    let m = y.len();
    let mut outputs = DMatrix::zeros(m, pts.ncols());
    for (i, col) in pts.column_iter().enumerate() {
        let z = observe(&col.clone_owned())?;
        if z.len() != m {
            return Err(FilterError::DimensionMismatch { expected: m, got: z.len() });
        }
        outputs.set_column(i, &z);
    }
    let (y_hat, s_y, y_devs) = unscented_moments(&outputs, &w, &floor_noise(r_sqrt), diag)?;

    let x_devs = &pts - mean * DMatrix::from_element(1, pts.ncols(), 1.0);
    let mut p_xy = DMatrix::zeros(mean.len(), m);
    for i in 0..pts.ncols() {
        p_xy += w.cov[i] * x_devs.column(i) * y_devs.column(i).transpose();
    }

    // K = P_xy (S_y S_yᵀ)⁻¹ by two triangular solves on Kᵀ.
    let a = s_y
        .matrix()
        .solve_lower_triangular(&p_xy.transpose())
        .ok_or(FilterError::SingularInnovation)?;
    let gain = s_y
        .matrix()
        .transpose()
        .solve_upper_triangular(&a)
        .ok_or(FilterError::SingularInnovation)?
        .transpose();

    let new_mean = mean + &gain * (y - &y_hat);
    check_finite(&new_mean, "updated mean")?;
    let u = &gain * s_y.matrix();
    let mut s_post = s.clone();
    for col in u.column_iter() {
        s_post = downdate_or_recover(&s_post, &col.clone_owned(), diag)?;
    }
    if !s_post.is_finite() {
        return Err(FilterError::NonFiniteOutput("posterior factor".into()));
    }
    Ok((new_mean, s_post))
}

/// One predict/update cycle.
#[allow(clippy::too_many_arguments)]
pub fn srukf_step<F, H>(
    fs: &FilterState,
    dynamics: F,
    observe: H,
    q_sqrt: &SqrtFactor,
    r_sqrt: &SqrtFactor,
    y: &DVector<f64>,
    p: &UtParams,
    diag: &mut Diagnostics,
) -> Result<FilterState, FilterError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, FilterError>,
    H: Fn(&DVector<f64>) -> Result<DVector<f64>, FilterError>,
{
    let (m, s) = predict(&fs.mean, &fs.sqrt_cov, dynamics, q_sqrt, p, diag)?;
    let (m, s) = update(&m, &s, observe, r_sqrt, y, p, diag)?;
    Ok(FilterState {
        mean: m,
        sqrt_cov: s,
        n_x: fs.n_x,
        step: fs.step + 1,
    })
}

/// Sparsity pseudo-measurement `max(Σ|θᵢ| − ε, 0)`, observed as `0` with
/// variance `r_pm`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoMeasurement {
    pub n_x: usize,
    pub epsilon: f64,
    pub r_pm: f64,
}

impl PseudoMeasurement {
    pub fn new(n_x: usize, epsilon: f64, r_pm: f64) -> Result<Self, FilterError> {
        if !(epsilon > 0.0) {
            return Err(FilterError::InvalidParameter(format!("epsilon = {epsilon}")));
        }
        if !(r_pm > 0.0) {
            return Err(FilterError::InvalidParameter(format!("r_pm = {r_pm}")));
        }
        Ok(Self { n_x, epsilon, r_pm })
    }

    /// Evaluates on a stacked joint vector; the `x` block is ignored.
    pub fn eval(&self, v: &DVector<f64>) -> f64 {
        let l1: f64 = v.iter().skip(self.n_x).map(|t| t.abs()).sum();
        (l1 - self.epsilon).max(0.0)
    }

    /// `blkdiag(0, I)` of size `dim`.
    pub fn selector(&self, dim: usize) -> DMatrix<f64> {
        DMatrix::from_fn(dim, dim, |i, j| if i == j && i >= self.n_x { 1.0 } else { 0.0 })
    }
}

pub fn h_pm(pm: &PseudoMeasurement, s: &JointState) -> f64 {
    (s.theta.iter().map(|t| t.abs()).sum::<f64>() - pm.epsilon).max(0.0)
}

/// Switches and scalars of the two-pass joint filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointFilterOptions {
    pub alpha: f64,
    pub beta: f64,
    /// Run the sparsity pass at all.
    pub pass2: bool,
    /// Use `α = 1, β = 0` for the sparsity pass.
    pub unscaled_pass2: bool,
    /// Add `Q̃` in the sparsity pass's identity time update.
    pub pass2_process_noise: bool,
    /// Redraw `σ⋆²` every step instead of once at construction.
    pub sigma_star_per_step: bool,
    pub sigma_star_samples: usize,
    pub sigma_star_seed: u64,
}

impl Default for JointFilterOptions {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            pass2: true,
            unscaled_pass2: false,
            pass2_process_noise: true,
            sigma_star_per_step: false,
            sigma_star_samples: 1_000_000,
            sigma_star_seed: 0,
        }
    }
}

/// Sparsity-pass UT parameters, `κ = 3σ⋆² − ñ`, with the scale floor applied.
pub fn pass2_params(opts: &JointFilterOptions, n: usize, sigma_star: f64) -> (UtParams, bool) {
    let (alpha, beta) = if opts.unscaled_pass2 { (1.0, 0.0) } else { (opts.alpha, opts.beta) };
    let mut p = UtParams::new(alpha, beta, 3.0 * sigma_star - n as f64, n);
    let clamped = p.clamp_scale(SCALE_FLOOR);
    (p, clamped)
}

/// Replaces the `θ` part of `first` by the one of `second`: mean entries and
/// the `θ–θ` covariance block. Cross blocks stay from `first`.
pub fn merge(first: &FilterState, second: &FilterState, diag: &mut Diagnostics) -> Result<FilterState, FilterError> {
    let n = first.mean.len();
    let n_x = first.n_x;
    let n_t = n - n_x;
    let mut mean = first.mean.clone();
    mean.rows_mut(n_x, n_t).copy_from(&second.mean.rows(n_x, n_t));
    let mut p = first.covariance();
    let p2 = second.covariance();
    p.view_mut((n_x, n_x), (n_t, n_t)).copy_from(&p2.view((n_x, n_x), (n_t, n_t)));
    let (s, clipped) = chol_with_clip(&p, CLIP_FLOOR).map_err(FilterError::MergeNotPd)?;
    if clipped {
        diag.merge_clips += 1;
    }
    Ok(FilterState {
        mean,
        sqrt_cov: s,
        n_x,
        step: first.step,
    })
}

/// Output of one joint step, including the intermediate pass results.
#[derive(Debug, Clone, PartialEq)]
pub struct JointStepOutput {
    pub state: FilterState,
    pub pass1: FilterState,
    pub pass2: Option<FilterState>,
}

/// Two-pass joint step: joint model on `y`, sparsity pass, merge.
///
/// `u_prev` drives the time update from the previous sample; `u` is the input
/// at the measurement time.
#[allow(clippy::too_many_arguments)]
pub fn joint_filter_step(
    fs: &FilterState,
    model: &JointModel,
    pm: &PseudoMeasurement,
    q_sqrt: &SqrtFactor,
    r_sqrt: &SqrtFactor,
    u_prev: f64,
    u: f64,
    y: &DVector<f64>,
    opts: &JointFilterOptions,
    sigma_star: f64,
    diag: &mut Diagnostics,
) -> Result<JointStepOutput, FilterError> {
    let n = model.dim();
    if fs.mean.len() != n {
        return Err(FilterError::DimensionMismatch { expected: n, got: fs.mean.len() });
    }
    let n_x = model.n_x();
    let p1 = UtParams::new(opts.alpha, opts.beta, 3.0 - n as f64, n);
    let pass1 = srukf_step(
        fs,
        |v| Ok(model.step_vector(v, u_prev)?),
        |v| Ok(model.observe(&v.as_slice()[..n_x], u)),
        q_sqrt,
        r_sqrt,
        y,
        &p1,
        diag,
    )?;
    if !opts.pass2 || model.n_theta() == 0 {
        return Ok(JointStepOutput {
            state: pass1.clone(),
            pass1,
            pass2: None,
        });
    }
    if !(sigma_star > 0.0) {
        return Err(FilterError::InvalidParameter(format!("sigma_star = {sigma_star}")));
    }
    let (p2, clamped) = pass2_params(opts, n, sigma_star);
    if clamped {
        diag.scale_clamps += 1;
    }
    let q2 = if opts.pass2_process_noise {
        q_sqrt.clone()
    } else {
        SqrtFactor::from_lower(DMatrix::zeros(n, n))
    };
    let r_pm = SqrtFactor::from_std_devs(&[pm.r_pm.sqrt()]);
    let zero = DVector::zeros(1);
    let pass2 = srukf_step(
        &pass1,
        |v| Ok(v.clone()),
        |v| Ok(DVector::from_element(1, pm.eval(v))),
        &q2,
        &r_pm,
        &zero,
        &p2,
        diag,
    )?;
    let state = merge(&pass1, &pass2, diag)?;
    Ok(JointStepOutput {
        state,
        pass1,
        pass2: Some(pass2),
    })
}

/// Stateful wrapper: model, noise, options, `σ⋆²` and the current estimate.
#[derive(Debug, Clone)]
pub struct JointFilter {
    pub model: JointModel,
    pub pm: PseudoMeasurement,
    pub q_sqrt: SqrtFactor,
    pub r_sqrt: SqrtFactor,
    pub opts: JointFilterOptions,
    pub horseshoe: HorseshoeSpec,
    pub sigma_star: f64,
    pub state: FilterState,
    pub diagnostics: Diagnostics,
}

impl JointFilter {
    /// Builds the filter; `σ⋆²` is estimated once here.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: JointModel,
        pm: PseudoMeasurement,
        q_sqrt: SqrtFactor,
        r_sqrt: SqrtFactor,
        opts: JointFilterOptions,
        horseshoe: HorseshoeSpec,
        initial: FilterState,
    ) -> Result<Self, FilterError> {
        let sigma_star = if model.n_theta() > 0 {
            prior::sigma_star(&horseshoe, opts.sigma_star_samples, opts.sigma_star_seed)?.mean
        } else {
            0.0
        };
        Self::with_sigma_star(model, pm, q_sqrt, r_sqrt, opts, horseshoe, sigma_star, initial)
    }

    /// Same as [`JointFilter::new`] with a precomputed `σ⋆²`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_sigma_star(
        model: JointModel,
        pm: PseudoMeasurement,
        q_sqrt: SqrtFactor,
        r_sqrt: SqrtFactor,
        opts: JointFilterOptions,
        horseshoe: HorseshoeSpec,
        sigma_star: f64,
        initial: FilterState,
    ) -> Result<Self, FilterError> {
        let n = model.dim();
        if q_sqrt.dim() != n || initial.mean.len() != n {
            return Err(FilterError::DimensionMismatch { expected: n, got: q_sqrt.dim() });
        }
        if r_sqrt.dim() != model.output_dim() {
            return Err(FilterError::DimensionMismatch {
                expected: model.output_dim(),
                got: r_sqrt.dim(),
            });
        }
        Ok(Self {
            model,
            pm,
            q_sqrt,
            r_sqrt,
            opts,
            horseshoe,
            sigma_star,
            state: initial,
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn step(&mut self, u_prev: f64, u: f64, y: &DVector<f64>) -> Result<JointStepOutput, FilterError> {
        if self.opts.sigma_star_per_step && self.model.n_theta() > 0 {
            let seed = self.opts.sigma_star_seed.wrapping_add(self.state.step as u64 + 1);
            self.sigma_star = prior::sigma_star(&self.horseshoe, self.opts.sigma_star_samples, seed)?.mean;
        }
        let out = joint_filter_step(
            &self.state,
            &self.model,
            &self.pm,
            &self.q_sqrt,
            &self.r_sqrt,
            u_prev,
            u,
            y,
            &self.opts,
            self.sigma_star,
            &mut self.diagnostics,
        )?;
        self.state = out.state.clone();
        Ok(out)
    }
}
