//! Function libraries, the joint state/parameter model and the Duffing benchmark.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("non-finite value produced by {0}")]
    NonFiniteOutput(String),
    #[error("unknown basis function `{0}`")]
    UnknownBasis(String),
    #[error("duplicate basis function `{0}`")]
    DuplicateBasis(String),
    #[error("basis `{name}` refers to state {index}, but the system has {n_x} states")]
    StateOutOfRange { name: String, index: usize, n_x: usize },
    #[error("invalid timing: {0}")]
    InvalidTiming(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// One candidate correction term `ψ(x, u)`.
#[derive(Clone)]
pub enum Basis {
    Constant,
    /// Product `Π x_i^{e_i}` over the states (total degree ≤ 3).
    Monomial(Vec<u32>),
    Sin(usize),
    Cos(usize),
    Input,
    Custom(Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Basis::Constant => write!(f, "Constant"),
            Basis::Monomial(e) => write!(f, "Monomial({e:?})"),
            Basis::Sin(i) => write!(f, "Sin({i})"),
            Basis::Cos(i) => write!(f, "Cos({i})"),
            Basis::Input => write!(f, "Input"),
            Basis::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Basis {
    pub fn eval(&self, x: &[f64], u: f64) -> f64 {
        match self {
            Basis::Constant => 1.0,
            Basis::Monomial(exps) => exps
                .iter()
                .zip(x)
                .map(|(&e, &xi)| xi.powi(e as i32))
                .product(),
            Basis::Sin(i) => x[*i].sin(),
            Basis::Cos(i) => x[*i].cos(),
            Basis::Input => u,
            Basis::Custom(f) => f(x, u),
        }
    }

    /// Parses a catalog name: `1`, `u`, `sin(x2)`, `cos(x1)`, or a product of
    /// powers such as `x1^2*x2`. State indices are 1-based.
    pub fn parse(name: &str, n_x: usize) -> Result<Basis, ModelError> {
        let s: String = name.chars().filter(|c| !c.is_whitespace()).collect();
        let unknown = || ModelError::UnknownBasis(name.to_string());
        let state_index = |tok: &str| -> Result<usize, ModelError> {
            let idx: usize = tok.strip_prefix('x').ok_or_else(unknown)?.parse().map_err(|_| unknown())?;
            if idx == 0 || idx > n_x {
                return Err(ModelError::StateOutOfRange {
                    name: name.to_string(),
                    index: idx,
                    n_x,
                });
            }
            Ok(idx - 1)
        };
        match s.as_str() {
            "1" => return Ok(Basis::Constant),
            "u" => return Ok(Basis::Input),
            _ => {}
        }
        if let Some(inner) = s.strip_prefix("sin(").and_then(|r| r.strip_suffix(')')) {
            return Ok(Basis::Sin(state_index(inner)?));
        }
        if let Some(inner) = s.strip_prefix("cos(").and_then(|r| r.strip_suffix(')')) {
            return Ok(Basis::Cos(state_index(inner)?));
        }
        let mut exps = vec![0u32; n_x];
        for factor in s.split('*') {
            let (var, pow) = match factor.split_once('^') {
                Some((v, p)) => (v, p.parse::<u32>().map_err(|_| unknown())?),
                None => (factor, 1),
            };
            exps[state_index(var)?] += pow;
        }
        let degree: u32 = exps.iter().sum();
        if degree == 0 || degree > 3 {
            return Err(unknown());
        }
        Ok(Basis::Monomial(exps))
    }
}

/// Ordered, uniquely named set of basis functions `Ψ`.
#[derive(Debug, Clone, Default)]
pub struct FunctionLibrary {
    entries: Vec<(String, Basis)>,
}

impl FunctionLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, basis: Basis) -> Result<Self, ModelError> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(ModelError::DuplicateBasis(name));
        }
        self.entries.push((name, basis));
        Ok(self)
    }

    pub fn from_names<S: AsRef<str>>(names: &[S], n_x: usize) -> Result<Self, ModelError> {
        names.iter().try_fold(Self::new(), |lib, n| {
            let n = n.as_ref();
            lib.with(n.trim(), Basis::parse(n, n_x)?)
        })
    }

    /// `(1, x1, x2, x2², sin x2, x1², x1·x2, cos x1, u)`.
    pub fn duffing() -> Self {
        Self::from_names(&DUFFING_LIBRARY, 2).expect("static library")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn eval(&self, x: &[f64], u: f64) -> Result<DVector<f64>, ModelError> {
        let v = DVector::from_iterator(self.len(), self.entries.iter().map(|(_, b)| b.eval(x, u)));
        if let Some(i) = v.iter().position(|e| !e.is_finite()) {
            return Err(ModelError::NonFiniteOutput(format!("basis `{}`", self.entries[i].0)));
        }
        Ok(v)
    }
}

pub const DUFFING_LIBRARY: [&str; 9] = ["1", "x1", "x2", "x2^2", "sin(x2)", "x1^2", "x1*x2", "cos(x1)", "u"];

/// A continuous-time system `ẋ = f(x, u)`, `y = h(x, u)`.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn rhs(&self, x: &[f64], u: f64) -> DVector<f64>;
    fn observe(&self, x: &[f64], u: f64) -> DVector<f64>;
}

/// Forced Duffing oscillator `ẍ = −p₃ẋ − p₁x − p₂x³ + u`, measured `y = x₁`.
/// With `cubic = false` the `−p₂x₁³` term is dropped (the low-quality model).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Duffing {
    pub p: [f64; 3],
    pub cubic: bool,
}

pub const DUFFING_P: [f64; 3] = [-1.0, 3.0, 0.1];

impl Duffing {
    pub fn truth(p: [f64; 3]) -> Self {
        Self { p, cubic: true }
    }

    pub fn corrupted(p: [f64; 3]) -> Self {
        Self { p, cubic: false }
    }

    /// The term missing from the corrupted model, `g(x) = −p₂x₁³`.
    pub fn missing_term(&self, x: &[f64]) -> f64 {
        -self.p[1] * x[0].powi(3)
    }
}

impl Dynamics for Duffing {
    fn state_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn rhs(&self, x: &[f64], u: f64) -> DVector<f64> {
        let [p1, p2, p3] = self.p;
        let mut acc = -p3 * x[1] - p1 * x[0] + u;
        if self.cubic {
            acc -= p2 * x[0].powi(3);
        }
        DVector::from_vec(vec![x[1], acc])
    }

    fn observe(&self, x: &[f64], _u: f64) -> DVector<f64> {
        DVector::from_element(1, x[0])
    }
}

/// Linear time-invariant `ẋ = A x + b u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: nalgebra::DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: nalgebra::DMatrix<f64>,
}

impl Dynamics for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    fn rhs(&self, x: &[f64], u: f64) -> DVector<f64> {
        &self.a * DVector::from_column_slice(x) + &self.b * u
    }

    fn observe(&self, x: &[f64], _u: f64) -> DVector<f64> {
        &self.c * DVector::from_column_slice(x)
    }
}

/// Stacked state `(x, θ)`; `x` always comes first.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub x: DVector<f64>,
    pub theta: DVector<f64>,
}

impl JointState {
    pub fn new(x: DVector<f64>, theta: DVector<f64>) -> Self {
        Self { x, theta }
    }

    pub fn n_x(&self) -> usize {
        self.x.len()
    }

    pub fn n_theta(&self) -> usize {
        self.theta.len()
    }

    pub fn dim(&self) -> usize {
        self.x.len() + self.theta.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.x.iter().chain(self.theta.iter()).copied())
    }

    pub fn from_vector(v: &DVector<f64>, n_x: usize) -> Self {
        Self {
            x: v.rows(0, n_x).clone_owned(),
            theta: v.rows(n_x, v.len() - n_x).clone_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.theta.iter()).all(|v| v.is_finite())
    }
}

/// Known dynamics plus a library correction `θᵀΨ` injected into selected
/// state equations, discretized by explicit Euler.
#[derive(Clone)]
pub struct JointModel {
    pub system: Arc<dyn Dynamics>,
    pub library: FunctionLibrary,
    pub dt: f64,
    pub injection: Vec<usize>,
}

impl fmt::Debug for JointModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JointModel")
            .field("n_x", &self.system.state_dim())
            .field("library", &self.library.names())
            .field("dt", &self.dt)
            .field("injection", &self.injection)
            .finish()
    }
}

impl JointModel {
    pub fn new(
        system: Arc<dyn Dynamics>,
        library: FunctionLibrary,
        dt: f64,
        injection: Vec<usize>,
    ) -> Result<Self, ModelError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(ModelError::InvalidTiming(format!("dt must be positive, got {dt}")));
        }
        let n_x = system.state_dim();
        if let Some(&i) = injection.iter().find(|&&i| i >= n_x) {
            return Err(ModelError::DimensionMismatch { expected: n_x, got: i + 1 });
        }
        Ok(Self {
            system,
            library,
            dt,
            injection,
        })
    }

    /// Corrupted Duffing model with the correction added to the `x₂` equation.
    pub fn duffing(p: [f64; 3], library: FunctionLibrary, dt: f64) -> Result<Self, ModelError> {
        Self::new(Arc::new(Duffing::corrupted(p)), library, dt, vec![1])
    }

    pub fn n_x(&self) -> usize {
        self.system.state_dim()
    }

    pub fn n_theta(&self) -> usize {
        self.library.len()
    }

    pub fn dim(&self) -> usize {
        self.n_x() + self.n_theta()
    }

    pub fn output_dim(&self) -> usize {
        self.system.output_dim()
    }

    /// `θᵀΨ(x, u)`.
    pub fn correction(&self, x: &[f64], theta: &DVector<f64>, u: f64) -> Result<f64, ModelError> {
        if self.library.is_empty() {
            return Ok(0.0);
        }
        Ok(theta.dot(&self.library.eval(x, u)?))
    }

    /// One noise-free Euler step of the joint model; `θ` is carried over unchanged.
    pub fn step(&self, s: &JointState, u: f64) -> Result<JointState, ModelError> {
        let x = s.x.as_slice();
        let g = self.correction(x, &s.theta, u)?;
        let mut dx = self.system.rhs(x, u);
        for &i in &self.injection {
            dx[i] += g;
        }
        let next = &s.x + dx * self.dt;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteOutput("joint step".into()));
        }
        Ok(JointState::new(next, s.theta.clone()))
    }

    /// Same as [`JointModel::step`] on the stacked vector.
    pub fn step_vector(&self, v: &DVector<f64>, u: f64) -> Result<DVector<f64>, ModelError> {
        Ok(self.step(&JointState::from_vector(v, self.n_x()), u)?.to_vector())
    }

    pub fn observe(&self, x: &[f64], u: f64) -> DVector<f64> {
        self.system.observe(x, u)
    }
}

/// Per-coordinate noise standard deviations and the simulator seed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    pub q_x: Vec<f64>,
    pub q_theta: Vec<f64>,
    pub r: Vec<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn zero(n_x: usize, n_theta: usize, m: usize) -> Self {
        Self {
            q_x: vec![0.0; n_x],
            q_theta: vec![0.0; n_theta],
            r: vec![0.0; m],
            seed: 0,
        }
    }
}

/// `u(t) = amplitude·sin(omega·t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

impl Default for Sinusoid {
    fn default() -> Self {
        Self {
            amplitude: 2.0,
            omega: 1.0,
            phase: 0.0,
        }
    }
}

impl Sinusoid {
    pub fn at(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t + self.phase).sin()
    }
}

/// Sampled ground truth: `x[k]` at `t[k] = k·dt`, input `u[k]`, measurement `y[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<f64>,
    pub y: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Number of Euler steps covering `t_end`; `dt` must divide it.
pub fn step_count(dt: f64, t_end: f64) -> Result<usize, ModelError> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(ModelError::InvalidTiming(format!("dt={dt}, t_end={t_end}")));
    }
    let n = t_end / dt;
    let rounded = n.round();
    if (n - rounded).abs() > 1e-9 * n.max(1.0) || rounded < 1.0 {
        return Err(ModelError::InvalidTiming(format!("dt={dt} does not divide t_end={t_end}")));
    }
    Ok(rounded as usize)
}

/// Euler-integrates `system` from `x0`, adding process noise `q_x·√dt·N(0,1)`
/// per step and measurement noise `r·N(0,1)` per sample.
pub fn simulate_truth(
    system: &dyn Dynamics,
    x0: &[f64],
    input: impl Fn(f64) -> f64,
    dt: f64,
    t_end: f64,
    noise: &NoiseSpec,
) -> Result<Trajectory, ModelError> {
    let n_x = system.state_dim();
    let m = system.output_dim();
    if x0.len() != n_x {
        return Err(ModelError::DimensionMismatch { expected: n_x, got: x0.len() });
    }
    let steps = step_count(dt, t_end)?;
    let std_at = |v: &[f64], i: usize| v.get(i).or(v.last()).copied().unwrap_or(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let sqrt_dt = dt.sqrt();

    let mut traj = Trajectory {
        t: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
    };
    let mut x = DVector::from_column_slice(x0);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let u = input(t);
        let mut y = system.observe(x.as_slice(), u);
        for j in 0..m {
            let e: f64 = StandardNormal.sample(&mut rng);
            y[j] += std_at(&noise.r, j) * e;
        }
        traj.t.push(t);
        traj.x.push(x.clone());
        traj.u.push(u);
        traj.y.push(y);
        if k == steps {
            break;
        }
        let mut next = &x + system.rhs(x.as_slice(), u) * dt;
        for i in 0..n_x {
            let e: f64 = StandardNormal.sample(&mut rng);
            next[i] += std_at(&noise.q_x, i) * sqrt_dt * e;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteOutput(format!("truth simulation at t={t}")));
        }
        x = next;
    }
    Ok(traj)
}
