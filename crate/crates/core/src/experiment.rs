//! Simulation plus observers on a shared measurement stream.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, EstimateLog};
use crate::config::{ConfigError, ExperimentConfig, Observer};
use crate::linalg::SqrtFactor;
use crate::models::{Duffing, Dynamics, FunctionLibrary, JointModel, ModelError, NoiseSpec, Trajectory};
use crate::prior::{self, PriorError};
use crate::srukf::{Diagnostics, FilterError, FilterState, JointFilter, JointFilterOptions, PseudoMeasurement};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("observer `{observer}` failed at step {step}: {source}")]
    Filter {
        observer: &'static str,
        step: usize,
        source: FilterError,
    },
}

/// Noise-corrupted Duffing trajectory for `cfg`.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Trajectory, ExperimentError> {
    let truth = Duffing::truth(cfg.p);
    let noise = NoiseSpec {
        q_x: cfg.noise.q_x.clone(),
        q_theta: cfg.q_theta()?,
        r: cfg.noise.r.clone(),
        seed: cfg.seed,
    };
    let input = cfg.input;
    Ok(crate::models::simulate_truth(
        &truth,
        &cfg.x0_true,
        |t| input.at(t),
        cfg.dt,
        cfg.t_end,
        &noise,
    )?)
}

/// One observer's pass over a trajectory.
#[derive(Debug, Clone)]
pub struct ObserverRun {
    pub observer: Observer,
    pub log: EstimateLog,
    pub library: Vec<String>,
    pub sigma_star: f64,
    pub diagnostics: Diagnostics,
    pub wall_clock: std::time::Duration,
}

impl ObserverRun {
    pub fn cumulative_error(&self) -> Vec<f64> {
        analysis::cumulative_error(&self.log)
    }

    pub fn final_error(&self) -> f64 {
        self.cumulative_error().last().copied().unwrap_or(0.0)
    }
}

fn build_filter(cfg: &ExperimentConfig, observer: Observer) -> Result<JointFilter, ExperimentError> {
    let (system, library, opts_pass2): (Arc<dyn Dynamics>, FunctionLibrary, bool) = match observer {
        Observer::Classical => (Arc::new(Duffing::corrupted(cfg.p)), FunctionLibrary::new(), false),
        Observer::TrueModel => (Arc::new(Duffing::truth(cfg.p)), FunctionLibrary::new(), false),
        Observer::Joint => (Arc::new(Duffing::corrupted(cfg.p)), cfg.library()?, true),
        Observer::JointNoPass2 => (Arc::new(Duffing::corrupted(cfg.p)), cfg.library()?, false),
    };
    let n_theta = library.len();
    let model = JointModel::new(system, library, cfg.dt, vec![1])?;
    let n_x = model.n_x();

    let opts = JointFilterOptions {
        alpha: cfg.ut.alpha,
        beta: cfg.ut.beta,
        pass2: opts_pass2,
        unscaled_pass2: cfg.filter.unscaled_pass2,
        pass2_process_noise: cfg.filter.pass2_process_noise,
        sigma_star_per_step: cfg.filter.sigma_star_per_step,
        sigma_star_samples: cfg.horseshoe.n_samples,
        sigma_star_seed: cfg.horseshoe.seed,
    };
    let spec = cfg.horseshoe.spec();
    let sigma_star = if n_theta > 0 {
        prior::sigma_star(&spec, cfg.horseshoe.n_samples, cfg.horseshoe.seed)?.mean
    } else {
        0.0
    };

    let q_x = ExperimentConfig::broadcast("noise.q_x", &cfg.noise.q_x, n_x)?;
    let q_theta = if n_theta > 0 { cfg.q_theta()? } else { Vec::new() };
    let r = ExperimentConfig::broadcast("noise.r", &cfg.noise.r, 1)?;
    let q_std: Vec<f64> = q_x.iter().chain(q_theta.iter()).copied().collect();

    let theta_std = |i: usize| match cfg.filter.p0_theta_std {
        Some(s) => s * spec.xi_at(i),
        None => sigma_star.sqrt() * spec.xi_at(i),
    };
    let p0: Vec<f64> = (0..n_x)
        .map(|_| cfg.filter.p0_x_std)
        .chain((0..n_theta).map(theta_std))
        .collect();
    let mean = DVector::from_iterator(
        n_x + n_theta,
        cfg.x0_est.iter().copied().chain(std::iter::repeat(cfg.theta0).take(n_theta)),
    );
    let fail = |source: FilterError| ExperimentError::Filter {
        observer: observer.name(),
        step: 0,
        source,
    };
    let initial = FilterState::new(mean, SqrtFactor::from_std_devs(&p0), n_x).map_err(fail)?;
    let pm = PseudoMeasurement::new(n_x, cfg.pm.epsilon, cfg.pm.r_pm).map_err(fail)?;
    let filter = JointFilter::with_sigma_star(
        model,
        pm,
        SqrtFactor::from_std_devs(&q_std),
        SqrtFactor::from_std_devs(&r),
        opts,
        spec,
        sigma_star,
        initial,
    )
    .map_err(fail)?;
    Ok(filter)
}

/// `Instant` panics on wasm32-unknown-unknown, so timings read zero there.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        return Self(std::time::Instant::now());
        #[cfg(target_arch = "wasm32")]
        Self()
    }

    fn elapsed(&self) -> std::time::Duration {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed();
        #[cfg(target_arch = "wasm32")]
        std::time::Duration::ZERO
    }
}

/// Runs `observer` over `truth`'s measurements.
pub fn run_observer(
    cfg: &ExperimentConfig,
    observer: Observer,
    truth: &Trajectory,
) -> Result<ObserverRun, ExperimentError> {
    let started = Stopwatch::start();
    let mut filter = build_filter(cfg, observer)?;
    let n_theta = filter.model.n_theta();
    let n = truth.len();
    let mut x_est = Vec::with_capacity(n);
    let mut theta = DMatrix::zeros(n_theta, n);
    let record = |fs: &FilterState, k: usize, x_est: &mut Vec<DVector<f64>>, theta: &mut DMatrix<f64>| {
        let j = fs.joint();
        x_est.push(j.x);
        if n_theta > 0 {
            theta.set_column(k, &j.theta);
        }
    };
    record(&filter.state, 0, &mut x_est, &mut theta);
    for k in 1..n {
        filter
            .step(truth.u[k - 1], truth.u[k], &truth.y[k])
            .map_err(|source| ExperimentError::Filter {
                observer: observer.name(),
                step: k,
                source,
            })?;
        record(&filter.state, k, &mut x_est, &mut theta);
    }
    let log = EstimateLog {
        times: truth.t.clone(),
        u: truth.u.clone(),
        x_true: truth.x.clone(),
        x_est,
        theta,
        y: truth.y.clone(),
    };
    Ok(ObserverRun {
        observer,
        library: filter.model.library.names().iter().map(|s| s.to_string()).collect(),
        sigma_star: filter.sigma_star,
        diagnostics: filter.diagnostics,
        wall_clock: started.elapsed(),
        log,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub truth: Trajectory,
    pub runs: Vec<ObserverRun>,
}

/// Simulates once and runs every observer on the same measurements. Runs are
/// returned in the order requested.
pub fn run_experiment(cfg: &ExperimentConfig, observers: &[Observer]) -> Result<ExperimentResult, ExperimentError> {
    cfg.validate()?;
    let truth = simulate(cfg)?;
    #[cfg(feature = "parallel")]
    let runs: Result<Vec<_>, _> = {
        use rayon::prelude::*;
        observers.par_iter().map(|&o| run_observer(cfg, o, &truth)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Result<Vec<_>, _> = observers.iter().map(|&o| run_observer(cfg, o, &truth)).collect();
    Ok(ExperimentResult { truth, runs: runs? })
}

/// Summary row of an observer comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub observer: Observer,
    pub final_cumulative_error: f64,
    pub rmse: Vec<f64>,
    /// Coefficients whose post-burn-in mean magnitude exceeds 10% of the largest.
    pub active_terms: Option<usize>,
    pub wall_clock_s: f64,
}

/// Fraction of the largest mean coefficient magnitude above which a term counts as active.
pub const ACTIVE_FRACTION: f64 = 0.1;

pub fn comparison_row(cfg: &ExperimentConfig, run: &ObserverRun) -> ComparisonRow {
    let active = (run.log.n_theta() > 0)
        .then(|| analysis::active_count(&analysis::mean_abs_theta(&run.log, cfg.analysis.burn_in), ACTIVE_FRACTION));
    ComparisonRow {
        observer: run.observer,
        final_cumulative_error: run.final_error(),
        rmse: analysis::state_rmse(&run.log, cfg.analysis.burn_in),
        active_terms: active,
        wall_clock_s: run.wall_clock.as_secs_f64(),
    }
}

pub fn compare_observers(
    cfg: &ExperimentConfig,
    observers: &[Observer],
) -> Result<(ExperimentResult, Vec<ComparisonRow>), ExperimentError> {
    if observers.len() < 2 {
        return Err(ConfigError::Invalid {
            field: "observer".into(),
            message: "comparison needs at least two observers".into(),
        }
        .into());
    }
    let result = run_experiment(cfg, observers)?;
    let rows = result.runs.iter().map(|r| comparison_row(cfg, r)).collect();
    Ok((result, rows))
}

/// `g(x) = −p₂x₁³` along the true trajectory.
pub fn true_missing_term(cfg: &ExperimentConfig, x_true: &[DVector<f64>]) -> Vec<f64> {
    let d = Duffing::truth(cfg.p);
    x_true.iter().map(|x| d.missing_term(x.as_slice())).collect()
}
