//! Browser bindings. Every export takes plain values or a TOML configuration
//! string and returns a JSON document for the page in `www/`.

use joint_ukf::analysis::{active_count, mean_abs_theta, pca_dominance};
use joint_ukf::experiment::{run_experiment, ACTIVE_FRACTION};
use joint_ukf::nalgebra::DVector;
use joint_ukf::observability::{check_observability, ObservabilityOptions};
use joint_ukf::prior::{self, VarianceConvention};
use joint_ukf::{ExperimentConfig, JointModel, JointState, Observer, PseudoMeasurement};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn config(toml: &str) -> Result<ExperimentConfig, String> {
    let cfg = if toml.trim().is_empty() {
        ExperimentConfig::default()
    } else {
        ExperimentConfig::from_toml_str(toml).map_err(|e| e.to_string())?
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn finish(v: Result<Value, String>) -> Result<String, JsValue> {
    v.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

/// Runs the classical and joint observers on one simulated Duffing
/// trajectory and ranks the correction terms.
#[wasm_bindgen]
pub fn estimate(config_toml: &str, seed: u64) -> Result<String, JsValue> {
    finish(estimate_json(config_toml, seed))
}

pub fn estimate_json(config_toml: &str, seed: u64) -> Result<Value, String> {
    let mut cfg = config(config_toml)?;
    cfg.seed = seed;
    let res = run_experiment(&cfg, &[Observer::Classical, Observer::Joint]).map_err(|e| e.to_string())?;
    let column = |xs: &[DVector<f64>], i: usize| -> Vec<f64> { xs.iter().map(|x| x[i]).collect() };
    let n_x = res.truth.x[0].len();
    let observers: Vec<Value> = res
        .runs
        .iter()
        .map(|r| {
            json!({
                "name": r.observer.name(),
                "x": (0..n_x).map(|i| column(&r.log.x_est, i)).collect::<Vec<_>>(),
                "error": r.cumulative_error(),
            })
        })
        .collect();
    let joint = &res.runs[1];
    let dom = pca_dominance(&joint.log, cfg.analysis.burn_in, cfg.analysis.threshold).map_err(|e| e.to_string())?;
    let active = active_count(&mean_abs_theta(&joint.log, cfg.analysis.burn_in), ACTIVE_FRACTION);
    let theta: Vec<Vec<f64>> = joint.log.theta.row_iter().map(|r| r.iter().copied().collect()).collect();
    Ok(json!({
        "t": res.truth.t,
        "x_true": (0..n_x).map(|i| column(&res.truth.x, i)).collect::<Vec<_>>(),
        "observers": observers,
        "library": joint.library,
        "theta": theta,
        "shares": dom.shares,
        "ranking": dom.ranking,
        "selected": dom.selected,
        "active_terms": active,
        "sigma_star2": joint.sigma_star,
    }))
}

/// Monte-Carlo `σ⋆²` for the given global scale, next to a Laplace density
/// and a family of Gaussians on `[-3, 3]`.
#[wasm_bindgen]
pub fn prior_summary(tau0: f64, samples: usize, seed: u64) -> Result<String, JsValue> {
    finish(prior_json(tau0, samples, seed))
}

pub fn prior_json(tau0: f64, samples: usize, seed: u64) -> Result<Value, String> {
    let mut hs = ExperimentConfig::default().horseshoe;
    hs.tau0 = tau0;
    let est = prior::sigma_star(&hs.spec(), samples, seed).map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (-300..=300).map(|i| i as f64 * 0.01).collect();
    let variances = [1.0, 0.9, 0.8, 0.7, 0.65];
    let rows = prior::density_comparison(0.75, &variances, VarianceConvention::Distribution, &grid)
        .map_err(|e| e.to_string())?;
    let gaussians: Vec<Vec<f64>> = (0..variances.len()).map(|j| rows.iter().map(|r| r.gaussians[j]).collect()).collect();
    Ok(json!({
        "sigma_star2": est.mean,
        "std_error": est.std_error,
        "samples": est.n_samples,
        "t": grid,
        "laplace": rows.iter().map(|r| r.laplace).collect::<Vec<_>>(),
        "gaussian_variances": variances,
        "gaussians": gaussians,
    }))
}

/// Rank test of the joint system at the configured probe point.
#[wasm_bindgen]
pub fn observability(config_toml: &str, with_pseudo: bool) -> Result<String, JsValue> {
    finish(observability_json(config_toml, with_pseudo))
}

pub fn observability_json(config_toml: &str, with_pseudo: bool) -> Result<Value, String> {
    let cfg = config(config_toml)?;
    let oc = &cfg.observability;
    let model = JointModel::duffing(cfg.p, cfg.library().map_err(|e| e.to_string())?, cfg.dt).map_err(|e| e.to_string())?;
    let pm = PseudoMeasurement::new(model.n_x(), cfg.pm.epsilon, cfg.pm.r_pm).map_err(|e| e.to_string())?;
    let probe = JointState::new(
        DVector::from_column_slice(&oc.probe_x),
        DVector::from_element(model.n_theta(), oc.probe_theta),
    );
    let opts = ObservabilityOptions {
        tol: oc.tol,
        probe_dt: Some(oc.probe_dt),
        strict: oc.strict,
    };
    let report =
        check_observability(&model, with_pseudo.then_some(&pm), &probe, oc.u, &opts).map_err(|e| e.to_string())?;
    Ok(json!({
        "rank": report.rank,
        "required": report.required,
        "observable": report.observable,
        "singular_values": report.singular_values,
        "warnings": report.warnings,
    }))
}
