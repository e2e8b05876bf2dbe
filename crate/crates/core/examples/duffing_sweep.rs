//! Runs the Duffing comparison over a range of seeds and prints per-seed
//! errors, the number of active terms, PCA shares and the θ₆ sign correlation.
//!
//! ```text
//! cargo run --release -p joint-ukf --example duffing_sweep -- [config.toml] [n_seeds]
//! ```

use joint_ukf::analysis::{active_count, correlation, mean_abs_theta, pca_dominance, reconstruct_g, rms_diff};
use joint_ukf::config::{ExperimentConfig, Observer};
use joint_ukf::experiment::{run_experiment, true_missing_term, ACTIVE_FRACTION};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let base = match args.next() {
        Some(path) if path != "-" => ExperimentConfig::from_toml_str(&std::fs::read_to_string(path)?)?,
        _ => ExperimentConfig::default(),
    };
    let n_seeds: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let x1_sq = base.library()?.index_of("x1^2");

    println!("seed  classical      joint  active  top  share  top2  corr6  g_sel/g_all  selected");
    let lib = base.library()?;
    for seed in 0..n_seeds {
        let cfg = ExperimentConfig { seed, ..base.clone() };
        let res = run_experiment(&cfg, &[Observer::Classical, Observer::Joint])?;
        let (classical, joint) = (&res.runs[0], &res.runs[1]);
        let active = active_count(&mean_abs_theta(&joint.log, cfg.analysis.burn_in), ACTIVE_FRACTION);
        let dom = pca_dominance(&joint.log, cfg.analysis.burn_in, cfg.analysis.threshold)?;
        let corr = x1_sq.map_or(f64::NAN, |i| {
            let k0 = joint.log.burn_in_index(cfg.analysis.burn_in);
            let th: Vec<f64> = (k0..joint.log.len()).map(|k| joint.log.theta[(i, k)]).collect();
            let x1: Vec<f64> = (k0..joint.log.len()).map(|k| -joint.log.x_est[k][0]).collect();
            correlation(&th, &x1)
        });
        let g = true_missing_term(&cfg, &joint.log.x_true);
        let k0 = joint.log.burn_in_index(cfg.analysis.burn_in);
        let g_all = rms_diff(&reconstruct_g(&joint.log, &lib, None)?, &g, k0);
        let g_sel = rms_diff(&reconstruct_g(&joint.log, &lib, Some(&dom.selected))?, &g, k0);
        let selected: Vec<&str> = dom.selected.iter().map(|&i| joint.library[i].as_str()).collect();
        println!(
            "{seed:4} {:10.4} {:10.4} {active:7} {:>4} {:6.3} {:5.3} {corr:6.3} {:12.3}  {}",
            classical.final_error(),
            joint.final_error(),
            joint.library[dom.ranking[0]],
            dom.shares[dom.ranking[0]],
            dom.cumulative_share(2),
            g_sel / g_all,
            selected.join(" "),
        );
    }
    Ok(())
}
