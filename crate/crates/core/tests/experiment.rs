use joint_ukf::analysis::{pca_dominance, reconstruct_g, rms_diff};
use joint_ukf::config::{ExperimentConfig, Observer};
use joint_ukf::experiment::{compare_observers, run_experiment, true_missing_term};
use joint_ukf::models::FunctionLibrary;

#[test]
fn exact_model_without_noise_tracks_perfectly() {
    let mut cfg = ExperimentConfig::default();
    cfg.noise.q_x = vec![0.0];
    cfg.noise.r = vec![0.0];
    cfg.x0_est = cfg.x0_true.clone();
    cfg.filter.p0_x_std = 1e-6;
    let res = run_experiment(&cfg, &[Observer::TrueModel]).unwrap();
    assert!(res.runs[0].final_error() < 1e-6, "{}", res.runs[0].final_error());
}

#[test]
fn joint_beats_classical_on_default_config() {
    let (_, rows) = compare_observers(&ExperimentConfig::default(), &[Observer::Classical, Observer::Joint]).unwrap();
    assert!(rows[1].final_cumulative_error < rows[0].final_cumulative_error);
    assert_eq!(rows[0].active_terms, None);
    assert!(rows[1].active_terms.is_some());
}

#[test]
fn listing_an_observer_twice_gives_identical_rows() {
    let (_, rows) = compare_observers(&ExperimentConfig::default(), &[Observer::Joint, Observer::Joint]).unwrap();
    assert_eq!(rows[0].final_cumulative_error, rows[1].final_cumulative_error);
    assert_eq!(rows[0].rmse, rows[1].rmse);
    assert_eq!(rows[0].active_terms, rows[1].active_terms);
}

#[test]
fn comparison_needs_two_observers() {
    assert!(compare_observers(&ExperimentConfig::default(), &[Observer::Joint]).is_err());
}

#[test]
fn ablation_leaves_more_terms_active() {
    let cfg = ExperimentConfig { seed: 3, ..ExperimentConfig::default() };
    let (_, rows) = compare_observers(&cfg, &[Observer::Joint, Observer::JointNoPass2]).unwrap();
    let (full, ablation) = (rows[0].active_terms.unwrap(), rows[1].active_terms.unwrap());
    assert!(ablation > full, "ablation {ablation}, full {full}");
}

#[test]
fn selected_terms_capture_most_of_the_missing_term() {
    let cfg = ExperimentConfig { seed: 1, ..ExperimentConfig::default() };
    let res = run_experiment(&cfg, &[Observer::Joint]).unwrap();
    let log = &res.runs[0].log;
    let dom = pca_dominance(log, cfg.analysis.burn_in, cfg.analysis.threshold).unwrap();
    let lib = FunctionLibrary::duffing();
    let g = true_missing_term(&cfg, &log.x_true);
    let all = reconstruct_g(log, &lib, None).unwrap();
    let selected = reconstruct_g(log, &lib, Some(&dom.selected)).unwrap();
    let start = log.burn_in_index(cfg.analysis.burn_in);
    let (e_all, e_sel) = (rms_diff(&all, &g, start), rms_diff(&selected, &g, start));
    let g_rms = rms_diff(&g, &vec![0.0; g.len()], start);
    // Dropping the small terms costs about 40% here, so the selected fit is
    // only required to capture most of g.
    assert!(e_sel < 0.5 * g_rms, "selected {e_sel}, g {g_rms}");
    assert!(e_all <= e_sel, "all {e_all}, selected {e_sel}");
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let cfg = ExperimentConfig { dt: -0.01, ..ExperimentConfig::default() };
    let err = run_experiment(&cfg, &[Observer::Joint]).unwrap_err();
    assert!(err.to_string().contains("dt"), "{err}");
}
