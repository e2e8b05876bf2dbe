use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use joint_ukf::analysis::{self, pca_dominance, reconstruct_g, rms_diff, DominanceReport};
use joint_ukf::config::{ConfigError, ExperimentConfig, Observer, UNPUBLISHED_DEFAULTS};
use joint_ukf::experiment::{self, ComparisonRow, ExperimentError, ExperimentResult, ObserverRun};
use joint_ukf::io::{self, IoError, LabeledTable, Table};
use joint_ukf::models::{FunctionLibrary, JointModel, JointState};
use joint_ukf::observability::{check_observability, ObservabilityError, ObservabilityOptions};
use joint_ukf::prior::{self, density_comparison, PriorError, VarianceConvention};
use joint_ukf::srukf::{FilterError, PseudoMeasurement};
use joint_ukf::nalgebra::DVector;
use thiserror::Error;

use crate::Common;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: IoError },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Observability(#[from] ObservabilityError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Model(#[from] joint_ukf::models::ModelError),
}

type Result<T> = std::result::Result<T, CliError>;

/// Exit code of `observability` when the rank test fails.
const NOT_OBSERVABLE: u8 = 2;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::File { path: path.clone(), source })?;
    Ok(path)
}

fn read_table(path: &Path) -> Result<Table> {
    Table::from_csv_str(&read(path)?).map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

/// Effective configuration: file (or defaults) with flag overrides applied.
fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_toml_str(&read(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    if let Some(name) = &common.observer {
        if !name.contains(',') {
            cfg.observer = Observer::parse(name)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&dir).map_err(|source| CliError::File { path: dir.clone(), source })?;
    Ok(dir)
}

fn report_header(command: &str, cfg: &ExperimentConfig) -> String {
    let mut s = format!("# joint-ukf {command}\n\n");
    s.push_str("## Unpublished defaults\n");
    s.push_str("# These values are free choices, not published settings:\n");
    for key in UNPUBLISHED_DEFAULTS {
        let _ = writeln!(s, "#   {key}");
    }
    s.push_str("\n## Effective configuration\n");
    s.push_str(&cfg.to_toml_string());
    s.push('\n');
    s
}

fn write_truth(dir: &Path, res: &ExperimentResult) -> Result<()> {
    write(dir, "states_true.csv", &io::truth_table(&res.truth).to_csv_string())?;
    write(dir, "input.csv", &io::input_table(&res.truth).to_csv_string())?;
    Ok(())
}

fn write_error_table(dir: &Path, res: &ExperimentResult) -> Result<()> {
    let series: Vec<(String, Vec<f64>)> = res
        .runs
        .iter()
        .map(|r| (r.observer.name().to_string(), r.cumulative_error()))
        .collect();
    write(dir, "error.csv", &io::series_table(&res.truth.t, &series).to_csv_string())?;
    Ok(())
}

fn write_run(dir: &Path, run: &ObserverRun, theta_name: &str) -> Result<()> {
    let name = run.observer.name();
    write(dir, &format!("states_est_{name}.csv"), &io::estimate_table(&run.log).to_csv_string())?;
    if run.observer.estimates_theta() {
        write(dir, theta_name, &io::theta_table(&run.log, &run.library).to_csv_string())?;
    }
    Ok(())
}

fn comparison_table(rows: &[ComparisonRow]) -> LabeledTable {
    let n_x = rows.first().map_or(0, |r| r.rmse.len());
    let mut header = vec!["observer".to_string(), "final_cumulative_error".to_string()];
    header.extend((1..=n_x).map(|i| format!("rmse_x{i}")));
    header.push("active_terms".into());
    let mut t = LabeledTable::new(header);
    for r in rows {
        let mut cells = vec![Some(r.final_cumulative_error)];
        cells.extend(r.rmse.iter().map(|&v| Some(v)));
        cells.push(r.active_terms.map(|a| a as f64));
        t.push(r.observer.name(), cells);
    }
    t
}

fn run_summary(cfg: &ExperimentConfig, run: &ObserverRun) -> String {
    let row = experiment::comparison_row(cfg, run);
    let mut s = format!("[{}]\n", run.observer.name());
    let _ = writeln!(s, "final_cumulative_error = {:e}", row.final_cumulative_error);
    let _ = writeln!(s, "rmse = {:?}", row.rmse);
    if let Some(a) = row.active_terms {
        let _ = writeln!(s, "active_terms = {a}");
        let _ = writeln!(s, "sigma_star = {:e}", run.sigma_star);
    }
    let d = run.diagnostics;
    let _ = writeln!(
        s,
        "downdate_recoveries = {}\nmerge_clips = {}\nscale_clamps = {}",
        d.downdate_recoveries, d.merge_clips, d.scale_clamps
    );
    s
}

pub fn simulate(common: &Common) -> Result<ExitCode> {
    let cfg = load(common)?;
    let dir = out_dir(&cfg)?;
    let truth = experiment::simulate(&cfg)?;
    write(&dir, "states_true.csv", &io::truth_table(&truth).to_csv_string())?;
    write(&dir, "input.csv", &io::input_table(&truth).to_csv_string())?;
    let mut report = report_header("simulate", &cfg);
    let _ = writeln!(report, "## Results\nsamples = {}", truth.len());
    write(&dir, "report.txt", &report)?;
    println!("wrote {} samples to {}", truth.len(), dir.display());
    Ok(ExitCode::SUCCESS)
}

pub fn estimate(common: &Common) -> Result<ExitCode> {
    let cfg = load(common)?;
    let dir = out_dir(&cfg)?;
    let res = experiment::run_experiment(&cfg, &[cfg.observer])?;
    write_truth(&dir, &res)?;
    write_error_table(&dir, &res)?;
    let run = &res.runs[0];
    write_run(&dir, run, "theta.csv")?;
    let mut report = report_header("estimate", &cfg);
    report.push_str("## Results\n");
    report.push_str(&run_summary(&cfg, run));
    write(&dir, "report.txt", &report)?;
    println!(
        "{}: final cumulative error {:.6e} ({:.2} s)",
        run.observer.name(),
        run.final_error(),
        run.wall_clock.as_secs_f64()
    );
    Ok(ExitCode::SUCCESS)
}

fn observer_list(common: &Common) -> Result<Vec<Observer>> {
    match &common.observer {
        Some(list) => Ok(list
            .split(',')
            .map(|s| Observer::parse(s.trim()))
            .collect::<std::result::Result<_, _>>()?),
        None => Ok(vec![Observer::Classical, Observer::Joint, Observer::JointNoPass2]),
    }
}

pub fn compare(common: &Common) -> Result<ExitCode> {
    let observers = observer_list(common)?;
    let cfg = load(&Common {
        observer: None,
        ..common.clone()
    })?;
    let dir = out_dir(&cfg)?;
    let (res, rows) = experiment::compare_observers(&cfg, &observers)?;
    write_truth(&dir, &res)?;
    write_error_table(&dir, &res)?;
    let mut seen = std::collections::BTreeSet::new();
    for run in &res.runs {
        if seen.insert(run.observer) {
            write_run(&dir, run, &format!("theta_{}.csv", run.observer.name()))?;
        }
    }
    write(&dir, "comparison.csv", &comparison_table(&rows).to_csv_string())?;
    let mut report = report_header("compare", &cfg);
    report.push_str("## Results\n");
    for run in &res.runs {
        report.push_str(&run_summary(&cfg, run));
    }
    write(&dir, "report.txt", &report)?;
    println!("{:<16} {:>14} {:>8} {:>9}", "observer", "cum. error", "active", "wall [s]");
    for r in &rows {
        println!(
            "{:<16} {:>14.6e} {:>8} {:>9.3}",
            r.observer.name(),
            r.final_cumulative_error,
            r.active_terms.map_or("-".to_string(), |a| a.to_string()),
            r.wall_clock_s
        );
    }
    Ok(ExitCode::SUCCESS)
}

/// Coefficient history next to `dir`: `theta_<observer>.csv` from `compare`
/// or `theta.csv` from `estimate`.
fn find_theta(dir: &Path, observer: Observer) -> Option<PathBuf> {
    [format!("theta_{}.csv", observer.name()), "theta.csv".to_string()]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
}

fn dominance_table(report: &DominanceReport, names: &[String]) -> LabeledTable {
    let mut t = LabeledTable::new(vec!["term".into(), "rank".into(), "share".into(), "selected".into()]);
    for (rank, &i) in report.ranking.iter().enumerate() {
        let selected = report.selected.contains(&i);
        t.push(
            names[i].clone(),
            vec![Some((rank + 1) as f64), Some(report.shares[i]), Some(f64::from(u8::from(selected)))],
        );
    }
    t
}

pub fn analyze(common: &Common, dir: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = load(common)?;
    let src = dir.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    let observer = cfg.observer;
    let truth = read_table(&src.join("states_true.csv"))?;
    let estimate = read_table(&src.join(format!("states_est_{}.csv", observer.name())))?;
    let input_path = src.join("input.csv");
    let input = if input_path.exists() { Some(read_table(&input_path)?) } else { None };
    let theta = match find_theta(&src, observer) {
        Some(p) if observer.estimates_theta() => read_table(&p)?,
        _ => {
            let mut t = Table::new(vec!["t".into()]);
            for &tk in &truth.column("t").map_err(|source| CliError::Csv { path: src.join("states_true.csv"), source })? {
                t.push(vec![tk]);
            }
            t
        }
    };
    let (log, names) = io::log_from_tables(&truth, &estimate, &theta, input.as_ref())
        .map_err(|source| CliError::Csv { path: src.clone(), source })?;
    log.validate()?;

    let out = match &common.out {
        Some(o) => {
            fs::create_dir_all(o).map_err(|source| CliError::File { path: o.clone(), source })?;
            o.clone()
        }
        None => src.clone(),
    };
    let mut report = format!("# joint-ukf analyze\n\nsource = {:?}\nobserver = {:?}\n", src.display().to_string(), observer.name());
    let cum = analysis::cumulative_error(&log);
    let rmse = analysis::state_rmse(&log, cfg.analysis.burn_in);
    let _ = writeln!(report, "samples = {}\nfinal_cumulative_error = {:e}\nrmse = {rmse:?}", log.len(), cum.last().copied().unwrap_or(0.0));
    println!("{}: {} samples, final cumulative error {:.6e}", observer.name(), log.len(), cum.last().copied().unwrap_or(0.0));

    if log.n_theta() > 0 {
        let dom = pca_dominance(&log, cfg.analysis.burn_in, cfg.analysis.threshold)?;
        write(&out, &format!("dominance_{}.csv", observer.name()), &dominance_table(&dom, &names).to_csv_string())?;
        let lib = FunctionLibrary::from_names(&names, log.x_est[0].len())?;
        let g_true = experiment::true_missing_term(&cfg, &log.x_true);
        let g_all = reconstruct_g(&log, &lib, None)?;
        let g_sel = reconstruct_g(&log, &lib, Some(&dom.selected))?;
        let start = log.burn_in_index(cfg.analysis.burn_in);
        let g_table = io::series_table(
            &log.times,
            &[
                ("g_true".to_string(), g_true.clone()),
                ("g_all".to_string(), g_all.clone()),
                ("g_selected".to_string(), g_sel.clone()),
            ],
        );
        write(&out, &format!("g_{}.csv", observer.name()), &g_table.to_csv_string())?;
        let active = analysis::active_count(&analysis::mean_abs_theta(&log, cfg.analysis.burn_in), experiment::ACTIVE_FRACTION);
        let _ = writeln!(report, "active_terms = {active}\nburn_in = {}\nthreshold = {}", dom.burn_in, dom.threshold);
        let _ = writeln!(report, "rms_g_all = {:e}\nrms_g_selected = {:e}", rms_diff(&g_all, &g_true, start), rms_diff(&g_sel, &g_true, start));
        println!("{:<10} {:>6} {:>8}", "term", "rank", "share");
        for (rank, &i) in dom.ranking.iter().enumerate() {
            let mark = if dom.selected.contains(&i) { "*" } else { "" };
            let _ = writeln!(report, "share[{}] = {:.6}{}", names[i], dom.shares[i], if mark.is_empty() { "" } else { "  # selected" });
            println!("{:<10} {:>6} {:>8.4}{mark}", names[i], rank + 1, dom.shares[i]);
        }
    }
    write(&out, &format!("analysis_{}.txt", observer.name()), &report)?;
    Ok(ExitCode::SUCCESS)
}

pub fn observability(common: &Common, no_pseudo: bool) -> Result<ExitCode> {
    let cfg = load(common)?;
    let oc = &cfg.observability;
    let model = JointModel::duffing(cfg.p, cfg.library()?, cfg.dt)?;
    let pm = PseudoMeasurement::new(model.n_x(), cfg.pm.epsilon, cfg.pm.r_pm)?;
    let probe = JointState::new(
        DVector::from_column_slice(&oc.probe_x),
        DVector::from_element(model.n_theta(), oc.probe_theta),
    );
    let opts = ObservabilityOptions {
        tol: oc.tol,
        probe_dt: Some(oc.probe_dt),
        strict: oc.strict,
    };
    let report = check_observability(&model, (!no_pseudo).then_some(&pm), &probe, oc.u, &opts)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("rank = {} of {}", report.rank, report.required);
    println!("pseudo_measurement = {}", !no_pseudo);
    let smax = report.singular_values.first().copied().unwrap_or(0.0);
    for (i, s) in report.singular_values.iter().enumerate() {
        println!("sigma[{}] = {s:.6e}  (relative {:.3e})", i + 1, if smax > 0.0 { s / smax } else { 0.0 });
    }
    println!("observable = {}", report.observable);
    Ok(if report.observable {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(NOT_OBSERVABLE)
    })
}

/// Gaussian variances shrinking from the standard normal to 0.65 next to a
/// Laplace density of variance 0.75.
const GAUSS_VARIANCES: [f64; 5] = [1.0, 0.9, 0.8, 0.7, 0.65];
const LAPLACE_VARIANCE: f64 = 0.75;

pub fn prior(common: &Common, samples: Option<usize>) -> Result<ExitCode> {
    let cfg = load(common)?;
    let n = samples.unwrap_or(cfg.horseshoe.n_samples);
    let est = prior::sigma_star(&cfg.horseshoe.spec(), n, cfg.horseshoe.seed)?;
    println!("sigma_star2 = {:.17e}", est.mean);
    println!("std_error = {:.17e}", est.std_error);
    println!("samples = {}", est.n_samples);

    let grid: Vec<f64> = (-300..=300).map(|i| i as f64 * 0.01).collect();
    let dist = density_comparison(LAPLACE_VARIANCE, &GAUSS_VARIANCES, VarianceConvention::Distribution, &grid)?;
    let scale = density_comparison(LAPLACE_VARIANCE, &GAUSS_VARIANCES, VarianceConvention::Scale, &grid)?;
    let mut header = vec!["t".to_string(), "laplace_var_distribution".into(), "laplace_var_scale".into()];
    header.extend(GAUSS_VARIANCES.iter().map(|v| format!("gauss_var_{v}")));
    let mut table = Table::new(header);
    for (a, b) in dist.iter().zip(&scale) {
        let mut row = vec![a.t, a.laplace, b.laplace];
        row.extend(&a.gaussians);
        table.push(row);
    }
    let dir = out_dir(&cfg)?;
    let path = write(&dir, "prior_density.csv", &table.to_csv_string())?;
    let mut report = report_header("prior", &cfg);
    let _ = writeln!(
        report,
        "## Results\nsigma_star2 = {:.17e}\nstd_error = {:.17e}\nsamples = {}",
        est.mean, est.std_error, est.n_samples
    );
    write(&dir, "report.txt", &report)?;
    println!("density table: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

