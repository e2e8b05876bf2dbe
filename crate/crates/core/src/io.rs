//! CSV tables for trajectories, estimates and coefficient histories.
//!
//! Everything goes through strings so the same code serves the CLI and the
//! browser build. Floats are written with 17 significant digits.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::analysis::EstimateLog;
use crate::models::Trajectory;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("column `{0}` missing")]
    MissingColumn(String),
    #[error("row {row}: cannot parse `{value}` as a number")]
    BadNumber { row: usize, value: String },
    #[error("{0}")]
    Mismatch(String),
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Numeric table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Result<usize, IoError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IoError::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, IoError> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        // Writing into a Vec cannot fail.
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|&v| format_float(v))).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn from_csv_str(s: &str) -> Result<Self, IoError> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(s.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut table = Table::new(header);
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|v| {
                    v.parse::<f64>().map_err(|_| IoError::BadNumber {
                        row: i + 1,
                        value: v.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            table.rows.push(row);
        }
        Ok(table)
    }
}

/// Numeric table whose first column is a text label, e.g. an observer or term name.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTable {
    pub header: Vec<String>,
    pub labels: Vec<String>,
    /// Numeric cells; `None` is written as an empty field.
    pub rows: Vec<Vec<Option<f64>>>,
}

impl LabeledTable {
    pub fn new(header: Vec<String>) -> Self {
        Self {
            header,
            labels: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, row: Vec<Option<f64>>) {
        debug_assert_eq!(row.len() + 1, self.header.len());
        self.labels.push(label.into());
        self.rows.push(row);
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for (label, row) in self.labels.iter().zip(&self.rows) {
            let cells = std::iter::once(label.clone()).chain(row.iter().map(|v| v.map(format_float).unwrap_or_default()));
            w.write_record(cells).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn from_csv_str(s: &str) -> Result<Self, IoError> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(s.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut table = LabeledTable::new(header);
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut cells = rec.iter();
            let label = cells.next().unwrap_or_default().to_string();
            let row = cells
                .map(|v| {
                    if v.is_empty() {
                        return Ok(None);
                    }
                    v.parse::<f64>().map(Some).map_err(|_| IoError::BadNumber {
                        row: i + 1,
                        value: v.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            table.labels.push(label);
            table.rows.push(row);
        }
        Ok(table)
    }
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

/// `t, x1.., y` (a single output is written as `y`, several as `y1..`).
pub fn truth_table(traj: &Trajectory) -> Table {
    let n_x = traj.x.first().map_or(0, |x| x.len());
    let m = traj.y.first().map_or(0, |y| y.len());
    let mut header = vec!["t".to_string()];
    header.extend(indexed("x", n_x));
    if m == 1 {
        header.push("y".into());
    } else {
        header.extend(indexed("y", m));
    }
    let mut t = Table::new(header);
    for k in 0..traj.len() {
        let mut row = vec![traj.t[k]];
        row.extend(traj.x[k].iter());
        row.extend(traj.y[k].iter());
        t.push(row);
    }
    t
}

/// `t, u`.
pub fn input_table(traj: &Trajectory) -> Table {
    let mut t = Table::new(vec!["t".into(), "u".into()]);
    for k in 0..traj.len() {
        t.push(vec![traj.t[k], traj.u[k]]);
    }
    t
}

/// `t, x1..` of the estimate.
pub fn estimate_table(log: &EstimateLog) -> Table {
    let n_x = log.x_est.first().map_or(0, |x| x.len());
    let mut header = vec!["t".to_string()];
    header.extend(indexed("x", n_x));
    let mut t = Table::new(header);
    for k in 0..log.len() {
        let mut row = vec![log.times[k]];
        row.extend(log.x_est[k].iter());
        t.push(row);
    }
    t
}

/// `t` followed by one column per library term.
pub fn theta_table(log: &EstimateLog, names: &[String]) -> Table {
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    let mut t = Table::new(header);
    for k in 0..log.len() {
        let mut row = vec![log.times[k]];
        row.extend(log.theta.column(k).iter());
        t.push(row);
    }
    t
}

/// `t` followed by one named column per series.
pub fn series_table(times: &[f64], series: &[(String, Vec<f64>)]) -> Table {
    let mut header = vec!["t".to_string()];
    header.extend(series.iter().map(|(n, _)| n.clone()));
    let mut t = Table::new(header);
    for (k, &tk) in times.iter().enumerate() {
        let mut row = vec![tk];
        row.extend(series.iter().map(|(_, v)| v[k]));
        t.push(row);
    }
    t
}

fn rows_as_vectors(t: &Table, cols: &[usize]) -> Vec<DVector<f64>> {
    t.rows
        .iter()
        .map(|r| DVector::from_iterator(cols.len(), cols.iter().map(|&j| r[j])))
        .collect()
}

fn prefixed_columns(t: &Table, prefix: &str) -> Vec<usize> {
    let mut cols = Vec::new();
    for i in 1.. {
        match t.column_index(&format!("{prefix}{i}")) {
            Ok(j) => cols.push(j),
            Err(_) => break,
        }
    }
    cols
}

/// Rebuilds a run log from the written tables. Without an input table `u` is
/// taken as zero. Returns the log and the term names from the coefficient
/// table header.
pub fn log_from_tables(
    truth: &Table,
    estimate: &Table,
    theta: &Table,
    input: Option<&Table>,
) -> Result<(EstimateLog, Vec<String>), IoError> {
    let times = truth.column("t")?;
    let n = times.len();
    for (name, t) in [("estimate", estimate), ("theta", theta)] {
        if t.rows.len() != n {
            return Err(IoError::Mismatch(format!(
                "{name} table has {} rows, truth has {n}",
                t.rows.len()
            )));
        }
    }
    let x_cols = prefixed_columns(truth, "x");
    if x_cols.is_empty() {
        return Err(IoError::MissingColumn("x1".into()));
    }
    let y_cols = match truth.column_index("y") {
        Ok(j) => vec![j],
        Err(_) => prefixed_columns(truth, "y"),
    };
    let est_cols = prefixed_columns(estimate, "x");
    if est_cols.len() != x_cols.len() {
        return Err(IoError::Mismatch(format!(
            "estimate has {} state columns, truth has {}",
            est_cols.len(),
            x_cols.len()
        )));
    }
    let t_col = theta.column_index("t")?;
    let names: Vec<String> = theta
        .header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != t_col)
        .map(|(_, h)| h.clone())
        .collect();
    let theta_cols: Vec<usize> = (0..theta.header.len()).filter(|&j| j != t_col).collect();
    let theta_m = DMatrix::from_fn(theta_cols.len(), n, |i, k| theta.rows[k][theta_cols[i]]);
    let u = match input {
        Some(t) => {
            let u = t.column("u")?;
            if u.len() != n {
                return Err(IoError::Mismatch(format!("input has {} rows, truth has {n}", u.len())));
            }
            u
        }
        None => vec![0.0; n],
    };
    let log = EstimateLog {
        times,
        u,
        x_true: rows_as_vectors(truth, &x_cols),
        x_est: rows_as_vectors(estimate, &est_cols),
        theta: theta_m,
        y: rows_as_vectors(truth, &y_cols),
    };
    Ok((log, names))
}
