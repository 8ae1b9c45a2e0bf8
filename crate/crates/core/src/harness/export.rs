use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sfw::Trajectory;

use super::HarnessError;

/// One CSV row of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub f_gap: f64,
    pub normalized_gap: f64,
    pub ghat: f64,
    pub et_bound: f64,
    pub n_t: usize,
    #[serde(rename = "N_t")]
    pub n_total: usize,
    pub fact2_lhs: f64,
    pub min_margin: f64,
    pub safe_flag: bool,
    pub feasible_flag: Option<bool>,
}

pub fn trajectory_rows(tr: &Trajectory, f_star: f64, h0: f64) -> Vec<TrajectoryRow> {
    tr.records
        .iter()
        .map(|r| {
            let f_gap = r.f_value - f_star;
            TrajectoryRow {
                t: r.t,
                f_gap,
                normalized_gap: super::normalize(r.t, f_gap, h0),
                ghat: r.ghat,
                et_bound: r.et_bound,
                n_t: r.n_t,
                n_total: r.n_total,
                fact2_lhs: r.fact2_lhs,
                min_margin: r.min_margin,
                safe_flag: r.safe,
                feasible_flag: r.feasible,
            }
        })
        .collect()
}

const HEADER: [&str; 11] = [
    "t",
    "f_gap",
    "normalized_gap",
    "ghat",
    "et_bound",
    "n_t",
    "N_t",
    "fact2_lhs",
    "min_margin",
    "safe_flag",
    "feasible_flag",
];

fn io_err(path: &Path, e: impl Into<std::io::Error>) -> HarnessError {
    HarnessError::Io { path: path.to_path_buf(), source: e.into() }
}

/// Writes the rows as CSV; an empty slice yields a header-only file.
pub fn write_trajectory_csv(rows: &[TrajectoryRow], path: &Path) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(HEADER).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    rdr.deserialize()
        .collect::<Result<Vec<TrajectoryRow>, _>>()
        .map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut f = File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;
    f.write_all(b"\n").map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}
