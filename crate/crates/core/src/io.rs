//! On-disk formats: trajectory and matrix CSV, JSON documents and dataset
//! bundles. Every write goes to a temporary file that is renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Trajectory, VectorField};
use crate::structure::CausalGraph;
use crate::systems::{spiral_field, CorruptionSpec, Dataset, LinearSecondOrderSystem, SystemSpec};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const CLEAN_TRAJECTORY_FILE: &str = "clean.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const SYSTEM_FILE: &str = "system.json";
pub const CORRUPTION_FILE: &str = "corruption.json";

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse(format!("{}: {e}", path.display()))
    }
}

/// CSV with header `t,x0,...,x{n-1}` (or a custom column prefix).
pub fn trajectory_to_csv(traj: &Trajectory, prefix: &str) -> String {
    let mut out = String::from("t");
    for j in 0..traj.dim() {
        out.push_str(&format!(",{prefix}{j}"));
    }
    out.push('\n');
    for (k, row) in traj.rows().enumerate() {
        out.push_str(&traj.times()[k].to_string());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    write_atomic(path, trajectory_to_csv(traj, "x").as_bytes())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.get(0) != Some("t") || headers.len() < 2 {
        return Err(Error::Parse(format!("{}: expected a header `t,x0,...`", path.display())));
    }
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let values = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("{} row {}: {e}", path.display(), line + 1)))?;
        times.push(values[0]);
        rows.push(values[1..].to_vec());
    }
    Trajectory::new(times, rows)
}

/// Plain comma-separated matrix, one row per line.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, matrix_to_csv(m).as_bytes())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

/// Adjacency as 0/1 entries.
pub fn write_adjacency_csv(path: &Path, graph: &CausalGraph) -> Result<()> {
    write_matrix_csv(path, &graph.adjacency().map(|b| if b { 1.0 } else { 0.0 }))
}

pub fn read_graph_csv(path: &Path) -> Result<CausalGraph> {
    CausalGraph::from_scores(read_matrix_csv(path)?.abs(), 0.0)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Contents of `system.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRecord {
    pub spec: SystemSpec,
    /// Coefficients of generated linear systems.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coefficients: Option<LinearSecondOrderSystem>,
}

impl SystemRecord {
    /// Initial positions of the recorded system.
    pub fn initial_state(&self) -> Option<Vec<f64>> {
        match &self.spec {
            SystemSpec::Linear { .. } => self.coefficients.as_ref().map(|c| c.x0.clone()),
            SystemSpec::Spiral { x0, .. } | SystemSpec::Lv { x0, .. } | SystemSpec::Transcription { x0, .. } => {
                Some(x0.clone())
            }
        }
    }

    /// The generating field of a nonlinear system, or `None` for linear
    /// systems (use `coefficients`).
    pub fn nonlinear_field(&self) -> Option<Box<dyn VectorField>> {
        match &self.spec {
            SystemSpec::Linear { .. } => None,
            SystemSpec::Spiral { alpha, beta, .. } => Some(Box::new(spiral_field(*alpha, *beta))),
            SystemSpec::Lv { params, .. } => Some(Box::new(*params)),
            SystemSpec::Transcription { field, .. } => Some(Box::new(field.clone())),
        }
    }
}

/// A dataset directory: observed (possibly corrupted) trajectory, clean
/// trajectory, ground-truth graph and the specs that produced them.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub system: SystemRecord,
    pub truth: CausalGraph,
    pub clean: Trajectory,
    pub observed: Trajectory,
    pub corruption: CorruptionSpec,
}

impl Bundle {
    pub fn new(dataset: Dataset, observed: Trajectory, corruption: CorruptionSpec) -> Self {
        Self {
            system: SystemRecord { spec: dataset.spec, coefficients: dataset.linear },
            truth: dataset.truth,
            clean: dataset.trajectory,
            observed,
            corruption,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_trajectory_csv(&dir.join(TRAJECTORY_FILE), &self.observed)?;
        write_trajectory_csv(&dir.join(CLEAN_TRAJECTORY_FILE), &self.clean)?;
        write_adjacency_csv(&dir.join(TRUTH_FILE), &self.truth)?;
        write_json(&dir.join(SYSTEM_FILE), &self.system)?;
        write_json(&dir.join(CORRUPTION_FILE), &self.corruption)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            system: read_json(&dir.join(SYSTEM_FILE))?,
            truth: read_graph_csv(&dir.join(TRUTH_FILE))?,
            clean: read_trajectory_csv(&dir.join(CLEAN_TRAJECTORY_FILE))?,
            observed: read_trajectory_csv(&dir.join(TRAJECTORY_FILE))?,
            corruption: read_json(&dir.join(CORRUPTION_FILE))?,
        })
    }
}

/// Loads the observed trajectory of a bundle directory, or a bare CSV file.
pub fn load_observations(path: &Path) -> Result<(Trajectory, Option<CausalGraph>)> {
    if path.is_dir() {
        let traj = read_trajectory_csv(&path.join(TRAJECTORY_FILE))?;
        let truth_path = path.join(TRUTH_FILE);
        let truth = if truth_path.exists() { Some(read_graph_csv(&truth_path)?) } else { None };
        Ok((traj, truth))
    } else {
        Ok((read_trajectory_csv(path)?, None))
    }
}
