//! CSV, field and metadata files. Every CSV has a header row and uses
//! `.` as the decimal separator.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use steinflow::svgd::IterationRecord;
use steinflow::{Field, Mesh};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const NOISE_FREE_FILE: &str = "noise_free.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MEAN_FILE: &str = "mean.csv";
pub const VARIANCE_FILE: &str = "variance.csv";
pub const COVARIANCE_FILE: &str = "covariance.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const SAMPLES_DIR: &str = "samples";

/// `git describe`-style version of this build.
pub fn version_string() -> String {
    format!("{}-{}", env!("CARGO_PKG_VERSION"), env!("STEINFLOW_GIT_DESCRIBE"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ObservationRow {
    index: usize,
    x: f64,
    y: f64,
    value: f64,
    sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub points: Vec<[f64; 2]>,
    pub values: DVector<f64>,
    pub sigma: f64,
}

pub fn write_observations(path: &Path, points: &[[f64; 2]], values: &DVector<f64>, sigma: f64) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (index, (p, &value)) in points.iter().zip(values.iter()).enumerate() {
        w.serialize(ObservationRow { index, x: p[0], y: p[1], value, sigma })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations(path: &Path) -> CliResult<Observations> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let rows: Vec<ObservationRow> = r.deserialize().collect::<Result<_, _>>()?;
    let Some(first) = rows.first() else {
        return Err(CliError::Data(format!("{} holds no observations", path.display())));
    };
    let sigma = first.sigma;
    if rows.iter().enumerate().any(|(i, r)| r.index != i || r.sigma != sigma) {
        return Err(CliError::Data(format!("{}: rows must be indexed 0.. and share one sigma", path.display())));
    }
    Ok(Observations {
        points: rows.iter().map(|r| [r.x, r.y]).collect(),
        values: DVector::from_iterator(rows.len(), rows.iter().map(|r| r.value)),
        sigma,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NodeRow {
    node: usize,
    x: f64,
    y: f64,
    value: f64,
}

/// Nodal values with coordinates, one row per node.
pub fn write_nodal_csv(path: &Path, mesh: &Mesh, values: &DVector<f64>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (node, (p, &value)) in mesh.nodes().iter().zip(values.iter()).enumerate() {
        w.serialize(NodeRow { node, x: p[0], y: p[1], value })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_nodal_csv(path: &Path) -> CliResult<DVector<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let rows: Vec<NodeRow> = r.deserialize().collect::<Result<_, _>>()?;
    if rows.iter().enumerate().any(|(i, r)| r.node != i) {
        return Err(CliError::Data(format!("{}: nodes must be listed in order", path.display())));
    }
    Ok(DVector::from_iterator(rows.len(), rows.iter().map(|r| r.value)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CovarianceRow {
    lag: usize,
    node: usize,
    value: f64,
}

/// Covariance functions; row `(lag, node)` pairs nodes `node` and `node + lag`.
pub fn write_covariance_csv(path: &Path, covariance: &BTreeMap<usize, DVector<f64>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (&lag, values) in covariance {
        for (node, &value) in values.iter().enumerate() {
            w.serialize(CovarianceRow { lag, node, value })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_covariance_csv(path: &Path) -> CliResult<BTreeMap<usize, DVector<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for row in r.deserialize() {
        let row: CovarianceRow = row?;
        let col = out.entry(row.lag).or_default();
        if row.node != col.len() {
            return Err(CliError::Data(format!("{}: nodes must be listed in order", path.display())));
        }
        col.push(row.value);
    }
    Ok(out.into_iter().map(|(k, v)| (k, DVector::from_vec(v))).collect())
}

#[derive(Debug, Clone, Serialize)]
struct DiagnosticsRow {
    iteration: usize,
    s: f64,
    h: f64,
    max_update_norm: f64,
    mean_potential: f64,
    var_norm_ratio: f64,
}

pub fn write_diagnostics_csv(path: &Path, records: &[IterationRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(DiagnosticsRow {
            iteration: r.iteration,
            s: r.s,
            h: r.h,
            max_update_norm: r.max_update_norm,
            mean_potential: r.mean_potential,
            var_norm_ratio: r.var_norm_ratio,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `samples/sample_NNNNN.sfld` for every field.
pub fn write_samples(dir: &Path, mesh: &Mesh, samples: &[DVector<f64>]) -> CliResult<()> {
    let dir = dir.join(SAMPLES_DIR);
    fs::create_dir_all(&dir)?;
    for (i, s) in samples.iter().enumerate() {
        Field::new(mesh, s.clone())?.save(dir.join(format!("sample_{i:05}.sfld")))?;
    }
    Ok(())
}

/// Reads every `.sfld` file in `dir`, in file-name order.
pub fn read_samples(dir: &Path) -> CliResult<Vec<Field<f64>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sfld"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("{} holds no field files", dir.display())));
    }
    let fields: Vec<Field<f64>> = paths.iter().map(Field::load).collect::<Result<_, _>>()?;
    if fields.iter().any(|f| f.ng() != fields[0].ng()) {
        return Err(CliError::Data(format!("{}: fields come from different meshes", dir.display())));
    }
    Ok(fields)
}

/// Self-describing record written next to every output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    pub version: String,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    pub workers: usize,
    pub seeds: BTreeMap<String, u64>,
    pub config: RunConfig,
    /// Command-specific results such as acceptance rates or noise levels.
    pub results: BTreeMap<String, serde_json::Value>,
}

impl Metadata {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        let seeds = BTreeMap::from([
            ("prior".to_string(), config.prior.seed),
            ("noise".to_string(), config.model.noise_seed),
            ("svgd".to_string(), config.svgd.seed),
            ("pcn".to_string(), config.pcn.seed),
        ]);
        Self {
            command: command.into(),
            version: version_string(),
            started_unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_seconds: 0.0,
            workers: rayon::current_num_threads(),
            seeds,
            config: config.clone(),
            results: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, key: &str, value: impl Serialize) {
        self.results
            .insert(key.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        fs::write(dir.join(METADATA_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
