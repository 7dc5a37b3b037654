//! Grid sweeps. Any list-valued key in a config is an axis; the sweep runs
//! the Cartesian product of all axes.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{file_config_from_table, resolve, ConfigFileError};
use super::{run_to_dir, write_atomic, HarnessError};
use crate::engine::RunConfig;

pub const SWEEP_FORMAT: &str = "decadam-sweep/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    /// Dotted key path.
    pub key: String,
    pub values: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    /// Axis key to the value chosen for this point.
    pub params: BTreeMap<String, serde_json::Value>,
    pub config: RunConfig,
}

fn collect_axes(
    table: &toml::Table,
    prefix: &str,
    out: &mut Vec<(String, Vec<toml::Value>)>,
) -> Result<(), ConfigFileError> {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Array(items) => {
                if items.is_empty() {
                    return Err(ConfigFileError::Invalid { key: path, message: "grid axis has no values".into() });
                }
                if items.iter().any(|i| matches!(i, toml::Value::Array(_) | toml::Value::Table(_))) {
                    return Err(ConfigFileError::Invalid { key: path, message: "grid values must be scalars".into() });
                }
                out.push((path, items.clone()));
            }
            toml::Value::Table(t) => collect_axes(t, &path, out)?,
            _ => {}
        }
    }
    Ok(())
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("nonempty path");
    let mut t = table;
    for p in parts {
        t = t.get_mut(p).and_then(toml::Value::as_table_mut).expect("axis path exists");
    }
    t.insert(last.to_string(), value);
}

fn to_json(v: &toml::Value) -> serde_json::Value {
    serde_json::to_value(v).expect("toml scalars convert to json")
}

/// Expand a parsed config table into one resolved config per grid point.
///
/// Axes are ordered by key path; the last axis varies fastest.
pub fn expand_grid(table: &toml::Table) -> Result<(Vec<GridAxis>, Vec<GridPoint>), ConfigFileError> {
    let mut axes = Vec::new();
    collect_axes(table, "", &mut axes)?;
    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    let mut points = Vec::with_capacity(total);
    for index in 0..total {
        let mut rem = index;
        let mut chosen = vec![0; axes.len()];
        for (i, (_, values)) in axes.iter().enumerate().rev() {
            chosen[i] = rem % values.len();
            rem /= values.len();
        }
        let mut t = table.clone();
        let mut params = BTreeMap::new();
        for ((key, values), &c) in axes.iter().zip(&chosen) {
            set_path(&mut t, key, values[c].clone());
            params.insert(key.clone(), to_json(&values[c]));
        }
        let config = resolve(file_config_from_table(t)?)?;
        points.push(GridPoint { index, params, config });
    }
    let axes =
        axes.into_iter().map(|(key, values)| GridAxis { key, values: values.iter().map(to_json).collect() }).collect();
    Ok((axes, points))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub index: usize,
    pub params: BTreeMap<String, serde_json::Value>,
    pub config_hash: String,
    pub trace: String,
    pub manifest: String,
}

/// `sweep.json`: the axes and one entry per child run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepIndex {
    pub format: String,
    pub axes: Vec<GridAxis>,
    pub runs: Vec<SweepEntry>,
}

/// Run every grid point on a pool of `jobs` threads, writing
/// `run-NNNN.csv`/`run-NNNN.manifest.json` and `sweep.json` into `out`.
pub fn run_sweep(table: &toml::Table, out: &Path, jobs: usize) -> Result<SweepIndex, HarnessError> {
    let (axes, points) = expand_grid(table)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Format(format!("cannot start worker pool: {e}")))?;
    let runs = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let stem = format!("run-{:04}", p.index);
                let (_, o) = run_to_dir(p.config.clone(), out, &stem)?;
                Ok(SweepEntry {
                    index: p.index,
                    params: p.params.clone(),
                    config_hash: o.manifest.config_hash,
                    trace: format!("{stem}.csv"),
                    manifest: format!("{stem}.manifest.json"),
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    let index = SweepIndex { format: SWEEP_FORMAT.to_string(), axes, runs };
    let mut json = serde_json::to_vec_pretty(&index)?;
    json.push(b'\n');
    write_atomic(&out.join("sweep.json"), &json)?;
    Ok(index)
}
