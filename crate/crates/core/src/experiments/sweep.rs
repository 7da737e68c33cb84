//! Parameter sweeps with a checksummed manifest and resume.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{run_experiment, with_pool, ExperimentConfig};
use crate::error::{PottsError, Result};
use crate::io::sha256_file;
use crate::rng::mix_seed;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    /// JSON pointer into the base config, e.g. `/params/beta`.
    pub path: String,
    pub values: Vec<Value>,
}

/// Cartesian product of `axes` applied to `base`; the last axis varies fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub base: Value,
    pub axes: Vec<GridAxis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    #[serde(default)]
    pub cells: Vec<ExperimentConfig>,
    #[serde(default)]
    pub grid: Option<Grid>,
}

impl SweepConfig {
    pub fn single(cell: ExperimentConfig, master_seed: u64) -> Self {
        SweepConfig {
            schema_version: SCHEMA_VERSION,
            master_seed,
            cells: vec![cell],
            grid: None,
        }
    }

    /// Explicit cells followed by the grid expansion.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(PottsError::InvalidInput(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        let mut out = self.cells.clone();
        let Some(grid) = &self.grid else {
            return Ok(out);
        };
        if grid.axes.iter().any(|a| a.values.is_empty()) {
            return Ok(out);
        }
        let mut idx = vec![0usize; grid.axes.len()];
        loop {
            let mut v = grid.base.clone();
            for (axis, &k) in grid.axes.iter().zip(&idx) {
                let slot = v
                    .pointer_mut(&axis.path)
                    .ok_or_else(|| PottsError::InvalidInput(format!("grid path {} not found in base config", axis.path)))?;
                *slot = axis.values[k].clone();
            }
            out.push(serde_json::from_value(v)?);
            let mut d = grid.axes.len();
            loop {
                if d == 0 {
                    return Ok(out);
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < grid.axes[d].values.len() {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub index: usize,
    pub kind: String,
    /// Seed of the cell; replica `r` uses the stream `replica_rng(seed, r)`.
    pub seed: u64,
    pub wall_clock_secs: f64,
    pub files: Vec<FileRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: SweepConfig,
    pub code_version: String,
    /// Unix time at which the manifest was last written.
    pub written_at: u64,
    pub cells: Vec<CellRecord>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }

    fn write(&mut self, dir: &Path) -> Result<()> {
        self.written_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n")?;
        fs::rename(tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }
}

/// Reads a sweep config, or the config echoed in a manifest.
pub fn load_sweep_config(path: &Path) -> Result<SweepConfig> {
    let text = fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    if v.get("code_version").is_some() {
        let man: RunManifest = serde_json::from_value(v)?;
        return Ok(man.config);
    }
    Ok(serde_json::from_value(v)?)
}

fn cell_prefix(index: usize, kind: &str) -> String {
    format!("cell_{index:04}_{kind}")
}

fn cell_intact(dir: &Path, rec: &CellRecord) -> bool {
    !rec.files.is_empty()
        && rec
            .files
            .iter()
            .all(|f| sha256_file(&dir.join(&f.name)).is_ok_and(|h| h == f.sha256))
}

/// Runs every cell of `config` into `out_dir`, writing `manifest.json` after each cell.
/// Cells recorded in an existing manifest for the same config whose files still match
/// their checksums are skipped.
pub fn sweep_run(config: &SweepConfig, out_dir: &Path) -> Result<RunManifest> {
    sweep_run_partial(config, out_dir, None)
}

/// As [`sweep_run`], stopping after `max_new_cells` cells have been computed.
pub fn sweep_run_partial(config: &SweepConfig, out_dir: &Path, max_new_cells: Option<usize>) -> Result<RunManifest> {
    let cells = config.expand()?;
    fs::create_dir_all(out_dir)?;
    let previous = RunManifest::load(out_dir)
        .ok()
        .filter(|m| m.config == *config && m.code_version == CODE_VERSION);
    let mut manifest = RunManifest {
        config: config.clone(),
        code_version: CODE_VERSION.into(),
        written_at: 0,
        cells: Vec::with_capacity(cells.len()),
    };
    let mut computed = 0;
    for (index, cell) in cells.iter().enumerate() {
        let old = previous
            .as_ref()
            .and_then(|m| m.cells.iter().find(|c| c.index == index))
            .filter(|c| cell_intact(out_dir, c));
        if let Some(rec) = old {
            manifest.cells.push(rec.clone());
            continue;
        }
        if max_new_cells.is_some_and(|k| computed >= k) {
            break;
        }
        let seed = mix_seed(config.master_seed, index as u64);
        let start = Instant::now();
        let files: Vec<PathBuf> = with_pool(|| run_experiment(cell, seed, out_dir, &cell_prefix(index, cell.kind())))??;
        let files = files
            .iter()
            .map(|p| {
                Ok(FileRecord {
                    name: p.file_name().unwrap().to_string_lossy().into_owned(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?;
        manifest.cells.push(CellRecord {
            index,
            kind: cell.kind().into(),
            seed,
            wall_clock_secs: start.elapsed().as_secs_f64(),
            files,
        });
        computed += 1;
        manifest.write(out_dir)?;
    }
    manifest.write(out_dir)?;
    Ok(manifest)
}
