//! Sweeping support conditions and volume fractions into a persisted
//! dataset of alternatives.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{self, SupportSpec};
use crate::error::{Error, Result};
use crate::fem::MaterialModel;
use crate::grid::{DensityField, GridSpec};
use crate::pgm;
use crate::topo::{alternative_id, optimize, Alternative, OptimizerSettings, Problem};

/// `start, start + step, ..., end` computed by integer stepping, each value
/// rounded to 1e-9 so that e.g. `0.02 + 17 * 0.01` prints as `0.19`.
pub fn volume_fractions(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(end >= start) {
        return Err(Error::Invalid(format!("bad volume-fraction range {start}..{end} step {step}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldFiles {
    pub raw_pgm: String,
    pub raw_f32: String,
    pub binary_pgm: String,
    pub binary_f32: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub condition_id: String,
    pub volume_fraction: f64,
    pub iterations: usize,
    pub converged: bool,
    pub compliance: f64,
    pub files: FieldFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub condition_id: String,
    pub volume_fraction: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub grid: GridSpec,
    pub entries: Vec<ManifestEntry>,
    pub failures: Vec<Failure>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct SweepRequest<'a> {
    pub grid: GridSpec,
    pub catalog: &'a [SupportSpec],
    pub condition_ids: &'a [String],
    pub volume_fractions: &'a [f64],
    pub material: MaterialModel,
    pub settings: OptimizerSettings,
    /// Worker threads; 1 runs inline.
    pub parallel: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub alternatives: Vec<Alternative>,
    pub failures: Vec<Failure>,
}

/// One alternative per `(condition, volume fraction)` pair, condition-major.
pub fn sweep(req: &SweepRequest<'_>) -> Result<SweepResult> {
    if req.condition_ids.is_empty() || req.volume_fractions.is_empty() {
        return Err(Error::Invalid("sweep needs at least one condition and one volume fraction".into()));
    }
    let specs = req
        .condition_ids
        .iter()
        .map(|id| catalog::find(req.catalog, id).cloned())
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(&SupportSpec, f64)> = specs
        .iter()
        .flat_map(|s| req.volume_fractions.iter().map(move |&vf| (s, vf)))
        .collect();
    let run = |&(spec, vf): &(&SupportSpec, f64)| {
        Problem::new(req.grid, spec, req.material, vf, req.settings).and_then(|p| optimize(&p))
    };
    let outcomes: Vec<Result<Alternative>> = if req.parallel <= 1 {
        pairs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(req.parallel)
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
        pool.install(|| pairs.par_iter().map(run).collect())
    };
    let mut result = SweepResult::default();
    for ((spec, vf), outcome) in pairs.iter().zip(outcomes) {
        match outcome {
            Ok(alt) => {
                log::info!(
                    "{}: {} iterations, converged={}, compliance={:.4e}",
                    alt.id,
                    alt.iterations,
                    alt.converged,
                    alt.compliance
                );
                result.alternatives.push(alt)
            }
            Err(e) => {
                log::warn!("{}: {e}", alternative_id(&spec.id, *vf));
                result.failures.push(Failure {
                    condition_id: spec.id.clone(),
                    volume_fraction: *vf,
                    error: e.to_string(),
                })
            }
        }
    }
    Ok(result)
}

/// Write every field (PGM + `f32` sidecar, raw and binary) and the manifest.
pub fn persist(dir: &Path, grid: &GridSpec, result: &SweepResult) -> Result<DatasetManifest> {
    let fields_dir = dir.join("fields");
    std::fs::create_dir_all(&fields_dir)?;
    let mut entries = Vec::with_capacity(result.alternatives.len());
    for alt in &result.alternatives {
        let files = FieldFiles {
            raw_pgm: format!("fields/{}_raw.pgm", alt.id),
            raw_f32: format!("fields/{}_raw.f32", alt.id),
            binary_pgm: format!("fields/{}_bin.pgm", alt.id),
            binary_f32: format!("fields/{}_bin.f32", alt.id),
        };
        pgm::write_pgm(&dir.join(&files.raw_pgm), grid.width, grid.height, &alt.raw_field.values)?;
        std::fs::write(dir.join(&files.raw_f32), pgm::encode_f32(&alt.raw_field.values))?;
        pgm::write_pgm(&dir.join(&files.binary_pgm), grid.width, grid.height, &alt.binary_field.values)?;
        std::fs::write(dir.join(&files.binary_f32), pgm::encode_f32(&alt.binary_field.values))?;
        entries.push(ManifestEntry {
            id: alt.id.clone(),
            condition_id: alt.condition_id.clone(),
            volume_fraction: alt.volume_fraction,
            iterations: alt.iterations,
            converged: alt.converged,
            compliance: alt.compliance,
            files,
        });
    }
    let manifest = DatasetManifest {
        grid: *grid,
        entries,
        failures: result.failures.clone(),
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub alternatives: Vec<Alternative>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE))?)?;
        let grid = manifest.grid;
        let read_field = |rel: &str| -> Result<DensityField> {
            DensityField::new(grid, pgm::decode_f32(&std::fs::read(dir.join(rel))?)?)
        };
        let alternatives = manifest
            .entries
            .iter()
            .map(|e| {
                Ok(Alternative {
                    id: e.id.clone(),
                    condition_id: e.condition_id.clone(),
                    volume_fraction: e.volume_fraction,
                    raw_field: read_field(&e.files.raw_f32)?,
                    binary_field: read_field(&e.files.binary_f32)?,
                    iterations: e.iterations,
                    converged: e.converged,
                    compliance: e.compliance,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            root: dir.to_path_buf(),
            manifest,
            alternatives,
        })
    }

    pub fn len(&self) -> usize {
        self.alternatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alternatives.is_empty()
    }
}
