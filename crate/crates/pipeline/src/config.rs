//! The single JSON configuration document. Every constant of the method is
//! a default here and can be overridden per run.

use std::path::{Path, PathBuf};

use dci_core::catalog::{self, SupportSpec};
use dci_core::criteria::CriteriaSettings;
use dci_core::fem::MaterialModel;
use dci_core::topo::OptimizerSettings;
use dci_core::GridSpec;
use dci_latent::gmm::EmSettings;
use dci_latent::{Architecture, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Elements per side of the square domain.
    pub grid_size: usize,
    /// Support catalog; `None` uses the built-in A0, B1..B10 catalog for the grid.
    pub catalog: Option<Vec<SupportSpec>>,
    /// Condition ids to sweep; empty means every catalog entry.
    pub conditions: Vec<String>,
    pub vf_start: f64,
    pub vf_end: f64,
    pub vf_step: f64,
    pub material: MaterialModel,
    pub optimizer: OptimizerSettings,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            grid_size: 80,
            catalog: None,
            conditions: Vec::new(),
            vf_start: 0.02,
            vf_end: 0.20,
            vf_step: 0.01,
            material: MaterialModel::default(),
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl GenerationConfig {
    pub fn grid(&self) -> GridSpec {
        GridSpec::square(self.grid_size)
    }

    pub fn catalog(&self) -> Vec<SupportSpec> {
        self.catalog.clone().unwrap_or_else(|| catalog::default_catalog(&self.grid()))
    }

    pub fn condition_ids(&self) -> Vec<String> {
        if self.conditions.is_empty() {
            self.catalog().into_iter().map(|s| s.id).collect()
        } else {
            self.conditions.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub architecture: Architecture,
    /// Latent dimensions of the VAE sweep.
    pub dims: Vec<usize>,
    /// Latent dimension of the VaDE models; its sweep VAE is the pretrained start.
    pub vade_dim: usize,
    pub k_values: Vec<usize>,
    pub vae: TrainConfig,
    pub vade: TrainConfig,
    pub em: EmSettings,
    pub traversal_range: [f64; 2],
    pub traversal_steps: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::default(),
            dims: vec![2, 3, 4, 5, 6, 7, 10, 15, 20],
            vade_dim: 5,
            k_values: vec![3, 5, 7],
            vae: TrainConfig::default(),
            vade: TrainConfig::vade_default(),
            em: EmSettings::default(),
            traversal_range: [-10.0, 10.0],
            traversal_steps: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub lambda: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { lambda: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_root: PathBuf,
    /// Master seed; per-model seeds are derived from it and recorded.
    pub seed: u64,
    /// Worker threads for the topology sweep.
    pub parallel: usize,
    pub generation: GenerationConfig,
    pub training: TrainingConfig,
    pub criteria: CriteriaSettings,
    pub tree: TreeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output_root: PathBuf::from("runs/default"),
            seed: 0,
            parallel: 1,
            generation: GenerationConfig::default(),
            training: TrainingConfig::default(),
            criteria: CriteriaSettings::default(),
            tree: TreeConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_slice(&bytes).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn vae_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.training.vae.clone()
        }
    }

    pub fn vade_config(&self, k: usize) -> TrainConfig {
        TrainConfig {
            seed: self.seed.wrapping_add(2000 + k as u64),
            ..self.training.vade.clone()
        }
    }

    pub fn em_settings(&self, k: usize) -> EmSettings {
        EmSettings {
            seed: self.seed.wrapping_add(1000 + 100 * k as u64),
            ..self.training.em.clone()
        }
    }

    /// Rejects configurations that could never run, before any stage starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let g = &self.generation;
        if g.grid_size < 4 || g.grid_size % 2 != 0 {
            return bad(format!("grid_size {} must be even and at least 4", g.grid_size));
        }
        g.material.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let grid = g.grid();
        let catalog = g.catalog();
        for spec in &catalog {
            catalog::SupportCondition::from_spec(spec, &grid).map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        for id in g.condition_ids() {
            if !catalog.iter().any(|s| s.id == id) {
                return bad(format!("condition `{id}` is not in the catalog"));
            }
        }
        let vfs = dci_core::dataset::volume_fractions(g.vf_start, g.vf_end, g.vf_step).map_err(|e| PipelineError::Config(e.to_string()))?;
        if vfs.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return bad("volume fractions must lie strictly between 0 and 1".into());
        }
        if !catalog.iter().any(|s| s.id == self.criteria.eval_condition) {
            return bad(format!("evaluation condition `{}` is not in the catalog", self.criteria.eval_condition));
        }
        let t = &self.training;
        if t.architecture.input_size != g.grid_size {
            return bad(format!(
                "architecture input_size {} differs from grid_size {}",
                t.architecture.input_size, g.grid_size
            ));
        }
        t.architecture.sizes().map_err(|e| PipelineError::Config(e.to_string()))?;
        if t.dims.is_empty() || t.dims.contains(&0) {
            return bad("training.dims must be non-empty and positive".into());
        }
        if !t.dims.contains(&t.vade_dim) {
            return bad(format!("vade_dim {} must be one of the sweep dims {:?}", t.vade_dim, t.dims));
        }
        if t.k_values.is_empty() || t.k_values.iter().any(|&k| k < 2) {
            return bad("k_values must be non-empty with every K >= 2".into());
        }
        t.vae.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        t.vade.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if t.traversal_steps < 2 || !(t.traversal_range[0] < t.traversal_range[1]) {
            return bad("traversal needs at least 2 steps over a non-empty range".into());
        }
        if !(self.tree.lambda >= 0.0 && self.tree.lambda.is_finite()) {
            return bad(format!("tree.lambda {} must be non-negative", self.tree.lambda));
        }
        if self.parallel == 0 {
            return bad("parallel must be at least 1".into());
        }
        Ok(())
    }
}
