//! The immutable artifact store: a validated bundle loaded once at startup.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use dci_core::pgm;
use dci_latent::io::{decode_weights, ModelCompanion, ModelKind};
use dci_latent::{Autoencoder, Embedding, GmmPrior};
use serde::de::DeserializeOwned;

use crate::bundle::*;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn read_json<T: DeserializeOwned>(root: &Path, rel: &str) -> Result<T> {
    let bytes = std::fs::read(root.join(rel)).map_err(|e| Error::Missing(format!("{rel}: {e}")))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse(format!("{rel}: {e}")))
}

/// Checks applied to any exported prior.
pub fn prior_violations(prior: &GmmPrior) -> Vec<String> {
    let mut problems = Vec::new();
    let sum: f64 = prior.weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        problems.push(format!("mixture weights sum to {sum}"));
    }
    if prior.weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
        problems.push("mixture weight outside [0, 1]".into());
    }
    if prior.means.len() != prior.k() || prior.variances.len() != prior.k() {
        problems.push("component count differs between weights, means and variances".into());
    }
    let d = prior.dim();
    if prior.means.iter().chain(&prior.variances).any(|v| v.len() != d) {
        problems.push("ragged component dimensions".into());
    }
    if prior.variances.iter().flatten().any(|&v| !(v > 0.0 && v.is_finite())) {
        problems.push("non-positive mixture variance".into());
    }
    problems
}

/// Every invariant the server relies on; an empty list means servable.
pub fn validate_bundle(root: &Path) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut flag = |path: &str, message: String| {
        out.push(Violation {
            path: path.to_string(),
            message,
        })
    };
    let meta: BundleMeta = match read_json(root, BUNDLE_FILE) {
        Ok(m) => m,
        Err(e) => {
            flag(BUNDLE_FILE, e.to_string());
            return out;
        }
    };
    if meta.format_version != FORMAT_VERSION {
        flag(BUNDLE_FILE, format!("format version {} (expected {FORMAT_VERSION})", meta.format_version));
    }
    for f in &meta.files {
        match sha256_file(&root.join(&f.path)) {
            Ok(d) if d == f.sha256 => {}
            Ok(d) => flag(&f.path, format!("digest mismatch: recorded {} found {d}", f.sha256)),
            Err(e) => flag(&f.path, format!("unreadable: {e}")),
        }
    }
    let n_px = meta.grid.n_elements();
    let dataset: Vec<AlternativeEntry> = match read_json(root, DATASET_FILE) {
        Ok(d) => d,
        Err(e) => {
            flag(DATASET_FILE, e.to_string());
            Vec::new()
        }
    };
    if dataset.len() != meta.n_alternatives {
        flag(DATASET_FILE, format!("{} entries, bundle declares {}", dataset.len(), meta.n_alternatives));
    }
    for e in &dataset {
        for (rel, binary) in [(&e.raw_f32, false), (&e.binary_f32, true)] {
            match std::fs::read(root.join(rel)).map_err(Error::from).and_then(|b| pgm::decode_f32(&b).map_err(Error::from)) {
                Ok(v) if v.len() != n_px => flag(rel, format!("{} values for a {n_px}-element grid", v.len())),
                Ok(v) if v.iter().any(|x| !(0.0..=1.0).contains(x)) => flag(rel, "density outside [0, 1]".into()),
                Ok(v) if binary && v.iter().any(|&x| x != 0.0 && x != 1.0) => flag(rel, "binarized field has intermediate values".into()),
                Ok(_) => {}
                Err(err) => flag(rel, err.to_string()),
            }
        }
        for rel in [&e.raw_pgm, &e.binary_pgm] {
            match std::fs::read(root.join(rel)).map_err(Error::from).and_then(|b| pgm::decode_pgm(&b).map_err(Error::from)) {
                Ok((w, h, _)) if (w, h) != (meta.grid.width, meta.grid.height) => flag(rel, format!("image is {w}x{h}")),
                Ok(_) => {}
                Err(err) => flag(rel, err.to_string()),
            }
        }
    }
    if let Err(e) = read_json::<CriteriaTable>(root, CRITERIA_FILE) {
        flag(CRITERIA_FILE, e.to_string());
    }
    for &k in &meta.k_values {
        let path = model_companion_path(k);
        match read_json::<ModelCompanion>(root, &path) {
            Ok(c) => match c.prior() {
                Some(prior) => {
                    for p in prior_violations(&prior) {
                        flag(&path, p);
                    }
                    if prior.k() != k || c.k != Some(k) {
                        flag(&path, format!("model has {} components, expected {k}", prior.k()));
                    }
                    if prior.dim() != meta.latent_dim || c.latent_dim != meta.latent_dim {
                        flag(&path, format!("latent dimension {} (bundle declares {})", c.latent_dim, meta.latent_dim));
                    }
                }
                None => flag(&path, "companion lacks the mixture prior".into()),
            },
            Err(e) => flag(&path, e.to_string()),
        }
        let path = clusters_path(k);
        match read_json::<Vec<Embedding>>(root, &path) {
            Ok(list) => {
                if list.len() != dataset.len() {
                    flag(&path, format!("{} embeddings for {} alternatives", list.len(), dataset.len()));
                }
                for e in &list {
                    let s: f64 = e.responsibilities.iter().sum();
                    if (s - 1.0).abs() > 1e-9 {
                        flag(&path, format!("responsibilities of {} sum to {s}", e.alternative_id));
                    }
                    if e.hard_label == 0 || e.hard_label > k {
                        flag(&path, format!("label {} of {} outside 1..={k}", e.hard_label, e.alternative_id));
                    }
                }
            }
            Err(e) => flag(&path, e.to_string()),
        }
        let path = tree_path(k);
        match read_json::<TreeExport>(root, &path) {
            Ok(t) => {
                for p in t.shape_violations() {
                    flag(&path, p);
                }
            }
            Err(e) => flag(&path, e.to_string()),
        }
    }
    out
}

#[derive(Debug)]
pub struct ModelEntry {
    pub k: usize,
    pub network: Autoencoder,
    pub prior: GmmPrior,
    pub companion: ModelCompanion,
    pub embeddings: Vec<Embedding>,
    pub tree: TreeExport,
    pub tree_text: String,
}

#[derive(Debug)]
pub struct ArtifactStore {
    pub root: PathBuf,
    pub meta: BundleMeta,
    pub dataset: Vec<AlternativeEntry>,
    index: HashMap<String, usize>,
    pub criteria: CriteriaTable,
    pub sweep: Option<SweepTable>,
    pub models: BTreeMap<usize, ModelEntry>,
}

impl ArtifactStore {
    /// Validates, then loads; refuses bundles with any violation.
    pub fn open(root: &Path) -> Result<Self> {
        let violations = validate_bundle(root);
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        let meta: BundleMeta = read_json(root, BUNDLE_FILE)?;
        let dataset: Vec<AlternativeEntry> = read_json(root, DATASET_FILE)?;
        let index = dataset.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        let criteria = read_json(root, CRITERIA_FILE)?;
        let sweep = read_json(root, SWEEP_FILE).ok();
        let mut models = BTreeMap::new();
        for &k in &meta.k_values {
            let companion: ModelCompanion = read_json(root, &model_companion_path(k))?;
            if companion.kind != ModelKind::Vade {
                return Err(Error::Parse(format!("model for k={k} is not a VaDE model")));
            }
            let weights = root.join(model_dir(k)).join(&companion.weights);
            let params = decode_weights(&std::fs::read(&weights)?)?;
            let network = Autoencoder::from_params(companion.architecture.clone(), companion.latent_dim, params)?;
            let prior = companion.prior().expect("validated above");
            let tree_text = std::fs::read_to_string(root.join(tree_text_path(k))).unwrap_or_default();
            models.insert(
                k,
                ModelEntry {
                    k,
                    network,
                    prior,
                    embeddings: read_json(root, &clusters_path(k))?,
                    tree: read_json(root, &tree_path(k))?,
                    tree_text,
                    companion,
                },
            );
        }
        Ok(Self {
            root: root.to_path_buf(),
            meta,
            dataset,
            index,
            criteria,
            sweep,
            models,
        })
    }

    pub fn alternative(&self, id: &str) -> Option<&AlternativeEntry> {
        self.index.get(id).map(|&i| &self.dataset[i])
    }

    pub fn model(&self, k: usize) -> Option<&ModelEntry> {
        self.models.get(&k)
    }

    pub fn read(&self, rel: &str) -> Result<Vec<u8>> {
        Ok(std::fs::read(self.root.join(rel))?)
    }

    pub fn read_field(&self, rel: &str) -> Result<Vec<f64>> {
        Ok(pgm::decode_f32(&self.read(rel)?)?)
    }
}
