//! On-disk schema of the explorer bundle, shared by the exporter and the
//! server, plus the canonical JSON and digest helpers both sides rely on.

use std::path::Path;

use dci_core::criteria::NormalizationStats;
use dci_core::tree::{ConceptTree, Interpretation, TreeNode};
use dci_core::GridSpec;
use dci_latent::train::SweepRow;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const BUNDLE_FILE: &str = "bundle.json";
pub const FORMAT_VERSION: u32 = 1;
/// Significant digits kept for every float in exported JSON.
pub const JSON_DIGITS: usize = 9;

pub const DATASET_FILE: &str = "dataset.json";
pub const CRITERIA_FILE: &str = "criteria.json";
pub const CRITERIA_CSV: &str = "criteria.csv";
pub const SWEEP_FILE: &str = "sweep.json";
pub const SWEEP_PLOT: &str = "sweep.svg";

pub fn model_dir(k: usize) -> String {
    format!("k{k}")
}

pub fn model_companion_path(k: usize) -> String {
    format!("k{k}/model.json")
}

pub fn clusters_path(k: usize) -> String {
    format!("k{k}/clusters.json")
}

pub fn tree_path(k: usize) -> String {
    format!("k{k}/tree.json")
}

pub fn tree_text_path(k: usize) -> String {
    format!("k{k}/tree.txt")
}

/// `cluster` is 1-based.
pub fn representative_path(k: usize, cluster: usize) -> String {
    format!("k{k}/representatives/c{cluster}.pgm")
}

/// Montage: one row per latent dimension, one column per traversal step.
pub fn traversal_path(k: usize, cluster: usize) -> String {
    format!("k{k}/traversal/c{cluster}.pgm")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format_version: u32,
    pub tool_version: String,
    pub grid: GridSpec,
    pub n_alternatives: usize,
    pub latent_dim: usize,
    pub k_values: Vec<usize>,
    pub seed: u64,
    pub traversal_range: [f64; 2],
    pub traversal_steps: usize,
    /// Full pipeline configuration the bundle was produced from.
    pub config: serde_json::Value,
    /// Every other file of the bundle, sorted by path.
    pub files: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternativeEntry {
    pub id: String,
    pub condition_id: String,
    pub volume_fraction: f64,
    pub iterations: usize,
    pub converged: bool,
    pub compliance: f64,
    pub raw_pgm: String,
    pub raw_f32: String,
    pub binary_pgm: String,
    pub binary_f32: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaRow {
    pub id: String,
    pub condition_id: String,
    pub volume_fraction: f64,
    pub raw: [f64; 4],
    pub normalized: [f64; 4],
    pub compliance_outlier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaTable {
    pub names: Vec<String>,
    pub eval_condition: String,
    pub stats: NormalizationStats,
    pub rows: Vec<CriteriaRow>,
    pub excluded: Vec<Excluded>,
}

impl CriteriaTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,condition,vf,f1,f2,f3,f4,f1_norm,f2_norm,f3_norm,f4_norm\n");
        for r in &self.rows {
            let nums: Vec<String> = r.raw.iter().chain(&r.normalized).map(|v| format_sig(*v)).collect();
            out += &format!("{},{},{},{}\n", r.id, r.condition_id, format_sig(r.volume_fraction), nums.join(","));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNodeExport {
    pub clusters: Vec<usize>,
    pub n_points: usize,
    /// `(S1, S2)`; S1 is the side with `w . f >= 0`.
    pub partition: Option<(Vec<usize>, Vec<usize>)>,
    /// `(w0, w1, w2, w3, w4)`
    pub weights: Option<Vec<f64>>,
    pub log_likelihood: Option<f64>,
    pub penalized_log_likelihood: Option<f64>,
    pub accuracy: Option<f64>,
    pub majority_baseline: Option<f64>,
    pub interpretation: Option<Interpretation>,
    pub flagged: bool,
    pub n_candidates: usize,
    pub children: Vec<TreeNodeExport>,
}

impl TreeNodeExport {
    pub fn from_node(node: &TreeNode) -> Self {
        let split = node.split.as_ref();
        Self {
            clusters: node.clusters.clone(),
            n_points: node.n_points,
            partition: split.map(|s| (s.s1.clone(), s.s2.clone())),
            weights: split.map(|s| s.weights.clone()),
            log_likelihood: split.map(|s| s.log_likelihood),
            penalized_log_likelihood: split.map(|s| s.penalized_log_likelihood),
            accuracy: split.map(|s| s.accuracy),
            majority_baseline: split.map(|s| s.majority_baseline),
            interpretation: node.interpretation.clone(),
            flagged: node.flagged,
            n_candidates: node.n_candidates,
            children: node.children.iter().map(Self::from_node).collect(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a TreeNodeExport)) {
        f(self);
        for c in &self.children {
            c.visit(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeExport {
    pub k: usize,
    pub lambda: f64,
    pub root: TreeNodeExport,
    /// Clusters with no labeled points, left out of the tree.
    #[serde(default)]
    pub absent: Vec<usize>,
}

impl TreeExport {
    pub fn from_tree(tree: &ConceptTree) -> Self {
        Self {
            k: tree.k,
            lambda: tree.lambda,
            root: TreeNodeExport::from_node(&tree.root),
            absent: tree.absent.clone(),
        }
    }

    /// Shape problems: leaves must be the singletons `1..=k`, every internal
    /// node must split its clusters into two disjoint non-empty halves.
    pub fn shape_violations(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut leaves = Vec::new();
        let mut internal = 0;
        self.root.visit(&mut |n| {
            if n.is_leaf() {
                if n.clusters.len() != 1 {
                    problems.push(format!("leaf holds clusters {:?}", n.clusters));
                }
                leaves.extend(n.clusters.iter().copied());
                return;
            }
            internal += 1;
            match (&n.partition, n.children.as_slice()) {
                (Some((s1, s2)), [a, b]) => {
                    let mut union: Vec<usize> = s1.iter().chain(s2).copied().collect();
                    union.sort_unstable();
                    let mut own = n.clusters.clone();
                    own.sort_unstable();
                    if s1.is_empty() || s2.is_empty() || union != own {
                        problems.push(format!("node {:?} split into {s1:?} | {s2:?}", n.clusters));
                    }
                    if &a.clusters != s1 || &b.clusters != s2 {
                        problems.push(format!("children of {:?} do not follow its partition", n.clusters));
                    }
                }
                _ => problems.push(format!("internal node {:?} lacks a two-way split", n.clusters)),
            }
        });
        let n_leaves = leaves.len();
        leaves.extend(self.absent.iter().copied());
        leaves.sort_unstable();
        if leaves != (1..=self.k).collect::<Vec<_>>() {
            problems.push(format!("leaves {leaves:?} with absent {:?} are not 1..={}", self.absent, self.k));
        }
        if internal + 1 != n_leaves {
            problems.push(format!("{internal} internal nodes for {n_leaves} leaves"));
        }
        problems
    }
}

/// `x` rounded to [`JSON_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", JSON_DIGITS - 1, x).parse().unwrap_or(x)
}

fn format_sig(x: f64) -> String {
    let r = round_sig(x);
    if r.is_finite() {
        format!("{r}")
    } else {
        String::from("nan")
    }
}

/// Rounds a probability vector to [`JSON_DIGITS`] digits while keeping its
/// printed sum within one rounding unit of 1: the largest entry absorbs the
/// residual.
pub fn round_simplex(p: &mut [f64]) {
    if p.is_empty() {
        return;
    }
    let top = p.iter().enumerate().fold(0, |best, (i, &v)| if v > p[best] { i } else { best });
    let mut rest = 0.0;
    for (i, v) in p.iter_mut().enumerate() {
        if i != top {
            *v = round_sig(*v);
            rest += *v;
        }
    }
    p[top] = round_sig(1.0 - rest);
}

pub fn round_json(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Number(n) if n.is_f64() => {
            if let Some(v) = n.as_f64().and_then(|x| serde_json::Number::from_f64(round_sig(x))) {
                *n = v;
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_json),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Pretty JSON with sorted keys and fixed-precision floats, newline-terminated.
pub fn canonical_json<T: Serialize>(value: &T) -> serde_json::Result<Vec<u8>> {
    let mut v = serde_json::to_value(value)?;
    round_json(&mut v);
    let mut bytes = serde_json::to_vec_pretty(&v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    use std::io::Read;
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
