//! Concept trees: clusters arranged as a product of binary logistic
//! classifications over standardized criteria.
//!
//! At every node all bipartitions of the node's cluster labels are fitted
//! with ridge-penalized logistic regression; the partition with the highest
//! penalized log-likelihood is kept and both sides recurse until each leaf
//! holds one cluster.

use serde::{Deserialize, Serialize};

use crate::criteria::CRITERIA_NAMES;
use crate::error::{Error, Result};

/// Feature vector `(1, f1, f2, f3, f4)` of one alternative with its cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub id: String,
    pub features: [f64; 5],
    pub label: usize,
}

impl LabeledPoint {
    pub fn new(id: impl Into<String>, normalized: [f64; 4], label: usize) -> Self {
        Self {
            id: id.into(),
            features: [1.0, normalized[0], normalized[1], normalized[2], normalized[3]],
            label,
        }
    }
}

pub type Partition = (Vec<usize>, Vec<usize>);

/// All unordered bipartitions into non-empty sides; `S1` always holds the
/// smallest label and the list is sorted lexicographically by `(S1, S2)`.
pub fn enumerate_bipartitions(clusters: &[usize]) -> Result<Vec<Partition>> {
    let mut labels = clusters.to_vec();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::SingletonClusterSet(labels));
    }
    if labels.len() > 20 {
        return Err(Error::Invalid(format!("{} clusters is too many to enumerate", labels.len())));
    }
    let rest = &labels[1..];
    let full = (1u32 << rest.len()) - 1;
    let mut out: Vec<Partition> = (0..full)
        .map(|mask| {
            let mut s1 = vec![labels[0]];
            let mut s2 = Vec::new();
            for (i, &l) in rest.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    s1.push(l);
                } else {
                    s2.push(l);
                }
            }
            (s1, s2)
        })
        .collect();
    out.sort();
    Ok(out)
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of a ridge-penalized logistic fit; the first feature is the
/// unpenalized intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub log_likelihood: f64,
    pub penalized: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// `sum [y ln s(w.x) + (1-y) ln(1 - s(w.x))]`
pub fn log_likelihood(rows: &[&[f64]], y: &[bool], w: &[f64]) -> f64 {
    rows.iter()
        .zip(y)
        .map(|(x, &yi)| {
            let s = dot(x, w);
            if yi {
                -softplus(-s)
            } else {
                -softplus(s)
            }
        })
        .sum()
}

/// Log-likelihood minus `lambda/2 * |w_1..|^2`.
pub fn penalized_objective(rows: &[&[f64]], y: &[bool], w: &[f64], lambda: f64) -> f64 {
    log_likelihood(rows, y, w) - 0.5 * lambda * w[1..].iter().map(|v| v * v).sum::<f64>()
}

fn penalized_gradient(rows: &[&[f64]], y: &[bool], w: &[f64], lambda: f64) -> Vec<f64> {
    let mut g: Vec<f64> = w.iter().enumerate().map(|(j, wj)| if j == 0 { 0.0 } else { -lambda * wj }).collect();
    for (x, &yi) in rows.iter().zip(y) {
        let r = yi as u8 as f64 - sigmoid(dot(x, w));
        for (gj, xj) in g.iter_mut().zip(x.iter()) {
            *gj += r * xj;
        }
    }
    g
}

/// Solve the SPD system `a d = b` by Cholesky; `None` if not positive definite.
fn cholesky_solve(mut a: Vec<Vec<f64>>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= a[i][k] * z[k];
        }
        z[i] /= a[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= a[k][i] * z[k];
        }
        z[i] /= a[i][i];
    }
    Some(z)
}

pub const MAX_NEWTON_ITERATIONS: usize = 200;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;

/// Damped Newton (IRLS) maximization of the penalized log-likelihood.
pub fn fit_logistic_rows(rows: &[&[f64]], y: &[bool], lambda: f64) -> Result<LogisticFit> {
    let dim = rows.first().map_or(0, |r| r.len());
    if dim == 0 || rows.len() != y.len() {
        return Err(Error::Invalid("empty or mismatched design matrix".into()));
    }
    let mut w = vec![0.0; dim];
    let mut obj = penalized_objective(rows, y, &w, lambda);
    let mut grad = penalized_gradient(rows, y, &w, lambda);
    let mut iterations = 0;
    loop {
        let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < GRADIENT_TOLERANCE {
            return Ok(LogisticFit {
                log_likelihood: log_likelihood(rows, y, &w),
                penalized: obj,
                weights: w,
                iterations,
                grad_norm: gnorm,
            });
        }
        if iterations == MAX_NEWTON_ITERATIONS {
            return Err(Error::NoConvergence {
                iterations,
                grad_norm: gnorm,
                weights: w,
            });
        }
        iterations += 1;

        let mut h = vec![vec![0.0; dim]; dim];
        for (j, row) in h.iter_mut().enumerate().skip(1) {
            row[j] = lambda;
        }
        for x in rows {
            let p = sigmoid(dot(x, &w));
            let s = p * (1.0 - p);
            for i in 0..dim {
                for j in 0..=i {
                    h[i][j] += s * x[i] * x[j];
                }
            }
        }
        for i in 0..dim {
            for j in 0..i {
                h[j][i] = h[i][j];
            }
        }
        // saturated probabilities can make the intercept block singular
        let step = cholesky_solve(h.clone(), &grad).or_else(|| {
            let mut jittered = h;
            for (i, row) in jittered.iter_mut().enumerate() {
                row[i] += 1e-10;
            }
            cholesky_solve(jittered, &grad)
        });
        let step = step.unwrap_or_else(|| grad.clone());

        // Near the optimum the ascent of a Newton step is below the rounding
        // error of the objective sum, so compare with that much slack.
        let slack = 1e-12 * (1.0 + obj.abs());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(&step).map(|(a, d)| a + t * d).collect();
            let trial_obj = penalized_objective(rows, y, &trial, lambda);
            if trial_obj >= obj - slack {
                w = trial;
                obj = trial_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        grad = penalized_gradient(rows, y, &w, lambda);
        if !accepted {
            // no ascent left at machine precision
            let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
            return Err(Error::NoConvergence {
                iterations,
                grad_norm: gnorm,
                weights: w,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitModel {
    pub s1: Vec<usize>,
    pub s2: Vec<usize>,
    /// `(w0, w1, w2, w3, w4)`
    pub weights: Vec<f64>,
    /// Unpenalized log-likelihood.
    pub log_likelihood: f64,
    /// Selection objective.
    pub penalized_log_likelihood: f64,
    /// Training accuracy of the sign rule `w.f >= 0 <=> S1`.
    pub accuracy: f64,
    pub majority_baseline: f64,
    pub n_points: usize,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl SplitModel {
    pub fn decision(&self, features: &[f64]) -> f64 {
        dot(&self.weights, features)
    }

    pub fn classify(&self, features: &[f64]) -> bool {
        self.decision(features) >= 0.0
    }
}

pub fn fit_logistic(points: &[LabeledPoint], partition: &Partition, lambda: f64) -> Result<SplitModel> {
    let (s1, s2) = partition;
    let members: Vec<&LabeledPoint> = points
        .iter()
        .filter(|p| s1.contains(&p.label) || s2.contains(&p.label))
        .collect();
    let y: Vec<bool> = members.iter().map(|p| s1.contains(&p.label)).collect();
    let n1 = y.iter().filter(|&&v| v).count();
    if n1 == 0 {
        return Err(Error::EmptyPartitionSide(s1.clone()));
    }
    if n1 == y.len() {
        return Err(Error::EmptyPartitionSide(s2.clone()));
    }
    let rows: Vec<&[f64]> = members.iter().map(|p| &p.features[..]).collect();
    let fit = fit_logistic_rows(&rows, &y, lambda)?;
    let correct = rows
        .iter()
        .zip(&y)
        .filter(|(x, &yi)| (dot(x, &fit.weights) >= 0.0) == yi)
        .count();
    let n = y.len() as f64;
    Ok(SplitModel {
        s1: s1.clone(),
        s2: s2.clone(),
        weights: fit.weights,
        log_likelihood: fit.log_likelihood,
        penalized_log_likelihood: fit.penalized,
        accuracy: correct as f64 / n,
        majority_baseline: n1.max(y.len() - n1) as f64 / n,
        n_points: y.len(),
        iterations: fit.iterations,
        grad_norm: fit.grad_norm,
    })
}

/// One evaluated candidate of an exhaustive split search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub s1: Vec<usize>,
    pub s2: Vec<usize>,
    pub penalized_log_likelihood: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSearch {
    pub best: SplitModel,
    pub candidates: Vec<CandidateRecord>,
}

/// Fit every bipartition of `clusters` and keep the best penalized
/// log-likelihood; earlier canonical partitions win ties.
pub fn select_best_split(points: &[LabeledPoint], clusters: &[usize], lambda: f64) -> Result<SplitSearch> {
    let mut best: Option<SplitModel> = None;
    let mut candidates = Vec::new();
    for partition in enumerate_bipartitions(clusters)? {
        match fit_logistic(points, &partition, lambda) {
            Ok(model) => {
                candidates.push(CandidateRecord {
                    s1: partition.0.clone(),
                    s2: partition.1.clone(),
                    penalized_log_likelihood: Some(model.penalized_log_likelihood),
                    error: None,
                });
                if best
                    .as_ref()
                    .map_or(true, |b| model.penalized_log_likelihood > b.penalized_log_likelihood)
                {
                    best = Some(model);
                }
            }
            Err(e) => {
                log::warn!("split {:?} | {:?} failed: {e}", partition.0, partition.1);
                candidates.push(CandidateRecord {
                    s1: partition.0,
                    s2: partition.1,
                    penalized_log_likelihood: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let best = best.ok_or(Error::AllSplitsFailed)?;
    Ok(SplitSearch { best, candidates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionEffect {
    pub criterion: String,
    pub name: String,
    pub weight: f64,
    /// Side that a larger value of this criterion pushes toward.
    pub larger_pushes_toward: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    /// Non-zero criteria ranked by `|w_i|` descending.
    pub ranking: Vec<CriterionEffect>,
    /// Criteria with `|w_i| >= 0.5 max |w|`.
    pub dominant: Vec<String>,
    pub summary: String,
}

pub const CRITERIA_LABELS: [&str; 4] = [
    "mean compliance",
    "material volume",
    "material centroid height",
    "supporting point height",
];

pub fn interpret_node(split: &SplitModel) -> Interpretation {
    let mut ranking: Vec<CriterionEffect> = (0..4)
        .filter(|&k| split.weights[k + 1] != 0.0)
        .map(|k| {
            let w = split.weights[k + 1];
            CriterionEffect {
                criterion: CRITERIA_NAMES[k].to_string(),
                name: CRITERIA_LABELS[k].to_string(),
                weight: w,
                larger_pushes_toward: if w > 0.0 { "S1" } else { "S2" }.to_string(),
            }
        })
        .collect();
    ranking.sort_by(|a, b| b.weight.abs().total_cmp(&a.weight.abs()));
    let Some(top) = ranking.first().map(|e| e.weight.abs()) else {
        return Interpretation {
            ranking,
            dominant: Vec::new(),
            summary: format!(
                "intercept only ({:+.2}): no criterion separates {:?} from {:?}",
                split.weights[0], split.s1, split.s2
            ),
        };
    };
    let dominant: Vec<&CriterionEffect> = ranking.iter().filter(|e| e.weight.abs() >= 0.5 * top).collect();
    let phrases: Vec<String> = dominant
        .iter()
        .map(|e| format!("{} {}", if e.weight > 0.0 { "higher" } else { "lower" }, e.name))
        .collect();
    Interpretation {
        dominant: dominant.iter().map(|e| e.criterion.clone()).collect(),
        summary: format!("{:?} has {} compared with {:?}", split.s1, phrases.join(" and "), split.s2),
        ranking,
    }
}

/// Binary tree node; a leaf holds exactly one cluster and no split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub clusters: Vec<usize>,
    pub n_points: usize,
    pub split: Option<SplitModel>,
    pub interpretation: Option<Interpretation>,
    /// `accuracy <= majority_baseline`
    pub flagged: bool,
    pub n_candidates: usize,
    /// `[S1 side (w.f >= 0), S2 side]`, empty for leaves.
    pub children: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptTree {
    pub k: usize,
    pub lambda: f64,
    pub root: TreeNode,
    /// Labels of `1..=k` that no point carries; only [`build_tree_over`] leaves any.
    pub absent: Vec<usize>,
}

fn build_node(points: &[LabeledPoint], clusters: Vec<usize>, lambda: f64) -> Result<TreeNode> {
    let local: Vec<LabeledPoint> = points.iter().filter(|p| clusters.contains(&p.label)).cloned().collect();
    if clusters.len() == 1 {
        return Ok(TreeNode {
            clusters,
            n_points: local.len(),
            split: None,
            interpretation: None,
            flagged: false,
            n_candidates: 0,
            children: Vec::new(),
        });
    }
    let search = select_best_split(&local, &clusters, lambda)?;
    let best = search.best;
    let yes = build_node(&local, best.s1.clone(), lambda)?;
    let no = build_node(&local, best.s2.clone(), lambda)?;
    let flagged = best.accuracy <= best.majority_baseline;
    if flagged {
        log::warn!("split {:?} | {:?} does not beat its majority baseline", best.s1, best.s2);
    }
    Ok(TreeNode {
        clusters,
        n_points: local.len(),
        interpretation: Some(interpret_node(&best)),
        split: Some(best),
        flagged,
        n_candidates: search.candidates.len(),
        children: vec![yes, no],
    })
}

/// Recursive exhaustive-split tree over labels `1..=k`.
pub fn build_tree(points: &[LabeledPoint], k: usize, lambda: f64) -> Result<ConceptTree> {
    for label in 1..=k {
        if !points.iter().any(|p| p.label == label) {
            return Err(Error::MissingLabel(label));
        }
    }
    if let Some(p) = points.iter().find(|p| p.label == 0 || p.label > k) {
        return Err(Error::Invalid(format!("label {} of `{}` outside 1..={k}", p.label, p.id)));
    }
    Ok(ConceptTree {
        k,
        lambda,
        root: build_node(points, (1..=k).collect(), lambda)?,
        absent: Vec::new(),
    })
}

/// Like [`build_tree`], but clusters that hold no points are set aside in
/// [`ConceptTree::absent`] and the tree is built over the populated ones.
pub fn build_tree_over(points: &[LabeledPoint], k: usize, lambda: f64) -> Result<ConceptTree> {
    if let Some(p) = points.iter().find(|p| p.label == 0 || p.label > k) {
        return Err(Error::Invalid(format!("label {} of `{}` outside 1..={k}", p.label, p.id)));
    }
    let (present, absent): (Vec<usize>, Vec<usize>) = (1..=k).partition(|l| points.iter().any(|p| p.label == *l));
    if present.is_empty() {
        return Err(Error::Invalid("no labeled points".into()));
    }
    Ok(ConceptTree {
        k,
        lambda,
        root: build_node(points, present, lambda)?,
        absent,
    })
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn leaves(&self) -> Vec<usize> {
        if self.is_leaf() {
            self.clusters.clone()
        } else {
            self.children.iter().flat_map(|c| c.leaves()).collect()
        }
    }

    pub fn internal_count(&self) -> usize {
        if self.is_leaf() {
            0
        } else {
            1 + self.children.iter().map(|c| c.internal_count()).sum::<usize>()
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a TreeNode)) {
        f(self);
        for c in &self.children {
            c.visit(f);
        }
    }
}

impl ConceptTree {
    /// Follow the sign rule from the root to a leaf label.
    pub fn route(&self, features: &[f64]) -> usize {
        let mut node = &self.root;
        while let Some(split) = &node.split {
            node = &node.children[if split.classify(features) { 0 } else { 1 }];
        }
        node.clusters[0]
    }

    /// Human-readable layout: the node's clusters, the classifier, its
    /// accuracy and the interpretation, children indented beneath.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        render(&self.root, 0, "", &mut out);
        if !self.absent.is_empty() {
            out += &format!("clusters without points (not in the tree): {:?}\n", self.absent);
        }
        out
    }
}

fn render(node: &TreeNode, depth: usize, edge: &str, out: &mut String) {
    let pad = "    ".repeat(depth);
    let set = node.clusters.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ");
    match &node.split {
        None => out.push_str(&format!("{pad}{edge}Concept {set} (n={})\n", node.n_points)),
        Some(s) => {
            let w = &s.weights;
            out.push_str(&format!("{pad}{edge}[Concepts {set}] (n={})\n", node.n_points));
            out.push_str(&format!(
                "{pad}  {:.2} {:+.2} f1 {:+.2} f2 {:+.2} f3 {:+.2} f4 >= 0  =>  {:?} vs {:?}\n",
                w[0], w[1], w[2], w[3], w[4], s.s1, s.s2
            ));
            out.push_str(&format!(
                "{pad}  accuracy {:.3} (majority {:.3}){}\n",
                s.accuracy,
                s.majority_baseline,
                if node.flagged { " FLAGGED" } else { "" }
            ));
            if let Some(i) = &node.interpretation {
                out.push_str(&format!("{pad}  \"{}\"\n", i.summary));
            }
            render(&node.children[0], depth + 1, "True:  ", out);
            render(&node.children[1], depth + 1, "False: ", out);
        }
    }
}

/// Counts of `(label_a, label_b)` co-occurrences, labels 1-based.
pub fn contingency(a: &[usize], ka: usize, b: &[usize], kb: usize) -> Vec<Vec<usize>> {
    let mut table = vec![vec![0; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        if (1..=ka).contains(&x) && (1..=kb).contains(&y) {
            table[x - 1][y - 1] += 1;
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split_with(weights: Vec<f64>) -> SplitModel {
        SplitModel {
            s1: vec![1],
            s2: vec![2, 3, 5],
            weights,
            log_likelihood: 0.0,
            penalized_log_likelihood: 0.0,
            accuracy: 1.0,
            majority_baseline: 0.5,
            n_points: 2,
            iterations: 0,
            grad_norm: 0.0,
        }
    }

    #[test]
    fn bipartition_counts() {
        assert_eq!(enumerate_bipartitions(&[1, 2, 3, 4, 5]).unwrap().len(), 15);
        assert_eq!(enumerate_bipartitions(&[1, 2, 3]).unwrap().len(), 3);
        assert_eq!(enumerate_bipartitions(&[5, 2]).unwrap(), vec![(vec![2], vec![5])]);
        assert!(matches!(enumerate_bipartitions(&[4]), Err(Error::SingletonClusterSet(_))));
        for m in 2..=8usize {
            let set: Vec<usize> = (1..=m).collect();
            let parts = enumerate_bipartitions(&set).unwrap();
            assert_eq!(parts.len(), (1 << (m - 1)) - 1);
            for (s1, s2) in &parts {
                assert_eq!(s1[0], 1);
                let mut all: Vec<usize> = s1.iter().chain(s2).copied().collect();
                all.sort();
                assert_eq!(all, set);
            }
            assert!(parts.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn interpretation_matches_second_bridge_classifier() {
        let i = interpret_node(&split_with(vec![-8.81, -0.70, 0.86, -15.49, 9.20]));
        assert_eq!(i.dominant, vec!["f3", "f4"]);
        assert_eq!(i.ranking[0].criterion, "f3");
        assert_eq!(i.ranking[0].larger_pushes_toward, "S2");
        assert_eq!(i.ranking[1].larger_pushes_toward, "S1");
        assert!(i.summary.contains("lower material centroid height and higher supporting point height"));
    }

    #[test]
    fn intercept_only_interpretation() {
        let i = interpret_node(&split_with(vec![0.4, 0.0, 0.0, 0.0, 0.0]));
        assert!(i.ranking.is_empty());
        assert!(i.summary.starts_with("intercept only"));
    }

    #[test]
    fn positive_scaling_keeps_interpretation() {
        let base = interpret_node(&split_with(vec![1.0, -2.0, 0.5, 3.0, -0.1]));
        let scaled = interpret_node(&split_with(vec![3.7, -7.4, 1.85, 11.1, -0.37]));
        let names = |i: &Interpretation| i.ranking.iter().map(|e| (e.criterion.clone(), e.larger_pushes_toward.clone())).collect::<Vec<_>>();
        assert_eq!(names(&base), names(&scaled));
        assert_eq!(base.dominant, scaled.dominant);
    }

    #[test]
    fn decision_boundary_is_one_half() {
        let s = split_with(vec![1.0, 2.0, 0.0, 0.0, 0.0]);
        let f = [1.0, -0.5, 0.0, 0.0, 0.0];
        assert_eq!(s.decision(&f), 0.0);
        assert_eq!(sigmoid(s.decision(&f)), 0.5);
        assert!(s.classify(&f));
    }

    #[test]
    fn contingency_counts() {
        let t = contingency(&[1, 1, 2, 3], 3, &[1, 2, 4, 4], 5);
        assert_eq!(t[0], vec![1, 1, 0, 0, 0]);
        assert_eq!(t[2][3], 1);
    }
}
