mod support;

use dci_core::tree::{
    build_tree, build_tree_over, enumerate_bipartitions, fit_logistic, fit_logistic_rows, penalized_objective, select_best_split,
    LabeledPoint, TreeNode,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn two_point_fit_matches_grid_search() {
    let lambda = 0.1;
    let pts = [(-1.0, false), (1.0, true)];
    let rows: Vec<[f64; 2]> = pts.iter().map(|&(f, _)| [1.0, f]).collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let y: Vec<bool> = pts.iter().map(|p| p.1).collect();
    let fit = fit_logistic_rows(&refs, &y, lambda).unwrap();
    let (w0, w1) = support::logistic_grid_search(&pts, lambda, 20.0, 1e-2);
    assert!((fit.weights[0] - w0).abs() <= 2e-2, "w0 {} vs grid {w0}", fit.weights[0]);
    assert!((fit.weights[1] - w1).abs() <= 2e-2, "w1 {} vs grid {w1}", fit.weights[1]);
    assert!(fit.grad_norm <= 1e-6);
    let ours = penalized_objective(&refs, &y, &fit.weights, lambda);
    assert!(ours >= support::logistic_objective_1d(&pts, w0, w1, lambda) - 1e-12);
}

fn blobs(centers: &[[f64; 4]], per: usize, spread: f64, seed: u64) -> Vec<LabeledPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).unwrap();
    let mut out = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for i in 0..per {
            let f = std::array::from_fn(|j| center[j] + noise.sample(&mut rng));
            out.push(LabeledPoint::new(format!("c{c}-{i}"), f, c + 1));
        }
    }
    out
}

#[test]
fn far_cluster_is_split_off_first() {
    let pts = blobs(&[[0.0; 4], [0.05, 0.0, 0.0, 0.0], [4.0, 4.0, -4.0, 4.0]], 30, 0.5, 3);
    let search = select_best_split(&pts, &[1, 2, 3], 1e-2).unwrap();
    let (s1, s2) = (&search.best.s1, &search.best.s2);
    assert_eq!((s1.as_slice(), s2.as_slice()), (&[1, 2][..], &[3][..]));
}

/// Second, independent pass over every bipartition.
fn check_exhaustive(points: &[LabeledPoint], clusters: &[usize], lambda: f64) {
    let search = select_best_split(points, clusters, lambda).unwrap();
    let parts = enumerate_bipartitions(clusters).unwrap();
    assert_eq!(parts.len(), (1usize << (clusters.len() - 1)) - 1);
    for part in &parts {
        let m = fit_logistic(points, part, lambda).unwrap();
        assert!(
            search.best.penalized_log_likelihood >= m.penalized_log_likelihood,
            "{part:?} beats the selected split"
        );
        assert!(m.grad_norm <= 1e-6, "{part:?}: gradient norm {}", m.grad_norm);
    }
}

#[test]
fn selected_split_is_best_on_re_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let centers: Vec<[f64; 4]> = (0..5).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect();
    let pts = blobs(&centers, 25, 0.8, 17);
    check_exhaustive(&pts, &[1, 2, 3, 4, 5], 1e-2);
}

fn check_shape(node: &TreeNode, leaves: &mut Vec<usize>, internal: &mut usize) {
    if node.children.is_empty() {
        assert_eq!(node.clusters.len(), 1);
        leaves.push(node.clusters[0]);
        return;
    }
    *internal += 1;
    let split = node.split.as_ref().unwrap();
    assert_eq!(node.children[0].clusters, split.s1);
    assert_eq!(node.children[1].clusters, split.s2);
    assert_eq!(node.flagged, split.accuracy <= split.majority_baseline);
    for c in &node.children {
        check_shape(c, leaves, internal);
    }
}

#[test]
fn flipping_labels_negates_the_weights() {
    let pts = blobs(&[[0.0; 4], [1.0, -1.0, 0.5, 0.0]], 20, 0.9, 4);
    let a = fit_logistic(&pts, &(vec![1], vec![2]), 1e-2).unwrap();
    let flipped: Vec<LabeledPoint> = pts.iter().map(|p| LabeledPoint { label: 3 - p.label, ..p.clone() }).collect();
    let b = fit_logistic(&flipped, &(vec![1], vec![2]), 1e-2).unwrap();
    for (x, y) in a.weights.iter().zip(&b.weights) {
        assert!((x + y).abs() < 1e-6, "{x} vs {y}");
    }
}

#[test]
fn clusters_without_points_are_set_aside() {
    let pts = blobs(&[[0.0; 4], [3.0, 0.0, 0.0, 0.0], [0.0, 3.0, 0.0, 0.0]], 10, 0.3, 6);
    let pts: Vec<LabeledPoint> = pts.into_iter().map(|p| LabeledPoint { label: if p.label == 2 { 4 } else { p.label }, ..p }).collect();
    assert!(build_tree(&pts, 4, 1e-2).is_err());
    let tree = build_tree_over(&pts, 4, 1e-2).unwrap();
    assert_eq!(tree.absent, vec![2]);
    let mut leaves = tree.root.leaves();
    leaves.sort_unstable();
    assert_eq!(leaves, vec![1, 3, 4]);
}

proptest! {
    #[test]
    fn partition_count_law(n in 2usize..=8, offset in 0usize..5) {
        let labels: Vec<usize> = (1..=n).map(|l| l + offset).collect();
        let parts = enumerate_bipartitions(&labels).unwrap();
        prop_assert_eq!(parts.len(), (1usize << (n - 1)) - 1);
        for (s1, s2) in &parts {
            prop_assert!(!s1.is_empty() && !s2.is_empty());
            prop_assert_eq!(s1[0], labels[0]);
            let mut all: Vec<usize> = s1.iter().chain(s2).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(&all, &labels);
        }
        prop_assert!(parts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn trees_have_k_leaves_and_route_every_point(k in 2usize..=5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<[f64; 4]> = (0..k).map(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0))).collect();
        let pts = blobs(&centers, 12, 1.0, seed + 1);
        let tree = build_tree(&pts, k, 1e-2).unwrap();
        let (mut leaves, mut internal) = (Vec::new(), 0);
        check_shape(&tree.root, &mut leaves, &mut internal);
        leaves.sort_unstable();
        prop_assert_eq!(leaves, (1..=k).collect::<Vec<_>>());
        prop_assert_eq!(internal, k - 1);
        for p in &pts {
            let leaf = tree.route(&p.features);
            prop_assert!((1..=k).contains(&leaf));
        }
    }
}
