//! A small but complete bundle written from scratch: 16x16 grid, six
//! alternatives, one untrained K=2 model.

#![allow(dead_code)]

use std::fs;
use std::path::Path;

use dci_core::criteria::NormalizationStats;
use dci_core::tree::{build_tree, LabeledPoint};
use dci_core::{pgm, GridSpec};
use dci_explorer::bundle::*;
use dci_latent::io::{encode_weights, vade_companion};
use dci_latent::vade::embed;
use dci_latent::{Architecture, Autoencoder, GmmPrior, VadeModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const K: usize = 2;
pub const N: usize = 6;

pub fn grid() -> GridSpec {
    GridSpec::square(16)
}

pub fn arch() -> Architecture {
    Architecture {
        input_size: 16,
        channels: vec![4, 8],
        hidden: vec![16],
        ..Default::default()
    }
}

fn put(root: &Path, rel: &str, bytes: &[u8]) {
    let p = root.join(rel);
    fs::create_dir_all(p.parent().unwrap()).unwrap();
    fs::write(p, bytes).unwrap();
}

pub fn ids() -> Vec<String> {
    (0..N).map(|i| format!("B{}-0.{:02}", i % 3 + 1, 10 + i)).collect()
}

/// Writes the bundle and returns the model it holds.
pub fn write_bundle(root: &Path) -> VadeModel {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut entries = Vec::new();
    for id in ids() {
        let raw: Vec<f64> = (0..g.n_elements()).map(|_| rng.random_range(0.0..1.0)).collect();
        let bin: Vec<f64> = raw.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
        let files = [
            (format!("fields/{id}_raw.pgm"), pgm::encode_pgm(16, 16, &raw)),
            (format!("fields/{id}_raw.f32"), pgm::encode_f32(&raw)),
            (format!("fields/{id}_bin.pgm"), pgm::encode_pgm(16, 16, &bin)),
            (format!("fields/{id}_bin.f32"), pgm::encode_f32(&bin)),
        ];
        for (rel, bytes) in &files {
            put(root, rel, bytes);
        }
        entries.push(AlternativeEntry {
            id: id.clone(),
            condition_id: id[..2].to_string(),
            volume_fraction: 0.1,
            iterations: 10,
            converged: true,
            compliance: 1.5,
            raw_pgm: files[0].0.clone(),
            raw_f32: files[1].0.clone(),
            binary_pgm: files[2].0.clone(),
            binary_f32: files[3].0.clone(),
        });
    }
    put(root, DATASET_FILE, &canonical_json(&entries).unwrap());

    let rows: Vec<CriteriaRow> = ids()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let x = i as f64;
            CriteriaRow {
                id: id.clone(),
                condition_id: id[..2].to_string(),
                volume_fraction: 0.1,
                raw: [1.0 + x, 10.0 + x, 5.0 - x, 3.0],
                normalized: [x - 2.5, x - 2.5, 2.5 - x, if i < 3 { -1.0 } else { 1.0 }],
                compliance_outlier: false,
            }
        })
        .collect();
    let table = CriteriaTable {
        names: vec!["f1".into(), "f2".into(), "f3".into(), "f4".into()],
        eval_condition: "B5".into(),
        stats: NormalizationStats {
            mean: [3.5, 12.5, 2.5, 3.0],
            std: [1.7, 1.7, 1.7, 1.0],
        },
        rows: rows.clone(),
        excluded: Vec::new(),
    };
    put(root, CRITERIA_FILE, &canonical_json(&table).unwrap());
    put(root, CRITERIA_CSV, table.to_csv().as_bytes());

    let network = Autoencoder::new(arch(), 2, &mut rng).unwrap();
    let prior = GmmPrior {
        weights: vec![0.5, 0.5],
        means: vec![vec![-1.5, 0.25], vec![1.5, -0.25]],
        variances: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
    };
    let model = VadeModel {
        network,
        prior,
        record: Default::default(),
        config: Default::default(),
    };
    let companion = vade_companion("model", &model);
    put(root, &format!("{}/{}", model_dir(K), companion.weights), &encode_weights(&model.network.params));
    put(root, &model_companion_path(K), &canonical_json(&companion).unwrap());

    let embeddings: Vec<_> = ids()
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let mut e = embed(&model.prior, id, vec![if i < 3 { -1.4 } else { 1.6 }, 0.1 * i as f64]);
            round_simplex(&mut e.responsibilities);
            e
        })
        .collect();
    assert!(embeddings.iter().take(3).all(|e| e.hard_label == 1));
    put(root, &clusters_path(K), &canonical_json(&embeddings).unwrap());

    let points: Vec<LabeledPoint> = rows
        .iter()
        .zip(&embeddings)
        .map(|(r, e)| LabeledPoint::new(r.id.clone(), r.normalized, e.hard_label))
        .collect();
    let tree = build_tree(&points, K, 1e-2).unwrap();
    put(root, &tree_path(K), &canonical_json(&TreeExport::from_tree(&tree)).unwrap());
    put(root, &tree_text_path(K), tree.render_text().as_bytes());
    for (c, rep) in model.representatives().iter().enumerate() {
        put(root, &representative_path(K, c + 1), &pgm::encode_pgm(16, 16, rep));
    }
    write_meta(root);
    model
}

/// Rewrites `bundle.json` with digests of every other file.
pub fn write_meta(root: &Path) {
    let mut files = Vec::new();
    collect(root, root, &mut files);
    files.sort_by(|a: &FileDigest, b| a.path.cmp(&b.path));
    let meta = BundleMeta {
        format_version: FORMAT_VERSION,
        tool_version: "test".into(),
        grid: grid(),
        n_alternatives: N,
        latent_dim: 2,
        k_values: vec![K],
        seed: 0,
        traversal_range: [-3.0, 3.0],
        traversal_steps: 5,
        config: serde_json::json!({}),
        files,
    };
    put(root, BUNDLE_FILE, &canonical_json(&meta).unwrap());
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<FileDigest>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            collect(root, &p, out);
        } else if p.file_name().unwrap() != BUNDLE_FILE {
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            out.push(FileDigest {
                sha256: sha256_file(&p).unwrap(),
                path: rel,
            });
        }
    }
}
