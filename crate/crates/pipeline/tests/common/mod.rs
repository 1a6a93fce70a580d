#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dci_latent::{Architecture, TrainConfig};
use dci_pipeline::PipelineConfig;

/// A 16x16 configuration that runs every stage in a few seconds.
pub fn tiny_config(root: &Path, seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.output_root = root.to_path_buf();
    c.seed = seed;
    let g = &mut c.generation;
    g.grid_size = 16;
    g.conditions = ["A0", "B1", "B2", "B5"].map(String::from).to_vec();
    g.vf_start = 0.1;
    g.vf_end = 0.3;
    g.vf_step = 0.05;
    g.optimizer.max_iterations = 60;
    let t = &mut c.training;
    t.architecture = Architecture {
        input_size: 16,
        channels: vec![4, 8, 16],
        hidden: vec![32, 16],
        ..Default::default()
    };
    t.dims = vec![2, 3];
    t.vade_dim = 3;
    t.k_values = vec![2, 3];
    t.vae = TrainConfig {
        epochs: 120,
        batch_size: 8,
        learning_rate: 3e-3,
        ..Default::default()
    };
    t.vade = TrainConfig {
        epochs: 40,
        batch_size: 8,
        ..Default::default()
    };
    c
}

/// Every JSON file under `dir`, as (relative path, bytes), sorted.
pub fn json_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p: PathBuf = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.extension().is_some_and(|e| e == "json") {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
