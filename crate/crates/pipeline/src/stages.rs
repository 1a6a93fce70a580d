//! The six stages and the work each one does. Stage outputs live in one
//! directory per stage under the output root.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use dci_core::catalog;
use dci_core::criteria::{apply_normalization, compute_criteria, fit_normalization, CRITERIA_NAMES};
use dci_core::dataset::{self, Dataset, SweepRequest};
use dci_core::pgm;
use dci_core::topo::Problem;
use dci_core::tree::{build_tree_over, LabeledPoint};
use dci_explorer::bundle::{self as b, canonical_json, round_sig, round_simplex, BundleMeta, CriteriaRow, CriteriaTable, Excluded, FileDigest, SweepTable, TreeExport};
use dci_latent::gmm::fit_gmm;
use dci_latent::io::{encode_weights, load_network, load_vade, save_vade, save_vae, vade_companion};
use dci_latent::train::{latent_dim_sweep, sweep_plot_svg};
use dci_latent::vade::{embed, linspace, train_vade};
use dci_latent::{Embedding, GmmPrior, VadeModel};
use serde::Serialize;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::manifest::{digest_files, list_files, TOOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Generate,
    DimSweep,
    Train,
    Criteria,
    Tree,
    Export,
}

impl Stage {
    /// Dependency order.
    pub const ALL: [Stage; 6] = [
        Stage::Generate,
        Stage::DimSweep,
        Stage::Train,
        Stage::Criteria,
        Stage::Tree,
        Stage::Export,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::DimSweep => "dim-sweep",
            Stage::Train => "train",
            Stage::Criteria => "criteria",
            Stage::Tree => "tree",
            Stage::Export => "export",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Generate => &[],
            Stage::DimSweep => &[Stage::Generate],
            Stage::Train => &[Stage::Generate, Stage::DimSweep],
            Stage::Criteria => &[Stage::Generate],
            Stage::Tree => &[Stage::Criteria, Stage::Train],
            Stage::Export => &[Stage::Generate, Stage::DimSweep, Stage::Train, Stage::Criteria, Stage::Tree],
        }
    }

    pub fn output_dir(self) -> &'static str {
        match self {
            Stage::Generate => "dataset",
            Stage::DimSweep => "sweep",
            Stage::Train => "models",
            Stage::Criteria => "criteria",
            Stage::Tree => "trees",
            Stage::Export => "bundle",
        }
    }

    /// The configuration slice this stage's outputs depend on.
    pub fn config_value(self, cfg: &PipelineConfig) -> serde_json::Value {
        let t = &cfg.training;
        let v = match self {
            Stage::Generate => json!({ "generation": cfg.generation }),
            Stage::DimSweep => json!({
                "architecture": t.architecture,
                "dims": t.dims,
                "vae": cfg.vae_config(),
            }),
            Stage::Train => json!({
                "architecture": t.architecture,
                "vade_dim": t.vade_dim,
                "k_values": t.k_values,
                "vade": t.k_values.iter().map(|&k| cfg.vade_config(k)).collect::<Vec<_>>(),
                "em": t.k_values.iter().map(|&k| cfg.em_settings(k)).collect::<Vec<_>>(),
            }),
            Stage::Criteria => json!({
                "criteria": cfg.criteria,
                "grid_size": cfg.generation.grid_size,
                "catalog": cfg.generation.catalog(),
                "material": cfg.generation.material,
            }),
            Stage::Tree => json!({ "lambda": cfg.tree.lambda, "k_values": t.k_values }),
            Stage::Export => json!({ "embedded": embedded_config(cfg) }),
        };
        json!({ "stage": self.name(), "config": v })
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The configuration as recorded in the bundle: execution-only settings
/// (output location, thread count) are blanked so they cannot change it.
pub fn embedded_config(cfg: &PipelineConfig) -> serde_json::Value {
    let mut c = cfg.clone();
    c.output_root = PathBuf::new();
    c.parallel = 1;
    serde_json::to_value(c).unwrap_or_default()
}

pub struct Ctx<'a> {
    pub cfg: &'a PipelineConfig,
    pub root: &'a Path,
}

impl Ctx<'_> {
    fn dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.output_dir())
    }
}

fn fail(stage: Stage) -> impl Fn(&dyn fmt::Display) -> PipelineError {
    move |e| PipelineError::stage(stage, e)
}

fn write_canonical<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, canonical_json(value)?)?;
    Ok(())
}

/// Raw density fields as `f32` network inputs, with their ids.
pub fn load_samples(root: &Path) -> Result<(Dataset, Vec<Vec<f32>>)> {
    let ds = Dataset::load(&root.join(Stage::Generate.output_dir())).map_err(|e| PipelineError::Missing(format!("dataset: {e}")))?;
    let samples = ds
        .alternatives
        .iter()
        .map(|a| a.raw_field.values.iter().map(|&v| v as f32).collect())
        .collect();
    Ok((ds, samples))
}

pub fn vae_stem(d: usize) -> String {
    format!("vae_d{d}")
}

pub fn vade_stem(k: usize) -> String {
    format!("vade_k{k}")
}

pub fn clusters_file(k: usize) -> String {
    format!("clusters_k{k}.json")
}

/// Runs one stage into a fresh output directory and returns the files written.
pub fn execute(stage: Stage, ctx: &Ctx<'_>) -> Result<Vec<String>> {
    let dir = ctx.dir(stage);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    match stage {
        Stage::Generate => generate(ctx)?,
        Stage::DimSweep => dim_sweep(ctx)?,
        Stage::Train => train(ctx)?,
        Stage::Criteria => criteria(ctx)?,
        Stage::Tree => tree(ctx)?,
        Stage::Export => export(ctx)?,
    }
    list_files(ctx.root, stage.output_dir())
}

fn generate(ctx: &Ctx<'_>) -> Result<()> {
    let g = &ctx.cfg.generation;
    let grid = g.grid();
    let catalog = g.catalog();
    let ids = g.condition_ids();
    let vfs = dataset::volume_fractions(g.vf_start, g.vf_end, g.vf_step).map_err(|e| PipelineError::Config(e.to_string()))?;
    let req = SweepRequest {
        grid,
        catalog: &catalog,
        condition_ids: &ids,
        volume_fractions: &vfs,
        material: g.material,
        settings: g.optimizer,
        parallel: ctx.cfg.parallel,
    };
    log::info!("generating {} alternatives", ids.len() * vfs.len());
    let result = dataset::sweep(&req).map_err(|e| fail(Stage::Generate)(&e))?;
    if result.alternatives.is_empty() {
        return Err(PipelineError::stage(Stage::Generate, "every optimization failed"));
    }
    for f in &result.failures {
        log::warn!("{} at vf {}: {}", f.condition_id, f.volume_fraction, f.error);
    }
    dataset::persist(&ctx.dir(Stage::Generate), &grid, &result).map_err(|e| fail(Stage::Generate)(&e))?;
    Ok(())
}

fn dim_sweep(ctx: &Ctx<'_>) -> Result<()> {
    let (_, samples) = load_samples(ctx.root)?;
    let t = &ctx.cfg.training;
    let cfg = ctx.cfg.vae_config();
    let dir = ctx.dir(Stage::DimSweep);
    let rows = latent_dim_sweep(&samples, &t.architecture, &t.dims, &cfg, |d, model, record| {
        log::info!("d={d}: final reconstruction {:.3}", record.final_reconstruction);
        save_vae(&dir, &vae_stem(d), model, record, &cfg)
    })
    .map_err(|e| fail(Stage::DimSweep)(&e))?;
    let table = SweepTable { rows };
    write_canonical(&dir.join("table.json"), &table)?;
    let mut csv = String::from("latent_dim,final_reconstruction,first_epoch_reconstruction\n");
    for r in &table.rows {
        csv += &format!(
            "{},{},{}\n",
            r.latent_dim,
            round_sig(r.final_reconstruction),
            round_sig(r.first_epoch_reconstruction)
        );
    }
    fs::write(dir.join("table.csv"), csv)?;
    fs::write(dir.join("loss.svg"), sweep_plot_svg(&table.rows))?;
    Ok(())
}

fn train(ctx: &Ctx<'_>) -> Result<()> {
    let (ds, samples) = load_samples(ctx.root)?;
    let t = &ctx.cfg.training;
    let pretrained_path = ctx.dir(Stage::DimSweep).join(format!("{}.json", vae_stem(t.vade_dim)));
    let (pretrained, _) = load_network(&pretrained_path).map_err(|e| PipelineError::Missing(format!("{}: {e}", pretrained_path.display())))?;
    let (z_means, _) = pretrained.encode_all(&samples, 64);
    let dir = ctx.dir(Stage::Train);
    for &k in &t.k_values {
        let fit = fit_gmm(&z_means, k, &ctx.cfg.em_settings(k)).map_err(|e| fail(Stage::Train)(&e))?;
        log::info!("k={k}: EM log-likelihood {:.3} after {} iterations", fit.log_likelihood, fit.iterations);
        let model = train_vade(&samples, &pretrained, &fit.prior, &ctx.cfg.vade_config(k)).map_err(|e| fail(Stage::Train)(&e))?;
        save_vade(&dir, &vade_stem(k), &model).map_err(|e| fail(Stage::Train)(&e))?;
        let items: Vec<(String, Vec<f32>)> = ds.alternatives.iter().map(|a| a.id.clone()).zip(samples.iter().cloned()).collect();
        let embeddings = model.assign_all(&items).map_err(|e| fail(Stage::Train)(&e))?;
        let mut counts = vec![0usize; k];
        for e in &embeddings {
            counts[e.hard_label - 1] += 1;
        }
        log::info!("k={k}: cluster sizes {counts:?}");
        fs::write(dir.join(clusters_file(k)), serde_json::to_vec_pretty(&embeddings)?)?;
        let summary = json!({
            "k": k,
            "init_log_likelihood": fit.log_likelihood,
            "init_prior": fit.prior,
            "cluster_sizes": counts,
            "warnings": model.record.warnings,
        });
        fs::write(dir.join(format!("summary_k{k}.json")), serde_json::to_vec_pretty(&summary)?)?;
    }
    Ok(())
}

pub fn criteria_table(ctx: &Ctx<'_>) -> Result<CriteriaTable> {
    let (ds, _) = load_samples(ctx.root)?;
    let g = &ctx.cfg.generation;
    let catalog = g.catalog();
    let settings = &ctx.cfg.criteria;
    let spec = catalog::find(&catalog, &settings.eval_condition).map_err(|e| PipelineError::Config(e.to_string()))?;
    // the volume fraction of the evaluation problem never enters the analysis
    let eval = Problem::new(ds.manifest.grid, spec, g.material, 0.5, g.optimizer).map_err(|e| fail(Stage::Criteria)(&e))?;
    let mut records = Vec::new();
    let mut excluded = Vec::new();
    for alt in &ds.alternatives {
        match compute_criteria(alt, &eval, settings) {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("{} excluded from criteria: {e}", alt.id);
                excluded.push(Excluded {
                    id: alt.id.clone(),
                    reason: e.to_string(),
                })
            }
        }
    }
    let raw: Vec<_> = records.iter().map(|r| r.raw).collect();
    let stats = fit_normalization(&raw).map_err(|e| fail(Stage::Criteria)(&e))?;
    let rows = records
        .iter()
        .map(|r| CriteriaRow {
            id: r.id.clone(),
            condition_id: r.condition_id.clone(),
            volume_fraction: r.volume_fraction,
            raw: r.raw.to_array(),
            normalized: apply_normalization(&r.raw, &stats),
            compliance_outlier: r.compliance_outlier,
        })
        .collect();
    Ok(CriteriaTable {
        names: CRITERIA_NAMES.iter().map(|s| s.to_string()).collect(),
        eval_condition: settings.eval_condition.clone(),
        stats,
        rows,
        excluded,
    })
}

fn criteria(ctx: &Ctx<'_>) -> Result<()> {
    let table = criteria_table(ctx)?;
    let dir = ctx.dir(Stage::Criteria);
    write_canonical(&dir.join("criteria.json"), &table)?;
    write_canonical(&dir.join("stats.json"), &table.stats)?;
    fs::write(dir.join("criteria.csv"), table.to_csv())?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| PipelineError::Missing(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn read_criteria(root: &Path) -> Result<CriteriaTable> {
    read_json(&root.join(Stage::Criteria.output_dir()).join("criteria.json"))
}

pub fn read_embeddings(root: &Path, k: usize) -> Result<Vec<Embedding>> {
    read_json(&root.join(Stage::Train.output_dir()).join(clusters_file(k)))
}

/// Criteria rows joined with hard labels of the K-cluster model.
pub fn labeled_points(table: &CriteriaTable, embeddings: &[Embedding]) -> Vec<LabeledPoint> {
    let labels: std::collections::HashMap<&str, usize> = embeddings.iter().map(|e| (e.alternative_id.as_str(), e.hard_label)).collect();
    table
        .rows
        .iter()
        .filter_map(|r| labels.get(r.id.as_str()).map(|&l| LabeledPoint::new(r.id.clone(), r.normalized, l)))
        .collect()
}

fn tree(ctx: &Ctx<'_>) -> Result<()> {
    let table = read_criteria(ctx.root)?;
    let dir = ctx.dir(Stage::Tree);
    for &k in &ctx.cfg.training.k_values {
        let points = labeled_points(&table, &read_embeddings(ctx.root, k)?);
        let tree = build_tree_over(&points, k, ctx.cfg.tree.lambda).map_err(|e| PipelineError::stage(Stage::Tree, format!("k={k}: {e}")))?;
        if !tree.absent.is_empty() {
            log::warn!("k={k}: clusters {:?} hold no evaluated alternatives and are left out of the tree", tree.absent);
        }
        write_canonical(&dir.join(format!("tree_k{k}.json")), &TreeExport::from_tree(&tree))?;
        fs::write(dir.join(format!("tree_k{k}.txt")), tree.render_text())?;
    }
    Ok(())
}

/// The exported prior: every number at the fixed JSON precision, weights
/// still on the simplex.
pub fn rounded_prior(prior: &GmmPrior) -> GmmPrior {
    let mut weights = prior.weights.clone();
    round_simplex(&mut weights);
    let round = |v: &Vec<Vec<f64>>| v.iter().map(|r| r.iter().map(|&x| round_sig(x)).collect()).collect();
    GmmPrior {
        weights,
        means: round(&prior.means),
        variances: round(&prior.variances),
    }
}

/// `rows x cols` tiles of `w x h` fields in one image.
pub fn montage(tiles: &[Vec<f64>], cols: usize, w: usize, h: usize) -> (usize, usize, Vec<f64>) {
    let rows = tiles.len().div_ceil(cols);
    let (mw, mh) = (cols * w, rows * h);
    let mut out = vec![0.0; mw * mh];
    for (t, tile) in tiles.iter().enumerate() {
        let (r0, c0) = ((t / cols) * h, (t % cols) * w);
        for y in 0..h {
            out[(r0 + y) * mw + c0..(r0 + y) * mw + c0 + w].copy_from_slice(&tile[y * w..(y + 1) * w]);
        }
    }
    (mw, mh, out)
}

fn export(ctx: &Ctx<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let out = ctx.dir(Stage::Export);
    let (ds, _) = load_samples(ctx.root)?;
    let grid = ds.manifest.grid;
    let (w, h) = (grid.width, grid.height);

    let data_dir = ctx.dir(Stage::Generate);
    let mut entries = Vec::with_capacity(ds.manifest.entries.len());
    for e in &ds.manifest.entries {
        for rel in [&e.files.raw_pgm, &e.files.raw_f32, &e.files.binary_pgm, &e.files.binary_f32] {
            let target = out.join(rel);
            fs::create_dir_all(target.parent().unwrap())?;
            fs::copy(data_dir.join(rel), target)?;
        }
        entries.push(b::AlternativeEntry {
            id: e.id.clone(),
            condition_id: e.condition_id.clone(),
            volume_fraction: e.volume_fraction,
            iterations: e.iterations,
            converged: e.converged,
            compliance: e.compliance,
            raw_pgm: e.files.raw_pgm.clone(),
            raw_f32: e.files.raw_f32.clone(),
            binary_pgm: e.files.binary_pgm.clone(),
            binary_f32: e.files.binary_f32.clone(),
        });
    }
    write_canonical(&out.join(b::DATASET_FILE), &entries)?;

    let table = read_criteria(ctx.root)?;
    write_canonical(&out.join(b::CRITERIA_FILE), &table)?;
    fs::write(out.join(b::CRITERIA_CSV), table.to_csv())?;

    let sweep_dir = ctx.dir(Stage::DimSweep);
    let sweep: SweepTable = read_json(&sweep_dir.join("table.json"))?;
    write_canonical(&out.join(b::SWEEP_FILE), &sweep)?;
    fs::copy(sweep_dir.join("loss.svg"), out.join(b::SWEEP_PLOT))?;

    let t = &cfg.training;
    let [lo, hi] = t.traversal_range;
    let mut latent_dim = t.vade_dim;
    for &k in &t.k_values {
        let trained = load_vade(&ctx.dir(Stage::Train).join(format!("{}.json", vade_stem(k)))).map_err(|e| fail(Stage::Export)(&e))?;
        let model = VadeModel {
            prior: rounded_prior(&trained.prior),
            ..trained
        };
        latent_dim = model.latent_dim();
        let kdir = out.join(b::model_dir(k));
        fs::create_dir_all(&kdir)?;
        let companion = vade_companion("model", &model);
        fs::write(kdir.join(&companion.weights), encode_weights(&model.network.params))?;
        write_canonical(&out.join(b::model_companion_path(k)), &companion)?;

        let embeddings: Vec<Embedding> = read_embeddings(ctx.root, k)?
            .into_iter()
            .map(|e| {
                let mut r = embed(&model.prior, e.alternative_id, e.z_mean.iter().map(|&x| round_sig(x)).collect());
                round_simplex(&mut r.responsibilities);
                r
            })
            .collect();
        write_canonical(&out.join(b::clusters_path(k)), &embeddings)?;

        for (c, rep) in model.representatives().iter().enumerate() {
            let path = out.join(b::representative_path(k, c + 1));
            fs::create_dir_all(path.parent().unwrap())?;
            fs::write(path, pgm::encode_pgm(w, h, rep))?;
        }
        let values = linspace((lo, hi), t.traversal_steps);
        for c in 1..=k {
            let mut tiles = Vec::with_capacity(latent_dim * values.len());
            for j in 1..=latent_dim {
                let frames = model.traverse(c, j, (lo, hi), values.len()).map_err(|e| fail(Stage::Export)(&e))?;
                tiles.extend(frames.into_iter().map(|(_, f)| f));
            }
            let (mw, mh, img) = montage(&tiles, values.len(), w, h);
            let path = out.join(b::traversal_path(k, c));
            fs::create_dir_all(path.parent().unwrap())?;
            fs::write(path, pgm::encode_pgm(mw, mh, &img))?;
        }
        let tree_dir = ctx.dir(Stage::Tree);
        fs::copy(tree_dir.join(format!("tree_k{k}.json")), out.join(b::tree_path(k)))?;
        fs::copy(tree_dir.join(format!("tree_k{k}.txt")), out.join(b::tree_text_path(k)))?;
    }

    let files: Vec<FileDigest> = digest_files(&out, &list_files(&out, ".")?.iter().map(|p| p.trim_start_matches("./").to_string()).collect::<Vec<_>>())?;
    let meta = BundleMeta {
        format_version: b::FORMAT_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        grid,
        n_alternatives: entries.len(),
        latent_dim,
        k_values: t.k_values.clone(),
        seed: cfg.seed,
        traversal_range: t.traversal_range,
        traversal_steps: t.traversal_steps,
        config: embedded_config(cfg),
        files,
    };
    write_canonical(&out.join(b::BUNDLE_FILE), &meta)?;
    let violations = dci_explorer::validate_bundle(&out);
    if !violations.is_empty() {
        let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(PipelineError::stage(Stage::Export, format!("bundle failed validation: {}", lines.join("; "))));
    }
    Ok(())
}
