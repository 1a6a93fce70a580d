//! Staged, resumable execution of the concept-identification pipeline.
//!
//! Each stage writes into its own directory under the output root and
//! records a manifest of its configuration digest, input digests and
//! output digests. A stage whose manifest still matches is skipped.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

use std::path::Path;

use dci_explorer::bundle::{TreeExport, BUNDLE_FILE};
use dci_explorer::store::prior_violations;
use dci_explorer::Violation;
use dci_latent::io::read_companion;

pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
use manifest::{changed_files, config_digest, digest_files, now_unix, read_manifest, write_manifest, RootLock, StageManifest, TOOL_VERSION};
pub use stages::Stage;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Re-run the requested stages even when their manifests match.
    pub force: bool,
    /// Run stale or missing dependencies first instead of refusing.
    pub build_missing: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunReport {
    pub ran: Vec<Stage>,
    pub skipped: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Fresh,
    Missing,
    Stale(String),
}

fn inputs_of(root: &Path, stage: Stage) -> Result<Vec<dci_explorer::bundle::FileDigest>> {
    let mut inputs = Vec::new();
    for dep in stage.deps() {
        let m = read_manifest(root, dep.name()).ok_or_else(|| PipelineError::Missing(format!("{dep} stage has not run")))?;
        inputs.extend(m.outputs);
    }
    Ok(inputs)
}

/// Whether a stage's recorded outputs are still valid for `cfg`.
pub fn status(root: &Path, cfg: &PipelineConfig, stage: Stage) -> Status {
    let Some(m) = read_manifest(root, stage.name()) else {
        return Status::Missing;
    };
    if m.tool_version != TOOL_VERSION {
        return Status::Stale(format!("written by version {}", m.tool_version));
    }
    if m.config_digest != config_digest(&stage.config_value(cfg)) {
        return Status::Stale("configuration changed".into());
    }
    match inputs_of(root, stage) {
        Ok(inputs) if inputs == m.inputs => {}
        Ok(_) => return Status::Stale("inputs changed".into()),
        Err(e) => return Status::Stale(e.to_string()),
    }
    let changed = changed_files(root, &m.outputs);
    if !changed.is_empty() {
        return Status::Stale(format!("{} output file(s) modified, first {}", changed.len(), changed[0]));
    }
    Status::Fresh
}

fn closure(requested: &[Stage]) -> Vec<Stage> {
    let mut want = std::collections::BTreeSet::new();
    let mut stack: Vec<Stage> = requested.to_vec();
    while let Some(s) = stack.pop() {
        if want.insert(s) {
            stack.extend_from_slice(s.deps());
        }
    }
    want.into_iter().collect()
}

/// Runs `requested` stages (in dependency order) under `cfg.output_root`.
pub fn run(cfg: &PipelineConfig, requested: &[Stage], opts: RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let root = cfg.output_root.as_path();
    let _lock = RootLock::acquire(root)?;
    let plan = if opts.build_missing { closure(requested) } else { closure(requested).into_iter().filter(|s| requested.contains(s)).collect() };
    let mut report = RunReport::default();
    for stage in Stage::ALL.into_iter().filter(|s| plan.contains(s)) {
        if !opts.build_missing {
            let blocked: Vec<String> = stage
                .deps()
                .iter()
                .filter_map(|d| match status(root, cfg, *d) {
                    Status::Fresh => None,
                    Status::Missing => Some(format!("{d} (missing)")),
                    Status::Stale(why) => Some(format!("{d} (stale: {why})")),
                })
                .collect();
            if !blocked.is_empty() {
                return Err(PipelineError::Missing(format!(
                    "{stage} needs {}; run them first or pass --build-missing",
                    blocked.join(", ")
                )));
            }
        }
        let forced = opts.force && requested.contains(&stage);
        match status(root, cfg, stage) {
            Status::Fresh if !forced => {
                log::info!("{stage}: up to date");
                report.skipped.push(stage);
                continue;
            }
            Status::Fresh => log::info!("{stage}: forced"),
            Status::Missing => log::info!("{stage}: running"),
            Status::Stale(why) => log::info!("{stage}: re-running ({why})"),
        }
        let inputs = inputs_of(root, stage)?;
        let started = now_unix();
        let outputs = stages::execute(stage, &stages::Ctx { cfg, root })?;
        write_manifest(
            root,
            &StageManifest {
                stage: stage.name().into(),
                tool_version: TOOL_VERSION.into(),
                config_digest: config_digest(&stage.config_value(cfg)),
                inputs,
                outputs: digest_files(root, &outputs)?,
                started_unix: started,
                finished_unix: now_unix(),
            },
        )?;
        report.ran.push(stage);
    }
    Ok(report)
}

/// Integrity check of an output root or of an exported bundle directory.
pub fn validate(root: &Path) -> Vec<Violation> {
    if root.join(BUNDLE_FILE).is_file() {
        return dci_explorer::validate_bundle(root);
    }
    let mut out = Vec::new();
    let v = |path: String, message: String| Violation { path, message };
    let mut any = false;
    for stage in Stage::ALL {
        let Some(m) = read_manifest(root, stage.name()) else { continue };
        any = true;
        for path in changed_files(root, &m.outputs) {
            out.push(v(path, format!("digest mismatch with the {stage} manifest")));
        }
    }
    if !any {
        out.push(v(root.display().to_string(), "no stage manifests or bundle found".into()));
        return out;
    }
    if let Ok(files) = manifest::list_files(root, Stage::Train.output_dir()) {
        for rel in files.iter().filter(|f| f.ends_with(".json") && f.contains("/vade_k")) {
            match read_companion(&root.join(rel)).map(|c| c.prior()) {
                Ok(Some(prior)) => out.extend(prior_violations(&prior).into_iter().map(|m| v(rel.clone(), m))),
                Ok(None) => out.push(v(rel.clone(), "VaDE companion without a prior".into())),
                Err(e) => out.push(v(rel.clone(), e.to_string())),
            }
        }
    }
    if let Ok(files) = manifest::list_files(root, Stage::Tree.output_dir()) {
        for rel in files.iter().filter(|f| f.ends_with(".json")) {
            let parsed = std::fs::read(root.join(rel)).map_err(|e| e.to_string()).and_then(|b| serde_json::from_slice::<TreeExport>(&b).map_err(|e| e.to_string()));
            match parsed {
                Ok(tree) => out.extend(tree.shape_violations().into_iter().map(|m| v(rel.clone(), m))),
                Err(e) => out.push(v(rel.clone(), e)),
            }
        }
    }
    let bundle = root.join(Stage::Export.output_dir());
    if bundle.join(BUNDLE_FILE).is_file() {
        out.extend(dci_explorer::validate_bundle(&bundle).into_iter().map(|m| Violation {
            path: format!("{}/{}", Stage::Export.output_dir(), m.path),
            ..m
        }));
    }
    out
}
