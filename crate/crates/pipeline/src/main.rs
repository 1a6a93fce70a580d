use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dci_core::pgm;
use dci_explorer::ArtifactStore;
use dci_latent::gmm::fit_gmm;
use dci_latent::io::{load_network, save_vade, save_vae};
use dci_latent::train::train_vae;
use dci_latent::vade::{decode_checked, linspace, traverse, train_vade};
use dci_pipeline::stages::{self, montage, Stage};
use dci_pipeline::{PipelineConfig, PipelineError, Result, RunOptions};

#[derive(Parser)]
#[command(name = "dci", version, about = "Concept identification from topology-optimized design alternatives")]
struct Cli {
    /// JSON configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the optimization sweep.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct StageFlags {
    /// Re-run even if the stage manifest is current.
    #[arg(long)]
    force: bool,
    /// Build missing or stale upstream stages first.
    #[arg(long)]
    build_missing: bool,
}

impl From<StageFlags> for RunOptions {
    fn from(f: StageFlags) -> Self {
        RunOptions {
            force: f.force,
            build_missing: f.build_missing,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Topology-optimize every (condition, volume fraction) pair.
    Generate(StageFlags),
    /// Train one VAE per latent dimension and tabulate reconstruction loss.
    DimSweep(StageFlags),
    /// Fit the GMM prior and train VaDE for every K.
    Train(StageFlags),
    /// Evaluate f1..f4 and their normalization.
    Criteria(StageFlags),
    /// Build the concept tree for every K.
    Tree(StageFlags),
    /// Write the self-contained bundle for the explorer.
    Export(StageFlags),
    /// Run several stages.
    Run {
        #[arg(long, conflicts_with = "stages")]
        all: bool,
        /// Comma-separated stage names.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
        #[command(flatten)]
        flags: StageFlags,
    },
    /// Train a single VAE outside the sweep (written to <out>/adhoc).
    TrainVae {
        #[arg(long)]
        dim: usize,
    },
    /// Train a single VaDE model outside the train stage (written to <out>/adhoc).
    TrainVade {
        #[arg(long)]
        k: usize,
    },
    /// Decode the cluster means of a bundle to PGM files.
    Representatives {
        #[arg(long)]
        k: usize,
        /// Bundle directory; defaults to <out>/bundle.
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, default_value = "representatives")]
        dest: PathBuf,
    },
    /// Decode a latent traversal around cluster means.
    Traverse {
        #[arg(long)]
        k: usize,
        /// 1-based latent dimension.
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        /// 1-based cluster; all clusters when omitted.
        #[arg(long)]
        cluster: Option<usize>,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, default_value = "traversal")]
        dest: PathBuf,
    },
    /// Check an output root or bundle for integrity violations.
    Validate { path: Option<PathBuf> },
    /// Serve a bundle over HTTP.
    Serve {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_root = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(p) = cli.parallel {
        cfg.parallel = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_stages(cfg: &PipelineConfig, stages: &[Stage], flags: StageFlags) -> Result<()> {
    let report = dci_pipeline::run(cfg, stages, flags.into())?;
    for s in &report.ran {
        println!("ran      {s}");
    }
    for s in &report.skipped {
        println!("skipped  {s} (up to date)");
    }
    Ok(())
}

fn open_bundle(cfg: &PipelineConfig, bundle: &Option<PathBuf>) -> Result<ArtifactStore> {
    let dir = bundle.clone().unwrap_or_else(|| cfg.output_root.join(Stage::Export.output_dir()));
    ArtifactStore::open(&dir).map_err(|e| PipelineError::Missing(format!("{}: {e}", dir.display())))
}

fn write_pgm(path: &Path, w: usize, h: usize, values: &[f64]) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    std::fs::write(path, pgm::encode_pgm(w, h, values))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn latent_err(e: dci_latent::Error) -> PipelineError {
    PipelineError::stage("latent", e)
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let root = cfg.output_root.clone();
    match &cli.command {
        Command::Generate(f) => run_stages(&cfg, &[Stage::Generate], *f),
        Command::DimSweep(f) => run_stages(&cfg, &[Stage::DimSweep], *f),
        Command::Train(f) => run_stages(&cfg, &[Stage::Train], *f),
        Command::Criteria(f) => run_stages(&cfg, &[Stage::Criteria], *f),
        Command::Tree(f) => run_stages(&cfg, &[Stage::Tree], *f),
        Command::Export(f) => run_stages(&cfg, &[Stage::Export], *f),
        Command::Run { all, stages, flags } => {
            let list: Vec<Stage> = if *all || stages.is_empty() {
                Stage::ALL.to_vec()
            } else {
                stages
                    .iter()
                    .map(|n| Stage::parse(n).ok_or_else(|| PipelineError::Config(format!("unknown stage `{n}`"))))
                    .collect::<Result<_>>()?
            };
            run_stages(&cfg, &list, *flags)
        }
        Command::TrainVae { dim } => {
            let (_, samples) = stages::load_samples(&root)?;
            let tc = cfg.vae_config();
            let (model, record) = train_vae(&samples, &cfg.training.architecture, *dim, &tc).map_err(latent_err)?;
            let dir = root.join("adhoc");
            save_vae(&dir, &stages::vae_stem(*dim), &model, &record, &tc).map_err(latent_err)?;
            println!("d={dim}: final reconstruction {:.4}; saved to {}", record.final_reconstruction, dir.display());
            Ok(())
        }
        Command::TrainVade { k } => {
            let (ds, samples) = stages::load_samples(&root)?;
            let d = cfg.training.vade_dim;
            let path = root.join(Stage::DimSweep.output_dir()).join(format!("{}.json", stages::vae_stem(d)));
            let (pretrained, _) = load_network(&path).map_err(latent_err)?;
            let (z, _) = pretrained.encode_all(&samples, 64);
            let fit = fit_gmm(&z, *k, &cfg.em_settings(*k)).map_err(latent_err)?;
            let model = train_vade(&samples, &pretrained, &fit.prior, &cfg.vade_config(*k)).map_err(latent_err)?;
            let dir = root.join("adhoc");
            save_vade(&dir, &stages::vade_stem(*k), &model).map_err(latent_err)?;
            let items: Vec<_> = ds.alternatives.iter().map(|a| a.id.clone()).zip(samples).collect();
            let mut counts = vec![0usize; *k];
            for e in model.assign_all(&items).map_err(latent_err)? {
                counts[e.hard_label - 1] += 1;
            }
            println!("k={k}: weights {:?}, cluster sizes {counts:?}; saved to {}", model.prior.weights, dir.display());
            Ok(())
        }
        Command::Representatives { k, bundle, dest } => {
            let store = open_bundle(&cfg, bundle)?;
            let m = store.model(*k).ok_or_else(|| PipelineError::Missing(format!("no K={k} model in the bundle")))?;
            let g = store.meta.grid;
            for (c, mu) in m.prior.means.iter().enumerate() {
                let img = decode_checked(&m.network, mu).map_err(latent_err)?;
                write_pgm(&dest.join(format!("k{k}_c{}.pgm", c + 1)), g.width, g.height, &img)?;
            }
            Ok(())
        }
        Command::Traverse { k, dim, steps, cluster, bundle, dest } => {
            let store = open_bundle(&cfg, bundle)?;
            let m = store.model(*k).ok_or_else(|| PipelineError::Missing(format!("no K={k} model in the bundle")))?;
            let g = store.meta.grid;
            let range = (store.meta.traversal_range[0], store.meta.traversal_range[1]);
            let clusters: Vec<usize> = match cluster {
                Some(c) if (1..=*k).contains(c) => vec![*c],
                Some(c) => return Err(PipelineError::Config(format!("cluster {c} outside 1..={k}"))),
                None => (1..=*k).collect(),
            };
            if *dim == 0 || *dim > m.prior.dim() {
                return Err(PipelineError::Config(format!("dim {dim} outside 1..={}", m.prior.dim())));
            }
            println!("values {:?}", linspace(range, *steps));
            for c in clusters {
                let frames = traverse(&m.network, &m.prior.means[c - 1], *dim, range, *steps).map_err(latent_err)?;
                let tiles: Vec<Vec<f64>> = frames.into_iter().map(|(_, f)| f).collect();
                let (w, h, img) = montage(&tiles, tiles.len(), g.width, g.height);
                write_pgm(&dest.join(format!("k{k}_c{c}_dim{dim}.pgm")), w, h, &img)?;
            }
            Ok(())
        }
        Command::Validate { path } => {
            let target = path.clone().unwrap_or(root);
            let violations = dci_pipeline::validate(&target);
            if violations.is_empty() {
                println!("{}: ok", target.display());
                Ok(())
            } else {
                for v in &violations {
                    println!("{v}");
                }
                Err(PipelineError::Invalid(format!("{} violation(s) in {}", violations.len(), target.display())))
            }
        }
        Command::Serve { bundle, addr } => {
            let store = open_bundle(&cfg, bundle)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(dci_explorer::serve(store, addr))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
