//! Model artifacts: a raw little-endian weights file plus a JSON companion.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmPrior;
use crate::network::{Architecture, Autoencoder};
use crate::train::{TrainConfig, TrainRecord};
use crate::vade::VadeModel;

const MAGIC: &[u8; 4] = b"DCIW";
const VERSION: u32 = 1;

pub fn encode_weights(params: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Weights("missing header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Weights(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != 4 * n {
        return Err(Error::Weights(format!("{} payload bytes for {n} values", body.len())));
    }
    Ok(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Vae,
    Vade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCompanion {
    pub kind: ModelKind,
    pub latent_dim: usize,
    pub k: Option<usize>,
    pub architecture: Architecture,
    /// Weights file name, relative to the companion.
    pub weights: String,
    pub n_params: usize,
    pub pi: Option<Vec<f64>>,
    pub mu: Option<Vec<Vec<f64>>>,
    pub sigma2: Option<Vec<Vec<f64>>>,
    pub record: TrainRecord,
    pub config: TrainConfig,
    pub seed: u64,
}

impl ModelCompanion {
    pub fn prior(&self) -> Option<GmmPrior> {
        Some(GmmPrior {
            weights: self.pi.clone()?,
            means: self.mu.clone()?,
            variances: self.sigma2.clone()?,
        })
    }
}

fn write_pair(dir: &Path, stem: &str, params: &[f32], companion: &ModelCompanion) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(&companion.weights), encode_weights(params))?;
    let json = serde_json::to_string_pretty(companion)?;
    fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
    Ok(())
}

pub fn vae_companion(stem: &str, model: &Autoencoder, record: &TrainRecord, config: &TrainConfig) -> ModelCompanion {
    ModelCompanion {
        kind: ModelKind::Vae,
        latent_dim: model.latent_dim,
        k: None,
        architecture: model.arch.clone(),
        weights: format!("{stem}.weights"),
        n_params: model.n_params(),
        pi: None,
        mu: None,
        sigma2: None,
        record: record.clone(),
        config: config.clone(),
        seed: config.seed,
    }
}

pub fn vade_companion(stem: &str, model: &VadeModel) -> ModelCompanion {
    ModelCompanion {
        kind: ModelKind::Vade,
        latent_dim: model.latent_dim(),
        k: Some(model.k()),
        architecture: model.network.arch.clone(),
        weights: format!("{stem}.weights"),
        n_params: model.network.n_params(),
        pi: Some(model.prior.weights.clone()),
        mu: Some(model.prior.means.clone()),
        sigma2: Some(model.prior.variances.clone()),
        record: model.record.clone(),
        config: model.config.clone(),
        seed: model.config.seed,
    }
}

/// Writes `<stem>.weights` and `<stem>.json` under `dir`.
pub fn save_vae(dir: &Path, stem: &str, model: &Autoencoder, record: &TrainRecord, config: &TrainConfig) -> Result<()> {
    write_pair(dir, stem, &model.params, &vae_companion(stem, model, record, config))
}

pub fn save_vade(dir: &Path, stem: &str, model: &VadeModel) -> Result<()> {
    write_pair(dir, stem, &model.network.params, &vade_companion(stem, model))
}

pub fn read_companion(path: &Path) -> Result<ModelCompanion> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Loads the network referenced by a companion file.
pub fn load_network(companion_path: &Path) -> Result<(Autoencoder, ModelCompanion)> {
    let companion = read_companion(companion_path)?;
    let dir = companion_path.parent().unwrap_or(Path::new("."));
    let params = decode_weights(&fs::read(dir.join(&companion.weights))?)?;
    let network = Autoencoder::from_params(companion.architecture.clone(), companion.latent_dim, params)?;
    Ok((network, companion))
}

pub fn load_vade(companion_path: &Path) -> Result<VadeModel> {
    let (network, companion) = load_network(companion_path)?;
    if companion.kind != ModelKind::Vade {
        return Err(Error::Weights(format!("{} is not a VaDE model", companion_path.display())));
    }
    let prior = companion.prior().ok_or_else(|| Error::Weights("companion lacks the mixture prior".into()))?;
    prior.validate()?;
    prior.check_dim(network.latent_dim)?;
    Ok(VadeModel {
        network,
        prior,
        record: companion.record,
        config: companion.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_round_trip() {
        let p = vec![0.0f32, -1.5, f32::MIN_POSITIVE, 3.25e7];
        assert_eq!(decode_weights(&encode_weights(&p)).unwrap(), p);
    }

    #[test]
    fn vade_model_round_trips_through_files() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let arch = Architecture {
            input_size: 8,
            channels: vec![2, 2],
            kernel: 4,
            stride: 2,
            padding: 1,
            hidden: vec![4, 3],
        };
        let network = Autoencoder::new(arch, 2, &mut rng).unwrap();
        let model = VadeModel {
            network,
            prior: GmmPrior {
                weights: vec![0.3, 0.7],
                means: vec![vec![0.1, -0.2], vec![1.5, 2.5]],
                variances: vec![vec![0.5, 0.25], vec![1.0, 2.0]],
            },
            record: TrainRecord::default(),
            config: TrainConfig::default(),
        };
        let dir = tempfile::tempdir().unwrap();
        save_vade(dir.path(), "m", &model).unwrap();
        let back = load_vade(&dir.path().join("m.json")).unwrap();
        assert_eq!(back.prior, model.prior);
        assert_eq!(back.network.params, model.network.params);
        assert_eq!(back.decode(&[0.3, 0.4]).unwrap(), model.decode(&[0.3, 0.4]).unwrap());
    }

    #[test]
    fn truncated_weights_rejected() {
        let bytes = encode_weights(&[1.0, 2.0]);
        assert!(decode_weights(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_weights(b"nope").is_err());
    }
}
