//! VaDE: the VAE objective with a trainable Gaussian-mixture prior, plus the
//! inference helpers used downstream (assignment, decoding, traversal).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::gmm::{argmax, log_sum_exp, normalize_log, GmmPrior, VARIANCE_FLOOR};
use crate::network::Autoencoder;
use crate::train::{check_samples, reconstruction_loss, run_epochs, LatentTerm, TrainConfig, TrainRecord};

/// Mixture prior in unconstrained form: softmax logits, means, log-variances.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub k: usize,
    pub d: usize,
    /// `[logits (k) | means (k*d) | log-variances (k*d)]`
    pub theta: Vec<f64>,
}

impl MixtureParams {
    pub fn from_prior(prior: &GmmPrior) -> Self {
        let (k, d) = (prior.k(), prior.dim());
        let mut theta = Vec::with_capacity(k + 2 * k * d);
        theta.extend(prior.weights.iter().map(|w| w.max(1e-300).ln()));
        theta.extend(prior.means.iter().flatten());
        theta.extend(prior.variances.iter().flatten().map(|v| v.max(VARIANCE_FLOOR).ln()));
        Self { k, d, theta }
    }

    pub fn weights(&self) -> Vec<f64> {
        normalize_log(&self.theta[..self.k])
    }

    fn mean(&self, c: usize, j: usize) -> f64 {
        self.theta[self.k + c * self.d + j]
    }

    fn log_var(&self, c: usize, j: usize) -> f64 {
        self.theta[self.k + self.k * self.d + c * self.d + j]
    }

    pub fn to_prior(&self) -> GmmPrior {
        GmmPrior {
            weights: self.weights(),
            means: (0..self.k).map(|c| (0..self.d).map(|j| self.mean(c, j)).collect()).collect(),
            variances: (0..self.k).map(|c| (0..self.d).map(|j| self.log_var(c, j).exp()).collect()).collect(),
        }
    }
}

/// Per-sample mixture KL and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureKl {
    pub value: f64,
    pub dmean: Vec<f64>,
    pub dlogvar: Vec<f64>,
    /// Through the responsibilities evaluated at the sampled `z`.
    pub dz: Vec<f64>,
    pub dtheta: Vec<f64>,
}

/// `sum_c g_c A_c - sum_c g_c log pi_c + sum_c g_c log g_c - 0.5 sum_j (1 + lv_j)` with
/// `A_c = 0.5 sum_j (s_cj + exp(lv_j - s_cj) + (m_j - mu_cj)^2 exp(-s_cj))` and
/// responsibilities `g = softmax(log pi_c + log N(z; mu_c, exp(s_c)))`.
pub fn mixture_kl(params: &MixtureParams, mean: &[f64], logvar: &[f64], z: &[f64]) -> MixtureKl {
    let (k, d) = (params.k, params.d);
    let log_pi_raw = &params.theta[..k];
    let lse_pi = log_sum_exp(log_pi_raw);
    let log_pi: Vec<f64> = log_pi_raw.iter().map(|a| a - lse_pi).collect();
    let pi: Vec<f64> = log_pi.iter().map(|l| l.exp()).collect();

    let mut ell = vec![0.0; k];
    let mut a = vec![0.0; k];
    for c in 0..k {
        let mut l = log_pi[c];
        let mut ac = 0.0;
        for j in 0..d {
            let s = params.log_var(c, j);
            let inv = (-s).exp();
            let dzj = z[j] - params.mean(c, j);
            let dmj = mean[j] - params.mean(c, j);
            l -= 0.5 * (s + dzj * dzj * inv);
            ac += 0.5 * (s + (logvar[j] - s).exp() + dmj * dmj * inv);
        }
        ell[c] = l;
        a[c] = ac;
    }
    let lse = log_sum_exp(&ell);
    let log_g: Vec<f64> = ell.iter().map(|l| l - lse).collect();
    let g: Vec<f64> = log_g.iter().map(|l| l.exp()).collect();
    let h: Vec<f64> = (0..k).map(|c| a[c] - log_pi[c] + log_g[c]).collect();
    let hbar: f64 = (0..k).map(|c| g[c] * h[c]).sum();
    let value = hbar - 0.5 * logvar.iter().map(|lv| 1.0 + lv).sum::<f64>();

    let mut out = MixtureKl {
        value,
        dmean: vec![0.0; d],
        dlogvar: vec![-0.5; d],
        dz: vec![0.0; d],
        dtheta: vec![0.0; params.theta.len()],
    };
    let mu_off = k;
    let s_off = k + k * d;
    for c in 0..k {
        // gradient through the softmax defining g
        let delta = g[c] * (h[c] - hbar);
        out.dtheta[c] += delta - (g[c] - pi[c]);
        for j in 0..d {
            let s = params.log_var(c, j);
            let inv = (-s).exp();
            let dzj = z[j] - params.mean(c, j);
            let dmj = mean[j] - params.mean(c, j);
            let ratio = (logvar[j] - s).exp();
            out.dz[j] -= delta * dzj * inv;
            out.dtheta[mu_off + c * d + j] += delta * dzj * inv - g[c] * dmj * inv;
            out.dtheta[s_off + c * d + j] += delta * 0.5 * (dzj * dzj * inv - 1.0) + 0.5 * g[c] * (1.0 - ratio - dmj * dmj * inv);
            out.dmean[j] += g[c] * dmj * inv;
            out.dlogvar[j] += 0.5 * g[c] * ratio;
        }
    }
    out
}

/// The trainable mixture term plugged into the shared training loop.
pub struct MixtureTerm {
    pub params: MixtureParams,
    adam: Adam<f64>,
    grads: Vec<f64>,
    log_var_floor: f64,
    collapsed: Vec<bool>,
}

impl MixtureTerm {
    pub fn new(prior: &GmmPrior) -> Self {
        let params = MixtureParams::from_prior(prior);
        let n = params.theta.len();
        let k = params.k;
        Self {
            params,
            adam: Adam::new(n),
            grads: vec![0.0; n],
            log_var_floor: VARIANCE_FLOOR.ln(),
            collapsed: vec![false; k],
        }
    }
}

impl LatentTerm for MixtureTerm {
    fn accumulate(&mut self, mean: &[f32], logvar: &[f32], z: &[f32], batch: usize, dmean: &mut [f32], dlogvar: &mut [f32], dz: &mut [f32]) -> f64 {
        let d = self.params.d;
        let inv_b = 1.0 / batch as f64;
        let mut total = 0.0;
        let column = |buf: &[f32], i: usize| -> Vec<f64> { (0..d).map(|j| buf[j * batch + i] as f64).collect() };
        for i in 0..batch {
            let r = mixture_kl(&self.params, &column(mean, i), &column(logvar, i), &column(z, i));
            total += r.value;
            for j in 0..d {
                dmean[j * batch + i] += (r.dmean[j] * inv_b) as f32;
                dlogvar[j * batch + i] += (r.dlogvar[j] * inv_b) as f32;
                dz[j * batch + i] += (r.dz[j] * inv_b) as f32;
            }
            for (g, v) in self.grads.iter_mut().zip(&r.dtheta) {
                *g += v * inv_b;
            }
        }
        total
    }

    fn step(&mut self, lr: f64) {
        self.adam.step(&mut self.params.theta, &self.grads, lr);
        self.grads.fill(0.0);
        let (k, d) = (self.params.k, self.params.d);
        for s in &mut self.params.theta[k + k * d..] {
            *s = s.max(self.log_var_floor);
        }
    }

    fn end_epoch(&mut self, epoch: usize, record: &mut TrainRecord) -> Result<()> {
        let pi = self.params.weights();
        let err = (pi.iter().sum::<f64>() - 1.0).abs();
        let min = pi.iter().copied().fold(f64::INFINITY, f64::min);
        record.max_simplex_error = Some(record.max_simplex_error.map_or(err, |e| e.max(err)));
        record.min_weight = Some(record.min_weight.map_or(min, |m| m.min(min)));
        if self.params.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                kl: f64::NAN,
                rec: f64::NAN,
            });
        }
        for (c, &w) in pi.iter().enumerate() {
            if w < 1e-6 && !self.collapsed[c] {
                self.collapsed[c] = true;
                let msg = format!("epoch {epoch}: mixture weight of cluster {} fell to {w:.3e}", c + 1);
                log::warn!("{msg}");
                record.warnings.push(msg);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VadeModel {
    pub network: Autoencoder,
    pub prior: GmmPrior,
    pub record: TrainRecord,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub alternative_id: String,
    pub z_mean: Vec<f64>,
    pub responsibilities: Vec<f64>,
    /// 1-based cluster label.
    pub hard_label: usize,
}

/// Jointly trains a copy of the pretrained network and the mixture prior.
pub fn train_vade(samples: &[Vec<f32>], pretrained: &Autoencoder, init: &GmmPrior, cfg: &TrainConfig) -> Result<VadeModel> {
    cfg.validate()?;
    check_samples(samples, pretrained.pixels())?;
    init.validate()?;
    init.check_dim(pretrained.latent_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut network = pretrained.clone();
    let mut term = MixtureTerm::new(init);
    let mut record = TrainRecord::default();
    run_epochs(&mut network, samples, cfg, &mut term, &mut rng, &mut record)?;
    record.final_reconstruction = reconstruction_loss(&network, samples);
    Ok(VadeModel {
        network,
        prior: term.params.to_prior(),
        record,
        config: cfg.clone(),
    })
}

/// Responsibilities of a latent point; `hard_label` is 1-based with the lowest index winning ties.
pub fn embed(prior: &GmmPrior, id: impl Into<String>, z_mean: Vec<f64>) -> Embedding {
    let responsibilities = prior.responsibilities(&z_mean);
    let hard_label = argmax(&responsibilities) + 1;
    Embedding {
        alternative_id: id.into(),
        z_mean,
        responsibilities,
        hard_label,
    }
}

impl VadeModel {
    pub fn k(&self) -> usize {
        self.prior.k()
    }

    pub fn latent_dim(&self) -> usize {
        self.network.latent_dim
    }

    pub fn assign(&self, id: &str, field: &[f32]) -> Result<Embedding> {
        let mut all = self.assign_all(&[(id.to_string(), field.to_vec())])?;
        Ok(all.remove(0))
    }

    pub fn assign_all(&self, items: &[(String, Vec<f32>)]) -> Result<Vec<Embedding>> {
        let samples: Vec<Vec<f32>> = items.iter().map(|(_, s)| s.clone()).collect();
        check_samples(&samples, self.network.pixels())?;
        let (means, _) = self.network.encode_all(&samples, 64);
        Ok(items.iter().zip(means).map(|((id, _), z)| embed(&self.prior, id.clone(), z)).collect())
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        decode_checked(&self.network, z)
    }

    /// Decoded cluster centers, one per component in order.
    pub fn representatives(&self) -> Vec<Vec<f64>> {
        self.prior.means.iter().map(|m| self.network.decode_one(m)).collect()
    }

    /// `dim` is 1-based.
    pub fn traverse(&self, cluster: usize, dim: usize, range: (f64, f64), steps: usize) -> Result<Vec<(f64, Vec<f64>)>> {
        if cluster == 0 || cluster > self.k() {
            return Err(Error::Config(format!("cluster {cluster} outside 1..={}", self.k())));
        }
        traverse(&self.network, &self.prior.means[cluster - 1], dim, range, steps)
    }
}

pub fn decode_checked(network: &Autoencoder, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != network.latent_dim {
        return Err(Error::LatentDim {
            got: z.len(),
            expected: network.latent_dim,
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLatent);
    }
    Ok(network.decode_one(z))
}

/// `steps` equally spaced values covering `range` inclusively.
pub fn linspace(range: (f64, f64), steps: usize) -> Vec<f64> {
    let (lo, hi) = range;
    (0..steps)
        .map(|i| {
            if i + 1 == steps {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (steps - 1) as f64
            }
        })
        .collect()
}

/// Decodes `base` with coordinate `dim` (1-based) swept across `range`.
pub fn traverse(network: &Autoencoder, base: &[f64], dim: usize, range: (f64, f64), steps: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    if dim == 0 || dim > base.len() {
        return Err(Error::Config(format!("dimension {dim} outside 1..={}", base.len())));
    }
    if steps < 2 {
        return Err(Error::Config("traversal needs at least 2 steps".into()));
    }
    linspace(range, steps)
        .into_iter()
        .map(|v| {
            let mut z = base.to_vec();
            z[dim - 1] = v;
            decode_checked(network, &z).map(|f| (v, f))
        })
        .collect()
}
