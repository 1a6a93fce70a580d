//! Mini-batch training loop shared by the plain VAE and VaDE.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::network::{Architecture, Autoencoder};
use crate::ops::{sigmoid, softplus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplicative decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 150,
            learning_rate: 1e-3,
            lr_decay: 0.95,
            decay_every: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn vade_default() -> Self {
        Self {
            epochs: 300,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) || self.decay_every == 0 {
            return Err(Error::Config("lr_decay must be positive and decay_every at least 1".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

/// Sample-averaged loss components of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub kl: f64,
    pub reconstruction: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochLoss>,
    /// Mean per-image cross-entropy decoding the posterior mean, after training.
    pub final_reconstruction: f64,
    /// Largest `|sum(pi) - 1|` seen at any epoch end (mixture prior only).
    pub max_simplex_error: Option<f64>,
    /// Smallest mixture weight seen at any epoch end.
    pub min_weight: Option<f64>,
    pub warnings: Vec<String>,
}

impl TrainRecord {
    pub fn first(&self) -> Option<&EpochLoss> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochLoss> {
        self.epochs.last()
    }
}

/// Latent regularizer of the ELBO. Columns of the `[d, B]` buffers are samples.
pub trait LatentTerm {
    /// Adds the batch-mean gradients into `dmean`, `dlogvar`, `dz` and this
    /// term's own parameter gradients; returns the batch-summed KL.
    fn accumulate(&mut self, mean: &[f32], logvar: &[f32], z: &[f32], batch: usize, dmean: &mut [f32], dlogvar: &mut [f32], dz: &mut [f32]) -> f64;

    /// Applies the accumulated parameter gradients, if any, and clears them.
    fn step(&mut self, _lr: f64) {}

    fn end_epoch(&mut self, _epoch: usize, _record: &mut TrainRecord) -> Result<()> {
        Ok(())
    }
}

/// `KL(N(mean, exp(logvar)) || N(0, I))`.
pub struct StandardPrior;

impl LatentTerm for StandardPrior {
    fn accumulate(&mut self, mean: &[f32], logvar: &[f32], _z: &[f32], batch: usize, dmean: &mut [f32], dlogvar: &mut [f32], _dz: &mut [f32]) -> f64 {
        let inv_b = 1.0 / batch as f64;
        let mut kl = 0.0;
        for i in 0..mean.len() {
            let (m, lv) = (mean[i] as f64, logvar[i] as f64);
            let e = lv.exp();
            kl += -0.5 * (1.0 + lv - m * m - e);
            dmean[i] += (m * inv_b) as f32;
            dlogvar[i] += (0.5 * (e - 1.0) * inv_b) as f32;
        }
        kl
    }
}

pub(crate) fn check_samples(samples: &[Vec<f32>], pixels: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (index, s) in samples.iter().enumerate() {
        if s.len() != pixels {
            return Err(Error::SampleShape {
                index,
                got: s.len(),
                expected: pixels,
            });
        }
    }
    Ok(())
}

/// Bernoulli cross-entropy from logits, summed; writes `(sigmoid - x) * scale`.
fn bce_with_logits(logits: &[f32], target: &[f32], scale: f64, grad: &mut [f32]) -> f64 {
    let mut total = 0.0;
    for i in 0..logits.len() {
        let (l, x) = (logits[i] as f64, target[i] as f64);
        total += softplus(l) - x * l;
        grad[i] = ((sigmoid(l) - x) * scale) as f32;
    }
    total
}

/// Runs `cfg.epochs` epochs; `rng` drives shuffling and reparameterization noise.
pub fn run_epochs(
    model: &mut Autoencoder,
    samples: &[Vec<f32>],
    cfg: &TrainConfig,
    term: &mut dyn LatentTerm,
    rng: &mut ChaCha8Rng,
    record: &mut TrainRecord,
) -> Result<()> {
    cfg.validate()?;
    check_samples(samples, model.pixels())?;
    let d = model.latent_dim;
    let pixels = model.pixels();
    let n = samples.len();
    let mut adam = Adam::<f32>::new(model.n_params());
    let mut grads = vec![0.0f32; model.n_params()];
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(rng);
        let (mut kl_sum, mut rec_sum) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut x = Vec::with_capacity(b * pixels);
            for &i in chunk {
                x.extend_from_slice(&samples[i]);
            }
            let (mean, logvar, etrace) = model.encode(&x, b);
            let eps: Vec<f32> = (0..d * b).map(|_| rng.sample(StandardNormal)).collect();
            let z: Vec<f32> = (0..d * b).map(|i| mean[i] + (0.5 * logvar[i]).exp() * eps[i]).collect();
            let (logits, dtrace) = model.decode_logits(&z, b);
            let mut dlogits = vec![0.0f32; logits.len()];
            let rec = bce_with_logits(&logits, &x, 1.0 / b as f64, &mut dlogits);
            grads.fill(0.0);
            let mut dz = model.decode_backward(&dtrace, &dlogits, &mut grads);
            let mut dmean = vec![0.0f32; d * b];
            let mut dlogvar = vec![0.0f32; d * b];
            let kl = term.accumulate(&mean, &logvar, &z, b, &mut dmean, &mut dlogvar, &mut dz);
            if !(kl.is_finite() && rec.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    kl,
                    rec,
                });
            }
            for i in 0..d * b {
                dmean[i] += dz[i];
                dlogvar[i] += dz[i] * 0.5 * (0.5 * logvar[i]).exp() * eps[i];
            }
            model.encode_backward(&etrace, &dmean, &dlogvar, &mut grads);
            adam.step(&mut model.params, &grads, lr);
            term.step(lr);
            kl_sum += kl;
            rec_sum += rec;
        }
        let (kl, reconstruction) = (kl_sum / n as f64, rec_sum / n as f64);
        record.epochs.push(EpochLoss {
            epoch: epoch + 1,
            kl,
            reconstruction,
            total: kl + reconstruction,
        });
        term.end_epoch(epoch + 1, record)?;
        log::debug!("epoch {}: kl {kl:.4} rec {reconstruction:.4}", epoch + 1);
    }
    Ok(())
}

/// Mean per-image cross-entropy when decoding each sample's posterior mean.
pub fn reconstruction_loss(model: &Autoencoder, samples: &[Vec<f32>]) -> f64 {
    let mut total = 0.0;
    for block in samples.chunks(64) {
        let b = block.len();
        let x: Vec<f32> = block.iter().flatten().copied().collect();
        let (mean, _, _) = model.encode(&x, b);
        let (logits, _) = model.decode_logits(&mean, b);
        let mut scratch = vec![0.0f32; logits.len()];
        total += bce_with_logits(&logits, &x, 1.0, &mut scratch);
    }
    total / samples.len() as f64
}

/// Plain VAE with a unit Gaussian prior.
pub fn train_vae(samples: &[Vec<f32>], arch: &Architecture, latent_dim: usize, cfg: &TrainConfig) -> Result<(Autoencoder, TrainRecord)> {
    cfg.validate()?;
    check_samples(samples, arch.pixels())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Autoencoder::new(arch.clone(), latent_dim, &mut rng)?;
    let mut record = TrainRecord::default();
    run_epochs(&mut model, samples, cfg, &mut StandardPrior, &mut rng, &mut record)?;
    record.final_reconstruction = reconstruction_loss(&model, samples);
    Ok((model, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub latent_dim: usize,
    pub final_reconstruction: f64,
    pub first_epoch_reconstruction: f64,
}

/// One independently trained VAE per dimension; `visit` sees every model.
pub fn latent_dim_sweep(
    samples: &[Vec<f32>],
    arch: &Architecture,
    dims: &[usize],
    cfg: &TrainConfig,
    mut visit: impl FnMut(usize, &Autoencoder, &TrainRecord) -> Result<()>,
) -> Result<Vec<SweepRow>> {
    if dims.is_empty() {
        return Err(Error::Config("latent-dimension sweep needs at least one dimension".into()));
    }
    let mut rows = Vec::with_capacity(dims.len());
    for &d in dims {
        log::info!("training VAE with latent dimension {d}");
        let (model, record) = train_vae(samples, arch, d, cfg)?;
        visit(d, &model, &record)?;
        rows.push(SweepRow {
            latent_dim: d,
            final_reconstruction: record.final_reconstruction,
            first_epoch_reconstruction: record.first().map_or(f64::NAN, |e| e.reconstruction),
        });
    }
    Ok(rows)
}

/// Line plot of final reconstruction loss against latent dimension.
pub fn sweep_plot_svg(rows: &[SweepRow]) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let xs: Vec<f64> = rows.iter().map(|r| r.latent_dim as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.final_reconstruction).collect();
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ty}\" text-anchor=\"middle\" font-size=\"12\">latent dimension</text>\n\
         <text x=\"12\" y=\"{cy}\" font-size=\"12\" transform=\"rotate(-90 12 {cy})\" text-anchor=\"middle\">reconstruction loss</text>\n",
        b = h - m,
        r = w - m,
        cx = w / 2.0,
        ty = h - 12.0,
        cy = h / 2.0,
    );
    let points: Vec<String> = xs.iter().zip(&ys).map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
    svg += &format!("<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n", points.join(" "));
    for (&x, &y) in xs.iter().zip(&ys) {
        svg += &format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"steelblue\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            px(x),
            py(y),
            px(x),
            h - m + 14.0,
            x
        );
    }
    svg += "</svg>\n";
    svg
}
