//! Convolutional encoder / transposed-convolutional decoder pair with all
//! parameters in one flat `f32` buffer.
//!
//! Encoder: `conv -> ReLU` per channel stage, flatten, two ReLU dense
//! stages, then dense mean and log-variance heads. The decoder mirrors it and
//! ends in per-pixel logits; a sigmoid maps them into `(0, 1)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, col2im, gemm, im2col, relu_backward, relu_in_place, rm, ConvGeometry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    /// Square input side in pixels.
    pub input_size: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Dense stage widths after the flatten.
    pub hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_size: 80,
            channels: vec![16, 32, 64],
            kernel: 4,
            stride: 2,
            padding: 1,
            hidden: vec![1024, 256],
        }
    }
}

impl Architecture {
    pub fn pixels(&self) -> usize {
        self.input_size * self.input_size
    }

    /// Spatial side after each conv stage, starting with the input.
    pub fn sizes(&self) -> Result<Vec<usize>> {
        let mut sizes = vec![self.input_size];
        for _ in &self.channels {
            let s = *sizes.last().unwrap();
            if s + 2 * self.padding < self.kernel {
                return Err(Error::Config(format!("feature map {s} smaller than kernel")));
            }
            let out = (s + 2 * self.padding - self.kernel) / self.stride + 1;
            // the transposed stage must land exactly back on `s`
            if (out - 1) * self.stride + self.kernel != s + 2 * self.padding {
                return Err(Error::Config(format!(
                    "conv stage {s} -> {out} is not exactly invertible by its transpose"
                )));
            }
            sizes.push(out);
        }
        Ok(sizes)
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    inputs: usize,
    outputs: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    cin: usize,
    cout: usize,
    /// Spatial side of the larger map (input for conv, output for transposed).
    big: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    convs: Vec<Conv>,
    enc_dense: Vec<Dense>,
    head_mean: Dense,
    head_logvar: Dense,
    dec_dense: Vec<Dense>,
    /// Transposed convolutions in forward (decoder) order.
    deconvs: Vec<Conv>,
    small: usize,
    n_params: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl Layout {
    fn new(arch: &Architecture, latent_dim: usize) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::Config("latent dimension must be at least 1".into()));
        }
        if arch.channels.is_empty() || arch.hidden.is_empty() {
            return Err(Error::Config("need at least one conv stage and one dense stage".into()));
        }
        let sizes = arch.sizes()?;
        let kk = arch.kernel * arch.kernel;
        let mut n = 0usize;
        let dense = |inputs: usize, outputs: usize, n: &mut usize| {
            let d = Dense {
                inputs,
                outputs,
                w: *n,
                b: *n + inputs * outputs,
            };
            *n += inputs * outputs + outputs;
            d
        };
        let mut convs = Vec::new();
        let mut cin = 1;
        for (i, &cout) in arch.channels.iter().enumerate() {
            convs.push(Conv {
                cin,
                cout,
                big: sizes[i],
                w: n,
                b: n + cout * cin * kk,
            });
            n += cout * cin * kk + cout;
            cin = cout;
        }
        let small = *sizes.last().unwrap();
        let flat = cin * small * small;
        let mut widths = vec![flat];
        widths.extend(&arch.hidden);
        let enc_dense: Vec<Dense> = widths.windows(2).map(|w| dense(w[0], w[1], &mut n)).collect();
        let last = *widths.last().unwrap();
        let head_mean = dense(last, latent_dim, &mut n);
        let head_logvar = dense(last, latent_dim, &mut n);
        let mut dec_widths = vec![latent_dim];
        dec_widths.extend(widths.iter().rev());
        let dec_dense: Vec<Dense> = dec_widths.windows(2).map(|w| dense(w[0], w[1], &mut n)).collect();
        let mut deconvs = Vec::new();
        for i in (0..arch.channels.len()).rev() {
            let cin = arch.channels[i];
            let cout = if i == 0 { 1 } else { arch.channels[i - 1] };
            deconvs.push(Conv {
                cin,
                cout,
                big: sizes[i],
                w: n,
                b: n + cin * cout * kk,
            });
            n += cin * cout * kk + cout;
        }
        Ok(Self {
            convs,
            enc_dense,
            head_mean,
            head_logvar,
            dec_dense,
            deconvs,
            small,
            n_params: n,
            kernel: arch.kernel,
            stride: arch.stride,
            pad: arch.padding,
        })
    }

    fn geometry(&self, channels: usize, batch: usize, size: usize) -> ConvGeometry {
        ConvGeometry {
            channels,
            batch,
            in_h: size,
            in_w: size,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        }
    }
}

fn add_row_bias(y: &mut [f32], bias: &[f32], cols: usize) {
    for (row, &b) in y.chunks_exact_mut(cols).zip(bias) {
        for v in row {
            *v += b;
        }
    }
}

fn accumulate_row_sums(grad_b: &mut [f32], dy: &[f32], cols: usize) {
    for (g, row) in grad_b.iter_mut().zip(dy.chunks_exact(cols)) {
        *g += row.iter().sum::<f32>();
    }
}

fn dense_forward(p: &[f32], d: &Dense, x: &[f32], batch: usize) -> Vec<f32> {
    let mut y = vec![0.0; d.outputs * batch];
    let w = &p[d.w..d.b];
    gemm(d.outputs, d.inputs, batch, 1.0, w, rm(d.inputs), x, rm(batch), 0.0, &mut y, rm(batch));
    add_row_bias(&mut y, &p[d.b..d.b + d.outputs], batch);
    y
}

/// Accumulates parameter gradients; returns `dx` when requested.
fn dense_backward(p: &[f32], grads: &mut [f32], d: &Dense, x: &[f32], dy: &[f32], batch: usize, need_dx: bool) -> Vec<f32> {
    gemm(
        d.outputs,
        batch,
        d.inputs,
        1.0,
        dy,
        rm(batch),
        x,
        ops::tr(batch),
        1.0,
        &mut grads[d.w..d.b],
        rm(d.inputs),
    );
    accumulate_row_sums(&mut grads[d.b..d.b + d.outputs], dy, batch);
    if !need_dx {
        return Vec::new();
    }
    let mut dx = vec![0.0; d.inputs * batch];
    gemm(
        d.inputs,
        d.outputs,
        batch,
        1.0,
        &p[d.w..d.b],
        ops::tr(d.inputs),
        dy,
        rm(batch),
        0.0,
        &mut dx,
        rm(batch),
    );
    dx
}

/// Everything the encoder backward pass needs.
pub struct EncoderTrace {
    batch: usize,
    cols: Vec<Vec<f32>>,
    conv_out: Vec<Vec<f32>>,
    dense_in: Vec<Vec<f32>>,
    head_in: Vec<f32>,
}

pub struct DecoderTrace {
    batch: usize,
    z: Vec<f32>,
    dense_in: Vec<Vec<f32>>,
    dense_out_last: Vec<f32>,
    deconv_in: Vec<Vec<f32>>,
    deconv_out: Vec<Vec<f32>>,
}

/// Encoder + decoder parameters for one latent dimension.
#[derive(Clone)]
pub struct Autoencoder {
    pub arch: Architecture,
    pub latent_dim: usize,
    pub params: Vec<f32>,
    layout: Layout,
}

impl std::fmt::Debug for Autoencoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Autoencoder")
            .field("arch", &self.arch)
            .field("latent_dim", &self.latent_dim)
            .field("n_params", &self.params.len())
            .finish()
    }
}

impl Autoencoder {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization of weights and biases.
    pub fn new(arch: Architecture, latent_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let layout = Layout::new(&arch, latent_dim)?;
        let mut params = vec![0.0f32; layout.n_params];
        let kk = arch.kernel * arch.kernel;
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f32).sqrt();
            for v in &mut params[range] {
                *v = rng.random_range(-bound..bound);
            }
        };
        for c in &layout.convs {
            fill(c.w..c.b + c.cout, c.cin * kk);
        }
        for d in layout
            .enc_dense
            .iter()
            .chain([&layout.head_mean, &layout.head_logvar])
            .chain(&layout.dec_dense)
        {
            fill(d.w..d.b + d.outputs, d.inputs);
        }
        for c in &layout.deconvs {
            fill(c.w..c.b + c.cout, c.cout * kk);
        }
        Ok(Self {
            arch,
            latent_dim,
            params,
            layout,
        })
    }

    pub fn from_params(arch: Architecture, latent_dim: usize, params: Vec<f32>) -> Result<Self> {
        let layout = Layout::new(&arch, latent_dim)?;
        if params.len() != layout.n_params {
            return Err(Error::Weights(format!(
                "{} parameters, architecture needs {}",
                params.len(),
                layout.n_params
            )));
        }
        Ok(Self {
            arch,
            latent_dim,
            params,
            layout,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params
    }

    pub fn pixels(&self) -> usize {
        self.arch.pixels()
    }

    /// `x` is `[B, P]` row-major; returns `(mean, logvar)` as `[d, B]`.
    pub fn encode(&self, x: &[f32], batch: usize) -> (Vec<f32>, Vec<f32>, EncoderTrace) {
        let l = &self.layout;
        let p = &self.params;
        let kk = l.kernel * l.kernel;
        let mut a = x.to_vec();
        let mut cols = Vec::with_capacity(l.convs.len());
        let mut conv_out = Vec::with_capacity(l.convs.len());
        for c in &l.convs {
            let g = l.geometry(c.cin, batch, c.big);
            let col = im2col(&a, &g);
            let n = g.col_cols();
            let mut y = vec![0.0; c.cout * n];
            gemm(c.cout, c.cin * kk, n, 1.0, &p[c.w..c.b], rm(c.cin * kk), &col, rm(n), 0.0, &mut y, rm(n));
            add_row_bias(&mut y, &p[c.b..c.b + c.cout], n);
            relu_in_place(&mut y);
            cols.push(col);
            conv_out.push(y.clone());
            a = y;
        }
        let last = l.convs.last().unwrap();
        let mut h = ops::cbp_to_features(&a, last.cout, batch, l.small * l.small);
        let mut dense_in = Vec::with_capacity(l.enc_dense.len());
        for d in &l.enc_dense {
            let mut y = dense_forward(p, d, &h, batch);
            relu_in_place(&mut y);
            dense_in.push(h);
            h = y;
        }
        let mean = dense_forward(p, &l.head_mean, &h, batch);
        let logvar = dense_forward(p, &l.head_logvar, &h, batch);
        (
            mean,
            logvar,
            EncoderTrace {
                batch,
                cols,
                conv_out,
                dense_in,
                head_in: h,
            },
        )
    }

    /// Accumulate encoder parameter gradients from `dL/dmean`, `dL/dlogvar` (`[d, B]`).
    pub fn encode_backward(&self, trace: &EncoderTrace, dmean: &[f32], dlogvar: &[f32], grads: &mut [f32]) {
        let l = &self.layout;
        let p = &self.params;
        let b = trace.batch;
        let kk = l.kernel * l.kernel;
        let mut dh = dense_backward(p, grads, &l.head_mean, &trace.head_in, dmean, b, true);
        let dh2 = dense_backward(p, grads, &l.head_logvar, &trace.head_in, dlogvar, b, true);
        for (a, c) in dh.iter_mut().zip(&dh2) {
            *a += c;
        }
        relu_backward(&mut dh, &trace.head_in);
        for (i, d) in l.enc_dense.iter().enumerate().rev() {
            dh = dense_backward(p, grads, d, &trace.dense_in[i], &dh, b, true);
            if i > 0 {
                relu_backward(&mut dh, &trace.dense_in[i]);
            }
        }
        let last = l.convs.last().unwrap();
        let mut da = ops::features_to_cbp(&dh, last.cout, b, l.small * l.small);
        for (i, c) in l.convs.iter().enumerate().rev() {
            relu_backward(&mut da, &trace.conv_out[i]);
            let g = l.geometry(c.cin, b, c.big);
            let n = g.col_cols();
            let col = &trace.cols[i];
            gemm(c.cout, n, c.cin * kk, 1.0, &da, rm(n), col, ops::tr(n), 1.0, &mut grads[c.w..c.b], rm(c.cin * kk));
            accumulate_row_sums(&mut grads[c.b..c.b + c.cout], &da, n);
            if i == 0 {
                break;
            }
            let mut dcol = vec![0.0; c.cin * kk * n];
            gemm(c.cin * kk, c.cout, n, 1.0, &p[c.w..c.b], ops::tr(c.cin * kk), &da, rm(n), 0.0, &mut dcol, rm(n));
            da = col2im(&dcol, &g);
        }
    }

    /// `z` is `[d, B]`; returns logits `[B, P]`.
    pub fn decode_logits(&self, z: &[f32], batch: usize) -> (Vec<f32>, DecoderTrace) {
        let l = &self.layout;
        let p = &self.params;
        let kk = l.kernel * l.kernel;
        let mut h = z.to_vec();
        let mut dense_in = Vec::with_capacity(l.dec_dense.len());
        for d in &l.dec_dense {
            let mut y = dense_forward(p, d, &h, batch);
            relu_in_place(&mut y);
            dense_in.push(h);
            h = y;
        }
        let first = l.deconvs[0];
        let mut a = ops::features_to_cbp(&h, first.cin, batch, l.small * l.small);
        let mut deconv_in = Vec::with_capacity(l.deconvs.len());
        let mut deconv_out = Vec::with_capacity(l.deconvs.len());
        for (i, c) in l.deconvs.iter().enumerate() {
            let g = l.geometry(c.cout, batch, c.big);
            let n = g.col_cols();
            let mut col = vec![0.0; c.cout * kk * n];
            gemm(c.cout * kk, c.cin, n, 1.0, &p[c.w..c.b], ops::tr(c.cout * kk), &a, rm(n), 0.0, &mut col, rm(n));
            let mut y = col2im(&col, &g);
            add_row_bias(&mut y, &p[c.b..c.b + c.cout], batch * c.big * c.big);
            if i + 1 < l.deconvs.len() {
                relu_in_place(&mut y);
            }
            deconv_in.push(a);
            deconv_out.push(y.clone());
            a = y;
        }
        (
            a,
            DecoderTrace {
                batch,
                z: z.to_vec(),
                dense_in,
                dense_out_last: h,
                deconv_in,
                deconv_out,
            },
        )
    }

    /// Accumulate decoder parameter gradients from `dL/dlogits`; returns `dL/dz`.
    pub fn decode_backward(&self, trace: &DecoderTrace, dlogits: &[f32], grads: &mut [f32]) -> Vec<f32> {
        let l = &self.layout;
        let p = &self.params;
        let b = trace.batch;
        let kk = l.kernel * l.kernel;
        let mut da = dlogits.to_vec();
        for (i, c) in l.deconvs.iter().enumerate().rev() {
            if i + 1 < l.deconvs.len() {
                relu_backward(&mut da, &trace.deconv_out[i]);
            }
            let g = l.geometry(c.cout, b, c.big);
            let n = g.col_cols();
            let dcol = im2col(&da, &g);
            let x = &trace.deconv_in[i];
            gemm(c.cin, n, c.cout * kk, 1.0, x, rm(n), &dcol, ops::tr(n), 1.0, &mut grads[c.w..c.b], rm(c.cout * kk));
            accumulate_row_sums(&mut grads[c.b..c.b + c.cout], &da, b * c.big * c.big);
            let mut dx = vec![0.0; c.cin * n];
            gemm(c.cin, c.cout * kk, n, 1.0, &p[c.w..c.b], rm(c.cout * kk), &dcol, rm(n), 0.0, &mut dx, rm(n));
            da = dx;
        }
        let first = l.deconvs[0];
        let mut dh = ops::cbp_to_features(&da, first.cin, b, l.small * l.small);
        relu_backward(&mut dh, &trace.dense_out_last);
        for (i, d) in l.dec_dense.iter().enumerate().rev() {
            dh = dense_backward(p, grads, d, &trace.dense_in[i], &dh, b, true);
            if i > 0 {
                relu_backward(&mut dh, &trace.dense_in[i]);
            }
        }
        debug_assert_eq!(dh.len(), trace.z.len());
        dh
    }

    /// Per-pixel probabilities for one latent vector.
    pub fn decode_one(&self, z: &[f64]) -> Vec<f64> {
        let zf: Vec<f32> = z.iter().map(|&v| v as f32).collect();
        let (logits, _) = self.decode_logits(&zf, 1);
        logits.iter().map(|&l| ops::sigmoid(l as f64)).collect()
    }

    /// Posterior means and log-variances of every sample, `[n][d]`.
    pub fn encode_all(&self, samples: &[Vec<f32>], chunk: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let d = self.latent_dim;
        let mut means = Vec::with_capacity(samples.len());
        let mut logvars = Vec::with_capacity(samples.len());
        for block in samples.chunks(chunk.max(1)) {
            let b = block.len();
            let x: Vec<f32> = block.iter().flatten().copied().collect();
            let (m, lv, _) = self.encode(&x, b);
            for i in 0..b {
                means.push((0..d).map(|j| m[j * b + i] as f64).collect());
                logvars.push((0..d).map(|j| lv[j * b + i] as f64).collect());
            }
        }
        (means, logvars)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    pub(crate) fn tiny_arch() -> Architecture {
        Architecture {
            input_size: 8,
            channels: vec![2, 3],
            kernel: 4,
            stride: 2,
            padding: 1,
            hidden: vec![6, 5],
        }
    }

    #[test]
    fn default_architecture_shapes() {
        let arch = Architecture::default();
        assert_eq!(arch.sizes().unwrap(), vec![80, 40, 20, 10]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ae = Autoencoder::new(arch, 5, &mut rng).unwrap();
        let x = vec![0.5f32; 2 * 6400];
        let (m, lv, _) = ae.encode(&x, 2);
        assert_eq!((m.len(), lv.len()), (10, 10));
        let (logits, _) = ae.decode_logits(&m, 2);
        assert_eq!(logits.len(), 2 * 6400);
    }

    #[test]
    fn rejects_non_invertible_geometry() {
        let arch = Architecture {
            input_size: 81,
            ..Architecture::default()
        };
        assert!(arch.sizes().is_err());
    }

    /// `L = sum(c_mean * mean) + sum(c_lv * logvar) + sum(c_out * logits(mean))`
    fn scalar_loss(ae: &Autoencoder, x: &[f32], b: usize, cm: &[f32], cl: &[f32], co: &[f32]) -> f64 {
        let (m, lv, _) = ae.encode(x, b);
        let (out, _) = ae.decode_logits(&m, b);
        let dot = |a: &[f32], c: &[f32]| a.iter().zip(c).map(|(x, y)| *x as f64 * *y as f64).sum::<f64>();
        dot(&m, cm) + dot(&lv, cl) + dot(&out, co)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let arch = tiny_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ae = Autoencoder::new(arch, 2, &mut rng).unwrap();
        let b = 2;
        let x: Vec<f32> = (0..b * 64).map(|_| rng.random_range(0.0..1.0)).collect();
        let cm: Vec<f32> = (0..2 * b).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cl: Vec<f32> = (0..2 * b).map(|_| rng.random_range(-1.0..1.0)).collect();
        let co: Vec<f32> = (0..b * 64).map(|_| rng.random_range(-1.0..1.0)).collect();

        let (m, _, etrace) = ae.encode(&x, b);
        let (_, dtrace) = ae.decode_logits(&m, b);
        let mut grads = vec![0.0f32; ae.n_params()];
        let dz = ae.decode_backward(&dtrace, &co, &mut grads);
        let dmean: Vec<f32> = cm.iter().zip(&dz).map(|(a, b)| a + b).collect();
        ae.encode_backward(&etrace, &dmean, &cl, &mut grads);

        let mut checked = 0;
        for idx in (0..ae.n_params()).step_by(7) {
            let orig = ae.params[idx];
            let h = 1e-2f32;
            ae.params[idx] = orig + h;
            let up = scalar_loss(&ae, &x, b, &cm, &cl, &co);
            ae.params[idx] = orig - h;
            let down = scalar_loss(&ae, &x, b, &cm, &cl, &co);
            ae.params[idx] = orig;
            let fd = (up - down) / (2.0 * h as f64);
            let an = grads[idx] as f64;
            // ReLU kinks make some probes non-smooth; these are rare at this scale
            assert!((fd - an).abs() <= 2e-3 + 2e-2 * fd.abs().max(an.abs()), "param {idx}: fd {fd} vs analytic {an}");
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn decode_is_deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ae = Autoencoder::new(tiny_arch(), 3, &mut rng).unwrap();
        let z = [0.3, -2.0, 9.0];
        let a = ae.decode_one(&z);
        assert_eq!(a, ae.decode_one(&z));
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
