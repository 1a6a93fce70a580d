//! Diagonal Gaussian mixtures: the VaDE prior and its EM initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPrior {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalized probabilities from unnormalized log values.
pub(crate) fn normalize_log(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    let mut p: Vec<f64> = v.iter().map(|x| (x - lse).exp()).collect();
    let s: f64 = p.iter().sum();
    for x in &mut p {
        *x /= s;
    }
    p
}

impl GmmPrior {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        let d = self.dim();
        let shape_ok = k > 0
            && d > 0
            && self.means.len() == k
            && self.variances.len() == k
            && self.means.iter().chain(&self.variances).all(|v| v.len() == d);
        if !shape_ok {
            return Err(Error::PriorShape {
                got_k: k,
                got_d: d,
                want_k: self.means.len(),
                want_d: self.variances.first().map_or(0, Vec::len),
            });
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(Error::Config(format!("mixture weights sum to {sum}")));
        }
        if self.variances.iter().flatten().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config("mixture variances must be positive".into()));
        }
        if self.means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::Config("mixture means must be finite".into()));
        }
        Ok(())
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(Error::PriorShape {
                got_k: self.k(),
                got_d: self.dim(),
                want_k: self.k(),
                want_d: d,
            });
        }
        Ok(())
    }

    /// `log pi_k + log N(z; mu_k, sigma2_k)` for every component.
    pub fn log_joint(&self, z: &[f64]) -> Vec<f64> {
        (0..self.k())
            .map(|c| {
                let mut l = self.weights[c].ln();
                for j in 0..z.len() {
                    let var = self.variances[c][j];
                    let diff = z[j] - self.means[c][j];
                    l -= 0.5 * (LN_2PI + var.ln() + diff * diff / var);
                }
                l
            })
            .collect()
    }

    pub fn responsibilities(&self, z: &[f64]) -> Vec<f64> {
        normalize_log(&self.log_joint(z))
    }

    pub fn log_likelihood(&self, points: &[Vec<f64>]) -> f64 {
        points.iter().map(|z| log_sum_exp(&self.log_joint(z))).sum()
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmSettings {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Stop when the mean log-likelihood improves by less than this.
    pub tolerance: f64,
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iterations: 500,
            tolerance: 1e-10,
            variance_floor: VARIANCE_FLOOR,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub prior: GmmPrior,
    pub log_likelihood: f64,
    pub iterations: usize,
}

/// k-means++ style seeding: first center uniform, then proportional to
/// squared distance from the nearest chosen center.
fn seed_means(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let dist: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut idx = points.len() - 1;
            for (i, &w) in dist.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[pick].clone());
    }
    centers
}

fn em_run(points: &[Vec<f64>], k: usize, s: &EmSettings, rng: &mut ChaCha8Rng) -> GmmFit {
    let n = points.len();
    let d = points[0].len();
    let mut global_mean = vec![0.0; d];
    for p in points {
        for j in 0..d {
            global_mean[j] += p[j] / n as f64;
        }
    }
    let mut global_var = vec![0.0; d];
    for p in points {
        for j in 0..d {
            global_var[j] += (p[j] - global_mean[j]).powi(2) / n as f64;
        }
    }
    for v in &mut global_var {
        *v = v.max(s.variance_floor);
    }
    let mut prior = GmmPrior {
        weights: vec![1.0 / k as f64; k],
        means: seed_means(points, k, rng),
        variances: vec![global_var; k],
    };
    let mut prev = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut resp = vec![vec![0.0; k]; n];
    for it in 0..s.max_iterations {
        iterations = it + 1;
        let mut ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            let lj = prior.log_joint(p);
            ll += log_sum_exp(&lj);
            resp[i] = normalize_log(&lj);
        }
        for c in 0..k {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk <= 1e-12 {
                // dead component: keep the old parameters, the restart will be rejected
                prior.weights[c] = 0.0;
                continue;
            }
            prior.weights[c] = nk / n as f64;
            for j in 0..d {
                let mean = resp.iter().zip(points).map(|(r, p)| r[c] * p[j]).sum::<f64>() / nk;
                let var = resp.iter().zip(points).map(|(r, p)| r[c] * (p[j] - mean).powi(2)).sum::<f64>() / nk;
                prior.means[c][j] = mean;
                prior.variances[c][j] = var.max(s.variance_floor);
            }
        }
        let wsum: f64 = prior.weights.iter().sum();
        for w in &mut prior.weights {
            *w /= wsum;
        }
        if (ll - prev).abs() < s.tolerance * n as f64 {
            break;
        }
        prev = ll;
    }
    let log_likelihood = prior.log_likelihood(points);
    GmmFit {
        prior,
        log_likelihood,
        iterations,
    }
}

/// Hard-assignment counts per component.
pub fn hard_counts(prior: &GmmPrior, points: &[Vec<f64>]) -> Vec<usize> {
    let mut counts = vec![0; prior.k()];
    for p in points {
        counts[argmax(&prior.responsibilities(p))] += 1;
    }
    counts
}

/// Best-likelihood EM fit over `restarts` seedings. Restarts leaving a
/// component with no hard-assigned point are discarded.
pub fn fit_gmm(points: &[Vec<f64>], k: usize, settings: &EmSettings) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::Config("mixture needs at least one component".into()));
    }
    if points.len() < k {
        return Err(Error::Config(format!("{} points cannot populate {k} components", points.len())));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::Config("points must share one non-zero dimension".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLatent);
    }
    let mut best: Option<GmmFit> = None;
    let mut empty = None;
    for r in 0..settings.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(r as u64));
        let fit = em_run(points, k, settings, &mut rng);
        if let Some(c) = hard_counts(&fit.prior, points).iter().position(|&n| n == 0) {
            empty = Some(c);
            continue;
        }
        if best.as_ref().is_none_or(|b| fit.log_likelihood > b.log_likelihood) {
            best = Some(fit);
        }
    }
    best.ok_or(Error::EmptyComponent(empty.unwrap_or(0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[[f64; 2]], per: usize, sd: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        let mut pts = Vec::new();
        for c in centers {
            for _ in 0..per {
                pts.push(vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
            }
        }
        pts
    }

    #[test]
    fn recovers_two_separated_blobs() {
        let truth = [[-3.0, 1.0], [4.0, -2.0]];
        let pts = blobs(&truth, 200, 0.5, 11);
        let fit = fit_gmm(&pts, 2, &EmSettings::default()).unwrap();
        for t in &truth {
            let nearest = fit
                .prior
                .means
                .iter()
                .map(|m| ((m[0] - t[0]).powi(2) + (m[1] - t[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 0.1, "center {t:?} missed by {nearest}");
        }
    }

    #[test]
    fn single_component_is_closed_form() {
        let pts = vec![vec![1.0, 0.0], vec![2.0, 4.0], vec![6.0, 2.0]];
        let fit = fit_gmm(&pts, 1, &EmSettings::default()).unwrap();
        assert_eq!(fit.prior.weights, vec![1.0]);
        assert!((fit.prior.means[0][0] - 3.0).abs() < 1e-12);
        assert!((fit.prior.means[0][1] - 2.0).abs() < 1e-12);
        // population variances: (4+1+9)/3 and (4+4+0)/3
        assert!((fit.prior.variances[0][0] - 14.0 / 3.0).abs() < 1e-12);
        assert!((fit.prior.variances[0][1] - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn variance_floor_holds_for_duplicates() {
        let pts = vec![vec![1.0]; 4];
        let fit = fit_gmm(&pts, 1, &EmSettings::default()).unwrap();
        assert_eq!(fit.prior.variances[0][0], VARIANCE_FLOOR);
    }

    #[test]
    fn responsibilities_normalize() {
        let pts = blobs(&[[0.0, 0.0], [2.0, 2.0], [5.0, -1.0]], 30, 0.8, 3);
        let fit = fit_gmm(&pts, 3, &EmSettings::default()).unwrap();
        fit.prior.validate().unwrap();
        for p in &pts {
            let g = fit.prior.responsibilities(p);
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dominant_component_at_its_mean() {
        let prior = GmmPrior {
            weights: vec![0.2, 0.5, 0.3],
            means: vec![vec![-20.0, 0.0], vec![0.0, 0.0], vec![20.0, 5.0]],
            variances: vec![vec![1.0, 1.0]; 3],
        };
        let g = prior.responsibilities(&[0.0, 0.0]);
        assert_eq!(argmax(&g), 1);
        assert!(g[1] > 0.99);
    }

    #[test]
    fn empty_components_are_an_error() {
        // identical points cannot populate three components
        let pts = vec![vec![0.0], vec![0.0], vec![0.0]];
        assert!(matches!(fit_gmm(&pts, 3, &EmSettings::default()), Err(Error::EmptyComponent(_))));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.3, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }
}
