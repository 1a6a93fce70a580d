use dci_latent::gmm::{argmax, fit_gmm, hard_counts, EmSettings, VARIANCE_FLOOR};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn clouds(k: usize, per: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 0.3).unwrap();
    (0..k * per).map(|i| (0..d).map(|j| 4.0 * ((i / per) as f64) * (j as f64 + 1.0) + n.sample(&mut rng)).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fitted_priors_are_valid(k in 1usize..=4, d in 1usize..=4, seed in 0u64..1000) {
        let pts = clouds(k, 15, d, seed);
        let fit = fit_gmm(&pts, k, &EmSettings { seed, restarts: 3, ..Default::default() }).unwrap();
        let p = &fit.prior;
        p.validate().unwrap();
        prop_assert!((p.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.variances.iter().flatten().all(|&v| v >= VARIANCE_FLOOR));
        prop_assert!(hard_counts(p, &pts).iter().all(|&c| c > 0));
        for z in &pts {
            let r = p.responsibilities(z);
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(r.iter().all(|&g| (0.0..=1.0).contains(&g)));
        }
        prop_assert!((fit.log_likelihood - p.log_likelihood(&pts)).abs() <= 1e-6 * fit.log_likelihood.abs().max(1.0));
    }

    #[test]
    fn argmax_takes_the_first_maximum(v in proptest::collection::vec(-5i32..5, 1..12)) {
        let f: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        let i = argmax(&f);
        let m = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(f[i], m);
        prop_assert!(f[..i].iter().all(|&x| x < m));
    }
}

#[test]
fn em_is_deterministic_per_seed() {
    let pts = clouds(3, 20, 2, 1);
    let s = EmSettings { seed: 77, ..Default::default() };
    assert_eq!(fit_gmm(&pts, 3, &s).unwrap(), fit_gmm(&pts, 3, &s).unwrap());
}
