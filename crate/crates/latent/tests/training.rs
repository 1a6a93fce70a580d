use dci_latent::gmm::{fit_gmm, EmSettings};
use dci_latent::io::{load_vade, save_vade};
use dci_latent::train::{reconstruction_loss, train_vae};
use dci_latent::vade::train_vade;
use dci_latent::{Architecture, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> Architecture {
    Architecture {
        input_size: 16,
        channels: vec![4, 8],
        hidden: vec![32],
        ..Default::default()
    }
}

/// Bars at a few heights: a small family with obvious structure.
fn bars(n: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let row = if i % 2 == 0 { rng.random_range(2..5) } else { rng.random_range(10..13) };
            (0..256).map(|p| if p / 16 == row || p / 16 == row + 1 { 1.0 } else { 0.0 }).collect()
        })
        .collect()
}

fn cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        learning_rate: 3e-3,
        seed,
        ..Default::default()
    }
}

#[test]
fn single_image_is_overfit() {
    let img = bars(1, 1);
    let (model, record) = train_vae(&img, &tiny(), 2, &cfg(300, 3)).unwrap();
    let first = record.first().unwrap().reconstruction;
    assert!(record.final_reconstruction < 0.1 * first, "{first} -> {}", record.final_reconstruction);
    let (mean, _) = model.encode_all(&img, 1);
    let out = model.decode_one(&mean[0]);
    let wrong = out.iter().zip(&img[0]).filter(|(a, b)| (**a >= 0.5) != (**b >= 0.5)).count();
    assert_eq!(wrong, 0);
}

#[test]
fn training_is_bit_reproducible() {
    let data = bars(24, 5);
    let (a, ra) = train_vae(&data, &tiny(), 3, &cfg(5, 9)).unwrap();
    let (b, rb) = train_vae(&data, &tiny(), 3, &cfg(5, 9)).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(ra, rb);
    let (c, _) = train_vae(&data, &tiny(), 3, &cfg(5, 10)).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn vade_keeps_the_prior_valid_and_loss_falls() {
    let data = bars(40, 7);
    let (pre, _) = train_vae(&data, &tiny(), 2, &cfg(80, 1)).unwrap();
    let (z, _) = pre.encode_all(&data, 16);
    let init = fit_gmm(&z, 2, &EmSettings { seed: 4, ..Default::default() }).unwrap();
    let model = train_vade(&data, &pre, &init.prior, &cfg(40, 2)).unwrap();
    let rec = &model.record;
    assert!(rec.last().unwrap().total < rec.first().unwrap().total);
    assert!(rec.max_simplex_error.unwrap() <= 1e-9);
    model.prior.validate().unwrap();
    assert!(model.prior.variances.iter().flatten().all(|&v| v >= dci_latent::gmm::VARIANCE_FLOOR));
    assert!(reconstruction_loss(&model.network, &data).is_finite());

    let items: Vec<(String, Vec<f32>)> = data.iter().enumerate().map(|(i, x)| (format!("x{i}"), x.clone())).collect();
    for e in model.assign_all(&items).unwrap() {
        assert!((e.responsibilities.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!((1..=2).contains(&e.hard_label));
    }

    let dir = tempfile::tempdir().unwrap();
    save_vade(dir.path(), "m", &model).unwrap();
    let back = load_vade(&dir.path().join("m.json")).unwrap();
    assert_eq!(back.network.params, model.network.params);
    assert_eq!(back.prior, model.prior);
    assert_eq!(back.decode(&model.prior.means[0]).unwrap(), model.decode(&model.prior.means[0]).unwrap());
}
