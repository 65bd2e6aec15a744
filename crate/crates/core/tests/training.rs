use svae_core::linalg::Matrix;
use svae_core::sparse_coding::{train_sparse_coding, Dictionary, ScConfig};
use svae_core::svae::{train_svae, EncoderKind, SvaeHyper, SvaeModel, SvaeTrainConfig};
use svae_core::{Rng, Vector};

/// Samples `x = U z` with `k`-sparse Laplace codes from a random unit-norm dictionary.
fn sparse_data(truth: &Dictionary, count: usize, k: usize, rng: &mut Rng) -> Vec<Vector> {
    let n = truth.latent_dim();
    (0..count)
        .map(|_| {
            let mut z = vec![0.0; n];
            for &i in &rng.permutation(n)[..k] {
                z[i] = rng.laplace(1.0);
            }
            truth.decode(&z).unwrap()
        })
        .collect()
}

/// Greedy one-to-one matching on |cosine|; counts pairs above `threshold`.
fn recovered_atoms(truth: &Matrix, learned: &Matrix, threshold: f64) -> usize {
    let n = truth.cols();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in 0..learned.cols() {
            let (a, b) = (truth.col(i), learned.col(j));
            let cos = a.dot(&b).unwrap() / (a.norm() * b.norm());
            pairs.push((cos.abs(), i, j));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut used_t = vec![false; n];
    let mut used_l = vec![false; learned.cols()];
    let mut count = 0;
    for (c, i, j) in pairs {
        if !used_t[i] && !used_l[j] {
            used_t[i] = true;
            used_l[j] = true;
            if c > threshold {
                count += 1;
            }
        }
    }
    count
}

#[test]
fn sparse_coding_recovers_planted_dictionary() {
    let mut rng = Rng::new(11, 0);
    let truth = Dictionary::random(8, 12, &mut rng).unwrap();
    let data = sparse_data(&truth, 10_000, 2, &mut rng);
    let cfg = ScConfig {
        lambda: 0.2,
        dict_lr: 0.05,
        epochs: 20,
        batch_size: 50,
        ista_rel_tol: 1e-4,
        ..ScConfig::default()
    };
    let init = Dictionary::random(8, 12, &mut Rng::new(12, 0)).unwrap();
    let (dict, history) = train_sparse_coding(&data, init, &cfg, &mut Rng::new(13, 0), |_, d| {
        assert!(d.column_norms().iter().all(|n| (n - 1.0).abs() < 1e-9));
    })
    .unwrap();
    assert!(history.last().unwrap().mean_energy < history[0].mean_energy);
    let found = recovered_atoms(truth.matrix(), dict.matrix(), 0.9);
    assert!(found >= 10, "recovered {found}/12 atoms");
}

fn small_svae(normalize_decoder: bool, seed: u64) -> SvaeModel {
    let hyper = SvaeHyper {
        encoder: EncoderKind::Resnet,
        hidden_dim: 16,
        normalize_decoder,
        likelihood_scale: 0.5,
        ..SvaeHyper::default()
    };
    SvaeModel::new(8, 12, &hyper, &mut Rng::new(seed, 0)).unwrap()
}

#[test]
fn svae_loss_decreases_over_first_epochs() {
    let mut rng = Rng::new(21, 0);
    let truth = Dictionary::random(8, 12, &mut rng).unwrap();
    let data = sparse_data(&truth, 2000, 2, &mut rng);
    let cfg = SvaeTrainConfig {
        epochs: 30,
        ..SvaeTrainConfig::default()
    };
    let (_, history) = train_svae(&data, small_svae(false, 22), &cfg, &mut Rng::new(23, 0), |_, _| {}).unwrap();
    assert_eq!(history.len(), 30);
    for w in history[..5].windows(2) {
        assert!(
            w[1].mean_neg_elbo < w[0].mean_neg_elbo,
            "epoch {} -> {}: {} -> {}",
            w[0].epoch,
            w[1].epoch,
            w[0].mean_neg_elbo,
            w[1].mean_neg_elbo
        );
    }
}

#[test]
fn svae_norm_keeps_unit_columns_every_epoch() {
    let mut rng = Rng::new(31, 0);
    let truth = Dictionary::random(8, 12, &mut rng).unwrap();
    let data = sparse_data(&truth, 500, 2, &mut rng);
    let cfg = SvaeTrainConfig {
        epochs: 5,
        learning_rate: 1e-2,
        ..SvaeTrainConfig::default()
    };
    let mut epochs_seen = 0;
    let (model, _) = train_svae(&data, small_svae(true, 32), &cfg, &mut Rng::new(33, 0), |_, m| {
        epochs_seen += 1;
        for n in m.dict.column_norms() {
            assert!((n - 1.0).abs() < 1e-9, "column norm {n}");
        }
    })
    .unwrap();
    assert_eq!(epochs_seen, 5);
    assert!(model.dict.column_norms().iter().all(|n| n >= &0.5));
}

#[test]
fn vanishing_learning_rate_leaves_parameters_in_place() {
    let mut rng = Rng::new(41, 0);
    let truth = Dictionary::random(8, 12, &mut rng).unwrap();
    let data = sparse_data(&truth, 200, 2, &mut rng);
    let cfg = SvaeTrainConfig {
        epochs: 2,
        learning_rate: 1e-300,
        ..SvaeTrainConfig::default()
    };
    for normalize in [false, true] {
        let init = small_svae(normalize, 42);
        let mut projected = init.clone();
        if normalize {
            // Already unit norm at construction; projection leaves it alone.
            projected.dict.project(&mut Rng::new(0, 0));
        }
        let (trained, _) = train_svae(&data, init, &cfg, &mut Rng::new(43, 0), |_, _| {}).unwrap();
        for (a, b) in trained.param_slices().iter().zip(projected.param_slices()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }
}
