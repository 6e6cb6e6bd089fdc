use ndarray::Array2;
use rand::Rng;
use slrbm::data::subset;
use slrbm::graph::build_signed_adjacency;
use slrbm::oracle::exact_gradient;
use slrbm::rng::{stream_rng, Stream};
use slrbm::trainer::{batch_smoothness, cd_gradient, initial_params, train, BatchRng};
use slrbm::verify::random_params;
use slrbm::{BatchState, Dataset, Gradient, TrainConfig};

fn pool() -> Dataset {
    let dir = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    Dataset::load(
        dir.join("mnist5k-images-idx3-ubyte.gz"),
        dir.join("mnist5k-labels-idx1-ubyte.gz"),
        127,
    )
    .unwrap()
}

/// Two noisy prototypes: class 0 lights the left half, class 1 the right.
fn two_class_toy(n_per_class: usize, m: usize, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, Stream::Subset, 7, 7);
    let n = 2 * n_per_class;
    let mut labels = Vec::with_capacity(n);
    let images = Array2::from_shape_fn((n, m), |(i, j)| {
        let class = i % 2;
        let on = (j < m / 2) == (class == 0);
        let p = if on { 0.85 } else { 0.1 };
        rng.random_bool(p) as u8 as f64
    });
    for i in 0..n {
        labels.push((i % 2) as u8);
    }
    Dataset::from_parts(images, labels).unwrap()
}

#[test]
fn reconstruction_error_falls_at_the_start() {
    let data = subset(&pool(), 50, 0).unwrap();
    assert_eq!(data.len(), 500);
    let config = TrainConfig {
        n_hidden: 32,
        epochs: 5,
        ..TrainConfig::default()
    };
    let (_, report) = train(&data, &config).unwrap();
    let r: Vec<f64> = report.epochs.iter().map(|e| e.recon_error).collect();
    assert_eq!(r.len(), 5);
    assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
}

#[test]
fn smoothness_drops_with_training() {
    let data = two_class_toy(100, 36, 1);
    let config = TrainConfig {
        n_hidden: 16,
        epochs: 20,
        batch_size: 20,
        ..TrainConfig::default()
    };
    let before = batch_smoothness(&initial_params(36, &config), &data, config.batch_size).unwrap();
    let (params, _) = train(&data, &config).unwrap();
    let after = batch_smoothness(&params, &data, config.batch_size).unwrap();
    assert!(after < before, "before {before}, after {after}");
}

fn mean_cd(
    params: &slrbm::RbmParams,
    batch: &BatchState,
    config: &TrainConfig,
    seeds: u64,
) -> Gradient {
    let mut mean = Gradient::zeros(params.n_visible(), params.n_hidden());
    for seed in 0..seeds {
        let g = cd_gradient(params, batch, config, &mut BatchRng::new(seed, 0, 0)).unwrap();
        mean.weights += &(g.weights / seeds as f64);
        mean.visible_bias += &(g.visible_bias / seeds as f64);
        mean.hidden_bias += &(g.hidden_bias / seeds as f64);
    }
    mean
}

#[test]
fn cd_points_uphill_on_enumerable_models() {
    let mut rng = stream_rng(42, Stream::Oracle, 9, 0);
    for trial in 0..5 {
        let (m, n) = (4, 3);
        let params = random_params(&mut rng, m, n, 1.0);
        let v = Array2::from_shape_simple_fn((2, m), || rng.random_bool(0.5) as u8 as f64);
        let labels = vec![0u8, (trial % 2) as u8];
        let phi = build_signed_adjacency(&labels).unwrap().phi;
        let lambda = 0.1;
        let exact = exact_gradient(&params, lambda, v.view(), phi.view()).unwrap();
        let batch = BatchState::labeled(v, n, labels).unwrap();
        for k in [1, 3] {
            let config = TrainConfig {
                lambda,
                cd_k: k,
                n_hidden: n,
                ..TrainConfig::default()
            };
            let cd = mean_cd(&params, &batch, &config, 100);
            assert!(cd.dot(&exact) > 0.0, "trial {trial} k={k}");
        }
    }
}
