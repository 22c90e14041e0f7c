use crackrom_core::regression::{
    median_pairwise_distance, train_mlp, train_rbf, Backend, FeatureScaler, Mlp, RbfConfig,
    Regressor, ShapeRule, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid_1d(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
}

#[test]
fn jacobian_matches_central_differences() {
    // 2 inputs, one hidden unit, one output: five weights
    let mut net = Mlp::new(2, &[1], 1).unwrap();
    assert_eq!(net.n_params(), 5);
    net.randomize(&mut ChaCha8Rng::seed_from_u64(1));
    for x in [[0.3, -0.7], [1.2, 0.4]] {
        let j = net.jacobian(&x);
        for p in 0..5 {
            let h = 1e-6;
            let mut plus = net.clone();
            plus.theta[p] += h;
            let mut minus = net.clone();
            minus.theta[p] -= h;
            let fd = (plus.forward(&x)[0] - minus.forward(&x)[0]) / (2.0 * h);
            assert!(
                (j[(0, p)] - fd).abs() <= 1e-6 * fd.abs().max(1e-3),
                "param {p}: {} vs {fd}",
                j[(0, p)]
            );
        }
    }
}

#[test]
fn deep_jacobian_matches_central_differences() {
    let mut net = Mlp::new(3, &[4, 3, 5], 2).unwrap();
    net.randomize(&mut ChaCha8Rng::seed_from_u64(2));
    let x = [0.1, 0.8, -0.4];
    let j = net.jacobian(&x);
    for p in 0..net.n_params() {
        let h = 1e-6;
        let mut plus = net.clone();
        plus.theta[p] += h;
        let mut minus = net.clone();
        minus.theta[p] -= h;
        let (a, b) = (plus.forward(&x), minus.forward(&x));
        for o in 0..2 {
            let fd = (a[o] - b[o]) / (2.0 * h);
            assert!((j[(o, p)] - fd).abs() <= 1e-6 * fd.abs().max(1e-3));
        }
    }
}

#[test]
fn scaler_maps_training_range_and_pools_output_spread() {
    let x = vec![vec![0.3, 0.5], vec![0.5, 1.5], vec![0.4, 1.0]];
    let y = vec![vec![1.0, 100.0], vec![3.0, -50.0], vec![2.0, 10.0]];
    let s = FeatureScaler::fit(&x, &y).unwrap();
    assert_eq!(s.scale_input(&[0.3, 0.5]), vec![-1.0, -1.0]);
    assert_eq!(s.scale_input(&[0.5, 1.5]), vec![1.0, 1.0]);
    let mid = s.scale_input(&[0.4, 1.0]);
    assert!(mid[0].abs() < 1e-12 && mid[1].abs() < 1e-12);
    // out-of-range values extrapolate linearly
    assert!((s.scale_input(&[0.6, 1.0])[0] - 2.0).abs() < 1e-12);
    // per-component means, one pooled spread: the normalized outputs have zero mean per
    // component and unit mean-square over all entries
    let ys: Vec<Vec<f64>> = y.iter().map(|v| s.normalize_output(v)).collect();
    let mut total = 0.0;
    for o in 0..2 {
        let mean: f64 = ys.iter().map(|v| v[o]).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-10);
        total += ys.iter().map(|v| v[o] * v[o]).sum::<f64>();
    }
    assert!((total / 6.0 - 1.0).abs() < 1e-10);
    let var = |c: [f64; 3]| {
        let m = c.iter().sum::<f64>() / 3.0;
        c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 3.0
    };
    let pooled = ((var([1.0, 3.0, 2.0]) + var([100.0, -50.0, 10.0])) / 2.0).sqrt();
    assert!((s.out_std[0] - pooled).abs() < 1e-12 && s.out_std[1] == s.out_std[0]);
    assert_eq!(s.rescale_output(&[0.0, 0.0]), s.out_mean);
    let constant = FeatureScaler::fit(&x, &[vec![2.0], vec![2.0], vec![2.0]]).unwrap();
    assert_eq!(constant.out_std, vec![1e-12]);
}

#[test]
fn constant_targets_are_fitted() {
    let x = grid_1d(20);
    let y = vec![vec![3.0, -1.0]; 20];
    let m = train_mlp(
        &x,
        &y,
        &TrainConfig {
            restarts: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let log = &m.log;
    if log.best_epoch > 0 {
        assert!(log.epochs[log.best_epoch - 1].train_mse < 1e-10);
    }
    for v in &x {
        let p = m.predict(v);
        assert!((p[0] - 3.0).abs() < 1e-6 && (p[1] + 1.0).abs() < 1e-6);
    }
}

#[test]
fn linear_targets_are_fitted_by_a_shallow_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<Vec<f64>> = (0..40)
        .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        .collect();
    let y: Vec<Vec<f64>> = x
        .iter()
        .map(|v| vec![2.0 * v[0] - v[1] + 0.5, 0.3 * v[1] - 1.0])
        .collect();
    let cfg = TrainConfig {
        hidden_layers: 1,
        hidden_units: 15,
        l2: 0.0,
        restarts: 2,
        ..TrainConfig::default()
    };
    let m = train_mlp(&x, &y, &cfg).unwrap();
    let best = m.log.best_epoch;
    assert!(best > 0);
    let best_log = m.log.epochs[best - 1];
    println!("best epoch {best}, train mse {:.3e}", best_log.train_mse);
    assert!(best_log.train_mse < 1e-6);
    for (v, t) in x.iter().zip(&y) {
        let p = m.predict(v);
        assert!((p[0] - t[0]).abs() < 1e-3 && (p[1] - t[1]).abs() < 1e-3);
    }
    assert_eq!(m.predict(&x[0]), m.predict(&x[0]));
    let q = [0.37, 0.61];
    let (a, b) = (m.predict(&q), m.predict(&[0.37 + 1e-8, 0.61]));
    assert!((a[0] - b[0]).abs() < 1e-5);
}

#[test]
fn early_stopping_keeps_the_best_validation_epoch() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // noisy targets so validation error eventually rises
    let x: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.gen_range(0.0..1.0)]).collect();
    let y: Vec<Vec<f64>> = x
        .iter()
        .map(|v| vec![(6.0 * v[0]).sin() + rng.gen_range(-0.3..0.3)])
        .collect();
    let cfg = TrainConfig {
        hidden_layers: 2,
        hidden_units: 10,
        l2: 0.0,
        restarts: 3,
        ..TrainConfig::default()
    };
    let m = train_mlp(&x, &y, &cfg).unwrap();
    let log = &m.log;
    assert!(log.best_epoch >= 1);
    let best = log.epochs[log.best_epoch - 1].val_mse;
    for e in &log.epochs[log.best_epoch..] {
        assert!(best <= e.val_mse);
    }
    if log.stop_reason == "validation" {
        assert_eq!(log.epochs.len(), log.best_epoch + cfg.patience);
    }
    for w in log.epochs.windows(2) {
        // accepted LM steps never increase the training objective; with l2 = 0 this is the MSE
        assert!(w[1].train_mse <= w[0].train_mse * (1.0 + 1e-12));
    }
    // the kept weights are the best-validation ones: recompute the validation score
    assert_eq!(log.validation.len(), 4);
    let val: f64 = log
        .validation
        .iter()
        .map(|&i| {
            let out = m.net.forward(&m.scaler.scale_input(&x[i]));
            (out[0] - m.scaler.normalize_output(&y[i])[0]).powi(2)
        })
        .sum::<f64>()
        / 4.0;
    assert!((val - best).abs() <= 1e-12 * best.max(1e-300));
}

#[test]
fn rbf_interpolates_centers() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<Vec<f64>> = (0..30)
        .map(|_| vec![rng.gen_range(0.3..0.5), rng.gen_range(0.5..1.5)])
        .collect();
    let y: Vec<Vec<f64>> = x
        .iter()
        .map(|v| vec![(3.0 * v[0]).exp() * v[1], v[1].sin()])
        .collect();
    let r = train_rbf(&x, &y, &RbfConfig::default()).unwrap();
    assert_eq!(r.ridge, 0.0);
    for (v, t) in x.iter().zip(&y) {
        let p = r.predict(v);
        for o in 0..2 {
            assert!((p[o] - t[o]).abs() <= 1e-8 * t[o].abs().max(1.0));
        }
    }
}

#[test]
fn rbf_sine_interpolation_between_samples() {
    let x = grid_1d(20);
    let f = |t: f64| (2.0 * std::f64::consts::PI * t).sin();
    let y: Vec<Vec<f64>> = x.iter().map(|v| vec![f(v[0])]).collect();
    let r = train_rbf(&x, &y, &RbfConfig::default()).unwrap();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let t = (i as f64 + 0.5) / 100.0;
        worst = worst.max((r.predict(&[t])[0] - f(t)).abs());
    }
    println!("eps {:.3}, worst midpoint error {worst:.3e}", r.eps);
    assert!(worst < 1e-3);
}

#[test]
fn single_center_gives_the_kernel_profile() {
    let r = train_rbf(
        &[vec![0.4]],
        &[vec![2.0]],
        &RbfConfig {
            shape: ShapeRule::Fixed(1.0),
            ..RbfConfig::default()
        },
    )
    .unwrap();
    assert!((r.predict(&[0.4])[0] - 2.0).abs() < 1e-12);
    assert_eq!(median_pairwise_distance(&[vec![0.0]]), 1.0);
    assert!((median_pairwise_distance(&[vec![0.0], vec![0.1], vec![0.4]]) - 0.3).abs() < 1e-15);
    assert!(train_rbf(
        &[vec![0.1], vec![0.1]],
        &[vec![1.0], vec![2.0]],
        &RbfConfig::default()
    )
    .is_err());
}

#[test]
fn small_clusters_fall_back_to_rbf() {
    let x = grid_1d(6);
    let y: Vec<Vec<f64>> = x.iter().map(|v| vec![v[0] * v[0]]).collect();
    let r = Regressor::train(
        Backend::Mlp,
        &x,
        &y,
        &TrainConfig::default(),
        &RbfConfig::default(),
    )
    .unwrap();
    assert!(matches!(r, Regressor::Rbf(_)));
    assert_eq!(r.outputs(), 1);
}

#[test]
fn invalid_training_settings_are_rejected() {
    let x = grid_1d(12);
    let y: Vec<Vec<f64>> = x.iter().map(|v| vec![v[0]]).collect();
    for cfg in [
        TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            validation_fraction: 1.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            lm_mu0: 0.0,
            ..TrainConfig::default()
        },
    ] {
        assert!(train_mlp(&x, &y, &cfg).is_err());
    }
}

#[test]
fn deep_network_fits_smooth_nonlinear_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f = |v: &[f64]| {
        vec![
            (3.0 * v[0]).sin() * (2.0 * v[1]).cos(),
            v[0] * v[0] - 0.5 * v[1],
            (v[0] + v[1]).exp(),
        ]
    };
    let x: Vec<Vec<f64>> = (0..120)
        .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        .collect();
    let y: Vec<Vec<f64>> = x.iter().map(|v| f(v)).collect();
    let cfg = TrainConfig {
        restarts: 2,
        max_epochs: 300,
        ..TrainConfig::default()
    };
    let m = train_mlp(&x, &y, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let q = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
        let (p, t) = (m.predict(&q), f(&q));
        for o in 0..3 {
            worst = worst.max((p[o] - t[o]).abs());
        }
    }
    println!(
        "epochs {}, best {}, worst {worst:.3e}",
        m.log.epochs.len(),
        m.log.best_epoch
    );
    assert!(worst < 1e-2);
}
