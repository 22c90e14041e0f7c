use crackrom_core::clustering::{
    argmax_labels, cluster_snapshots, fcm_fit, fcm_fit_with_init, fcm_objective, hard_partition,
    kmeans_pp_init, FcmConfig,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(clusters: usize) -> FcmConfig {
    FcmConfig {
        clusters,
        tol: 1e-12,
        max_iter: 2000,
        ..FcmConfig::default()
    }
}

/// Textbook alternating FCM written directly from the update formulas.
fn reference_fcm(x: &[[f64; 2]], c0: &[[f64; 2]], m: f64, iters: usize) -> Vec<Vec<f64>> {
    let nc = c0.len();
    let mut c = c0.to_vec();
    let memberships = |c: &[[f64; 2]]| -> Vec<Vec<f64>> {
        x.iter()
            .map(|p| {
                let d: Vec<f64> = c
                    .iter()
                    .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
                    .collect();
                (0..nc)
                    .map(|k| {
                        1.0 / (0..nc)
                            .map(|l| (d[k] / d[l]).powf(2.0 / (m - 1.0)))
                            .sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    };
    let mut u = memberships(&c);
    for _ in 0..iters {
        for k in 0..nc {
            let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
            for (j, p) in x.iter().enumerate() {
                let w = u[j][k].powf(m);
                sx += w * p[0];
                sy += w * p[1];
                sw += w;
            }
            c[k] = [sx / sw, sy / sw];
        }
        u = memberships(&c);
    }
    u
}

const TOY: [[f64; 2]; 5] = [[0.0, 0.0], [0.3, 0.1], [2.0, 2.2], [2.4, 1.9], [1.1, 0.9]];

fn toy_matrix() -> DMatrix<f64> {
    DMatrix::from_fn(2, 5, |i, j| TOY[j][i])
}

#[test]
fn five_point_toy_matches_reference_implementation() {
    let data = toy_matrix();
    let c0 = [[0.1, 0.2], [1.9, 1.7]];
    let init = DMatrix::from_fn(2, 2, |i, k| c0[k][i]);
    let model = fcm_fit_with_init(&data, init, &cfg(2)).unwrap();
    assert!(model.converged);
    let reference = reference_fcm(&TOY, &c0, 1.5, 500);
    for j in 0..5 {
        for k in 0..2 {
            assert!((model.memberships[(k, j)] - reference[j][k]).abs() < 1e-8);
        }
    }
}

#[test]
fn objective_matches_direct_summation() {
    let data = toy_matrix();
    let c = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 2.0]);
    let w: DMatrix<f64> =
        DMatrix::from_row_slice(2, 5, &[0.9, 0.8, 0.1, 0.2, 0.5, 0.1, 0.2, 0.9, 0.8, 0.5]);
    let m = 1.5f64;
    let mut expect = 0.0;
    for (j, p) in TOY.iter().enumerate() {
        for (k, q) in [[0.0, 0.0], [2.0, 2.0]].iter().enumerate() {
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            expect += w[(k, j)].powf(m) * d2;
        }
    }
    assert!((fcm_objective(&data, &c, &w, m) - expect).abs() < 1e-14);
    let same = DMatrix::from_element(3, 6, 1.5);
    let model = fcm_fit(&same, &cfg(2)).unwrap();
    assert_eq!(
        fcm_objective(&same, &model.centroids, &model.memberships, 1.5),
        0.0
    );
}

#[test]
fn separated_clouds_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = DMatrix::from_fn(4, 40, |i, j| {
        let centre = if j < 20 { 0.0 } else { 100.0 };
        centre + i as f64 + rng.gen_range(-0.5..0.5)
    });
    let model = fcm_fit(&data, &cfg(2)).unwrap();
    let p = hard_partition(&model).unwrap();
    for j in 0..40 {
        let own = p.labels[j];
        assert!(model.memberships[(own, j)] > 0.99);
        assert_eq!(own, p.labels[if j < 20 { 0 } else { 20 }]);
    }
    assert_ne!(p.labels[0], p.labels[20]);
    assert_eq!(p.sizes().iter().sum::<usize>(), 40);
}

#[test]
fn single_cluster_is_the_mean() {
    let data = DMatrix::from_fn(3, 7, |i, j| (i * 7 + j) as f64 * 0.3);
    let model = fcm_fit(&data, &cfg(1)).unwrap();
    let mean = data.column_mean();
    assert!((model.centroids.column(0) - mean).amax() < 1e-12);
    assert!(model.memberships.iter().all(|&w| w == 1.0));
}

#[test]
fn argmax_tie_goes_to_first_cluster() {
    let w = DMatrix::from_row_slice(2, 2, &[0.7, 0.5, 0.3, 0.5]);
    assert_eq!(argmax_labels(&w), vec![0, 0]);
}

#[test]
fn invalid_settings_are_rejected() {
    let data = toy_matrix();
    assert!(fcm_fit(&data, &cfg(6)).is_err());
    assert!(fcm_fit(
        &data,
        &FcmConfig {
            exponent: 1.0,
            ..cfg(2)
        }
    )
    .is_err());
}

#[test]
fn permuting_columns_permutes_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = DMatrix::from_fn(3, 30, |_, j| {
        (j % 3) as f64 * 4.0 + rng.gen_range(-1.0..1.0)
    });
    let c = cfg(3);
    let init = kmeans_pp_init(&data, 3, 4);
    let base = hard_partition(&fcm_fit_with_init(&data, init.clone(), &c).unwrap()).unwrap();
    let mut perm: Vec<usize> = (0..30).collect();
    perm.reverse();
    perm.swap(3, 17);
    let permuted = data.select_columns(&perm);
    let moved = hard_partition(&fcm_fit_with_init(&permuted, init, &c).unwrap()).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        assert_eq!(moved.labels[new], base.labels[old]);
    }
}

#[test]
fn clustering_is_seed_deterministic() {
    let data = DMatrix::from_fn(5, 25, |i, j| ((i + 1) * (j + 3)) as f64 % 7.0);
    let a = cluster_snapshots(&data, &cfg(3)).unwrap();
    let b = cluster_snapshots(&data, &cfg(3)).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn memberships_on_simplex_and_objective_monotone(seed in 0u64..10_000, n in 4usize..30, c in 1usize..4) {
        prop_assume!(c <= n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(3, n, |_, _| rng.gen_range(-1.0..1.0));
        let model = fcm_fit(&data, &FcmConfig { clusters: c, seed, ..FcmConfig::default() }).unwrap();
        for j in 0..n {
            let col = model.memberships.column(j);
            prop_assert!((col.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(col.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
        for w in model.objective_log.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-300);
        }
    }
}
