use crackrom_core::classifier::KnnClassifier;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BOUNDS: [[f64; 2]; 2] = [[0.3, 0.5], [0.5, 1.5]];

fn training(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.gen_range(0.3..0.5), rng.gen_range(0.5..1.5)])
        .collect();
    let labels = pts
        .iter()
        .map(|p| ((p[0] - 0.3) * 10.0) as usize + 2 * usize::from(p[1] > 1.0))
        .collect();
    (pts, labels)
}

fn scan(pts: &[Vec<f64>], labels: &[usize], q: &[f64], k: usize, p: f64) -> usize {
    let s = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .zip(BOUNDS)
            .map(|(x, b)| (x - b[0]) / (b[1] - b[0]))
            .collect()
    };
    let qs = s(q);
    let mut d: Vec<(f64, usize)> = pts
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let vs = s(v);
            (
                vs.iter()
                    .zip(&qs)
                    .map(|(a, b)| (a - b).abs().powf(p))
                    .sum::<f64>()
                    .powf(1.0 / p),
                i,
            )
        })
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut votes = [0; 4];
    for &(_, i) in &d[..k] {
        votes[labels[i]] += 1;
    }
    let top = *votes.iter().max().unwrap();
    d[..k]
        .iter()
        .map(|&(_, i)| labels[i])
        .find(|&l| votes[l] == top)
        .unwrap()
}

#[test]
fn matches_exhaustive_scan_on_random_queries() {
    let (pts, labels) = training(150, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (k, p) in [(1, 2.0), (3, 2.0), (5, 1.0), (4, 3.0)] {
        let c = KnnClassifier::fit(&pts, &labels, &BOUNDS, k, p).unwrap();
        for _ in 0..1000 {
            let q = [rng.gen_range(0.3..0.5), rng.gen_range(0.5..1.5)];
            assert_eq!(
                c.predict(&q),
                scan(&pts, &labels, &q, k, p),
                "k={k} p={p} q={q:?}"
            );
        }
    }
}

#[test]
fn one_nn_memorizes_training_set() {
    let (pts, labels) = training(80, 5);
    let c = KnnClassifier::fit(&pts, &labels, &BOUNDS, 1, 2.0).unwrap();
    assert!(pts.iter().zip(&labels).all(|(p, &l)| c.predict(p) == l));
    assert_eq!(
        c,
        KnnClassifier::fit(&pts, &labels, &BOUNDS, 1, 2.0).unwrap()
    );
}

#[test]
fn split_at_midpoint() {
    let pts: Vec<Vec<f64>> = (0..11).map(|i| vec![i as f64 / 10.0]).collect();
    let labels: Vec<usize> = (0..11).map(|i| usize::from(i > 5)).collect();
    let c = KnnClassifier::fit(&pts, &labels, &[[0.0, 1.0]], 1, 2.0).unwrap();
    assert_eq!(c.predict(&[0.49]), 0);
    assert_eq!(c.predict(&[0.58]), 1);
}

#[test]
fn single_cluster_predicts_constant() {
    let (pts, _) = training(20, 1);
    let c = KnnClassifier::fit(&pts, &vec![0; 20], &BOUNDS, 3, 2.0).unwrap();
    assert!((0..50).all(|i| c.predict(&[0.3 + 0.004 * i as f64, 1.0]) == 0));
}

#[test]
fn common_monotone_rescaling_keeps_predictions() {
    let (pts, labels) = training(60, 8);
    let c = KnnClassifier::fit(&pts, &labels, &BOUNDS, 1, 2.0).unwrap();
    // an affine change of units applied to points, query and bounds alike
    let f = |v: &[f64]| -> Vec<f64> { vec![3.0 * v[0] - 1.0, 0.5 * v[1] + 2.0] };
    let bounds2 = [
        [3.0 * 0.3 - 1.0, 3.0 * 0.5 - 1.0],
        [0.5 * 0.5 + 2.0, 0.5 * 1.5 + 2.0],
    ];
    let pts2: Vec<Vec<f64>> = pts.iter().map(|p| f(p)).collect();
    let c2 = KnnClassifier::fit(&pts2, &labels, &bounds2, 1, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let q = [rng.gen_range(0.3..0.5), rng.gen_range(0.5..1.5)];
        assert_eq!(c.predict(&q), c2.predict(&f(&q)));
    }
}

#[test]
fn out_of_bounds_query_is_clamped() {
    let (pts, labels) = training(40, 6);
    let c = KnnClassifier::fit(&pts, &labels, &BOUNDS, 1, 2.0).unwrap();
    assert_eq!(c.predict(&[0.9, 3.0]), c.predict(&[0.5, 1.5]));
    assert!(KnnClassifier::fit(&pts, &labels, &BOUNDS, 0, 2.0).is_err());
    assert!(KnnClassifier::fit(&pts, &labels, &BOUNDS, 41, 2.0).is_err());
    assert!(KnnClassifier::fit(&pts, &labels, &BOUNDS, 1, 0.5).is_err());
}
