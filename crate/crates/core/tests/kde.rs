use ndarray::{array, Array1, Array2, Axis};
use proptest::prelude::*;
use pude_core::kde::{KdeClassifier, KdeConfig, KdeModel, DEFAULT_BANDWIDTH};
use pude_core::Label;
use std::f64::consts::PI;

/// Kernel sum written out term by term, normalization included.
fn brute_force_density(support: &[Vec<f64>], x: &[f64], h: f64) -> f64 {
    let d = x.len() as f64;
    let norm = (2.0 * PI * h * h).powf(-d / 2.0);
    let sum: f64 = support
        .iter()
        .map(|p| {
            let sq: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            norm * (-sq / (2.0 * h * h)).exp()
        })
        .sum();
    sum / support.len() as f64
}

/// Same sum in the log domain, shifted by its largest term so that far
/// queries do not underflow to `ln 0`.
fn brute_force_log_density(support: &[Vec<f64>], x: &[f64], h: f64) -> f64 {
    let d = x.len() as f64;
    let terms: Vec<f64> = support
        .iter()
        .map(|p| -p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * h * h))
        .collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - top).exp()).sum();
    top + sum.ln() - (support.len() as f64).ln() - d / 2.0 * (2.0 * PI * h * h).ln()
}

fn to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let d = rows[0].len();
    Array2::from_shape_vec((rows.len(), d), rows.concat()).unwrap()
}

#[test]
fn three_point_fixture_matches_kernel_sum() {
    let support = vec![vec![-1.0], vec![0.0], vec![1.0]];
    let m = KdeModel::fit(&to_matrix(&support), 1.0).unwrap();
    let got = m.log_density(&array![[0.0]]).unwrap()[0].exp();
    let oracle = brute_force_density(&support, &[0.0], 1.0);
    assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
    assert!((oracle - 0.294_294_576_479_906_4).abs() < 1e-12);
}

#[test]
fn log_oracle_agrees_with_the_plain_sum_where_both_are_finite() {
    let support = vec![vec![-1.0, 0.5], vec![0.0, 0.0], vec![2.0, -1.0]];
    let x = [0.3, 0.2];
    let plain = brute_force_density(&support, &x, 0.8).ln();
    assert!((brute_force_log_density(&support, &x, 0.8) - plain).abs() < 1e-12);
}

#[test]
fn far_queries_keep_a_finite_log_density() {
    // exp(-970) underflows; the log density must not
    let m = KdeModel::fit(&array![[-4.586367132958058, -4.249073708615101]], 0.2).unwrap();
    let q = array![[0.0, 3.3168169686224633]];
    let got = m.log_density(&q).unwrap()[0];
    let support = vec![vec![-4.586367132958058, -4.249073708615101]];
    assert!(got.is_finite());
    assert!((got - brute_force_log_density(&support, &[0.0, 3.3168169686224633], 0.2)).abs() < 1e-9 * got.abs());
}

#[test]
fn single_point_at_its_center() {
    let m = KdeModel::fit(&array![[2.5]], 1.0).unwrap();
    let ld = m.log_density(&array![[2.5]]).unwrap()[0];
    assert!((ld.exp() - 0.398_942).abs() < 1e-6);
    assert!((ld.exp() - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-9);
    assert!((ld + 0.918_939).abs() < 1e-6);
}

#[test]
fn one_dimensional_density_integrates_to_one() {
    let support = array![[-2.0], [-0.3], [0.0], [1.7], [4.0]];
    for h in [0.5, 1.0, DEFAULT_BANDWIDTH] {
        let m = KdeModel::fit(&support, h).unwrap();
        let step = 0.01;
        let grid = Array1::range(-30.0, 30.0, step).insert_axis(Axis(1));
        let integral: f64 = m.log_density(&grid).unwrap().mapv(f64::exp).sum() * step;
        assert!((integral - 1.0).abs() < 0.01, "h = {h}: {integral}");
    }
}

#[test]
fn default_bandwidth() {
    assert_eq!(DEFAULT_BANDWIDTH, 1.9);
    assert_eq!(KdeConfig::default().bandwidth, 1.9);
    assert_eq!(KdeConfig::default().threshold, 0.0);
}

#[test]
fn fit_reports_support_size_and_rejects_bad_input() {
    let m = KdeModel::fit(&Array2::zeros((7, 3)), 1.0).unwrap();
    assert_eq!(m.support_size(), 7);
    assert!(KdeModel::fit(&Array2::zeros((0, 3)), 1.0).is_err());
    assert!(KdeModel::fit(&Array2::zeros((2, 3)), 0.0).is_err());
    assert!(KdeModel::fit(&Array2::zeros((2, 3)), -1.0).is_err());
    assert!(m.log_density(&Array2::zeros((1, 2))).is_err());
}

fn points() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..4).prop_flat_map(|d| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), 1..12))
}

proptest! {
    #[test]
    fn matches_brute_force(support in points(), h in 0.2f64..4.0, q in prop::collection::vec(-6.0f64..6.0, 3)) {
        let d = support[0].len();
        let x = &q[..d];
        let m = KdeModel::fit(&to_matrix(&support), h).unwrap();
        let got = m.log_density_at(Array1::from(x.to_vec()).view()).unwrap();
        let oracle = brute_force_log_density(&support, x, h);
        prop_assert!(oracle.is_finite());
        prop_assert!((got - oracle).abs() < 1e-9 * oracle.abs().max(1.0), "{got} vs {oracle}");
    }

    #[test]
    fn translation_equivariance(support in points(), shift in prop::collection::vec(-50.0f64..50.0, 3), q in prop::collection::vec(-6.0f64..6.0, 3)) {
        let d = support[0].len();
        let moved: Vec<Vec<f64>> = support.iter().map(|p| p.iter().zip(&shift).map(|(a, s)| a + s).collect()).collect();
        let x = Array2::from_shape_vec((1, d), q[..d].to_vec()).unwrap();
        let xs = Array2::from_shape_vec((1, d), q[..d].iter().zip(&shift).map(|(a, s)| a + s).collect()).unwrap();
        let a = KdeModel::fit(&to_matrix(&support), 1.0).unwrap().log_density(&x).unwrap()[0].exp();
        let b = KdeModel::fit(&to_matrix(&moved), 1.0).unwrap().log_density(&xs).unwrap()[0].exp();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn support_order_does_not_matter(support in points(), rot in 0usize..12, q in prop::collection::vec(-6.0f64..6.0, 3)) {
        let d = support[0].len();
        let mut permuted = support.clone();
        permuted.reverse();
        let r = rot % permuted.len();
        permuted.rotate_left(r);
        let x = Array2::from_shape_vec((1, d), q[..d].to_vec()).unwrap();
        let a = KdeModel::fit(&to_matrix(&support), 1.3).unwrap().log_density(&x).unwrap()[0];
        let b = KdeModel::fit(&to_matrix(&permuted), 1.3).unwrap().log_density(&x).unwrap()[0];
        prop_assert!((a - b).abs() < 1e-12);
    }
}

/// Five points in 1-D: two labeled positives at 10 and 10.5, far from the rest.
fn five_point_fixture() -> (Array2<f64>, Array2<f64>) {
    (array![[10.0], [10.5]], array![[-1.0], [0.0], [1.0]])
}

#[test]
fn isolated_positive_scores_above_zero() {
    let (lp, u) = five_point_fixture();
    let clf = KdeClassifier::from_latent(&lp, &u, 1.0, 0.0).unwrap();
    let s = clf.score(&array![[10.0]]).unwrap()[0];
    let all: Vec<Vec<f64>> = vec![vec![10.0], vec![10.5], vec![-1.0], vec![0.0], vec![1.0]];
    let oracle = brute_force_density(&[vec![10.0], vec![10.5]], &[10.0], 1.0).ln() - brute_force_density(&all, &[10.0], 1.0).ln();
    assert!(s > 0.0);
    assert!((s - oracle).abs() < 1e-10);
}

#[test]
fn normalization_constant_cancels() {
    let (lp, u) = five_point_fixture();
    let clf = KdeClassifier::from_latent(&lp, &u, 1.7, 0.0).unwrap();
    let q = array![[-3.0], [0.2], [5.0], [10.2], [14.0]];
    let without = clf.score(&q).unwrap();
    let with = clf.d_p.log_density(&q).unwrap() - clf.d_all.log_density(&q).unwrap();
    for (a, b) in without.iter().zip(with.iter()) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn same_support_scores_zero_and_predicts_positive() {
    let pts = array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]];
    let clf = KdeClassifier {
        d_p: KdeModel::fit(&pts, 1.9).unwrap(),
        d_all: KdeModel::fit(&pts, 1.9).unwrap(),
        threshold: 0.0,
        vae: None,
    };
    let q = array![[0.0, 0.0], [3.0, 3.0], [-7.0, 2.0]];
    assert!(clf.score(&q).unwrap().iter().all(|&s| s.abs() < 1e-12));
    assert!(clf.predict(&q).unwrap().iter().all(|l| *l == Label::Positive));
}

#[test]
fn threshold_limits() {
    let (lp, u) = five_point_fixture();
    let q = array![[-3.0], [0.2], [10.2]];
    let mut clf = KdeClassifier::from_latent(&lp, &u, 1.0, f64::NEG_INFINITY).unwrap();
    assert!(clf.predict(&q).unwrap().iter().all(|l| *l == Label::Positive));
    clf.threshold = f64::INFINITY;
    assert!(clf.predict(&q).unwrap().iter().all(|l| *l == Label::Negative));
}

#[test]
fn duplicating_the_query_into_positives_raises_its_score() {
    let (lp, u) = five_point_fixture();
    let x = array![[0.4]];
    let before = KdeClassifier::from_latent(&lp, &u, 1.0, 0.0).unwrap().score(&x).unwrap()[0];
    let lp2 = ndarray::concatenate(Axis(0), &[lp.view(), x.view()]).unwrap();
    let after = KdeClassifier::from_latent(&lp2, &u, 1.0, 0.0).unwrap().score(&x).unwrap()[0];
    assert!(after > before);
}

#[test]
fn score_spread_shrinks_with_bandwidth() {
    let (lp, u) = five_point_fixture();
    let q = array![[-2.0], [0.0], [3.0], [10.0], [12.0]];
    let spread = |h: f64| {
        let s = KdeClassifier::from_latent(&lp, &u, h, 0.0).unwrap().score(&q).unwrap();
        s.fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - s.fold(f64::INFINITY, |a, &b| a.min(b))
    };
    let (a, b, c) = (spread(1.0), spread(10.0), spread(100.0));
    assert!(a > b && b > c, "{a} {b} {c}");
}

#[test]
fn checkpoint_round_trip() {
    let (lp, u) = five_point_fixture();
    let clf = KdeClassifier::from_latent(&lp, &u, 1.9, 0.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kde.json");
    clf.save(&path).unwrap();
    assert_eq!(KdeClassifier::load(&path).unwrap(), clf);
}
