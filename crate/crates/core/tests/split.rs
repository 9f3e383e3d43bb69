use ndarray::Array2;
use pude_core::corpus::{make_pu_split, select_positives};
use pude_core::{FeatureMatrix, Label, LabelingConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_rows(n: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMatrix::from_rows(Array2::from_shape_simple_fn((n, 2), || StandardNormal.sample(&mut rng))).unwrap()
}

#[test]
fn scar_labels_every_positive_equally_often() {
    let features = gaussian_rows(50, 0);
    let candidates: Vec<usize> = (0..50).collect();
    let trials = 4000;
    let mut hits = vec![0usize; 50];
    for seed in 0..trials {
        for i in select_positives(&features, &candidates, &LabelingConfig::scar(10, seed)).unwrap() {
            hits[i] += 1;
        }
    }
    // Each positive is picked with probability 10 / 50.
    let p = 0.2;
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    for h in hits {
        let f = h as f64 / trials as f64;
        assert!((f - p).abs() < 4.5 * se, "frequency {f}");
    }
}

#[test]
fn scar_frequency_sets_the_labeled_share() {
    let features = gaussian_rows(1000, 1);
    let labels: Vec<Label> = (0..1000).map(|i| Label::from_bool(i % 4 == 0)).collect();
    let ds = make_pu_split(features, &labels, &LabelingConfig::scar_frequency(0.2, 3)).unwrap();
    assert_eq!(ds.meta().n_lp, 50);
    assert_eq!(ds.meta().n_up, Some(200));
    assert_eq!(ds.meta().n_u, 950);
}

#[test]
fn biased_labeling_leans_toward_the_weight_direction() {
    let features = gaussian_rows(2000, 2);
    let candidates: Vec<usize> = (0..2000).collect();
    let mean_x = |idx: &[usize]| idx.iter().map(|&i| features.row(i)[0]).sum::<f64>() / idx.len() as f64;
    let (mut scar, mut biased) = (0.0, 0.0);
    for seed in 0..20 {
        scar += mean_x(&select_positives(&features, &candidates, &LabelingConfig::scar(100, seed)).unwrap());
        biased += mean_x(&select_positives(&features, &candidates, &LabelingConfig::biased(vec![1.0, 0.0], 1.0, 100, seed)).unwrap());
    }
    let (scar, biased) = (scar / 20.0, biased / 20.0);
    assert!(scar.abs() < 0.1, "SCAR mean {scar}");
    // exp(x) tilting of N(0, 1) moves the mean of early draws close to +1.
    assert!(biased > 0.7, "biased mean {biased}");
}

#[test]
fn lower_temperature_tilts_harder() {
    let features = gaussian_rows(2000, 4);
    let candidates: Vec<usize> = (0..2000).collect();
    let mean_x = |t: f64| {
        let idx = select_positives(&features, &candidates, &LabelingConfig::biased(vec![1.0, 0.0], t, 100, 7)).unwrap();
        idx.iter().map(|&i| features.row(i)[0]).sum::<f64>() / 100.0
    };
    assert!(mean_x(0.25) > mean_x(1.0));
    assert!(mean_x(1.0) > mean_x(4.0));
}

#[test]
fn biased_weights_must_match_the_feature_width() {
    let features = gaussian_rows(10, 0);
    let candidates: Vec<usize> = (0..10).collect();
    assert!(select_positives(&features, &candidates, &LabelingConfig::biased(vec![1.0], 1.0, 2, 0)).is_err());
}
