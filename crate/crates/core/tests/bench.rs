use ndarray::{Array1, Array2};
use proptest::prelude::*;
use pude_core::bench::{
    all_positive_f1, emit_table, evaluate_transductive, generate_synthetic, normalize_ratios, prepare_data, run_experiment, sweep_ratio,
    Confusion, DataSource, EvalReport, ExperimentSpec, GaussianPosterior, Labeling, Method, SyntheticSpec, TextSpec,
};
use pude_core::{FeatureMatrix, Label, PUDataset};

fn labels_from(bits: &[bool]) -> Vec<Label> {
    bits.iter().map(|&b| Label::from_bool(b)).collect()
}

proptest! {
    #[test]
    fn metrics_match_a_brute_force_recount(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let (pred, truth): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
        let c = Confusion::from_labels(&labels_from(&pred), &labels_from(&truth)).unwrap();
        let mut tp = 0; let mut fp = 0; let mut fn_ = 0; let mut tn = 0;
        for (p, t) in &pairs {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        prop_assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tp, fp, fn_, tn));
        prop_assert_eq!(c.total(), pairs.len());
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        prop_assert!((c.precision() - p).abs() < 1e-12);
        prop_assert!((c.recall() - r).abs() < 1e-12);
        prop_assert!((c.f1() - f).abs() < 1e-12);
    }
}

/// `n_lp` labeled positives, then `n_up` unlabeled positives and the rest
/// unlabeled negatives.
fn counted_dataset(n_lp: usize, n_u: usize, n_up: usize) -> PUDataset {
    let n = n_lp + n_u;
    let features = FeatureMatrix::from_rows(Array2::zeros((n, 1))).unwrap();
    let labels: Vec<Label> = (0..n).map(|i| Label::from_bool(i < n_lp + n_up)).collect();
    PUDataset::from_partition(features, (0..n_lp).collect(), (n_lp..n).collect(), Some(labels), 0).unwrap()
}

#[test]
fn all_positive_predictions_on_table_one_counts() {
    let ds = counted_dataset(20, 10012, 1844);
    let report = evaluate_transductive(&vec![Label::Positive; 10012], None, &ds).unwrap();
    assert!((report.precision - 18.42).abs() < 0.005);
    assert_eq!(report.recall, 100.0);
    assert!((report.f1 - 31.11).abs() < 0.005);
    assert!((all_positive_f1(1844, 10012) - report.f1).abs() < 1e-9);
    assert_eq!(report.lp_count, 20);
    assert_eq!(report.n_u, 10012);
}

#[test]
fn perfect_and_empty_predictions() {
    let ds = counted_dataset(3, 20, 6);
    let truth = ds.reveal_unlabeled_truth().unwrap();
    let perfect = evaluate_transductive(&truth, None, &ds).unwrap();
    assert_eq!(perfect.f1, 100.0);
    let none = evaluate_transductive(&[Label::Negative; 20], None, &ds).unwrap();
    assert_eq!((none.precision, none.f1), (0.0, 0.0));
    let sum = none.confusion.tp + none.confusion.fp + none.confusion.fn_ + none.confusion.tn;
    assert_eq!(sum, 20);
    assert!(evaluate_transductive(&[Label::Negative; 19], None, &ds).is_err());
}

#[test]
fn equal_means_give_the_prior_everywhere() {
    let p = GaussianPosterior::new(&[0.4, -1.0], &[0.4, -1.0], 1.3, 0.27);
    let x = Array2::from_shape_vec((3, 2), vec![0.0, 0.0, 5.0, -2.0, -9.0, 3.0]).unwrap();
    for v in p.posterior(&x) {
        assert!((v - 0.27).abs() < 1e-15);
    }
}

#[test]
fn midpoint_posterior_is_one_half() {
    let p = GaussianPosterior::new(&[1.5, 0.0], &[-1.5, 0.0], 1.0, 0.5);
    assert!((p.at(Array1::from(vec![0.0, 0.0]).view()) - 0.5).abs() < 1e-15);
    let p = GaussianPosterior::new(&[2.0, 1.0], &[0.0, -3.0], 0.7, 0.5);
    assert!((p.at(Array1::from(vec![1.0, -1.0]).view()) - 0.5).abs() < 1e-12);
}

#[test]
fn posterior_matches_bayes_rule_by_hand() {
    let (mp, mn, s, pi) = ([1.0, 0.5], [-0.5, 0.0], 1.2, 0.3);
    let post = GaussianPosterior::new(&mp, &mn, s, pi);
    let x = [0.3, -0.8];
    let dens = |m: &[f64; 2]| {
        let sq: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
        (-sq / (2.0 * s * s)).exp()
    };
    let want = pi * dens(&mp) / (pi * dens(&mp) + (1.0 - pi) * dens(&mn));
    assert!((post.at(Array1::from(x.to_vec()).view()) - want).abs() < 1e-12);
}

#[test]
fn positive_fraction_within_three_standard_errors() {
    let spec = SyntheticSpec {
        n_u: 100_000,
        positive_pool: Some(1),
        ..SyntheticSpec::default()
    };
    let c = generate_synthetic(&spec, 42).unwrap();
    let n = c.n_u as f64;
    let frac = c.labels[c.unlabeled_rows()].iter().filter(|l| l.is_positive()).count() as f64 / n;
    let se = (0.3 * 0.7 / n).sqrt();
    assert!((frac - 0.3).abs() < 3.0 * se, "{frac}");
}

#[test]
fn synthetic_class_means() {
    let spec = SyntheticSpec {
        n_u: 20_000,
        ..SyntheticSpec::default()
    };
    let c = generate_synthetic(&spec, 1).unwrap();
    let rows = c.features.rows();
    let mut sums = [[0.0; 2]; 2];
    let mut counts = [0.0; 2];
    for i in c.unlabeled_rows() {
        let k = usize::from(c.labels[i].is_positive());
        counts[k] += 1.0;
        sums[k][0] += rows[[i, 0]];
        sums[k][1] += rows[[i, 1]];
    }
    assert!((sums[1][0] / counts[1] - 1.5).abs() < 0.05);
    assert!((sums[0][0] / counts[0] + 1.5).abs() < 0.05);
    assert!((sums[1][1] / counts[1]).abs() < 0.05);
    assert!(c.pool_rows().all(|i| c.labels[i].is_positive()));
}

#[test]
fn invalid_synthetic_specs() {
    for spec in [
        SyntheticSpec { prior: 0.0, ..SyntheticSpec::default() },
        SyntheticSpec { prior: 1.0, ..SyntheticSpec::default() },
        SyntheticSpec { sigma: 0.0, ..SyntheticSpec::default() },
        SyntheticSpec { mu_neg: vec![1.5, 0.0], ..SyntheticSpec::default() },
    ] {
        assert!(generate_synthetic(&spec, 0).is_err());
    }
}

fn quick_spec(method: Method, seeds: Vec<u64>) -> ExperimentSpec {
    let data = DataSource::Gaussian(SyntheticSpec {
        n_u: 400,
        ..SyntheticSpec::default()
    });
    let mut spec = ExperimentSpec::new(method, data, 20, seeds);
    spec.configs.nnpu.train.epochs = 2;
    spec.configs.nnpu.network.layer_count = 3;
    spec.configs.nnpu.network.hidden_width = 16;
    spec
}

#[test]
fn training_never_reads_ground_truth() {
    for method in [Method::PudeKde, Method::NnpuTrans] {
        for labeling in [Labeling::Scar, Labeling::biased()] {
            let mut spec = quick_spec(method, vec![0, 1]);
            spec.labeling = labeling;
            for r in run_experiment(&spec).unwrap() {
                assert_eq!(r.hidden_label_accesses_during_training, 0);
            }
        }
    }
}

#[test]
fn evaluation_is_the_counted_read() {
    let ds = counted_dataset(2, 10, 3);
    assert_eq!(ds.hidden_label_accesses(), 0);
    let _ = ds.train_view().u_rows();
    assert_eq!(ds.hidden_label_accesses(), 0);
    evaluate_transductive(&[Label::Positive; 10], None, &ds).unwrap();
    assert_eq!(ds.hidden_label_accesses(), 1);
}

fn json_of(reports: &[EvalReport]) -> Vec<String> {
    reports.iter().map(|r| r.to_json().unwrap()).collect()
}

#[test]
fn replaying_a_seed_reproduces_the_report() {
    for method in [Method::PudeKde, Method::NnpuTrans] {
        let spec = quick_spec(method, vec![3, 4]);
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(json_of(&a), json_of(&b));
        assert_ne!(a[0].confusion, a[1].confusion);
        assert!(a.iter().all(|r| r.wall_clock_secs > 0.0));
        assert!(a.iter().all(|r| r.details.contains_key("bayes_f1") && r.details.contains_key("all_positive_f1")));
    }
}

#[test]
fn lp_settings_are_exclusive() {
    let mut spec = quick_spec(Method::PudeKde, vec![0]);
    spec.lp_ratio = Some(0.1);
    assert!(run_experiment(&spec).is_err());
    spec.lp_count = None;
    assert!(run_experiment(&spec).is_ok());
    spec.seeds.clear();
    assert!(run_experiment(&spec).is_err());
}

#[test]
fn table_rows_follow_lp_and_dataset() {
    let mut reports = Vec::new();
    for lp in [20, 50] {
        for m in [Method::PudeKde, Method::NnpuTrans] {
            let mut spec = quick_spec(m, vec![0]);
            spec.lp_count = Some(lp);
            reports.extend(run_experiment(&spec).unwrap());
        }
    }
    let table = emit_table(&reports);
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.rows[0].lp_count, 20);
    assert_eq!(table.rows[1].lp_count, 50);
    assert_eq!(table.columns, vec!["nnpu-trans", "pude-kde"], "present methods in fixed column order");
    let text = table.to_text();
    assert!(!text.contains('('), "one seed per cell carries no spread:\n{text}");
    let csv = table.to_csv().unwrap();
    assert!(csv.starts_with("lp_count,dataset,nnpu-trans,nnpu-trans_iqr,pude-kde"));
}

#[test]
fn covid_shaped_ratios() {
    let data = prepare_data(&DataSource::Text(TextSpec::covid()), 0).unwrap();
    assert_eq!(data.n_u, Some(4722));
    assert_eq!(data.lp_count_for_ratio(1.0), 4722);
    assert_eq!(data.lp_count_for_ratio(0.01), 47);
}

#[test]
fn ratio_input_hygiene() {
    assert_eq!(normalize_ratios(&[0.1, 0.1, 0.5]).unwrap(), vec![0.1, 0.5]);
    assert!(normalize_ratios(&[0.5, 0.1]).is_err());
    assert!(normalize_ratios(&[0.0, 0.5]).is_err());
    assert!(normalize_ratios(&[0.5, 1.5]).is_err());
}

#[test]
fn sweep_skips_ratios_without_positives() {
    let mut spec = quick_spec(Method::PudeKde, vec![0]);
    spec.lp_count = None;
    spec.lp_ratio = Some(1.0);
    let out = sweep_ratio(&spec, &[0.001, 0.05, 0.1], &[Method::PudeKde]).unwrap();
    assert_eq!(out.skipped.len(), 1);
    assert_eq!(out.skipped[0].0, 0.001);
    assert_eq!(out.rows.len(), 2);
    assert_eq!(out.rows[0].lp_count, 20);
    let csv = out.to_csv().unwrap();
    assert!(csv.starts_with("ratio,method,f1_median,f1_iqr\n"));
    assert_eq!(csv.lines().count(), 3);
}
