mod common;

use ndarray::{Array1, Array2, ArrayView2};

use xferscore::synthgen::{self, SyntheticModel, SyntheticSpec};
use xferscore::{Error, FeatureMatrix, LabelVector};

/// Logistic regression by plain gradient descent; returns held-out accuracy.
fn logistic_probe(x: ArrayView2<'_, f64>, y: &[usize], train: &[usize], test: &[usize]) -> f64 {
    let d = x.ncols();
    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0;
    for _ in 0..500 {
        let mut gw = Array1::<f64>::zeros(d);
        let mut gb = 0.0;
        for &i in train {
            let z = x.row(i).dot(&w) + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let e = p - y[i] as f64;
            gw.scaled_add(e, &x.row(i));
            gb += e;
        }
        let m = train.len() as f64;
        w.scaled_add(-0.5 / m, &gw);
        b -= 0.5 * gb / m;
    }
    let hits = test
        .iter()
        .filter(|&&i| ((x.row(i).dot(&w) + b) > 0.0) == (y[i] == 1))
        .count();
    hits as f64 / test.len() as f64
}

#[test]
fn well_separated_classes_are_linearly_separable() {
    let spec = SyntheticSpec::new(100, 10, 10, 2, 10.0, 0).with_clusters_per_class(1);
    let (f, y) = synthgen::make_classification(&spec).unwrap();
    let train: Vec<usize> = (0..100).step_by(2).collect();
    let test: Vec<usize> = (1..100).step_by(2).collect();
    let acc = logistic_probe(f.view(), y.labels(), &train, &test);
    assert!(acc >= 0.95, "{acc}");
}

#[test]
fn labels_are_balanced() {
    for &(n, c) in &[(101, 4), (1000, 7), (50, 10)] {
        let spec = SyntheticSpec::new(n, 20, 10, c, 1.0, 1);
        let (_, y) = synthgen::make_classification(&spec).unwrap();
        for &k in &y.class_counts() {
            assert!((k as f64 - n as f64 / c as f64).abs() <= 1.0);
        }
    }
}

#[test]
fn noise_columns_carry_no_label_signal() {
    let spec = SyntheticSpec::new(2000, 30, 10, 3, 2.0, 2);
    let (f, y) = synthgen::make_classification(&spec).unwrap();
    for c in 0..3 {
        let ind: Vec<f64> = y.labels().iter().map(|&l| f64::from(u8::from(l == c))).collect();
        for j in 10..30 {
            let col = f.as_array().column(j).to_vec();
            let r = common::pearson_sums(&col, &ind);
            assert!(r.abs() < 0.15, "class {c} column {j}: {r}");
        }
    }
}

#[test]
fn same_spec_same_output() {
    let spec = SyntheticSpec::new(200, 16, 8, 4, 1.0, 5);
    let a = synthgen::make_classification(&spec).unwrap();
    let b = synthgen::make_classification(&spec).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    let other = synthgen::make_classification(&SyntheticSpec { seed: 6, ..spec }).unwrap();
    assert_ne!(a.0, other.0);
}

#[test]
fn model_draws_are_reproducible() {
    let spec = SyntheticSpec::new(100, 12, 6, 3, 1.0, 8);
    let model = SyntheticModel::new(&spec).unwrap();
    assert_eq!(model.num_clusters(), 6);
    assert_eq!(model.sample(50, 3).unwrap().0, model.sample(50, 3).unwrap().0);
    assert_ne!(model.sample(50, 3).unwrap().0, model.sample(50, 4).unwrap().0);
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = [
        SyntheticSpec::new(100, 10, 11, 2, 1.0, 0),
        SyntheticSpec::new(100, 10, 0, 2, 1.0, 0),
        SyntheticSpec::new(100, 10, 5, 1, 1.0, 0),
        SyntheticSpec::new(1, 10, 5, 2, 1.0, 0),
        SyntheticSpec::new(100, 10, 5, 2, f64::NAN, 0),
        SyntheticSpec::new(100, 10, 2, 3, 1.0, 0),
    ];
    for spec in bad {
        assert!(
            matches!(synthgen::make_classification(&spec), Err(Error::Spec(_))),
            "{spec:?}"
        );
    }
}

fn pool() -> (FeatureMatrix, LabelVector) {
    let spec = SyntheticSpec::new(100 * 100, 8, 8, 100, 1.0, 9).with_clusters_per_class(1);
    synthgen::make_classification(&spec).unwrap()
}

#[test]
fn subsample_five_classes() {
    let (f, y) = pool();
    let (sf, sy) = synthgen::subsample_classes(&f, &y, 5, 50, 1).unwrap();
    assert_eq!(sf.n_samples(), 250);
    assert_eq!(sy.num_classes(), 5);
    assert_eq!(sy.class_counts(), vec![50; 5]);
    let again = synthgen::subsample_classes(&f, &y, 5, 50, 1).unwrap();
    assert_eq!(again.0, sf);
    assert!(matches!(
        synthgen::subsample_classes(&f, &y, 5, 200, 1),
        Err(Error::InsufficientData(_))
    ));
}

#[test]
fn imbalanced_pair_follows_ratio() {
    let (f, y) = pool();
    for seed in 0..10 {
        let (pf, py) = synthgen::make_imbalanced_pair(&f, &y, (10, 18), 5.0, seed).unwrap();
        let counts = py.class_counts();
        assert!((10..=18).contains(&counts[0]));
        assert_eq!(counts[1], 5 * counts[0]);
        assert_eq!(pf.n_samples(), 6 * counts[0]);
    }
    let (_, balanced) = synthgen::make_imbalanced_pair(&f, &y, (30, 60), 1.0, 0).unwrap();
    let h = xferscore::pseudometrics::label_entropy(&balanced);
    assert!((h - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn centroid_accuracy_tracks_separation() {
    let acc = |sep: f64| {
        let spec = SyntheticSpec::new(400, 20, 10, 4, sep, 3).with_clusters_per_class(1);
        let (f, y) = synthgen::make_classification(&spec).unwrap();
        synthgen::holdout_centroid_accuracy(&f, &y, 0).unwrap()
    };
    let (lo, hi) = (acc(0.0), acc(3.0));
    assert!(hi > 0.9, "{hi}");
    assert!(lo < 0.45, "{lo}");
    let tiny = FeatureMatrix::new(Array2::zeros((3, 2))).unwrap();
    let y = LabelVector::new(vec![0, 1, 1]).unwrap();
    assert!(synthgen::holdout_centroid_accuracy(&tiny, &y, 0).is_err());
}
