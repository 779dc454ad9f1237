mod common;

use ndarray::Array2;

use xferscore::hscore::{self, ComputePath};
use xferscore::projection::ProjectionSpec;
use xferscore::synthgen::{self, SyntheticSpec};
use xferscore::{Error, FeatureMatrix, LabelVector};

#[test]
fn original_matches_eigen_pinv() {
    let mut r = common::rng(30);
    for &(n, d) in &[(200, 10), (40, 60), (15, 15)] {
        let (f, y) = common::classed_instance(&mut r, n, d, 4, 0.7);
        let got = hscore::hscore_original(&f, &y).unwrap();
        let want = common::hscore_pinv(f.view(), y.labels());
        assert!(
            (got.value - want).abs() <= 1e-8 * want.abs(),
            "n={n} d={d}: {} vs {want}",
            got.value
        );
        assert_eq!(got.path, ComputePath::Pseudoinverse);
    }
}

#[test]
fn original_saturates_when_rank_deficient() {
    // With n ≤ d+1 the class indicators lie in the row space of F.
    let mut r = common::rng(31);
    let (f, y) = common::classed_instance(&mut r, 20, 40, 5, 0.0);
    let h = hscore::hscore_original(&f, &y).unwrap().value;
    assert!((h - 4.0).abs() < 1e-6, "{h}");
}

#[test]
fn single_column_reduces_to_variance_ratio() {
    let mut r = common::rng(32);
    for _ in 0..5 {
        let (f, y) = common::classed_instance(&mut r, 80, 1, 3, 1.0);
        let col: Vec<f64> = f.as_array().column(0).to_vec();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let total = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut between = 0.0;
        for c in 0..3 {
            let members: Vec<f64> = col
                .iter()
                .zip(y.labels())
                .filter(|(_, &l)| l == c)
                .map(|(v, _)| *v)
                .collect();
            let m = members.iter().sum::<f64>() / members.len() as f64;
            between += members.len() as f64 / n * (m - mean).powi(2);
        }
        let h = hscore::hscore_original(&f, &y).unwrap().value;
        assert!((h - between / total).abs() < 1e-10);
        let s = hscore::hscore_shrunk(&f, &y, Some(0.0), None).unwrap().value;
        assert!((s - between / total).abs() < 1e-10);
    }
}

#[test]
fn duplicated_rows_with_split_labels_score_zero() {
    let mut r = common::rng(33);
    let base = common::gaussian(&mut r, 30, 6);
    let mut x = Array2::<f64>::zeros((60, 6));
    for i in 0..60 {
        x.row_mut(i).assign(&base.row(i / 2));
    }
    let f = FeatureMatrix::new(x).unwrap();
    let y = LabelVector::new((0..60).map(|i| i % 2).collect()).unwrap();
    assert!(hscore::hscore_original(&f, &y).unwrap().value.abs() < 1e-12);
    assert!(hscore::hscore_shrunk(&f, &y, None, None).unwrap().value.abs() < 1e-12);
}

#[test]
fn woodbury_matches_dense_oracle() {
    let mut r = common::rng(34);
    let (f, y) = common::classed_instance(&mut r, 100, 300, 5, 0.5);
    let res = hscore::hscore_shrunk(&f, &y, None, None).unwrap();
    assert_eq!(res.path, ComputePath::Woodbury);
    let oracle = common::shrunk_hscore_dense(f.view(), y.labels(), res.alpha_used);
    assert!((res.value - oracle).abs() <= 1e-8 * oracle);
}

#[test]
fn dense_matches_oracle_at_fixed_alpha() {
    let mut r = common::rng(35);
    for alpha in [0.05, 0.3, 0.9] {
        let (f, y) = common::classed_instance(&mut r, 90, 30, 4, 0.5);
        let res = hscore::hscore_shrunk(&f, &y, Some(alpha), None).unwrap();
        assert_eq!(res.path, ComputePath::Dense);
        let oracle = common::shrunk_hscore_dense(f.view(), y.labels(), alpha);
        assert!((res.value - oracle).abs() <= 1e-10 * oracle);
    }
}

#[test]
fn square_case_takes_dense_path() {
    let mut r = common::rng(36);
    let (f, y) = common::classed_instance(&mut r, 20, 20, 3, 0.5);
    assert_eq!(
        hscore::hscore_shrunk(&f, &y, None, None).unwrap().path,
        ComputePath::Dense
    );
}

#[test]
fn zero_alpha_wide_falls_back_with_warning() {
    let mut r = common::rng(37);
    let (f, y) = common::classed_instance(&mut r, 10, 30, 2, 0.5);
    let res = hscore::hscore_shrunk(&f, &y, Some(0.0), None).unwrap();
    assert_eq!(res.path, ComputePath::Pseudoinverse);
    assert!(!res.warnings.is_empty());
    let h = hscore::hscore_original(&f, &y).unwrap().value;
    assert!((res.value - h).abs() < 1e-8);
}

#[test]
fn projection_is_recorded_and_deterministic() {
    let mut r = common::rng(38);
    let (f, y) = common::classed_instance(&mut r, 60, 200, 3, 0.5);
    let spec = ProjectionSpec::new(32, 4);
    let a = hscore::hscore_shrunk(&f, &y, None, Some(&spec)).unwrap();
    let b = hscore::hscore_shrunk(&f, &y, None, Some(&spec)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.q_projected, Some(32));
    assert!(matches!(
        hscore::hscore_shrunk(&f, &y, None, Some(&ProjectionSpec::new(400, 4))),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn rejects_bad_inputs() {
    let mut r = common::rng(39);
    let (f, _) = common::classed_instance(&mut r, 10, 3, 2, 0.5);
    let one = LabelVector::new(vec![0; 10]).unwrap();
    assert!(matches!(
        hscore::hscore_shrunk(&f, &one, None, None),
        Err(Error::Degenerate(_))
    ));
    let short = LabelVector::new(vec![0, 1]).unwrap();
    assert!(matches!(
        hscore::hscore_shrunk(&f, &short, None, None),
        Err(Error::Validation(_))
    ));
    let y = LabelVector::new((0..10).map(|i| i % 2).collect()).unwrap();
    assert!(hscore::hscore_shrunk(&f, &y, Some(1.5), None).is_err());
}

#[test]
fn reference_needs_enough_samples() {
    let spec = SyntheticSpec::new(100, 20, 10, 4, 1.0, 0);
    assert!(matches!(
        hscore::hscore_population_reference(&spec, 199),
        Err(Error::Validation(_))
    ));
}

#[test]
fn reference_is_stable_across_seeds() {
    let values: Vec<f64> = (0..4)
        .map(|seed| {
            let spec = SyntheticSpec::new(1000, 200, 100, 10, 0.4, seed);
            hscore::hscore_population_reference(&spec, 100_000).unwrap()
        })
        .collect();
    // Seeds change the generator itself, so compare a seed against its own
    // redraw rather than across seeds.
    for (seed, &v) in values.iter().enumerate() {
        let spec = SyntheticSpec::new(1000, 200, 100, 10, 0.4, seed as u64);
        let model = synthgen::SyntheticModel::new(&spec).unwrap();
        let (f, y) = model.sample(100_000, 12345).unwrap();
        let redraw = hscore::hscore_shrunk(&f, &y, Some(0.0), None).unwrap().value;
        assert!((redraw - v).abs() <= 0.05 * v, "seed {seed}: {redraw} vs {v}");
    }
}

#[test]
fn null_signal_stays_small() {
    let d = 40;
    let mut values: Vec<f64> = (0..10)
        .map(|seed| {
            let spec = SyntheticSpec::new(400, d, 10, 4, 0.0, seed);
            let (f, y) = synthgen::make_classification(&spec).unwrap();
            hscore::hscore_shrunk(&f, &y, None, None).unwrap().value
        })
        .collect();
    values.sort_by(f64::total_cmp);
    assert!(values[5] <= 0.05 * d as f64, "{values:?}");
}

#[test]
fn scores_grow_with_separation() {
    let mut r = common::rng(40);
    let lo = common::classed_instance(&mut r, 150, 40, 3, 0.1);
    let hi = common::classed_instance(&mut r, 150, 40, 3, 1.0);
    let a = hscore::hscore_shrunk(&lo.0, &lo.1, None, None).unwrap().value;
    let b = hscore::hscore_shrunk(&hi.0, &hi.1, None, None).unwrap().value;
    assert!(b > a);
}
