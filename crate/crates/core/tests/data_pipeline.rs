use arpro_core::data::{heldout_normal_ts, WindowSpec};
use arpro_core::stats::mean;
use arpro_core::*;
use proptest::prelude::*;

fn ts_specs(magnitude: f64) -> Vec<AnomalySpec> {
    vec![
        AnomalySpec::new(AnomalyKind::Spike, magnitude, 0.05, 1).unwrap(),
        AnomalySpec::new(AnomalyKind::LevelShift, magnitude, 0.1, 1).unwrap(),
    ]
}

fn dataset(rows: usize, cols: usize, values: &[f64], bits: &[bool]) -> Dataset {
    let row = |i: usize| values[i * cols..(i + 1) * cols].to_vec();
    Dataset {
        train: (0..rows).map(row).collect(),
        test: (0..rows).map(|i| row(rows - 1 - i)).collect(),
        labels: (0..rows)
            .map(|i| AnomalyMask::from_bits(bits[i * cols..(i + 1) * cols].to_vec()))
            .collect(),
        feature_names: (0..cols).map(|c| format!("f{c}")).collect(),
        modality: Modality::Timeseries,
        window: Some(WindowSpec { len: cols, stride: 1 }),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_roundtrip_is_lossless(
        (rows, cols, values, bits) in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| (
            Just(r),
            Just(c),
            prop::collection::vec(-1e6f64..1e6, r * c),
            prop::collection::vec(any::<bool>(), r * c),
        ))
    ) {
        let ds = dataset(rows, cols, &values, &bits);
        let dir = tempfile::tempdir().unwrap();
        write_csv_dataset(&ds, dir.path()).unwrap();
        let back = load_csv_dataset(dir.path()).unwrap();
        prop_assert_eq!(&back.labels, &ds.labels);
        prop_assert_eq!(&back.feature_names, &ds.feature_names);
        prop_assert_eq!(back.modality, ds.modality);
        for (a, b) in back.train.iter().flatten().zip(ds.train.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        for (a, b) in back.test.iter().flatten().zip(ds.test.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn anomalies_separate_from_training_data() {
    let ds = gen_synthetic_ts(4, 32, 200, 50, &ts_specs(3.0), 0).unwrap();
    let det = fit_gauss(&ds.train, 1e-3).unwrap();
    let total = |xs: &[Vec<f64>]| mean(&xs.iter().map(|x| det.score(x).unwrap().total).collect::<Vec<_>>()).unwrap();
    assert!(total(&ds.test) > total(&ds.train));
}

#[test]
fn labelled_features_carry_the_largest_scores() {
    let ds = gen_synthetic_ts(4, 32, 200, 50, &ts_specs(3.0), 1).unwrap();
    let det = fit_gauss(&ds.train, 1e-3).unwrap();
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for (x, label) in ds.test.iter().zip(&ds.labels) {
        for (a, &marked) in det.score(x).unwrap().alpha.iter().zip(label.bits()) {
            if marked { inside.push(*a) } else { outside.push(*a) }
        }
    }
    assert!(mean(&inside).unwrap() > mean(&outside).unwrap());
}

#[test]
fn conformal_threshold_covers_heldout_normals() {
    let ds = gen_synthetic_ts(4, 32, 200, 1, &ts_specs(3.0), 2).unwrap();
    let det = fit_gauss(&ds.train, 1e-3).unwrap();
    let cal: Vec<f64> = ds.train.iter().map(|x| det.score(x).unwrap().total).collect();
    let threshold = conformal_threshold(&cal, 0.95).unwrap();
    let held = heldout_normal_ts(4, 32, 500, 2).unwrap();
    let scores: Vec<f64> = held.iter().map(|x| det.score(x).unwrap().total).collect();
    let exceed = 1.0 - tnr(&scores, threshold).unwrap();
    assert!(exceed <= 0.05 + 2.0 / 500f64.sqrt(), "exceedance {exceed}");
}

#[test]
fn scaler_inverts_generated_data() {
    let ds = gen_synthetic_image(8, 20, 5, &[AnomalySpec::new(AnomalyKind::SquareDefect, 3.0, 0.1, 1).unwrap()], 3).unwrap();
    let scaler = fit_scaler(&ds.train, 1e-6).unwrap();
    for x in ds.test.iter().chain(&ds.train) {
        let back = scaler.invert(&scaler.apply(x).unwrap()).unwrap();
        for (a, b) in back.iter().zip(x) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
