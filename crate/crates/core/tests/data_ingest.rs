use pdftime_core::data::{
    make_synthetic, make_synthetic_pair, parse_csv, parse_ts, resample_linear, stratified_split,
    write_ts, znormalize, SyntheticSpec,
};
use pdftime_core::tensor::{ops, Tensor};
use pdftime_core::Error;

fn corpus(name: &str) -> String {
    let path = format!("{}/tests/data/corpus/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

fn assert_parse_error_at(name: &str, line: usize, needle: &str) {
    match parse_ts(&corpus(name)) {
        Err(Error::Parse { line: l, msg }) => {
            assert_eq!(l, line, "{name}: expected error at line {line}, got line {l}: {msg}");
            assert!(msg.contains(needle), "{name}: message '{msg}' missing '{needle}'");
        }
        other => panic!("{name}: expected parse error, got {other:?}"),
    }
}

#[test]
fn corpus_well_formed_shapes() {
    let ds = parse_ts(&corpus("uni_basic.ts")).unwrap();
    assert_eq!((ds.n_variables, ds.series_length, ds.n_classes()), (1, 5, 2));
    assert_eq!(ds.labels, vec![0, 1, 0, 1]);

    let ds = parse_ts(&corpus("multi_2d.ts")).unwrap();
    assert_eq!((ds.n_variables, ds.series_length, ds.n_classes()), (2, 4, 2));
    assert_eq!(ds.samples[0], vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]);

    let ds = parse_ts(&corpus("comments.ts")).unwrap();
    assert_eq!((ds.n_samples(), ds.n_variables, ds.series_length), (3, 1, 3));
    assert_eq!(ds.labels, vec![0, 1, 0]);

    let ds = parse_ts(&corpus("uni_serieslength.ts")).unwrap();
    assert_eq!((ds.n_samples(), ds.series_length, ds.n_classes()), (6, 6, 3));

    let ds = parse_ts(&corpus("multi_3d.ts")).unwrap();
    assert_eq!((ds.n_variables, ds.series_length, ds.n_classes()), (3, 4, 3));
    assert_eq!(ds.class_names, vec!["0", "1", "2"]);
    assert_eq!(ds.labels, vec![0, 1, 2, 0]);
}

#[test]
fn corpus_variable_length_resamples_to_max() {
    let ds = parse_ts(&corpus("varlen.ts")).unwrap();
    assert_eq!(ds.series_length, 7);
    let expect = [1.0, 4.0 / 3.0, 5.0 / 3.0, 2.0, 7.0 / 3.0, 8.0 / 3.0, 3.0];
    for (got, want) in ds.samples[0].iter().zip(expect) {
        assert!((got - want as f32).abs() < 1e-6, "{got} vs {want}");
    }
    // constant series stays constant after resampling
    assert!(ds.samples[3].iter().all(|&v| v == 5.0));
}

#[test]
fn corpus_missing_values_interpolated() {
    let ds = parse_ts(&corpus("missing_interior.ts")).unwrap();
    assert_eq!(ds.samples[0], vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(ds.samples[1], vec![2.0, 4.0, 6.0, 8.0]);
    assert_eq!(ds.samples[2], vec![0.0, 1.0, 2.0, 3.0]);

    let ds = parse_ts(&corpus("missing_edges.ts")).unwrap();
    assert_eq!(ds.samples[0], vec![2.0, 2.0, 3.0, 4.0]);
    assert_eq!(ds.samples[1], vec![1.0, 2.0, 3.0, 3.0]);
    assert_eq!(ds.samples[2], vec![3.0, 3.0, 3.0, 4.0]);
}

#[test]
fn corpus_malformed_fail_with_line_numbers() {
    assert_parse_error_at("bad_missing_data.ts", 3, "missing @data");
    assert_parse_error_at("bad_undeclared_label.ts", 6, "undeclared class label 'c'");
    assert_parse_error_at("bad_dim_mismatch.ts", 6, "dimensions");
    assert_parse_error_at("bad_nonnumeric.ts", 6, "non-numeric value 'two'");
}

#[test]
fn ts_round_trip_is_exact() {
    let ds = parse_ts(&corpus("multi_2d.ts")).unwrap();
    let text = write_ts(&ds, "RoundTrip");
    let back = parse_ts(&text).unwrap();
    assert_eq!(ds.samples, back.samples);
    assert_eq!(ds.labels, back.labels);
    assert_eq!(ds.class_names, back.class_names);
}

#[test]
fn resample_examples() {
    let out = resample_linear(&[0.0, 1.0, 2.0, 3.0], 7).unwrap();
    assert_eq!(out, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);

    let same = resample_linear(&[4.0, -1.0, 2.0], 3).unwrap();
    assert_eq!(same, vec![4.0, -1.0, 2.0]);

    let constant = resample_linear(&[5.0, 5.0, 5.0], 10).unwrap();
    assert_eq!(constant, vec![5.0; 10]);

    assert!(resample_linear(&[1.0], 5).is_err());
}

#[test]
fn znormalize_examples() {
    let mut s = vec![1.0f32, 2.0, 3.0];
    znormalize(&mut s, 1, 3);
    let e = (1.5f64).sqrt() as f32; // 1 / population std of {1,2,3}
    assert!((s[0] + e).abs() < 1e-6 && s[1].abs() < 1e-6 && (s[2] - e).abs() < 1e-6, "{s:?}");

    let mut d = vec![7.0f32, 7.0, 7.0];
    znormalize(&mut d, 1, 3);
    assert_eq!(d, vec![0.0, 0.0, 0.0]);

    // idempotence within tolerance
    let mut again = s.clone();
    znormalize(&mut again, 1, 3);
    for (a, b) in s.iter().zip(&again) {
        assert!((a - b).abs() < 1e-6);
    }
}

fn toy_dataset(labels: Vec<usize>, n_classes: usize) -> pdftime_core::data::TimeSeriesDataset {
    pdftime_core::data::TimeSeriesDataset {
        samples: (0..labels.len()).map(|i| vec![i as f32, -(i as f32), 1.0, 0.5]).collect(),
        labels,
        class_names: (0..n_classes).map(|c| format!("c{c}")).collect(),
        n_variables: 1,
        series_length: 4,
        origin: "toy".into(),
    }
}

#[test]
fn stratified_split_examples() {
    // 10 samples, 2 balanced classes, fraction 0.2 -> exactly 1 holdout per class
    let ds = toy_dataset(vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 2);
    let (train, holdout) = stratified_split(&ds, 0.2, 7).unwrap();
    assert_eq!(holdout.class_counts(), vec![1, 1]);
    assert_eq!(train.n_samples() + holdout.n_samples(), 10);

    // determinism for a fixed seed
    let (t2, h2) = stratified_split(&ds, 0.2, 7).unwrap();
    assert_eq!(train.samples, t2.samples);
    assert_eq!(holdout.samples, h2.samples);

    // counts {8, 8, 4} at fraction 0.25 -> holdout {2, 2, 1}
    let labels = vec![0; 8].into_iter().chain(vec![1; 8]).chain(vec![2; 4]).collect();
    let ds20 = toy_dataset(labels, 3);
    let (train, holdout) = stratified_split(&ds20, 0.25, 5).unwrap();
    assert_eq!(holdout.class_counts(), vec![2, 2, 1]);
    assert_eq!(train.class_counts(), vec![6, 6, 3]);

    // a single-sample class refuses to split
    let tiny = toy_dataset(vec![0, 0, 1, 1, 2], 3);
    let err = stratified_split(&tiny, 0.2, 1).unwrap_err().to_string();
    assert!(err.contains("disable the validation split"), "{err}");
}

#[test]
fn synthetic_is_deterministic_and_balanced() {
    let spec = SyntheticSpec {
        n_classes: 3,
        n_train: 300,
        n_test: 300,
        n_variables: 1,
        series_length: 128,
        base_frequencies: vec![2.0, 5.0, 9.0],
        noise_std: 0.3,
        seed: 2025,
    };
    let a = make_synthetic(&spec).unwrap();
    let b = make_synthetic(&spec).unwrap();
    assert_eq!(a, b, "same seed must be bitwise identical");
    assert_eq!(a.n_samples(), 600);
    assert_eq!(a.class_counts(), vec![200, 200, 200]);

    let (train, test) = make_synthetic_pair(&spec).unwrap();
    assert_eq!(train.class_counts(), vec![100, 100, 100]);
    assert_eq!(test.class_counts(), vec![100, 100, 100]);
}

/// Brute-force oracle: 1-nearest-neighbor on raw DFT magnitude spectra
/// separates the noiseless synthetic classes perfectly.
#[test]
fn synthetic_noiseless_separable_by_dft_1nn() {
    let spec = SyntheticSpec {
        n_classes: 3,
        n_train: 300,
        n_test: 300,
        n_variables: 1,
        series_length: 128,
        base_frequencies: vec![2.0, 5.0, 9.0],
        noise_std: 0.0,
        seed: 77,
    };
    let (train, test) = make_synthetic_pair(&spec).unwrap();
    let spectrum = |sample: &[f32]| -> Vec<f64> {
        let t = Tensor::<f64>::from_f64_vec(
            vec![1, sample.len()],
            sample.iter().map(|&v| v as f64).collect(),
        )
        .unwrap();
        let (re, im) = ops::rfft(&t).unwrap();
        re.data().iter().zip(im.data()).map(|(r, i)| (r * r + i * i).sqrt()).collect()
    };
    let train_spectra: Vec<Vec<f64>> = train.samples.iter().map(|s| spectrum(s)).collect();
    let mut correct = 0;
    for (s, &y) in test.samples.iter().zip(&test.labels) {
        let q = spectrum(s);
        let mut best = (f64::INFINITY, 0usize);
        for (ts, &ty) in train_spectra.iter().zip(&train.labels) {
            let d: f64 = q.iter().zip(ts).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, ty);
            }
        }
        if best.1 == y {
            correct += 1;
        }
    }
    assert_eq!(correct, test.n_samples(), "noiseless synthetic must be 1-NN separable");
}

#[test]
fn csv_fallback() {
    let text = "a,1,2,3,4\nb,4,3,2,1\na,1,1,2,2\n";
    let ds = parse_csv(text, 2, 2).unwrap();
    assert_eq!((ds.n_samples(), ds.n_variables, ds.series_length), (3, 2, 2));
    assert_eq!(ds.class_names, vec!["a", "b"]);
    assert_eq!(ds.samples[1], vec![4.0, 3.0, 2.0, 1.0]);

    let err = parse_csv("a,1,2,3\n", 2, 2).unwrap_err().to_string();
    assert!(err.contains("line 1"), "{err}");
}
