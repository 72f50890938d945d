use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shs_sentinel::classifier::*;
use shs_sentinel::closed_loop::{
    assemble_closed_loop, design_reference_gains, eigen_signature, infer_class_from_signature,
    GainSet,
};
use shs_sentinel::features::*;
use shs_sentinel::grid_model::{build_small_signal_model, GridNetwork};
use shs_sentinel::scenarios::*;
use shs_sentinel::simulator::*;

fn reference() -> (GridNetwork, Catalog, GainSet) {
    let g = GridNetwork::ieee33();
    let m = build_small_signal_model(&g, &g.all_lines()).unwrap();
    let cat = build_catalog(&g, &m, &CatalogSpec::ieee33_default()).unwrap();
    let gains = design_reference_gains(&m, 50.0).unwrap().gains;
    (g, cat, gains)
}

fn row(e: &[f64], c: ContingencyClass) -> FeatureVector {
    FeatureVector {
        label: Some(c),
        ..FeatureVector::unlabeled(e.to_vec())
    }
}

#[test]
fn error_series_examples() {
    let t = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
    assert_eq!(
        error_series(&t, &DMatrix::zeros(1, 2)).unwrap().as_slice(),
        &[1.0, 2.0]
    );
    let same = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 5.0);
    assert!(error_series(&same, &same)
        .unwrap()
        .iter()
        .all(|v| *v == 0.0));
    assert!(error_series(&t, &DMatrix::zeros(2, 2)).is_err());
}

#[test]
fn aggregate_examples() {
    let f = aggregate_features(&DMatrix::zeros(2, 20), 1e-12);
    for v in f.iter() {
        assert!((v - (-27.631021115928547)).abs() < 1e-12);
    }
    let mut e = DMatrix::zeros(1, 4);
    e.fill(0.25);
    assert!(aggregate_features(&e, 1e-12)[0].abs() < 1e-11);
}

#[test]
fn normal_window_errors_match_noise_resimulation() {
    let (_, cat, gains) = reference();
    let cfg = SimConfig {
        noise_db: -100.0,
        seed: 4,
        ..SimConfig::default()
    };
    let d = discretize(
        &assemble_closed_loop(cat.nominal(), &gains).unwrap(),
        cfg.t_s,
    )
    .unwrap();
    let probe = make_probe(&cfg.probe, 4, cfg.tau1, cfg.t_s).unwrap();
    let x0 = DVector::zeros(16);
    let noise = NoiseSource::new(cfg.noise_db, cfg.seed);
    let clean = simulate_window(
        &d,
        &x0,
        &probe,
        &NoiseSource::new(f64::NEG_INFINITY, 0),
        0,
        0,
    )
    .unwrap()
    .yc;
    let noisy = simulate_window(&d, &x0, &probe, &noise, 9, 0).unwrap().yc;
    let errors = error_series(&noisy, &clean).unwrap();
    // By linearity the difference is the noise-only response.
    let mut s = DVector::zeros(16);
    let mut w = noise.window(9);
    let mut n = vec![0.0; 2];
    for l in 0..20 {
        w.fill(l as u64, &mut n);
        let mut y = &d.c * &s;
        y[0] += n[0];
        y[1] += n[1];
        for i in 0..10 {
            assert!(
                (errors[(i, l)] - y[i].abs()).abs() <= 1e-12 * (1.0 + y[i].abs()),
                "channel {i} sample {l}"
            );
        }
        let mut u = DVector::zeros(6);
        u[4] = n[0];
        u[5] = n[1];
        s = &d.ad * &s + &d.bd * &u;
    }
    // Sample 0: estimate error rows start exactly at zero.
    for i in 2..10 {
        assert_eq!(errors[(i, 0)], 0.0);
    }
}

#[test]
fn hidden_estimation_error_is_projected_away() {
    let (_, cat, gains) = reference();
    let cfg = SimConfig::default();
    let d = discretize(
        &assemble_closed_loop(cat.nominal(), &gains).unwrap(),
        cfg.t_s,
    )
    .unwrap();
    let silent = NoiseSource::new(f64::NEG_INFINITY, 0);
    let probe = make_probe(&cfg.probe, 4, cfg.tau1, cfg.t_s).unwrap();
    let basis = shs_sentinel::linalg::orthonormal_basis(
        &unforced_response(&d, &error_starts(8), 20).unwrap(),
    )
    .unwrap();
    assert_eq!(basis.ncols(), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..5 {
        let xhat = DVector::from_fn(8, |_, _| rng.random_range(-0.2..0.2));
        let xt = DVector::from_fn(8, |_, _| rng.random_range(-0.2..0.2));
        // State is [x; x_tilde] with x = x_hat + x_tilde.
        let mut truth = DVector::zeros(16);
        truth.rows_mut(0, 8).copy_from(&(&xhat + &xt));
        truth.rows_mut(8, 8).copy_from(&xt);
        let mut known = DVector::zeros(16);
        known.rows_mut(0, 8).copy_from(&xhat);
        let meas = simulate_window(&d, &truth, &probe, &silent, 0, 0)
            .unwrap()
            .yc;
        let nom = simulate_window(&d, &known, &probe, &silent, 0, 0)
            .unwrap()
            .yc;
        assert!((meas.rows(2, 8).column(0) - nom.rows(2, 8).column(0)).amax() < 1e-15);
        let raw = error_series(&meas, &nom).unwrap();
        let e = projected_errors(&meas, &nom, &basis).unwrap();
        assert!(raw.max() > 1e-3);
        assert!(e.max() <= 1e-12 * raw.max(), "{} vs {}", e.max(), raw.max());
    }
}

#[test]
fn projected_errors_shapes() {
    let t = DMatrix::from_row_slice(1, 2, &[3.0, -4.0]);
    let none = DMatrix::zeros(2, 0);
    assert_eq!(
        projected_errors(&t, &DMatrix::zeros(1, 2), &none)
            .unwrap()
            .as_slice(),
        &[3.0, 4.0]
    );
    // Basis along sample 0 leaves only sample 1.
    let q = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
    assert_eq!(
        projected_errors(&t, &DMatrix::zeros(1, 2), &q)
            .unwrap()
            .as_slice(),
        &[0.0, 4.0]
    );
    assert!(projected_errors(&t, &DMatrix::zeros(1, 2), &DMatrix::zeros(3, 0)).is_err());
}

#[test]
fn tiny_noiseless_dataset() {
    let (g, cat, gains) = reference();
    let ctx = DatasetContext {
        grid: &g,
        catalog: &cat,
        gains: &gains,
    };
    let cfg = SimConfig {
        noise_db: f64::NEG_INFINITY,
        ..SimConfig::default()
    };
    let ds = generate_dataset(&ctx, &cfg, 1, &[f64::NEG_INFINITY], DEFAULT_EPSILON).unwrap();
    assert_eq!(ds.len(), 4);
    let normal = &ds.rows[0];
    assert_eq!(normal.label, Some(ContingencyClass::Normal));
    assert_eq!(normal.e.len(), 10);
    assert!(normal.e.iter().all(|v| *v == DEFAULT_EPSILON.ln()));
    assert!(generate_dataset(&ctx, &cfg, 0, &[-100.0], DEFAULT_EPSILON).is_err());
    assert!(generate_dataset(&ctx, &cfg, 1, &[-100.0], 0.0).is_err());
}

fn default_dataset(levels: &[f64]) -> LabeledDataset {
    let (g, cat, gains) = reference();
    let ctx = DatasetContext {
        grid: &g,
        catalog: &cat,
        gains: &gains,
    };
    generate_dataset(&ctx, &SimConfig::default(), 240, levels, DEFAULT_EPSILON).unwrap()
}

#[test]
fn default_sized_dataset_and_labels() {
    let (g, cat, gains) = reference();
    let ds = default_dataset(&[-200.0]);
    assert_eq!(ds.len(), 960);
    let counts = ds.class_counts();
    assert!(ContingencyClass::ALL.iter().all(|c| counts[c] == 240));
    // Cross-check every label against the eigen-signature of its scenario.
    let nom = assemble_closed_loop(cat.nominal(), &gains).unwrap();
    for r in &ds.rows {
        let t = r.transform.as_ref().unwrap();
        let model = t.apply_to(cat.nominal(), &g).unwrap();
        let cl = assemble_closed_loop(&model, &gains).unwrap();
        let inferred = infer_class_from_signature(eigen_signature(&cl, &nom, 1e-6));
        assert_eq!(Some(inferred), r.label, "{t:?}");
    }
    // Normal centroid sits below every contingency centroid somewhere.
    let centroid = |c: ContingencyClass| {
        let rows: Vec<_> = ds.rows.iter().filter(|r| r.label == Some(c)).collect();
        (0..10)
            .map(|i| rows.iter().map(|r| r.e[i]).sum::<f64>() / rows.len() as f64)
            .collect::<Vec<_>>()
    };
    let normal = centroid(ContingencyClass::Normal);
    for c in &ContingencyClass::ALL[1..] {
        let other = centroid(*c);
        assert!(normal.iter().zip(&other).any(|(a, b)| a < b), "{c:?}");
    }
}

#[test]
fn held_out_accuracy_at_minus_200() {
    let ds = default_dataset(&[-200.0]);
    let (train, test) = ds.split(0.8, 42);
    assert_eq!(train.len() + test.len(), 960);
    assert_eq!(test.class_counts()[&ContingencyClass::Normal], 48);
    let model = knn_train(&train, 1, false).unwrap();
    let ev = evaluate(&model, &test).unwrap();
    assert!(ev.accuracy >= 0.95, "{}", ev.accuracy);
    assert_eq!(ev.total(), test.len() as u64);
    let diag: u64 = (0..4).map(|i| ev.confusion[i][i]).sum();
    assert!((ev.accuracy - diag as f64 / ev.total() as f64).abs() < 1e-15);
}

#[test]
fn dataset_is_deterministic_and_roundtrips() {
    let (g, cat, gains) = reference();
    let ctx = DatasetContext {
        grid: &g,
        catalog: &cat,
        gains: &gains,
    };
    let cfg = SimConfig::default();
    let a = generate_dataset(&ctx, &cfg, 5, &[-150.0, -50.0], DEFAULT_EPSILON).unwrap();
    let b = generate_dataset(&ctx, &cfg, 5, &[-150.0, -50.0], DEFAULT_EPSILON).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.noise_levels(), vec![-150.0, -50.0]);
    assert_eq!(a.at_noise(-50.0).len(), 20);
    let mut buf = Vec::new();
    a.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(
        text.starts_with("E_1,E_2,E_3,E_4,E_5,E_6,E_7,E_8,E_9,E_10,alpha,class,noise_db,seed\n")
    );
    let back = LabeledDataset::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), a.len());
    for (x, y) in back.rows.iter().zip(&a.rows) {
        assert_eq!(
            (&x.e, x.label, x.alpha, x.noise_db, x.seed),
            (&y.e, y.label, y.alpha, y.noise_db, y.seed)
        );
    }
}

#[test]
fn knn_hand_cases() {
    use ContingencyClass::*;
    let ds = LabeledDataset {
        rows: vec![
            row(&[0.0, 1.0], Measurement),
            row(&[1.0, 0.0], Control),
            row(&[0.0, -1.0], Physical),
            row(&[-1.0, 0.0], Normal),
            row(&[5.0, 5.0], Physical),
        ],
    };
    let m = knn_train(&ds, 1, false).unwrap();
    assert_eq!(knn_classify(&m, &[5.0, 5.0]).unwrap(), Physical);
    assert_eq!(knn_classify(&m, &[0.0, 0.0]).unwrap(), Normal);
    assert_eq!(knn_classify(&m, &[0.9, 0.1]).unwrap(), Control);
    assert!(knn_classify(&m, &[0.0]).is_err());
    // k=5: Physical holds two of the five votes.
    let m5 = knn_train(&ds, 5, false).unwrap();
    assert_eq!(m5.classify(&[0.0, 0.0]).unwrap(), Physical);
    let ev = evaluate(&m, &ds).unwrap();
    assert_eq!(ev.accuracy, 1.0);
    assert!(knn_train(&ds, 6, false).is_err());
    assert!(knn_train(&ds, 0, false).is_err());
}

#[test]
fn standardized_model_uses_z_scores() {
    use ContingencyClass::*;
    let ds = LabeledDataset {
        rows: vec![row(&[0.0, 0.0], Normal), row(&[1.0, 100.0], Control)],
    };
    // Raw distances: 1601 vs 3600. In z-scores the query sits at (1, -0.2):
    // 4.64 vs 1.44.
    assert_eq!(
        knn_train(&ds, 1, false)
            .unwrap()
            .classify(&[1.0, 40.0])
            .unwrap(),
        Normal
    );
    assert_eq!(
        knn_train(&ds, 1, true)
            .unwrap()
            .classify(&[1.0, 40.0])
            .unwrap(),
        Control
    );
}

#[test]
fn model_text_roundtrip() {
    let ds = default_dataset(&[-100.0]);
    for z in [false, true] {
        let m = knn_train(&ds, 3, z).unwrap();
        let back = KnnModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }
    assert!(KnnModel::from_text("").is_err());
    assert!(KnnModel::from_text("shs-knn 2\n").is_err());
}

#[test]
fn noise_sweep_spread_on_low_levels() {
    let ds = default_dataset(&[-200.0, -150.0, -100.0]);
    let mut acc = Vec::new();
    for level in [-200.0, -150.0, -100.0] {
        let (train, test) = ds.at_noise(level).split(0.8, 42);
        acc.push(
            evaluate(&knn_train(&train, 1, false).unwrap(), &test)
                .unwrap()
                .accuracy,
        );
    }
    let hi = acc.iter().cloned().fold(f64::MIN, f64::max);
    let lo = acc.iter().cloned().fold(f64::MAX, f64::min);
    assert!(lo >= 0.95 && hi - lo <= 0.10, "{acc:?}");
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> LabeledDataset {
    LabeledDataset {
        rows: (0..n)
            .map(|_| {
                // Coarse grid so distance ties actually happen.
                let e: Vec<f64> = (0..d).map(|_| rng.random_range(-3..=3) as f64).collect();
                row(&e, ContingencyClass::ALL[rng.random_range(0..4)])
            })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn adding_error_never_lowers_feature(
        vals in proptest::collection::vec(0.0f64..10.0, 20),
        extra in 0.0f64..5.0,
        at in 0usize..20,
    ) {
        let e = DMatrix::from_row_slice(1, 20, &vals);
        let mut more = e.clone();
        more[(0, at)] += extra;
        prop_assert!(aggregate_features(&more, 1e-12)[0] >= aggregate_features(&e, 1e-12)[0]);
    }

    #[test]
    fn scaling_by_ten_shifts_by_ln10(vals in proptest::collection::vec(0.01f64..10.0, 1..40)) {
        let e = DMatrix::from_row_slice(1, vals.len(), &vals);
        let a = aggregate_features(&e, 1e-12)[0];
        let b = aggregate_features(&(e * 10.0), 1e-12)[0];
        prop_assert!((b - a - 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn shuffled_training_rows_predict_alike(seed in any::<u64>(), k in 1usize..6, z in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_dataset(&mut rng, 40, 3);
        let mut shuffled = ds.clone();
        shuffled.rows.shuffle(&mut rng);
        let a = knn_train(&ds, k, z).unwrap();
        let b = knn_train(&shuffled, k, z).unwrap();
        for _ in 0..30 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-3..=3) as f64).collect();
            prop_assert_eq!(a.classify(&q).unwrap(), b.classify(&q).unwrap());
            prop_assert_eq!(a.classify(&q).unwrap(), a.classify(&q).unwrap());
        }
    }

    #[test]
    fn memorized_training_set_is_perfect(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = random_dataset(&mut rng, 30, 4);
        // Drop duplicated points with conflicting labels.
        let mut seen: Vec<Vec<f64>> = Vec::new();
        ds.rows.retain(|r| if seen.contains(&r.e) { false } else { seen.push(r.e.clone()); true });
        let m = knn_train(&ds, 1, false).unwrap();
        prop_assert_eq!(evaluate(&m, &ds).unwrap().accuracy, 1.0);
    }
}
