use hyperrisk::checkpoint::{load_checkpoint, save_checkpoint};
use hyperrisk::data::{fit_preprocess, gen_synthetic, load_cohort, write_synthetic, Cohort, LoadOptions, SplitRatios, SyntheticSpec};
use hyperrisk::metrics::{auroc, confusion_metrics};
use hyperrisk::model::{backward, forward, Batch, ModelParameters};
use hyperrisk::numeric::{Adam, AdamConfig, Mode, Rng};
use hyperrisk::train::{evaluate, predict, prepare, train, TrainConfig};

fn small_config(epochs: usize) -> TrainConfig {
    let mut c = TrainConfig {
        epochs,
        batch_size: 64,
        ..TrainConfig::default()
    };
    c.model.hidden_size = 12;
    c.model.aggregate_width = 8;
    c.model.ffn_hidden = vec![8, 6];
    c.model.ensemble_size = 2;
    c
}

fn separable(n: usize) -> SyntheticSpec {
    SyntheticSpec {
        n_patients: n,
        positive_fraction: 0.5,
        hours: 12,
        class_separation: 2.0,
        missing_rate: 0.0,
        ..SyntheticSpec::default()
    }
}

#[test]
fn files_load_back_losslessly() {
    let spec = SyntheticSpec {
        n_patients: 80,
        ..SyntheticSpec::default()
    };
    let cohort = gen_synthetic(&spec, &Rng::new(7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&cohort, &spec, 7, dir.path()).unwrap();
    let back = load_cohort(
        &dir.path().join("patients.csv"),
        &dir.path().join("vitals.csv"),
        &LoadOptions::new(48),
    )
    .unwrap();
    assert_eq!(back, cohort);
}

#[test]
fn preprocessing_keeps_order_and_shapes() {
    let raw = gen_synthetic(&separable(50), &Rng::new(3)).unwrap();
    let (done, stats, _) = fit_preprocess(&raw).unwrap();
    assert_eq!(stats.mean.len(), raw.schema.len());
    assert_eq!(done.len(), raw.len());
    for (a, b) in raw.patients.iter().zip(&done.patients) {
        assert_eq!(a.patient_id, b.patient_id);
        assert_eq!((a.label, &a.icd), (b.label, &b.icd));
        assert_eq!((a.series.variables(), a.series.hours()), (b.series.variables(), b.series.hours()));
        assert!(b.series.is_complete());
    }
}

#[test]
fn train_save_load_evaluate() {
    let raw = gen_synthetic(&separable(240), &Rng::new(11)).unwrap();
    let config = small_config(4);
    let data = prepare(&raw, &config).unwrap();
    let ckpt = train(&config, &data.train, &data.val).unwrap();
    assert_eq!(ckpt.log.epochs.len(), 4);
    assert!(ckpt.log.epochs.iter().all(|e| e.train_loss.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.hgrc");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let before = evaluate(&ckpt, &data.test, 0.5, None).unwrap();
    let after = evaluate(&loaded, &data.test, 0.5, None).unwrap();
    assert_eq!(serde_json::to_string(&before).unwrap(), serde_json::to_string(&after).unwrap());
    assert_eq!(before.n_patients, data.test.len());
}

#[test]
fn loss_falls_over_first_five_epochs() {
    let raw = gen_synthetic(&separable(200), &Rng::new(5)).unwrap();
    let config = TrainConfig {
        patience: 50,
        ..small_config(5)
    };
    let data = prepare(&raw, &config).unwrap();
    let log = train(&config, &data.train, &data.val).unwrap().log;
    assert_eq!(log.epochs.len(), 5);
    assert!(log.epochs[4].train_loss < log.epochs[0].train_loss, "{:?}", log.epochs);
}

fn accuracy(params: &ModelParameters, config: &TrainConfig, cohort: &Cohort) -> f64 {
    let scores = predict(params, &config.model, cohort, None).unwrap();
    confusion_metrics(&scores, &cohort.labels(), 0.5).unwrap().accuracy
}

#[test]
fn memorizes_a_tiny_separable_cohort() {
    let raw = gen_synthetic(&separable(64), &Rng::new(21)).unwrap();
    let (cohort, _, _) = fit_preprocess(&raw).unwrap();
    let config = TrainConfig::default();
    let mut rng = Rng::new(1);
    let mut params = ModelParameters::init(&config.model, cohort.schema.len(), cohort.code_vocab.len(), &mut rng).unwrap();
    let mut adam = Adam::new(&params, AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let all: Vec<usize> = (0..cohort.len()).collect();
    let batch = Batch::from_cohort(&cohort, &all).unwrap();
    let mut reached = None;
    for epoch in 1..=200 {
        let (out, cache) = forward(&params, &config.model, &batch, Mode::Train, &mut rng).unwrap();
        let (_, grads) = backward(&params, &config.model, &batch, &out, &cache).unwrap();
        adam.step(&mut params, &grads).unwrap();
        if accuracy(&params, &config, &cohort) >= 0.95 {
            reached = Some(epoch);
            break;
        }
    }
    assert!(reached.is_some(), "accuracy {}", accuracy(&params, &config, &cohort));
}

/// Logistic regression on per-patient means and codes.
fn logistic_probe_auroc(train: &Cohort, test: &Cohort) -> f64 {
    let features = |c: &Cohort| -> Vec<Vec<f64>> {
        c.patients
            .iter()
            .map(|p| {
                let m = p.series.to_matrix().unwrap();
                let mut f: Vec<f64> = (0..m.rows()).map(|v| m.row(v).iter().sum::<f64>() / m.cols() as f64).collect();
                f.extend(p.icd.iter().map(|&b| if b { 1.0 } else { 0.0 }));
                f.push(1.0);
                f
            })
            .collect()
    };
    let (xtr, ytr) = (features(train), train.labels());
    let mut w = vec![0.0; xtr[0].len()];
    for _ in 0..300 {
        let mut g = vec![0.0; w.len()];
        for (x, &y) in xtr.iter().zip(&ytr) {
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            let err = 1.0 / (1.0 + (-z).exp()) - if y { 1.0 } else { 0.0 };
            g.iter_mut().zip(x).for_each(|(gi, xi)| *gi += err * xi);
        }
        w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= 0.5 * gi / xtr.len() as f64);
    }
    let scores: Vec<f64> = features(test)
        .iter()
        .map(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum())
        .collect();
    auroc(&scores, &test.labels()).unwrap()
}

#[test]
fn null_cohort_defeats_a_logistic_probe() {
    let spec = SyntheticSpec::default().null_control();
    let raw = gen_synthetic(&spec, &Rng::new(7)).unwrap();
    let config = TrainConfig {
        split: SplitRatios(0.5, 0.1, 0.4),
        ..TrainConfig::default()
    };
    let data = prepare(&raw, &config).unwrap();
    let a = logistic_probe_auroc(&data.train, &data.test);
    assert!((a - 0.5).abs() <= 0.05, "null probe auroc {a}");

    // The same probe does find the signal when it is present.
    let raw = gen_synthetic(&SyntheticSpec::default(), &Rng::new(7)).unwrap();
    let data = prepare(&raw, &config).unwrap();
    assert!(logistic_probe_auroc(&data.train, &data.test) > 0.75);
}
