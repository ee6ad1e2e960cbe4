use opticnet::autodiff::ParamStore;
use opticnet::data::make_synthetic;
use opticnet::metrics::ConfusionMatrix;
use opticnet::nn::loss::softmax_cross_entropy;
use opticnet::opticnet::{argmax_rows, Model, ModelConfig};
use opticnet::tensor::{Shape, Tensor};
use opticnet::training::{
    adam_step, evaluate, kfold_split, train, AdamState, TrainConfig, TrainOutputs,
};
use opticnet::Error;

fn tiny(classes: usize) -> Model<f64> {
    Model::new(ModelConfig::tiny(16, classes), 3).unwrap()
}

fn trainable_snapshot(store: &ParamStore<f64>) -> Vec<Vec<f64>> {
    store
        .iter()
        .filter(|(_, _, v)| v.trainable)
        .map(|(_, _, v)| v.value.data().to_vec())
        .collect()
}

#[test]
fn adam_follows_the_scalar_recurrence() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("p", Tensor::scalar(1.0), true).unwrap();
    let mut state = AdamState::new(&store, 0.9, 0.99);
    let grads = [0.5, -0.2, 0.3, 0.3, -1.0];
    let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for (t, &g) in grads.iter().enumerate() {
        store.get_mut(id).grad = Tensor::scalar(g);
        adam_step(&mut store, &mut state, 1e-2);
        m = 0.9 * m + 0.1 * g;
        v = 0.99 * v + 0.01 * g * g;
        let n = t as i32 + 1;
        let (mh, vh) = (m / (1.0 - 0.9f64.powi(n)), v / (1.0 - 0.99f64.powi(n)));
        p -= 1e-2 * mh / (vh.sqrt() + 1e-8);
        assert!(
            (store.get(id).value.data()[0] - p).abs() < 1e-15,
            "step {n}"
        );
    }
    assert_eq!(state.t, 5);
}

#[test]
fn adam_with_zero_gradients_leaves_parameters_unchanged() {
    let mut store = ParamStore::<f64>::new();
    store
        .add("a", Tensor::full(Shape::new(1, 1, 2, 3), 0.7), true)
        .unwrap();
    let mut state = AdamState::new(&store, 0.9, 0.99);
    for _ in 0..20 {
        adam_step(&mut store, &mut state, 1e-3);
    }
    assert!(store
        .iter()
        .all(|(_, _, v)| v.value.data().iter().all(|&x| x == 0.7)));
}

#[test]
fn zero_learning_rate_keeps_weights_and_loss_flat() {
    let ds = make_synthetic(3, 4, 16, 16, 1).unwrap();
    let mut model = tiny(3);
    let before = trainable_snapshot(&model.params);
    // One batch per epoch so batch statistics are identical every epoch.
    let cfg = TrainConfig {
        lr: 0.0,
        lr_min: 0.0,
        epochs: 3,
        batch_size: 12,
        ..TrainConfig::default()
    };
    let out = train(&mut model, &ds, None, &cfg, &TrainOutputs::default()).unwrap();
    assert_eq!(trainable_snapshot(&model.params), before);
    let l0 = out.epochs[0].train_loss;
    assert!(out
        .epochs
        .iter()
        .all(|e| (e.train_loss - l0).abs() < 1e-12 && e.lr == 0.0));
}

#[test]
fn same_seed_gives_identical_runs() {
    let ds = make_synthetic(3, 4, 16, 16, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = tiny(3);
        let o = train(&mut m, &ds, None, &cfg, &TrainOutputs::default()).unwrap();
        (o, trainable_snapshot(&m.params))
    };
    let (a, wa) = run();
    let (b, wb) = run();
    assert_eq!(
        a.epochs[0].train_loss.to_bits(),
        b.epochs[0].train_loss.to_bits()
    );
    assert_eq!(a, b);
    assert_eq!(wa, wb);
    assert_eq!(a.steps, 6);
}

#[test]
fn step_cap_stops_mid_epoch() {
    let ds = make_synthetic(2, 4, 16, 16, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 2,
        max_steps: Some(5),
        ..TrainConfig::default()
    };
    let mut m = tiny(2);
    let out = train(&mut m, &ds, None, &cfg, &TrainOutputs::default()).unwrap();
    assert_eq!(out.steps, 5);
    assert_eq!(out.epochs.len(), 2);
}

#[test]
fn artifacts_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_synthetic(2, 4, 16, 16, 1).unwrap();
    let outputs = TrainOutputs {
        log_csv: Some(dir.path().join("log/run.csv")),
        best_checkpoint: Some(dir.path().join("best.optn")),
    };
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let mut m = tiny(2);
    train(&mut m, &ds, Some(&ds), &cfg, &outputs).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("log/run.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,lr,train_loss,train_acc,val_loss,val_acc");
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1].split(',').count(), 6);
    assert!(dir.path().join("best.optn").exists());
}

#[test]
fn evaluate_matches_a_per_sample_loop() {
    let ds = make_synthetic(3, 3, 16, 16, 5).unwrap();
    let mut model = tiny(3);
    let e = evaluate(&mut model, &ds, 4).unwrap();
    let (mut truth, mut pred, mut loss) = (Vec::new(), Vec::new(), 0.0);
    for i in 0..ds.len() {
        let logits = model.predict(&ds.image::<f64>(i)).unwrap();
        truth.push(ds.labels[i]);
        pred.push(argmax_rows(&logits)[0]);
        loss += softmax_cross_entropy(&logits, &[ds.labels[i]]).unwrap().0;
    }
    let oracle = ConfusionMatrix::from_predictions(ds.class_names.clone(), &truth, &pred).unwrap();
    assert_eq!(e.confusion, oracle);
    assert_eq!(e.confusion.total(), ds.len() as u64);
    for (c, &n) in ds.class_counts().iter().enumerate() {
        assert_eq!(e.confusion.row_sum(c), n as u64);
    }
    assert!((e.loss - loss / ds.len() as f64).abs() < 1e-9);
}

#[test]
fn class_count_mismatch_is_a_contract_error() {
    let ds = make_synthetic(3, 2, 16, 16, 5).unwrap();
    let mut model = tiny(4);
    assert!(matches!(
        evaluate(&mut model, &ds, 4),
        Err(Error::Contract(_))
    ));
}

#[test]
fn training_without_samples_of_a_class_fails() {
    let ds = make_synthetic(3, 2, 16, 16, 5).unwrap();
    let keep: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] != 2).collect();
    let partial = ds.subset(&keep);
    let mut model = tiny(3);
    let err = train(
        &mut model,
        &partial,
        None,
        &TrainConfig::default(),
        &TrainOutputs::default(),
    )
    .unwrap_err();
    assert!(
        matches!(err, Error::Dataset(ref m) if m.contains("class_02")),
        "{err}"
    );
}

#[test]
fn kfold_examples() {
    let f = kfold_split(100, 10, 0).unwrap();
    assert!(f.iter().all(|x| x.len() == 10));
    let f = kfold_split(13, 10, 0).unwrap();
    let mut sizes: Vec<usize> = f.iter().map(Vec::len).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![1, 1, 1, 1, 1, 1, 1, 2, 2, 2]);
    assert!(matches!(kfold_split(5, 10, 0), Err(Error::Contract(_))));
}
