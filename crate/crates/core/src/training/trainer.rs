use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::nn::Mode;
use crate::opticnet::{argmax_rows, Model, ModelConfig};
use crate::tensor::Float;

use super::adam::{adam_step, AdamState};
use super::schedule::LrSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub gamma: f64,
    pub patience: usize,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Stops after this many optimizer steps, possibly mid-epoch.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 30,
            lr: 1e-4,
            gamma: 0.1,
            patience: 6,
            lr_min: 1e-8,
            beta1: 0.9,
            beta2: 0.99,
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be finite and non-negative",
                self.lr
            )));
        }
        self.schedule().map(|_| ())
    }

    fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.lr, self.gamma, self.patience, self.lr_min.min(self.lr))
    }
}

/// One row of the run log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Rate used during this epoch.
    pub lr: f64,
    pub train_loss: f64,
    /// Fraction of training samples classified correctly by the train-mode
    /// forward passes of this epoch.
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

pub const LOG_HEADER: &str = "epoch,lr,train_loss,train_acc,val_loss,val_acc";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6}"));
        format!(
            "{},{:e},{:.6},{:.6},{},{}",
            self.epoch,
            self.lr,
            self.train_loss,
            self.train_acc,
            opt(self.val_loss),
            opt(self.val_acc)
        )
    }
}

/// Where [`train`] writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub log_csv: Option<PathBuf>,
    /// Saved whenever the monitored loss reaches a new minimum.
    pub best_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
    /// Epoch and loss of the lowest validation loss (train loss without a
    /// validation set).
    pub best: Option<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub loss: f64,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy().unwrap_or(0.0)
    }
}

fn check_classes<T: Float>(model: &Model<T>, ds: &Dataset) -> Result<()> {
    if model.cfg().classes != ds.k() {
        return Err(Error::contract(format!(
            "model has {} classes but dataset has {}",
            model.cfg().classes,
            ds.k()
        )));
    }
    let s = model.net.input_shape(1);
    if (s.h, s.w) != (ds.height, ds.width) {
        return Err(Error::contract(format!(
            "model input is {}x{} but dataset images are {}x{}",
            s.h, s.w, ds.height, ds.width
        )));
    }
    Ok(())
}

/// Inference-mode confusion matrix and mean loss.
pub fn evaluate<T: Float>(
    model: &mut Model<T>,
    ds: &Dataset,
    batch_size: usize,
) -> Result<Evaluation> {
    check_classes(model, ds)?;
    if ds.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    let mut confusion = ConfusionMatrix::new(ds.class_names.clone())?;
    let mut total = 0.0;
    let order: Vec<usize> = (0..ds.len()).collect();
    for chunk in order.chunks(batch_size.max(1)) {
        let (x, labels) = ds.batch::<T>(chunk);
        let mut tape = Tape::new();
        let xn = tape.constant(x);
        let out = model.forward(&mut tape, xn, Mode::Infer)?;
        let loss = tape.softmax_cross_entropy(out.logits, &labels)?;
        total += tape.value(loss).data()[0].as_f64() * chunk.len() as f64;
        for (&t, p) in labels.iter().zip(argmax_rows(tape.value(out.logits))) {
            confusion.record(t, p)?;
        }
    }
    Ok(Evaluation {
        confusion,
        loss: total / ds.len() as f64,
    })
}

/// Seed of the shuffle for `epoch`.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains with Adam and the plateau schedule. Every epoch reshuffles the
/// training set; the schedule and checkpoint selection follow the
/// validation loss when `val` is given and the training loss otherwise.
pub fn train<T: Float>(
    model: &mut Model<T>,
    train_set: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_set.require_all_classes()?;
    check_classes(model, train_set)?;
    if let Some(v) = val {
        check_classes(model, v)?;
    }
    let mut log = match &outputs.log_csv {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "{LOG_HEADER}")?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let mut schedule = cfg.schedule()?;
    let mut adam = AdamState::new(&model.params, cfg.beta1, cfg.beta2);
    let mut outcome = TrainOutcome {
        epochs: Vec::new(),
        steps: 0,
        best: None,
    };
    let step_cap = cfg.max_steps.unwrap_or(usize::MAX);

    for epoch in 0..cfg.epochs {
        if outcome.steps >= step_cap {
            break;
        }
        let lr = schedule.lr;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if outcome.steps >= step_cap {
                break;
            }
            let (x, labels) = train_set.batch::<T>(chunk);
            model.params.zero_grad();
            let mut tape = Tape::new();
            let xn = tape.constant(x);
            let out = model.forward(&mut tape, xn, Mode::Train)?;
            let loss = tape.softmax_cross_entropy(out.logits, &labels)?;
            let loss_value = tape.value(loss).data()[0].as_f64();
            if !loss_value.is_finite() {
                return Err(Error::contract(format!(
                    "training loss became {loss_value} at step {}",
                    outcome.steps
                )));
            }
            correct += labels
                .iter()
                .zip(argmax_rows(tape.value(out.logits)))
                .filter(|(t, p)| **t == *p)
                .count();
            tape.backward(loss, &mut model.params)?;
            if lr > 0.0 {
                adam_step(&mut model.params, &mut adam, lr);
            }
            loss_sum += loss_value * chunk.len() as f64;
            seen += chunk.len();
            outcome.steps += 1;
        }
        let train_loss = loss_sum / seen.max(1) as f64;
        let train_acc = correct as f64 / seen.max(1) as f64;
        let (val_loss, val_acc) = match val {
            Some(v) => {
                let e = evaluate(model, v, cfg.batch_size)?;
                (Some(e.loss), Some(e.accuracy()))
            }
            None => (None, None),
        };
        let monitored = val_loss.unwrap_or(train_loss);
        if outcome.best.is_none_or(|(_, b)| monitored < b) {
            outcome.best = Some((epoch, monitored));
            if let Some(path) = &outputs.best_checkpoint {
                checkpoint::save_store(&model.params, path)?;
            }
        }
        schedule.step(monitored);
        let row = EpochLog {
            epoch,
            lr,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        };
        log::info!("{}", row.csv_row());
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", row.csv_row())?;
            w.flush()?;
        }
        outcome.epochs.push(row);
    }
    Ok(outcome)
}

/// Partitions `0..n` into `k` folds after a seeded shuffle. The first
/// `n % k` folds hold one extra index.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(Error::contract(format!(
            "cannot split {n} samples into {k} folds"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub outcome: TrainOutcome,
    pub validation: Evaluation,
}

/// k-fold cross-validation; every fold trains a fresh model.
pub fn cross_validate<T: Float>(
    model_cfg: &ModelConfig,
    ds: &Dataset,
    cfg: &TrainConfig,
    k: usize,
    outputs: impl Fn(usize) -> TrainOutputs,
) -> Result<Vec<FoldResult>> {
    let folds = kfold_split(ds.len(), k, cfg.seed)?;
    let mut results = Vec::with_capacity(k);
    for (f, held_out) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, v)| v)
            .copied()
            .collect();
        let (train_set, val_set) = (ds.subset(&train_idx), ds.subset(held_out));
        let mut model = Model::<T>::new(model_cfg.clone(), cfg.seed.wrapping_add(f as u64))?;
        let fold_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(f as u64),
            ..cfg.clone()
        };
        let outcome = train(
            &mut model,
            &train_set,
            Some(&val_set),
            &fold_cfg,
            &outputs(f),
        )?;
        let validation = evaluate(&mut model, &val_set, cfg.batch_size)?;
        results.push(FoldResult {
            fold: f,
            outcome,
            validation,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_with_balanced_remainder() {
        let folds = kfold_split(13, 10, 5).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 2, 2, 1, 1, 1, 1, 1, 1, 1]);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..13).collect::<Vec<_>>());
        assert_eq!(folds, kfold_split(13, 10, 5).unwrap());
        assert!(kfold_split(3, 4, 0).is_err());
    }

    #[test]
    fn defaults_match_the_published_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.epochs, c.patience), (8, 30, 6));
        assert_eq!(
            (c.lr, c.gamma, c.lr_min, c.beta1, c.beta2),
            (1e-4, 0.1, 1e-8, 0.9, 0.99)
        );
    }
}
