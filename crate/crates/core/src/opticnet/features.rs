//! Intermediate signals of the building blocks, for inspection.

use std::path::Path;

use crate::autodiff::{ParamStore, Tape};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Float, Tensor};

use super::model::Model;

/// `α`, `β` and `τ` of one stage's building block.
#[derive(Clone, Debug)]
pub struct StageSignals<T> {
    pub alpha: Tensor<T>,
    pub beta: Tensor<T>,
    pub tau: Tensor<T>,
}

/// Inference-mode signals of building block `stage` (1-based).
pub fn stage_signals<T: Float>(
    model: &mut Model<T>,
    x: &Tensor<T>,
    stage: usize,
) -> Result<StageSignals<T>> {
    let stages = model.cfg().stages.len();
    if stage == 0 || stage > stages {
        return Err(Error::contract(format!(
            "stage {stage} out of range 1..={stages}"
        )));
    }
    let mut tape = Tape::new();
    let xn = tape.constant(x.clone());
    let out = model.forward(&mut tape, xn, Mode::Infer)?;
    let b = out.stages[stage - 1];
    Ok(StageSignals {
        alpha: tape.value(b.alpha).clone(),
        beta: tape.value(b.beta).clone(),
        tau: tape.value(b.tau).clone(),
    })
}

/// Writes `stage{k}/alpha|beta|tau` as a checkpoint-format file.
pub fn export_feature_maps<T: Float>(
    model: &mut Model<T>,
    x: &Tensor<T>,
    stage: usize,
    path: &Path,
) -> Result<()> {
    let s = stage_signals(model, x, stage)?;
    let mut store = ParamStore::new();
    for (name, t) in [("alpha", s.alpha), ("beta", s.beta), ("tau", s.tau)] {
        store.add(format!("stage{stage}/{name}"), t, false)?;
    }
    checkpoint::save_store(&store, path)
}
