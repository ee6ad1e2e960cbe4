use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, ConvSpec, Dense, Forward, LayerRow, Mode};
use crate::tensor::{Float, Shape, Tensor};

use super::blocks::{BlockOutput, Stage};
use super::config::ModelConfig;

/// Layer structure of an Optic-Net. Parameters live in a separate
/// [`ParamStore`]; see [`Model`] for the bundled form.
#[derive(Clone, Debug)]
pub struct OpticNet {
    pub cfg: ModelConfig,
    pub stem: Conv2d,
    stem_bn: BatchNorm,
    pub stages: Vec<Stage>,
    pub fc1: Dense,
    pub fc2: Dense,
}

/// Node handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub logits: NodeId,
    pub stages: Vec<BlockOutput>,
}

impl OpticNet {
    pub fn new<T: Float>(cfg: ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem_spec =
            ConvSpec::regular(cfg.stem_kernel, cfg.in_channels, cfg.stem_width).with_stride(2);
        let stem = Conv2d::new(store, "stem/conv", stem_spec, &mut rng)?;
        let stem_bn = BatchNorm::new(store, "stem/bn", cfg.stem_width)?;
        let mut stages = Vec::with_capacity(cfg.stages.len());
        let mut width = cfg.stem_width;
        for (k, stage) in cfg.stages.iter().enumerate() {
            stages.push(Stage::new(
                store,
                &format!("stage{}", k + 1),
                stage,
                width,
                &mut rng,
            )?);
            width = stage.out_channels();
        }
        let fc1 = Dense::new(store, "head/fc1", width, cfg.fc_hidden, &mut rng)?;
        let fc2 = Dense::new(store, "head/fc2", cfg.fc_hidden, cfg.classes, &mut rng)?;
        Ok(OpticNet {
            cfg,
            stem,
            stem_bn,
            stages,
            fc1,
            fc2,
        })
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        Shape::new(
            batch,
            self.cfg.input_size,
            self.cfg.input_size,
            self.cfg.in_channels,
        )
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: NodeId) -> Result<ForwardTrace> {
        let xs = f.tape.shape(x);
        let expect = self.input_shape(xs.n);
        if xs != expect {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: expect,
                right: xs,
            });
        }
        let h = self.stem.forward(f, x)?;
        let h = self.stem_bn.forward(f, h)?;
        let mut h = f.tape.relu(h);
        let mut outputs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let x_l = stage.res_conv.forward(f, h)?;
            let out = stage.block.forward(f, x_l)?;
            h = out.tau;
            outputs.push(out);
        }
        let pooled = f.tape.global_avg_pool(h);
        let hidden = self.fc1.forward(f, pooled)?;
        let hidden = f.tape.relu(hidden);
        let logits = self.fc2.forward(f, hidden)?;
        Ok(ForwardTrace {
            logits,
            stages: outputs,
        })
    }

    /// Static per-layer trace for a batch of one: shapes, weights, MACs.
    pub fn trace(&self) -> Result<Vec<LayerRow>> {
        let mut rows = Vec::new();
        let h = self.stem.trace(self.input_shape(1), &mut rows)?;
        let mut h = self.stem_bn.trace(h, &mut rows)?;
        for (k, stage) in self.stages.iter().enumerate() {
            h = stage.res_conv.trace(h, &mut rows)?;
            h = stage.block.trace(h, &mut rows)?;
            rows.push(LayerRow {
                path: format!("stage{}/output", k + 1),
                kind: "stage output".into(),
                output: h,
                weights: 0,
                bn_params: 0,
                biases: 0,
                macs: 0,
            });
        }
        let pooled = Shape::new(h.n, 1, 1, h.c);
        rows.push(LayerRow {
            path: "head/gap".into(),
            kind: "global-avg-pool".into(),
            output: pooled,
            weights: 0,
            bn_params: 0,
            biases: 0,
            macs: 0,
        });
        let h = self.fc1.trace(pooled, &mut rows)?;
        self.fc2.trace(h, &mut rows)?;
        Ok(rows)
    }

    /// Output shape `(h, w, c)` of every stage for the configured input.
    pub fn stage_shapes(&self) -> Result<Vec<Shape>> {
        Ok(self
            .trace()?
            .into_iter()
            .filter(|r| r.kind == "stage output")
            .map(|r| r.output)
            .collect())
    }
}

/// An [`OpticNet`] together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub net: OpticNet,
    pub params: ParamStore<T>,
}

impl<T: Float> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = OpticNet::new(cfg, &mut params, seed)?;
        Ok(Model { net, params })
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.net.cfg
    }

    /// Records a forward pass of `x` onto `tape`.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: NodeId, mode: Mode) -> Result<ForwardTrace> {
        let Model { net, params } = self;
        net.forward(&mut Forward::new(tape, params, mode), x)
    }

    /// Inference-mode logits for a batch, shape `(n, 1, 1, K)`.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let out = self.forward(&mut tape, xn, Mode::Infer)?;
        Ok(tape.value(out.logits).clone())
    }
}

/// Index of the largest logit per sample.
pub fn argmax_rows<T: Float>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape().features();
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}
