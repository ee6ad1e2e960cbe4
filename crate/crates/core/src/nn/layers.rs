//! Parameterized layers. Each layer registers its variables in a
//! [`ParamStore`] at construction, records itself onto a tape in
//! `forward`, and can describe its output shape and cost without running.

use rand::Rng;

use crate::autodiff::{NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::nn::conv::{ConvGeometry, ConvKind, ConvSpec};
use crate::nn::norm::{Mode, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use crate::tensor::{Float, Shape, Tensor};

/// Everything a forward pass needs: the tape being recorded, the
/// parameters, and whether batch norm uses batch or running statistics.
pub struct Forward<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub store: &'a mut ParamStore<T>,
    pub mode: Mode,
}

impl<'a, T: Float> Forward<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, store: &'a mut ParamStore<T>, mode: Mode) -> Self {
        Forward { tape, store, mode }
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.tape.param(self.store, id)
    }
}

/// One row of a static layer trace.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRow {
    pub path: String,
    pub kind: String,
    pub output: Shape,
    /// Bias-free weights (conv kernels, dense matrices).
    pub weights: u64,
    /// Batch-norm gammas and betas.
    pub bn_params: u64,
    pub biases: u64,
    pub macs: u64,
}

impl LayerRow {
    fn new(path: &str, kind: impl Into<String>, output: Shape) -> Self {
        LayerRow {
            path: path.to_string(),
            kind: kind.into(),
            output,
            weights: 0,
            bn_params: 0,
            biases: 0,
            macs: 0,
        }
    }
}

fn he_normal<T: Float, R: Rng + ?Sized>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor<T> {
    Tensor::normal(shape, 0.0, (2.0 / fan_in as f64).sqrt(), rng)
}

/// Any convolution kind from [`ConvKind`]; separable kinds own a second,
/// pointwise kernel. No biases.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub path: String,
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub pointwise: Option<ParamId>,
}

impl Conv2d {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let ws = spec.weight_shape();
        let fan_in = if spec.kind.is_depthwise() {
            ws.n * ws.h
        } else {
            ws.n * ws.h * ws.w
        };
        let weight = store.add(format!("{path}/w"), he_normal(ws, fan_in, rng), true)?;
        let pointwise = match spec.pointwise_shape() {
            Some(ps) => Some(store.add(
                format!("{path}/pw"),
                he_normal(ps, spec.in_channels, rng),
                true,
            )?),
            None => None,
        };
        Ok(Conv2d {
            path: path.to_string(),
            spec,
            weight,
            pointwise,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: NodeId) -> Result<NodeId> {
        let s = &self.spec;
        let w = f.param(self.weight);
        if s.kind.is_depthwise() {
            let dw = f
                .tape
                .depthwise_conv2d(x, w, s.stride, s.dilation, s.padding)?;
            match self.pointwise {
                Some(pw) => {
                    let pw = f.param(pw);
                    f.tape.conv2d(dw, pw, 1, 1, s.padding)
                }
                None => Ok(dw),
            }
        } else {
            f.tape.conv2d(x, w, s.stride, s.dilation, s.padding)
        }
    }

    pub fn geometry(&self, input: Shape) -> Result<ConvGeometry> {
        let s = &self.spec;
        if input.c != s.in_channels {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "{} expects {} input channels, got {input}",
                    self.path, s.in_channels
                ),
            ));
        }
        let out_c = if s.kind == ConvKind::Depthwise {
            s.in_channels
        } else {
            s.out_channels
        };
        ConvGeometry::new(
            input, s.kernel.0, s.kernel.1, s.stride, s.dilation, s.padding, out_c,
        )
    }

    /// Kernel element count, all stages.
    pub fn weight_count(&self) -> u64 {
        let s = &self.spec;
        let main = s.weight_shape().numel() as u64;
        main + s.pointwise_shape().map_or(0, |p| p.numel() as u64)
    }

    pub fn trace(&self, input: Shape, rows: &mut Vec<LayerRow>) -> Result<Shape> {
        let g = self.geometry(input)?;
        let s = &self.spec;
        let macs = if s.kind.is_depthwise() {
            let depth =
                (g.output.n * g.output.h * g.output.w * s.in_channels * s.kernel.0 * s.kernel.1)
                    as u64;
            let point = if self.pointwise.is_some() {
                (g.output.n * g.output.h * g.output.w * s.in_channels * s.out_channels) as u64
            } else {
                0
            };
            depth + point
        } else {
            g.dense_macs()
        };
        let kind = format!(
            "{}x{} {}{}{}",
            s.kernel.0,
            s.kernel.1,
            s.kind,
            if s.dilation > 1 {
                format!(" r={}", s.dilation)
            } else {
                String::new()
            },
            if s.stride > 1 {
                format!(" /{}", s.stride)
            } else {
                String::new()
            }
        );
        let mut row = LayerRow::new(&self.path, kind, g.output);
        row.weights = self.weight_count();
        row.macs = macs;
        rows.push(row);
        Ok(g.output)
    }
}

/// Batch normalization with learnable per-channel scale and shift plus
/// running statistics for inference.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub path: String,
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, path: &str, channels: usize) -> Result<Self> {
        let v = Shape::vector(channels);
        Ok(BatchNorm {
            path: path.to_string(),
            channels,
            gamma: store.add(format!("{path}/gamma"), Tensor::ones(v), true)?,
            beta: store.add(format!("{path}/beta"), Tensor::zeros(v), true)?,
            running_mean: store.add(format!("{path}/running_mean"), Tensor::zeros(v), false)?,
            running_var: store.add(format!("{path}/running_var"), Tensor::ones(v), false)?,
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: NodeId) -> Result<NodeId> {
        let gamma = f.param(self.gamma);
        let beta = f.param(self.beta);
        match f.mode {
            Mode::Infer => {
                let rm = &f.store.get(self.running_mean).value;
                let rv = &f.store.get(self.running_var).value;
                let (y, _) =
                    f.tape
                        .batch_norm(x, gamma, beta, Some((rm, rv)), self.epsilon, Mode::Infer)?;
                Ok(y)
            }
            Mode::Train => {
                let (y, stats) =
                    f.tape
                        .batch_norm(x, gamma, beta, None, self.epsilon, Mode::Train)?;
                let m = T::of(self.momentum);
                let keep = T::one() - m;
                for (r, &b) in f
                    .store
                    .get_mut(self.running_mean)
                    .value
                    .data_mut()
                    .iter_mut()
                    .zip(&stats.mean)
                {
                    *r = m * *r + keep * b;
                }
                for (r, &b) in f
                    .store
                    .get_mut(self.running_var)
                    .value
                    .data_mut()
                    .iter_mut()
                    .zip(&stats.batch_var)
                {
                    *r = m * *r + keep * b;
                }
                Ok(y)
            }
        }
    }

    pub fn trace(&self, input: Shape, rows: &mut Vec<LayerRow>) -> Result<Shape> {
        if input.c != self.channels {
            return Err(Error::dim(
                "batch_norm",
                format!(
                    "{} has {} channels, input {input}",
                    self.path, self.channels
                ),
            ));
        }
        let mut row = LayerRow::new(&self.path, "batch-norm", input);
        row.bn_params = 2 * self.channels as u64;
        rows.push(row);
        Ok(input)
    }
}

/// Fully connected layer with bias.
#[derive(Clone, Debug)]
pub struct Dense {
    pub path: String,
    pub inputs: usize,
    pub outputs: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = Tensor::uniform(Shape::new(1, 1, inputs, outputs), -limit, limit, rng);
        Ok(Dense {
            path: path.to_string(),
            inputs,
            outputs,
            weight: store.add(format!("{path}/w"), w, true)?,
            bias: store.add(
                format!("{path}/b"),
                Tensor::zeros(Shape::vector(outputs)),
                true,
            )?,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: NodeId) -> Result<NodeId> {
        let w = f.param(self.weight);
        let b = f.param(self.bias);
        f.tape.dense(x, w, Some(b))
    }

    pub fn trace(&self, input: Shape, rows: &mut Vec<LayerRow>) -> Result<Shape> {
        if input.features() != self.inputs {
            return Err(Error::dim(
                "dense",
                format!(
                    "{} expects {} features, input {input}",
                    self.path, self.inputs
                ),
            ));
        }
        let out = Shape::new(input.n, 1, 1, self.outputs);
        let mut row = LayerRow::new(&self.path, "dense", out);
        row.weights = (self.inputs * self.outputs) as u64;
        row.biases = self.outputs as u64;
        row.macs = (input.n * self.inputs * self.outputs) as u64;
        rows.push(row);
        Ok(out)
    }
}
