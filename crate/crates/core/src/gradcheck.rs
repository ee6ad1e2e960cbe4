//! Finite-difference verification of every backward rule, the building
//! block and a miniature end-to-end network.
//!
//! A probe builds a scalar from an input and a parameter store: for single
//! layers and blocks a fixed random projection `Σ out ⊙ R`, for the full
//! network the classification loss. Analytic gradients from the tape are
//! compared with central differences in `f64`.
//!
//! Finite differences are meaningless across a ReLU or max-pool switch.
//! Single-op probes are rejected and redrawn when any ReLU input or max-pool
//! top-two gap lies within [`KINK_MARGIN`]. Every probe is also redrawn if
//! a perturbed evaluation lands on a different activation pattern.

use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, ConvSpec, Dense, Forward, Mode, Padding};
use crate::opticnet::config::{ResConvConfig, StageConfig, StridePlacement};
use crate::opticnet::{
    BuildingBlock, Model, ModelConfig, ResidualConvUnit, ResidualUnit, ResidualUnitConfig,
};
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const KINK_MARGIN: f64 = 1e-3;
/// Floor of the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-12;
/// Components checked per tensor; larger tensors are sampled.
pub const MAX_COMPONENTS: usize = 64;
const MAX_ATTEMPTS: u64 = 50;

type Build = Box<dyn Fn(&mut Tape<f64>, &mut ParamStore<f64>, NodeId) -> Result<NodeId>>;

/// A scalar-valued function of an input tensor and a parameter store.
pub struct Probe {
    pub store: ParamStore<f64>,
    pub input: Tensor<f64>,
    build: Build,
    /// Apply the [`KINK_MARGIN`] rejection rule.
    pub strict_margin: bool,
}

impl Probe {
    pub fn new(
        store: ParamStore<f64>,
        input: Tensor<f64>,
        strict_margin: bool,
        build: impl Fn(&mut Tape<f64>, &mut ParamStore<f64>, NodeId) -> Result<NodeId> + 'static,
    ) -> Self {
        Probe {
            store,
            input,
            build: Box::new(build),
            strict_margin,
        }
    }

    fn eval(&mut self, x: &Tensor<f64>) -> Result<(f64, u64)> {
        let mut tape = Tape::with_kink_tracking();
        let xn = tape.constant(x.clone());
        let out = (self.build)(&mut tape, &mut self.store, xn)?;
        let v = tape.value(out).data()[0];
        if !v.is_finite() {
            return Err(Error::Probe(format!("probe evaluated to {v}")));
        }
        Ok((v, tape.activation_pattern()))
    }
}

/// Agreement between analytic and numerical gradients of one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub name: String,
    pub shape: Shape,
    pub checked: usize,
    pub max_rel: f64,
    pub max_abs: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn compare(
    name: &str,
    shape: Shape,
    idx: &[usize],
    analytic: &[f64],
    numeric: &[f64],
) -> Comparison {
    let mut c = Comparison {
        name: name.to_string(),
        shape,
        checked: idx.len(),
        max_rel: 0.0,
        max_abs: 0.0,
        worst_index: idx.first().copied().unwrap_or(0),
        analytic: 0.0,
        numeric: 0.0,
    };
    for (k, &i) in idx.iter().enumerate() {
        let (a, n) = (analytic[i], numeric[k]);
        let rel = relative_error(a, n);
        c.max_abs = c.max_abs.max((a - n).abs());
        if rel > c.max_rel || k == 0 {
            c.max_rel = c.max_rel.max(rel);
            (c.worst_index, c.analytic, c.numeric) = (i, a, n);
        }
    }
    c
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub probe: String,
    pub seed: u64,
    pub eps: f64,
    pub tol: f64,
    /// Draws rejected for kink proximity before this one.
    pub resamples: u64,
    pub entries: Vec<Comparison>,
}

impl GradReport {
    pub fn max_rel(&self) -> f64 {
        self.entries.iter().map(|c| c.max_rel).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|c| c.max_rel < self.tol)
    }

    pub fn worst(&self) -> Option<&Comparison> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel.total_cmp(&b.max_rel))
    }

    pub const CSV_HEADER: &'static str =
        "probe,seed,tensor,shape,checked,max_rel,max_abs,worst_index,analytic,numeric,pass";

    pub fn csv_rows(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|c| {
                format!(
                    "{},{},{},{}x{}x{}x{},{},{:e},{:e},{},{:e},{:e},{}",
                    self.probe,
                    self.seed,
                    c.name,
                    c.shape.n,
                    c.shape.h,
                    c.shape.w,
                    c.shape.c,
                    c.checked,
                    c.max_rel,
                    c.max_abs,
                    c.worst_index,
                    c.analytic,
                    c.numeric,
                    c.max_rel < self.tol
                )
            })
            .collect()
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "ok  " } else { "FAIL" };
        write!(
            f,
            "{status} {:<28} seed {:>3}  max rel {:.2e}",
            self.probe,
            self.seed,
            self.max_rel()
        )?;
        if let Some(w) = self.worst().filter(|_| !self.passed()) {
            write!(
                f,
                "  worst {}[{}]: analytic {:e} numeric {:e}",
                w.name, w.worst_index, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

/// Central differences of `f` at every component of `x`.
pub fn finite_diff(
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
    x: &Tensor<f64>,
    eps: f64,
) -> Result<Tensor<f64>> {
    if !(eps > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let lo = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::Probe(format!(
                "non-finite evaluation at component {i}"
            )));
        }
        out.data_mut()[i] = (hi - lo) / (2.0 * eps);
    }
    Ok(out)
}

fn sample_indices(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= MAX_COMPONENTS {
        return (0..len).collect();
    }
    let mut idx = rand::seq::index::sample(rng, len, MAX_COMPONENTS).into_vec();
    idx.sort_unstable();
    idx
}

enum Outcome {
    Report(Vec<Comparison>),
    Kink,
}

fn check_once(probe: &mut Probe, eps: f64, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let mut tape = Tape::with_kink_tracking();
    let xn = tape.variable(probe.input.clone());
    let out = (probe.build)(&mut tape, &mut probe.store, xn)?;
    if tape.shape(out) != Shape::SCALAR {
        return Err(Error::Probe(format!(
            "probe output {} is not a scalar",
            tape.shape(out)
        )));
    }
    if probe.strict_margin && tape.kink_margin() < KINK_MARGIN {
        return Ok(Outcome::Kink);
    }
    let pattern = tape.activation_pattern();
    probe.store.zero_grad();
    tape.backward(out, &mut probe.store)?;
    let input_grad = tape
        .grad(xn)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(probe.input.shape()));
    drop(tape);

    let mut entries = Vec::new();
    let x0 = probe.input.clone();
    let idx = sample_indices(x0.len(), rng);
    let mut numeric = Vec::with_capacity(idx.len());
    let mut x = x0.clone();
    for &i in &idx {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let (hi, p_hi) = probe.eval(&x)?;
        x.data_mut()[i] = orig - eps;
        let (lo, p_lo) = probe.eval(&x)?;
        x.data_mut()[i] = orig;
        if p_hi != pattern || p_lo != pattern {
            return Ok(Outcome::Kink);
        }
        numeric.push((hi - lo) / (2.0 * eps));
    }
    entries.push(compare(
        "input",
        x0.shape(),
        &idx,
        input_grad.data(),
        &numeric,
    ));

    let params: Vec<_> = probe
        .store
        .iter()
        .filter(|(_, _, v)| v.trainable)
        .map(|(id, p, _)| (id, p.to_string()))
        .collect();
    for (id, path) in params {
        let analytic = probe.store.get(id).grad.clone();
        let idx = sample_indices(analytic.len(), rng);
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = probe.store.get(id).value.data()[i];
            probe.store.get_mut(id).value.data_mut()[i] = orig + eps;
            let (hi, p_hi) = probe.eval(&x0)?;
            probe.store.get_mut(id).value.data_mut()[i] = orig - eps;
            let (lo, p_lo) = probe.eval(&x0)?;
            probe.store.get_mut(id).value.data_mut()[i] = orig;
            if p_hi != pattern || p_lo != pattern {
                return Ok(Outcome::Kink);
            }
            numeric.push((hi - lo) / (2.0 * eps));
        }
        entries.push(compare(
            &path,
            analytic.shape(),
            &idx,
            analytic.data(),
            &numeric,
        ));
    }
    Ok(Outcome::Report(entries))
}

fn attempt_seed(seed: u64, attempt: u64) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs `make` with fresh draws until one avoids every kink, then checks
/// it at step `eps` and tolerance `tol`.
pub fn check_probe(
    name: &str,
    make: impl Fn(u64) -> Result<Probe>,
    seed: u64,
    eps: f64,
    tol: f64,
) -> Result<GradReport> {
    for attempt in 0..MAX_ATTEMPTS {
        let s = attempt_seed(seed, attempt);
        let mut probe = make(s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5EED);
        if let Outcome::Report(entries) = check_once(&mut probe, eps, &mut rng)? {
            return Ok(GradReport {
                probe: name.to_string(),
                seed,
                eps,
                tol,
                resamples: attempt,
                entries,
            });
        }
    }
    Err(Error::Probe(format!(
        "{name}: no kink-free draw in {MAX_ATTEMPTS} attempts (seed {seed})"
    )))
}

fn normal(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::normal(shape, 0.0, 1.0, rng)
}

/// Randomizes affine and running statistics so no gradient path hides
/// behind the identity initialization.
fn jitter(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for (_, path, var) in store.iter_mut() {
        let shape = var.value.shape();
        let fresh = if path.ends_with("/gamma") || path.ends_with("/running_var") {
            Some(Tensor::uniform(shape, 0.5, 1.5, rng))
        } else if path.ends_with("/beta") || path.ends_with("/b") || path.ends_with("/running_mean")
        {
            Some(Tensor::normal(shape, 0.0, 0.3, rng))
        } else {
            None
        };
        if let Some(v) = fresh {
            var.value = v;
        }
    }
}

/// `Σ out ⊙ R` for a fixed random `R`.
fn projection(tape: &mut Tape<f64>, out: NodeId, r: &Tensor<f64>) -> Result<NodeId> {
    let rn = tape.constant(r.clone());
    let prod = tape.mul(out, rn)?;
    Ok(tape.sum(prod))
}

fn conv_probe(spec: ConvSpec, input: Shape) -> impl Fn(u64) -> Result<Probe> {
    move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "conv", spec, &mut rng)?;
        let out = conv.trace(input, &mut Vec::new())?;
        let r = normal(out, &mut rng);
        let x = normal(input, &mut rng);
        Ok(Probe::new(store, x, true, move |tape, store, x| {
            let y = conv.forward(&mut Forward::new(tape, store, Mode::Train), x)?;
            projection(tape, y, &r)
        }))
    }
}

fn op_probe(
    input: Shape,
    out: Shape,
    op: impl Fn(&mut Tape<f64>, NodeId) -> Result<NodeId> + Clone + 'static,
) -> impl Fn(u64) -> Result<Probe> {
    move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = normal(input, &mut rng);
        let r = normal(out, &mut rng);
        let op = op.clone();
        Ok(Probe::new(ParamStore::new(), x, true, move |tape, _, x| {
            let y = op(tape, x)?;
            projection(tape, y, &r)
        }))
    }
}

fn batch_norm_probe(mode: Mode) -> impl Fn(u64) -> Result<Probe> {
    move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 4)?;
        jitter(&mut store, &mut rng);
        let shape = Shape::new(3, 3, 3, 4);
        let x = Tensor::normal(shape, 0.5, 2.0, &mut rng);
        let r = normal(shape, &mut rng);
        Ok(Probe::new(store, x, true, move |tape, store, x| {
            let y = bn.forward(&mut Forward::new(tape, store, mode), x)?;
            projection(tape, y, &r)
        }))
    }
}

fn dense_probe(seed: u64) -> Result<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let dense = Dense::new(&mut store, "fc", 6, 4, &mut rng)?;
    jitter(&mut store, &mut rng);
    let x = normal(Shape::new(3, 1, 1, 6), &mut rng);
    let r = normal(Shape::new(3, 1, 1, 4), &mut rng);
    Ok(Probe::new(store, x, true, move |tape, store, x| {
        let y = dense.forward(&mut Forward::new(tape, store, Mode::Train), x)?;
        projection(tape, y, &r)
    }))
}

fn broadcast_add_mul_probe(seed: u64) -> Result<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let shape = Shape::new(2, 3, 3, 2);
    let b = store.add("b", normal(Shape::new(1, 3, 3, 2), &mut rng), true)?;
    let x = normal(shape, &mut rng);
    let r = normal(shape, &mut rng);
    Ok(Probe::new(store, x, true, move |tape, store, x| {
        let bn = tape.param(store, b);
        let s = tape.add(x, bn)?;
        let y = tape.mul(s, x)?;
        projection(tape, y, &r)
    }))
}

fn softmax_probe(seed: u64) -> Result<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::normal(Shape::new(4, 1, 1, 5), 0.0, 2.0, &mut rng);
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
    Ok(Probe::new(ParamStore::new(), x, true, move |tape, _, x| {
        tape.softmax_cross_entropy(x, &labels)
    }))
}

/// Residual unit sized for probing: input width 8, middle width 4.
fn small_unit(pre_activation: bool) -> ResidualUnitConfig {
    ResidualUnitConfig {
        pre_activation,
        ..ResidualUnitConfig::new(4, 4, 8)
    }
}

fn residual_unit_probe(pre_activation: bool) -> impl Fn(u64) -> Result<Probe> {
    move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let unit = ResidualUnit::new(&mut store, "unit", small_unit(pre_activation), 8, &mut rng)?;
        jitter(&mut store, &mut rng);
        let shape = Shape::new(2, 5, 5, 8);
        let x = normal(shape, &mut rng);
        let r = normal(shape, &mut rng);
        Ok(Probe::new(store, x, false, move |tape, store, x| {
            let y = unit.forward(&mut Forward::new(tape, store, Mode::Train), x)?;
            projection(tape, y, &r)
        }))
    }
}

fn residual_conv_probe(downsample: bool) -> impl Fn(u64) -> Result<Probe> {
    move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = ResConvConfig {
            widths: [4, 4, 8],
            mid_kernel: 2,
            downsample,
            stride_placement: StridePlacement::FinalConv,
        };
        let unit = ResidualConvUnit::new(&mut store, "resconv", cfg, 3, &mut rng)?;
        jitter(&mut store, &mut rng);
        let input = Shape::new(2, 6, 6, 3);
        let out = unit.trace(input, &mut Vec::new())?;
        let x = normal(input, &mut rng);
        let r = normal(out, &mut rng);
        Ok(Probe::new(store, x, false, move |tape, store, x| {
            let y = unit.forward(&mut Forward::new(tape, store, Mode::Train), x)?;
            projection(tape, y, &r)
        }))
    }
}

/// Building block of `units` residual units on an `(2, side, side, 8)`
/// input, read out through `τ`.
pub fn building_block_probe(
    mode: Mode,
    side: usize,
    units: usize,
) -> impl Fn(u64) -> Result<Probe> {
    move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let stage = StageConfig {
            res_conv: ResConvConfig {
                widths: [2, 2, 8],
                mid_kernel: 2,
                downsample: false,
                stride_placement: StridePlacement::FinalConv,
            },
            unit: small_unit(true),
            repeats: units,
        };
        let block = BuildingBlock::new(&mut store, "block", &stage, &mut rng)?;
        jitter(&mut store, &mut rng);
        let shape = Shape::new(2, side, side, 8);
        let x = normal(shape, &mut rng);
        let r = normal(shape, &mut rng);
        Ok(Probe::new(store, x, false, move |tape, store, x| {
            let out = block.forward(&mut Forward::new(tape, store, mode), x)?;
            projection(tape, out.tau, &r)
        }))
    }
}

pub const TINY_INPUT: usize = 16;
pub const TINY_CLASSES: usize = 3;

/// Loss of the two-stage miniature network on a batch of two.
pub fn full_chain_probe(seed: u64) -> Result<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::<f64>::new(ModelConfig::tiny(TINY_INPUT, TINY_CLASSES), seed)?;
    jitter(&mut model.params, &mut rng);
    let x = normal(model.net.input_shape(2), &mut rng);
    let labels: Vec<usize> = (0..2).map(|_| rng.random_range(0..TINY_CLASSES)).collect();
    let Model { net, params } = model;
    Ok(Probe::new(params, x, false, move |tape, store, x| {
        let out = net.forward(&mut Forward::new(tape, store, Mode::Train), x)?;
        tape.softmax_cross_entropy(out.logits, &labels)
    }))
}

type Factory = Box<dyn Fn(u64) -> Result<Probe>>;

/// Every single-layer and single-op probe.
pub fn layer_probes() -> Vec<(&'static str, Factory)> {
    let s = Shape::new(2, 6, 6, 3);
    let mut v: Vec<(&'static str, Factory)> = vec![
        (
            "conv 3x3",
            Box::new(conv_probe(ConvSpec::regular(3, 3, 4), s)),
        ),
        (
            "conv 3x3 /2",
            Box::new(conv_probe(ConvSpec::regular(3, 3, 4).with_stride(2), s)),
        ),
        (
            "conv 3x3 valid",
            Box::new(conv_probe(
                ConvSpec::regular(3, 3, 4).with_padding(Padding::Valid),
                s,
            )),
        ),
        (
            "conv 2x2",
            Box::new(conv_probe(ConvSpec::regular(2, 3, 4), s)),
        ),
        (
            "conv 1x1",
            Box::new(conv_probe(ConvSpec::regular(1, 3, 4), s)),
        ),
        (
            "conv 1x1 /2",
            Box::new(conv_probe(ConvSpec::regular(1, 3, 4).with_stride(2), s)),
        ),
        (
            "conv 7x7 /2",
            Box::new(conv_probe(ConvSpec::regular(7, 3, 2).with_stride(2), s)),
        ),
        (
            "atrous 2x2 r2",
            Box::new(conv_probe(ConvSpec::atrous(2, 2, 3, 4), s)),
        ),
        (
            "atrous 3x3 r2",
            Box::new(conv_probe(ConvSpec::atrous(3, 2, 3, 4), s)),
        ),
        (
            "separable 3x3",
            Box::new(conv_probe(ConvSpec::separable(3, 3, 4), s)),
        ),
        (
            "atrous separable 2x2 r2",
            Box::new(conv_probe(ConvSpec::atrous_separable(2, 2, 3, 4), s)),
        ),
        ("dense", Box::new(dense_probe)),
        ("batch norm train", Box::new(batch_norm_probe(Mode::Train))),
        ("batch norm infer", Box::new(batch_norm_probe(Mode::Infer))),
        ("add broadcast, mul", Box::new(broadcast_add_mul_probe)),
        ("softmax cross-entropy", Box::new(softmax_probe)),
    ];
    v.push(("relu", Box::new(op_probe(s, s, |t, x| Ok(t.relu(x))))));
    v.push(("sigmoid", Box::new(op_probe(s, s, |t, x| Ok(t.sigmoid(x))))));
    v.push((
        "max pool 2x2",
        Box::new(op_probe(s, Shape::new(2, 3, 3, 3), |t, x| {
            t.max_pool2d(x, 2, 2)
        })),
    ));
    v.push((
        "max pool 2x2 odd",
        Box::new(op_probe(
            Shape::new(2, 5, 5, 2),
            Shape::new(2, 2, 2, 2),
            |t, x| t.max_pool2d(x, 2, 2),
        )),
    ));
    v.push((
        "bilinear x2",
        Box::new(op_probe(
            Shape::new(2, 3, 3, 2),
            Shape::new(2, 6, 6, 2),
            |t, x| t.bilinear_upsample(x, 6, 6),
        )),
    ));
    v.push((
        "bilinear 3x3 to 5x7",
        Box::new(op_probe(
            Shape::new(2, 3, 3, 2),
            Shape::new(2, 5, 7, 2),
            |t, x| t.bilinear_upsample(x, 5, 7),
        )),
    ));
    v.push((
        "global avg pool",
        Box::new(op_probe(s, Shape::new(2, 1, 1, 3), |t, x| {
            Ok(t.global_avg_pool(x))
        })),
    ));
    v.push(("residual unit", Box::new(residual_unit_probe(true))));
    v.push((
        "residual unit post-act",
        Box::new(residual_unit_probe(false)),
    ));
    v.push(("residual conv unit", Box::new(residual_conv_probe(false))));
    v.push(("residual conv unit /2", Box::new(residual_conv_probe(true))));
    v
}

pub fn block_probes() -> Vec<(&'static str, Factory)> {
    vec![
        (
            "building block train",
            Box::new(building_block_probe(Mode::Train, 6, 2)),
        ),
        (
            "building block infer",
            Box::new(building_block_probe(Mode::Infer, 6, 2)),
        ),
        (
            "building block odd 5x5",
            Box::new(building_block_probe(Mode::Train, 5, 1)),
        ),
    ]
}

pub fn chain_probes() -> Vec<(&'static str, Factory)> {
    vec![("tiny network", Box::new(full_chain_probe))]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Layers,
    Block,
    Chain,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layers" => Ok(Suite::Layers),
            "block" => Ok(Suite::Block),
            "chain" => Ok(Suite::Chain),
            "all" => Ok(Suite::All),
            other => Err(Error::config(format!(
                "unknown gradcheck suite `{other}` (layers, block, chain, all)"
            ))),
        }
    }
}

/// Runs every probe of `suite` once per seed, in probe-then-seed order.
pub fn run_suite(suite: Suite, seeds: &[u64], eps: f64, tol: f64) -> Result<Vec<GradReport>> {
    let mut probes = Vec::new();
    if matches!(suite, Suite::Layers | Suite::All) {
        probes.extend(layer_probes());
    }
    if matches!(suite, Suite::Block | Suite::All) {
        probes.extend(block_probes());
    }
    if matches!(suite, Suite::Chain | Suite::All) {
        probes.extend(chain_probes());
    }
    let mut reports = Vec::with_capacity(probes.len() * seeds.len());
    for (name, make) in &probes {
        for &seed in seeds {
            reports.push(check_probe(name, make, seed, eps, tol)?);
        }
    }
    Ok(reports)
}

/// Text summary plus one line per failing report.
pub fn summarize(reports: &[GradReport]) -> String {
    let mut out = String::new();
    for r in reports {
        writeln!(out, "{r}").unwrap();
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    let worst = reports.iter().map(GradReport::max_rel).fold(0.0, f64::max);
    writeln!(
        out,
        "{} probes, {failed} failed, worst relative error {worst:.2e}",
        reports.len()
    )
    .unwrap();
    out
}
