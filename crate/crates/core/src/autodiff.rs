//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass in execution
//! order, so node indices are already a topological order. [`Tape::backward`]
//! walks the nodes once in reverse, applying each operation's gradient rule
//! and accumulating parameter gradients into the [`ParamStore`] the
//! parameters were read from.
//!
//! Tapes are rebuilt for every forward pass. Parameters live outside the
//! tape; [`Tape::param`] snapshots a parameter's value as a leaf node.
//!
//! ```
//! use opticnet::autodiff::{ParamStore, Tape};
//! use opticnet::tensor::{Shape, Tensor};
//!
//! let mut store = ParamStore::<f64>::new();
//! let w = store.add("w", Tensor::full(Shape::vector(4), 3.0), true).unwrap();
//! let mut tape = Tape::new();
//! let wn = tape.param(&store, w);
//! let sq = tape.mul(wn, wn).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss, &mut store).unwrap();
//! assert!(store.get(w).grad.data().iter().all(|&g| g == 6.0));
//! ```

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::activation;
use crate::nn::conv::{self, ConvGeometry, Padding};
use crate::nn::dense;
use crate::nn::loss;
use crate::nn::norm::{self, BatchNormSaved, Mode};
use crate::nn::pool;
use crate::nn::resize;
use crate::tensor::{Float, Shape, Tensor};

/// A value with an attached gradient buffer of the same shape.
#[derive(Clone, Debug)]
pub struct Variable<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

impl<T: Float> Variable<T> {
    pub fn new(value: Tensor<T>, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Variable {
            value,
            grad,
            trainable,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named collection of every [`Variable`] in a model.
///
/// Paths are stable, `/`-separated layer paths (`stage1/block/unit2/c2/w`)
/// and double as checkpoint record names. Non-trainable entries hold
/// batch-norm running statistics.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<(String, Variable<T>)>,
    index: HashMap<String, ParamId>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(
        &mut self,
        path: impl Into<String>,
        value: Tensor<T>,
        trainable: bool,
    ) -> Result<ParamId> {
        let path = path.into();
        if self.index.contains_key(&path) {
            return Err(Error::config(format!("duplicate parameter path `{path}`")));
        }
        let id = ParamId(self.entries.len());
        self.index.insert(path.clone(), id);
        self.entries.push((path, Variable::new(value, trainable)));
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Variable<T> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Variable<T> {
        &mut self.entries[id.0].1
    }

    pub fn path(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn id(&self, path: &str) -> Option<ParamId> {
        self.index.get(path).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Variable<T>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (p, v))| (ParamId(i), p.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &str, &mut Variable<T>)> {
        self.entries
            .iter_mut()
            .enumerate()
            .map(|(i, (p, v))| (ParamId(i), p.as_str(), v))
    }

    pub fn zero_grad(&mut self) {
        for (_, v) in &mut self.entries {
            v.zero_grad();
        }
    }

    /// Element count over trainable entries.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|(_, v)| v.trainable)
            .map(|(_, v)| v.value.len())
            .sum()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<T> {
    Leaf(Option<ParamId>),
    Add {
        a: NodeId,
        b: NodeId,
        broadcast: bool,
    },
    Mul(NodeId, NodeId),
    Sum(NodeId),
    Conv {
        x: NodeId,
        w: NodeId,
        geom: ConvGeometry,
    },
    Depthwise {
        x: NodeId,
        w: NodeId,
        geom: ConvGeometry,
    },
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Resize(NodeId),
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        saved: BatchNormSaved<T>,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    GlobalAvgPool(NodeId),
    Dense {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    SoftmaxXent {
        logits: NodeId,
        probs: Tensor<T>,
        labels: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    track_kinks: bool,
    kink_margin: f64,
    pattern: std::hash::DefaultHasher,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            track_kinks: false,
            kink_margin: f64::INFINITY,
            pattern: std::hash::DefaultHasher::new(),
        }
    }

    /// Records the distance of ReLU inputs and max-pool windows to their
    /// non-differentiable points; see [`Tape::kink_margin`].
    pub fn with_kink_tracking() -> Self {
        Tape {
            track_kinks: true,
            ..Self::new()
        }
    }

    /// Smallest observed distance to a ReLU kink or a max-pool tie.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    /// Hash of every ReLU on/off mask and max-pool winner seen so far. Two
    /// forward passes with equal patterns lie on the same smooth piece.
    pub fn activation_pattern(&self) -> u64 {
        use std::hash::Hasher;
        self.pattern.finish()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    /// Gradient of the last backward pass w.r.t. a leaf node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[NodeId]) -> NodeId {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked (e.g. a network input under test).
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf(None),
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf(None),
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        let var = store.get(id);
        self.nodes.push(Node {
            value: var.value.clone(),
            op: Op::Leaf(Some(id)),
            requires_grad: var.trainable,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Elementwise sum. `b` may have batch size 1 and is then broadcast.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let broadcast = sa != sb;
        if broadcast && !(sb.n == 1 && (sb.h, sb.w, sb.c) == (sa.h, sa.w, sa.c)) {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: sa,
                right: sb,
            });
        }
        let mut out = self.value(a).clone();
        let bd = self.value(b).data();
        for chunk in out.data_mut().chunks_exact_mut(bd.len()) {
            for (o, &v) in chunk.iter_mut().zip(bd) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::Add { a, b, broadcast }, &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self
            .value(a)
            .zip_map(self.value(b), |x, y| x * y)
            .map_err(|_| Error::ShapeMismatch {
                op: "mul",
                left: self.shape(a),
                right: self.shape(b),
            })?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Sum of all elements as a `(1,1,1,1)` scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Dense convolution; `w` is `(kh, kw, in, out)`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        dilation: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let ws = self.shape(w);
        let geom = ConvGeometry::new(self.shape(x), ws.n, ws.h, stride, dilation, padding, ws.c)?;
        let out = conv::conv2d_forward(self.value(x), self.value(w), &geom)?;
        Ok(self.push(out, Op::Conv { x, w, geom }, &[x, w]))
    }

    /// Depthwise convolution; `w` is `(kh, kw, in, 1)`.
    pub fn depthwise_conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        dilation: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let geom = ConvGeometry::new(xs, ws.n, ws.h, stride, dilation, padding, xs.c)?;
        let out = conv::depthwise_forward(self.value(x), self.value(w), &geom)?;
        Ok(self.push(out, Op::Depthwise { x, w, geom }, &[x, w]))
    }

    pub fn max_pool2d(&mut self, x: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let res = pool::max_pool_forward(self.value(x), window, stride)?;
        if self.track_kinks {
            use std::hash::Hash;
            self.kink_margin = self.kink_margin.min(res.min_margin);
            res.argmax.hash(&mut self.pattern);
        }
        Ok(self.push(
            res.output,
            Op::MaxPool {
                x,
                argmax: res.argmax,
            },
            &[x],
        ))
    }

    /// Bilinear upsampling to `(out_h, out_w)`, which must not be smaller
    /// than the input.
    pub fn bilinear_upsample(&mut self, x: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let s = self.shape(x);
        if out_h == 0 || out_w == 0 {
            return Err(Error::contract(
                "bilinear_upsample target dims must be positive",
            ));
        }
        if out_h < s.h || out_w < s.w {
            return Err(Error::contract(format!(
                "bilinear_upsample target {out_h}x{out_w} smaller than input {s}"
            )));
        }
        let out = resize::bilinear_resize(self.value(x), out_h, out_w)?;
        Ok(self.push(out, Op::Resize(x), &[x]))
    }

    /// Batch normalization. Returns the output node together with the
    /// statistics used; train-mode callers fold those into running stats.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: Option<(&Tensor<T>, &Tensor<T>)>,
        epsilon: f64,
        mode: Mode,
    ) -> Result<(NodeId, BatchNormSaved<T>)> {
        let (out, saved) = norm::batch_norm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running,
            epsilon,
            mode,
        )?;
        let stats = saved.clone();
        Ok((
            self.push(
                out,
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    saved,
                },
                &[x, gamma, beta],
            ),
            stats,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        if self.track_kinks {
            use std::hash::Hash;
            self.kink_margin = self
                .kink_margin
                .min(activation::kink_distance(self.value(x)));
            for v in self.nodes[x.0].value.data() {
                (*v > T::zero()).hash(&mut self.pattern);
            }
        }
        let out = activation::relu_forward(self.value(x));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = activation::sigmoid_forward(self.value(x));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let out = pool::global_avg_pool_forward(self.value(x));
        self.push(out, Op::GlobalAvgPool(x), &[x])
    }

    /// Affine map over the flattened per-sample features.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let out = dense::dense_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let parents: Vec<NodeId> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::Dense { x, w, b }, &parents))
    }

    /// Mean softmax cross-entropy of `logits` against `labels`, as a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (value, probs) = loss::softmax_cross_entropy(self.value(logits), labels)?;
        let op = Op::SoftmaxXent {
            logits,
            probs,
            labels: labels.to_vec(),
        };
        Ok(self.push(Tensor::scalar(value), op, &[logits]))
    }

    /// Back-propagates from the scalar `loss`, adding `∂loss/∂W` into the
    /// gradient buffer of every trainable parameter read on this tape.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore<T>) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract("loss node does not belong to this tape"));
        }
        if self.shape(loss) != Shape::SCALAR {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = (if matches!(node.op, Op::Leaf(_)) {
                grads[i].as_ref().cloned()
            } else {
                grads[i].take()
            }) else {
                continue;
            };
            let wants = |id: NodeId| self.nodes[id.0].requires_grad;
            let mut emit = |id: NodeId, t: Tensor<T>| accumulate(&mut grads, id, t);
            match &node.op {
                Op::Leaf(Some(pid)) => {
                    let var = store.get_mut(*pid);
                    if var.trainable {
                        var.grad.add_assign(&g);
                    }
                }
                Op::Leaf(None) => {}
                Op::Add { a, b, broadcast } => {
                    if wants(*b) {
                        if *broadcast {
                            let sb = self.shape(*b);
                            let mut gb = Tensor::zeros(sb);
                            for chunk in g.data().chunks_exact(sb.numel()) {
                                for (o, &v) in gb.data_mut().iter_mut().zip(chunk) {
                                    *o += v;
                                }
                            }
                            emit(*b, gb);
                        } else {
                            emit(*b, g.clone());
                        }
                    }
                    if wants(*a) {
                        emit(*a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        emit(*a, g.zip_map(self.value(*b), |u, v| u * v)?);
                    }
                    if wants(*b) {
                        emit(*b, g.zip_map(self.value(*a), |u, v| u * v)?);
                    }
                }
                Op::Sum(a) => {
                    emit(*a, Tensor::full(self.shape(*a), g.data()[0]));
                }
                Op::Conv { x, w, geom } => {
                    let (dx, dw) = conv::conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        &g,
                        geom,
                        wants(*x),
                        wants(*w),
                    );
                    if let Some(dx) = dx {
                        emit(*x, dx);
                    }
                    if let Some(dw) = dw {
                        emit(*w, dw);
                    }
                }
                Op::Depthwise { x, w, geom } => {
                    let (dx, dw) = conv::depthwise_backward(
                        self.value(*x),
                        self.value(*w),
                        &g,
                        geom,
                        wants(*x),
                        wants(*w),
                    );
                    if let Some(dx) = dx {
                        emit(*x, dx);
                    }
                    if let Some(dw) = dw {
                        emit(*w, dw);
                    }
                }
                Op::MaxPool { x, argmax } => {
                    emit(*x, pool::max_pool_backward(self.shape(*x), argmax, &g));
                }
                Op::Resize(x) => {
                    emit(*x, resize::bilinear_resize_backward(self.shape(*x), &g));
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    saved,
                } => {
                    let (dx, dgamma, dbeta) =
                        norm::batch_norm_backward(self.value(*x), self.value(*gamma), &g, saved);
                    if wants(*x) {
                        emit(*x, dx);
                    }
                    if wants(*gamma) {
                        emit(*gamma, dgamma);
                    }
                    if wants(*beta) {
                        emit(*beta, dbeta);
                    }
                }
                Op::Relu(x) => {
                    emit(*x, activation::relu_backward(self.value(*x), &g));
                }
                Op::Sigmoid(x) => {
                    emit(*x, activation::sigmoid_backward(&node.value, &g));
                }
                Op::GlobalAvgPool(x) => {
                    emit(*x, pool::global_avg_pool_backward(self.shape(*x), &g));
                }
                Op::Dense { x, w, b } => {
                    let (dx, dw, db) = dense::dense_backward(self.value(*x), self.value(*w), &g);
                    if wants(*x) {
                        emit(*x, dx.reshape(self.shape(*x))?);
                    }
                    if wants(*w) {
                        emit(*w, dw);
                    }
                    if let Some(b) = b.filter(|b| wants(*b)) {
                        emit(b, db);
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    probs,
                    labels,
                } => {
                    emit(
                        *logits,
                        loss::softmax_cross_entropy_backward(probs, labels, g.data()[0]),
                    );
                }
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf(_)) {
                grads[i] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }
}

fn accumulate<T: Float>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
