//! The three structural blocks of Optic-Net.
//!
//! * [`ResidualUnit`]: `X + C₄(C₂(C₁X) + C₃(C₁X))`, where `C₂` is a 2×2
//!   dilation-2 atrous convolution and `C₃` a 2×2 dilation-2 atrous
//!   separable convolution running in parallel on the output of `C₁`.
//! * [`ResidualConvUnit`]: bottleneck with a 1×1 projection shortcut, used
//!   where width or resolution changes.
//! * [`BuildingBlock`]: a stack of residual units (`α`) alongside the
//!   max-pool → bilinear upsample → sigmoid exhaustion path (`β`), merged
//!   as `τ = α + β + α⊙β`.

use rand::Rng;

use crate::autodiff::{NodeId, ParamStore};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, ConvSpec, Forward, LayerRow};
use crate::tensor::{Float, Shape, Tensor};

use super::config::{ResConvConfig, ResidualUnitConfig, StageConfig, StridePlacement};

/// Exhaustion pooling window and stride.
pub const EXHAUSTION_POOL: usize = 2;

#[derive(Clone, Debug)]
pub struct ResidualUnit {
    pub cfg: ResidualUnitConfig,
    bn_a: BatchNorm,
    pub c1: Conv2d,
    bn_b: BatchNorm,
    pub c2: Conv2d,
    pub c3: Conv2d,
    bn_c: BatchNorm,
    pub c4: Conv2d,
}

impl ResidualUnit {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        cfg: ResidualUnitConfig,
        in_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if in_channels != cfg.w4 {
            return Err(Error::config(format!(
                "{path}: identity skip needs input width {in_channels} == C4 width {}",
                cfg.w4
            )));
        }
        let (k, r) = (cfg.kernel, cfg.dilation);
        // Pre-activation normalizes each conv's input, post-activation its output.
        let (bn_a_c, bn_b_c, bn_c_c) = if cfg.pre_activation {
            (cfg.w4, cfg.w1, cfg.w_branch)
        } else {
            (cfg.w1, cfg.w_branch, cfg.w4)
        };
        Ok(ResidualUnit {
            cfg,
            bn_a: BatchNorm::new(store, &format!("{path}/bn_a"), bn_a_c)?,
            c1: Conv2d::new(
                store,
                &format!("{path}/c1"),
                ConvSpec::regular(1, cfg.w4, cfg.w1),
                rng,
            )?,
            bn_b: BatchNorm::new(store, &format!("{path}/bn_b"), bn_b_c)?,
            c2: Conv2d::new(
                store,
                &format!("{path}/c2"),
                ConvSpec::atrous(k, r, cfg.w1, cfg.w_branch),
                rng,
            )?,
            c3: Conv2d::new(
                store,
                &format!("{path}/c3"),
                ConvSpec::atrous_separable(k, r, cfg.w1, cfg.w_branch),
                rng,
            )?,
            bn_c: BatchNorm::new(store, &format!("{path}/bn_c"), bn_c_c)?,
            c4: Conv2d::new(
                store,
                &format!("{path}/c4"),
                ConvSpec::regular(1, cfg.w_branch, cfg.w4),
                rng,
            )?,
        })
    }

    /// The residual `F̂(X, W)` without the skip.
    pub fn residual<T: Float>(&self, f: &mut Forward<'_, T>, x: NodeId) -> Result<NodeId> {
        if self.cfg.pre_activation {
            let h = self.bn_a.forward(f, x)?;
            let h = f.tape.relu(h);
            let h = self.c1.forward(f, h)?;
            let h = self.bn_b.forward(f, h)?;
            let h = f.tape.relu(h);
            let left = self.c2.forward(f, h)?;
            let right = self.c3.forward(f, h)?;
            let m = f.tape.add(left, right)?;
            let m = self.bn_c.forward(f, m)?;
            let m = f.tape.relu(m);
            self.c4.forward(f, m)
        } else {
            let h = self.c1.forward(f, x)?;
            let h = self.bn_a.forward(f, h)?;
            let h = f.tape.relu(h);
            let left = self.c2.forward(f, h)?;
            let right = self.c3.forward(f, h)?;
            let m = f.tape.add(left, right)?;
            let m = self.bn_b.forward(f, m)?;
            let m = f.tape.relu(m);
            let o = self.c4.forward(f, m)?;
            self.bn_c.forward(f, o)
        }
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: NodeId) -> Result<NodeId> {
        let r = self.residual(f, x)?;
        f.tape.add(x, r)
    }

    /// Weights of the parallel middle section (`C₂` + `C₃`).
    pub fn middle_weight_count(&self) -> u64 {
        self.c2.weight_count() + self.c3.weight_count()
    }

    pub fn trace(&self, input: Shape, rows: &mut Vec<LayerRow>) -> Result<Shape> {
        if input.c != self.cfg.w4 {
            return Err(Error::config(format!(
                "residual unit expects {} channels, got {input}",
                self.cfg.w4
            )));
        }
        let (a, b, c) = (&self.bn_a, &self.bn_b, &self.bn_c);
        let mid;
        if self.cfg.pre_activation {
            a.trace(input, rows)?;
            let h = self.c1.trace(input, rows)?;
            b.trace(h, rows)?;
            mid = self.c2.trace(h, rows)?;
            let m3 = self.c3.trace(h, rows)?;
            debug_assert_eq!(mid, m3);
            c.trace(mid, rows)?;
        } else {
            let h = self.c1.trace(input, rows)?;
            a.trace(h, rows)?;
            mid = self.c2.trace(h, rows)?;
            self.c3.trace(h, rows)?;
            b.trace(mid, rows)?;
        }
        let out = self.c4.trace(mid, rows)?;
        if !self.cfg.pre_activation {
            c.trace(out, rows)?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct ResidualConvUnit {
    pub cfg: ResConvConfig,
    pub in_channels: usize,
    bn0: BatchNorm,
    pub conv1: Conv2d,
    bn1: BatchNorm,
    pub conv2: Conv2d,
    bn2: BatchNorm,
    pub conv3: Conv2d,
    pub projection: Conv2d,
}

impl ResidualConvUnit {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        cfg: ResConvConfig,
        in_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let [a, b, out] = cfg.widths;
        if cfg.widths.contains(&0) || cfg.mid_kernel == 0 || in_channels == 0 {
            return Err(Error::config(format!(
                "{path}: widths and kernel must be positive"
            )));
        }
        let stride = if cfg.downsample { 2 } else { 1 };
        let (s3, sp) = match cfg.stride_placement {
            StridePlacement::FinalConv => (stride, stride),
        };
        Ok(ResidualConvUnit {
            cfg,
            in_channels,
            bn0: BatchNorm::new(store, &format!("{path}/bn0"), in_channels)?,
            conv1: Conv2d::new(
                store,
                &format!("{path}/conv1"),
                ConvSpec::regular(1, in_channels, a),
                rng,
            )?,
            bn1: BatchNorm::new(store, &format!("{path}/bn1"), a)?,
            conv2: Conv2d::new(
                store,
                &format!("{path}/conv2"),
                ConvSpec::regular(cfg.mid_kernel, a, b),
                rng,
            )?,
            bn2: BatchNorm::new(store, &format!("{path}/bn2"), b)?,
            conv3: Conv2d::new(
                store,
                &format!("{path}/conv3"),
                ConvSpec::regular(1, b, out).with_stride(s3),
                rng,
            )?,
            projection: Conv2d::new(
                store,
                &format!("{path}/proj"),
                ConvSpec::regular(1, in_channels, out).with_stride(sp),
                rng,
            )?,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: NodeId) -> Result<NodeId> {
        let pre = self.bn0.forward(f, x)?;
        let pre = f.tape.relu(pre);
        let h = self.conv1.forward(f, pre)?;
        let h = self.bn1.forward(f, h)?;
        let h = f.tape.relu(h);
        let h = self.conv2.forward(f, h)?;
        let h = self.bn2.forward(f, h)?;
        let h = f.tape.relu(h);
        let main = self.conv3.forward(f, h)?;
        let short = self.projection.forward(f, pre)?;
        f.tape.add(main, short)
    }

    pub fn trace(&self, input: Shape, rows: &mut Vec<LayerRow>) -> Result<Shape> {
        self.bn0.trace(input, rows)?;
        let h = self.conv1.trace(input, rows)?;
        self.bn1.trace(h, rows)?;
        let h = self.conv2.trace(h, rows)?;
        self.bn2.trace(h, rows)?;
        let main = self.conv3.trace(h, rows)?;
        let short = self.projection.trace(input, rows)?;
        if main != short {
            return Err(Error::ShapeMismatch {
                op: "residual conv unit",
                left: main,
                right: short,
            });
        }
        Ok(main)
    }
}

/// Forces one branch of a building block to zero, for probing the
/// signal-propagation identities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SignalProbe {
    #[default]
    None,
    ZeroAlpha,
    ZeroBeta,
}

/// Node handles of one building block's branch signals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockOutput {
    pub alpha: NodeId,
    pub beta: NodeId,
    pub tau: NodeId,
}

#[derive(Clone, Debug)]
pub struct BuildingBlock {
    pub units: Vec<ResidualUnit>,
}

impl BuildingBlock {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        stage: &StageConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if stage.repeats == 0 {
            return Err(Error::config(format!(
                "{path}: building block needs at least one residual unit"
            )));
        }
        let units = (0..stage.repeats)
            .map(|i| {
                ResidualUnit::new(
                    store,
                    &format!("{path}/unit{}", i + 1),
                    stage.unit,
                    stage.out_channels(),
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BuildingBlock { units })
    }

    /// `α(X)`: the input after every stacked residual unit.
    pub fn alpha<T: Float>(&self, f: &mut Forward<'_, T>, x: NodeId) -> Result<NodeId> {
        self.units.iter().try_fold(x, |h, unit| unit.forward(f, h))
    }

    /// `β(X) = σ(upsample(maxpool(X)))` at the input's spatial size.
    pub fn beta<T: Float>(&self, f: &mut Forward<'_, T>, x: NodeId) -> Result<NodeId> {
        let s = f.tape.shape(x);
        let pooled = f.tape.max_pool2d(x, EXHAUSTION_POOL, EXHAUSTION_POOL)?;
        let up = f.tape.bilinear_upsample(pooled, s.h, s.w)?;
        Ok(f.tape.sigmoid(up))
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: NodeId) -> Result<BlockOutput> {
        self.forward_probe(f, x, SignalProbe::None)
    }

    pub fn forward_probe<T: Float>(
        &self,
        f: &mut Forward<'_, T>,
        x: NodeId,
        probe: SignalProbe,
    ) -> Result<BlockOutput> {
        let shape = f.tape.shape(x);
        let alpha = match probe {
            SignalProbe::ZeroAlpha => f.tape.constant(Tensor::zeros(shape)),
            _ => self.alpha(f, x)?,
        };
        let beta = match probe {
            SignalProbe::ZeroBeta => f.tape.constant(Tensor::zeros(shape)),
            _ => self.beta(f, x)?,
        };
        let tau = propagate(f, alpha, beta)?;
        Ok(BlockOutput { alpha, beta, tau })
    }

    pub fn trace(&self, input: Shape, rows: &mut Vec<LayerRow>) -> Result<Shape> {
        let alpha = self.units.iter().try_fold(input, |s, u| u.trace(s, rows))?;
        if alpha != input {
            return Err(Error::ShapeMismatch {
                op: "building block",
                left: input,
                right: alpha,
            });
        }
        if input.h < EXHAUSTION_POOL || input.w < EXHAUSTION_POOL {
            return Err(Error::dim(
                "building block",
                format!("input {input} smaller than the exhaustion pool"),
            ));
        }
        Ok(input)
    }
}

/// `τ = α + β + α⊙β`.
pub fn propagate<T: Float>(f: &mut Forward<'_, T>, alpha: NodeId, beta: NodeId) -> Result<NodeId> {
    let (sa, sb) = (f.tape.shape(alpha), f.tape.shape(beta));
    if sa != sb {
        return Err(Error::ShapeMismatch {
            op: "signal propagation",
            left: sa,
            right: sb,
        });
    }
    let sum = f.tape.add(alpha, beta)?;
    let prod = f.tape.mul(alpha, beta)?;
    f.tape.add(sum, prod)
}

/// Blocks of one stage: residual conv unit followed by a building block.
#[derive(Clone, Debug)]
pub struct Stage {
    pub res_conv: ResidualConvUnit,
    pub block: BuildingBlock,
}

impl Stage {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        cfg: &StageConfig,
        in_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Stage {
            res_conv: ResidualConvUnit::new(
                store,
                &format!("{path}/resconv"),
                cfg.res_conv,
                in_channels,
                rng,
            )?,
            block: BuildingBlock::new(store, &format!("{path}/block"), cfg, rng)?,
        })
    }
}

/// Zeroes every convolution kernel of a residual unit.
pub fn zero_unit_weights<T: Float>(store: &mut ParamStore<T>, unit: &ResidualUnit) {
    for conv in [&unit.c1, &unit.c2, &unit.c3, &unit.c4] {
        for id in std::iter::once(conv.weight).chain(conv.pointwise) {
            store.get_mut(id).value.fill(T::zero());
        }
    }
}
