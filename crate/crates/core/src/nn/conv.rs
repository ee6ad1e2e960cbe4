//! Convolution kernels: dense (regular / atrous) and depthwise, forward and
//! backward. Separable variants are compositions of the two and live in
//! [`crate::nn::layers`].
//!
//! All kernels compute cross-correlation on channels-last tensors. Dense
//! kernels have shape `(kh, kw, in_c, out_c)`, depthwise kernels
//! `(kh, kw, in_c, 1)`.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{matmul, Float, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial size `ceil(in / stride)`; extra padding goes after.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Regular,
    Atrous,
    Depthwise,
    Separable,
    AtrousSeparable,
}

impl ConvKind {
    pub fn is_depthwise(self) -> bool {
        matches!(
            self,
            ConvKind::Depthwise | ConvKind::Separable | ConvKind::AtrousSeparable
        )
    }
}

impl fmt::Display for ConvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvKind::Regular => "regular",
            ConvKind::Atrous => "atrous",
            ConvKind::Depthwise => "depthwise",
            ConvKind::Separable => "separable",
            ConvKind::AtrousSeparable => "atrous-separable",
        })
    }
}

/// Declarative description of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub padding: Padding,
    pub kind: ConvKind,
}

impl ConvSpec {
    pub fn regular(f: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel: (f, f),
            stride: 1,
            dilation: 1,
            in_channels,
            out_channels,
            padding: Padding::Same,
            kind: ConvKind::Regular,
        }
    }

    pub fn atrous(f: usize, dilation: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            dilation,
            kind: ConvKind::Atrous,
            ..Self::regular(f, in_channels, out_channels)
        }
    }

    pub fn separable(f: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kind: ConvKind::Separable,
            ..Self::regular(f, in_channels, out_channels)
        }
    }

    pub fn atrous_separable(
        f: usize,
        dilation: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        ConvSpec {
            dilation,
            kind: ConvKind::AtrousSeparable,
            ..Self::regular(f, in_channels, out_channels)
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    /// `(f - 1) * r + 1` per axis.
    pub fn receptive_field(&self) -> (usize, usize) {
        (
            (self.kernel.0 - 1) * self.dilation + 1,
            (self.kernel.1 - 1) * self.dilation + 1,
        )
    }

    /// Weight shape of the main kernel: `(kh, kw, in, out)` for dense kinds,
    /// `(kh, kw, in, 1)` for the depthwise stage of depthwise kinds.
    pub fn weight_shape(&self) -> Shape {
        let out = if self.kind.is_depthwise() {
            1
        } else {
            self.out_channels
        };
        Shape::new(self.kernel.0, self.kernel.1, self.in_channels, out)
    }

    /// Pointwise stage shape `(1, 1, in, out)` for separable kinds.
    pub fn pointwise_shape(&self) -> Option<Shape> {
        matches!(self.kind, ConvKind::Separable | ConvKind::AtrousSeparable)
            .then(|| Shape::new(1, 1, self.in_channels, self.out_channels))
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if kh == 0 || kw == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(Error::contract(format!(
                "kernel, stride and dilation must be positive: {self:?}"
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::contract(format!(
                "channel counts must be positive: {self:?}"
            )));
        }
        if self.kind == ConvKind::Depthwise && self.in_channels != self.out_channels {
            return Err(Error::contract(
                "depthwise convolution preserves channel count",
            ));
        }
        Ok(())
    }
}

/// Resolved spatial geometry of one convolution application.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: Shape,
    pub output: Shape,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn axis(
    len: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    padding: Padding,
) -> Option<(usize, usize)> {
    let eff = (k - 1) * dilation + 1;
    match padding {
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + eff).saturating_sub(len);
            Some((out, total / 2))
        }
        Padding::Valid => (len >= eff).then(|| ((len - eff) / stride + 1, 0)),
    }
}

impl ConvGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        input: Shape,
        kh: usize,
        kw: usize,
        stride: usize,
        dilation: usize,
        padding: Padding,
        out_channels: usize,
    ) -> Result<Self> {
        if kh == 0 || kw == 0 || stride == 0 || dilation == 0 {
            return Err(Error::contract(
                "kernel, stride and dilation must be positive",
            ));
        }
        let too_small = || {
            Error::dim(
                "conv2d",
                format!(
                    "input {input} smaller than receptive field of {kh}x{kw} dilation {dilation}"
                ),
            )
        };
        let (oh, pad_top) = axis(input.h, kh, stride, dilation, padding).ok_or_else(too_small)?;
        let (ow, pad_left) = axis(input.w, kw, stride, dilation, padding).ok_or_else(too_small)?;
        Ok(ConvGeometry {
            input,
            output: Shape::new(input.n, oh, ow, out_channels),
            kh,
            kw,
            stride,
            dilation,
            pad_top,
            pad_left,
        })
    }

    /// Input row touched by output row `o` and kernel row `k`, if in bounds.
    #[inline]
    fn src_row(&self, o: usize, k: usize) -> Option<usize> {
        let r = (o * self.stride + k * self.dilation) as isize - self.pad_top as isize;
        (r >= 0 && (r as usize) < self.input.h).then_some(r as usize)
    }

    #[inline]
    fn src_col(&self, o: usize, k: usize) -> Option<usize> {
        let c = (o * self.stride + k * self.dilation) as isize - self.pad_left as isize;
        (c >= 0 && (c as usize) < self.input.w).then_some(c as usize)
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    /// Multiply-accumulate count of a dense convolution with this geometry.
    pub fn dense_macs(&self) -> u64 {
        (self.output.numel() * self.kh * self.kw * self.input.c) as u64
    }
}

/// Unfolds sample `n` into a `(oh*ow) × (kh*kw*c)` patch matrix.
fn im2col<T: Float>(x: &Tensor<T>, n: usize, g: &ConvGeometry, cols: &mut [T]) {
    let c = g.input.c;
    let row_len = g.kh * g.kw * c;
    let xd = x.data();
    for oh in 0..g.output.h {
        for ow in 0..g.output.w {
            let row = &mut cols[(oh * g.output.w + ow) * row_len..][..row_len];
            for ki in 0..g.kh {
                let ih = g.src_row(oh, ki);
                for kj in 0..g.kw {
                    let dst = &mut row[(ki * g.kw + kj) * c..][..c];
                    match (ih, g.src_col(ow, kj)) {
                        (Some(ih), Some(iw)) => {
                            let src = g.input.index(n, ih, iw, 0);
                            dst.copy_from_slice(&xd[src..src + c]);
                        }
                        _ => dst.fill(T::zero()),
                    }
                }
            }
        }
    }
}

/// Folds a patch-gradient matrix back onto sample `n` of `dx`, accumulating.
fn col2im<T: Float>(cols: &[T], n: usize, g: &ConvGeometry, dx: &mut Tensor<T>) {
    let c = g.input.c;
    let row_len = g.kh * g.kw * c;
    let dxd = dx.data_mut();
    for oh in 0..g.output.h {
        for ow in 0..g.output.w {
            let row = &cols[(oh * g.output.w + ow) * row_len..][..row_len];
            for ki in 0..g.kh {
                let Some(ih) = g.src_row(oh, ki) else {
                    continue;
                };
                for kj in 0..g.kw {
                    let Some(iw) = g.src_col(ow, kj) else {
                        continue;
                    };
                    let src = &row[(ki * g.kw + kj) * c..][..c];
                    let dst = g.input.index(n, ih, iw, 0);
                    for (d, &s) in dxd[dst..dst + c].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn check_dense_weight(x: Shape, w: Shape) -> Result<()> {
    if w.w != x.c {
        return Err(Error::dim(
            "conv2d",
            format!(
                "kernel {w} expects {} input channels but input {x} has {}",
                w.w, x.c
            ),
        ));
    }
    Ok(())
}

/// Dense (regular or dilated) convolution.
pub fn conv2d_forward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &ConvGeometry,
) -> Result<Tensor<T>> {
    check_dense_weight(x.shape(), w.shape())?;
    let out_c = w.shape().c;
    let mut y = Tensor::zeros(g.output);
    let k = g.kh * g.kw * g.input.c;
    let pixels = g.output.h * g.output.w;
    if g.is_pointwise() {
        matmul(
            x.data(),
            false,
            w.data(),
            false,
            y.data_mut(),
            g.input.n * pixels,
            k,
            out_c,
            false,
        );
        return Ok(y);
    }
    let mut cols = vec![T::zero(); pixels * k];
    for n in 0..g.input.n {
        im2col(x, n, g, &mut cols);
        let out = &mut y.data_mut()[n * pixels * out_c..][..pixels * out_c];
        matmul(&cols, false, w.data(), false, out, pixels, k, out_c, false);
    }
    Ok(y)
}

/// Gradients of [`conv2d_forward`] w.r.t. input and kernel.
pub fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    g: &ConvGeometry,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let out_c = w.shape().c;
    let k = g.kh * g.kw * g.input.c;
    let pixels = g.output.h * g.output.w;
    let mut dx = want_dx.then(|| Tensor::zeros(g.input));
    let mut dw = want_dw.then(|| Tensor::zeros(w.shape()));
    if g.is_pointwise() {
        let m = g.input.n * pixels;
        if let Some(dx) = dx.as_mut() {
            matmul(
                dy.data(),
                false,
                w.data(),
                true,
                dx.data_mut(),
                m,
                out_c,
                k,
                false,
            );
        }
        if let Some(dw) = dw.as_mut() {
            matmul(
                x.data(),
                true,
                dy.data(),
                false,
                dw.data_mut(),
                k,
                m,
                out_c,
                false,
            );
        }
        return (dx, dw);
    }
    let mut cols = vec![T::zero(); pixels * k];
    for n in 0..g.input.n {
        let dy_n = &dy.data()[n * pixels * out_c..][..pixels * out_c];
        if let Some(dw) = dw.as_mut() {
            im2col(x, n, g, &mut cols);
            matmul(
                &cols,
                true,
                dy_n,
                false,
                dw.data_mut(),
                k,
                pixels,
                out_c,
                true,
            );
        }
        if let Some(dx) = dx.as_mut() {
            matmul(
                dy_n,
                false,
                w.data(),
                true,
                &mut cols,
                pixels,
                out_c,
                k,
                false,
            );
            col2im(&cols, n, g, dx);
        }
    }
    (dx, dw)
}

fn check_depthwise_weight(x: Shape, w: Shape) -> Result<()> {
    if w.w != x.c || w.c != 1 {
        return Err(Error::dim(
            "depthwise_conv2d",
            format!("kernel {w} must be (kh,kw,{},1) for input {x}", x.c),
        ));
    }
    Ok(())
}

/// Per-channel spatial convolution; channel count is preserved.
pub fn depthwise_forward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &ConvGeometry,
) -> Result<Tensor<T>> {
    check_depthwise_weight(x.shape(), w.shape())?;
    let c = g.input.c;
    let mut y = Tensor::zeros(g.output);
    let (xd, wd) = (x.data(), w.data());
    let yd = y.data_mut();
    for n in 0..g.input.n {
        for oh in 0..g.output.h {
            for ow in 0..g.output.w {
                let dst = g.output.index(n, oh, ow, 0);
                let out = &mut yd[dst..dst + c];
                for ki in 0..g.kh {
                    let Some(ih) = g.src_row(oh, ki) else {
                        continue;
                    };
                    for kj in 0..g.kw {
                        let Some(iw) = g.src_col(ow, kj) else {
                            continue;
                        };
                        let src = &xd[g.input.index(n, ih, iw, 0)..][..c];
                        let taps = &wd[(ki * g.kw + kj) * c..][..c];
                        for ((o, &xv), &wv) in out.iter_mut().zip(src).zip(taps) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

pub fn depthwise_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    g: &ConvGeometry,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let c = g.input.c;
    let mut dx = want_dx.then(|| Tensor::zeros(g.input));
    let mut dw = want_dw.then(|| Tensor::zeros(w.shape()));
    let (xd, wd, dyd) = (x.data(), w.data(), dy.data());
    for n in 0..g.input.n {
        for oh in 0..g.output.h {
            for ow in 0..g.output.w {
                let up = &dyd[g.output.index(n, oh, ow, 0)..][..c];
                for ki in 0..g.kh {
                    let Some(ih) = g.src_row(oh, ki) else {
                        continue;
                    };
                    for kj in 0..g.kw {
                        let Some(iw) = g.src_col(ow, kj) else {
                            continue;
                        };
                        let src = g.input.index(n, ih, iw, 0);
                        let tap = (ki * g.kw + kj) * c;
                        if let Some(dx) = dx.as_mut() {
                            let taps = &wd[tap..tap + c];
                            for ((d, &u), &wv) in
                                dx.data_mut()[src..src + c].iter_mut().zip(up).zip(taps)
                            {
                                *d += u * wv;
                            }
                        }
                        if let Some(dw) = dw.as_mut() {
                            let xs = &xd[src..src + c];
                            for ((d, &u), &xv) in
                                dw.data_mut()[tap..tap + c].iter_mut().zip(up).zip(xs)
                            {
                                *d += u * xv;
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}
