use crate::error::{Error, Result};
use crate::tensor::{Float, Shape, Tensor};

/// Result of a max-pool forward pass.
pub struct MaxPoolOutput<T> {
    pub output: Tensor<T>,
    /// Flat input index of the winning element for every output element.
    pub argmax: Vec<usize>,
    /// Smallest gap between a window's maximum and its runner-up.
    pub min_margin: f64,
}

/// Valid-padding max pooling. Ties resolve to the first element in
/// row-major window order.
pub fn max_pool_forward<T: Float>(
    x: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<MaxPoolOutput<T>> {
    let s = x.shape();
    if window == 0 || stride == 0 {
        return Err(Error::contract(
            "max_pool2d window and stride must be positive",
        ));
    }
    if s.h < window || s.w < window {
        return Err(Error::dim(
            "max_pool2d",
            format!("window {window} larger than input {s}"),
        ));
    }
    let out = Shape::new(
        s.n,
        (s.h - window) / stride + 1,
        (s.w - window) / stride + 1,
        s.c,
    );
    let mut y = Tensor::zeros(out);
    let mut argmax = vec![0usize; out.numel()];
    let mut min_margin = f64::INFINITY;
    let xd = x.data();
    for n in 0..s.n {
        for oh in 0..out.h {
            for ow in 0..out.w {
                for c in 0..s.c {
                    let mut best = s.index(n, oh * stride, ow * stride, c);
                    let mut second = f64::NEG_INFINITY;
                    for i in 0..window {
                        for j in 0..window {
                            if i == 0 && j == 0 {
                                continue;
                            }
                            let idx = s.index(n, oh * stride + i, ow * stride + j, c);
                            if xd[idx] > xd[best] {
                                second = second.max(xd[best].as_f64());
                                best = idx;
                            } else {
                                second = second.max(xd[idx].as_f64());
                            }
                        }
                    }
                    if window > 1 {
                        min_margin = min_margin.min(xd[best].as_f64() - second);
                    }
                    let o = out.index(n, oh, ow, c);
                    y.data_mut()[o] = xd[best];
                    argmax[o] = best;
                }
            }
        }
    }
    Ok(MaxPoolOutput {
        output: y,
        argmax,
        min_margin,
    })
}

/// Routes each upstream gradient to its window's argmax.
pub fn max_pool_backward<T: Float>(input: Shape, argmax: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input);
    let dxd = dx.data_mut();
    for (&src, &g) in argmax.iter().zip(dy.data()) {
        dxd[src] += g;
    }
    dx
}

/// Spatial mean, `(n, h, w, c) -> (n, 1, 1, c)`.
pub fn global_avg_pool_forward<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let mut y = Tensor::zeros(Shape::new(s.n, 1, 1, s.c));
    let scale = T::one() / T::of((s.h * s.w) as f64);
    for n in 0..s.n {
        let out = &mut y.data_mut()[n * s.c..(n + 1) * s.c];
        for px in x.data()[n * s.features()..(n + 1) * s.features()].chunks_exact(s.c) {
            for (o, &v) in out.iter_mut().zip(px) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o *= scale);
    }
    y
}

pub fn global_avg_pool_backward<T: Float>(input: Shape, dy: &Tensor<T>) -> Tensor<T> {
    let scale = T::one() / T::of((input.h * input.w) as f64);
    let mut dx = Tensor::zeros(input);
    let c = input.c;
    for (i, px) in dx.data_mut().chunks_exact_mut(c).enumerate() {
        let n = i / (input.h * input.w);
        for (d, &g) in px.iter_mut().zip(&dy.data()[n * c..(n + 1) * c]) {
            *d = g * scale;
        }
    }
    dx
}
