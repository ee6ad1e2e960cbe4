//! Batch normalization over `(n, h, w)` per channel.

use crate::error::{Error, Result};
use crate::tensor::{Float, Shape, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Statistics a forward pass normalized with; kept for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormSaved<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    /// Biased batch variance (train mode only; empty in inference).
    pub batch_var: Vec<T>,
    pub mode: Mode,
}

fn check<T: Float>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::contract(format!(
            "batch_norm epsilon must be > 0, got {epsilon}"
        )));
    }
    let c = x.shape().c;
    for p in [gamma, beta] {
        if p.shape() != Shape::vector(c) {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                left: x.shape(),
                right: p.shape(),
            });
        }
    }
    Ok(())
}

/// Normalizes with batch statistics (`Mode::Train`) or with the supplied
/// running statistics (`Mode::Infer`).
pub fn batch_norm_forward<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: Option<(&Tensor<T>, &Tensor<T>)>,
    epsilon: f64,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormSaved<T>)> {
    check(x, gamma, beta, epsilon)?;
    let c = x.shape().c;
    let eps = T::of(epsilon);
    let (mean, var, batch_var) = match mode {
        Mode::Train => {
            let count = T::of((x.len() / c) as f64);
            let mut mean = vec![T::zero(); c];
            for px in x.data().chunks_exact(c) {
                for (m, &v) in mean.iter_mut().zip(px) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m = *m / count);
            let mut var = vec![T::zero(); c];
            for px in x.data().chunks_exact(c) {
                for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
                    let d = v - m;
                    *s += d * d;
                }
            }
            var.iter_mut().for_each(|s| *s = *s / count);
            (mean, var.clone(), var)
        }
        Mode::Infer => {
            let (rm, rv) = running
                .ok_or_else(|| Error::contract("inference batch_norm needs running statistics"))?;
            if rm.shape() != Shape::vector(c) || rv.shape() != Shape::vector(c) {
                return Err(Error::ShapeMismatch {
                    op: "batch_norm",
                    left: x.shape(),
                    right: rm.shape(),
                });
            }
            (rm.data().to_vec(), rv.data().to_vec(), Vec::new())
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut y = Tensor::zeros(x.shape());
    let (g, b) = (gamma.data(), beta.data());
    for (out, px) in y
        .data_mut()
        .chunks_exact_mut(c)
        .zip(x.data().chunks_exact(c))
    {
        for k in 0..c {
            out[k] = (px[k] - mean[k]) * inv_std[k] * g[k] + b[k];
        }
    }
    Ok((
        y,
        BatchNormSaved {
            mean,
            inv_std,
            batch_var,
            mode,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
    saved: &BatchNormSaved<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = x.shape().c;
    let (mean, inv_std) = (&saved.mean, &saved.inv_std);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (px, g) in x.data().chunks_exact(c).zip(dy.data().chunks_exact(c)) {
        for k in 0..c {
            let xhat = (px[k] - mean[k]) * inv_std[k];
            dgamma[k] += g[k] * xhat;
            dbeta[k] += g[k];
        }
    }
    let gd = gamma.data();
    let mut dx = Tensor::zeros(x.shape());
    match saved.mode {
        Mode::Infer => {
            for (out, g) in dx
                .data_mut()
                .chunks_exact_mut(c)
                .zip(dy.data().chunks_exact(c))
            {
                for k in 0..c {
                    out[k] = g[k] * gd[k] * inv_std[k];
                }
            }
        }
        Mode::Train => {
            // dx = gamma * inv_std / M * (M*dy - sum(dy) - xhat * sum(dy*xhat))
            let m = T::of((x.len() / c) as f64);
            for ((out, px), g) in dx
                .data_mut()
                .chunks_exact_mut(c)
                .zip(x.data().chunks_exact(c))
                .zip(dy.data().chunks_exact(c))
            {
                for k in 0..c {
                    let xhat = (px[k] - mean[k]) * inv_std[k];
                    out[k] = gd[k] * inv_std[k] / m * (m * g[k] - dbeta[k] - xhat * dgamma[k]);
                }
            }
        }
    }
    let shape = Shape::vector(c);
    (
        dx,
        Tensor::from_vec(shape, dgamma).expect("vector shape"),
        Tensor::from_vec(shape, dbeta).expect("vector shape"),
    )
}
