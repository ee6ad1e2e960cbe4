//! Bilinear interpolation with half-pixel centers (align-corners false).

use crate::error::{Error, Result};
use crate::tensor::{Float, Shape, Tensor};

/// Source taps for one output coordinate: `(lo, hi, frac)`, value is
/// `(1 - frac) * x[lo] + frac * x[hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

pub fn axis_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Resizes spatial dims to `(out_h, out_w)`, any scale.
pub fn bilinear_resize<T: Float>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::contract("bilinear target dims must be positive"));
    }
    let s = x.shape();
    let ys = axis_taps(s.h, out_h);
    let xs = axis_taps(s.w, out_w);
    let out = Shape::new(s.n, out_h, out_w, s.c);
    let mut y = Tensor::zeros(out);
    let xd = x.data();
    let c = s.c;
    for n in 0..s.n {
        for (oh, ty) in ys.iter().enumerate() {
            let fy = T::of(ty.frac);
            for (ow, tx) in xs.iter().enumerate() {
                let fx = T::of(tx.frac);
                let a = &xd[s.index(n, ty.lo, tx.lo, 0)..][..c];
                let b = &xd[s.index(n, ty.lo, tx.hi, 0)..][..c];
                let cc = &xd[s.index(n, ty.hi, tx.lo, 0)..][..c];
                let d = &xd[s.index(n, ty.hi, tx.hi, 0)..][..c];
                let dst = out.index(n, oh, ow, 0);
                for (k, o) in y.data_mut()[dst..dst + c].iter_mut().enumerate() {
                    let top = a[k] + fx * (b[k] - a[k]);
                    let bottom = cc[k] + fx * (d[k] - cc[k]);
                    *o = top + fy * (bottom - top);
                }
            }
        }
    }
    Ok(y)
}

/// Adjoint of [`bilinear_resize`]: scatters `dy` with the same weights.
pub fn bilinear_resize_backward<T: Float>(input: Shape, dy: &Tensor<T>) -> Tensor<T> {
    let out = dy.shape();
    let ys = axis_taps(input.h, out.h);
    let xs = axis_taps(input.w, out.w);
    let mut dx = Tensor::zeros(input);
    let c = input.c;
    for n in 0..input.n {
        for (oh, ty) in ys.iter().enumerate() {
            let fy = T::of(ty.frac);
            for (ow, tx) in xs.iter().enumerate() {
                let fx = T::of(tx.frac);
                let weights = [
                    (ty.lo, tx.lo, (T::one() - fy) * (T::one() - fx)),
                    (ty.lo, tx.hi, (T::one() - fy) * fx),
                    (ty.hi, tx.lo, fy * (T::one() - fx)),
                    (ty.hi, tx.hi, fy * fx),
                ];
                let up = &dy.data()[out.index(n, oh, ow, 0)..][..c];
                for (h, w, wt) in weights {
                    let dst = input.index(n, h, w, 0);
                    for (d, &g) in dx.data_mut()[dst..dst + c].iter_mut().zip(up) {
                        *d += wt * g;
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_for_exact_doubling() {
        let t = axis_taps(2, 4);
        // centers map to -0.25 (clamped), 0.25, 0.75, 1.25
        assert_eq!(
            t[0],
            Tap {
                lo: 0,
                hi: 1,
                frac: 0.0
            }
        );
        assert_eq!(
            t[1],
            Tap {
                lo: 0,
                hi: 1,
                frac: 0.25
            }
        );
        assert_eq!(
            t[2],
            Tap {
                lo: 0,
                hi: 1,
                frac: 0.75
            }
        );
        assert_eq!(t[3].lo, 1);
        assert_eq!(t[3].hi, 1);
    }

    #[test]
    fn single_pixel_replicates() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2), vec![3.0, -1.0]).unwrap();
        let y = bilinear_resize(&x, 2, 2).unwrap();
        for px in y.data().chunks(2) {
            assert_eq!(px, &[3.0, -1.0]);
        }
    }

    #[test]
    fn zero_target_is_rejected() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 2, 1));
        assert!(bilinear_resize(&x, 0, 2).is_err());
    }

    #[test]
    fn constant_survives_downscaling() {
        let x = Tensor::<f64>::full(Shape::new(1, 9, 7, 3), 0.25);
        let y = bilinear_resize(&x, 4, 3).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
