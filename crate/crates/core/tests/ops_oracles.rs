//! Layer kernels against naive reference loops written independently of
//! the engine's index arithmetic.

use opticnet::autodiff::ParamStore;
use opticnet::nn::conv::{conv2d_forward, depthwise_forward};
use opticnet::nn::dense::dense_forward;
use opticnet::nn::loss::softmax_cross_entropy;
use opticnet::nn::norm::batch_norm_forward;
use opticnet::nn::pool::{global_avg_pool_forward, max_pool_forward};
use opticnet::nn::resize::bilinear_resize;
use opticnet::nn::{Conv2d, ConvGeometry, ConvSpec, Dense, Mode, Padding};
use opticnet::opticnet::audit::estimate_flops;
use opticnet::tensor::{Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_t(shape: Shape, seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

/// Output length and leading pad for one axis, TensorFlow conventions.
fn same_axis(len: usize, k: usize, s: usize, d: usize) -> (usize, i64) {
    let eff = (k - 1) * d + 1;
    let out = (len + s - 1) / s;
    let need = ((out - 1) * s + eff) as i64 - len as i64;
    (out, need.max(0) / 2)
}

fn valid_axis(len: usize, k: usize, s: usize, d: usize) -> (usize, i64) {
    let eff = (k - 1) * d + 1;
    ((len - eff) / s + 1, 0)
}

fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    s: usize,
    d: usize,
    same: bool,
    depthwise: bool,
) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let axis = if same { same_axis } else { valid_axis };
    let (oh, pt) = axis(xs.h, ws.n, s, d);
    let (ow, pl) = axis(xs.w, ws.h, s, d);
    let oc = if depthwise { xs.c } else { ws.c };
    Tensor::from_fn(Shape::new(xs.n, oh, ow, oc), |n, i, j, o| {
        let mut acc = 0.0;
        for ki in 0..ws.n {
            for kj in 0..ws.h {
                let r = (i * s + ki * d) as i64 - pt;
                let c = (j * s + kj * d) as i64 - pl;
                if r < 0 || c < 0 || r >= xs.h as i64 || c >= xs.w as i64 {
                    continue;
                }
                if depthwise {
                    acc += x.at(n, r as usize, c as usize, o) * w.at(ki, kj, o, 0);
                } else {
                    for ci in 0..xs.c {
                        acc += x.at(n, r as usize, c as usize, ci) * w.at(ki, kj, ci, o);
                    }
                }
            }
        }
        acc
    })
}

#[test]
fn conv_matches_naive_loops() {
    let cases = [
        // (h, w, cin, cout, k, stride, dilation, same)
        (7, 7, 3, 4, 3, 1, 1, true),
        (8, 6, 2, 5, 3, 2, 1, true),
        (9, 9, 3, 2, 2, 1, 2, true),
        (7, 8, 2, 3, 3, 1, 2, true),
        (8, 8, 3, 4, 1, 2, 1, true),
        (11, 11, 3, 2, 7, 2, 1, true),
        (7, 7, 2, 3, 3, 1, 1, false),
        (9, 8, 2, 2, 2, 2, 2, false),
        (5, 5, 4, 6, 1, 1, 1, true),
    ];
    for (seed, &(h, w, cin, cout, k, s, d, same)) in cases.iter().enumerate() {
        let x = rand_t(Shape::new(2, h, w, cin), seed as u64);
        let wt = rand_t(Shape::new(k, k, cin, cout), 100 + seed as u64);
        let pad = if same { Padding::Same } else { Padding::Valid };
        let g = ConvGeometry::new(x.shape(), k, k, s, d, pad, cout).unwrap();
        let got = conv2d_forward(&x, &wt, &g).unwrap();
        assert_close(&got, &naive_conv(&x, &wt, s, d, same, false), 1e-12);
    }
}

#[test]
fn depthwise_matches_naive_loops() {
    for (seed, &(k, s, d)) in [(3, 1, 1), (2, 1, 2), (3, 2, 1), (3, 1, 2)]
        .iter()
        .enumerate()
    {
        let x = rand_t(Shape::new(2, 8, 7, 5), seed as u64);
        let wt = rand_t(Shape::new(k, k, 5, 1), 50 + seed as u64);
        let g = ConvGeometry::new(x.shape(), k, k, s, d, Padding::Same, 5).unwrap();
        let got = depthwise_forward(&x, &wt, &g).unwrap();
        assert_close(&got, &naive_conv(&x, &wt, s, d, true, true), 1e-12);
    }
}

#[test]
fn same_padding_output_sizes() {
    for (len, k, s, d, expect) in [
        (224, 7, 2, 1, 112),
        (7, 3, 2, 1, 4),
        (5, 2, 1, 2, 5),
        (1, 3, 1, 1, 1),
    ] {
        let g =
            ConvGeometry::new(Shape::new(1, len, len, 1), k, k, s, d, Padding::Same, 1).unwrap();
        assert_eq!(g.output.h, expect, "len {len} k {k} s {s} d {d}");
    }
}

#[test]
fn conv_smaller_than_receptive_field_is_an_error_in_valid_mode() {
    let x = Tensor::<f64>::zeros(Shape::new(1, 2, 2, 1));
    assert!(ConvGeometry::new(x.shape(), 2, 2, 1, 2, Padding::Valid, 1).is_err());
}

#[test]
fn max_pool_matches_naive() {
    let x = rand_t(Shape::new(2, 7, 6, 3), 9);
    let got = max_pool_forward(&x, 2, 2).unwrap().output;
    let s = got.shape();
    assert_eq!((s.h, s.w), (3, 3));
    let expect = Tensor::from_fn(s, |n, i, j, c| {
        let mut m = f64::NEG_INFINITY;
        for a in 0..2 {
            for b in 0..2 {
                m = m.max(x.at(n, 2 * i + a, 2 * j + b, c));
            }
        }
        m
    });
    assert_close(&got, &expect, 0.0);
}

#[test]
fn global_avg_pool_is_spatial_mean() {
    let x = rand_t(Shape::new(3, 4, 5, 2), 4);
    let got = global_avg_pool_forward(&x);
    let expect = Tensor::from_fn(Shape::new(3, 1, 1, 2), |n, _, _, c| {
        (0..4)
            .flat_map(|i| (0..5).map(move |j| (i, j)))
            .map(|(i, j)| x.at(n, i, j, c))
            .sum::<f64>()
            / 20.0
    });
    assert_close(&got, &expect, 1e-14);
}

#[test]
fn bilinear_identity_and_constant() {
    let x = rand_t(Shape::new(1, 5, 4, 2), 1);
    assert_close(&bilinear_resize(&x, 5, 4).unwrap(), &x, 1e-15);
    let c = Tensor::<f64>::full(Shape::new(2, 3, 3, 2), 0.37);
    let up = bilinear_resize(&c, 10, 7).unwrap();
    assert!(up.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
}

#[test]
fn bilinear_doubling_uses_half_pixel_centers() {
    // 1-D row [0, 4]: output centers map to -0.25, 0.25, 0.75, 1.25 in
    // source coordinates, clamped at the borders.
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 1), vec![0.0, 4.0]).unwrap();
    let y = bilinear_resize(&x, 1, 4).unwrap();
    assert_eq!(y.data(), &[0.0, 1.0, 3.0, 4.0]);
}

#[test]
fn batch_norm_train_matches_naive_statistics() {
    let x = rand_t(Shape::new(3, 4, 4, 3), 2);
    let gamma = Tensor::from_vec(Shape::vector(3), vec![1.5, 0.5, -1.0]).unwrap();
    let beta = Tensor::from_vec(Shape::vector(3), vec![0.1, 0.0, 0.3]).unwrap();
    let eps = 1e-3;
    let (y, saved) = batch_norm_forward(&x, &gamma, &beta, None, eps, Mode::Train).unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = x.data().iter().skip(c).step_by(3).copied().collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((saved.mean[c] - m).abs() < 1e-14);
        assert!((saved.batch_var[c] - v).abs() < 1e-14);
        for (a, b) in vals.iter().zip(y.data().iter().skip(c).step_by(3)) {
            let expect = gamma.data()[c] * (a - m) / (v + eps).sqrt() + beta.data()[c];
            assert!((expect - b).abs() < 1e-12);
        }
    }
}

#[test]
fn batch_norm_infer_uses_running_stats() {
    let x = rand_t(Shape::new(2, 2, 2, 2), 3);
    let ones = Tensor::ones(Shape::vector(2));
    let zeros = Tensor::zeros(Shape::vector(2));
    let mean = Tensor::from_vec(Shape::vector(2), vec![0.5, -0.5]).unwrap();
    let var = Tensor::from_vec(Shape::vector(2), vec![4.0, 0.25]).unwrap();
    let (y, _) =
        batch_norm_forward(&x, &ones, &zeros, Some((&mean, &var)), 1e-3, Mode::Infer).unwrap();
    for (i, (a, b)) in x.data().iter().zip(y.data()).enumerate() {
        let c = i % 2;
        let expect = (a - mean.data()[c]) / (var.data()[c] + 1e-3).sqrt();
        assert!((expect - b).abs() < 1e-14);
    }
}

#[test]
fn dense_matches_naive() {
    let x = rand_t(Shape::new(3, 2, 2, 2), 5);
    let w = rand_t(Shape::new(1, 1, 8, 4), 6);
    let b = rand_t(Shape::vector(4), 7);
    let y = dense_forward(&x, &w, Some(&b)).unwrap();
    for n in 0..3 {
        for o in 0..4 {
            let row = &x.data()[n * 8..(n + 1) * 8];
            let expect: f64 = b.data()[o]
                + row
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * w.at(0, 0, i, o))
                    .sum::<f64>();
            assert!((y.at(n, 0, 0, o) - expect).abs() < 1e-13);
        }
    }
}

#[test]
fn flop_counts_of_single_layers() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rows = Vec::new();
    let head = Dense::new(&mut store, "fc", 2048, 256, &mut rng).unwrap();
    head.trace(Shape::new(1, 1, 1, 2048), &mut rows).unwrap();
    let one = Conv2d::new(&mut store, "c", ConvSpec::regular(1, 1, 1), &mut rng).unwrap();
    one.trace(Shape::new(1, 1, 1, 1), &mut rows).unwrap();
    assert_eq!(estimate_flops(&rows[..1]), 2 * 2048 * 256);
    assert_eq!(estimate_flops(&rows[1..]), 2);
}

#[test]
fn softmax_cross_entropy_matches_log_sum_exp() {
    let logits = Tensor::from_vec(
        Shape::new(2, 1, 1, 3),
        vec![1.0, 2.0, 3.0, 1000.0, 0.0, -1000.0],
    )
    .unwrap();
    let (loss, probs) = softmax_cross_entropy(&logits, &[2, 1]).unwrap();
    let first = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
    let second = 1000.0;
    assert!((loss - (first + second) / 2.0).abs() < 1e-12);
    assert!(probs.data().iter().all(|p| p.is_finite()));
    assert!(softmax_cross_entropy(&logits, &[3, 0]).is_err());
}
