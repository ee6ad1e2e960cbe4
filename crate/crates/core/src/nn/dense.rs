use crate::error::{Error, Result};
use crate::tensor::{matmul, Float, Shape, Tensor};

/// `y = flatten(x) · w + b`; `w` is `(1, 1, in, out)`, `b` is `(1, 1, 1, out)`.
pub fn dense_forward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if ws.n != 1 || ws.h != 1 || xs.features() != ws.w {
        return Err(Error::dim(
            "dense",
            format!(
                "input {xs} has {} features but weight {ws} expects {}",
                xs.features(),
                ws.w
            ),
        ));
    }
    let out = ws.c;
    let mut y = Tensor::zeros(Shape::new(xs.n, 1, 1, out));
    if let Some(b) = b {
        if b.shape() != Shape::vector(out) {
            return Err(Error::ShapeMismatch {
                op: "dense bias",
                left: ws,
                right: b.shape(),
            });
        }
        for row in y.data_mut().chunks_exact_mut(out) {
            row.copy_from_slice(b.data());
        }
    }
    matmul(
        x.data(),
        false,
        w.data(),
        false,
        y.data_mut(),
        xs.n,
        ws.w,
        out,
        true,
    );
    Ok(y)
}

/// Returns `(dx, dw, db)`.
pub fn dense_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, fin, fout) = (x.shape().n, w.shape().w, w.shape().c);
    let mut dx = Tensor::zeros(x.shape());
    matmul(
        dy.data(),
        false,
        w.data(),
        true,
        dx.data_mut(),
        n,
        fout,
        fin,
        false,
    );
    let mut dw = Tensor::zeros(w.shape());
    matmul(
        x.data(),
        true,
        dy.data(),
        false,
        dw.data_mut(),
        fin,
        n,
        fout,
        false,
    );
    let mut db = Tensor::zeros(Shape::vector(fout));
    for row in dy.data().chunks_exact(fout) {
        for (d, &g) in db.data_mut().iter_mut().zip(row) {
            *d += g;
        }
    }
    (dx, dw, db)
}
