use crate::autodiff::ParamStore;
use crate::tensor::{Float, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// First and second moments for every store entry, indexed like the store.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Float> AdamState<T> {
    pub fn new(store: &ParamStore<T>, beta1: f64, beta2: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, _, var)| Tensor::zeros(var.value.shape()))
                .collect::<Vec<_>>()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1,
            beta2,
            eps: DEFAULT_EPSILON,
        }
    }
}

/// One bias-corrected Adam update of every trainable entry.
pub fn adam_step<T: Float>(store: &mut ParamStore<T>, state: &mut AdamState<T>, lr: f64) {
    assert_eq!(
        state.m.len(),
        store.len(),
        "optimizer state built for a different store"
    );
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let mut stale = true;
    for (id, _, var) in store.iter_mut() {
        if !var.trainable {
            continue;
        }
        let (m, v) = (&mut state.m[id.index()], &mut state.v[id.index()]);
        let (tb1, tb2, tc1, tc2) = (T::of(b1), T::of(b2), T::of(c1), T::of(c2));
        let (lr, eps) = (T::of(lr), T::of(state.eps));
        for (((p, &g), m), v) in var
            .value
            .data_mut()
            .iter_mut()
            .zip(var.grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            stale &= g == T::zero();
            *m = tb1 * *m + (T::one() - tb1) * g;
            *v = tb2 * *v + (T::one() - tb2) * g * g;
            let mhat = *m / tc1;
            let vhat = *v / tc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    if stale {
        log::warn!(
            "adam step {} with all-zero gradients; was backward run?",
            state.t
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar_store(w: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(w), true).unwrap();
        s.get_mut(id).grad = Tensor::scalar(g);
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(0.5, 1.0);
        let mut st = AdamState::new(&s, 0.9, 0.99);
        adam_step(&mut s, &mut st, 1e-4);
        let w = s.iter().next().unwrap().2.value.data()[0];
        assert!((w - (0.5 - 1e-4 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(0.25, 0.0);
        let mut st = AdamState::new(&s, 0.9, 0.99);
        for _ in 0..5 {
            adam_step(&mut s, &mut st, 1e-3);
        }
        assert_eq!(s.iter().next().unwrap().2.value.data()[0], 0.25);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn non_trainable_entries_are_frozen() {
        let mut s = ParamStore::<f64>::new();
        let id = s
            .add(
                "bn/running_mean",
                Tensor::full(Shape::vector(2), 1.0),
                false,
            )
            .unwrap();
        s.get_mut(id).grad.fill(3.0);
        let mut st = AdamState::new(&s, 0.9, 0.99);
        adam_step(&mut s, &mut st, 0.1);
        assert_eq!(s.get(id).value.data(), &[1.0, 1.0]);
    }
}
