use super::{Gradients, Mlp};
use crate::scalar::Scalar;

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    pub m: Gradients<T>,
    pub v: Gradients<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(net: &Mlp<T>, lr: f64) -> Self {
        Self {
            lr: T::of(lr),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    /// One descent step along `grads`.
    pub fn update(&mut self, net: &mut Mlp<T>, grads: &Gradients<T>) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let lr = self.lr;
        let eps = self.eps;
        let one = T::one();
        let apply = |p: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (i, layer) in net.layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.w)
                .and(&grads.w[i])
                .and(&mut self.m.w[i])
                .and(&mut self.v.w[i])
                .for_each(|p, &g, m, v| apply(p, g, m, v));
            ndarray::Zip::from(&mut layer.b)
                .and(&grads.b[i])
                .and(&mut self.m.b[i])
                .and(&mut self.v.b[i])
                .for_each(|p, &g, m, v| apply(p, g, m, v));
        }
    }
}
