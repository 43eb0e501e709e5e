//! Small dense networks with hand-written reverse-mode gradients.

mod adam;
pub mod checkpoint;
mod embedding;
pub mod gradcheck;

pub use adam::Adam;
pub use embedding::timestep_embedding;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Mish,
    Tanh,
}

/// `mish(x) = x tanh(ln(1 + e^x)) = x n / (n + 2)` with `n = e^x (e^x + 2)`.
pub fn mish<T: Scalar>(x: T) -> T {
    if x > T::of(20.0) {
        return x;
    }
    let e = x.exp();
    let n = e * (e + T::of(2.0));
    x * n / (n + T::of(2.0))
}

pub fn mish_grad<T: Scalar>(x: T) -> T {
    if x > T::of(20.0) {
        return T::one();
    }
    let e = x.exp();
    let n = e * (e + T::of(2.0));
    let d = n + T::of(2.0);
    n / d + x * T::of(4.0) * e * (e + T::one()) / (d * d)
}

impl Activation {
    fn apply<T: Scalar>(self, z: &mut Array2<T>) {
        match self {
            Activation::Identity => {}
            Activation::Mish => z.mapv_inplace(mish),
            Activation::Tanh => z.mapv_inplace(|v| v.tanh()),
        }
    }

    /// Multiplies `grad` by the activation derivative at pre-activation `z`.
    fn backprop<T: Scalar>(self, z: &Array2<T>, grad: &mut Array2<T>) {
        match self {
            Activation::Identity => {}
            Activation::Mish => ndarray::Zip::from(grad).and(z).for_each(|g, &v| *g *= mish_grad(v)),
            Activation::Tanh => ndarray::Zip::from(grad).and(z).for_each(|g, &v| {
                let t = v.tanh();
                *g *= T::one() - t * t;
            }),
        }
    }
}

/// Affine map `x W + b` followed by an activation; `w` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
    pub act: Activation,
}

impl<T: Scalar> Dense<T> {
    /// Uniform fan-in initialization in `+-1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, act: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = || T::of(rng.gen_range(-bound..=bound));
        Self {
            w: Array2::from_shape_simple_fn((fan_in, fan_out), &mut draw),
            b: Array1::from_shape_simple_fn(fan_out, &mut draw),
            act,
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, act: Activation) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
            act,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Intermediates of one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
}

/// Parameter-shaped accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub w: Vec<Array2<T>>,
    pub b: Vec<Array1<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            w: net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            b: net.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.w.iter_mut().for_each(|w| w.fill(T::zero()));
        self.b.iter_mut().for_each(|b| b.fill(T::zero()));
    }

    pub fn scale(&mut self, factor: T) {
        self.w.iter_mut().for_each(|w| *w *= factor);
        self.b.iter_mut().for_each(|b| *b *= factor);
    }

    pub fn add_scaled(&mut self, other: &Gradients<T>, factor: T) {
        for (a, o) in self.w.iter_mut().zip(&other.w) {
            a.scaled_add(factor, o);
        }
        for (a, o) in self.b.iter_mut().zip(&other.b) {
            a.scaled_add(factor, o);
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt()
    }
}

impl<T: Scalar> Mlp<T> {
    /// `dims = [in, h1, ..., out]`; hidden layers use `hidden`, the last `out`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, out: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output sizes");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| Dense::new(dims[i], dims[i + 1], if i + 1 == n { out } else { hidden }, rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Zeroes the final layer so the untrained output is identically zero.
    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.w.fill(T::zero());
            last.b.fill(T::zero());
        }
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut h = x.to_owned();
        for layer in &self.layers {
            let mut z = h.dot(&layer.w);
            z += &layer.b;
            layer.act.apply(&mut z);
            h = z;
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<T>) -> (Array2<T>, MlpCache<T>) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_owned();
        for layer in &self.layers {
            let mut z = h.dot(&layer.w);
            z += &layer.b;
            cache.inputs.push(h);
            let mut a = z.clone();
            layer.act.apply(&mut a);
            cache.pre.push(z);
            h = a;
        }
        (h, cache)
    }

    /// Backpropagates `grad_out` (dL/d output). Parameter gradients are
    /// added into `grads` when given; the input gradient is returned.
    pub fn backward(&self, cache: &MlpCache<T>, grad_out: &Array2<T>, mut grads: Option<&mut Gradients<T>>) -> Array2<T> {
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer.act.backprop(&cache.pre[i], &mut g);
            if let Some(acc) = grads.as_deref_mut() {
                ndarray::linalg::general_mat_mul(T::one(), &cache.inputs[i].t(), &g, T::one(), &mut acc.w[i]);
                acc.b[i] += &g.sum_axis(Axis(0));
            }
            g = g.dot(&layer.w.t());
        }
        g
    }

    pub fn flatten_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, values: &[T]) {
        assert_eq!(values.len(), self.num_params());
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v = it.next().unwrap_or_else(T::zero));
            l.b.iter_mut().for_each(|v| *v = it.next().unwrap_or_else(T::zero));
        }
    }

    /// `self <- rho * online + (1 - rho) * self`.
    pub fn ema_toward(&mut self, online: &Mlp<T>, rho: T) {
        let keep = T::one() - rho;
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            ndarray::Zip::from(&mut t.w).and(&o.w).for_each(|a, &b| *a = keep * *a + rho * b);
            ndarray::Zip::from(&mut t.b).and(&o.b).for_each(|a, &b| *a = keep * *a + rho * b);
        }
    }

    /// Euclidean distance between the parameter vectors of two nets.
    pub fn param_distance(&self, other: &Mlp<T>) -> f64 {
        self.flatten_params()
            .iter()
            .zip(other.flatten_params())
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    w: l.w.mapv(|v| U::of(v.to_f64_lossy())),
                    b: l.b.mapv(|v| U::of(v.to_f64_lossy())),
                    act: l.act,
                })
                .collect(),
        }
    }
}

/// Horizontal concatenation of row-aligned blocks.
pub fn hcat<T: Scalar>(blocks: &[ArrayView2<T>]) -> Array2<T> {
    ndarray::concatenate(Axis(1), blocks).expect("blocks must share the row count")
}
