use ndarray::Array1;

use crate::scalar::Scalar;

/// Sinusoidal position embedding with interleaved `(sin, cos)` pairs at
/// geometrically spaced frequencies `10000^(-2i/dim)`.
pub fn timestep_embedding<T: Scalar>(k: usize, dim: usize) -> Array1<T> {
    assert!(dim % 2 == 0, "embedding dimension must be even");
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let angle = k as f64 * freq;
        out[2 * i] = T::of(angle.sin());
        out[2 * i + 1] = T::of(angle.cos());
    }
    out
}
