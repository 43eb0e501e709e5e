//! Conditional denoising diffusion policy over preference vectors.
//!
//! The noise-prediction network sees `[a_k, s, embed(k)]` and predicts the
//! noise injected at step `k`. Sampling runs the reverse chain from a
//! standard-normal draw and clamps to `[-1, 1]` only at the very end.
//! Q-guidance differentiates through the whole chain with the noise draws
//! held fixed (reparameterization).

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{hcat, timestep_embedding, Activation, Gradients, Mlp, MlpCache};
use crate::scalar::Scalar;

/// Variance-preserving schedule, steps indexed `1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DenoiseSchedule {
    /// `beta_k = 1 - exp(-beta_min/K - (beta_max - beta_min)(2k-1)/(2K^2))`.
    pub fn new(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 || !(beta_min > 0.0) || beta_max < beta_min || !beta_max.is_finite() {
            return Err(Error::Config(format!(
                "schedule needs K >= 1 and 0 < beta_min <= beta_max, got K={steps} [{beta_min}, {beta_max}]"
            )));
        }
        let kf = steps as f64;
        let betas: Vec<f64> = (1..=steps)
            .map(|k| 1.0 - (-beta_min / kf - (beta_max - beta_min) * (2.0 * k as f64 - 1.0) / (2.0 * kf * kf)).exp())
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k - 1]
    }

    /// Reverse-step noise scale; the final step is deterministic.
    pub fn sigma(&self, k: usize) -> f64 {
        if k == 1 {
            0.0
        } else {
            self.beta(k).sqrt()
        }
    }

    /// Coefficient of the predicted noise in the posterior mean.
    pub fn eps_coef(&self, k: usize) -> f64 {
        self.beta(k) / (1.0 - self.alpha_bar(k)).sqrt()
    }
}

/// `sqrt(abar_k) a0 + sqrt(1 - abar_k) noise`, with a step per row.
pub fn q_sample<T: Scalar>(a0: ArrayView2<T>, ks: &[usize], noise: ArrayView2<T>, schedule: &DenoiseSchedule) -> Array2<T> {
    assert_eq!(ks.len(), a0.nrows());
    let mut out = Array2::zeros(a0.raw_dim());
    for (i, &k) in ks.iter().enumerate() {
        let ab = schedule.alpha_bar(k);
        let (c0, c1) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
        let mut row = out.row_mut(i);
        row.assign(&a0.row(i));
        row *= c0;
        row.scaled_add(c1, &noise.row(i));
    }
    out
}

/// Per-sample squared error norm averaged over the batch.
pub fn noise_prediction_error<T: Scalar>(noise: &Array2<T>, pred: &Array2<T>) -> f64 {
    let n = noise.nrows().max(1) as f64;
    noise.iter().zip(pred).map(|(e, p)| (e.to_f64_lossy() - p.to_f64_lossy()).powi(2)).sum::<f64>() / n
}

/// Exact noise for a point-mass data distribution at `target`:
/// `(a_k - sqrt(abar_k) target) / sqrt(1 - abar_k)`.
pub fn point_mass_noise<T: Scalar>(a_k: ArrayView2<T>, k: usize, target: &[T], schedule: &DenoiseSchedule) -> Array2<T> {
    let ab = schedule.alpha_bar(k);
    let (c0, inv) = (T::of(ab.sqrt()), T::of(1.0 / (1.0 - ab).sqrt()));
    let mut out = a_k.to_owned();
    for mut row in out.rows_mut() {
        row.iter_mut().zip(target).for_each(|(v, &t)| *v = (*v - c0 * t) * inv);
    }
    out
}

/// Backward rule for the final clamp in Q-guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampGradient {
    /// True derivative: zero wherever the raw sample left the box.
    Exact,
    /// Outside the box, pass only the part of the gradient whose descent
    /// step moves the raw sample back toward it.
    Inward,
}

/// How the squared noise error of one sample is reduced over action dims.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    /// Squared norm; a zero predictor scores `action_dim`.
    Sum,
    /// Mean over coordinates; a zero predictor scores 1 at any dimension.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub clamp_gradient: ClampGradient,
    pub loss_reduction: LossReduction,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub hidden: usize,
    /// Dense layer count including the output layer.
    pub layers: usize,
    pub embed_dim: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            clamp_gradient: ClampGradient::Inward,
            loss_reduction: LossReduction::Mean,
            steps: 5,
            beta_min: 0.1,
            beta_max: 10.0,
            hidden: 256,
            layers: 4,
            embed_dim: 16,
        }
    }
}

fn mlp_dims(input: usize, hidden: usize, layers: usize, output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat(hidden).take(layers.saturating_sub(1)));
    dims.push(output);
    dims
}

/// Builds a Mish MLP with `layers` dense layers.
pub fn mish_mlp<T: Scalar, R: Rng + ?Sized>(input: usize, hidden: usize, layers: usize, output: usize, out: Activation, rng: &mut R) -> Mlp<T> {
    Mlp::new(&mlp_dims(input, hidden, layers.max(1), output), Activation::Mish, out, rng)
}

/// Value and gradient-side summary of one combined-loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedLoss {
    pub denoise: f64,
    pub guidance: f64,
    pub total: f64,
}

/// Outcome of a differentiable reverse chain.
struct ChainTrace<T> {
    caches: Vec<MlpCache<T>>,
    raw: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPolicy<T> {
    pub net: Mlp<T>,
    pub schedule: DenoiseSchedule,
    pub state_dim: usize,
    pub action_dim: usize,
    pub embed_dim: usize,
    pub clamp_gradient: ClampGradient,
    pub loss_reduction: LossReduction,
}

impl<T: Scalar> DiffusionPolicy<T> {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, cfg: &DiffusionConfig, rng: &mut R) -> Result<Self> {
        let schedule = DenoiseSchedule::new(cfg.steps, cfg.beta_min, cfg.beta_max)?;
        if cfg.embed_dim % 2 != 0 || cfg.embed_dim == 0 {
            return Err(Error::Config(format!("embedding dimension must be even and positive, got {}", cfg.embed_dim)));
        }
        let mut net = mish_mlp(action_dim + state_dim + cfg.embed_dim, cfg.hidden, cfg.layers, action_dim, Activation::Identity, rng);
        net.zero_output_layer();
        Ok(Self {
            net,
            schedule,
            state_dim,
            action_dim,
            embed_dim: cfg.embed_dim,
            clamp_gradient: cfg.clamp_gradient,
            loss_reduction: cfg.loss_reduction,
        })
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }

    fn embeddings(&self, ks: &[usize]) -> Array2<T> {
        let mut e = Array2::zeros((ks.len(), self.embed_dim));
        for (i, &k) in ks.iter().enumerate() {
            e.row_mut(i).assign(&timestep_embedding::<T>(k, self.embed_dim));
        }
        e
    }

    fn net_input(&self, a_k: ArrayView2<T>, s: ArrayView2<T>, ks: &[usize]) -> Array2<T> {
        let e = self.embeddings(ks);
        hcat(&[a_k.reborrow(), s.reborrow(), e.view()])
    }

    /// Predicted noise for each row at its own step.
    pub fn predict_noise(&self, a_k: ArrayView2<T>, s: ArrayView2<T>, ks: &[usize]) -> Array2<T> {
        self.net.forward(self.net_input(a_k, s, ks).view())
    }

    fn posterior_mean(&self, a_k: ArrayView2<T>, eps: &Array2<T>, k: usize) -> Array2<T> {
        let inv_sqrt_alpha = T::of(1.0 / self.schedule.alpha(k).sqrt());
        let coef = T::of(self.schedule.eps_coef(k));
        let mut mean = a_k.to_owned();
        mean.scaled_add(-coef, eps);
        mean *= inv_sqrt_alpha;
        mean
    }

    /// One reverse step `a_k -> a_{k-1}`.
    pub fn p_sample_step<R: Rng + ?Sized>(&self, a_k: ArrayView2<T>, s: ArrayView2<T>, k: usize, rng: &mut R) -> Array2<T> {
        let eps = self.predict_noise(a_k, s, &vec![k; a_k.nrows()]);
        let mut next = self.posterior_mean(a_k, &eps, k);
        let sigma = self.schedule.sigma(k);
        if sigma > 0.0 {
            let sig = T::of(sigma);
            next.mapv_inplace(|v| v + sig * T::normal(rng));
        }
        next
    }

    /// Full reverse chain from standard normal noise, clamped to `[-1, 1]`.
    pub fn sample<R: Rng + ?Sized>(&self, s: ArrayView2<T>, rng: &mut R) -> Result<Array2<T>> {
        self.sample_with(s, rng, |a_k, s, k| self.predict_noise(a_k, s, &vec![k; a_k.nrows()]))
    }

    /// Reverse chain driven by an arbitrary noise predictor `(a_k, s, k)`.
    pub fn sample_with<R, F>(&self, s: ArrayView2<T>, rng: &mut R, mut predict: F) -> Result<Array2<T>>
    where
        R: Rng + ?Sized,
        F: FnMut(ArrayView2<T>, ArrayView2<T>, usize) -> Array2<T>,
    {
        let mut a = Array2::from_shape_simple_fn((s.nrows(), self.action_dim), || T::normal(rng));
        for k in (1..=self.steps()).rev() {
            let eps = predict(a.view(), s, k);
            a = self.posterior_mean(a.view(), &eps, k);
            let sigma = self.schedule.sigma(k);
            if sigma > 0.0 {
                let sig = T::of(sigma);
                a.mapv_inplace(|v| v + sig * T::normal(rng));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericFailure(format!("non-finite action at reverse step {k}")));
            }
        }
        a.mapv_inplace(|v| v.max(-T::one()).min(T::one()));
        Ok(a)
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, s: &[T], rng: &mut R) -> Result<Vec<T>> {
        let state = ArrayView2::from_shape((1, s.len()), s).map_err(|_| Error::Shape {
            what: "state",
            expected: self.state_dim,
            got: s.len(),
        })?;
        Ok(self.sample(state, rng)?.into_iter().collect())
    }

    /// Draws per-row steps uniform on `1..=K` and standard normal noise.
    pub fn draw_training_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> (Vec<usize>, Array2<T>) {
        let ks: Vec<usize> = (0..rows).map(|_| rng.gen_range(1..=self.steps())).collect();
        let noise = Array2::from_shape_simple_fn((rows, self.action_dim), || T::normal(rng));
        (ks, noise)
    }

    /// Denoising loss; `scale * dL/dtheta` is added into `grads` when given.
    pub fn diffusion_loss<R: Rng + ?Sized>(&self, s: ArrayView2<T>, a: ArrayView2<T>, rng: &mut R, grads: Option<(&mut Gradients<T>, T)>) -> f64 {
        let (ks, noise) = self.draw_training_noise(a.nrows(), rng);
        let noisy = q_sample(a, &ks, noise.view(), &self.schedule);
        let input = self.net_input(noisy.view(), s, &ks);
        let per_dim = match self.loss_reduction {
            LossReduction::Sum => 1.0,
            LossReduction::Mean => 1.0 / self.action_dim.max(1) as f64,
        };
        if let Some((acc, scale)) = grads {
            let (pred, cache) = self.net.forward_cached(input.view());
            let up = (&pred - &noise) * (T::of(2.0 * per_dim / a.nrows().max(1) as f64) * scale);
            self.net.backward(&cache, &up, Some(acc));
            noise_prediction_error(&noise, &pred) * per_dim
        } else {
            noise_prediction_error(&noise, &self.net.forward(input.view())) * per_dim
        }
    }

    fn chain_with_trace<R: Rng + ?Sized>(&self, s: ArrayView2<T>, rng: &mut R) -> (ChainTrace<T>, Vec<Array2<T>>) {
        let rows = s.nrows();
        let mut a = Array2::from_shape_simple_fn((rows, self.action_dim), || T::normal(rng));
        let mut caches = Vec::with_capacity(self.steps());
        let mut inputs = Vec::with_capacity(self.steps());
        for k in (1..=self.steps()).rev() {
            let input = self.net_input(a.view(), s, &vec![k; rows]);
            let (eps, cache) = self.net.forward_cached(input.view());
            let mut next = self.posterior_mean(a.view(), &eps, k);
            let sigma = self.schedule.sigma(k);
            if sigma > 0.0 {
                let sig = T::of(sigma);
                next.mapv_inplace(|v| v + sig * T::normal(rng));
            }
            caches.push(cache);
            inputs.push(input);
            a = next;
        }
        (ChainTrace { caches, raw: a }, inputs)
    }

    /// Normalized Q of freshly sampled actions. `critic` maps `[s, a]` to a
    /// scalar. The denominator `mean |Q(s, a_stored)|` is a constant scale.
    /// When given, `scale * dQ/dtheta` is added into `grads`.
    pub fn q_guidance<R: Rng + ?Sized>(
        &self,
        critic: &Mlp<T>,
        s: ArrayView2<T>,
        a_stored: ArrayView2<T>,
        rng: &mut R,
        grads: Option<(&mut Gradients<T>, T)>,
    ) -> Result<f64> {
        let rows = s.nrows().max(1);
        let stored_q = critic.forward(hcat(&[s.reborrow(), a_stored.reborrow()]).view());
        let denom = (stored_q.iter().map(|q| q.to_f64_lossy().abs()).sum::<f64>() / rows as f64).max(1e-8);

        let (trace, _) = self.chain_with_trace(s, rng);
        if trace.raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure("non-finite action in the guidance chain".into()));
        }
        let clamped = trace.raw.mapv(|v| v.max(-T::one()).min(T::one()));
        let critic_in = hcat(&[s.reborrow(), clamped.view()]);
        let Some((acc, scale)) = grads else {
            let q = critic.forward(critic_in.view());
            return Ok(q.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / rows as f64 / denom);
        };
        let (q, critic_cache) = critic.forward_cached(critic_in.view());
        let value = q.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / rows as f64 / denom;

        let up_q = Array2::from_elem((rows, 1), T::of(1.0 / (rows as f64 * denom)) * scale);
        let g_in = critic.backward(&critic_cache, &up_q, None);
        let mut g = g_in.slice(s![.., self.state_dim..]).to_owned();
        let inward = self.clamp_gradient == ClampGradient::Inward;
        ndarray::Zip::from(&mut g).and(&trace.raw).for_each(|gv, &r| {
            // Descent moves r by -gv, so inward means gv shares r's sign.
            let toward_box = inward && *gv * r > T::zero();
            if r.abs() > T::one() && !toward_box {
                *gv = T::zero();
            }
        });
        // Reverse through the chain; caches are ordered k = K..1.
        for (idx, k) in (1..=self.steps()).rev().enumerate().collect::<Vec<_>>().into_iter().rev() {
            let inv_sqrt_alpha = T::of(1.0 / self.schedule.alpha(k).sqrt());
            let coef = T::of(self.schedule.eps_coef(k));
            // a_{k-1} = (a_k - coef * eps(a_k)) / sqrt(alpha_k) + noise.
            let up_eps = &g * (-coef * inv_sqrt_alpha);
            let g_input = self.net.backward(&trace.caches[idx], &up_eps, Some(&mut *acc));
            let mut g_prev = &g * inv_sqrt_alpha;
            g_prev += &g_input.slice(s![.., ..self.action_dim]);
            g = g_prev;
        }
        Ok(value)
    }

    /// `L_d - eta * Q_guidance`; gradients of the total are added into `grads`.
    pub fn combined_loss<R: Rng + ?Sized>(
        &self,
        critic: &Mlp<T>,
        s: ArrayView2<T>,
        a: ArrayView2<T>,
        eta: f64,
        rng: &mut R,
        mut grads: Option<&mut Gradients<T>>,
    ) -> Result<CombinedLoss> {
        let denoise = self.diffusion_loss(s, a, rng, grads.as_deref_mut().map(|g| (g, T::one())));
        let guidance = if eta == 0.0 {
            0.0
        } else {
            self.q_guidance(critic, s, a, rng, grads.map(|g| (g, T::of(-eta))))?
        };
        Ok(CombinedLoss {
            denoise,
            guidance,
            total: denoise - eta * guidance,
        })
    }
}

/// Row-wise batch mean of a column vector.
pub fn column_mean<T: Scalar>(v: &Array2<T>) -> f64 {
    v.mean_axis(Axis(0)).map_or(0.0, |m: Array1<T>| m[0].to_f64_lossy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{numeric_gradient, relative_error};
    use crate::nn::{Adam, Dense};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> DiffusionConfig {
        DiffusionConfig { hidden: 32, layers: 3, ..DiffusionConfig::default() }
    }

    #[test]
    fn single_step_schedule_formula() {
        let s = DenoiseSchedule::new(1, 0.1, 10.0).unwrap();
        assert_abs_diff_eq!(s.beta(1), 1.0 - (-0.1f64 - 4.95).exp(), epsilon = 1e-15);
        assert_eq!(s.alpha_bar(1), s.alpha(1));
    }

    #[test]
    fn default_schedule_is_monotone_and_nearly_full_noise() {
        let s = DenoiseSchedule::new(5, 0.1, 10.0).unwrap();
        let mut prod = 1.0;
        for k in 1..=5 {
            assert!(s.beta(k) > 0.0 && s.beta(k) < 1.0);
            prod *= 1.0 - s.beta(k);
            assert_abs_diff_eq!(s.alpha_bar(k), prod, epsilon = 1e-15);
            if k > 1 {
                assert!(s.alpha_bar(k) < s.alpha_bar(k - 1));
            }
        }
        // Direct evaluation: sum of exponents is beta_min + (beta_max - beta_min)/2.
        assert_abs_diff_eq!(s.alpha_bar(5), (-0.1f64 - 4.95).exp(), epsilon = 1e-12);
        assert!(s.alpha_bar(5) < 0.01);
        assert!(DenoiseSchedule::new(0, 0.1, 10.0).is_err());
        assert!(DenoiseSchedule::new(5, 0.0, 10.0).is_err());
    }

    #[test]
    fn q_sample_limits() {
        let s = DenoiseSchedule::new(5, 0.1, 10.0).unwrap();
        let a0 = array![[0.5f64, -0.25]];
        let zero = Array2::zeros((1, 2));
        let out = q_sample(a0.view(), &[3], zero.view(), &s);
        assert_abs_diff_eq!(out[[0, 0]], 0.5 * s.alpha_bar(3).sqrt(), epsilon = 1e-15);
        let near_id = DenoiseSchedule::new(1, 1e-9, 1e-9).unwrap();
        let noise = array![[1.0, 1.0]];
        let out = q_sample(a0.view(), &[1], noise.view(), &near_id);
        assert_abs_diff_eq!(out[[0, 0]], 0.5, epsilon = 1e-4);
    }

    #[test]
    fn zero_prediction_step_rescales() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = DiffusionPolicy::<f64>::new(3, 2, &small_cfg(), &mut rng).unwrap();
        let s = array![[0.1, 0.2, 0.3]];
        let a = array![[0.4, -0.8]];
        let out = p.p_sample_step(a.view(), s.view(), 1, &mut rng);
        let r = 1.0 / p.schedule.alpha(1).sqrt();
        assert_abs_diff_eq!(out[[0, 0]], 0.4 * r, epsilon = 1e-12);
        let mut other = ChaCha8Rng::seed_from_u64(99);
        assert_eq!(out, p.p_sample_step(a.view(), s.view(), 1, &mut other));
        // The zero action is a fixed point of the noiseless zero-prediction chain.
        let mut z = Array2::zeros((1, 2));
        for k in (1..=5).rev() {
            z = p.posterior_mean(z.view(), &Array2::zeros((1, 2)), k);
        }
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn samples_are_clamped_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = DiffusionPolicy::<f32>::new(4, 6, &small_cfg(), &mut rng).unwrap();
        let states = Array2::from_shape_fn((1000, 4), |(i, j)| ((i * 7 + j) % 13) as f32 / 13.0);
        let a = p.sample(states.view(), &mut rng).unwrap();
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        // Symmetric noise and a zero prediction give a zero-mean action.
        let mean = a.iter().map(|&v| v as f64).sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 0.1, "{mean}");
        let x = p.sample_one(&[0.1, 0.2, 0.3, 0.4], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(x, p.sample_one(&[0.1, 0.2, 0.3, 0.4], &mut ChaCha8Rng::seed_from_u64(5)).unwrap());
    }

    #[test]
    fn non_finite_state_is_a_numeric_failure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = DiffusionPolicy::<f64>::new(2, 2, &small_cfg(), &mut rng).unwrap();
        p.net.layers.last_mut().unwrap().w.fill(1.0);
        let err = p.sample_one(&[f64::NAN, 0.0], &mut rng).unwrap_err();
        assert!(matches!(err, Error::NumericFailure(_)));
    }

    #[test]
    fn zero_net_loss_is_action_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = DiffusionConfig { loss_reduction: LossReduction::Sum, ..small_cfg() };
        let mut p = DiffusionPolicy::<f64>::new(3, 8, &cfg, &mut rng).unwrap();
        let s = Array2::zeros((20_000, 3));
        let a = Array2::from_elem((20_000, 8), 0.3);
        let loss = p.diffusion_loss(s.view(), a.view(), &mut rng, None);
        assert!((loss - 8.0).abs() < 0.1, "{loss}");
        p.loss_reduction = LossReduction::Mean;
        let loss = p.diffusion_loss(s.view(), a.view(), &mut rng, None);
        assert!((loss - 1.0).abs() < 0.02, "{loss}");
    }

    #[test]
    fn oracle_prediction_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = DiffusionPolicy::<f64>::new(3, 4, &small_cfg(), &mut rng).unwrap();
        let (_, noise) = p.draw_training_noise(16, &mut rng);
        assert_eq!(noise_prediction_error(&noise, &noise), 0.0);
        assert!(noise_prediction_error(&noise, &Array2::zeros(noise.raw_dim())) > 0.0);
    }

    fn constant_critic(input: usize, c: f64) -> Mlp<f64> {
        let mut last = Dense::zeros(4, 1, Activation::Identity);
        last.b[0] = c;
        Mlp { layers: vec![Dense::zeros(input, 4, Activation::Mish), last] }
    }

    #[test]
    fn constant_critic_guides_nowhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = DiffusionPolicy::<f64>::new(3, 2, &small_cfg(), &mut rng).unwrap();
        let critic = constant_critic(5, 2.5);
        let s = Array2::from_elem((8, 3), 0.2);
        let a = Array2::zeros((8, 2));
        let mut g = Gradients::zeros_like(&p.net);
        let q = p.q_guidance(&critic, s.view(), a.view(), &mut rng, Some((&mut g, 1.0))).unwrap();
        assert_abs_diff_eq!(q, 1.0, epsilon = 1e-12);
        assert_eq!(g.norm(), 0.0);
    }

    fn guidance_setup() -> (DiffusionPolicy<f64>, Mlp<f64>, Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = DiffusionConfig {
            clamp_gradient: ClampGradient::Exact,
            loss_reduction: LossReduction::Sum,
            steps: 3,
            beta_min: 0.1,
            beta_max: 1.0,
            hidden: 8,
            layers: 3,
            embed_dim: 4,
        };
        let mut p = DiffusionPolicy::<f64>::new(2, 2, &cfg, &mut rng).unwrap();
        // Non-zero output layer so the chain depends on theta.
        p.net.layers.last_mut().unwrap().w.mapv_inplace(|_| rng.gen_range(-0.3..0.3));
        let critic = mish_mlp(4, 8, 3, 1, Activation::Identity, &mut rng);
        let s = array![[0.3, -0.2], [0.1, 0.5], [-0.4, 0.0]];
        let a = array![[0.2, 0.1], [-0.5, 0.3], [0.0, -0.1]];
        (p, critic, s, a)
    }

    #[test]
    fn guidance_gradient_matches_differences() {
        let (p, critic, s, a) = guidance_setup();
        let mut g = Gradients::zeros_like(&p.net);
        p.q_guidance(&critic, s.view(), a.view(), &mut ChaCha8Rng::seed_from_u64(8), Some((&mut g, 1.0))).unwrap();
        let numeric = numeric_gradient(&p.net.flatten_params(), 1e-6, |theta| {
            let mut probe = p.clone();
            probe.net.set_flat_params(theta);
            probe.q_guidance(&critic, s.view(), a.view(), &mut ChaCha8Rng::seed_from_u64(8), None).unwrap()
        });
        let err = relative_error(&g.flatten(), &numeric);
        assert!(g.norm() > 0.0);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn guidance_is_critic_scale_invariant() {
        let (p, critic, s, a) = guidance_setup();
        let mut scaled = critic.clone();
        let last = scaled.layers.last_mut().unwrap();
        last.w *= 10.0;
        last.b *= 10.0;
        let mut g1 = Gradients::zeros_like(&p.net);
        let mut g2 = Gradients::zeros_like(&p.net);
        let q1 = p.q_guidance(&critic, s.view(), a.view(), &mut ChaCha8Rng::seed_from_u64(9), Some((&mut g1, 1.0))).unwrap();
        let q2 = p.q_guidance(&scaled, s.view(), a.view(), &mut ChaCha8Rng::seed_from_u64(9), Some((&mut g2, 1.0))).unwrap();
        assert_abs_diff_eq!(q1, q2, epsilon = 1e-10);
        assert!(relative_error(&g1.flatten(), &g2.flatten()) < 1e-10);
    }

    #[test]
    fn combined_loss_composes() {
        let (p, critic, s, a) = guidance_setup();
        let seed = || ChaCha8Rng::seed_from_u64(10);
        let only = p.combined_loss(&critic, s.view(), a.view(), 0.0, &mut seed(), None).unwrap();
        assert_eq!(only.total, p.diffusion_loss(s.view(), a.view(), &mut seed(), None));
        let both = p.combined_loss(&critic, s.view(), a.view(), 1.0, &mut seed(), None).unwrap();
        let mut rng = seed();
        let ld = p.diffusion_loss(s.view(), a.view(), &mut rng, None);
        let q = p.q_guidance(&critic, s.view(), a.view(), &mut rng, None).unwrap();
        assert_abs_diff_eq!(both.total, ld - q, epsilon = 1e-12);
        assert!(both.denoise >= 0.0);
    }

    #[test]
    fn oracle_chain_recovers_a_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = DiffusionPolicy::<f64>::new(2, 3, &small_cfg(), &mut rng).unwrap();
        let target = [0.6, -0.4, 0.1];
        let s = Array2::from_elem((500, 2), 0.5);
        let out = p.sample_with(s.view(), &mut rng, |a, _, k| point_mass_noise(a, k, &target, &p.schedule)).unwrap();
        for row in out.rows() {
            for (x, t) in row.iter().zip(&target) {
                assert!((x - t).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn trained_net_concentrates_on_a_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = DiffusionConfig { hidden: 64, layers: 3, ..DiffusionConfig::default() };
        let mut p = DiffusionPolicy::<f32>::new(2, 3, &cfg, &mut rng).unwrap();
        let target = [0.6f32, -0.4, 0.1];
        let mut opt = Adam::new(&p.net, 2e-3);
        let s = Array2::from_elem((128, 2), 0.5f32);
        let a = Array2::from_shape_fn((128, 3), |(_, j)| target[j]);
        for _ in 0..2000 {
            let mut g = Gradients::zeros_like(&p.net);
            p.diffusion_loss(s.view(), a.view(), &mut rng, Some((&mut g, 1.0)));
            opt.update(&mut p.net, &g);
        }
        let out = p.sample(s.view(), &mut rng).unwrap();
        let mut errs: Vec<f32> = out
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(&target).map(|(x, t)| (x - t).abs()).fold(0.0, f32::max))
            .collect();
        errs.sort_by(f32::total_cmp);
        assert!(errs[errs.len() / 2] < 0.05, "median L-inf error {}", errs[errs.len() / 2]);
    }
}
