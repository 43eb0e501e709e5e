//! Deterministic actor-critic with a tanh actor and twin critics.

use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{bellman_target, check_finite, critic_input, mean, CriticPair, Learner, ReplayDataset, TrainMetrics, Transition};
use crate::diffusion::mish_mlp;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Gradients, Mlp};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub rho: f64,
    pub reward_scale: f64,
    pub noise_sigma: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            layers: 4,
            lr: 3e-4,
            batch_size: 64,
            replay_capacity: 10_000,
            rho: 0.05,
            reward_scale: 0.1,
            noise_sigma: 0.1,
        }
    }
}

pub struct Ddpg<T: Scalar = f32> {
    pub cfg: DdpgConfig,
    pub gamma: f64,
    pub actor: Mlp<T>,
    pub actor_target: Mlp<T>,
    pub critics: CriticPair<T>,
    opt_actor: Adam<T>,
    opt_q1: Adam<T>,
    opt_q2: Adam<T>,
    pub replay: ReplayDataset,
    state_dim: usize,
    rng: ChaCha8Rng,
    latencies: Vec<f64>,
}

impl<T: Scalar> Ddpg<T> {
    pub fn new(state_dim: usize, action_dim: usize, gamma: f64, cfg: DdpgConfig, seed: u64) -> Result<Self> {
        if cfg.batch_size == 0 || cfg.replay_capacity < cfg.batch_size {
            return Err(Error::Config("ddpg needs 0 < batch_size <= replay_capacity".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = mish_mlp(state_dim, cfg.hidden, cfg.layers, action_dim, Activation::Tanh, &mut rng);
        let critics = CriticPair::new(state_dim + action_dim, cfg.hidden, cfg.layers, &mut rng);
        Ok(Self {
            opt_actor: Adam::new(&actor, cfg.lr),
            opt_q1: Adam::new(&critics.q1, cfg.lr),
            opt_q2: Adam::new(&critics.q2, cfg.lr),
            actor_target: actor.clone(),
            actor,
            critics,
            replay: ReplayDataset::new(cfg.replay_capacity),
            state_dim,
            rng,
            latencies: Vec::new(),
            gamma,
            cfg,
        })
    }

    /// Noise-free actor output.
    pub fn deterministic(&self, state: &[f64]) -> Vec<f64> {
        let s = Array2::from_shape_fn((1, state.len()), |(_, j)| T::of(state[j]));
        self.actor.forward(s.view()).iter().map(|v| v.to_f64_lossy()).collect()
    }

    /// Mean `Q1(s, actor(s))`; when given, `scale * d/dtheta` of it is added
    /// into `grads`.
    pub fn actor_objective(&self, states: ArrayView2<T>, grads: Option<(&mut Gradients<T>, T)>) -> f64 {
        let (a, actor_cache) = self.actor.forward_cached(states);
        let x = critic_input(states, a.view());
        let (q, critic_cache) = self.critics.q1.forward_cached(x.view());
        let n = states.nrows().max(1) as f64;
        let value = q.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
        if let Some((acc, scale)) = grads {
            let up = Array2::from_elem(q.raw_dim(), T::of(1.0 / n) * scale);
            let g_in = self.critics.q1.backward(&critic_cache, &up, None);
            let g_a = g_in.slice(s![.., self.state_dim..]).to_owned();
            self.actor.backward(&actor_cache, &g_a, Some(acc));
        }
        value
    }
}

impl<T: Scalar> Learner for Ddpg<T> {
    fn act(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        let start = Instant::now();
        let sigma = self.cfg.noise_sigma;
        let a = self
            .deterministic(state)
            .into_iter()
            .map(|v| (v + sigma * f64::normal(&mut self.rng)).clamp(-1.0, 1.0))
            .collect::<Vec<_>>();
        self.latencies.push(start.elapsed().as_secs_f64() * 1e3);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure("non-finite ddpg action".into()));
        }
        Ok(a)
    }

    fn record(&mut self, state: Vec<f64>, action: Vec<f64>, reward: f64, next_state: Vec<f64>) {
        self.replay.push(Transition {
            state,
            action,
            reward: reward * self.cfg.reward_scale,
            next_state,
        });
    }

    fn train_step(&mut self) -> Result<Option<TrainMetrics>> {
        if self.replay.len() < self.cfg.batch_size {
            return Ok(None);
        }
        let batch = self.replay.sample::<T, _>(self.cfg.batch_size, &mut self.rng)?;
        let next_a = self.actor_target.forward(batch.next_states.view());
        let y = bellman_target(&batch.rewards, &self.critics.min_target(batch.next_states.view(), next_a.view()), self.gamma);
        let mut g1 = Gradients::zeros_like(&self.critics.q1);
        let mut g2 = Gradients::zeros_like(&self.critics.q2);
        let critic_loss = self.critics.loss(batch.states.view(), batch.actions.view(), &y, Some((&mut g1, &mut g2)));
        check_finite("ddpg critic loss", critic_loss)?;
        self.opt_q1.update(&mut self.critics.q1, &g1);
        self.opt_q2.update(&mut self.critics.q2, &g2);

        let mut ga = Gradients::zeros_like(&self.actor);
        // Descend on -Q.
        let objective = self.actor_objective(batch.states.view(), Some((&mut ga, -T::one())));
        self.opt_actor.update(&mut self.actor, &ga);

        self.actor_target.ema_toward(&self.actor, T::of(self.cfg.rho));
        self.critics.track(self.cfg.rho);
        Ok(Some(TrainMetrics {
            critic_loss,
            denoise_loss: 0.0,
            guidance: objective,
            q_mean: mean(&self.critics.q1_values(batch.states.view(), batch.actions.view())),
            target_mean: mean(&y),
        }))
    }

    fn act_latencies_ms(&self) -> &[f64] {
        &self.latencies
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{numeric_gradient, relative_error};
    use ndarray::array;

    #[test]
    fn zero_actor_outputs_zero() {
        let cfg = DdpgConfig { hidden: 8, layers: 3, ..DdpgConfig::default() };
        let mut d = Ddpg::<f64>::new(3, 4, 0.9, cfg, 1).unwrap();
        for l in &mut d.actor.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        assert_eq!(d.deterministic(&[0.3, -1.0, 2.0]), vec![0.0; 4]);
        let noisy = d.act(&[0.3, -1.0, 2.0]).unwrap();
        assert!(noisy.iter().all(|v| v.abs() <= 1.0) && noisy.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn actor_gradient_matches_differences() {
        let cfg = DdpgConfig { hidden: 6, layers: 3, ..DdpgConfig::default() };
        let d = Ddpg::<f64>::new(3, 2, 0.9, cfg, 2).unwrap();
        let s = array![[0.2, -0.4, 0.9], [1.0, 0.3, -0.2]];
        let mut g = Gradients::zeros_like(&d.actor);
        d.actor_objective(s.view(), Some((&mut g, 1.0)));
        let numeric = numeric_gradient(&d.actor.flatten_params(), 1e-6, |theta| {
            let mut probe = Ddpg::<f64>::new(3, 2, 0.9, d.cfg.clone(), 2).unwrap();
            probe.actor.set_flat_params(theta);
            probe.actor_objective(s.view(), None)
        });
        assert!(relative_error(&g.flatten(), &numeric) < 1e-4);
    }
}
