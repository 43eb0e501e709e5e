//! Double DQN over the `{-1, 0, +1}` preference lattice with one 3-way head
//! per action coordinate.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{check_finite, Learner, ReplayDataset, TrainMetrics, Transition};
use crate::diffusion::mish_mlp;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Gradients, Mlp};
use crate::scalar::Scalar;

/// Lattice values in head order; argmax ties go to the lowest index.
pub const LATTICE: [f64; 3] = [-1.0, 0.0, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdqnConfig {
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub rho: f64,
    pub reward_scale: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Slots over which epsilon decays linearly.
    pub epsilon_decay_slots: u64,
}

impl Default for DdqnConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            layers: 4,
            lr: 3e-4,
            batch_size: 64,
            replay_capacity: 10_000,
            rho: 0.05,
            reward_scale: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_slots: 1000,
        }
    }
}

pub struct Ddqn<T: Scalar = f32> {
    pub cfg: DdqnConfig,
    pub gamma: f64,
    pub net: Mlp<T>,
    pub target: Mlp<T>,
    opt: Adam<T>,
    pub replay: ReplayDataset,
    action_dim: usize,
    rng: ChaCha8Rng,
    acted: u64,
    latencies: Vec<f64>,
}

fn lattice_index(v: f64) -> usize {
    (v.round().clamp(-1.0, 1.0) + 1.0) as usize
}

/// Per-coordinate argmax of a `3 * dim` row.
pub fn greedy_indices<T: Scalar>(row: &[T]) -> Vec<usize> {
    row.chunks_exact(3)
        .map(|c| {
            let mut best = 0;
            for i in 1..3 {
                if c[i] > c[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

impl<T: Scalar> Ddqn<T> {
    pub fn new(state_dim: usize, action_dim: usize, gamma: f64, cfg: DdqnConfig, seed: u64) -> Result<Self> {
        if cfg.batch_size == 0 || cfg.replay_capacity < cfg.batch_size {
            return Err(Error::Config("ddqn needs 0 < batch_size <= replay_capacity".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = mish_mlp(state_dim, cfg.hidden, cfg.layers, 3 * action_dim, Activation::Identity, &mut rng);
        Ok(Self {
            opt: Adam::new(&net, cfg.lr),
            target: net.clone(),
            net,
            replay: ReplayDataset::new(cfg.replay_capacity),
            action_dim,
            rng,
            acted: 0,
            latencies: Vec::new(),
            gamma,
            cfg,
        })
    }

    pub fn epsilon(&self) -> f64 {
        let frac = if self.cfg.epsilon_decay_slots == 0 {
            1.0
        } else {
            (self.acted as f64 / self.cfg.epsilon_decay_slots as f64).min(1.0)
        };
        self.cfg.epsilon_start + (self.cfg.epsilon_end - self.cfg.epsilon_start) * frac
    }

    pub fn greedy(&self, state: &[f64]) -> Vec<f64> {
        let s = Array2::from_shape_fn((1, state.len()), |(_, j)| T::of(state[j]));
        let q = self.net.forward(s.view());
        greedy_indices(q.as_slice().unwrap_or(&[])).into_iter().map(|i| LATTICE[i]).collect()
    }

    fn td_target(&self, rewards: &Array1<T>, next: ArrayView2<T>) -> Array2<T> {
        let online = self.net.forward(next);
        let target = self.target.forward(next);
        let b = next.nrows();
        let mut y = Array2::zeros((b, self.action_dim));
        for i in 0..b {
            let row = online.row(i);
            let picks = greedy_indices(row.as_slice().unwrap_or(&row.to_vec()));
            for (j, &p) in picks.iter().enumerate() {
                y[[i, j]] = rewards[i] + T::of(self.gamma) * target[[i, 3 * j + p]];
            }
        }
        y
    }
}

impl<T: Scalar> Learner for Ddqn<T> {
    fn act(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        let start = Instant::now();
        let eps = self.epsilon();
        self.acted += 1;
        let action = if self.rng.gen::<f64>() < eps {
            (0..self.action_dim).map(|_| LATTICE[self.rng.gen_range(0..3)]).collect()
        } else {
            self.greedy(state)
        };
        self.latencies.push(start.elapsed().as_secs_f64() * 1e3);
        Ok(action)
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
        let y = self.td_target(&batch.rewards, batch.next_states.view());
        let (q, cache) = self.net.forward_cached(batch.states.view());
        let (b, a) = (y.nrows(), self.action_dim);
        let norm = (b * a) as f64;
        let mut up = Array2::zeros(q.raw_dim());
        let (mut loss, mut q_sum) = (0.0, 0.0);
        for i in 0..b {
            for j in 0..a {
                let col = 3 * j + lattice_index(batch.actions[[i, j]].to_f64_lossy());
                let diff = q[[i, col]] - y[[i, j]];
                loss += diff.to_f64_lossy().powi(2) / norm;
                q_sum += q[[i, col]].to_f64_lossy() / norm;
                up[[i, col]] = diff * T::of(2.0 / norm);
            }
        }
        check_finite("ddqn loss", loss)?;
        let mut g = Gradients::zeros_like(&self.net);
        self.net.backward(&cache, &up, Some(&mut g));
        self.opt.update(&mut self.net, &g);
        self.target.ema_toward(&self.net, T::of(self.cfg.rho));
        Ok(Some(TrainMetrics {
            critic_loss: loss,
            denoise_loss: 0.0,
            guidance: 0.0,
            q_mean: q_sum,
            target_mean: y.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / norm,
        }))
    }

    fn act_latencies_ms(&self) -> &[f64] {
        &self.latencies
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::run_learner;
    use crate::env::{EnvStep, Environment};

    #[test]
    fn full_exploration_is_uniform() {
        let cfg = DdqnConfig { hidden: 8, layers: 2, epsilon_start: 1.0, epsilon_end: 1.0, ..DdqnConfig::default() };
        let mut d = Ddqn::<f32>::new(2, 50, 0.9, cfg, 1).unwrap();
        let mut counts = [0usize; 3];
        for _ in 0..200 {
            for v in d.act(&[0.0, 0.0]).unwrap() {
                counts[lattice_index(v)] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn constant_q_breaks_ties_by_index() {
        let cfg = DdqnConfig { hidden: 8, layers: 2, epsilon_start: 0.0, epsilon_end: 0.0, ..DdqnConfig::default() };
        let mut d = Ddqn::<f64>::new(2, 4, 0.9, cfg, 2).unwrap();
        for l in &mut d.net.layers {
            l.w.fill(0.0);
            l.b.fill(0.5);
        }
        assert_eq!(d.act(&[0.3, 0.1]).unwrap(), vec![-1.0; 4]);
        assert_eq!(greedy_indices(&[0.0, 2.0, 2.0, 1.0, 0.0, 1.0]), vec![1, 0]);
    }

    /// Stateless two-coordinate bandit with reward `-(a0 - 1)^2 - a1^2`.
    struct Tabular;

    impl Environment for Tabular {
        fn state_dim(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            2
        }
        fn state(&self) -> Vec<f64> {
            vec![0.0]
        }
        fn step(&mut self, a: &[f64]) -> Result<EnvStep> {
            Ok(EnvStep {
                next_state: vec![0.0],
                reward: -(a[0] - 1.0).powi(2) - a[1].powi(2),
            })
        }
    }

    #[test]
    fn converges_on_a_tabular_task() {
        // Exhaustive enumeration of the 9 lattice actions.
        let best = LATTICE
            .iter()
            .flat_map(|&x| LATTICE.iter().map(move |&y| (x, y)))
            .max_by(|a, b| (-(a.0 - 1.0f64).powi(2) - a.1 * a.1).total_cmp(&(-(b.0 - 1.0f64).powi(2) - b.1 * b.1)))
            .unwrap();
        let cfg = DdqnConfig {
            hidden: 32,
            layers: 2,
            lr: 3e-3,
            batch_size: 32,
            epsilon_decay_slots: 300,
            ..DdqnConfig::default()
        };
        let mut d = Ddqn::<f32>::new(1, 2, 0.5, cfg, 3).unwrap();
        run_learner(&mut d, &mut Tabular, 600).unwrap();
        assert_eq!(d.greedy(&[0.0]), vec![best.0, best.1]);
    }
}
