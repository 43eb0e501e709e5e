//! Online diffusion-policy learner: replay, twin critics with targets,
//! guided policy updates and soft target tracking.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{mish_mlp, DiffusionConfig, DiffusionPolicy};
use crate::domain::{quantize, PolicyMode};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{gradient_tensors, gradients_from_tensors, mlp_from_tensors, mlp_tensors, read_tensors, write_tensors};
use crate::nn::{hcat, Activation, Adam, Gradients, Mlp};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Minibatch in row-major tensors.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub states: Array2<T>,
    pub actions: Array2<T>,
    pub rewards: Array1<T>,
    pub next_states: Array2<T>,
}

/// Bounded ring of transitions; the oldest entry is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayDataset {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    inserted: u64,
}

impl ReplayDataset {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Uniform sampling with replacement.
    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch<T>> {
        if self.items.len() < batch || batch == 0 {
            return Err(Error::Config(format!("cannot draw {batch} samples from {} transitions", self.items.len())));
        }
        let picks: Vec<&Transition> = (0..batch).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect();
        let sd = picks[0].state.len();
        let ad = picks[0].action.len();
        Ok(Batch {
            states: Array2::from_shape_fn((batch, sd), |(i, j)| T::of(picks[i].state[j])),
            actions: Array2::from_shape_fn((batch, ad), |(i, j)| T::of(picks[i].action[j])),
            rewards: Array1::from_shape_fn(batch, |i| T::of(picks[i].reward)),
            next_states: Array2::from_shape_fn((batch, sd), |(i, j)| T::of(picks[i].next_state[j])),
        })
    }

    /// Order-sensitive hash of the stored contents.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.inserted.hash(&mut h);
        for t in self.iter() {
            for v in t.state.iter().chain(&t.action).chain(std::iter::once(&t.reward)).chain(&t.next_state) {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Two online critics and their targets, each mapping `[s, a]` to a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticPair<T> {
    pub q1: Mlp<T>,
    pub q2: Mlp<T>,
    pub q1_target: Mlp<T>,
    pub q2_target: Mlp<T>,
}

pub fn critic_input<T: Scalar>(s: ArrayView2<T>, a: ArrayView2<T>) -> Array2<T> {
    hcat(&[s.reborrow(), a.reborrow()])
}

fn column<T: Scalar>(q: Array2<T>) -> Array1<T> {
    q.column(0).to_owned()
}

/// Reinforcement target `r + gamma * min(q1', q2')`.
pub fn bellman_target<T: Scalar>(rewards: &Array1<T>, min_next_q: &Array1<T>, gamma: f64) -> Array1<T> {
    rewards + &(min_next_q * T::of(gamma))
}

impl<T: Scalar> CriticPair<T> {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let q1 = mish_mlp(input_dim, hidden, layers, 1, Activation::Identity, rng);
        let q2 = mish_mlp(input_dim, hidden, layers, 1, Activation::Identity, rng);
        Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
        }
    }

    pub fn q1_values(&self, s: ArrayView2<T>, a: ArrayView2<T>) -> Array1<T> {
        column(self.q1.forward(critic_input(s, a).view()))
    }

    /// Elementwise minimum of both target critics.
    pub fn min_target(&self, s: ArrayView2<T>, a: ArrayView2<T>) -> Array1<T> {
        let x = critic_input(s, a);
        let t1 = self.q1_target.forward(x.view());
        let t2 = self.q2_target.forward(x.view());
        Array1::from_shape_fn(x.nrows(), |i| t1[[i, 0]].min(t2[[i, 0]]))
    }

    /// Sum over both critics of the mean squared error to `y`. Gradients of
    /// each critic's term are added into the matching accumulator.
    pub fn loss(&self, s: ArrayView2<T>, a: ArrayView2<T>, y: &Array1<T>, grads: Option<(&mut Gradients<T>, &mut Gradients<T>)>) -> f64 {
        let x = critic_input(s, a);
        let n = x.nrows().max(1) as f64;
        let mse = |q: &Array2<T>| q.column(0).iter().zip(y).map(|(q, y)| (q.to_f64_lossy() - y.to_f64_lossy()).powi(2)).sum::<f64>() / n;
        match grads {
            None => mse(&self.q1.forward(x.view())) + mse(&self.q2.forward(x.view())),
            Some((g1, g2)) => {
                let mut total = 0.0;
                for (net, g) in [(&self.q1, g1), (&self.q2, g2)] {
                    let (q, cache) = net.forward_cached(x.view());
                    total += mse(&q);
                    let up = Array2::from_shape_fn(q.raw_dim(), |(i, _)| (q[[i, 0]] - y[i]) * T::of(2.0 / n));
                    net.backward(&cache, &up, Some(g));
                }
                total
            }
        }
    }

    /// Soft update of both targets toward the online critics.
    pub fn track(&mut self, rho: f64) {
        self.q1_target.ema_toward(&self.q1, T::of(rho));
        self.q2_target.ema_toward(&self.q2, T::of(rho));
    }
}

/// Target values with next actions drawn from the target policy.
pub fn target_q<T: Scalar, R: Rng + ?Sized>(
    batch: &Batch<T>,
    critics: &CriticPair<T>,
    target_policy: &DiffusionPolicy<T>,
    gamma: f64,
    rng: &mut R,
) -> Result<Array1<T>> {
    let next = target_policy.sample(batch.next_states.view(), rng)?;
    let min_q = critics.min_target(batch.next_states.view(), next.view());
    Ok(bellman_target(&batch.rewards, &min_q, gamma))
}

/// `target <- rho * online + (1 - rho) * target`.
pub fn ema_update<T: Scalar>(target: &mut Mlp<T>, online: &Mlp<T>, rho: f64) {
    target.ema_toward(online, T::of(rho));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub diffusion: DiffusionConfig,
    pub critic_hidden: usize,
    pub critic_layers: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub eta: f64,
    pub rho: f64,
    /// Multiplier applied to environment rewards before they are stored.
    pub reward_scale: f64,
    /// Gradient steps per collected slot.
    pub updates_per_slot: usize,
    pub mode: PolicyMode,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            diffusion: DiffusionConfig::default(),
            critic_hidden: 256,
            critic_layers: 4,
            lr: 3e-4,
            batch_size: 64,
            replay_capacity: 10_000,
            eta: 1.0,
            rho: 0.05,
            reward_scale: 0.1,
            updates_per_slot: 1,
            mode: PolicyMode::Soft,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad(format!("need 0 < batch_size <= replay_capacity, got {} and {}", self.batch_size, self.replay_capacity));
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.rho) || self.eta < 0.0 || !(self.reward_scale > 0.0) {
            return bad("lr and reward_scale must be positive, rho in [0, 1], eta non-negative".into());
        }
        if self.critic_layers == 0 || self.diffusion.layers == 0 {
            return bad("networks need at least one layer".into());
        }
        Ok(())
    }
}

/// Losses and statistics of one gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub critic_loss: f64,
    pub denoise_loss: f64,
    pub guidance: f64,
    pub q_mean: f64,
    pub target_mean: f64,
}

/// One environment slot plus the training it triggered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub reward: f64,
    pub act_ms: f64,
    pub train: Option<TrainMetrics>,
}

pub struct XDiffAgent<T: Scalar = f32> {
    pub cfg: AgentConfig,
    pub gamma: f64,
    pub policy: DiffusionPolicy<T>,
    pub target_policy: DiffusionPolicy<T>,
    pub critics: CriticPair<T>,
    opt_policy: Adam<T>,
    opt_q1: Adam<T>,
    opt_q2: Adam<T>,
    pub replay: ReplayDataset,
    rng: ChaCha8Rng,
    act_latencies_ms: Vec<f64>,
    iterations: u64,
}

impl<T: Scalar> XDiffAgent<T> {
    pub fn new(state_dim: usize, action_dim: usize, gamma: f64, cfg: AgentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = DiffusionPolicy::new(state_dim, action_dim, &cfg.diffusion, &mut rng)?;
        let critics = CriticPair::new(state_dim + action_dim, cfg.critic_hidden, cfg.critic_layers, &mut rng);
        Ok(Self {
            opt_policy: Adam::new(&policy.net, cfg.lr),
            opt_q1: Adam::new(&critics.q1, cfg.lr),
            opt_q2: Adam::new(&critics.q2, cfg.lr),
            target_policy: policy.clone(),
            policy,
            critics,
            replay: ReplayDataset::new(cfg.replay_capacity),
            rng,
            act_latencies_ms: Vec::new(),
            iterations: 0,
            gamma,
            cfg,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.policy.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.policy.action_dim
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Samples an action from the target policy, quantized in hard mode.
    pub fn act(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim() {
            return Err(Error::Shape {
                what: "state",
                expected: self.state_dim(),
                got: state.len(),
            });
        }
        let start = Instant::now();
        let s: Vec<T> = state.iter().map(|&v| T::of(v)).collect();
        let raw = self.target_policy.sample_one(&s, &mut self.rng)?;
        self.act_latencies_ms.push(start.elapsed().as_secs_f64() * 1e3);
        Ok(raw
            .into_iter()
            .map(|v| {
                let v = v.to_f64_lossy();
                if self.cfg.mode == PolicyMode::Hard {
                    quantize(v)
                } else {
                    v
                }
            })
            .collect())
    }

    pub fn act_latencies_ms(&self) -> &[f64] {
        &self.act_latencies_ms
    }

    /// Stores a transition with the reward scaled for learning.
    pub fn record(&mut self, state: Vec<f64>, action: Vec<f64>, reward: f64, next_state: Vec<f64>) {
        self.replay.push(Transition {
            state,
            action,
            reward: reward * self.cfg.reward_scale,
            next_state,
        });
    }

    /// One critic step and one policy step; `None` until a full minibatch exists.
    pub fn train_step(&mut self) -> Result<Option<TrainMetrics>> {
        if self.replay.len() < self.cfg.batch_size {
            return Ok(None);
        }
        let batch: Batch<T> = self.replay.sample(self.cfg.batch_size, &mut self.rng)?;
        let y = target_q(&batch, &self.critics, &self.target_policy, self.gamma, &mut self.rng)?;

        let mut g1 = Gradients::zeros_like(&self.critics.q1);
        let mut g2 = Gradients::zeros_like(&self.critics.q2);
        let critic_loss = self.critics.loss(batch.states.view(), batch.actions.view(), &y, Some((&mut g1, &mut g2)));
        check_finite("critic loss", critic_loss)?;
        self.opt_q1.update(&mut self.critics.q1, &g1);
        self.opt_q2.update(&mut self.critics.q2, &g2);

        let mut gp = Gradients::zeros_like(&self.policy.net);
        let loss = self.policy.combined_loss(
            &self.critics.q1,
            batch.states.view(),
            batch.actions.view(),
            self.cfg.eta,
            &mut self.rng,
            Some(&mut gp),
        )?;
        check_finite("policy loss", loss.total)?;
        self.opt_policy.update(&mut self.policy.net, &gp);

        self.target_policy.net.ema_toward(&self.policy.net, T::of(self.cfg.rho));
        self.critics.track(self.cfg.rho);

        let q = self.critics.q1_values(batch.states.view(), batch.actions.view());
        Ok(Some(TrainMetrics {
            critic_loss,
            denoise_loss: loss.denoise,
            guidance: loss.guidance,
            q_mean: mean(&q),
            target_mean: mean(&y),
        }))
    }

    /// Plays `batch_size` slots with the target policy without training.
    pub fn warmup<E: Environment + ?Sized>(&mut self, env: &mut E) -> Result<()> {
        while self.replay.len() < self.cfg.batch_size {
            self.collect(env)?;
        }
        Ok(())
    }

    fn collect<E: Environment + ?Sized>(&mut self, env: &mut E) -> Result<(f64, f64)> {
        let s = env.state();
        let a = self.act(&s)?;
        let act_ms = self.act_latencies_ms.last().copied().unwrap_or(0.0);
        let step = env.step(&a)?;
        self.record(s, a, step.reward, step.next_state);
        Ok((step.reward, act_ms))
    }

    /// Collects one slot, then trains `updates_per_slot` times once the
    /// replay holds a minibatch.
    pub fn train_iteration<E: Environment + ?Sized>(&mut self, env: &mut E) -> Result<IterationMetrics> {
        let (reward, act_ms) = self.collect(env)?;
        let mut train = None;
        for _ in 0..self.cfg.updates_per_slot {
            train = self.train_step()?.or(train);
        }
        self.iterations += 1;
        Ok(IterationMetrics {
            iteration: self.iterations,
            reward,
            act_ms,
            train,
        })
    }

    /// Writes networks, optimizer moments and a replay digest.
    pub fn save_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        let mut tensors = Vec::new();
        for net in [&self.policy.net, &self.target_policy.net, &self.critics.q1, &self.critics.q2, &self.critics.q1_target, &self.critics.q2_target] {
            tensors.extend(mlp_tensors(net));
        }
        for opt in [&self.opt_policy, &self.opt_q1, &self.opt_q2] {
            tensors.extend(gradient_tensors(&opt.m));
            tensors.extend(gradient_tensors(&opt.v));
        }
        let digest = self.replay.digest();
        // Integers split into 16-bit words so any element width stores them exactly.
        let words = |x: u64| (0..4).map(move |i| T::of(((x >> (16 * i)) & 0xFFFF) as f64));
        let meta: Array1<T> = words(self.opt_policy.step)
            .chain(words(self.opt_q1.step))
            .chain(words(self.opt_q2.step))
            .chain(words(self.iterations))
            .chain(words(self.replay.len() as u64))
            .chain(words(digest))
            .collect();
        tensors.push(meta.into_dyn());
        write_tensors(w, &tensors)
    }

    /// Restores networks and optimizers. The replay contents are not stored;
    /// the returned digest identifies the replay the checkpoint was taken with.
    pub fn load_checkpoint<R: Read>(&mut self, r: R) -> Result<u64> {
        let tensors = read_tensors::<T, _>(r)?;
        let mut rest = tensors.as_slice();
        let mut nets = Vec::new();
        for _ in 0..6 {
            let (net, tail) = mlp_from_tensors(rest)?;
            nets.push(net);
            rest = tail;
        }
        let shapes = [&self.policy.net, &self.target_policy.net, &self.critics.q1, &self.critics.q2, &self.critics.q1_target, &self.critics.q2_target];
        for (loaded, current) in nets.iter().zip(shapes) {
            if loaded.num_params() != current.num_params() || loaded.input_dim() != current.input_dim() {
                return Err(Error::Checkpoint("network shapes differ from this agent".into()));
            }
        }
        let mut moments = Vec::new();
        for like in [&nets[0], &nets[2], &nets[3]] {
            let (m, tail) = gradients_from_tensors(like, rest)?;
            let (v, tail) = gradients_from_tensors(like, tail)?;
            moments.push((m, v));
            rest = tail;
        }
        let meta = rest.first().ok_or_else(|| Error::Checkpoint("missing metadata".into()))?;
        if meta.len() != 24 {
            return Err(Error::Checkpoint("bad metadata length".into()));
        }
        let m: Vec<u64> = meta.iter().map(|v| v.to_f64_lossy() as u64).collect();
        let word = |i: usize| (0..4).fold(0u64, |acc, j| acc | (m[4 * i + j] << (16 * j)));
        let mut nets = nets.into_iter();
        self.policy.net = nets.next().unwrap_or_else(|| unreachable!());
        self.target_policy.net = nets.next().unwrap_or_else(|| unreachable!());
        self.critics.q1 = nets.next().unwrap_or_else(|| unreachable!());
        self.critics.q2 = nets.next().unwrap_or_else(|| unreachable!());
        self.critics.q1_target = nets.next().unwrap_or_else(|| unreachable!());
        self.critics.q2_target = nets.next().unwrap_or_else(|| unreachable!());
        for (i, ((mo, vo), opt)) in moments.into_iter().zip([&mut self.opt_policy, &mut self.opt_q1, &mut self.opt_q2]).enumerate() {
            opt.m = mo;
            opt.v = vo;
            opt.step = word(i);
        }
        self.iterations = word(3);
        Ok(word(5))
    }
}

/// Flat-vector learner interface shared by xDiff and the ablations.
pub trait Learner {
    fn act(&mut self, state: &[f64]) -> Result<Vec<f64>>;
    /// Stores a transition; the reward is the raw environment reward.
    fn record(&mut self, state: Vec<f64>, action: Vec<f64>, reward: f64, next_state: Vec<f64>);
    fn train_step(&mut self) -> Result<Option<TrainMetrics>>;
    fn updates_per_slot(&self) -> usize {
        1
    }
    fn act_latencies_ms(&self) -> &[f64] {
        &[]
    }
    fn save_checkpoint(&self, _w: &mut dyn Write) -> Result<bool> {
        Ok(false)
    }
}

impl<T: Scalar> Learner for XDiffAgent<T> {
    fn act(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        XDiffAgent::act(self, state)
    }

    fn record(&mut self, state: Vec<f64>, action: Vec<f64>, reward: f64, next_state: Vec<f64>) {
        XDiffAgent::record(self, state, action, reward, next_state)
    }

    fn train_step(&mut self) -> Result<Option<TrainMetrics>> {
        XDiffAgent::train_step(self)
    }

    fn updates_per_slot(&self) -> usize {
        self.cfg.updates_per_slot
    }

    fn act_latencies_ms(&self) -> &[f64] {
        &self.act_latencies_ms
    }

    fn save_checkpoint(&self, w: &mut dyn Write) -> Result<bool> {
        XDiffAgent::save_checkpoint(self, w).map(|_| true)
    }
}

/// Runs any learner on a flat environment for `iterations` slots and
/// returns the raw per-slot rewards.
pub fn run_learner<L: Learner + ?Sized, E: Environment + ?Sized>(learner: &mut L, env: &mut E, iterations: usize) -> Result<Vec<f64>> {
    let mut rewards = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let s = env.state();
        let a = learner.act(&s)?;
        let step = env.step(&a)?;
        learner.record(s, a, step.reward, step.next_state);
        for _ in 0..learner.updates_per_slot() {
            learner.train_step()?;
        }
        rewards.push(step.reward);
    }
    Ok(rewards)
}

pub(crate) fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericFailure(format!("{what} is {v}")))
    }
}

pub(crate) fn mean<T: Scalar>(v: &Array1<T>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().map(|x| x.to_f64_lossy()).sum::<f64>() / v.len() as f64
    }
}

/// Median of a latency record.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
