//! Policy providers: xDiff and its ablations behind one interface, plus the
//! rule-based interference baselines.

mod ddpg;
mod ddqn;

pub use ddpg::{Ddpg, DdpgConfig};
pub use ddqn::{Ddqn, DdqnConfig};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, Learner, TrainMetrics, XDiffAgent};
use crate::domain::{NetworkConfig, PolicyMode, PreferencePolicy, RewardBreakdown};
use crate::env::{SlotObservation, FEATURES_PER_UE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProviderKind {
    #[serde(rename = "xdiff")]
    XDiff,
    #[serde(rename = "xdiff-hard")]
    XDiffHard,
    #[serde(rename = "ddqn")]
    Ddqn,
    #[serde(rename = "ddpg")]
    Ddpg,
    #[serde(rename = "cira")]
    Cira,
    #[serde(rename = "otfr")]
    Otfr,
    #[serde(rename = "csrs")]
    Csrs,
}

impl ProviderKind {
    pub const ALL: [ProviderKind; 7] = [
        ProviderKind::XDiff,
        ProviderKind::XDiffHard,
        ProviderKind::Ddqn,
        ProviderKind::Ddpg,
        ProviderKind::Cira,
        ProviderKind::Otfr,
        ProviderKind::Csrs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProviderKind::XDiff => "xdiff",
            ProviderKind::XDiffHard => "xdiff-hard",
            ProviderKind::Ddqn => "ddqn",
            ProviderKind::Ddpg => "ddpg",
            ProviderKind::Cira => "cira",
            ProviderKind::Otfr => "otfr",
            ProviderKind::Csrs => "csrs",
        }
    }

    pub fn learns(self) -> bool {
        matches!(self, ProviderKind::XDiff | ProviderKind::XDiffHard | ProviderKind::Ddqn | ProviderKind::Ddpg)
    }

    /// Scheduler mode the provider's policies are meant for.
    pub fn mode(self) -> PolicyMode {
        match self {
            ProviderKind::XDiffHard | ProviderKind::Otfr => PolicyMode::Hard,
            _ => PolicyMode::Soft,
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProviderKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown provider `{s}`")))
    }
}

/// Uniform interface between the controller loop and a policy source.
///
/// Each slot the loop calls `propose`, runs the slot under that policy, and
/// hands the resulting observation and reward to `observe`.
pub trait PolicyProvider {
    fn kind(&self) -> ProviderKind;

    fn mode(&self) -> PolicyMode {
        self.kind().mode()
    }

    fn propose(&mut self) -> Result<PreferencePolicy>;

    fn observe(&mut self, obs: &SlotObservation, reward: &RewardBreakdown) -> Result<Option<TrainMetrics>>;

    fn act_latencies_ms(&self) -> &[f64] {
        &[]
    }

    /// Writes a checkpoint if the provider has learned state.
    fn save_checkpoint(&self, _w: &mut dyn Write) -> Result<bool> {
        Ok(false)
    }
}

/// Pure PF everywhere.
pub fn cira_propose(network: &NetworkConfig) -> PreferencePolicy {
    PreferencePolicy::zeros(network)
}

/// Groups `floor(kG/N)..floor((k+1)G/N)` of cell `k`.
pub fn otfr_groups(cell: usize, num_cells: usize, num_groups: usize) -> std::ops::Range<usize> {
    (cell * num_groups / num_cells)..((cell + 1) * num_groups / num_cells)
}

/// Static one-third reuse: +1 on the cell's own band, -1 elsewhere.
pub fn otfr_propose(network: &NetworkConfig) -> PreferencePolicy {
    let mut p = PreferencePolicy::filled(network, -1.0);
    for cell in 0..network.num_cells {
        for g in otfr_groups(cell, network.num_cells, network.num_rb_groups) {
            for ue in 0..network.ues_per_cell[cell] {
                p.set(cell, ue, g, 1.0);
            }
        }
    }
    p
}

/// Linear-interpolation percentile of `values` at fraction `q`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Splits `total` units proportionally to `weights` by largest remainder;
/// ties go to the lower index.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Center/edge split. Edge UEs (slot SINR below the 33rd percentile) get
/// disjoint contiguous group sets sized by demand; they avoid every other
/// edge set. Center UEs stay neutral except on other cells' edge sets.
pub fn csrs_propose(network: &NetworkConfig, obs: &SlotObservation) -> PreferencePolicy {
    let n = network.total_ues();
    let mut policy = PreferencePolicy::zeros(network);
    if obs.ues.len() != n {
        return policy;
    }
    let sinr: Vec<f64> = obs.ues.iter().map(|u| u.sinr_db).collect();
    let threshold = percentile(&sinr, 1.0 / 3.0);
    let edge: Vec<usize> = (0..n).filter(|&u| sinr[u] < threshold).collect();
    let demands: Vec<f64> = edge.iter().map(|&u| obs.ues[u].demand_bps.unwrap_or(0.0)).collect();
    if edge.is_empty() || !(demands.iter().sum::<f64>() > 0.0) {
        return policy;
    }
    let sizes = largest_remainder(&demands, network.num_rb_groups);
    let cells = network.ue_cells();
    let mut owner = vec![None; network.num_rb_groups];
    let mut next = 0;
    for (i, &u) in edge.iter().enumerate() {
        for g in next..next + sizes[i] {
            owner[g] = Some(u);
        }
        next += sizes[i];
    }
    for u in 0..n {
        let cell = cells[u];
        let local = u - network.first_ue(cell);
        let is_edge = edge.contains(&u);
        for (g, o) in owner.iter().enumerate() {
            let v = match (*o, is_edge) {
                (Some(owner), true) if owner == u => 1.0,
                (Some(_), true) => -1.0,
                (Some(owner), false) if cells[owner] != cell => -1.0,
                _ => 0.0,
            };
            policy.set(cell, local, g, v);
        }
    }
    policy
}

pub struct StaticProvider {
    kind: ProviderKind,
    network: NetworkConfig,
    last: Option<SlotObservation>,
}

impl StaticProvider {
    pub fn new(kind: ProviderKind, network: NetworkConfig) -> Result<Self> {
        if kind.learns() {
            return Err(Error::Config(format!("{kind} is not a rule-based provider")));
        }
        Ok(Self { kind, network, last: None })
    }
}

impl PolicyProvider for StaticProvider {
    fn kind(&self) -> ProviderKind {
        self.kind
    }

    fn propose(&mut self) -> Result<PreferencePolicy> {
        Ok(match self.kind {
            ProviderKind::Otfr => otfr_propose(&self.network),
            ProviderKind::Csrs => match &self.last {
                Some(obs) => csrs_propose(&self.network, obs),
                None => cira_propose(&self.network),
            },
            _ => cira_propose(&self.network),
        })
    }

    fn observe(&mut self, obs: &SlotObservation, _reward: &RewardBreakdown) -> Result<Option<TrainMetrics>> {
        if self.kind == ProviderKind::Csrs {
            self.last = Some(obs.clone());
        }
        Ok(None)
    }
}

/// Adapts a flat-vector learner to the slot loop.
pub struct LearnerProvider<L> {
    kind: ProviderKind,
    network: NetworkConfig,
    pub learner: L,
    state: Vec<f64>,
    pending: Option<Vec<f64>>,
}

impl<L: Learner> LearnerProvider<L> {
    pub fn new(kind: ProviderKind, network: NetworkConfig, learner: L) -> Self {
        let state = vec![0.0; network.total_ues() * FEATURES_PER_UE];
        Self {
            kind,
            network,
            learner,
            state,
            pending: None,
        }
    }
}

impl<L: Learner> PolicyProvider for LearnerProvider<L> {
    fn kind(&self) -> ProviderKind {
        self.kind
    }

    fn propose(&mut self) -> Result<PreferencePolicy> {
        let action = self.learner.act(&self.state)?;
        let policy = PreferencePolicy::from_values(&self.network, action.clone())?;
        self.pending = Some(action);
        Ok(policy)
    }

    fn observe(&mut self, obs: &SlotObservation, reward: &RewardBreakdown) -> Result<Option<TrainMetrics>> {
        let next = obs.features.clone();
        if let Some(action) = self.pending.take() {
            let state = std::mem::replace(&mut self.state, next);
            self.learner.record(state, action, reward.total, self.state.clone());
        } else {
            self.state = next;
        }
        let mut metrics = None;
        for _ in 0..self.learner.updates_per_slot() {
            metrics = self.learner.train_step()?.or(metrics);
        }
        Ok(metrics)
    }

    fn act_latencies_ms(&self) -> &[f64] {
        self.learner.act_latencies_ms()
    }

    fn save_checkpoint(&self, w: &mut dyn Write) -> Result<bool> {
        self.learner.save_checkpoint(w)
    }
}

/// Learner hyperparameters for every learning provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfigs {
    pub xdiff: AgentConfig,
    pub ddqn: DdqnConfig,
    pub ddpg: DdpgConfig,
}

/// Builds the provider for `kind` on `network`.
pub fn build_provider(kind: ProviderKind, network: &NetworkConfig, cfg: &LearnerConfigs, seed: u64) -> Result<Box<dyn PolicyProvider>> {
    let state_dim = network.total_ues() * FEATURES_PER_UE;
    let action_dim = network.action_dim();
    let net = network.clone();
    Ok(match kind {
        ProviderKind::XDiff | ProviderKind::XDiffHard => {
            let agent_cfg = AgentConfig { mode: kind.mode(), ..cfg.xdiff.clone() };
            let agent = XDiffAgent::<f32>::new(state_dim, action_dim, network.gamma, agent_cfg, seed)?;
            Box::new(LearnerProvider::new(kind, net, agent))
        }
        ProviderKind::Ddqn => Box::new(LearnerProvider::new(kind, net, Ddqn::<f32>::new(state_dim, action_dim, network.gamma, cfg.ddqn.clone(), seed)?)),
        ProviderKind::Ddpg => Box::new(LearnerProvider::new(kind, net, Ddpg::<f32>::new(state_dim, action_dim, network.gamma, cfg.ddpg.clone(), seed)?)),
        _ => Box::new(StaticProvider::new(kind, net)?),
    })
}
