//! Seeded provider runs against the simulator, with traces, per-slot
//! metrics and a summary.

pub mod toy;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agent::TrainMetrics;
use crate::baselines::{build_provider, percentile, LearnerConfigs, ProviderKind};
use crate::env::{Scenario, TraceRow, TraceWriter, World};
use crate::error::{Error, Result};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Reference policy-generation time of the diffusion policy at five
/// denoising steps.
pub const REFERENCE_LATENCY_MS: f64 = 21.8;
pub const REFERENCE_STEPS: usize = 5;
/// Reference time of the clustering-based heuristic.
pub const CSRS_LATENCY_MS: f64 = 5.4;

/// Modelled wall clock of one `propose` call. Sampling costs one network
/// evaluation per denoising step; the single-pass learners cost one.
/// Rule-based providers finish within a subframe and cost nothing.
pub fn modeled_latency_ms(kind: ProviderKind, steps: usize) -> f64 {
    let per_eval = REFERENCE_LATENCY_MS / REFERENCE_STEPS as f64;
    match kind {
        ProviderKind::XDiff | ProviderKind::XDiffHard => per_eval * steps as f64,
        ProviderKind::Ddqn | ProviderKind::Ddpg => per_eval,
        ProviderKind::Csrs => CSRS_LATENCY_MS,
        ProviderKind::Cira | ProviderKind::Otfr => 0.0,
    }
}

/// Whole subframes of policy staleness for a latency.
pub fn staleness_ms(latency_ms: f64, subframe_ms: u32) -> u64 {
    let sf = f64::from(subframe_ms.max(1));
    ((latency_ms / sf).ceil() * sf) as u64
}

/// Demand multiplied by `factor` from `at_slot` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepChange {
    pub at_slot: u64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub scenario: Scenario,
    pub provider: ProviderKind,
    pub seed: u64,
    pub slots: usize,
    pub latency_coupling: bool,
    pub step_change: Option<StepChange>,
    pub learners: LearnerConfigs,
    /// Keep per-UE trace rows in the output.
    pub keep_trace: bool,
}

impl RunSpec {
    pub fn new(scenario: Scenario, provider: ProviderKind, seed: u64, slots: usize) -> Self {
        Self {
            scenario,
            provider,
            seed,
            slots,
            latency_coupling: false,
            step_change: None,
            learners: LearnerConfigs::default(),
            keep_trace: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 {
            return Err(Error::Config("slots must be positive".into()));
        }
        if let Some(sc) = self.step_change {
            if sc.at_slot as usize >= self.slots || !(sc.factor > 0.0) {
                return Err(Error::Config("step change must fall inside the run with a positive factor".into()));
            }
        }
        self.learners.xdiff.validate()?;
        self.scenario.validate()
    }
}

/// One row of the per-slot metrics CSV; training fields are empty before
/// the first gradient step and for rule-based providers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub slot: u64,
    pub reward: f64,
    pub r_tp: f64,
    pub r_delay: f64,
    pub critic_loss: Option<f64>,
    pub denoise_loss: Option<f64>,
    pub guidance: Option<f64>,
    pub q_mean: Option<f64>,
    pub target_mean: Option<f64>,
}

impl MetricsRow {
    fn new(slot: u64, reward: &crate::domain::RewardBreakdown, train: Option<TrainMetrics>) -> Self {
        Self {
            slot,
            reward: reward.total,
            r_tp: reward.r_tp.iter().sum(),
            r_delay: reward.r_delay.iter().sum(),
            critic_loss: train.map(|t| t.critic_loss),
            denoise_loss: train.map(|t| t.denoise_loss),
            guidance: train.map(|t| t.guidance),
            q_mean: train.map(|t| t.q_mean),
            target_mean: train.map(|t| t.target_mean),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Self {
        let mean = if values.is_empty() {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        Self {
            mean,
            p5: percentile(values, 0.05),
            p50: percentile(values, 0.5),
            p95: percentile(values, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeSummary {
    pub cell: usize,
    pub ue: usize,
    pub tp_mbps_mean: f64,
    pub delay_ms_mean: f64,
    pub bler_mean: f64,
    pub disconnected_slots: u64,
}

/// Deterministic digest of one run; wall-clock figures live elsewhere so
/// that identical runs give identical summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub preset: String,
    pub provider: ProviderKind,
    pub seed: u64,
    pub slots: usize,
    pub latency_coupling: bool,
    pub policy_staleness_ms: u64,
    pub step_change: Option<StepChange>,
    pub reward: Distribution,
    pub final_third_reward: f64,
    pub tp_mbps: Distribution,
    pub delay_ms: Distribution,
    pub bler_mean: f64,
    pub bytes_conserved: bool,
    pub recovery_slots: Option<u64>,
    pub ues: Vec<UeSummary>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rewards: Vec<f64>,
    pub metrics: Vec<MetricsRow>,
    pub trace: Vec<TraceRow>,
    pub summary: RunSummary,
    pub act_latencies_ms: Vec<f64>,
    pub checkpoint: Option<Vec<u8>>,
}

impl RunOutput {
    pub fn trace_csv(&self) -> Result<Vec<u8>> {
        let mut w = TraceWriter::new(Vec::new());
        w.write_rows(&self.trace)?;
        w.finish()
    }

    pub fn metrics_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.metrics {
            w.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        w.flush()?;
        w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.summary).map_err(|e| Error::Io(std::io::Error::other(e)))
    }
}

/// Parses a metrics CSV written by [`RunOutput::metrics_csv`].
pub fn read_metrics<R: std::io::Read>(input: R) -> Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Io(std::io::Error::other(e))))
        .collect()
}

/// Mean of the last third of `rewards`.
pub fn final_third_mean(rewards: &[f64]) -> f64 {
    let tail = &rewards[rewards.len() - rewards.len() / 3..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

/// Slots after `change` until the trailing `window`-slot mean reward comes
/// back to 90% of its level over the `window` slots before the change.
/// Rewards are non-positive, so 90% of the level means a regret no larger
/// than the pre-change regret divided by 0.9.
pub fn recovery_slots(rewards: &[f64], change: usize, window: usize) -> Option<u64> {
    if window == 0 || change < window || change >= rewards.len() {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let before = mean(&rewards[change - window..change]);
    let threshold = before / 0.9;
    (change + window..=rewards.len())
        .find(|&end| mean(&rewards[end - window..end]) >= threshold)
        .map(|end| (end - change) as u64)
}

/// Trailing window used for recovery.
pub const RECOVERY_WINDOW: usize = 100;

/// Runs one seeded provider against a fresh world.
pub fn run(spec: &RunSpec) -> Result<RunOutput> {
    spec.validate()?;
    let mut scenario = spec.scenario.clone().with_seed(spec.seed);
    let slot_ms = u64::from(scenario.network.slot_ms);
    if let Some(sc) = spec.step_change {
        scenario = scenario.with_demand_step(sc.at_slot * slot_ms, sc.factor);
    }
    let network = scenario.network.clone();
    let mut provider = build_provider(spec.provider, &network, &spec.learners, spec.seed)?;
    let mut world = World::new(scenario.clone(), provider.mode())?;
    let staleness = if spec.latency_coupling {
        staleness_ms(modeled_latency_ms(spec.provider, spec.learners.xdiff.diffusion.steps), network.subframe_ms)
    } else {
        0
    };
    world.set_policy_delay_ms(staleness);

    let mut rewards = Vec::with_capacity(spec.slots);
    let mut metrics = Vec::with_capacity(spec.slots);
    let mut trace = Vec::new();
    let mut conserved = true;
    for _ in 0..spec.slots {
        let policy = provider.propose()?;
        let out = world.step_slot(&policy)?;
        conserved &= world.bytes_conserved();
        let train = provider.observe(&out.observation, &out.reward)?;
        rewards.push(out.reward.total);
        metrics.push(MetricsRow::new(out.slot, &out.reward, train));
        trace.extend(out.rows);
    }

    let summary = summarize(spec, &scenario, staleness, &rewards, &trace, conserved);
    let checkpoint = {
        let mut buf = Vec::new();
        provider.save_checkpoint(&mut buf)?.then_some(buf)
    };
    if !spec.keep_trace {
        trace = Vec::new();
    }
    Ok(RunOutput {
        rewards,
        metrics,
        trace,
        summary,
        act_latencies_ms: provider.act_latencies_ms().to_vec(),
        checkpoint,
    })
}

fn summarize(spec: &RunSpec, scenario: &Scenario, staleness: u64, rewards: &[f64], trace: &[TraceRow], conserved: bool) -> RunSummary {
    let tp: Vec<f64> = trace.iter().map(|r| r.tp_bps / 1e6).collect();
    let delay: Vec<f64> = trace.iter().map(|r| r.delay_ms).collect();
    let bler_mean = trace.iter().map(|r| r.bler).sum::<f64>() / trace.len().max(1) as f64;
    let mut ues: Vec<UeSummary> = scenario
        .ues
        .iter()
        .map(|u| UeSummary {
            cell: u.cell_id,
            ue: u.ue_id,
            tp_mbps_mean: 0.0,
            delay_ms_mean: 0.0,
            bler_mean: 0.0,
            disconnected_slots: 0,
        })
        .collect();
    let slots = rewards.len().max(1) as f64;
    for row in trace {
        let idx = scenario.network.first_ue(row.cell) + row.ue;
        let u = &mut ues[idx];
        u.tp_mbps_mean += row.tp_bps / 1e6 / slots;
        u.delay_ms_mean += row.delay_ms / slots;
        u.bler_mean += row.bler / slots;
        u.disconnected_slots += u64::from(row.disconnected);
    }
    RunSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        preset: scenario.name.clone(),
        provider: spec.provider,
        seed: spec.seed,
        slots: spec.slots,
        latency_coupling: spec.latency_coupling,
        policy_staleness_ms: staleness,
        step_change: spec.step_change,
        reward: Distribution::of(rewards),
        final_third_reward: final_third_mean(rewards),
        tp_mbps: Distribution::of(&tp),
        delay_ms: Distribution::of(&delay),
        bler_mean,
        bytes_conserved: conserved,
        recovery_slots: spec
            .step_change
            .and_then(|sc| recovery_slots(rewards, sc.at_slot as usize, RECOVERY_WINDOW)),
        ues,
    }
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_model_scales_with_steps() {
        assert_eq!(modeled_latency_ms(ProviderKind::XDiff, 5), 21.8);
        assert_eq!(staleness_ms(modeled_latency_ms(ProviderKind::XDiff, 5), 1), 22);
        assert_eq!(staleness_ms(modeled_latency_ms(ProviderKind::XDiff, 20), 1), 88);
        assert_eq!(staleness_ms(modeled_latency_ms(ProviderKind::XDiff, 2), 1), 9);
        assert_eq!(staleness_ms(modeled_latency_ms(ProviderKind::Cira, 5), 1), 0);
    }

    #[test]
    fn final_third_uses_the_tail() {
        let r: Vec<f64> = (0..9).map(f64::from).collect();
        assert_eq!(final_third_mean(&r), 7.0);
    }

    #[test]
    fn recovery_counts_slots_to_ninety_percent() {
        // Level -1 before the change, -5 for 10 slots, then -1 again.
        let mut r = vec![-1.0; 40];
        r.extend(vec![-5.0; 10]);
        r.extend(vec![-1.0; 60]);
        // Threshold -1/0.9; a 20-slot window holding k bad slots has mean
        // -1 - 4k/20, which clears it once k <= 0.55, i.e. k = 0.
        assert_eq!(recovery_slots(&r, 40, 20), Some(30));
        assert_eq!(recovery_slots(&vec![-1.0; 60], 40, 20), Some(20));
        let mut never = vec![-1.0; 40];
        never.extend(vec![-3.0; 40]);
        assert_eq!(recovery_slots(&never, 40, 20), None);
    }

    #[test]
    fn empty_and_out_of_range_runs_are_rejected() {
        let mut spec = RunSpec::new(Scenario::lab(), ProviderKind::Cira, 1, 0);
        assert!(run(&spec).is_err());
        spec.slots = 10;
        spec.step_change = Some(StepChange { at_slot: 10, factor: 1.2 });
        assert!(run(&spec).is_err());
    }
}
