//! The two-time-scale simulation loop: 1 ms subframes at the DUs and
//! slot-periodic policy/observation exchange with the RIC.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::e2::E2Link;
use super::observation::{aggregate_samples, build_observation, FeatureBounds, KpmSample, SlotObservation, FEATURES_PER_UE};
use super::queue::{Dequeued, TrafficSource, UeQueue};
use super::scenario::Scenario;
use super::trace::TraceRow;
use super::{EnvStep, Environment};
use crate::domain::{PolicyMode, PreferencePolicy, QosSample, RbGrouping, RewardBreakdown, UeDemand};
use crate::error::{Error, Result};
use crate::mac::{allocate_subframe, hard_policy_allocate, Allocation, MacParams, SchedulerState, UeSchedView};
use crate::radio::{linear_to_db, ChannelState, McsTable};
use crate::reward::{compute_rewards, ue_delay_regret, ue_throughput_regret};

/// Nominal uplink grant and target power used by the PHR proxy.
const UL_NOMINAL_RBS: f64 = 24.0;
const UL_P0_DBM: f64 = -80.0;

/// Per-UE byte accounting since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ByteLedger {
    pub bytes_in: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct LinkHealth {
    bad_slots: u32,
    down_until_slot: u64,
}

/// One UE's view of one subframe.
#[derive(Debug, Clone, PartialEq)]
pub struct UeSubframe {
    pub scheduled_rbs: usize,
    pub tb_bits: u64,
    pub tb_cqi: u8,
    pub delivered_bits: u64,
    /// Outcome of the transport block, if one was sent.
    pub success: Option<bool>,
    /// Model error probability of the block that was sent.
    pub bler_model: Option<f64>,
    pub effective_sinr_db: Option<f64>,
    pub wideband_sinr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubframeRecord {
    pub time_ms: u64,
    pub ues: Vec<UeSubframe>,
    /// `[cell][group]`: whether the cell transmitted on the group.
    pub groups_in_use: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub slot: u64,
    pub observation: SlotObservation,
    pub reward: RewardBreakdown,
    pub qos: Vec<QosSample>,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
pub struct World {
    scenario: Scenario,
    mode: PolicyMode,
    grouping: RbGrouping,
    table: McsTable,
    mac: MacParams,
    bounds: FeatureBounds,
    channel: ChannelState,
    schedulers: Vec<SchedulerState>,
    sources: Vec<TrafficSource>,
    queues: Vec<UeQueue>,
    /// `[ue * groups + group]` filtered SINR behind the CQI reports.
    reported_sinr_db: Vec<f64>,
    e2: E2Link<PreferencePolicy>,
    policy: PreferencePolicy,
    policy_extra_delay_ms: u64,
    channel_rng: ChaCha8Rng,
    link_rng: ChaCha8Rng,
    now_ms: u64,
    slot: u64,
    ledger: Vec<ByteLedger>,
    health: Vec<LinkHealth>,
    samples: Vec<Vec<KpmSample>>,
    dequeued: Vec<Dequeued>,
    observation: SlotObservation,
    ue_cells: Vec<usize>,
}

impl World {
    pub fn new(scenario: Scenario, mode: PolicyMode) -> Result<Self> {
        scenario.validate()?;
        let net = &scenario.network;
        let n = net.total_ues();
        let grouping = net.grouping();
        let table = scenario.mcs_table();
        let radio = &scenario.radio;
        let tx = vec![scenario.tx_power_dbm_per_rb; net.num_cells];
        let mut channel = ChannelState::new(scenario.pathloss_db(), tx, n, net.num_rb_groups, radio)?;
        let seed = net.rng_seed;
        let mut channel_rng = ChaCha8Rng::seed_from_u64(seed);
        let link_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
        channel.init_shadowing(&mut channel_rng);
        let mac = MacParams {
            re_per_rb: radio.re_per_rb,
            link_margin_db: radio.link_margin_db,
            weight_rule: scenario.weight_rule,
            ema_horizon: 100.0,
            subframe_s: f64::from(net.subframe_ms) * 1e-3,
        };
        let peak = table.rb_bits(table.max_cqi(), net.num_rbs, radio.re_per_rb) as f64;
        let bounds = FeatureBounds::new(net.num_rbs, peak);
        let ue_cells = net.ue_cells();
        let groups = net.num_rb_groups;

        // Cold start: reports assume every other cell transmits everywhere.
        let mut reported = vec![0.0; n * groups];
        for ue in 0..n {
            let others: Vec<usize> = (0..net.num_cells).filter(|&c| c != ue_cells[ue]).collect();
            for g in 0..groups {
                reported[ue * groups + g] = channel.sinr_db(ue_cells[ue], ue, g, &others);
            }
        }

        Ok(Self {
            mode,
            grouping,
            table,
            mac: mac.clone(),
            bounds,
            schedulers: net.ues_per_cell.iter().map(|&k| SchedulerState::new(k, mac.ema_horizon)).collect(),
            sources: scenario
                .ues
                .iter()
                .map(|p| TrafficSource::new(p.clone(), scenario.packet_size_bytes))
                .collect(),
            queues: (0..n).map(|u| UeQueue::new(scenario.queue_limit_bytes(u, 0))).collect(),
            reported_sinr_db: reported,
            e2: E2Link::new(scenario.e2_latency_ms),
            policy: PreferencePolicy::zeros(net),
            policy_extra_delay_ms: 0,
            channel,
            channel_rng,
            link_rng,
            now_ms: 0,
            slot: 0,
            ledger: vec![ByteLedger::default(); n],
            health: vec![LinkHealth::default(); n],
            samples: vec![Vec::new(); n],
            dequeued: vec![Dequeued::default(); n],
            observation: SlotObservation::zeros(n),
            ue_cells,
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn mode(&self) -> PolicyMode {
        self.mode
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn observation(&self) -> &SlotObservation {
        &self.observation
    }

    pub fn policy_in_force(&self) -> &PreferencePolicy {
        &self.policy
    }

    pub fn ledger(&self) -> &[ByteLedger] {
        &self.ledger
    }

    pub fn queued_bytes(&self, ue: usize) -> u64 {
        self.queues[ue].bytes()
    }

    pub fn channel(&self) -> &ChannelState {
        &self.channel
    }

    /// Extra policy staleness, e.g. the measured policy-generation time.
    pub fn set_policy_delay_ms(&mut self, ms: u64) {
        self.policy_extra_delay_ms = ms;
    }

    /// Every UE's byte ledger balances against its queue.
    pub fn bytes_conserved(&self) -> bool {
        self.ledger
            .iter()
            .zip(&self.queues)
            .all(|(l, q)| l.bytes_in == l.delivered + l.dropped + q.bytes())
    }

    pub fn is_disconnected(&self, ue: usize) -> bool {
        self.health[ue].down_until_slot > self.slot
    }

    /// Hands a policy to the E2 link; returns the subframe it takes effect.
    pub fn submit_policy(&mut self, policy: PreferencePolicy) -> Result<u64> {
        if !policy.matches(&self.scenario.network) {
            return Err(Error::Shape {
                what: "preference policy",
                expected: self.scenario.network.action_dim(),
                got: policy.values().len(),
            });
        }
        policy.validate(self.mode)?;
        Ok(self.e2.send(self.now_ms, self.policy_extra_delay_ms, policy))
    }

    /// SINR on every RB: a neighbour interferes on exactly the RBs it
    /// schedules. Values are cached per group and set of active neighbours.
    fn rb_sinr_db(&self, allocs: &[Allocation], serving: usize, ue: usize) -> Vec<f64> {
        let num_cells = allocs.len();
        let mut cache: Vec<Option<f64>> = vec![None; self.grouping.num_groups() << num_cells];
        (0..self.scenario.network.num_rbs)
            .map(|rb| {
                let mask = (0..num_cells)
                    .filter(|&c| c != serving && allocs[c].owner[rb].is_some())
                    .fold(0usize, |m, c| m | (1 << c));
                let g = self.grouping.group_of(rb);
                *cache[(g << num_cells) | mask].get_or_insert_with(|| {
                    let others: Vec<usize> = (0..num_cells).filter(|c| mask & (1 << c) != 0).collect();
                    self.channel.sinr_db(serving, ue, g, &others)
                })
            })
            .collect()
    }

    fn allocate_cell(&mut self, cell: usize) -> Allocation {
        let net = &self.scenario.network;
        let first = net.first_ue(cell);
        let groups = net.num_rb_groups;
        let views: Vec<UeSchedView> = (0..net.ues_per_cell[cell])
            .map(|i| {
                let ue = first + i;
                let connected = self.health[ue].down_until_slot <= self.slot;
                UeSchedView {
                    backlog_bits: if connected { self.queues[ue].bytes() * 8 } else { 0 },
                    retx_pending: connected && self.queues[ue].retx_pending(),
                    group_sinr_db: self.reported_sinr_db[ue * groups..(ue + 1) * groups].to_vec(),
                }
            })
            .collect();
        let prefs: Vec<&[f64]> = (0..views.len()).map(|i| self.policy.ue(cell, i)).collect();
        let state = &mut self.schedulers[cell];
        match self.mode {
            PolicyMode::Soft => allocate_subframe(&views, &prefs, &self.grouping, &self.table, &self.mac, state),
            PolicyMode::Hard => hard_policy_allocate(&views, &prefs, &self.grouping, &self.table, &self.mac, state),
        }
    }

    /// Advances one subframe under the policy currently in force.
    pub fn step_subframe(&mut self) -> SubframeRecord {
        let t = self.now_ms;
        if let Some(p) = self.e2.deliver(t) {
            self.policy = p;
        }
        let subframe_ms = self.scenario.network.subframe_ms;
        for ue in 0..self.queues.len() {
            let bytes = self.sources[ue].arrivals(t, subframe_ms);
            self.ledger[ue].bytes_in += bytes;
            self.ledger[ue].dropped += self.queues[ue].push(t, bytes);
        }
        self.channel.advance_subframe(&mut self.channel_rng);

        let num_cells = self.scenario.network.num_cells;
        let allocs: Vec<Allocation> = (0..num_cells).map(|c| self.allocate_cell(c)).collect();
        let in_use: Vec<Vec<bool>> = allocs.iter().map(|a| a.groups_in_use(&self.grouping)).collect();

        let groups = self.grouping.num_groups();
        let filter = self.scenario.radio.cqi_filter;
        let slope = self.scenario.radio.bler_slope_per_db;
        let mut out = Vec::with_capacity(self.queues.len());
        for ue in 0..self.queues.len() {
            let cell = self.ue_cells[ue];
            let local = ue - self.scenario.network.first_ue(cell);
            let rb_sinr = self.rb_sinr_db(&allocs, cell, ue);
            let actual: Vec<f64> = (0..groups)
                .map(|g| {
                    let range = self.grouping.range(g);
                    let n = range.len().max(1) as f64;
                    rb_sinr[range].iter().sum::<f64>() / n
                })
                .collect();
            for (g, &s) in actual.iter().enumerate() {
                let r = &mut self.reported_sinr_db[ue * groups + g];
                *r = (1.0 - filter) * *r + filter * s;
            }
            let wideband = actual.iter().sum::<f64>() / groups as f64;
            let alloc = &allocs[cell];
            let rbs = alloc.scheduled_rbs[local];
            let tb_bytes = alloc.tb_bits[local] / 8;
            let mut rec = UeSubframe {
                scheduled_rbs: rbs,
                tb_bits: alloc.tb_bits[local],
                tb_cqi: alloc.tb_cqi[local],
                delivered_bits: 0,
                success: None,
                bler_model: None,
                effective_sinr_db: None,
                wideband_sinr_db: wideband,
            };
            if rbs > 0 && tb_bytes > 0 {
                let eff = alloc
                    .owner
                    .iter()
                    .zip(&rb_sinr)
                    .filter(|(o, _)| **o == Some(local))
                    .map(|(_, &s)| s)
                    .sum::<f64>()
                    / rbs as f64;
                let bler = self.table.bler(eff, rec.tb_cqi, slope);
                let ok = self.link_rng.gen::<f64>() >= bler;
                if ok {
                    let d = self.queues[ue].dequeue(tb_bytes, t + u64::from(subframe_ms));
                    self.ledger[ue].delivered += d.bytes;
                    self.dequeued[ue].bytes += d.bytes;
                    self.dequeued[ue].byte_ms += d.byte_ms;
                    rec.delivered_bits = d.bytes * 8;
                } else {
                    self.ledger[ue].dropped += self.queues[ue].fail(tb_bytes);
                }
                rec.success = Some(ok);
                rec.bler_model = Some(bler);
                rec.effective_sinr_db = Some(eff);
            }
            self.samples[ue].push(KpmSample {
                delivered_bits: rec.delivered_bits,
                scheduled_rbs: rbs,
                tb_bits: rec.tb_bits,
                mcs: rec.success.map(|_| self.table.mcs_index(rec.tb_cqi)),
                failed: rec.success == Some(false),
                wideband_sinr_db: wideband,
            });
            out.push(rec);
        }
        self.now_ms += u64::from(subframe_ms);
        SubframeRecord {
            time_ms: t,
            ues: out,
            groups_in_use: in_use,
        }
    }

    fn uplink_proxies(&self, ue: usize) -> (f64, f64) {
        let cell = self.ue_cells[ue];
        let link = cell * self.queues.len() + ue;
        let loss = self.channel.pathloss_db[link] + self.channel.shadowing_db[link];
        let pmax = self.scenario.ue_max_power_dbm;
        let net = &self.scenario.network;
        let snr = pmax - linear_to_db(net.num_rbs as f64) - loss - self.scenario.radio.noise_dbm_per_rb;
        let phr = pmax - (UL_P0_DBM + linear_to_db(UL_NOMINAL_RBS) + loss);
        (snr, phr)
    }

    /// Sends `action` over E2, runs one slot of subframes and reports the
    /// slot-level observation and reward.
    pub fn step_slot(&mut self, action: &PreferencePolicy) -> Result<SlotOutcome> {
        self.submit_policy(action.clone())?;
        self.run_slot()
    }

    /// Runs one slot with whatever policy the E2 link delivers.
    pub fn run_slot(&mut self) -> Result<SlotOutcome> {
        let net = self.scenario.network.clone();
        let slot_start = self.now_ms;
        for (ue, q) in self.queues.iter_mut().enumerate() {
            q.set_limit(self.scenario.queue_limit_bytes(ue, slot_start));
        }
        for _ in 0..net.subframes_per_slot() {
            self.step_subframe();
        }
        let slot_s = f64::from(net.slot_ms) * 1e-3;
        let n = self.queues.len();
        let rule = self.scenario.disconnect.clone();
        let mut kpms = Vec::with_capacity(n);
        for ue in 0..n {
            let mut kpm = aggregate_samples(&self.samples[ue], slot_s);
            self.samples[ue].clear();
            let dq = std::mem::take(&mut self.dequeued[ue]);
            kpm.delay_ms = if dq.bytes > 0 {
                dq.byte_ms / dq.bytes as f64
            } else if let Some(head) = self.queues[ue].head_arrival_ms() {
                self.now_ms.saturating_sub(head) as f64
            } else {
                0.0
            };
            let (snr, phr) = self.uplink_proxies(ue);
            kpm.ul_snr_db = snr;
            kpm.phr_db = phr;
            kpm.demand_bps = self.sources[ue].profile().demand_at(slot_start);

            let health = &mut self.health[ue];
            if health.down_until_slot <= self.slot {
                let starving = kpm
                    .demand_bps
                    .is_some_and(|d| kpm.tp_bps < rule.tp_fraction * d);
                if kpm.bler > rule.bler_threshold && starving {
                    health.bad_slots += 1;
                } else {
                    health.bad_slots = 0;
                }
                if health.bad_slots >= rule.consecutive_slots {
                    health.bad_slots = 0;
                    health.down_until_slot = self.slot + 1 + u64::from(rule.reconnect_slots);
                }
            }
            kpm.disconnected = health.down_until_slot > self.slot;
            if kpm.disconnected {
                kpm.tp_bps = 0.0;
            }
            kpms.push(kpm);
        }
        self.channel.advance_slot(&mut self.channel_rng);

        let qos: Vec<QosSample> = kpms
            .iter()
            .map(|k| QosSample {
                achieved_tp_bps: k.tp_bps,
                achieved_delay_ms: k.delay_ms,
            })
            .collect();
        let active: Vec<usize> = (0..n).filter(|&u| kpms[u].demand_bps.is_some()).collect();
        let demands: Vec<UeDemand> = active
            .iter()
            .map(|&u| UeDemand {
                cell: self.ue_cells[u],
                tp_bps: kpms[u].demand_bps.unwrap_or(f64::NAN),
                delay_ms: self.scenario.ues[u].delay_demand_ms,
            })
            .collect();
        let active_qos: Vec<QosSample> = active.iter().map(|&u| qos[u]).collect();
        let reward = compute_rewards(&active_qos, &demands, &net.lambda_p, &net.lambda_d)?;

        let mut rows = Vec::with_capacity(n);
        for ue in 0..n {
            let cell = self.ue_cells[ue];
            let local = ue - net.first_ue(cell);
            let k = &kpms[ue];
            let (tp_regret, delay_regret) = match k.demand_bps {
                Some(d) => (
                    ue_throughput_regret(k.tp_bps, d)?,
                    ue_delay_regret(k.delay_ms, self.scenario.ues[ue].delay_demand_ms)?,
                ),
                None => (0.0, 0.0),
            };
            let (bwp_start, bwp_size) = self.policy.bwp_span(cell, local);
            rows.push(TraceRow {
                slot: self.slot,
                time_ms: self.now_ms,
                cell,
                ue: local,
                tp_bps: k.tp_bps,
                delay_ms: k.delay_ms,
                bler: k.bler,
                prbs: k.prbs_mean,
                mcs: k.mcs_mean,
                tp_regret,
                delay_regret,
                reward: reward.total,
                bwp_start,
                bwp_size,
                disconnected: k.disconnected,
                queued_bytes: self.queues[ue].bytes(),
            });
        }
        debug_assert!(self.bytes_conserved());
        let observation = build_observation(kpms, &self.bounds);
        self.observation = observation.clone();
        let outcome = SlotOutcome {
            slot: self.slot,
            observation,
            reward,
            qos,
            rows,
        };
        self.slot += 1;
        Ok(outcome)
    }
}

impl Environment for World {
    fn state_dim(&self) -> usize {
        self.queues.len() * FEATURES_PER_UE
    }

    fn action_dim(&self) -> usize {
        self.scenario.network.action_dim()
    }

    fn state(&self) -> Vec<f64> {
        self.observation.features.clone()
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let policy = PreferencePolicy::from_values(&self.scenario.network, action.to_vec())?;
        let out = self.step_slot(&policy)?;
        Ok(EnvStep {
            next_state: out.observation.features,
            reward: out.reward.total,
        })
    }
}
