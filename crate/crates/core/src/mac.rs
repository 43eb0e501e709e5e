//! Per-DU subframe scheduler: proportional fair ranking, preference-weighted
//! ranking and RB selection for soft and hard policies.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::domain::RbGrouping;
use crate::radio::McsTable;

/// Lower bound on the averaged throughput, also the cold-start value.
pub const AVG_TP_FLOOR_BPS: f64 = 1_000.0;

/// How the per-UE weight is derived from its preference values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// Share of groups with a non-negative preference.
    #[default]
    FavorableFraction,
    /// Share of groups with a negative preference.
    NegativeFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacParams {
    pub re_per_rb: u32,
    pub link_margin_db: f64,
    pub weight_rule: WeightRule,
    pub ema_horizon: f64,
    pub subframe_s: f64,
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            re_per_rb: 288,
            link_margin_db: 9f64.ln() / 1.5,
            weight_rule: WeightRule::FavorableFraction,
            ema_horizon: 100.0,
            subframe_s: 1e-3,
        }
    }
}

/// Exponentially averaged served throughput of every UE in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState {
    avg_tp: Vec<f64>,
    ema_horizon: f64,
}

impl SchedulerState {
    pub fn new(num_ues: usize, ema_horizon: f64) -> Self {
        assert!(ema_horizon >= 1.0);
        Self {
            avg_tp: vec![AVG_TP_FLOOR_BPS; num_ues],
            ema_horizon,
        }
    }

    pub fn avg_tp(&self) -> &[f64] {
        &self.avg_tp
    }

    pub fn update(&mut self, served_bits: &[u64], subframe_s: f64) {
        let a = 1.0 / self.ema_horizon;
        for (avg, &bits) in self.avg_tp.iter_mut().zip(served_bits) {
            let rate = bits as f64 / subframe_s;
            *avg = ((1.0 - a) * *avg + a * rate).max(AVG_TP_FLOOR_BPS);
        }
    }
}

/// What the scheduler knows about one UE at the start of a subframe.
#[derive(Debug, Clone, PartialEq)]
pub struct UeSchedView {
    pub backlog_bits: u64,
    pub retx_pending: bool,
    /// Reported SINR estimate per RB group.
    pub group_sinr_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// Owning UE (cell-local index) of every RB.
    pub owner: Vec<Option<usize>>,
    pub scheduled_rbs: Vec<usize>,
    pub tb_bits: Vec<u64>,
    /// CQI whose MCS carries each UE's transport block, 0 if unscheduled.
    pub tb_cqi: Vec<u8>,
}

impl Allocation {
    pub fn empty(num_rbs: usize, num_ues: usize) -> Self {
        Self {
            owner: vec![None; num_rbs],
            scheduled_rbs: vec![0; num_ues],
            tb_bits: vec![0; num_ues],
            tb_cqi: vec![0; num_ues],
        }
    }

    /// Whether the cell puts energy on each group.
    pub fn groups_in_use(&self, grouping: &RbGrouping) -> Vec<bool> {
        (0..grouping.num_groups())
            .map(|g| grouping.range(g).any(|rb| self.owner[rb].is_some()))
            .collect()
    }

    pub fn rbs_of(&self, ue: usize, grouping: &RbGrouping) -> Vec<usize> {
        let mut per_group = vec![0; grouping.num_groups()];
        for (rb, owner) in self.owner.iter().enumerate() {
            if *owner == Some(ue) {
                per_group[grouping.group_of(rb)] += 1;
            }
        }
        per_group
    }
}

pub fn pf_metric(inst_rate_bps: f64, avg_tp_bps: f64) -> f64 {
    inst_rate_bps / avg_tp_bps.max(AVG_TP_FLOOR_BPS)
}

pub fn weighted_pf_metric(inst_rate_bps: f64, avg_tp_bps: f64, weight: f64) -> f64 {
    pf_metric(inst_rate_bps, avg_tp_bps) * weight
}

pub fn preference_weight(prefs: &[f64], rule: WeightRule) -> f64 {
    if prefs.is_empty() {
        return 0.0;
    }
    let count = match rule {
        WeightRule::FavorableFraction => prefs.iter().filter(|&&p| p >= 0.0).count(),
        WeightRule::NegativeFraction => prefs.iter().filter(|&&p| p < 0.0).count(),
    };
    count as f64 / prefs.len() as f64
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Rate the UE would get on one nominal RB group at its wideband CQI.
pub fn instantaneous_rate_bps(
    view: &UeSchedView,
    grouping: &RbGrouping,
    table: &McsTable,
    params: &MacParams,
) -> f64 {
    let cqi = table.cqi_from_sinr(mean(&view.group_sinr_db) - params.link_margin_db);
    let nominal = grouping.num_rbs() / grouping.num_groups();
    table.rb_bits(cqi, nominal, params.re_per_rb) as f64 / params.subframe_s
}

/// Retransmissions first, then descending metric, then lower UE index.
fn priority_order(ues: &[UeSchedView], metrics: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ues.len()).filter(|&i| ues[i].backlog_bits > 0).collect();
    order.sort_by(|&a, &b| {
        ues[b]
            .retx_pending
            .cmp(&ues[a].retx_pending)
            .then_with(|| metrics[b].total_cmp(&metrics[a]))
            .then_with(|| a.cmp(&b))
    });
    order
}

struct Planner<'a> {
    ues: &'a [UeSchedView],
    grouping: &'a RbGrouping,
    table: &'a McsTable,
    params: &'a MacParams,
    /// Next unassigned RB of every group.
    cursor: Vec<usize>,
    covered_bits: Vec<f64>,
    alloc: Allocation,
}

impl<'a> Planner<'a> {
    fn new(
        ues: &'a [UeSchedView],
        grouping: &'a RbGrouping,
        table: &'a McsTable,
        params: &'a MacParams,
    ) -> Self {
        Self {
            ues,
            grouping,
            table,
            params,
            cursor: (0..grouping.num_groups()).map(|g| grouping.range(g).start).collect(),
            covered_bits: vec![0.0; ues.len()],
            alloc: Allocation::empty(grouping.num_rbs(), ues.len()),
        }
    }

    fn needs_more(&self, ue: usize) -> bool {
        self.covered_bits[ue] < self.ues[ue].backlog_bits as f64
    }

    /// Gives `ue` free RBs of `group`, at most `quota`, while it needs more.
    fn take_group(&mut self, ue: usize, group: usize, quota: usize) {
        let cqi = self
            .table
            .cqi_from_sinr(self.ues[ue].group_sinr_db[group] - self.params.link_margin_db);
        if cqi == 0 {
            return;
        }
        let per_rb = self.table.spectral_efficiency(cqi) * f64::from(self.params.re_per_rb);
        let end = self.grouping.range(group).end;
        let mut taken = 0;
        while self.cursor[group] < end && taken < quota && self.needs_more(ue) {
            taken += 1;
            let rb = self.cursor[group];
            self.alloc.owner[rb] = Some(ue);
            self.alloc.scheduled_rbs[ue] += 1;
            self.covered_bits[ue] += per_rb;
            self.cursor[group] += 1;
        }
    }

    /// Fixes one MCS per transport block from the RB-weighted SINR estimate.
    fn finish(mut self, state: &mut SchedulerState) -> Allocation {
        for ue in 0..self.ues.len() {
            let rbs = self.alloc.scheduled_rbs[ue];
            if rbs == 0 {
                continue;
            }
            let per_group = self.alloc.rbs_of(ue, self.grouping);
            let weighted: f64 = per_group
                .iter()
                .enumerate()
                .map(|(g, &n)| n as f64 * self.ues[ue].group_sinr_db[g])
                .sum();
            let est = weighted / rbs as f64 - self.params.link_margin_db;
            let cqi = self.table.cqi_from_sinr(est);
            let capacity = self.table.rb_bits(cqi, rbs, self.params.re_per_rb);
            self.alloc.tb_cqi[ue] = cqi;
            self.alloc.tb_bits[ue] = capacity.min(self.ues[ue].backlog_bits);
        }
        state.update(&self.alloc.tb_bits, self.params.subframe_s);
        self.alloc
    }
}

fn groups_by_preference(prefs: &[f64]) -> Vec<usize> {
    let mut groups: Vec<usize> = (0..prefs.len()).collect();
    groups.sort_by(|&a, &b| match prefs[b].total_cmp(&prefs[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    groups
}

/// Preference-weighted PF allocation for one cell and one subframe.
///
/// UEs are ranked by `weighted_pf_metric`. Favourable groups (preference
/// `>= 0`) are handed out first, each UE taking them in descending preference
/// order until its backlog is covered. Unfavourable groups are then offered in
/// the same UE order as spill-over capacity, a group with preference `p < 0`
/// yielding at most `round((1 + p) * size)` of its RBs to that UE, so `-1`
/// means never.
pub fn allocate_subframe(
    ues: &[UeSchedView],
    prefs: &[&[f64]],
    grouping: &RbGrouping,
    table: &McsTable,
    params: &MacParams,
    state: &mut SchedulerState,
) -> Allocation {
    debug_assert_eq!(ues.len(), prefs.len());
    let metrics: Vec<f64> = ues
        .iter()
        .zip(prefs)
        .zip(state.avg_tp())
        .map(|((view, p), &avg)| {
            let rate = instantaneous_rate_bps(view, grouping, table, params);
            weighted_pf_metric(rate, avg, preference_weight(p, params.weight_rule))
        })
        .collect();
    let order = priority_order(ues, &metrics);
    let ranked: Vec<Vec<usize>> = prefs.iter().map(|p| groups_by_preference(p)).collect();

    let mut plan = Planner::new(ues, grouping, table, params);
    for favourable in [true, false] {
        for &ue in &order {
            for &g in &ranked[ue] {
                if (prefs[ue][g] >= 0.0) != favourable {
                    continue;
                }
                if !plan.needs_more(ue) {
                    break;
                }
                let size = grouping.size(g);
                let quota = if favourable {
                    size
                } else {
                    ((1.0 + prefs[ue][g]) * size as f64).round() as usize
                };
                plan.take_group(ue, g, quota);
            }
        }
    }
    plan.finish(state)
}

/// Plain proportional fair allocation: every group equally preferred.
pub fn plain_pf_allocate(
    ues: &[UeSchedView],
    grouping: &RbGrouping,
    table: &McsTable,
    params: &MacParams,
    state: &mut SchedulerState,
) -> Allocation {
    let zeros = vec![0.0; grouping.num_groups()];
    let prefs: Vec<&[f64]> = ues.iter().map(|_| zeros.as_slice()).collect();
    allocate_subframe(ues, &prefs, grouping, table, params, state)
}

/// Allocation under a `{-1, 0, 1}` policy. `+1` groups are granted first
/// (contested groups go to the higher PF metric), `0` groups are then filled
/// in plain PF order and `-1` groups are never used by that UE.
pub fn hard_policy_allocate(
    ues: &[UeSchedView],
    prefs: &[&[f64]],
    grouping: &RbGrouping,
    table: &McsTable,
    params: &MacParams,
    state: &mut SchedulerState,
) -> Allocation {
    debug_assert_eq!(ues.len(), prefs.len());
    let metrics: Vec<f64> = ues
        .iter()
        .zip(state.avg_tp())
        .map(|(view, &avg)| pf_metric(instantaneous_rate_bps(view, grouping, table, params), avg))
        .collect();
    let order = priority_order(ues, &metrics);
    let mut plan = Planner::new(ues, grouping, table, params);
    for wanted in [1.0, 0.0] {
        for &ue in &order {
            for g in 0..grouping.num_groups() {
                if prefs[ue][g] != wanted {
                    continue;
                }
                if !plan.needs_more(ue) {
                    break;
                }
                plan.take_group(ue, g, usize::MAX);
            }
        }
    }
    plan.finish(state)
}
