//! Domain types shared across the simulator and the learners.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static description of the multi-cell network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_cells: usize,
    /// UE count for every cell, indexed by cell.
    pub ues_per_cell: Vec<usize>,
    pub num_rbs: usize,
    pub num_rb_groups: usize,
    pub subframe_ms: u32,
    pub slot_ms: u32,
    pub gamma: f64,
    pub lambda_p: Vec<f64>,
    pub lambda_d: Vec<f64>,
    pub rng_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_cells: 3,
            ues_per_cell: vec![3, 3, 4],
            num_rbs: 106,
            num_rb_groups: 10,
            subframe_ms: 1,
            slot_ms: 100,
            gamma: 0.9,
            lambda_p: vec![1.0; 3],
            lambda_d: vec![1.0; 3],
            rng_seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_cells == 0 {
            return bad("num_cells must be at least 1".into());
        }
        if self.ues_per_cell.len() != self.num_cells {
            return bad(format!(
                "ues_per_cell has {} entries for {} cells",
                self.ues_per_cell.len(),
                self.num_cells
            ));
        }
        if self.ues_per_cell.iter().any(|&n| n == 0) {
            return bad("every cell needs at least one UE".into());
        }
        if self.num_rb_groups == 0 || self.num_rb_groups > self.num_rbs {
            return bad(format!(
                "num_rb_groups = {} must be in 1..={}",
                self.num_rb_groups, self.num_rbs
            ));
        }
        if self.subframe_ms != 1 {
            return bad(format!("subframe_ms must be 1, got {}", self.subframe_ms));
        }
        if !(10..=1000).contains(&self.slot_ms) || self.slot_ms % self.subframe_ms != 0 {
            return bad(format!(
                "slot_ms = {} must be a multiple of subframe_ms within 10..=1000",
                self.slot_ms
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma = {} must lie in (0, 1)", self.gamma));
        }
        for (name, weights) in [("lambda_p", &self.lambda_p), ("lambda_d", &self.lambda_d)] {
            if weights.len() != self.num_cells {
                return bad(format!(
                    "{name} has {} entries for {} cells",
                    weights.len(),
                    self.num_cells
                ));
            }
            if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return bad(format!("{name} weights must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn total_ues(&self) -> usize {
        self.ues_per_cell.iter().sum()
    }

    pub fn subframes_per_slot(&self) -> u32 {
        self.slot_ms / self.subframe_ms
    }

    /// Flat action dimensionality: every (cell, UE, RB group) triple.
    pub fn action_dim(&self) -> usize {
        self.total_ues() * self.num_rb_groups
    }

    /// Global index of the first UE of `cell`.
    pub fn first_ue(&self, cell: usize) -> usize {
        self.ues_per_cell[..cell].iter().sum()
    }

    /// Serving cell of every UE in global order.
    pub fn ue_cells(&self) -> Vec<usize> {
        self.ues_per_cell
            .iter()
            .enumerate()
            .flat_map(|(cell, &n)| std::iter::repeat(cell).take(n))
            .collect()
    }

    pub fn grouping(&self) -> RbGrouping {
        RbGrouping::new(self.num_rbs, self.num_rb_groups)
    }
}

/// Contiguous partition of the RBs into near-equal groups; the leading groups
/// absorb the remainder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RbGrouping {
    ranges: Vec<Range<usize>>,
    group_of: Vec<usize>,
}

impl RbGrouping {
    pub fn new(num_rbs: usize, num_groups: usize) -> Self {
        assert!(num_groups >= 1 && num_groups <= num_rbs);
        let base = num_rbs / num_groups;
        let extra = num_rbs % num_groups;
        let mut ranges = Vec::with_capacity(num_groups);
        let mut group_of = Vec::with_capacity(num_rbs);
        let mut start = 0;
        for g in 0..num_groups {
            let len = base + usize::from(g < extra);
            ranges.push(start..start + len);
            group_of.extend(std::iter::repeat(g).take(len));
            start += len;
        }
        Self { ranges, group_of }
    }

    pub fn num_groups(&self) -> usize {
        self.ranges.len()
    }

    pub fn num_rbs(&self) -> usize {
        self.group_of.len()
    }

    pub fn range(&self, group: usize) -> Range<usize> {
        self.ranges[group].clone()
    }

    pub fn size(&self, group: usize) -> usize {
        self.ranges[group].len()
    }

    pub fn group_of(&self, rb: usize) -> usize {
        self.group_of[rb]
    }
}

/// Offered-load description of a UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrafficPattern {
    /// Persistent traffic at the UE's throughput demand.
    ConstantBitRate,
    /// Rate steps `(start_ms, rate_bps)`. A zero-rate segment marks the UE as
    /// inactive; while active, the segment rate is also the throughput demand.
    Piecewise { segments: Vec<(u64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeProfile {
    pub cell_id: usize,
    /// Index within the serving cell.
    pub ue_id: usize,
    pub tp_demand_bps: f64,
    pub delay_demand_ms: f64,
    pub position: [f64; 2],
    pub traffic: TrafficPattern,
}

impl UeProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.tp_demand_bps > 0.0) {
            return Err(Error::InvalidDemand(format!(
                "UE {}/{} throughput demand {} must be positive",
                self.cell_id, self.ue_id, self.tp_demand_bps
            )));
        }
        if !(self.delay_demand_ms > 0.0) {
            return Err(Error::InvalidDemand(format!(
                "UE {}/{} delay demand {} must be positive",
                self.cell_id, self.ue_id, self.delay_demand_ms
            )));
        }
        if let TrafficPattern::Piecewise { segments } = &self.traffic {
            if segments.is_empty() {
                return Err(Error::Config("piecewise traffic needs a segment".into()));
            }
            if segments.windows(2).any(|w| w[1].0 < w[0].0) {
                return Err(Error::Config("traffic segments must be time-ordered".into()));
            }
            if segments.iter().any(|s| !(s.1 >= 0.0 && s.1.is_finite())) {
                return Err(Error::Config("traffic rates must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// Offered rate at simulated time `t_ms`.
    pub fn offered_rate_bps(&self, t_ms: u64) -> f64 {
        match &self.traffic {
            TrafficPattern::ConstantBitRate => self.tp_demand_bps,
            TrafficPattern::Piecewise { segments } => segments
                .iter()
                .take_while(|(start, _)| *start <= t_ms)
                .last()
                .map_or(0.0, |s| s.1),
        }
    }

    /// Throughput demand in force at `t_ms`, `None` while the UE is inactive.
    pub fn demand_at(&self, t_ms: u64) -> Option<f64> {
        match &self.traffic {
            TrafficPattern::ConstantBitRate => Some(self.tp_demand_bps),
            TrafficPattern::Piecewise { .. } => {
                let rate = self.offered_rate_bps(t_ms);
                (rate > 0.0).then_some(rate)
            }
        }
    }
}

/// Per-UE QoS requirement used by the reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeDemand {
    pub cell: usize,
    pub tp_bps: f64,
    pub delay_ms: f64,
}

/// Per-UE QoS measured over one slot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QosSample {
    pub achieved_tp_bps: f64,
    pub achieved_delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_tp: Vec<f64>,
    pub r_delay: Vec<f64>,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn zeros(num_cells: usize) -> Self {
        Self {
            r_tp: vec![0.0; num_cells],
            r_delay: vec![0.0; num_cells],
            total: 0.0,
        }
    }
}

/// How a DU interprets the preference values it receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Continuous values steer the weighted PF allocator.
    Soft,
    /// `{-1, 0, 1}` values forbid, defer or prioritise RB groups.
    Hard,
}

/// Preference value for every (cell, UE, RB group), stored cell-major,
/// UE-minor, group-minor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePolicy {
    ues_per_cell: Vec<usize>,
    num_groups: usize,
    values: Vec<f64>,
}

impl PreferencePolicy {
    pub fn zeros(config: &NetworkConfig) -> Self {
        Self::filled(config, 0.0)
    }

    pub fn filled(config: &NetworkConfig, value: f64) -> Self {
        Self {
            ues_per_cell: config.ues_per_cell.clone(),
            num_groups: config.num_rb_groups,
            values: vec![value; config.action_dim()],
        }
    }

    pub fn from_values(config: &NetworkConfig, values: Vec<f64>) -> Result<Self> {
        if values.len() != config.action_dim() {
            return Err(Error::Shape {
                what: "preference policy",
                expected: config.action_dim(),
                got: values.len(),
            });
        }
        Ok(Self {
            ues_per_cell: config.ues_per_cell.clone(),
            num_groups: config.num_rb_groups,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn total_ues(&self) -> usize {
        self.ues_per_cell.iter().sum()
    }

    pub fn matches(&self, config: &NetworkConfig) -> bool {
        self.ues_per_cell == config.ues_per_cell && self.num_groups == config.num_rb_groups
    }

    fn offset(&self, cell: usize, ue: usize) -> usize {
        let first: usize = self.ues_per_cell[..cell].iter().sum();
        (first + ue) * self.num_groups
    }

    pub fn get(&self, cell: usize, ue: usize, group: usize) -> f64 {
        self.values[self.offset(cell, ue) + group]
    }

    pub fn set(&mut self, cell: usize, ue: usize, group: usize, value: f64) {
        let idx = self.offset(cell, ue) + group;
        self.values[idx] = value;
    }

    /// All group preferences of UE `ue` in `cell`.
    pub fn ue(&self, cell: usize, ue: usize) -> &[f64] {
        let start = self.offset(cell, ue);
        &self.values[start..start + self.num_groups]
    }

    pub fn is_valid_soft(&self) -> bool {
        self.values.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    pub fn is_valid_hard(&self) -> bool {
        self.values.iter().all(|&v| v == -1.0 || v == 0.0 || v == 1.0)
    }

    pub fn validate(&self, mode: PolicyMode) -> Result<()> {
        let ok = match mode {
            PolicyMode::Soft => self.is_valid_soft(),
            PolicyMode::Hard => self.is_valid_hard(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidPolicy(format!(
                "values outside the {mode:?} policy domain"
            )))
        }
    }

    /// Rounds to `{-1, 0, 1}` with decision thresholds at ±1/3.
    pub fn quantized(&self) -> Self {
        let values = self.values.iter().map(|&v| quantize(v)).collect();
        Self {
            values,
            ..self.clone()
        }
    }

    /// Contiguous span `(start, len)` of the widest run of non-negative
    /// preferences for a UE, used as its bandwidth-part annotation.
    pub fn bwp_span(&self, cell: usize, ue: usize) -> (usize, usize) {
        let prefs = self.ue(cell, ue);
        let mut best = (0, 0);
        let mut run_start = None;
        for (g, &p) in prefs.iter().chain(std::iter::once(&-1.0)).enumerate() {
            match (p >= 0.0, run_start) {
                (true, None) => run_start = Some(g),
                (false, Some(s)) => {
                    if g - s > best.1 {
                        best = (s, g - s);
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
        best
    }
}

pub fn quantize(v: f64) -> f64 {
    if v > 1.0 / 3.0 {
        1.0
    } else if v < -1.0 / 3.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouping_of_106_rbs() {
        let g = RbGrouping::new(106, 10);
        let sizes: Vec<_> = (0..10).map(|i| g.size(i)).collect();
        assert_eq!(sizes, vec![11, 11, 11, 11, 11, 11, 10, 10, 10, 10]);
        assert_eq!(g.group_of(0), 0);
        assert_eq!(g.group_of(105), 9);
        assert_eq!(g.range(6), 66..76);
    }

    #[test]
    fn config_validation() {
        let mut cfg = NetworkConfig::default();
        cfg.validate().unwrap();
        cfg.slot_ms = 5;
        assert!(cfg.validate().is_err());
        cfg.slot_ms = 100;
        cfg.lambda_p[1] = -0.5;
        assert!(cfg.validate().is_err());
        cfg.lambda_p[1] = 1.0;
        cfg.num_rb_groups = 200;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn policy_indexing_is_cell_major() {
        let cfg = NetworkConfig::default();
        let mut p = PreferencePolicy::zeros(&cfg);
        p.set(1, 2, 7, 0.5);
        assert_eq!(p.values()[(3 + 2) * 10 + 7], 0.5);
        assert_eq!(p.ue(1, 2)[7], 0.5);
        assert!(PreferencePolicy::from_values(&cfg, vec![0.0; 3]).is_err());
    }

    #[test]
    fn bwp_span_picks_widest_run() {
        let cfg = NetworkConfig {
            num_cells: 1,
            ues_per_cell: vec![1],
            lambda_p: vec![1.0],
            lambda_d: vec![1.0],
            ..NetworkConfig::default()
        };
        let vals = vec![0.2, -0.1, 0.0, 0.5, 0.9, -1.0, 0.1, 0.1, -0.3, 0.0];
        let p = PreferencePolicy::from_values(&cfg, vals).unwrap();
        assert_eq!(p.bwp_span(0, 0), (2, 3));
    }

    #[test]
    fn piecewise_demand_tracks_segments() {
        let ue = UeProfile {
            cell_id: 0,
            ue_id: 0,
            tp_demand_bps: 10e6,
            delay_demand_ms: 50.0,
            position: [0.0, 0.0],
            traffic: TrafficPattern::Piecewise {
                segments: vec![(0, 0.0), (1000, 20e6), (5000, 40e6)],
            },
        };
        assert_eq!(ue.demand_at(500), None);
        assert_eq!(ue.demand_at(1000), Some(20e6));
        assert_eq!(ue.offered_rate_bps(9000), 40e6);
    }

    proptest::proptest! {
        #[test]
        fn grouping_sizes_differ_by_at_most_one(rbs in 1usize..300, groups in 1usize..40) {
            proptest::prop_assume!(groups <= rbs);
            let g = RbGrouping::new(rbs, groups);
            let sizes: Vec<_> = (0..groups).map(|i| g.size(i)).collect();
            let max = *sizes.iter().max().unwrap();
            let min = *sizes.iter().min().unwrap();
            proptest::prop_assert!(max - min <= 1);
            proptest::prop_assert_eq!(sizes.iter().sum::<usize>(), rbs);
        }

        #[test]
        fn hard_policies_are_soft(vals in proptest::collection::vec(-3.0f64..3.0, 100)) {
            let cfg = NetworkConfig::default();
            let p = PreferencePolicy::from_values(&cfg, vals).unwrap().quantized();
            proptest::prop_assert!(p.is_valid_hard());
            proptest::prop_assert!(p.is_valid_soft());
        }
    }
}
