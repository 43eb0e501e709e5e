//! Physical scenario description and the built-in presets.

use serde::{Deserialize, Serialize};

use crate::domain::{NetworkConfig, TrafficPattern, UeProfile};
use crate::error::{Error, Result};
use crate::mac::WeightRule;
use crate::radio::{log_distance_pathloss_db, McsTable, RadioParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathlossModel {
    pub pl_1m_db: f64,
    pub exponent: f64,
    /// Extra penetration loss on every link from a non-serving cell.
    pub cross_cell_wall_db: f64,
}

impl Default for PathlossModel {
    fn default() -> Self {
        Self {
            pl_1m_db: 40.0,
            exponent: 3.0,
            cross_cell_wall_db: 0.0,
        }
    }
}

/// Rule that flags a UE as disconnected after sustained link failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisconnectRule {
    pub bler_threshold: f64,
    pub tp_fraction: f64,
    pub consecutive_slots: u32,
    /// Slots the UE stays unscheduled before it reattaches.
    pub reconnect_slots: u32,
}

impl Default for DisconnectRule {
    fn default() -> Self {
        Self {
            bler_threshold: 0.9,
            tp_fraction: 0.01,
            consecutive_slots: 3,
            reconnect_slots: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub network: NetworkConfig,
    /// Global UE order: cell-major, then `ue_id`.
    pub ues: Vec<UeProfile>,
    pub cell_positions: Vec<[f64; 2]>,
    pub pathloss: PathlossModel,
    /// Explicit `[cell * total_ues + ue]` pathloss, replacing the geometry.
    #[serde(default)]
    pub pathloss_override_db: Option<Vec<f64>>,
    pub tx_power_dbm_per_rb: f64,
    pub ue_max_power_dbm: f64,
    pub radio: RadioParams,
    #[serde(default)]
    pub mcs_table: Option<McsTable>,
    pub e2_latency_ms: u64,
    pub weight_rule: WeightRule,
    pub packet_size_bytes: u64,
    /// Drop-tail buffer per UE, expressed as time at its peak offered rate.
    pub queue_limit_ms: u64,
    pub disconnect: DisconnectRule,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let n = &self.network;
        if self.ues.len() != n.total_ues() {
            return Err(Error::Config(format!(
                "{} UE profiles for {} configured UEs",
                self.ues.len(),
                n.total_ues()
            )));
        }
        for (idx, (ue, cell)) in self.ues.iter().zip(n.ue_cells()).enumerate() {
            ue.validate()?;
            if ue.cell_id != cell || ue.ue_id != idx - n.first_ue(cell) {
                return Err(Error::Config(format!(
                    "UE profile {idx} must be cell {cell} ue {}",
                    idx - n.first_ue(cell)
                )));
            }
        }
        if self.cell_positions.len() != n.num_cells {
            return Err(Error::Config("one position per cell required".into()));
        }
        if let Some(pl) = &self.pathloss_override_db {
            if pl.len() != n.num_cells * n.total_ues() {
                return Err(Error::Shape {
                    what: "pathloss override",
                    expected: n.num_cells * n.total_ues(),
                    got: pl.len(),
                });
            }
        }
        if self.packet_size_bytes == 0 {
            return Err(Error::Config("packet size must be positive".into()));
        }
        Ok(())
    }

    /// `[cell * total_ues + ue]` pathloss in dB.
    pub fn pathloss_db(&self) -> Vec<f64> {
        if let Some(pl) = &self.pathloss_override_db {
            return pl.clone();
        }
        let mut out = Vec::with_capacity(self.cell_positions.len() * self.ues.len());
        for (cell, pos) in self.cell_positions.iter().enumerate() {
            for ue in &self.ues {
                let d = ((pos[0] - ue.position[0]).powi(2) + (pos[1] - ue.position[1]).powi(2)).sqrt();
                let wall = if ue.cell_id == cell { 0.0 } else { self.pathloss.cross_cell_wall_db };
                out.push(log_distance_pathloss_db(d, self.pathloss.pl_1m_db, self.pathloss.exponent, wall));
            }
        }
        out
    }

    /// Drop-tail limit at `t_ms`: `queue_limit_ms` of the rate offered then.
    pub fn queue_limit_bytes(&self, ue: usize, t_ms: u64) -> u64 {
        let rate = self.ues[ue].offered_rate_bps(t_ms);
        (rate * self.queue_limit_ms as f64 / 8000.0).ceil() as u64 + self.packet_size_bytes
    }

    pub fn mcs_table(&self) -> McsTable {
        self.mcs_table.clone().unwrap_or_default()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.network.rng_seed = seed;
        self
    }

    /// Multiplies the demand of every UE by `factor` from `at_ms` on.
    pub fn with_demand_step(mut self, at_ms: u64, factor: f64) -> Self {
        for ue in &mut self.ues {
            let base = ue.tp_demand_bps;
            ue.traffic = TrafficPattern::Piecewise {
                segments: vec![(0, base), (at_ms, base * factor)],
            };
        }
        self
    }

    /// Three cells on a 12 m triangle with strong cross-cell coupling. Every
    /// cell has one UE near the middle of the triangle, where all three cells
    /// arrive at similar power, and its remaining UEs close to the cell.
    pub fn lab() -> Self {
        let cells: [[f64; 2]; 3] = [[0.0, 0.0], [12.0, 0.0], [6.0, 10.392]];
        let centroid = [6.0, 3.464];
        let mut ues = Vec::new();
        let layout: [&[(f64, f64)]; 3] = [
            &[(28e6, 1.5), (22e6, 2.5), (20e6, 0.0)],
            &[(26e6, 1.5), (24e6, 2.0), (18e6, 0.0)],
            &[(20e6, 1.5), (18e6, 2.0), (16e6, 2.5), (16e6, 0.0)],
        ];
        for (cell, spec) in layout.iter().enumerate() {
            let c = cells[cell];
            let away = [c[0] - centroid[0], c[1] - centroid[1]];
            let norm = (away[0].powi(2) + away[1].powi(2)).sqrt();
            for (ue_id, &(demand, dist)) in spec.iter().enumerate() {
                let position = if dist == 0.0 {
                    // Edge UE: a little towards its own cell from the centroid.
                    [centroid[0] + 0.08 * away[0], centroid[1] + 0.08 * away[1]]
                } else {
                    let angle = ue_id as f64 * 0.9;
                    let (s, co) = angle.sin_cos();
                    let dir = [away[0] / norm, away[1] / norm];
                    let rot = [dir[0] * co - dir[1] * s, dir[0] * s + dir[1] * co];
                    [c[0] + dist * rot[0], c[1] + dist * rot[1]]
                };
                ues.push(UeProfile {
                    cell_id: cell,
                    ue_id,
                    tp_demand_bps: demand,
                    delay_demand_ms: if dist == 0.0 { 50.0 } else { 20.0 },
                    position,
                    traffic: TrafficPattern::ConstantBitRate,
                });
            }
        }
        Self {
            name: "lab".into(),
            network: NetworkConfig::default(),
            ues,
            cell_positions: cells.to_vec(),
            pathloss: PathlossModel::default(),
            pathloss_override_db: None,
            tx_power_dbm_per_rb: -10.0,
            ue_max_power_dbm: 23.0,
            radio: RadioParams::default(),
            mcs_table: None,
            e2_latency_ms: 0,
            weight_rule: WeightRule::FavorableFraction,
            packet_size_bytes: 1500,
            queue_limit_ms: 100,
            disconnect: DisconnectRule::default(),
        }
    }

    /// The lab cells moved into separate rooms 18 m apart: walls add 20 dB to
    /// every cross-cell link and the RIC sits 200 ms away.
    pub fn building() -> Self {
        let mut s = Self::lab();
        s.name = "building".into();
        let scale = 18.0 / 12.0;
        for p in &mut s.cell_positions {
            p[0] *= scale;
            p[1] *= scale;
        }
        for ue in &mut s.ues {
            ue.position[0] *= scale;
            ue.position[1] *= scale;
            ue.tp_demand_bps *= 1.5;
        }
        s.pathloss.cross_cell_wall_db = 20.0;
        s.e2_latency_ms = 200;
        s
    }

    /// Two cells, one UE each, both UEs hearing the other cell nearly as
    /// loudly as their own. Demands 50 and 60 Mbps.
    pub fn two_cell_coupled() -> Self {
        let ues = vec![
            UeProfile {
                cell_id: 0,
                ue_id: 0,
                tp_demand_bps: 50e6,
                delay_demand_ms: 50.0,
                position: [4.0, 0.0],
                traffic: TrafficPattern::ConstantBitRate,
            },
            UeProfile {
                cell_id: 1,
                ue_id: 0,
                tp_demand_bps: 60e6,
                delay_demand_ms: 50.0,
                position: [6.0, 0.0],
                traffic: TrafficPattern::ConstantBitRate,
            },
        ];
        Self {
            name: "two_cell_coupled".into(),
            network: NetworkConfig {
                num_cells: 2,
                ues_per_cell: vec![1, 1],
                lambda_p: vec![1.0; 2],
                lambda_d: vec![1.0; 2],
                ..NetworkConfig::default()
            },
            ues,
            cell_positions: vec![[0.0, 0.0], [10.0, 0.0]],
            pathloss: PathlossModel::default(),
            pathloss_override_db: None,
            tx_power_dbm_per_rb: -10.0,
            ue_max_power_dbm: 23.0,
            radio: RadioParams::default(),
            mcs_table: None,
            e2_latency_ms: 0,
            weight_rule: WeightRule::FavorableFraction,
            packet_size_bytes: 1500,
            queue_limit_ms: 2000,
            disconnect: DisconnectRule::default(),
        }
    }

    /// One cell, one UE with a fixed pathloss and no fading; used for
    /// closed-form checks.
    pub fn single_link(pathloss_db: f64, demand_bps: f64) -> Self {
        let mut radio = RadioParams::default();
        radio.shadowing_sigma_db = 0.0;
        radio.fast_fading_sigma_db = 0.0;
        Self {
            name: "single_link".into(),
            network: NetworkConfig {
                num_cells: 1,
                ues_per_cell: vec![1],
                lambda_p: vec![1.0],
                lambda_d: vec![1.0],
                ..NetworkConfig::default()
            },
            ues: vec![UeProfile {
                cell_id: 0,
                ue_id: 0,
                tp_demand_bps: demand_bps,
                delay_demand_ms: 50.0,
                position: [1.0, 0.0],
                traffic: TrafficPattern::ConstantBitRate,
            }],
            cell_positions: vec![[0.0, 0.0]],
            pathloss: PathlossModel::default(),
            pathloss_override_db: Some(vec![pathloss_db]),
            tx_power_dbm_per_rb: -10.0,
            ue_max_power_dbm: 23.0,
            radio,
            mcs_table: None,
            e2_latency_ms: 0,
            weight_rule: WeightRule::FavorableFraction,
            packet_size_bytes: 1500,
            queue_limit_ms: 2000,
            disconnect: DisconnectRule::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "lab" => Ok(Self::lab()),
            "building" => Ok(Self::building()),
            "two_cell_coupled" => Ok(Self::two_cell_coupled()),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }
}
