//! Slot-level KPM aggregation and the normalized RIC state vector.
//!
//! Layout of the state vector: cell-major, then UE, then the nine features
//! below in this order.
//!
//! | idx | feature              | normalization                      |
//! |-----|----------------------|------------------------------------|
//! | 0   | achieved throughput  | / 200 Mbps, clipped                |
//! | 1   | queue delay          | / 5000 ms, clipped                 |
//! | 2   | PRBs granted         | mean RBs per subframe / num_rbs    |
//! | 3   | uplink SNR proxy     | (dB + 10) / 60, clipped            |
//! | 4   | power headroom proxy | (dB + 23) / 63, clipped            |
//! | 5   | MCS                  | mean index over sent blocks / 28   |
//! | 6   | BLER                 | failed / sent blocks               |
//! | 7   | current TBS          | mean bits per subframe / band peak |
//! | 8   | scheduled subframes  | share of subframes with any RB     |

use serde::{Deserialize, Serialize};

use crate::radio::MAX_MCS;

pub const FEATURES_PER_UE: usize = 9;

/// One UE's MAC/PHY sample for one subframe.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KpmSample {
    pub delivered_bits: u64,
    pub scheduled_rbs: usize,
    pub tb_bits: u64,
    /// MCS index of the transport block, if one was sent.
    pub mcs: Option<u8>,
    pub failed: bool,
    pub wideband_sinr_db: f64,
}

/// Raw per-UE slot statistics, kept next to the normalized features.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UeSlotKpm {
    pub tp_bps: f64,
    pub delay_ms: f64,
    pub prbs_mean: f64,
    pub ul_snr_db: f64,
    pub phr_db: f64,
    pub mcs_mean: f64,
    pub bler: f64,
    pub tbs_mean_bits: f64,
    pub scheduled_fraction: f64,
    pub sinr_db: f64,
    /// Throughput demand in force, `None` while the UE is inactive.
    pub demand_bps: Option<f64>,
    pub disconnected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub tp_cap_bps: f64,
    pub delay_cap_ms: f64,
    pub num_rbs: usize,
    pub peak_tb_bits: f64,
    pub snr_range_db: (f64, f64),
    pub phr_range_db: (f64, f64),
}

impl FeatureBounds {
    pub fn new(num_rbs: usize, peak_tb_bits: f64) -> Self {
        Self {
            tp_cap_bps: 200e6,
            delay_cap_ms: 5000.0,
            num_rbs,
            peak_tb_bits,
            snr_range_db: (-10.0, 50.0),
            phr_range_db: (-23.0, 40.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SlotObservation {
    pub features: Vec<f64>,
    pub ues: Vec<UeSlotKpm>,
}

impl SlotObservation {
    pub fn zeros(num_ues: usize) -> Self {
        Self {
            features: vec![0.0; num_ues * FEATURES_PER_UE],
            ues: vec![UeSlotKpm::default(); num_ues],
        }
    }

    pub fn ue_features(&self, ue: usize) -> &[f64] {
        &self.features[ue * FEATURES_PER_UE..(ue + 1) * FEATURES_PER_UE]
    }
}

/// Means over the subframe samples of one slot; delay, proxies and demand
/// are left for the caller.
pub fn aggregate_samples(samples: &[KpmSample], slot_s: f64) -> UeSlotKpm {
    let n = samples.len().max(1) as f64;
    let bits: u64 = samples.iter().map(|s| s.delivered_bits).sum();
    let rbs: usize = samples.iter().map(|s| s.scheduled_rbs).sum();
    let tbs: u64 = samples.iter().map(|s| s.tb_bits).sum();
    let sent: Vec<u8> = samples.iter().filter_map(|s| s.mcs).collect();
    let failed = samples.iter().filter(|s| s.mcs.is_some() && s.failed).count();
    let scheduled = samples.iter().filter(|s| s.scheduled_rbs > 0).count();
    let sinr: f64 = samples.iter().map(|s| s.wideband_sinr_db).sum();
    let mcs_sum: u64 = sent.iter().map(|&m| u64::from(m)).sum();
    let denom_sent = sent.len().max(1) as f64;
    UeSlotKpm {
        tp_bps: bits as f64 / slot_s,
        prbs_mean: rbs as f64 / n,
        mcs_mean: mcs_sum as f64 / denom_sent,
        bler: failed as f64 / denom_sent,
        tbs_mean_bits: tbs as f64 / n,
        scheduled_fraction: scheduled as f64 / n,
        sinr_db: if samples.is_empty() { 0.0 } else { sinr / n },
        ..UeSlotKpm::default()
    }
}

fn ramp(x: f64, (lo, hi): (f64, f64)) -> f64 {
    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
}

pub fn normalize(kpm: &UeSlotKpm, bounds: &FeatureBounds) -> [f64; FEATURES_PER_UE] {
    // A UE without any uplink report contributes zero padding.
    let snr = if kpm.ul_snr_db == 0.0 && kpm.phr_db == 0.0 {
        (0.0, 0.0)
    } else {
        (ramp(kpm.ul_snr_db, bounds.snr_range_db), ramp(kpm.phr_db, bounds.phr_range_db))
    };
    [
        (kpm.tp_bps / bounds.tp_cap_bps).clamp(0.0, 1.0),
        (kpm.delay_ms / bounds.delay_cap_ms).clamp(0.0, 1.0),
        (kpm.prbs_mean / bounds.num_rbs as f64).clamp(0.0, 1.0),
        snr.0,
        snr.1,
        (kpm.mcs_mean / f64::from(MAX_MCS)).clamp(0.0, 1.0),
        kpm.bler.clamp(0.0, 1.0),
        (kpm.tbs_mean_bits / bounds.peak_tb_bits).clamp(0.0, 1.0),
        kpm.scheduled_fraction.clamp(0.0, 1.0),
    ]
}

pub fn build_observation(ues: Vec<UeSlotKpm>, bounds: &FeatureBounds) -> SlotObservation {
    let features = ues.iter().flat_map(|k| normalize(k, bounds)).collect();
    SlotObservation { features, ues }
}
