//! Parametric downlink PHY: link budget, SINR, CQI/MCS mapping, transport
//! block sizing and a logistic block-error curve.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsRow {
    pub cqi: u8,
    pub mcs: u8,
    /// Information bits per resource element.
    pub spectral_efficiency: f64,
    /// SINR at which the block error rate is one half.
    pub sinr_threshold_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsTable {
    rows: Vec<McsRow>,
}

/// 4-bit CQI table (64QAM) with approximate AWGN switching points.
const DEFAULT_ROWS: [(u8, u8, f64, f64); 15] = [
    (1, 0, 0.1523, -6.7),
    (2, 0, 0.2344, -4.7),
    (3, 2, 0.3770, -2.3),
    (4, 4, 0.6016, 0.2),
    (5, 6, 0.8770, 2.4),
    (6, 8, 1.1758, 4.3),
    (7, 11, 1.4766, 5.9),
    (8, 13, 1.9141, 8.1),
    (9, 15, 2.4063, 10.3),
    (10, 18, 2.7305, 11.7),
    (11, 20, 3.3223, 14.1),
    (12, 22, 3.9023, 16.3),
    (13, 24, 4.5234, 18.7),
    (14, 26, 5.1152, 21.0),
    (15, 28, 5.5547, 22.7),
];

pub const MAX_MCS: u8 = 28;

impl Default for McsTable {
    fn default() -> Self {
        let rows = DEFAULT_ROWS
            .iter()
            .map(|&(cqi, mcs, se, thr)| McsRow {
                cqi,
                mcs,
                spectral_efficiency: se,
                sinr_threshold_db: thr,
            })
            .collect();
        Self { rows }
    }
}

impl McsTable {
    /// Builds a table from rows listed for CQI 1, 2, ... in order.
    pub fn from_rows(rows: Vec<McsRow>) -> Result<Self> {
        if rows.is_empty() || rows.len() > 15 {
            return Err(Error::Config(format!(
                "MCS table needs 1..=15 rows, got {}",
                rows.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if usize::from(row.cqi) != i + 1 {
                return Err(Error::Config(format!(
                    "MCS table row {i} has cqi {}, expected {}",
                    row.cqi,
                    i + 1
                )));
            }
            if !(row.spectral_efficiency > 0.0 && row.sinr_threshold_db.is_finite()) {
                return Err(Error::Config(format!("MCS table row {i} is not finite/positive")));
            }
        }
        for w in rows.windows(2) {
            if !(w[1].sinr_threshold_db > w[0].sinr_threshold_db
                && w[1].spectral_efficiency > w[0].spectral_efficiency)
            {
                return Err(Error::Config(format!(
                    "MCS table must be strictly increasing at cqi {}",
                    w[1].cqi
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[McsRow] {
        &self.rows
    }

    pub fn max_cqi(&self) -> u8 {
        self.rows.len() as u8
    }

    fn row(&self, cqi: u8) -> Option<&McsRow> {
        cqi.checked_sub(1).and_then(|i| self.rows.get(usize::from(i)))
    }

    pub fn threshold_db(&self, cqi: u8) -> Option<f64> {
        self.row(cqi).map(|r| r.sinr_threshold_db)
    }

    pub fn mcs_index(&self, cqi: u8) -> u8 {
        self.row(cqi).map_or(0, |r| r.mcs)
    }

    pub fn spectral_efficiency(&self, cqi: u8) -> f64 {
        self.row(cqi).map_or(0.0, |r| r.spectral_efficiency)
    }

    /// Largest CQI whose threshold does not exceed `sinr_db`, 0 if none does.
    pub fn cqi_from_sinr(&self, sinr_db: f64) -> u8 {
        self.rows
            .iter()
            .take_while(|r| r.sinr_threshold_db <= sinr_db)
            .last()
            .map_or(0, |r| r.cqi)
    }

    /// Payload bits carried by `rbs` resource blocks in one subframe.
    pub fn rb_bits(&self, cqi: u8, rbs: usize, re_per_rb: u32) -> u64 {
        let bits = rbs as f64 * f64::from(re_per_rb) * self.spectral_efficiency(cqi);
        bits.floor() as u64
    }

    /// Block error probability at `sinr_db` for the MCS selected by `cqi`.
    /// CQI 0 carries nothing and always fails.
    pub fn bler(&self, sinr_db: f64, cqi: u8, slope: f64) -> f64 {
        match self.threshold_db(cqi) {
            None => 1.0,
            Some(thr) => 1.0 / (1.0 + (slope * (sinr_db - thr)).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub re_per_rb: u32,
    pub bler_slope_per_db: f64,
    /// Back-off applied to SINR estimates before CQI selection.
    pub link_margin_db: f64,
    pub sinr_min_db: f64,
    pub sinr_max_db: f64,
    pub noise_dbm_per_rb: f64,
    pub shadowing_sigma_db: f64,
    /// Per-slot correlation of the shadowing process.
    pub shadowing_correlation: f64,
    pub fast_fading_sigma_db: f64,
    /// Smoothing factor of the UE-side SINR estimate behind CQI reports.
    pub cqi_filter: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        let slope = 1.5;
        Self {
            re_per_rb: 288,
            bler_slope_per_db: slope,
            // Puts the first transmission at 10% BLER for an exact estimate.
            link_margin_db: 9f64.ln() / slope,
            sinr_min_db: -60.0,
            sinr_max_db: 60.0,
            noise_dbm_per_rb: -104.0,
            shadowing_sigma_db: 2.0,
            shadowing_correlation: 0.95,
            fast_fading_sigma_db: 1.0,
            cqi_filter: 0.3,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Link gains between every cell and every UE.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    num_cells: usize,
    num_ues: usize,
    num_groups: usize,
    /// `[cell * num_ues + ue]`
    pub pathloss_db: Vec<f64>,
    /// `[cell * num_ues + ue]`
    pub shadowing_db: Vec<f64>,
    /// `[(cell * num_ues + ue) * num_groups + group]`
    pub fast_fade_db: Vec<f64>,
    pub tx_power_dbm_per_rb: Vec<f64>,
    pub noise_dbm_per_rb: f64,
    pub shadowing_sigma_db: f64,
    pub shadowing_correlation: f64,
    pub fast_fading_sigma_db: f64,
    sinr_bounds: (f64, f64),
}

impl ChannelState {
    pub fn new(
        pathloss_db: Vec<f64>,
        tx_power_dbm_per_rb: Vec<f64>,
        num_ues: usize,
        num_groups: usize,
        params: &RadioParams,
    ) -> Result<Self> {
        let num_cells = tx_power_dbm_per_rb.len();
        if pathloss_db.len() != num_cells * num_ues {
            return Err(Error::Shape {
                what: "pathloss matrix",
                expected: num_cells * num_ues,
                got: pathloss_db.len(),
            });
        }
        if pathloss_db.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("pathloss entries must be finite and >= 0 dB".into()));
        }
        if !(0.0..=1.0).contains(&params.shadowing_correlation) {
            return Err(Error::Config("shadowing correlation must lie in [0, 1]".into()));
        }
        Ok(Self {
            num_cells,
            num_ues,
            num_groups,
            shadowing_db: vec![0.0; pathloss_db.len()],
            fast_fade_db: vec![0.0; pathloss_db.len() * num_groups],
            pathloss_db,
            tx_power_dbm_per_rb,
            noise_dbm_per_rb: params.noise_dbm_per_rb,
            shadowing_sigma_db: params.shadowing_sigma_db,
            shadowing_correlation: params.shadowing_correlation,
            fast_fading_sigma_db: params.fast_fading_sigma_db,
            sinr_bounds: (params.sinr_min_db, params.sinr_max_db),
        })
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    /// Draws the initial shadowing from its stationary distribution.
    pub fn init_shadowing<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let sigma = self.shadowing_sigma_db;
        for s in &mut self.shadowing_db {
            let z: f64 = rng.sample(StandardNormal);
            *s = sigma * z;
        }
    }

    /// Received power per RB from `cell` at `ue` on `group`.
    pub fn rx_dbm(&self, cell: usize, ue: usize, group: usize) -> f64 {
        let link = cell * self.num_ues + ue;
        self.tx_power_dbm_per_rb[cell] - self.pathloss_db[link] - self.shadowing_db[link]
            + self.fast_fade_db[link * self.num_groups + group]
    }

    /// SINR at `ue` on `group` when served by `serving` while every cell in
    /// `interferers` transmits on the same group.
    pub fn sinr_db(&self, serving: usize, ue: usize, group: usize, interferers: &[usize]) -> f64 {
        debug_assert!(!interferers.contains(&serving));
        let signal = db_to_linear(self.rx_dbm(serving, ue, group));
        let interference: f64 = interferers
            .iter()
            .map(|&c| db_to_linear(self.rx_dbm(c, ue, group)))
            .sum();
        let noise = db_to_linear(self.noise_dbm_per_rb);
        let (lo, hi) = self.sinr_bounds;
        linear_to_db(signal / (noise + interference)).clamp(lo, hi)
    }

    /// First-order autoregressive shadowing step; called once per slot.
    pub fn advance_slot<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let rho = self.shadowing_correlation;
        let innovation = self.shadowing_sigma_db * (1.0 - rho * rho).sqrt();
        if innovation == 0.0 {
            return;
        }
        for s in &mut self.shadowing_db {
            let z: f64 = rng.sample(StandardNormal);
            *s = rho * *s + innovation * z;
        }
    }

    /// Independent fast-fading redraw; called once per subframe.
    pub fn advance_subframe<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let sigma = self.fast_fading_sigma_db;
        if sigma == 0.0 {
            return;
        }
        for f in &mut self.fast_fade_db {
            let z: f64 = rng.sample(StandardNormal);
            *f = sigma * z;
        }
    }
}

/// One slot of channel evolution: a shadowing step plus a fading redraw.
pub fn evolve_channel<R: Rng + ?Sized>(state: &ChannelState, rng: &mut R) -> ChannelState {
    let mut next = state.clone();
    next.advance_slot(rng);
    next.advance_subframe(rng);
    next
}

/// Log-distance pathloss with a 1 m reference and optional wall penetration.
pub fn log_distance_pathloss_db(distance_m: f64, pl_1m_db: f64, exponent: f64, walls_db: f64) -> f64 {
    pl_1m_db + 10.0 * exponent * distance_m.max(1.0).log10() + walls_db
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params_without_fading() -> RadioParams {
        RadioParams {
            shadowing_sigma_db: 0.0,
            fast_fading_sigma_db: 0.0,
            ..RadioParams::default()
        }
    }

    /// Three cells, one UE, all links chosen so the UE receives `rx_dbm`.
    fn flat_channel(rx_dbm: f64, noise_dbm: f64) -> ChannelState {
        let params = RadioParams {
            noise_dbm_per_rb: noise_dbm,
            ..params_without_fading()
        };
        ChannelState::new(vec![100.0; 3], vec![rx_dbm + 100.0; 3], 1, 2, &params).unwrap()
    }

    #[test]
    fn sinr_examples() {
        let ch = flat_channel(-90.0, -90.0);
        assert_abs_diff_eq!(ch.sinr_db(0, 0, 0, &[]), 0.0, epsilon = 1e-9);

        let quiet = flat_channel(-90.0, -250.0);
        assert_abs_diff_eq!(quiet.sinr_db(0, 0, 1, &[1]), 0.0, epsilon = 1e-6);
        // 10 log10(1/2)
        let expected = 10.0 * 0.5f64.log10();
        assert_abs_diff_eq!(quiet.sinr_db(0, 0, 1, &[1, 2]), expected, epsilon = 1e-6);
        assert_abs_diff_eq!(expected, -3.0103, epsilon = 1e-4);
    }

    #[test]
    fn sinr_saturates() {
        let ch = flat_channel(0.0, -300.0);
        assert_eq!(ch.sinr_db(0, 0, 0, &[]), 60.0);
    }

    #[test]
    fn cqi_mapping_examples() {
        let t = McsTable::default();
        assert_eq!(t.cqi_from_sinr(-20.0), 0);
        assert_eq!(t.cqi_from_sinr(t.threshold_db(7).unwrap()), 7);
        assert_eq!(t.cqi_from_sinr(40.0), 15);
    }

    #[test]
    fn rb_bits_examples() {
        let t = McsTable::default();
        assert_eq!(t.rb_bits(0, 106, 288), 0);
        assert_eq!(t.rb_bits(9, 0, 288), 0);
        let one = t.rb_bits(9, 10, 288);
        let two = t.rb_bits(9, 20, 288);
        assert!(two.abs_diff(2 * one) <= 1);
        // 106 RBs at the top CQI is roughly 170 Mbit/s.
        assert_eq!(t.rb_bits(15, 106, 288), (106.0 * 288.0 * 5.5547f64).floor() as u64);
    }

    #[test]
    fn bler_examples() {
        let t = McsTable::default();
        let thr = t.threshold_db(9).unwrap();
        assert_abs_diff_eq!(t.bler(thr, 9, 1.5), 0.5, epsilon = 1e-12);
        assert!(t.bler(1e3, 9, 1.5) < 1e-12);
        assert!(t.bler(-1e3, 9, 1.5) > 1.0 - 1e-12);
        assert_eq!(t.bler(30.0, 0, 1.5), 1.0);
    }

    #[test]
    fn table_rejects_non_monotone_rows() {
        let mut rows = McsTable::default().rows().to_vec();
        rows.swap(3, 4);
        rows[3].cqi = 4;
        rows[4].cqi = 5;
        assert!(McsTable::from_rows(rows).is_err());
        assert!(McsTable::from_rows(McsTable::default().rows().to_vec()).is_ok());
    }

    #[test]
    fn unit_correlation_freezes_shadowing() {
        let params = RadioParams {
            shadowing_correlation: 1.0,
            ..RadioParams::default()
        };
        let mut ch = ChannelState::new(vec![60.0; 4], vec![0.0; 2], 2, 3, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        ch.init_shadowing(&mut rng);
        let before = ch.shadowing_db.clone();
        for _ in 0..50 {
            ch = evolve_channel(&ch, &mut rng);
        }
        assert_eq!(before, ch.shadowing_db);
    }

    #[test]
    fn evolution_is_seed_deterministic() {
        let params = RadioParams::default();
        let base = ChannelState::new(vec![60.0; 6], vec![0.0; 3], 2, 4, &params).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ch = base.clone();
            let mut out = Vec::new();
            for _ in 0..20 {
                ch = evolve_channel(&ch, &mut rng);
                out.extend_from_slice(&ch.shadowing_db);
                out.extend_from_slice(&ch.fast_fade_db);
            }
            out
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn shadowing_variance_matches_configuration() {
        // Monte-Carlo oracle: the stationary variance of the AR(1) walk.
        let params = RadioParams {
            shadowing_sigma_db: 3.0,
            shadowing_correlation: 0.5,
            ..RadioParams::default()
        };
        let mut ch = ChannelState::new(vec![60.0], vec![0.0], 1, 1, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        ch.init_shadowing(&mut rng);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            ch.advance_slot(&mut rng);
            let x = ch.shadowing_db[0];
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((var / 9.0 - 1.0).abs() < 0.05, "variance {var}");
    }

    proptest! {
        #[test]
        fn interferer_never_raises_sinr(
            pl in proptest::collection::vec(40.0f64..130.0, 3),
            group in 0usize..2,
        ) {
            let ch = ChannelState::new(pl, vec![10.0; 3], 1, 2, &params_without_fading()).unwrap();
            let alone = ch.sinr_db(0, 0, group, &[]);
            let one = ch.sinr_db(0, 0, group, &[1]);
            let two = ch.sinr_db(0, 0, group, &[1, 2]);
            prop_assert!(one <= alone && two <= one);
        }

        #[test]
        fn bler_monotone_in_sinr(a in -30.0f64..40.0, b in -30.0f64..40.0, cqi in 1u8..=15) {
            let t = McsTable::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(t.bler(hi, cqi, 1.5) <= t.bler(lo, cqi, 1.5));
        }
    }

    #[test]
    fn cqi_idempotent_on_thresholds() {
        let t = McsTable::default();
        for row in t.rows() {
            let cqi = t.cqi_from_sinr(row.sinr_threshold_db);
            assert_eq!(cqi, row.cqi);
            assert_eq!(t.cqi_from_sinr(t.threshold_db(cqi).unwrap()), cqi);
        }
    }
}
