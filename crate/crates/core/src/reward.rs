//! Throughput/delay regret and the weighted network reward.

use crate::domain::{QosSample, RewardBreakdown, UeDemand};
use crate::error::{Error, Result};

/// Normalised throughput deficit, zero once the demand is met.
pub fn ue_throughput_regret(rho_bps: f64, demand_bps: f64) -> Result<f64> {
    if !(demand_bps > 0.0) {
        return Err(Error::InvalidDemand(format!(
            "throughput demand {demand_bps} must be positive"
        )));
    }
    Ok(((demand_bps - rho_bps) / demand_bps).max(0.0))
}

/// Normalised delay excess, zero while within the demand.
pub fn ue_delay_regret(tau_ms: f64, demand_ms: f64) -> Result<f64> {
    if !(demand_ms > 0.0) {
        return Err(Error::InvalidDemand(format!(
            "delay demand {demand_ms} must be positive"
        )));
    }
    Ok(((tau_ms - demand_ms) / demand_ms).max(0.0))
}

/// Per-cell rewards (negated regret sums) and their weighted total.
///
/// `samples[i]` must belong to the UE described by `demands[i]`.
pub fn compute_rewards(
    samples: &[QosSample],
    demands: &[UeDemand],
    lambda_p: &[f64],
    lambda_d: &[f64],
) -> Result<RewardBreakdown> {
    if samples.len() != demands.len() {
        return Err(Error::IncompleteObservation {
            expected: demands.len(),
            got: samples.len(),
        });
    }
    if lambda_p.len() != lambda_d.len() {
        return Err(Error::Config(
            "lambda_p and lambda_d must cover the same cells".into(),
        ));
    }
    let num_cells = lambda_p.len();
    let mut out = RewardBreakdown::zeros(num_cells);
    for (sample, demand) in samples.iter().zip(demands) {
        if demand.cell >= num_cells {
            return Err(Error::Config(format!(
                "UE assigned to cell {} but only {num_cells} weights given",
                demand.cell
            )));
        }
        out.r_tp[demand.cell] -= ue_throughput_regret(sample.achieved_tp_bps, demand.tp_bps)?;
        out.r_delay[demand.cell] -= ue_delay_regret(sample.achieved_delay_ms, demand.delay_ms)?;
    }
    out.total = (0..num_cells)
        .map(|k| lambda_p[k] * out.r_tp[k] + lambda_d[k] * out.r_delay[k])
        .sum();
    Ok(out)
}
