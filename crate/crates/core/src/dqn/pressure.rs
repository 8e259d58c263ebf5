//! Capacity-aware movement pressure and the rewards built on it.

use crate::microsim::Observation;
use crate::netgraph::{Movement, MOVEMENTS};

use super::DqnError;

/// Share of a movement's outgoing road counted per movement in the classic pressure, i.e. the
/// outgoing road total is averaged over its three lanes.
pub const CLASSIC_OUT_SCALE: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureReading {
    pub movement: Movement,
    pub n_in: f64,
    pub n_out: f64,
    pub n_max: f64,
    pub pressure: f64,
}

/// `n_in * (1 - n_out / n_max)`: demand discounted by downstream saturation.
pub fn pressure(n_in: f64, n_out: f64, n_max: f64) -> Result<f64, DqnError> {
    if !(n_max >= 1.0) || n_in < 0.0 || n_out < 0.0 {
        return Err(DqnError::OutOfRange(format!("pressure inputs n_in={n_in} n_out={n_out} n_max={n_max}")));
    }
    if n_out > n_max {
        return Err(DqnError::OutOfRange(format!("n_out {n_out} exceeds n_max {n_max}")));
    }
    Ok(n_in * (1.0 - n_out / n_max))
}

/// One reading per movement, against the outgoing lane aligned with it.
pub fn movement_readings(obs: &Observation) -> Result<Vec<PressureReading>, DqnError> {
    Movement::all()
        .map(|m| {
            let n_in = obs.incoming[m.index()];
            let (n_out, n_max) = obs.outgoing_lane(m);
            Ok(PressureReading { movement: m, n_in, n_out, n_max, pressure: pressure(n_in, n_out, n_max)? })
        })
        .collect()
}

/// `R = -sum_i P_i` over all twelve movements.
pub fn reward(readings: &[PressureReading]) -> Result<f64, DqnError> {
    if readings.len() != MOVEMENTS {
        return Err(DqnError::MissingReading(readings.len()));
    }
    Ok(-readings.iter().map(|r| r.pressure).sum::<f64>())
}

/// Which reward signal an agent learns from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    /// Negated capacity-aware pressure.
    CapacityAware,
    /// Negated classic pressure `sum (n_in - n_out * scale)`, no capacity factor.
    Classic,
    /// Negated total incoming queue (the capacity-aware reward as capacity grows without bound).
    QueueLength,
}

/// `-sum_i (n_in - n_out * CLASSIC_OUT_SCALE)`.
pub fn classic_pressure_reward(obs: &Observation) -> f64 {
    -Movement::all()
        .map(|m| obs.incoming[m.index()] - obs.outgoing_road(m).0 * CLASSIC_OUT_SCALE)
        .sum::<f64>()
}

pub fn reward_for(kind: RewardKind, obs: &Observation) -> Result<f64, DqnError> {
    match kind {
        RewardKind::CapacityAware => reward(&movement_readings(obs)?),
        RewardKind::Classic => Ok(classic_pressure_reward(obs)),
        RewardKind::QueueLength => Ok(-obs.incoming.iter().sum::<f64>()),
    }
}
