use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::dqn::classic_pressure_reward;
use crate::microsim::Observation;
use crate::netgraph::{Movement, PHASES};
use crate::stgcn::PredictionWindow;

/// Green-duration arithmetic shared by the observed and forecast rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DurationRule {
    pub discharge_headway_s: f64,
    pub t_min_s: u64,
    pub t_max_s: u64,
    pub yellow_s: u64,
}

impl Default for DurationRule {
    fn default() -> Self {
        Self { discharge_headway_s: 2.0, t_min_s: 10, t_max_s: 60, yellow_s: 5 }
    }
}

impl DurationRule {
    pub fn validate(&self) -> Result<(), ControlError> {
        let h = self.discharge_headway_s;
        if !(h.is_finite() && h > 0.0) || self.t_min_s == 0 || self.t_min_s > self.t_max_s || self.yellow_s == 0 {
            return Err(ControlError::Config(format!("invalid duration rule {self:?}")));
        }
        Ok(())
    }

    /// Seconds to discharge `vehicles` over `lanes` parallel lanes, rounded up and clamped.
    pub fn green_for(&self, vehicles: f64, lanes: usize) -> u64 {
        let raw = (vehicles.max(0.0) * self.discharge_headway_s / lanes.max(1) as f64).ceil();
        (raw as u64).clamp(self.t_min_s, self.t_max_s)
    }
}

/// Green time needed to clear the vehicles currently on the phase's incoming lanes.
pub fn required_green(obs: &Observation, phase: &[Movement; 2], rule: &DurationRule) -> u64 {
    let n: f64 = phase.iter().map(|m| obs.incoming[m.index()]).sum();
    rule.green_for(n, phase.len())
}

/// How a forecast's feature axis maps onto lanes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureLayout {
    /// One feature per incoming movement lane (D = 12).
    #[default]
    PerLane,
    /// One feature per node: the sum over its twelve lanes (D = 1).
    Aggregate,
}

impl FeatureLayout {
    pub fn features(self) -> usize {
        match self {
            FeatureLayout::PerLane => crate::netgraph::MOVEMENTS,
            FeatureLayout::Aggregate => 1,
        }
    }
}

/// Green time implied by the horizon maximum of the forecast demand on the phase's lanes.
pub fn expected_green(
    prediction: &PredictionWindow,
    node: usize,
    phase: &[Movement; 2],
    layout: FeatureLayout,
    rule: &DurationRule,
) -> Result<u64, ControlError> {
    if node >= prediction.n || prediction.d != layout.features() || prediction.h == 0 {
        return Err(ControlError::Shape(format!(
            "prediction {}x{}x{} does not cover node {node} with {layout:?} features",
            prediction.n, prediction.d, prediction.h
        )));
    }
    let n_hat = (0..prediction.h)
        .map(|s| match layout {
            FeatureLayout::PerLane => phase.iter().map(|m| prediction.get(node, m.index(), s)).sum::<f64>(),
            // Split the node total evenly over the twelve lanes.
            FeatureLayout::Aggregate => {
                prediction.get(node, 0, s) * phase.len() as f64 / crate::netgraph::MOVEMENTS as f64
            }
        })
        .fold(0.0, f64::max);
    Ok(rule.green_for(n_hat, phase.len()))
}

/// Reward used by the PressLight-style baselines: negated classic pressure, no capacity factor.
pub fn presslight_variant(obs: &Observation) -> f64 {
    classic_pressure_reward(obs)
}

/// Per-phase classic pressure `sum over the phase's movements of (n_in - n_out * scale)`.
pub fn phase_pressures(obs: &Observation, phases: &[[Movement; 2]; PHASES]) -> [f64; PHASES] {
    let mut out = [0.0; PHASES];
    for (p, ms) in phases.iter().enumerate() {
        out[p] = ms
            .iter()
            .map(|m| obs.incoming[m.index()] - obs.outgoing_road(*m).0 * crate::dqn::CLASSIC_OUT_SCALE)
            .sum();
    }
    out
}
