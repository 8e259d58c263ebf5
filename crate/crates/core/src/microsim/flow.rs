//! Flow file: a JSON array of
//! `{ "route": [lane ids], "interval_s": 20, "start_s": 0, "end_s": 3600,
//!    "surge": { "interval_s": 1, "start_s": 900, "end_s": 2700 } }`.
//! `surge` is optional; inside its window it replaces the base interval.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::LaneNet;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Surge {
    pub interval_s: u64,
    pub start_s: u64,
    pub end_s: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub route: Vec<String>,
    pub interval_s: u64,
    pub start_s: u64,
    pub end_s: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surge: Option<Surge>,
}

impl FlowSpec {
    /// Spawn instants in `[start_s, end_s)`.
    pub fn spawn_times(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for t in self.start_s..self.end_s {
            let due = match self.surge {
                Some(s) if (s.start_s..s.end_s).contains(&t) => (t - s.start_s) % s.interval_s == 0,
                _ => (t - self.start_s) % self.interval_s == 0,
            };
            if due {
                out.push(t);
            }
        }
        out
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidFlow(format!("{msg} (route {:?})", self.route)));
        if self.interval_s < 1 {
            return bad("interval_s must be at least 1");
        }
        if self.start_s > self.end_s {
            return bad("start_s after end_s");
        }
        if self.route.is_empty() {
            return bad("empty route");
        }
        if let Some(s) = self.surge {
            if s.interval_s < 1 || s.start_s > s.end_s {
                return bad("invalid surge window");
            }
        }
        Ok(())
    }
}

/// A validated flow with its route resolved to lane indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub spec: FlowSpec,
    pub route: Vec<usize>,
}

pub fn parse_flows(text: &str) -> Result<Vec<FlowSpec>, SimError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let specs: Vec<FlowSpec> = serde_json::from_str(text).map_err(|e| SimError::InvalidFlow(e.to_string()))?;
    Ok(specs)
}

/// Parses a flow file and resolves every route against the lane network.
pub fn load_flows(text: &str, net: &LaneNet) -> Result<Vec<Flow>, SimError> {
    parse_flows(text)?.into_iter().map(|spec| resolve_flow(spec, net)).collect()
}

pub fn resolve_flow(spec: FlowSpec, net: &LaneNet) -> Result<Flow, SimError> {
    spec.validate()?;
    let route = spec
        .route
        .iter()
        .map(|id| net.index_of(id).ok_or_else(|| SimError::UnknownLane(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    for pair in route.windows(2) {
        if !net.connects(pair[0], pair[1]) {
            return Err(SimError::InvalidFlow(format!(
                "route step {} -> {} is not a movement",
                net.lane(pair[0]).id,
                net.lane(pair[1]).id
            )));
        }
    }
    Ok(Flow { spec, route })
}

/// All spawn events `(time, flow index)` in deterministic order. With `jitter_s > 0` each spawn
/// is delayed by a uniform integer in `[0, jitter_s]`.
pub fn spawn_schedule<R: Rng>(flows: &[Flow], jitter_s: u64, rng: &mut R) -> Vec<(u64, usize)> {
    let mut events: Vec<(u64, usize, usize)> = Vec::new();
    for (f, flow) in flows.iter().enumerate() {
        for (k, t) in flow.spec.spawn_times().into_iter().enumerate() {
            let delay = if jitter_s > 0 { rng.gen_range(0..=jitter_s) } else { 0 };
            events.push((t + delay, f, k));
        }
    }
    events.sort_unstable();
    events.into_iter().map(|(t, f, _)| (t, f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(interval_s: u64) -> FlowSpec {
        FlowSpec { route: vec!["a".into()], interval_s, start_s: 0, end_s: 3600, surge: None }
    }

    #[test]
    fn base_interval() {
        let times = spec(20).spawn_times();
        assert_eq!(times.len(), 180);
        assert_eq!(&times[..3], &[0, 20, 40]);
    }

    #[test]
    fn surge_window_replaces_interval() {
        let mut s = spec(20);
        s.surge = Some(Surge { interval_s: 1, start_s: 900, end_s: 2700 });
        let times = s.spawn_times();
        assert_eq!(times.len(), 45 + 1800 + 45);
        assert!(times.contains(&901) && !times.contains(&2701) && times.contains(&2700));
    }

    #[test]
    fn zero_interval_rejected() {
        assert!(spec(0).validate().is_err());
        assert!(parse_flows("").unwrap().is_empty());
        assert!(parse_flows("  \n").unwrap().is_empty());
    }
}
