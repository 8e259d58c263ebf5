//! Synthetic scenarios: a single intersection with a straight-through surge, and two grids whose
//! topology parameters mirror the 16- and 48-intersection city networks.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::microsim::{FlowSpec, Surge};
use crate::netgraph::{
    standard_phases, Approach, IntersectionRecord, LaneRecord, LinkRecord, Movement, RoadnetFile, Turn,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}` (expected single, grid16 or grid48)")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Single,
    Grid16,
    Grid48,
}

impl ScenarioName {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Single => "single",
            ScenarioName::Grid16 => "grid16",
            ScenarioName::Grid48 => "grid48",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = ScenarioError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(ScenarioName::Single),
            "grid16" => Ok(ScenarioName::Grid16),
            "grid48" => Ok(ScenarioName::Grid48),
            other => Err(ScenarioError::Unknown(other.into())),
        }
    }
}

/// Generation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOptions {
    /// Seed for grid demand intervals and offsets.
    pub seed: u64,
    /// Add the straight-through west-east surge. Always present in `single`.
    pub grid_surge: bool,
    pub surge_start_s: u64,
    pub surge_end_s: u64,
    /// Surge headway on the single intersection.
    pub single_surge_interval_s: u64,
    /// Surge headway on grid boundary flows.
    pub grid_surge_interval_s: u64,
    /// Base headway of every single-intersection movement.
    pub single_interval_s: u64,
    /// Mean headway of grid flows.
    pub grid_mean_interval_s: f64,
    pub horizon_s: u64,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            grid_surge: false,
            surge_start_s: 900,
            surge_end_s: 2700,
            single_surge_interval_s: 1,
            grid_surge_interval_s: 4,
            single_interval_s: 20,
            grid_mean_interval_s: 30.0,
            horizon_s: 3600,
        }
    }
}

/// A generated road network and its demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: ScenarioName,
    pub roadnet: RoadnetFile,
    pub flows: Vec<FlowSpec>,
}

impl Scenario {
    pub fn roadnet_json(&self) -> String {
        serde_json::to_string_pretty(&self.roadnet).expect("roadnet serializes")
    }

    pub fn flows_json(&self) -> String {
        serde_json::to_string_pretty(&self.flows).expect("flows serialize")
    }
}

fn lane_id(node: &str, m: Movement) -> String {
    format!("{node}_{}_{}", m.approach.as_str(), m.turn.as_str())
}

fn exit_id(node: &str, side: Approach, turn: Turn) -> String {
    format!("{node}_out_{}_{}", side.as_str(), turn.as_str())
}

fn intersection(id: &str, x: f64, y: f64, ew_len: f64, ns_len: f64) -> IntersectionRecord {
    let lanes = Movement::all()
        .map(|m| {
            let length_m = match m.approach {
                Approach::E | Approach::W => ew_len,
                Approach::N | Approach::S => ns_len,
            };
            LaneRecord { id: lane_id(id, m), length_m, approach: m.approach, turn: m.turn }
        })
        .collect();
    let phases = standard_phases().iter().map(|p| p.iter().map(|m| m.to_string()).collect()).collect();
    IntersectionRecord { id: id.into(), x, y, lanes, phases }
}

/// Builds the named scenario.
pub fn generate_scenario(name: ScenarioName, opts: &ScenarioOptions) -> Scenario {
    match name {
        ScenarioName::Single => single(opts),
        ScenarioName::Grid16 => grid(name, 4, 4, 300.0, 300.0, opts),
        ScenarioName::Grid48 => grid(name, 3, 16, 350.0, 100.0, opts),
    }
}

fn single(opts: &ScenarioOptions) -> Scenario {
    let node = "i0";
    let roadnet = RoadnetFile { intersections: vec![intersection(node, 0.0, 0.0, 300.0, 300.0)], links: vec![] };
    let flows = Movement::all()
        .map(|m| {
            let surge = (m.turn == Turn::Straight && matches!(m.approach, Approach::W | Approach::E)).then_some(Surge {
                interval_s: opts.single_surge_interval_s,
                start_s: opts.surge_start_s,
                end_s: opts.surge_end_s,
            });
            FlowSpec {
                route: vec![lane_id(node, m), exit_id(node, m.exit_side(), m.turn)],
                interval_s: opts.single_interval_s,
                start_s: 0,
                end_s: opts.horizon_s,
                surge,
            }
        })
        .collect();
    Scenario { name: ScenarioName::Single, roadnet, flows }
}

struct Grid {
    rows: usize,
    cols: usize,
}

impl Grid {
    fn id(&self, r: usize, c: usize) -> String {
        format!("i{r}_{c}")
    }

    /// Neighbour on `side`; row 0 is the southern edge.
    fn step(&self, (r, c): (usize, usize), side: Approach) -> Option<(usize, usize)> {
        match side {
            Approach::N => (r + 1 < self.rows).then(|| (r + 1, c)),
            Approach::S => r.checked_sub(1).map(|r| (r, c)),
            Approach::E => (c + 1 < self.cols).then(|| (r, c + 1)),
            Approach::W => c.checked_sub(1).map(|c| (r, c)),
        }
    }

    /// Lane sequence from a boundary entry, straight except for one turn at hop `turn_at`.
    fn route(&self, start: (usize, usize), approach: Approach, turn_at: Option<(usize, Turn)>) -> Vec<String> {
        let mut route = Vec::new();
        let (mut pos, mut arr) = (start, approach);
        for hop in 0.. {
            let turn = match turn_at {
                Some((k, t)) if k == hop => t,
                _ => Turn::Straight,
            };
            let m = Movement::new(arr, turn);
            let node = self.id(pos.0, pos.1);
            route.push(lane_id(&node, m));
            let side = m.exit_side();
            match self.step(pos, side) {
                Some(next) => {
                    pos = next;
                    arr = side.opposite();
                }
                None => {
                    route.push(exit_id(&node, side, turn));
                    break;
                }
            }
        }
        route
    }
}

fn grid(name: ScenarioName, rows: usize, cols: usize, ew_len: f64, ns_len: f64, opts: &ScenarioOptions) -> Scenario {
    let g = Grid { rows, cols };
    let mut intersections = Vec::with_capacity(rows * cols);
    let mut links = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            intersections.push(intersection(&g.id(r, c), c as f64 * ew_len, r as f64 * ns_len, ew_len, ns_len));
            for side in Approach::ALL {
                if let Some((nr, nc)) = g.step((r, c), side) {
                    links.push(LinkRecord { from: g.id(r, c), to: g.id(nr, nc) });
                }
            }
        }
    }

    // Boundary entries: (start cell, arrival approach, number of hops across).
    let mut entries = Vec::new();
    for r in 0..rows {
        entries.push(((r, 0), Approach::W, cols));
        entries.push(((r, cols - 1), Approach::E, cols));
    }
    for c in 0..cols {
        entries.push(((0, c), Approach::S, rows));
        entries.push(((rows - 1, c), Approach::N, rows));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut flows = Vec::new();
    let draw_interval = |rng: &mut ChaCha8Rng| -> u64 {
        // Exponentially distributed headways around the configured mean, as a Poisson-like stream.
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        (-u.ln() * opts.grid_mean_interval_s).round().clamp(5.0, 4.0 * opts.grid_mean_interval_s) as u64
    };
    for (start, approach, hops) in entries {
        let interval_s = draw_interval(&mut rng);
        let start_s = rng.gen_range(0..interval_s);
        let surge = (opts.grid_surge && matches!(approach, Approach::W | Approach::E)).then_some(Surge {
            interval_s: opts.grid_surge_interval_s,
            start_s: opts.surge_start_s,
            end_s: opts.surge_end_s,
        });
        flows.push(FlowSpec {
            route: g.route(start, approach, None),
            interval_s,
            start_s,
            end_s: opts.horizon_s,
            surge,
        });
        let turn = if rng.gen_bool(0.5) { Turn::Left } else { Turn::Right };
        let hop = rng.gen_range(0..hops);
        let interval_s = draw_interval(&mut rng) * 2;
        let start_s = rng.gen_range(0..interval_s);
        flows.push(FlowSpec {
            route: g.route(start, approach, Some((hop, turn))),
            interval_s,
            start_s,
            end_s: opts.horizon_s,
            surge: None,
        });
    }
    Scenario { name, roadnet: RoadnetFile { intersections, links }, flows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::World;
    use crate::netgraph::build_graph;
    use std::sync::Arc;

    fn load(s: &Scenario) -> World {
        let graph = Arc::new(build_graph(&s.roadnet_json()).unwrap());
        World::new(graph, &s.flows_json()).unwrap()
    }

    #[test]
    fn single_has_twelve_flows_and_surge_on_through_movements() {
        let s = generate_scenario(ScenarioName::Single, &ScenarioOptions::default());
        assert_eq!(s.flows.len(), 12);
        let surged: Vec<&str> = s.flows.iter().filter(|f| f.surge.is_some()).map(|f| f.route[0].as_str()).collect();
        assert_eq!(surged, vec!["i0_E_straight", "i0_W_straight"]);
        let w = load(&s);
        assert_eq!(w.graph.len(), 1);
        assert!(s.flows.iter().all(|f| f.interval_s == 20));
    }

    #[test]
    fn grids_have_expected_size_and_valid_routes() {
        let s = generate_scenario(ScenarioName::Grid16, &ScenarioOptions::default());
        assert_eq!(s.roadnet.intersections.len(), 16);
        assert_eq!(s.roadnet.links.len(), 48);
        let w = load(&s);
        assert_eq!(w.flows.len(), 2 * 16);
        let s = generate_scenario(ScenarioName::Grid48, &ScenarioOptions { grid_surge: true, ..Default::default() });
        assert_eq!(s.roadnet.intersections.len(), 48);
        let w = load(&s);
        assert_eq!(w.graph.len(), 48);
        assert!(s.flows.iter().any(|f| f.surge.is_some()));
        assert!(s.roadnet.intersections[0].lanes.iter().any(|l| l.length_m == 100.0));
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_scenario(ScenarioName::Grid16, &ScenarioOptions { seed: 3, ..Default::default() });
        let b = generate_scenario(ScenarioName::Grid16, &ScenarioOptions { seed: 3, ..Default::default() });
        let c = generate_scenario(ScenarioName::Grid16, &ScenarioOptions { seed: 4, ..Default::default() });
        assert_eq!(a, b);
        assert_ne!(a.flows, c.flows);
        assert!("grid99".parse::<ScenarioName>().is_err());
    }
}
