use std::collections::{HashMap, VecDeque};

use crate::netgraph::{Approach, Movement, RoadGraph, Turn, MOVEMENTS, VEHICLE_SPACING_M};

/// Free-flow speed, 40 km/h.
pub const FREE_FLOW_SPEED_MPS: f64 = 11.11;

pub type VehicleId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneKind {
    /// Incoming lane of `node`, controlled by the signal for `movement`.
    Approach { node: usize, movement: Movement },
    /// Leaves the network at the boundary.
    Exit { node: usize, side: Approach },
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: String,
    pub length_m: f64,
    pub capacity: usize,
    pub free_flow_steps: u64,
    pub kind: LaneKind,
    /// Vehicles on the lane in arrival order, with the step at which each reaches the stop line.
    pub(crate) queue: VecDeque<(VehicleId, u64)>,
    pub(crate) next_discharge_at: u64,
}

impl Lane {
    fn new(id: String, length_m: f64, kind: LaneKind) -> Self {
        Self {
            id,
            length_m,
            capacity: lane_capacity(length_m),
            free_flow_steps: free_flow_steps(length_m),
            kind,
            queue: VecDeque::new(),
            next_discharge_at: 0,
        }
    }

    pub fn occupancy(&self) -> usize {
        self.queue.len()
    }

    pub fn has_space(&self) -> bool {
        self.queue.len() < self.capacity
    }

    /// Vehicles that have reached the stop line by step `t`.
    pub fn waiting(&self, t: u64) -> usize {
        self.queue.iter().take_while(|&&(_, ready)| ready <= t).count()
    }
}

/// `floor(length / 7.5)`, at least one vehicle.
pub fn lane_capacity(length_m: f64) -> usize {
    ((length_m / VEHICLE_SPACING_M).floor() as usize).max(1)
}

/// Whole seconds to traverse a lane at free-flow speed, at least one.
pub fn free_flow_steps(length_m: f64) -> u64 {
    ((length_m / FREE_FLOW_SPEED_MPS).round() as u64).max(1)
}

/// Lane-level network derived from a [`RoadGraph`].
#[derive(Debug, Clone)]
pub struct LaneNet {
    pub(crate) lanes: Vec<Lane>,
    index: HashMap<String, usize>,
    /// Per node, incoming lane index by movement index.
    pub(crate) incoming: Vec<[usize; MOVEMENTS]>,
    /// Per node, the three lanes (left, straight, right order) leaving through each side.
    pub(crate) outgoing: Vec<[[usize; 3]; 4]>,
}

impl LaneNet {
    pub fn new(graph: &RoadGraph) -> Self {
        let mut lanes = Vec::new();
        let mut incoming = Vec::with_capacity(graph.len());
        for (x, node) in graph.nodes().iter().enumerate() {
            let mut idx = [0; MOVEMENTS];
            for m in Movement::all() {
                let spec = node.lane(m);
                idx[m.index()] = lanes.len();
                lanes.push(Lane::new(spec.id.clone(), spec.length_m, LaneKind::Approach { node: x, movement: m }));
            }
            incoming.push(idx);
        }
        let mut outgoing = Vec::with_capacity(graph.len());
        for (x, node) in graph.nodes().iter().enumerate() {
            let mut sides = [[0; 3]; 4];
            for side in Approach::ALL {
                for turn in Turn::ALL {
                    sides[side.index()][turn.index()] = match graph.downstream(x, side) {
                        Some(y) => incoming[y][Movement::new(side.opposite(), turn).index()],
                        None => {
                            let len = node.lane(Movement::new(side, turn)).length_m;
                            let id = format!("{}_out_{}_{}", node.id, side.as_str(), turn.as_str());
                            lanes.push(Lane::new(id, len, LaneKind::Exit { node: x, side }));
                            lanes.len() - 1
                        }
                    };
                }
            }
            outgoing.push(sides);
        }
        let index = lanes.iter().enumerate().map(|(i, l)| (l.id.clone(), i)).collect();
        Self { lanes, index, incoming, outgoing }
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn lane(&self, i: usize) -> &Lane {
        &self.lanes[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn incoming(&self, node: usize, m: Movement) -> usize {
        self.incoming[node][m.index()]
    }

    pub fn outgoing_road(&self, node: usize, side: Approach) -> [usize; 3] {
        self.outgoing[node][side.index()]
    }

    /// Whether a vehicle may continue from lane `a` directly onto lane `b`.
    pub fn connects(&self, a: usize, b: usize) -> bool {
        match self.lanes[a].kind {
            LaneKind::Approach { node, movement } => self.outgoing_road(node, movement.exit_side()).contains(&b),
            LaneKind::Exit { .. } => false,
        }
    }
}
