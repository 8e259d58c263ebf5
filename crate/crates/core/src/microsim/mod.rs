//! Deterministic one-second point-queue traffic simulator.
//!
//! Each step: due vehicles spawn into a per-lane backlog and enter their first lane if it has
//! room (one per lane per second); vehicles on exit lanes leave once their free-flow time is up;
//! each permitted incoming lane discharges at most one stop-line vehicle per headway, provided
//! the next lane on its route has room; signal timers then advance.

mod flow;
mod network;
mod signal;

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::netgraph::{Approach, Movement, RoadGraph, MOVEMENTS, PHASES};
pub use flow::{load_flows, parse_flows, resolve_flow, spawn_schedule, Flow, FlowSpec, Surge};
pub use network::{free_flow_steps, lane_capacity, Lane, LaneKind, LaneNet, VehicleId, FREE_FLOW_SPEED_MPS};
pub use signal::SignalState;

/// Length of the per-intersection observation vector: phase one-hot, incoming, outgoing.
pub const OBSERVATION_LEN: usize = PHASES + 2 * MOVEMENTS;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid flow: {0}")]
    InvalidFlow(String),
    #[error("route references unknown lane `{0}`")]
    UnknownLane(String),
    #[error("unknown intersection index {0}")]
    UnknownIntersection(usize),
    #[error("minute {minute} is not complete (clock {clock} s)")]
    IncompleteMinute { minute: usize, clock: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub discharge_headway_s: u64,
    pub yellow_s: u64,
    /// Maximum random spawn delay; 0 disables jitter.
    pub spawn_jitter_s: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { discharge_headway_s: 2, yellow_s: 5, spawn_jitter_s: 0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Demand generated; the vehicle waits in the spawn backlog.
    Spawn,
    /// Vehicle entered a lane.
    Enter,
    /// Vehicle completed its route.
    Exit,
}

impl EventKind {
    fn as_str(self) -> &'static str {
        match self {
            EventKind::Spawn => "spawn",
            EventKind::Enter => "enter",
            EventKind::Exit => "exit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub step: u64,
    pub kind: EventKind,
    pub vehicle: VehicleId,
    pub lane: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub route: Vec<usize>,
    /// Index into `route` of the lane the vehicle is on (or waiting to enter).
    pub route_pos: usize,
    pub spawn_time_s: u64,
    pub enter_network_time_s: Option<u64>,
    pub exit_time_s: Option<u64>,
    /// Lanes actually entered, in order.
    pub visited: Vec<usize>,
}

/// Snapshot of one intersection as seen by a controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub phase: usize,
    /// Vehicles on each incoming lane, canonical movement order.
    pub incoming: [f64; MOVEMENTS],
    /// Vehicles on each outgoing lane: sides N, E, S, W, each in left/straight/right order.
    pub outgoing: [f64; MOVEMENTS],
    pub outgoing_capacity: [f64; MOVEMENTS],
}

impl Observation {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; PHASES];
        v[self.phase] = 1.0;
        v.extend_from_slice(&self.incoming);
        v.extend_from_slice(&self.outgoing);
        v
    }

    /// Vehicles on, and capacity of, the outgoing lane aligned with a movement: the lane in the
    /// movement's turn slot on its exit side. Each exit side is fed by exactly one movement per
    /// turn, so this pairs every movement with a distinct lane.
    pub fn outgoing_lane(&self, m: Movement) -> (f64, f64) {
        let i = m.exit_side().index() * 3 + m.turn.index();
        (self.outgoing[i], self.outgoing_capacity[i])
    }

    /// Total vehicles and capacity on the outgoing road a movement feeds.
    pub fn outgoing_road(&self, m: Movement) -> (f64, f64) {
        let base = m.exit_side().index() * 3;
        let n: f64 = self.outgoing[base..base + 3].iter().sum();
        let cap: f64 = self.outgoing_capacity[base..base + 3].iter().sum();
        (n, cap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub clock_s: u64,
    pub throughput: usize,
    /// Mean spawn-to-exit time over completed vehicles (0 when none completed).
    pub att_completed_s: f64,
    /// Mean over completed plus in-network vehicles, the latter at their current sojourn.
    pub att_inclusive_s: f64,
    /// No vehicle has completed yet.
    pub empty: bool,
    /// `cumulative[t]`: vehicles completed by the end of second `t`.
    pub cumulative: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    graph: Arc<RoadGraph>,
    config: SimConfig,
    net: LaneNet,
    flows: Vec<Flow>,
    schedule: Vec<(u64, usize)>,
    next_spawn: usize,
    vehicles: Vec<Vehicle>,
    backlog: Vec<VecDeque<VehicleId>>,
    backlog_count: usize,
    signals: Vec<SignalState>,
    clock: u64,
    completed: usize,
    cumulative: Vec<usize>,
    minute_acc: Vec<usize>,
    minutes: Vec<Vec<f64>>,
    log: Option<Vec<Event>>,
}

impl Simulator {
    pub fn new(graph: Arc<RoadGraph>, flows: Vec<Flow>, config: SimConfig) -> Self {
        let net = LaneNet::new(&graph);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let schedule = spawn_schedule(&flows, config.spawn_jitter_s, &mut rng);
        let n = graph.len();
        Self {
            backlog: vec![VecDeque::new(); net.lanes.len()],
            signals: vec![SignalState::default(); n],
            minute_acc: vec![0; n * MOVEMENTS],
            graph,
            config,
            net,
            flows,
            schedule,
            next_spawn: 0,
            vehicles: Vec::new(),
            backlog_count: 0,
            clock: 0,
            completed: 0,
            cumulative: Vec::new(),
            minutes: Vec::new(),
            log: None,
        }
    }

    /// Builds a simulator from flow file text, resolving routes against the graph.
    pub fn from_flow_text(graph: Arc<RoadGraph>, flow_text: &str, config: SimConfig) -> Result<Self, SimError> {
        let net = LaneNet::new(&graph);
        let flows = load_flows(flow_text, &net)?;
        Ok(Self::new(graph, flows, config))
    }

    pub fn enable_event_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn event_log(&self) -> &[Event] {
        self.log.as_deref().unwrap_or(&[])
    }

    /// Event log as `step,event,vehicle,lane` lines.
    pub fn event_log_text(&self) -> String {
        let mut out = String::new();
        for e in self.event_log() {
            let _ = writeln!(out, "{},{},{},{}", e.step, e.kind.as_str(), e.vehicle, self.net.lanes[e.lane].id);
        }
        out
    }

    pub fn graph(&self) -> &Arc<RoadGraph> {
        &self.graph
    }

    pub fn net(&self) -> &LaneNet {
        &self.net
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn signal(&self, node: usize) -> &SignalState {
        &self.signals[node]
    }

    pub fn spawned(&self) -> usize {
        self.vehicles.len()
    }

    pub fn backlog_len(&self) -> usize {
        self.backlog_count
    }

    pub fn in_network(&self) -> usize {
        self.net.lanes.iter().map(Lane::occupancy).sum()
    }

    pub fn completed(&self) -> usize {
        self.completed
    }

    /// Starts an action at an intersection that is awaiting one; returns the yellow inserted.
    pub fn apply_action(&mut self, node: usize, phase: usize, green_s: u64) -> u64 {
        let yellow = self.config.yellow_s;
        self.signals[node].apply(phase, green_s, yellow)
    }

    fn emit(&mut self, events: &mut Vec<Event>, kind: EventKind, vehicle: VehicleId, lane: usize) {
        let e = Event { step: self.clock, kind, vehicle, lane };
        events.push(e);
        if let Some(log) = &mut self.log {
            log.push(e);
        }
    }

    /// Advances one simulated second and returns the events it produced.
    pub fn step(&mut self) -> Vec<Event> {
        let t = self.clock;
        let mut events = Vec::new();

        // Spawn into backlog.
        while let Some(&(time, f)) = self.schedule.get(self.next_spawn) {
            if time > t {
                break;
            }
            self.next_spawn += 1;
            let id = self.vehicles.len();
            let route = self.flows[f].route.clone();
            let head = route[0];
            self.vehicles.push(Vehicle {
                id,
                route,
                route_pos: 0,
                spawn_time_s: t,
                enter_network_time_s: None,
                exit_time_s: None,
                visited: Vec::new(),
            });
            self.backlog[head].push_back(id);
            self.backlog_count += 1;
            self.emit(&mut events, EventKind::Spawn, id, head);
        }

        // Backlog into first lanes.
        for lane in 0..self.net.lanes.len() {
            if self.backlog[lane].is_empty() || !self.net.lanes[lane].has_space() {
                continue;
            }
            let v = self.backlog[lane].pop_front().expect("checked nonempty");
            self.backlog_count -= 1;
            self.enter_lane(v, lane, t, &mut events);
        }

        // Exit lanes drain freely once traversed.
        for lane in 0..self.net.lanes.len() {
            if !matches!(self.net.lanes[lane].kind, LaneKind::Exit { .. }) {
                continue;
            }
            while let Some(&(v, ready)) = self.net.lanes[lane].queue.front() {
                if ready > t {
                    break;
                }
                self.net.lanes[lane].queue.pop_front();
                self.complete(v, lane, &mut events);
            }
        }

        // Signalized discharge.
        let headway = self.config.discharge_headway_s;
        for node in 0..self.graph.len() {
            let phases = self.graph.node(node).phases;
            for m in Movement::all() {
                if !self.signals[node].permits(&phases, m) {
                    continue;
                }
                let lane = self.net.incoming[node][m.index()];
                let l = &self.net.lanes[lane];
                let Some(&(v, ready)) = l.queue.front() else { continue };
                if ready > t || l.next_discharge_at > t {
                    continue;
                }
                let veh = &self.vehicles[v];
                let next = veh.route.get(veh.route_pos + 1).copied();
                match next {
                    None => {
                        self.net.lanes[lane].queue.pop_front();
                        self.net.lanes[lane].next_discharge_at = t + headway;
                        self.complete(v, lane, &mut events);
                    }
                    Some(nl) if self.net.lanes[nl].has_space() => {
                        self.net.lanes[lane].queue.pop_front();
                        self.net.lanes[lane].next_discharge_at = t + headway;
                        self.vehicles[v].route_pos += 1;
                        self.enter_lane(v, nl, t + 1, &mut events);
                    }
                    Some(_) => {}
                }
            }
        }

        // Per-minute maxima of incoming occupancy.
        for (node, lanes) in self.net.incoming.iter().enumerate() {
            for (i, &lane) in lanes.iter().enumerate() {
                let acc = &mut self.minute_acc[node * MOVEMENTS + i];
                *acc = (*acc).max(self.net.lanes[lane].occupancy());
            }
        }
        self.cumulative.push(self.completed);

        for s in &mut self.signals {
            s.tick();
        }
        self.clock += 1;
        if self.clock % 60 == 0 {
            self.minutes.push(self.minute_acc.iter().map(|&x| x as f64).collect());
            self.minute_acc.iter_mut().for_each(|x| *x = 0);
        }
        events
    }

    fn enter_lane(&mut self, v: VehicleId, lane: usize, at: u64, events: &mut Vec<Event>) {
        let ff = self.net.lanes[lane].free_flow_steps;
        self.net.lanes[lane].queue.push_back((v, at + ff));
        let veh = &mut self.vehicles[v];
        veh.enter_network_time_s.get_or_insert(at);
        veh.visited.push(lane);
        self.emit(events, EventKind::Enter, v, lane);
    }

    fn complete(&mut self, v: VehicleId, lane: usize, events: &mut Vec<Event>) {
        self.vehicles[v].exit_time_s = Some(self.clock + 1);
        self.completed += 1;
        self.emit(events, EventKind::Exit, v, lane);
    }

    pub fn run_steps(&mut self, n: u64) {
        for _ in 0..n {
            self.step();
        }
    }

    /// Phase one-hot, incoming and outgoing lane occupancies of `node` as of the current step.
    pub fn observe(&self, node: usize) -> Result<Observation, SimError> {
        if node >= self.graph.len() {
            return Err(SimError::UnknownIntersection(node));
        }
        let mut obs = Observation {
            phase: self.signals[node].active_phase,
            incoming: [0.0; MOVEMENTS],
            outgoing: [0.0; MOVEMENTS],
            outgoing_capacity: [0.0; MOVEMENTS],
        };
        for (i, &lane) in self.net.incoming[node].iter().enumerate() {
            obs.incoming[i] = self.net.lanes[lane].occupancy() as f64;
        }
        for side in Approach::ALL {
            for (k, &lane) in self.net.outgoing[node][side.index()].iter().enumerate() {
                let l = &self.net.lanes[lane];
                obs.outgoing[side.index() * 3 + k] = l.occupancy() as f64;
                obs.outgoing_capacity[side.index() * 3 + k] = l.capacity as f64;
            }
        }
        Ok(obs)
    }

    /// Completed minutes so far.
    pub fn minutes_elapsed(&self) -> usize {
        self.minutes.len()
    }

    /// Max occupancy of every incoming lane during `minute`, as an N x 12 matrix.
    pub fn per_minute_lane_max(&self, minute: usize) -> Result<Matrix, SimError> {
        let row = self
            .minutes
            .get(minute)
            .ok_or(SimError::IncompleteMinute { minute, clock: self.clock })?;
        Ok(Matrix::from_vec(self.graph.len(), MOVEMENTS, row.clone()))
    }

    pub fn metrics(&self) -> MetricsRecord {
        let mut done_sum = 0.0;
        let mut live_sum = 0.0;
        let mut live = 0usize;
        for v in &self.vehicles {
            match (v.exit_time_s, v.enter_network_time_s) {
                (Some(exit), _) => done_sum += (exit - v.spawn_time_s) as f64,
                (None, Some(_)) => {
                    live_sum += (self.clock - v.spawn_time_s) as f64;
                    live += 1;
                }
                (None, None) => {}
            }
        }
        let done = self.completed;
        let att_completed_s = if done > 0 { done_sum / done as f64 } else { 0.0 };
        let att_inclusive_s = if done + live > 0 { (done_sum + live_sum) / (done + live) as f64 } else { 0.0 };
        MetricsRecord {
            clock_s: self.clock,
            throughput: done,
            att_completed_s,
            att_inclusive_s,
            empty: done == 0,
            cumulative: self.cumulative.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{standard_phases, IntersectionRecord, LaneRecord, RoadnetFile, Turn};

    pub(crate) fn single_graph(len: f64) -> Arc<RoadGraph> {
        let lanes = Movement::all()
            .map(|m| LaneRecord { id: format!("a_{m}"), length_m: len, approach: m.approach, turn: m.turn })
            .collect();
        let phases = standard_phases().iter().map(|p| p.iter().map(|m| m.to_string()).collect()).collect();
        let file = RoadnetFile {
            intersections: vec![IntersectionRecord { id: "a".into(), x: 0.0, y: 0.0, lanes, phases }],
            links: vec![],
        };
        Arc::new(RoadGraph::from_file(&file).unwrap())
    }

    fn flow(route: &[&str], interval_s: u64, start_s: u64, end_s: u64) -> FlowSpec {
        FlowSpec { route: route.iter().map(|s| s.to_string()).collect(), interval_s, start_s, end_s, surge: None }
    }

    fn sim_with(specs: Vec<FlowSpec>) -> Simulator {
        let g = single_graph(300.0);
        let text = serde_json::to_string(&specs).unwrap();
        Simulator::from_flow_text(g, &text, SimConfig::default()).unwrap()
    }

    #[test]
    fn empty_network_steps() {
        let mut sim = sim_with(vec![]);
        for _ in 0..10 {
            assert!(sim.step().is_empty());
        }
        assert_eq!(sim.clock(), 10);
        let m = sim.metrics();
        assert_eq!((m.throughput, m.att_completed_s, m.empty), (0, 0.0, true));
    }

    #[test]
    fn single_vehicle_hand_trace() {
        // Spawn at 0, enter at 0, reaches the stop line at 27, crosses during step 27.
        let mut sim = sim_with(vec![flow(&["a_W_straight"], 10_000, 0, 1)]);
        sim.apply_action(0, 0, 60);
        sim.run_steps(40);
        let v = &sim.vehicles()[0];
        assert_eq!(v.exit_time_s, Some(28));
        let m = sim.metrics();
        assert_eq!(m.throughput, 1);
        assert_eq!(m.att_completed_s, 28.0);
        assert_eq!(m.cumulative[26], 0);
        assert_eq!(m.cumulative[27], 1);
    }

    #[test]
    fn full_route_traverses_exit_lane() {
        let mut sim = sim_with(vec![flow(&["a_W_straight", "a_out_E_straight"], 10_000, 0, 1)]);
        sim.apply_action(0, 0, 60);
        sim.run_steps(80);
        // 27 + 1 on the approach, then 27 + 1 on the exit lane.
        assert_eq!(sim.vehicles()[0].exit_time_s, Some(56));
        assert_eq!(sim.vehicles()[0].visited.len(), 2);
    }

    #[test]
    fn red_light_queues_and_observation() {
        let mut sim = sim_with(vec![flow(&["a_N_straight"], 1, 0, 3)]);
        sim.apply_action(0, 0, 60); // WE green, N red
        sim.run_steps(40);
        let obs = sim.observe(0).unwrap();
        let idx = Movement::new(Approach::N, Turn::Straight).index();
        assert_eq!(obs.incoming[idx], 3.0);
        assert_eq!(obs.to_vec().len(), OBSERVATION_LEN);
        assert_eq!(obs.to_vec()[0], 1.0);
        assert!(sim.observe(1).is_err());
    }

    #[test]
    fn empty_observation_is_phase_only() {
        let sim = sim_with(vec![]);
        let v = sim.observe(0).unwrap().to_vec();
        assert_eq!(v.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn headway_limits_discharge() {
        let mut sim = sim_with(vec![flow(&["a_W_straight"], 1, 0, 10)]);
        // hold red until all ten are at the stop line, then one green of 10 s
        sim.apply_action(0, 1, 40);
        sim.run_steps(40);
        assert_eq!(sim.completed(), 0);
        sim.apply_action(0, 0, 10);
        sim.run_steps(15);
        assert_eq!(sim.completed(), 5);
    }

    #[test]
    fn per_minute_max_requires_full_minute() {
        let mut sim = sim_with(vec![flow(&["a_N_straight"], 1, 0, 5)]);
        sim.apply_action(0, 0, 60);
        sim.run_steps(30);
        assert!(matches!(sim.per_minute_lane_max(0), Err(SimError::IncompleteMinute { .. })));
        sim.run_steps(30);
        let m = sim.per_minute_lane_max(0).unwrap();
        assert_eq!(m[(0, Movement::new(Approach::N, Turn::Straight).index())], 5.0);
        assert_eq!(m[(0, 0)], 0.0);
    }

    #[test]
    fn unknown_lane_rejected() {
        let g = single_graph(300.0);
        let text = serde_json::to_string(&vec![flow(&["nope"], 5, 0, 10)]).unwrap();
        assert!(matches!(Simulator::from_flow_text(g.clone(), &text, SimConfig::default()), Err(SimError::UnknownLane(_))));
        let bad = serde_json::to_string(&vec![flow(&["a_W_straight", "a_out_N_left"], 5, 0, 10)]).unwrap();
        assert!(Simulator::from_flow_text(g, &bad, SimConfig::default()).is_err());
    }

    #[test]
    fn metrics_means() {
        let mut sim = sim_with(vec![]);
        sim.vehicles = vec![
            Vehicle { id: 0, route: vec![0], route_pos: 0, spawn_time_s: 0, enter_network_time_s: Some(0), exit_time_s: Some(30), visited: vec![0] },
            Vehicle { id: 1, route: vec![0], route_pos: 0, spawn_time_s: 0, enter_network_time_s: Some(0), exit_time_s: Some(50), visited: vec![0] },
        ];
        sim.completed = 2;
        assert_eq!(sim.metrics().att_completed_s, 40.0);
    }
}
