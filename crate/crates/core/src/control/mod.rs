//! Episode orchestration: combines live observations (`t_req`) with forecasts (`t_exp`), drives
//! the simulator and per-intersection agents, and provides the baseline controllers.

mod duration;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dqn::{reward_for, Agent, DqnError, Experience, RewardKind};
use crate::linalg::Matrix;
use crate::microsim::{load_flows, Flow, LaneNet, MetricsRecord, Observation, SimConfig, SimError, Simulator};
use crate::netgraph::{RoadGraph, MOVEMENTS, PHASES};
use crate::stgcn::{HistoryWindow, PredictionWindow, Predictor, StgcnError};

pub use duration::{
    expected_green, phase_pressures, presslight_variant, required_green, DurationRule, FeatureLayout,
};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error(transparent)]
    Stgcn(#[from] StgcnError),
}

/// Controller variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Learned phase, capacity-aware pressure reward, green = min(t_exp, t_req).
    Gplight,
    /// Learned phase, classic pressure reward, fixed green.
    PresslightFixed,
    /// Learned phase, classic pressure reward, green = t_req.
    PresslightDynamic,
    /// Phase with the largest classic pressure, fixed green.
    Maxpressure,
    /// Phases in order 0, 1, 2, 3, fixed green.
    Fixedtime,
}

impl Mode {
    pub const ALL: [Mode; 5] =
        [Mode::Gplight, Mode::PresslightFixed, Mode::PresslightDynamic, Mode::Maxpressure, Mode::Fixedtime];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Gplight => "gplight",
            Mode::PresslightFixed => "presslight-fixed",
            Mode::PresslightDynamic => "presslight-dynamic",
            Mode::Maxpressure => "maxpressure",
            Mode::Fixedtime => "fixedtime",
        }
    }

    /// Whether the mode is driven by DQN agents.
    pub fn is_learned(self) -> bool {
        matches!(self, Mode::Gplight | Mode::PresslightFixed | Mode::PresslightDynamic)
    }

    pub fn uses_prediction(self) -> bool {
        self == Mode::Gplight
    }

    pub fn reward_kind(self) -> RewardKind {
        match self {
            Mode::Gplight => RewardKind::CapacityAware,
            _ => RewardKind::Classic,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = ControlError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ControlError::Config(format!("unknown mode `{s}`")))
    }
}

/// Episode-level settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub total_s: u64,
    /// Forecast history length T, minutes.
    pub history_minutes: usize,
    /// Forecast horizon H, minutes.
    pub horizon_minutes: usize,
    pub duration: DurationRule,
    /// Green used by the fixed-duration modes.
    pub fixed_green_s: u64,
    pub features: FeatureLayout,
    /// Append each neighbour's twelve incoming counts to the agent state.
    pub neighbor_features: bool,
    /// Multiplies vehicle counts in the agent state.
    pub state_scale: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            total_s: 3600,
            history_minutes: 10,
            horizon_minutes: 5,
            duration: DurationRule::default(),
            fixed_green_s: 30,
            features: FeatureLayout::PerLane,
            neighbor_features: false,
            state_scale: 0.1,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        self.duration.validate()?;
        if self.history_minutes == 0 || self.horizon_minutes == 0 {
            return Err(ControlError::Config("forecast window lengths must be positive".into()));
        }
        if self.total_s < ((self.history_minutes + self.horizon_minutes) * 60) as u64 {
            return Err(ControlError::Config(format!(
                "episode length {} s shorter than (T + H) minutes",
                self.total_s
            )));
        }
        let r = &self.duration;
        if !(r.t_min_s..=r.t_max_s).contains(&self.fixed_green_s) {
            return Err(ControlError::Config(format!("fixed green {} s outside [t_min, t_max]", self.fixed_green_s)));
        }
        if !(self.state_scale.is_finite() && self.state_scale > 0.0) {
            return Err(ControlError::Config("state_scale must be positive".into()));
        }
        Ok(())
    }

    /// Agent state length for this configuration.
    pub fn state_len(&self) -> usize {
        crate::microsim::OBSERVATION_LEN + if self.neighbor_features { 4 * MOVEMENTS } else { 0 }
    }

    /// Stable hash of the state layout, used to pair agent checkpoints with configurations.
    pub fn layout_hash(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let desc = format!(
            "phase-onehot{PHASES};incoming{MOVEMENTS};outgoing{MOVEMENTS};neighbors={};scale={}",
            self.neighbor_features, self.state_scale
        );
        let d = Sha256::digest(desc.as_bytes());
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

/// Road graph plus resolved demand.
#[derive(Debug, Clone)]
pub struct World {
    pub graph: Arc<RoadGraph>,
    pub flows: Vec<Flow>,
}

impl World {
    pub fn new(graph: Arc<RoadGraph>, flow_text: &str) -> Result<Self, ControlError> {
        let net = LaneNet::new(&graph);
        let flows = load_flows(flow_text, &net)?;
        Ok(Self { graph, flows })
    }
}

/// Per-episode knobs that vary between training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOptions {
    pub episode: u32,
    pub epsilon: f64,
    pub learn: bool,
    /// When false a gplight episode keeps `t_exp = t_max` throughout (forecast non-binding).
    pub use_forecast: bool,
    pub sim: SimConfig,
    pub record_events: bool,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self { episode: 0, epsilon: 0.0, learn: false, use_forecast: true, sim: SimConfig::default(), record_events: false }
    }
}

/// One logged control decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionRecord {
    pub episode: u32,
    pub time_s: u64,
    pub node: usize,
    pub phase: usize,
    /// Duration from observed queues; for fixed-duration modes this is still logged for reference.
    pub t_req: u64,
    /// Duration from the forecast, or `t_max` while no forecast is live.
    pub t_exp: u64,
    pub t_green: u64,
    pub yellow_s: u64,
    /// Whether a forecast was live at the decision.
    pub prediction_live: bool,
}

/// Predicted and observed network volume for one minute.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumePoint {
    pub minute: usize,
    /// Sum of per-minute max occupancy over every incoming lane.
    pub real: f64,
    /// One-step-ahead forecast of `real`, made from the preceding T minutes.
    pub predicted: Option<f64>,
}

/// Cumulative green seconds per phase at one node, sampled at each of its decisions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseGreenPoint {
    pub time_s: u64,
    pub node: usize,
    pub cumulative: [u64; PHASES],
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub mode: Mode,
    pub episode: u32,
    /// Metrics snapshot at `total_s`.
    pub metrics: MetricsRecord,
    /// Per-node accumulated green + yellow time decided.
    pub t_sum: Vec<u64>,
    pub actions: Vec<ActionRecord>,
    pub volume: Vec<VolumePoint>,
    pub phase_green: Vec<PhaseGreenPoint>,
    /// Per-minute `N x 12` max occupancy frames.
    pub frames: Vec<Matrix>,
    pub mean_loss: Option<f64>,
    pub event_log: Option<String>,
}

/// Agent state: phase one-hot, scaled incoming and outgoing counts, optional neighbour counts.
pub fn encode_state(obs: &Observation, neighbors: Option<&[Option<Observation>; 4]>, scale: f64) -> Vec<f64> {
    let mut s = obs.to_vec();
    s[PHASES..].iter_mut().for_each(|v| *v *= scale);
    if let Some(nb) = neighbors {
        for side in nb {
            match side {
                Some(o) => s.extend(o.incoming.iter().map(|v| v * scale)),
                None => s.extend([0.0; MOVEMENTS]),
            }
        }
    }
    s
}

/// Aggregates an `N x 12` frame to the configured feature layout.
pub fn frame_features(frame: &Matrix, layout: FeatureLayout) -> Matrix {
    match layout {
        FeatureLayout::PerLane => frame.clone(),
        FeatureLayout::Aggregate => {
            Matrix::from_vec(frame.rows(), 1, (0..frame.rows()).map(|v| frame.row(v).iter().sum()).collect())
        }
    }
}

fn check_predictor(p: &Predictor, cfg: &EpisodeConfig, graph: &RoadGraph) -> Result<(), ControlError> {
    let s = p.shape();
    let expect = (graph.len(), cfg.features.features(), cfg.history_minutes, cfg.horizon_minutes);
    if (s.n, s.d, s.t, s.h) != expect {
        return Err(ControlError::Shape(format!(
            "predictor is N={} D={} T={} H={}, episode expects N={} D={} T={} H={}",
            s.n, s.d, s.t, s.h, expect.0, expect.1, expect.2, expect.3
        )));
    }
    if p.model.graph_hash() != graph.fingerprint() {
        return Err(ControlError::Shape("predictor was trained on a different graph".into()));
    }
    Ok(())
}

/// Runs one episode of `mode`.
///
/// Each intersection decides whenever its signal is idle and its accumulated decided time
/// `t_sum` is below `total_s`; the simulator then advances one second. Metrics are captured at
/// `total_s`. A forecast is refreshed at every completed minute once `T` minutes of history exist;
/// until then `t_exp = t_max`, so gplight coincides with presslight-dynamic.
pub fn run_episode(
    cfg: &EpisodeConfig,
    world: &World,
    agents: &mut [Agent],
    predictor: Option<&Predictor>,
    mode: Mode,
    opts: &EpisodeOptions,
) -> Result<EpisodeOutput, ControlError> {
    cfg.validate()?;
    let graph = &world.graph;
    let n = graph.len();
    if mode.is_learned() {
        if agents.len() != n {
            return Err(ControlError::Shape(format!("{} agents for {n} intersections", agents.len())));
        }
        if let Some(a) = agents.iter().find(|a| a.q.state_len() != cfg.state_len()) {
            return Err(ControlError::Shape(format!(
                "agent state length {} but configuration gives {}",
                a.q.state_len(),
                cfg.state_len()
            )));
        }
    }
    if mode.uses_prediction() && predictor.is_none() {
        return Err(ControlError::Config("gplight mode requires a trained predictor".into()));
    }
    if let Some(p) = predictor {
        check_predictor(p, cfg, graph)?;
    }

    let mut sim_cfg = opts.sim.clone();
    sim_cfg.yellow_s = cfg.duration.yellow_s;
    sim_cfg.discharge_headway_s = cfg.duration.discharge_headway_s.ceil() as u64;
    let mut sim = Simulator::new(Arc::clone(graph), world.flows.clone(), sim_cfg);
    if opts.record_events {
        sim.enable_event_log();
    }

    let rule = &cfg.duration;
    let mut t_sum = vec![0u64; n];
    let mut pending: Vec<Option<(Vec<f64>, usize)>> = vec![None; n];
    let mut cycle = vec![0usize; n];
    let mut green_acc = vec![[0u64; PHASES]; n];
    let mut actions = Vec::new();
    let mut phase_green = Vec::new();
    let mut volume: Vec<VolumePoint> = Vec::new();
    let mut frames: Vec<Matrix> = Vec::new();
    let mut forecast: Option<PredictionWindow> = None;
    let mut forecast_minute = usize::MAX;
    let mut losses = Vec::new();

    let observe_all = |sim: &Simulator| -> Result<Vec<Observation>, ControlError> {
        (0..n).map(|v| sim.observe(v).map_err(ControlError::from)).collect()
    };
    let state_of = |obs: &[Observation], v: usize| -> Vec<f64> {
        if cfg.neighbor_features {
            let nb = graph.neighbors(v).map(|o| o.map(|u| obs[u].clone()));
            encode_state(&obs[v], Some(&nb), cfg.state_scale)
        } else {
            encode_state(&obs[v], None, cfg.state_scale)
        }
    };

    while sim.clock() < cfg.total_s {
        // Minute bookkeeping and forecast refresh.
        while frames.len() < sim.minutes_elapsed() {
            let m = frames.len();
            let frame = sim.per_minute_lane_max(m)?;
            let real = frame.as_slice().iter().sum();
            let predicted = (forecast_minute == m).then(|| forecast_total(forecast.as_ref()));
            volume.push(VolumePoint { minute: m, real, predicted: predicted.flatten() });
            frames.push(frame);
        }
        if let Some(p) = predictor {
            let m = frames.len();
            if m >= cfg.history_minutes && forecast_minute != m {
                let window: Vec<Matrix> =
                    frames[m - cfg.history_minutes..].iter().map(|f| frame_features(f, cfg.features)).collect();
                forecast = Some(p.predict(&HistoryWindow::from_frames(&window)?)?);
                forecast_minute = m;
            }
        }

        let deciding: Vec<usize> =
            (0..n).filter(|&v| sim.signal(v).awaiting_action() && t_sum[v] < cfg.total_s).collect();
        if !deciding.is_empty() {
            let obs = observe_all(&sim)?;
            for v in deciding {
                let phases = &graph.node(v).phases;
                let state = state_of(&obs, v);
                if mode.is_learned() {
                    if let Some((prev, a)) = pending[v].take() {
                        let reward = reward_for(mode.reward_kind(), &obs[v])?;
                        let exp = Experience { state: prev, action: a, reward, next_state: state.clone() };
                        if let Some(l) = agents[v].remember(exp, opts.learn)? {
                            losses.push(l);
                        }
                    }
                }
                let phase = match mode {
                    Mode::Fixedtime => {
                        let p = cycle[v] % PHASES;
                        cycle[v] += 1;
                        p
                    }
                    Mode::Maxpressure => crate::dqn::argmax(&phase_pressures(&obs[v], phases)),
                    _ => agents[v].act(&state, opts.epsilon),
                };
                let t_req = required_green(&obs[v], &phases[phase], rule);
                let live = forecast.is_some() && opts.use_forecast;
                let t_exp = match forecast.as_ref().filter(|_| opts.use_forecast) {
                    Some(f) => expected_green(f, v, &phases[phase], cfg.features, rule)?,
                    None => rule.t_max_s,
                };
                let t_green = match mode {
                    Mode::Gplight => t_exp.min(t_req),
                    Mode::PresslightDynamic => t_req,
                    Mode::PresslightFixed | Mode::Maxpressure | Mode::Fixedtime => cfg.fixed_green_s,
                };
                let yellow = sim.apply_action(v, phase, t_green);
                t_sum[v] += t_green + yellow;
                green_acc[v][phase] += t_green;
                if mode.is_learned() {
                    pending[v] = Some((state, phase));
                }
                actions.push(ActionRecord {
                    episode: opts.episode,
                    time_s: sim.clock(),
                    node: v,
                    phase,
                    t_req,
                    t_exp,
                    t_green,
                    yellow_s: yellow,
                    prediction_live: live,
                });
                phase_green.push(PhaseGreenPoint { time_s: sim.clock(), node: v, cumulative: green_acc[v] });
            }
        }
        sim.step();
    }

    // Close the last transition of every agent at the horizon.
    if mode.is_learned() {
        let obs = observe_all(&sim)?;
        for v in 0..n {
            if let Some((prev, a)) = pending[v].take() {
                let reward = reward_for(mode.reward_kind(), &obs[v])?;
                let exp = Experience { state: prev, action: a, reward, next_state: state_of(&obs, v) };
                if let Some(l) = agents[v].remember(exp, opts.learn)? {
                    losses.push(l);
                }
            }
        }
    }
    while frames.len() < sim.minutes_elapsed() {
        let m = frames.len();
        let frame = sim.per_minute_lane_max(m)?;
        let predicted = (forecast_minute == m).then(|| forecast_total(forecast.as_ref())).flatten();
        volume.push(VolumePoint { minute: m, real: frame.as_slice().iter().sum(), predicted });
        frames.push(frame);
    }

    let mean_loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
    Ok(EpisodeOutput {
        mode,
        episode: opts.episode,
        metrics: sim.metrics(),
        t_sum,
        actions,
        volume,
        phase_green,
        frames,
        mean_loss,
        event_log: opts.record_events.then(|| sim.event_log_text()),
    })
}

/// Network total of the first forecast step.
fn forecast_total(f: Option<&PredictionWindow>) -> Option<f64> {
    f.map(|p| (0..p.n).flat_map(|v| (0..p.d).map(move |d| (v, d))).map(|(v, d)| p.get(v, d, 0)).sum())
}

