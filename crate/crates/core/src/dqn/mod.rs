//! Per-intersection deep Q-learning: pressure rewards, Q-network with target twin, replay
//! memory, epsilon-greedy phase selection and the TD update.

mod pressure;
mod replay;
mod schedule;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::PHASES;
use crate::nn::{Adam, Mlp};
use crate::params::{ParamError, ParamFile};
pub use pressure::{
    classic_pressure_reward, movement_readings, pressure, reward, reward_for, PressureReading, RewardKind,
    CLASSIC_OUT_SCALE,
};
pub use replay::{Experience, ReplayBuffer};
pub use schedule::EpsilonSchedule;

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("expected 12 movement readings, got {0}")]
    MissingReading(usize),
    #[error("empty training batch")]
    EmptyBatch,
    #[error("state has length {found}, network expects {expected}")]
    StateShape { expected: usize, found: usize },
    #[error(transparent)]
    Checkpoint(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
    pub batch: usize,
    pub replay_capacity: usize,
    /// Agent steps between target syncs.
    pub target_sync: u64,
    /// Multiplies rewards inside the TD target.
    pub reward_scale: f64,
    pub epsilon: EpsilonSchedule,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            lr: 1e-3,
            gamma: 0.8,
            batch: 32,
            replay_capacity: 10_000,
            target_sync: 200,
            reward_scale: 0.05,
            epsilon: EpsilonSchedule::default(),
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), String> {
        let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(format!("dqn.{what} out of range")) };
        check(!self.hidden.is_empty() && self.hidden.iter().all(|&h| (1..=4096).contains(&h)), "hidden")?;
        check((0.0..=1.0).contains(&self.lr), "lr")?;
        check((0.0..1.0).contains(&self.gamma), "gamma")?;
        check((1..=4096).contains(&self.batch), "batch")?;
        check(self.replay_capacity >= self.batch, "replay_capacity")?;
        check(self.target_sync >= 1, "target_sync")?;
        check(self.reward_scale > 0.0 && self.reward_scale.is_finite(), "reward_scale")?;
        let e = &self.epsilon;
        check((0.0..=1.0).contains(&e.start) && (0.0..=1.0).contains(&e.end) && e.end <= e.start, "epsilon")
    }
}

/// Online network `Q(.; theta)` and its periodically synced target `Q^(.; theta^)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub online: Mlp,
    pub target: Mlp,
}

impl QNetwork {
    pub fn new<R: Rng>(state_len: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![state_len];
        sizes.extend_from_slice(hidden);
        sizes.push(PHASES);
        let online = Mlp::new(&sizes, rng);
        Self { target: online.clone(), online }
    }

    pub fn state_len(&self) -> usize {
        self.online.input_len()
    }

    pub fn q_values(&self, state: &[f64]) -> Vec<f64> {
        self.online.forward(state)
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

/// Index of the largest value, ties going to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Uniform random phase with probability `epsilon`, otherwise the greedy phase.
pub fn select_action<R: Rng>(q: &QNetwork, state: &[f64], epsilon: f64, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    if u < epsilon {
        rng.gen_range(0..PHASES)
    } else {
        argmax(&q.q_values(state))
    }
}

/// Mean squared TD error over the batch and its gradient with respect to the online parameters.
///
/// `J = 1/B * sum (scale * R + gamma * max_a Q^(s', a) - Q(s, a))^2`; the target network is
/// treated as a constant.
pub fn td_loss_and_grad(
    online: &Mlp,
    target: &Mlp,
    batch: &[&Experience],
    gamma: f64,
    reward_scale: f64,
) -> Result<(f64, Mlp), DqnError> {
    if batch.is_empty() {
        return Err(DqnError::EmptyBatch);
    }
    let b = batch.len() as f64;
    let mut grad = online.zeros_like();
    let mut loss = 0.0;
    for e in batch {
        for s in [&e.state, &e.next_state] {
            if s.len() != online.input_len() {
                return Err(DqnError::StateShape { expected: online.input_len(), found: s.len() });
            }
        }
        let next_max = target.forward(&e.next_state).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let y = reward_scale * e.reward + gamma * next_max;
        let (q, cache) = online.forward_cached(&e.state);
        let diff = y - q[e.action];
        loss += diff * diff / b;
        let mut dq = vec![0.0; q.len()];
        dq[e.action] = -2.0 * diff / b;
        online.backward(&cache, &dq, &mut grad);
    }
    Ok((loss, grad))
}

/// One optimiser step on the online parameters only; returns the pre-update loss.
pub fn td_update(
    q: &mut QNetwork,
    optimizer: &mut Adam,
    batch: &[&Experience],
    gamma: f64,
    lr: f64,
    reward_scale: f64,
) -> Result<f64, DqnError> {
    let (loss, grad) = td_loss_and_grad(&q.online, &q.target, batch, gamma, reward_scale)?;
    let grads: Vec<&[f64]> = grad.params().into_iter().map(|(_, g)| g).collect();
    optimizer.step(lr, q.online.params_mut(), grads);
    Ok(loss)
}

/// One intersection's learner: network, optimiser, replay memory and private RNG.
#[derive(Debug, Clone)]
pub struct Agent {
    pub q: QNetwork,
    pub config: DqnConfig,
    optimizer: Adam,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    steps: u64,
}

impl Agent {
    pub fn new(state_len: usize, config: DqnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = QNetwork::new(state_len, &config.hidden, &mut rng);
        Self { q, optimizer: Adam::default(), buffer: ReplayBuffer::new(config.replay_capacity), rng, steps: 0, config }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn act(&mut self, state: &[f64], epsilon: f64) -> usize {
        select_action(&self.q, state, epsilon, &mut self.rng)
    }

    /// Stores a transition and, when `learn` is set, performs one TD update once the buffer holds
    /// a full batch, syncing the target every `target_sync` steps. Returns the loss if updated.
    pub fn remember(&mut self, exp: Experience, learn: bool) -> Result<Option<f64>, DqnError> {
        if exp.state.len() != self.q.state_len() {
            return Err(DqnError::StateShape { expected: self.q.state_len(), found: exp.state.len() });
        }
        self.buffer.push(exp);
        if !learn {
            return Ok(None);
        }
        self.steps += 1;
        let mut loss = None;
        if self.buffer.len() >= self.config.batch {
            let batch: Vec<Experience> = self.buffer.sample(self.config.batch, &mut self.rng).into_iter().cloned().collect();
            let refs: Vec<&Experience> = batch.iter().collect();
            let c = &self.config;
            loss = Some(td_update(&mut self.q, &mut self.optimizer, &refs, c.gamma, c.lr, c.reward_scale)?);
        }
        if self.steps % self.config.target_sync == 0 {
            self.q.sync_target();
        }
        Ok(loss)
    }

    /// Checkpoint keyed by intersection id and a hash of the state layout.
    pub fn to_param_file(&self, intersection: &str, layout_hash: u64) -> ParamFile {
        let mut f = ParamFile::new("dqn-agent", intersection);
        f.header.push(("state_len".into(), self.q.state_len() as u64));
        f.header.push(("layout_hash".into(), layout_hash));
        f.header.push(("layers".into(), self.q.online.layers.len() as u64));
        for (i, l) in self.q.online.layers.iter().enumerate() {
            f.header.push((format!("layer{i}.out"), l.out as u64));
        }
        for (prefix, net) in [("online", &self.q.online), ("target", &self.q.target)] {
            for (name, data) in net.params() {
                f.arrays.push((format!("{prefix}.{name}"), data.to_vec()));
            }
        }
        f
    }

    /// Restores network weights from a checkpoint written by [`Agent::to_param_file`].
    pub fn load_params(&mut self, f: &ParamFile, intersection: &str, layout_hash: u64) -> Result<(), DqnError> {
        f.expect_kind("dqn-agent")?;
        let mismatch = |what: &str, e: String, g: String| ParamError::Mismatch { what: what.into(), expected: e, found: g };
        if f.label != intersection {
            return Err(mismatch("intersection", intersection.into(), f.label.clone()).into());
        }
        let h = f.header_value("layout_hash")?;
        if h != layout_hash {
            return Err(mismatch("state layout hash", layout_hash.to_string(), h.to_string()).into());
        }
        for (prefix, net) in [("online", &mut self.q.online), ("target", &mut self.q.target)] {
            let names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
            for (name, slot) in names.iter().zip(net.params_mut()) {
                let data = f.array(&format!("{prefix}.{name}"))?;
                if data.len() != slot.len() {
                    return Err(mismatch(name, slot.len().to_string(), data.len().to_string()).into());
                }
                slot.copy_from_slice(data);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn experience(rng: &mut ChaCha8Rng, len: usize) -> Experience {
        Experience {
            state: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: rng.gen_range(0..PHASES),
            reward: -rng.gen_range(0.0..5.0),
            next_state: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn argmax_and_tie_break() {
        assert_eq!(argmax(&[1.0, 5.0, 2.0, 0.0]), 1);
        assert_eq!(argmax(&[5.0, 5.0, 2.0, 0.0]), 0);
    }

    #[test]
    fn greedy_selection_uses_online_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = QNetwork::new(3, &[4], &mut rng);
        // Force Q = [1, 5, 2, 0] via output bias with zero output weights.
        let last = q.online.layers.last_mut().unwrap();
        last.w.iter_mut().for_each(|w| *w = 0.0);
        last.b = vec![1.0, 5.0, 2.0, 0.0];
        assert_eq!(select_action(&q, &[0.1, 0.2, 0.3], 0.0, &mut rng), 1);
        last_bias(&mut q, vec![5.0, 5.0, 2.0, 0.0]);
        assert_eq!(select_action(&q, &[0.1, 0.2, 0.3], 0.0, &mut rng), 0);
    }

    fn last_bias(q: &mut QNetwork, b: Vec<f64>) {
        q.online.layers.last_mut().unwrap().b = b;
    }

    #[test]
    fn zero_gamma_loss_is_squared_reward_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = QNetwork::new(5, &[8], &mut rng);
        let e = experience(&mut rng, 5);
        let (loss, _) = td_loss_and_grad(&q.online, &q.target, &[&e], 0.0, 1.0).unwrap();
        let pred = q.q_values(&e.state)[e.action];
        assert!((loss - (e.reward - pred).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut q = QNetwork::new(5, &[8], &mut rng);
        let before = q.clone();
        let e = experience(&mut rng, 5);
        let loss = td_update(&mut q, &mut Adam::default(), &[&e], 0.8, 0.0, 1.0).unwrap();
        assert!(loss > 0.0);
        assert_eq!(q, before);
        assert!(matches!(td_update(&mut q, &mut Adam::default(), &[], 0.8, 0.1, 1.0), Err(DqnError::EmptyBatch)));
    }

    #[test]
    fn update_touches_online_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut q = QNetwork::new(5, &[8], &mut rng);
        let target = q.target.clone();
        let e = experience(&mut rng, 5);
        td_update(&mut q, &mut Adam::default(), &[&e], 0.8, 0.01, 1.0).unwrap();
        assert_eq!(q.target, target);
        assert_ne!(q.online, target);
        q.sync_target();
        assert_eq!(q.online, q.target);
    }

    #[test]
    fn agent_syncs_every_c_steps() {
        let config = DqnConfig { batch: 2, target_sync: 3, hidden: vec![6], ..Default::default() };
        let mut agent = Agent::new(4, config, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for step in 1..=7u64 {
            agent.remember(experience(&mut rng, 4), true).unwrap();
            if step % 3 == 0 {
                assert_eq!(agent.q.online, agent.q.target, "synced at step {step}");
            } else if step > 2 {
                assert_ne!(agent.q.online, agent.q.target, "stale between syncs at step {step}");
            }
        }
        let always = DqnConfig { batch: 1, target_sync: 1, hidden: vec![6], ..Default::default() };
        let mut agent = Agent::new(4, always, 2);
        for _ in 0..4 {
            agent.remember(experience(&mut rng, 4), true).unwrap();
            assert_eq!(agent.q.online, agent.q.target);
        }
    }

    #[test]
    fn checkpoint_round_trip_checks_layout() {
        let agent = Agent::new(28, DqnConfig::default(), 3);
        let f = agent.to_param_file("n0", 77);
        let bytes = f.to_bytes();
        let back = ParamFile::read_from(&mut bytes.as_slice()).unwrap();
        let mut other = Agent::new(28, DqnConfig::default(), 4);
        other.load_params(&back, "n0", 77).unwrap();
        assert_eq!(other.q, agent.q);
        assert!(other.load_params(&back, "n0", 78).is_err());
        assert!(other.load_params(&back, "n1", 77).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DqnConfig::default().validate().is_ok());
        assert!(DqnConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
        assert!(DqnConfig { batch: 0, ..Default::default() }.validate().is_err());
    }
}
