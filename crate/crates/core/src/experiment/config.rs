use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::control::{EpisodeConfig, Mode};
use crate::dqn::DqnConfig;
use crate::scenario::{ScenarioName, ScenarioOptions};
use crate::stgcn::TrainConfig;

/// Forecaster architecture, data harvest and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// MaxPressure episodes simulated to collect training windows.
    pub harvest_episodes: u32,
    /// Spawn jitter applied during harvest so episodes differ.
    pub harvest_jitter_s: u64,
    pub k: usize,
    pub kt: usize,
    pub channels: [usize; 3],
    pub train: TrainConfig,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            harvest_episodes: 20,
            harvest_jitter_s: 5,
            k: 3,
            kt: 3,
            channels: [32, 16, 32],
            train: TrainConfig { epochs: 40, lr: 0.1, batch: 16, shuffle: true, seed: 0 },
        }
    }
}

/// A complete experiment: scenario, modes, seeds and every hyperparameter.
///
/// Paths are resolved relative to the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Generated scenario used when `roadnet`/`flows` are not given.
    pub scenario: ScenarioName,
    pub roadnet: Option<PathBuf>,
    pub flows: Option<PathBuf>,
    pub modes: Vec<Mode>,
    /// Control seeds; each (mode, seed) pair is one independent cell.
    pub seeds: Vec<u64>,
    pub train_episodes: u32,
    pub eval_episodes: u32,
    /// Spawn jitter during control training and evaluation.
    pub sim_jitter_s: u64,
    /// Train gplight agents with the forecast non-binding first (as presslight-dynamic would),
    /// switching the forecast on for the final `1 - pretrain_fraction` of episodes.
    pub pretrain_fraction: f64,
    /// Write the action log of every training episode, not only evaluation.
    pub log_training_actions: bool,
    pub out_dir: PathBuf,
    pub episode: EpisodeConfig,
    pub dqn: DqnConfig,
    pub predictor: PredictorConfig,
    pub scenario_options: ScenarioOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioName::Single,
            roadnet: None,
            flows: None,
            modes: Mode::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            train_episodes: 150,
            eval_episodes: 1,
            sim_jitter_s: 0,
            pretrain_fraction: 0.0,
            log_training_actions: true,
            out_dir: PathBuf::from("runs/default"),
            episode: EpisodeConfig::default(),
            dqn: DqnConfig::default(),
            predictor: PredictorConfig::default(),
            scenario_options: ScenarioOptions::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, resolves relative paths against `base`, and validates everything up front.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ExperimentError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        for p in [&mut cfg.roadnet, &mut cfg.flows].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every documented range; nothing runs unless this passes.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.roadnet.is_some() != self.flows.is_some() {
            return bad("`roadnet` and `flows` must be given together".into());
        }
        for p in [&self.roadnet, &self.flows].into_iter().flatten() {
            if !p.is_file() {
                return bad(format!("file {} does not exist", p.display()));
            }
        }
        if self.modes.is_empty() {
            return bad("`modes` is empty".into());
        }
        let mut modes = self.modes.clone();
        modes.sort();
        modes.dedup();
        if modes.len() != self.modes.len() {
            return bad("`modes` lists a mode twice".into());
        }
        if self.seeds.is_empty() {
            return bad("`seeds` is empty".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("`seeds` lists a seed twice".into());
        }
        if self.train_episodes > 10_000 {
            return bad("`train_episodes` must be at most 10000".into());
        }
        if !(1..=100).contains(&self.eval_episodes) {
            return bad("`eval_episodes` must be in 1..=100".into());
        }
        if self.sim_jitter_s > 600 || self.predictor.harvest_jitter_s > 600 {
            return bad("spawn jitter must be at most 600 s".into());
        }
        if !(0.0..=1.0).contains(&self.pretrain_fraction) {
            return bad("`pretrain_fraction` must be in [0, 1]".into());
        }
        self.episode.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.dqn.validate().map_err(ExperimentError::Config)?;
        let p = &self.predictor;
        if !(1..=1000).contains(&p.harvest_episodes) {
            return bad("`predictor.harvest_episodes` must be in 1..=1000".into());
        }
        if !(1..=8).contains(&p.k) || !(1..=5).contains(&p.kt) || p.channels.iter().any(|&c| !(1..=256).contains(&c)) {
            return bad("`predictor` k must be in 1..=8, kt in 1..=5, channels in 1..=256".into());
        }
        if self.episode.history_minutes <= 4 * (p.kt - 1) {
            return bad("history too short for two ST-Conv blocks at this kt".into());
        }
        let t = &p.train;
        if t.batch == 0 || t.epochs > 10_000 || !(t.lr.is_finite() && (0.0..=10.0).contains(&t.lr)) {
            return bad("`predictor.train` needs batch >= 1, epochs <= 10000, lr in [0, 10]".into());
        }
        let so = &self.scenario_options;
        if so.single_interval_s == 0
            || so.single_surge_interval_s == 0
            || so.grid_surge_interval_s == 0
            || !(so.grid_mean_interval_s.is_finite() && so.grid_mean_interval_s >= 1.0)
            || so.surge_start_s > so.surge_end_s
        {
            return bad("`scenario_options` intervals must be positive and the surge window ordered".into());
        }
        Ok(())
    }
}
