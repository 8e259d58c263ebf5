use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, ExperimentError};
use crate::control::{frame_features, run_episode, ActionRecord, EpisodeOptions, EpisodeOutput, Mode, World};
use crate::dqn::Agent;
use crate::io_util::write_atomic;
use crate::microsim::SimConfig;
use crate::netgraph::{build_graph, normalized_laplacian, Laplacian};
use crate::params::ParamFile;
use crate::scenario::generate_scenario;
use crate::stgcn::{Dataset, Predictor, StgcnModel, StgcnShape};

type Result<T> = std::result::Result<T, ExperimentError>;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed split: `splitmix64(splitmix64(root ^ fnv1a(tag)) + index)`.
///
/// Every random component draws from its own stream, named by `tag` and indexed (episode, node,
/// ...), so adding a component never shifts the streams of the others.
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(root ^ h).wrapping_add(index))
}

/// Loaded scenario and resolved configuration shared by all stages.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub world: World,
    pub roadnet_text: String,
    pub flows_text: String,
    pub lap: Laplacian,
}

impl Prepared {
    fn out(&self, rel: &str) -> PathBuf {
        self.cfg.out_dir.join(rel)
    }

    fn predictor_path(&self, seed: u64) -> PathBuf {
        self.out(&format!("predictor/s{seed}/stgcn.gplt"))
    }

    fn agent_path(&self, mode: Mode, seed: u64, node: usize) -> PathBuf {
        let id = &self.world.graph.node(node).id;
        self.out(&format!("agents/{mode}/s{seed}/{id}.gplt"))
    }

    fn needs_predictor(&self) -> bool {
        self.cfg.modes.contains(&Mode::Gplight)
    }

    fn learned_modes(&self) -> Vec<Mode> {
        self.cfg.modes.iter().copied().filter(|m| m.is_learned()).collect()
    }

    fn new_agents(&self, seed: u64) -> Vec<Agent> {
        (0..self.world.graph.len())
            .map(|v| Agent::new(self.cfg.episode.state_len(), self.cfg.dqn.clone(), derive_seed(seed, "agent", v as u64)))
            .collect()
    }

    fn new_predictor(&self, seed: u64, scale: f64) -> Result<Predictor> {
        let c = &self.cfg;
        let shape = StgcnShape {
            n: self.world.graph.len(),
            d: c.episode.features.features(),
            t: c.episode.history_minutes,
            h: c.episode.horizon_minutes,
            k: c.predictor.k,
            kt: c.predictor.kt,
            channels: c.predictor.channels,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "stgcn-init", 0));
        let model = StgcnModel::new(shape, &self.lap, self.world.graph.fingerprint(), &mut rng)
            .map_err(|e| ExperimentError::stage("train-predictor", e))?;
        Predictor::new(model, scale).map_err(|e| ExperimentError::stage("train-predictor", e))
    }

    fn load_predictor(&self, seed: u64, stage: &'static str) -> Result<Predictor> {
        let path = self.predictor_path(seed);
        Predictor::load(&path, &self.lap, self.world.graph.fingerprint())
            .map_err(|e| ExperimentError::stage(stage, format!("{}: {e}", path.display())))
    }

    fn load_agents(&self, mode: Mode, seed: u64) -> Result<Vec<Agent>> {
        let mut agents = self.new_agents(seed);
        let hash = self.cfg.episode.layout_hash();
        for (v, a) in agents.iter_mut().enumerate() {
            let path = self.agent_path(mode, seed, v);
            let f = ParamFile::load(&path)
                .map_err(|e| ExperimentError::stage("evaluate", format!("{}: {e}", path.display())))?;
            a.load_params(&f, &self.world.graph.node(v).id, hash)
                .map_err(|e| ExperimentError::stage("evaluate", format!("{}: {e}", path.display())))?;
        }
        Ok(agents)
    }

    fn sim_config(&self, seed: u64, jitter: u64) -> SimConfig {
        SimConfig { spawn_jitter_s: jitter, seed, ..SimConfig::default() }
    }
}

/// Loads (or generates) the scenario and checks that it is usable.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let stage = |e: String| ExperimentError::stage("prepare", e);
    let (roadnet_text, flows_text) = match (&cfg.roadnet, &cfg.flows) {
        (Some(r), Some(f)) => (
            std::fs::read_to_string(r).map_err(|e| stage(format!("{}: {e}", r.display())))?,
            std::fs::read_to_string(f).map_err(|e| stage(format!("{}: {e}", f.display())))?,
        ),
        _ => {
            let s = generate_scenario(cfg.scenario, &cfg.scenario_options);
            (s.roadnet_json(), s.flows_json())
        }
    };
    let graph = Arc::new(build_graph(&roadnet_text).map_err(|e| stage(e.to_string()))?);
    let world = World::new(Arc::clone(&graph), &flows_text).map_err(|e| stage(e.to_string()))?;
    let lap = normalized_laplacian(&graph).map_err(|e| stage(e.to_string()))?;
    Ok(Prepared { cfg: cfg.clone(), world, roadnet_text, flows_text, lap })
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| ExperimentError::stage("write", e))?;
    }
    w.into_inner().map_err(|e| ExperimentError::stage("write", e))
}

fn write_file(path: &Path, bytes: &[u8], stage: &'static str) -> Result<()> {
    write_atomic(path, bytes).map_err(|e| ExperimentError::stage(stage, format!("{}: {e}", path.display())))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], stage: &'static str) -> Result<()> {
    write_file(path, &csv_bytes(rows)?, stage)
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| ExperimentError::stage("read", format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| ExperimentError::stage("read", format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CurveRow {
    epoch: usize,
    mse: f64,
}

/// Harvests MaxPressure windows and trains one forecaster per seed.
pub fn stage_train_predictor(p: &Prepared) -> Result<()> {
    const STAGE: &str = "train-predictor";
    let cfg = &p.cfg;
    let results: Vec<(u64, Dataset, Predictor, Vec<CurveRow>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<_> {
            let mut data = Dataset::default();
            for i in 0..cfg.predictor.harvest_episodes {
                let opts = EpisodeOptions {
                    episode: i,
                    sim: p.sim_config(derive_seed(seed, "harvest", u64::from(i)), cfg.predictor.harvest_jitter_s),
                    ..EpisodeOptions::default()
                };
                let out = run_episode(&cfg.episode, &p.world, &mut [], None, Mode::Maxpressure, &opts)
                    .map_err(|e| ExperimentError::stage("harvest", e))?;
                let frames: Vec<_> = out.frames.iter().map(|f| frame_features(f, cfg.episode.features)).collect();
                data.extend_from_series(&frames, cfg.episode.history_minutes, cfg.episode.horizon_minutes)
                    .map_err(|e| ExperimentError::stage("harvest", e))?;
            }
            let mut predictor = p.new_predictor(seed, data.max_value().max(1.0))?;
            let mut train = cfg.predictor.train.clone();
            train.seed = derive_seed(seed, "stgcn-shuffle", train.seed);
            let curve = predictor.fit(&data, &train).map_err(|e| ExperimentError::stage(STAGE, e))?;
            let rows = std::iter::once(curve.initial_mse)
                .chain(curve.epoch_mse.iter().copied())
                .enumerate()
                .map(|(epoch, mse)| CurveRow { epoch, mse })
                .collect();
            Ok((seed, data, predictor, rows))
        })
        .collect::<Result<_>>()?;
    for (seed, data, predictor, rows) in results {
        data.save(&p.out(&format!("predictor/s{seed}/dataset.gpds")), &format!("seed-{seed}"))
            .map_err(|e| ExperimentError::stage(STAGE, e))?;
        predictor.save(&p.predictor_path(seed), &format!("seed-{seed}")).map_err(|e| ExperimentError::stage(STAGE, e))?;
        write_csv(&p.out(&format!("predictor/s{seed}/curve.csv")), &rows, STAGE)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainingRow {
    mode: String,
    seed: u64,
    episode: u32,
    epsilon: f64,
    throughput: usize,
    att_completed: f64,
    att_inclusive: f64,
    mean_loss: Option<f64>,
}

/// One row of an action log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionLogRow {
    pub stage: String,
    pub episode: u32,
    pub time_s: u64,
    pub node: usize,
    pub phase: usize,
    pub t_req: u64,
    pub t_exp: u64,
    pub t_green: u64,
    pub yellow_s: u64,
    pub prediction_live: bool,
}

fn action_rows(stage: &str, actions: &[ActionRecord]) -> Vec<ActionLogRow> {
    actions
        .iter()
        .map(|a| ActionLogRow {
            stage: stage.into(),
            episode: a.episode,
            time_s: a.time_s,
            node: a.node,
            phase: a.phase,
            t_req: a.t_req,
            t_exp: a.t_exp,
            t_green: a.t_green,
            yellow_s: a.yellow_s,
            prediction_live: a.prediction_live,
        })
        .collect()
}

/// Trains agents for every learned mode and seed; writes checkpoints, training curves and logs.
pub fn stage_train_control(p: &Prepared) -> Result<()> {
    const STAGE: &str = "train-control";
    let cfg = &p.cfg;
    let cells: Vec<(Mode, u64)> =
        p.learned_modes().into_iter().flat_map(|m| cfg.seeds.iter().map(move |&s| (m, s))).collect();
    let predictors: BTreeMap<u64, Predictor> = if cells.iter().any(|(m, _)| m.uses_prediction()) {
        cfg.seeds.iter().map(|&s| Ok((s, p.load_predictor(s, STAGE)?))).collect::<Result<_>>()?
    } else {
        BTreeMap::new()
    };
    let pretrain = (cfg.pretrain_fraction * f64::from(cfg.train_episodes)).round() as u32;
    let results: Vec<(Mode, u64, Vec<Agent>, Vec<TrainingRow>, Vec<ActionLogRow>)> = cells
        .par_iter()
        .map(|&(mode, seed)| -> Result<_> {
            let mut agents = p.new_agents(seed);
            let predictor = if mode.uses_prediction() { predictors.get(&seed) } else { None };
            let mut rows = Vec::new();
            let mut actions = Vec::new();
            for e in 0..cfg.train_episodes {
                let epsilon = cfg.dqn.epsilon.at(e);
                let opts = EpisodeOptions {
                    episode: e,
                    epsilon,
                    learn: true,
                    use_forecast: e >= pretrain,
                    sim: p.sim_config(derive_seed(seed, "train-sim", u64::from(e)), cfg.sim_jitter_s),
                    record_events: false,
                };
                let out = run_episode(&cfg.episode, &p.world, &mut agents, predictor, mode, &opts)
                    .map_err(|err| ExperimentError::stage(STAGE, format!("{mode} seed {seed} episode {e}: {err}")))?;
                rows.push(TrainingRow {
                    mode: mode.to_string(),
                    seed,
                    episode: e,
                    epsilon,
                    throughput: out.metrics.throughput,
                    att_completed: out.metrics.att_completed_s,
                    att_inclusive: out.metrics.att_inclusive_s,
                    mean_loss: out.mean_loss,
                });
                if cfg.log_training_actions {
                    actions.extend(action_rows("train", &out.actions));
                }
            }
            Ok((mode, seed, agents, rows, actions))
        })
        .collect::<Result<_>>()?;

    let mut all_rows = Vec::new();
    let hash = cfg.episode.layout_hash();
    for (mode, seed, agents, rows, actions) in results {
        for (v, a) in agents.iter().enumerate() {
            let f = a.to_param_file(&p.world.graph.node(v).id, hash);
            f.save(&p.agent_path(mode, seed, v)).map_err(|e| ExperimentError::stage(STAGE, e))?;
        }
        write_csv(&p.out(&format!("actions/train_{mode}_s{seed}.csv")), &actions, STAGE)?;
        all_rows.extend(rows);
    }
    write_csv(&p.out("training.csv"), &all_rows, STAGE)
}

/// One evaluation episode's headline metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub episode: u32,
    pub mode: String,
    pub seed: u64,
    pub throughput: usize,
    pub att_completed: f64,
    pub att_inclusive: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CumulativeRow {
    episode: u32,
    time_s: u64,
    passed: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PhaseGreenRow {
    episode: u32,
    time_s: u64,
    node: usize,
    phase0: u64,
    phase1: u64,
    phase2: u64,
    phase3: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VolumeRow {
    episode: u32,
    minute: usize,
    real: f64,
    predicted: Option<f64>,
}

/// Greedy evaluation of every mode and seed from the checkpoints on disk.
pub fn stage_evaluate(p: &Prepared) -> Result<Vec<SummaryRow>> {
    const STAGE: &str = "evaluate";
    let cfg = &p.cfg;
    let cells: Vec<(Mode, u64)> = cfg.modes.iter().flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s))).collect();
    let results: Vec<(Mode, u64, Vec<EpisodeOutput>)> = cells
        .par_iter()
        .map(|&(mode, seed)| -> Result<_> {
            let mut agents = if mode.is_learned() { p.load_agents(mode, seed)? } else { Vec::new() };
            let predictor = if mode.uses_prediction() { Some(p.load_predictor(seed, STAGE)?) } else { None };
            let outs = (0..cfg.eval_episodes)
                .map(|e| {
                    let opts = EpisodeOptions {
                        episode: e,
                        sim: p.sim_config(derive_seed(seed, "eval-sim", u64::from(e)), cfg.sim_jitter_s),
                        ..EpisodeOptions::default()
                    };
                    run_episode(&cfg.episode, &p.world, &mut agents, predictor.as_ref(), mode, &opts)
                        .map_err(|err| ExperimentError::stage(STAGE, format!("{mode} seed {seed}: {err}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((mode, seed, outs))
        })
        .collect::<Result<_>>()?;

    let mut summary = Vec::new();
    for (mode, seed, outs) in &results {
        let mut cumulative = Vec::new();
        let mut greens = Vec::new();
        let mut volume = Vec::new();
        let mut actions = Vec::new();
        for o in outs {
            summary.push(SummaryRow {
                episode: o.episode,
                mode: mode.to_string(),
                seed: *seed,
                throughput: o.metrics.throughput,
                att_completed: o.metrics.att_completed_s,
                att_inclusive: o.metrics.att_inclusive_s,
            });
            cumulative.push(CumulativeRow { episode: o.episode, time_s: 0, passed: 0 });
            cumulative.extend(o.metrics.cumulative.iter().enumerate().map(|(t, &passed)| CumulativeRow {
                episode: o.episode,
                time_s: t as u64 + 1,
                passed,
            }));
            greens.extend(o.phase_green.iter().map(|g| PhaseGreenRow {
                episode: o.episode,
                time_s: g.time_s,
                node: g.node,
                phase0: g.cumulative[0],
                phase1: g.cumulative[1],
                phase2: g.cumulative[2],
                phase3: g.cumulative[3],
            }));
            if mode.uses_prediction() {
                volume.extend(o.volume.iter().map(|v| VolumeRow {
                    episode: o.episode,
                    minute: v.minute,
                    real: v.real,
                    predicted: v.predicted,
                }));
            }
            actions.extend(action_rows("eval", &o.actions));
        }
        write_csv(&p.out(&format!("series/cumulative_{mode}_s{seed}.csv")), &cumulative, STAGE)?;
        write_csv(&p.out(&format!("series/phase_green_{mode}_s{seed}.csv")), &greens, STAGE)?;
        if mode.uses_prediction() {
            write_csv(&p.out(&format!("series/volume_{mode}_s{seed}.csv")), &volume, STAGE)?;
        }
        write_csv(&p.out(&format!("actions/eval_{mode}_s{seed}.csv")), &actions, STAGE)?;
    }
    write_csv(&p.out("summary.csv"), &summary, STAGE)?;
    Ok(summary)
}

/// Provenance record of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub package: String,
    pub version: String,
    pub config_sha256: String,
    pub scenario: String,
    pub roadnet_sha256: String,
    pub flows_sha256: String,
    pub graph_fingerprint: String,
    pub total_s: u64,
    pub modes: Vec<String>,
    pub seeds: Vec<u64>,
    /// Derived per-seed stream roots, for audit.
    pub seed_streams: BTreeMap<String, BTreeMap<String, String>>,
    /// Relative path to SHA-256 of every file written by the run.
    pub files: BTreeMap<String, String>,
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn list_files(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            list_files(&path, root, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_path_buf());
        }
    }
    Ok(())
}

/// Copies inputs next to the outputs and writes `manifest.json` covering every file.
pub fn write_manifest(p: &Prepared) -> Result<Manifest> {
    const STAGE: &str = "manifest";
    let cfg = &p.cfg;
    let config_text = cfg.to_toml();
    write_file(&p.out("inputs/config.toml"), config_text.as_bytes(), STAGE)?;
    write_file(&p.out("inputs/roadnet.json"), p.roadnet_text.as_bytes(), STAGE)?;
    write_file(&p.out("inputs/flows.json"), p.flows_text.as_bytes(), STAGE)?;
    let mut rels = Vec::new();
    list_files(&cfg.out_dir, &cfg.out_dir, &mut rels).map_err(|e| ExperimentError::stage(STAGE, e))?;
    rels.retain(|r| r != Path::new("manifest.json") && !r.to_string_lossy().ends_with(".tmp"));
    let mut files = BTreeMap::new();
    for rel in rels {
        let bytes = std::fs::read(cfg.out_dir.join(&rel)).map_err(|e| ExperimentError::stage(STAGE, e))?;
        files.insert(rel.to_string_lossy().replace('\\', "/"), sha_hex(&bytes));
    }
    let seed_streams = cfg
        .seeds
        .iter()
        .map(|&s| {
            let streams = ["agent", "harvest", "stgcn-init", "stgcn-shuffle", "train-sim", "eval-sim"]
                .iter()
                .map(|t| (t.to_string(), format!("{:#018x}", derive_seed(s, t, 0))))
                .collect();
            (s.to_string(), streams)
        })
        .collect();
    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha_hex(config_text.as_bytes()),
        scenario: if cfg.roadnet.is_some() { "custom".into() } else { cfg.scenario.to_string() },
        roadnet_sha256: sha_hex(p.roadnet_text.as_bytes()),
        flows_sha256: sha_hex(p.flows_text.as_bytes()),
        graph_fingerprint: format!("{:#018x}", p.world.graph.fingerprint()),
        total_s: cfg.episode.total_s,
        modes: cfg.modes.iter().map(|m| m.to_string()).collect(),
        seeds: cfg.seeds.clone(),
        seed_streams,
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| ExperimentError::stage(STAGE, e))?;
    write_file(&p.out("manifest.json"), json.as_bytes(), STAGE)?;
    Ok(manifest)
}

/// Full pipeline: harvest and forecaster training (when gplight is requested), control training,
/// evaluation and manifest.
pub fn run(cfg: &ExperimentConfig) -> Result<Manifest> {
    let p = prepare(cfg)?;
    if p.needs_predictor() {
        stage_train_predictor(&p)?;
    }
    if !p.learned_modes().is_empty() {
        stage_train_control(&p)?;
    }
    stage_evaluate(&p)?;
    write_manifest(&p)
}

pub fn read_summary(run_dir: &Path) -> Result<Vec<SummaryRow>> {
    read_csv(&run_dir.join("summary.csv"))
}

/// Cumulative passed-vehicle series of evaluation episode 0, indexed by second.
pub fn read_cumulative(run_dir: &Path, mode: Mode, seed: u64) -> Result<Vec<usize>> {
    let rows: Vec<CumulativeRow> = read_csv(&run_dir.join(format!("series/cumulative_{mode}_s{seed}.csv")))?;
    Ok(rows.into_iter().filter(|r| r.episode == 0).map(|r| r.passed).collect())
}

/// `(minute, real, predicted)` of evaluation episode 0.
pub fn read_volume(run_dir: &Path, mode: Mode, seed: u64) -> Result<Vec<(usize, f64, Option<f64>)>> {
    let rows: Vec<VolumeRow> = read_csv(&run_dir.join(format!("series/volume_{mode}_s{seed}.csv")))?;
    Ok(rows.into_iter().filter(|r| r.episode == 0).map(|r| (r.minute, r.real, r.predicted)).collect())
}

/// Action log rows for `stage` (`train` or `eval`).
pub fn read_action_log(run_dir: &Path, stage: &str, mode: Mode, seed: u64) -> Result<Vec<ActionLogRow>> {
    read_csv(&run_dir.join(format!("actions/{stage}_{mode}_s{seed}.csv")))
}
