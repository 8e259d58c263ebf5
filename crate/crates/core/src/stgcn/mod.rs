//! Spatio-temporal graph convolutional forecaster: Chebyshev graph convolutions interleaved with
//! gated temporal convolutions, trained by minibatch gradient descent on simulator occupancy logs.

mod layers;
mod model;
mod train;

use std::path::Path;

use rand::SeedableRng;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::netgraph::Laplacian;
use crate::params::{ParamError, ParamFile};

pub use layers::{cheb_conv, temporal_gated_conv, ChebFilter, TemporalConvLayer};
pub use model::{StConvBlock, StgcnModel, StgcnShape};
pub use train::{train, TrainConfig, TrainingCurve};

const CHECKPOINT_KIND: &str = "stgcn";
const DATASET_KIND: &str = "stgcn-dataset";

#[derive(Debug, Error)]
pub enum StgcnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("checkpoint graph hash {found:#x} does not match graph {expected:#x}")]
    GraphMismatch { expected: u64, found: u64 },
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Observed features, `N x D x T`, stored `[node][feature][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    pub n: usize,
    pub d: usize,
    pub t: usize,
    pub data: Vec<f64>,
}

impl HistoryWindow {
    pub fn zeros(n: usize, d: usize, t: usize) -> Self {
        Self { n, d, t, data: vec![0.0; n * d * t] }
    }

    /// Builds a window from consecutive per-minute `N x D` frames (oldest first).
    pub fn from_frames(frames: &[Matrix]) -> Result<Self, StgcnError> {
        let (n, d) = frames_shape(frames)?;
        let t = frames.len();
        let mut w = Self::zeros(n, d, t);
        for (ti, f) in frames.iter().enumerate() {
            for v in 0..n {
                for di in 0..d {
                    *w.get_mut(v, di, ti) = f[(v, di)];
                }
            }
        }
        Ok(w)
    }

    pub fn get(&self, v: usize, d: usize, t: usize) -> f64 {
        self.data[(v * self.d + d) * self.t + t]
    }

    pub fn get_mut(&mut self, v: usize, d: usize, t: usize) -> &mut f64 {
        &mut self.data[(v * self.d + d) * self.t + t]
    }
}

/// Forecast features, `N x D x H`, stored `[node][feature][step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionWindow {
    pub n: usize,
    pub d: usize,
    pub h: usize,
    pub data: Vec<f64>,
}

impl PredictionWindow {
    pub fn zeros(n: usize, d: usize, h: usize) -> Self {
        Self { n, d, h, data: vec![0.0; n * d * h] }
    }

    pub fn from_frames(frames: &[Matrix]) -> Result<Self, StgcnError> {
        let w = HistoryWindow::from_frames(frames)?;
        Ok(Self { n: w.n, d: w.d, h: w.t, data: w.data })
    }

    pub fn get(&self, v: usize, d: usize, step: usize) -> f64 {
        self.data[(v * self.d + d) * self.h + step]
    }

    /// Largest value over the horizon for one node feature.
    pub fn horizon_max(&self, v: usize, d: usize) -> f64 {
        (0..self.h).map(|s| self.get(v, d, s)).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn frames_shape(frames: &[Matrix]) -> Result<(usize, usize), StgcnError> {
    let first = frames.first().ok_or_else(|| StgcnError::Shape("no frames".into()))?;
    let (n, d) = (first.rows(), first.cols());
    if frames.iter().any(|f| (f.rows(), f.cols()) != (n, d)) {
        return Err(StgcnError::Shape("frames differ in shape".into()));
    }
    Ok((n, d))
}

/// Supervised (history, future) pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<(HistoryWindow, PredictionWindow)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Appends every sliding `(T, H)` window of a per-minute frame series.
    pub fn extend_from_series(&mut self, frames: &[Matrix], t: usize, h: usize) -> Result<usize, StgcnError> {
        if t == 0 || h == 0 {
            return Err(StgcnError::Shape("window lengths must be positive".into()));
        }
        if frames.len() < t + h {
            return Ok(0);
        }
        frames_shape(frames)?;
        if let Some((x, _)) = self.samples.first() {
            if (x.n, x.d, x.t) != (frames[0].rows(), frames[0].cols(), t) {
                return Err(StgcnError::Shape("series does not match existing samples".into()));
            }
        }
        let count = frames.len() - t - h + 1;
        for i in 0..count {
            let x = HistoryWindow::from_frames(&frames[i..i + t])?;
            let y = PredictionWindow::from_frames(&frames[i + t..i + t + h])?;
            self.samples.push((x, y));
        }
        Ok(count)
    }

    /// Largest entry across all inputs and targets.
    pub fn max_value(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|(x, y)| x.data.iter().chain(&y.data))
            .fold(0.0, |a, &b| a.max(b))
    }

    pub fn to_param_file(&self, label: &str) -> Result<ParamFile, StgcnError> {
        let (x0, y0) = self.samples.first().ok_or(StgcnError::EmptyDataset)?;
        let mut f = ParamFile::new(DATASET_KIND, label);
        for (k, v) in [("n", x0.n), ("d", x0.d), ("t", x0.t), ("h", y0.h), ("count", self.len())] {
            f.header.push((k.into(), v as u64));
        }
        f.arrays.push(("x".into(), self.samples.iter().flat_map(|(x, _)| x.data.iter().copied()).collect()));
        f.arrays.push(("y".into(), self.samples.iter().flat_map(|(_, y)| y.data.iter().copied()).collect()));
        Ok(f)
    }

    pub fn from_param_file(f: &ParamFile) -> Result<Self, StgcnError> {
        f.expect_kind(DATASET_KIND)?;
        let get = |k: &str| f.header_value(k).map(|v| v as usize);
        let (n, d, t, h, count) = (get("n")?, get("d")?, get("t")?, get("h")?, get("count")?);
        let (xs, ys) = (f.array("x")?, f.array("y")?);
        let (xl, yl) = (n * d * t, n * d * h);
        if xs.len() != xl * count || ys.len() != yl * count {
            return Err(StgcnError::Shape(format!("dataset arrays do not match header {n}x{d}x{t}/{h} x{count}")));
        }
        let samples = (0..count)
            .map(|i| {
                (
                    HistoryWindow { n, d, t, data: xs[i * xl..(i + 1) * xl].to_vec() },
                    PredictionWindow { n, d, h, data: ys[i * yl..(i + 1) * yl].to_vec() },
                )
            })
            .collect();
        Ok(Self { samples })
    }

    pub fn save(&self, path: &Path, label: &str) -> Result<(), StgcnError> {
        Ok(self.to_param_file(label)?.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, StgcnError> {
        Self::from_param_file(&ParamFile::load(path)?)
    }
}

/// A trained model plus the input scaling it was trained with; the unit used by the control loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub model: StgcnModel,
    /// Inputs and targets are divided by this before reaching the model.
    pub scale: f64,
}

impl Predictor {
    pub fn new(model: StgcnModel, scale: f64) -> Result<Self, StgcnError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(StgcnError::Invalid(format!("scale {scale}")));
        }
        Ok(Self { model, scale })
    }

    pub fn shape(&self) -> &StgcnShape {
        &self.model.shape
    }

    /// Dataset with inputs and targets divided by the scale.
    pub fn normalize(&self, data: &Dataset) -> Dataset {
        let s = 1.0 / self.scale;
        let samples = data
            .samples
            .iter()
            .map(|(x, y)| {
                let mut x = x.clone();
                let mut y = y.clone();
                x.data.iter_mut().for_each(|v| *v *= s);
                y.data.iter_mut().for_each(|v| *v *= s);
                (x, y)
            })
            .collect();
        Dataset { samples }
    }

    /// Trains on `data` expressed in raw units.
    pub fn fit(&mut self, data: &Dataset, cfg: &TrainConfig) -> Result<TrainingCurve, StgcnError> {
        let scaled = self.normalize(data);
        train(&mut self.model, &scaled, cfg)
    }

    /// Non-negative forecast in raw units.
    pub fn predict(&self, x: &HistoryWindow) -> Result<PredictionWindow, StgcnError> {
        let mut xs = x.clone();
        xs.data.iter_mut().for_each(|v| *v /= self.scale);
        let mut y = self.model.predict(&xs)?;
        y.data.iter_mut().for_each(|v| *v *= self.scale);
        Ok(y)
    }

    pub fn to_param_file(&self, label: &str) -> ParamFile {
        let s = &self.model.shape;
        let mut f = ParamFile::new(CHECKPOINT_KIND, label);
        for (k, v) in [
            ("n", s.n),
            ("d", s.d),
            ("t", s.t),
            ("h", s.h),
            ("k", s.k),
            ("kt", s.kt),
            ("c0", s.channels[0]),
            ("c1", s.channels[1]),
            ("c2", s.channels[2]),
        ] {
            f.header.push((k.into(), v as u64));
        }
        f.header.push(("graph_hash".into(), self.model.graph_hash()));
        for (name, p) in self.model.params() {
            f.arrays.push((name, p.to_vec()));
        }
        f.arrays.push(("norm.scale".into(), vec![self.scale]));
        f
    }

    /// Restores a checkpoint against a graph; rejects checkpoints trained on a different graph.
    pub fn from_param_file(f: &ParamFile, lap: &Laplacian, graph_hash: u64) -> Result<Self, StgcnError> {
        f.expect_kind(CHECKPOINT_KIND)?;
        let found = f.header_value("graph_hash")?;
        if found != graph_hash {
            return Err(StgcnError::GraphMismatch { expected: graph_hash, found });
        }
        let get = |k: &str| f.header_value(k).map(|v| v as usize);
        let shape = StgcnShape {
            n: get("n")?,
            d: get("d")?,
            t: get("t")?,
            h: get("h")?,
            k: get("k")?,
            kt: get("kt")?,
            channels: [get("c0")?, get("c1")?, get("c2")?],
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = StgcnModel::new(shape, lap, graph_hash, &mut rng)?;
        let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        for (name, dst) in names.iter().zip(model.params_mut()) {
            let src = f.array(name)?;
            if src.len() != dst.len() {
                return Err(StgcnError::Shape(format!("array `{name}` has {} values, expected {}", src.len(), dst.len())));
            }
            dst.copy_from_slice(src);
        }
        let scale = *f.array("norm.scale")?.first().ok_or_else(|| StgcnError::Invalid("empty norm.scale".into()))?;
        Self::new(model, scale)
    }

    pub fn save(&self, path: &Path, label: &str) -> Result<(), StgcnError> {
        Ok(self.to_param_file(label).save(path)?)
    }

    pub fn load(path: &Path, lap: &Laplacian, graph_hash: u64) -> Result<Self, StgcnError> {
        Self::from_param_file(&ParamFile::load(path)?, lap, graph_hash)
    }
}
