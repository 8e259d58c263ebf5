use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{cheb_backward, cheb_conv_scaled, temporal_backward, temporal_gated_conv, ChebFilter, TemporalConvLayer};
use super::{HistoryWindow, PredictionWindow, StgcnError};
use crate::linalg::Matrix;
use crate::netgraph::Laplacian;
use crate::nn::Dense;

/// Shape and size hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StgcnShape {
    pub n: usize,
    pub d: usize,
    pub t: usize,
    pub h: usize,
    pub k: usize,
    pub kt: usize,
    /// Temporal-out, spatial-out and second temporal-out widths of each block.
    pub channels: [usize; 3],
}

impl StgcnShape {
    /// Temporal length left after both blocks.
    pub fn residual_len(&self) -> Option<usize> {
        let shrink = 4 * (self.kt.checked_sub(1)?);
        self.t.checked_sub(shrink).filter(|&m| m >= 1)
    }

    pub fn validate(&self) -> Result<(), StgcnError> {
        if self.n == 0 || self.d == 0 || self.h == 0 || self.k == 0 || self.kt == 0 || self.channels.contains(&0) {
            return Err(StgcnError::Shape(format!("zero-sized dimension in {self:?}")));
        }
        if self.residual_len().is_none() {
            return Err(StgcnError::Shape(format!("history length {} too short for kernel width {}", self.t, self.kt)));
        }
        Ok(())
    }
}

/// Temporal gated conv, Chebyshev graph conv, temporal gated conv.
#[derive(Debug, Clone, PartialEq)]
pub struct StConvBlock {
    pub t1: TemporalConvLayer,
    pub cheb: ChebFilter,
    pub t2: TemporalConvLayer,
}

impl StConvBlock {
    fn random<R: Rng>(c_in: usize, ch: [usize; 3], k: usize, kt: usize, rng: &mut R) -> Self {
        Self {
            t1: TemporalConvLayer::random(kt, c_in, ch[0], rng),
            cheb: ChebFilter::random(k, ch[0], ch[1], rng),
            t2: TemporalConvLayer::random(kt, ch[1], ch[2], rng),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            t1: TemporalConvLayer::zeros(self.t1.kt, self.t1.c_in, self.t1.c_out),
            cheb: ChebFilter::zeros(self.cheb.k, self.cheb.c_in, self.cheb.c_out),
            t2: TemporalConvLayer::zeros(self.t2.kt, self.t2.c_in, self.t2.c_out),
        }
    }
}

/// Two ST-Conv blocks and a per-node fully-connected head producing all horizon steps at once.
#[derive(Debug, Clone, PartialEq)]
pub struct StgcnModel {
    pub shape: StgcnShape,
    pub blocks: Vec<StConvBlock>,
    pub fc: Dense,
    lhat: Matrix,
    graph_hash: u64,
}

/// Per-node sequences, `m x c` each.
type NodeSeqs = Vec<Matrix>;

struct BlockCache {
    input: NodeSeqs,
    after_t1: NodeSeqs,
    after_cheb: NodeSeqs,
}

struct ForwardCache {
    blocks: Vec<BlockCache>,
    flat: Vec<Vec<f64>>,
}

impl StgcnModel {
    pub fn new<R: Rng>(shape: StgcnShape, lap: &Laplacian, graph_hash: u64, rng: &mut R) -> Result<Self, StgcnError> {
        shape.validate()?;
        if lap.len() != shape.n {
            return Err(StgcnError::Shape(format!("Laplacian has {} nodes, model expects {}", lap.len(), shape.n)));
        }
        let ch = shape.channels;
        let blocks = vec![
            StConvBlock::random(shape.d, ch, shape.k, shape.kt, rng),
            StConvBlock::random(ch[2], ch, shape.k, shape.kt, rng),
        ];
        let m = shape.residual_len().expect("validated");
        let fc = Dense::glorot(m * ch[2], shape.d * shape.h, rng);
        Ok(Self { shape, blocks, fc, lhat: lap.scaled.clone(), graph_hash })
    }

    pub fn graph_hash(&self) -> u64 {
        self.graph_hash
    }

    pub fn scaled_laplacian(&self) -> &Matrix {
        &self.lhat
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            blocks: self.blocks.iter().map(StConvBlock::zeros_like).collect(),
            fc: Dense::zeros(self.fc.inp, self.fc.out),
            lhat: self.lhat.clone(),
            graph_hash: self.graph_hash,
        }
    }

    /// Named parameter arrays in a fixed order.
    pub fn params(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.t1.gamma"), &b.t1.gamma));
            out.push((format!("block{i}.t1.bias"), &b.t1.bias));
            out.push((format!("block{i}.cheb.theta"), &b.cheb.theta));
            out.push((format!("block{i}.cheb.bias"), &b.cheb.bias));
            out.push((format!("block{i}.t2.gamma"), &b.t2.gamma));
            out.push((format!("block{i}.t2.bias"), &b.t2.bias));
        }
        out.push(("fc.w".into(), &self.fc.w));
        out.push(("fc.b".into(), &self.fc.b));
        out
    }

    /// Mutable parameter arrays in the same order as [`StgcnModel::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.t1.gamma);
            out.push(&mut b.t1.bias);
            out.push(&mut b.cheb.theta);
            out.push(&mut b.cheb.bias);
            out.push(&mut b.t2.gamma);
            out.push(&mut b.t2.bias);
        }
        out.push(&mut self.fc.w);
        out.push(&mut self.fc.b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    fn check_input(&self, x: &HistoryWindow) -> Result<(), StgcnError> {
        let s = &self.shape;
        if (x.n, x.d, x.t) != (s.n, s.d, s.t) {
            return Err(StgcnError::Shape(format!(
                "history is {}x{}x{}, model expects {}x{}x{}",
                x.n, x.d, x.t, s.n, s.d, s.t
            )));
        }
        Ok(())
    }

    fn cheb_over_time(&self, seqs: &NodeSeqs, filt: &ChebFilter) -> NodeSeqs {
        let n = seqs.len();
        let m = seqs[0].rows();
        let mut out = vec![Matrix::zeros(m, filt.c_out); n];
        for tau in 0..m {
            let slice = Matrix::from_vec(n, filt.c_in, seqs.iter().flat_map(|s| s.row(tau).iter().copied()).collect());
            let y = cheb_conv_scaled(&slice, &self.lhat, filt).expect("shapes validated at construction");
            for (v, o) in out.iter_mut().enumerate() {
                for c in 0..filt.c_out {
                    o[(tau, c)] = y[(v, c)];
                }
            }
        }
        out
    }

    fn forward_cached(&self, x: &HistoryWindow) -> (Vec<f64>, ForwardCache) {
        let s = &self.shape;
        let mut seqs: NodeSeqs = (0..s.n)
            .map(|v| {
                let mut m = Matrix::zeros(s.t, s.d);
                for d in 0..s.d {
                    for t in 0..s.t {
                        m[(t, d)] = x.get(v, d, t);
                    }
                }
                m
            })
            .collect();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let after_t1: NodeSeqs = seqs.iter().map(|q| temporal_gated_conv(q, &b.t1).expect("validated")).collect();
            let after_cheb = self.cheb_over_time(&after_t1, &b.cheb);
            let out: NodeSeqs = after_cheb.iter().map(|q| temporal_gated_conv(q, &b.t2).expect("validated")).collect();
            blocks.push(BlockCache { input: std::mem::replace(&mut seqs, out), after_t1, after_cheb });
        }
        let flat: Vec<Vec<f64>> = seqs.iter().map(|q| q.as_slice().to_vec()).collect();
        let mut y = vec![0.0; s.n * s.d * s.h];
        for (v, f) in flat.iter().enumerate() {
            let o = self.fc.forward(f);
            y[v * s.d * s.h..(v + 1) * s.d * s.h].copy_from_slice(&o);
        }
        (y, ForwardCache { blocks, flat })
    }

    /// Raw (unclamped) forward pass; output layout `[node][feature][step]`.
    pub fn forward(&self, x: &HistoryWindow) -> Result<PredictionWindow, StgcnError> {
        self.check_input(x)?;
        let (y, _) = self.forward_cached(x);
        Ok(PredictionWindow { n: self.shape.n, d: self.shape.d, h: self.shape.h, data: y })
    }

    /// Forward pass with the output clamped at zero, for inference on counts.
    pub fn predict(&self, x: &HistoryWindow) -> Result<PredictionWindow, StgcnError> {
        let mut y = self.forward(x)?;
        y.data.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(y)
    }

    /// Backpropagates `dL/dy` for one sample into `grad`.
    fn backward_sample(&self, cache: &ForwardCache, dy: &[f64], grad: &mut StgcnModel) {
        let s = &self.shape;
        let m = s.residual_len().expect("validated");
        let c = s.channels[2];
        let mut dseqs: NodeSeqs = (0..s.n)
            .map(|v| {
                let d = self.fc.backward(&cache.flat[v], &dy[v * s.d * s.h..(v + 1) * s.d * s.h], &mut grad.fc);
                Matrix::from_vec(m, c, d)
            })
            .collect();
        for (bi, b) in self.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[bi];
            let g = &mut grad.blocks[bi];
            let d_cheb: NodeSeqs = bc
                .after_cheb
                .iter()
                .zip(&dseqs)
                .map(|(inp, d)| temporal_backward(inp, &b.t2, d, &mut g.t2))
                .collect();
            // Graph conv is applied per time step across nodes.
            let mt = bc.after_t1[0].rows();
            let mut d_t1 = vec![Matrix::zeros(mt, b.cheb.c_in); s.n];
            for tau in 0..mt {
                let slice = Matrix::from_vec(
                    s.n,
                    b.cheb.c_in,
                    bc.after_t1.iter().flat_map(|q| q.row(tau).iter().copied()).collect(),
                );
                let dslice = Matrix::from_vec(
                    s.n,
                    b.cheb.c_out,
                    d_cheb.iter().flat_map(|q| q.row(tau).iter().copied()).collect(),
                );
                let dx = cheb_backward(&slice, &self.lhat, &b.cheb, &dslice, &mut g.cheb);
                for (v, dv) in d_t1.iter_mut().enumerate() {
                    for ci in 0..b.cheb.c_in {
                        dv[(tau, ci)] = dx[(v, ci)];
                    }
                }
            }
            dseqs = bc
                .input
                .iter()
                .zip(&d_t1)
                .map(|(inp, d)| temporal_backward(inp, &b.t1, d, &mut g.t1))
                .collect();
        }
    }

    /// Mean squared error over every output entry of the batch, with its exact gradient.
    pub fn loss_and_grad(&self, batch: &[(&HistoryWindow, &PredictionWindow)]) -> Result<(f64, StgcnModel), StgcnError> {
        if batch.is_empty() {
            return Err(StgcnError::EmptyDataset);
        }
        for (x, y) in batch {
            self.check_input(x)?;
            self.check_target(y)?;
        }
        let count = (batch.len() * self.shape.n * self.shape.d * self.shape.h) as f64;
        let parts: Vec<(f64, StgcnModel)> = batch
            .par_iter()
            .map(|(x, y)| {
                let (pred, cache) = self.forward_cached(x);
                let mut sq = 0.0;
                let dy: Vec<f64> = pred
                    .iter()
                    .zip(&y.data)
                    .map(|(p, t)| {
                        let e = p - t;
                        sq += e * e;
                        2.0 * e / count
                    })
                    .collect();
                let mut g = self.zeros_like();
                self.backward_sample(&cache, &dy, &mut g);
                (sq, g)
            })
            .collect();
        let mut total = self.zeros_like();
        let mut loss = 0.0;
        for (sq, g) in &parts {
            loss += sq / count;
            for (acc, part) in total.params_mut().into_iter().zip(g.params()) {
                acc.iter_mut().zip(part.1).for_each(|(a, b)| *a += b);
            }
        }
        Ok((loss, total))
    }

    pub fn loss(&self, batch: &[(&HistoryWindow, &PredictionWindow)]) -> Result<f64, StgcnError> {
        if batch.is_empty() {
            return Err(StgcnError::EmptyDataset);
        }
        let count = (batch.len() * self.shape.n * self.shape.d * self.shape.h) as f64;
        let mut loss = 0.0;
        for (x, y) in batch {
            self.check_target(y)?;
            let p = self.forward(x)?;
            loss += p.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / count;
        }
        Ok(loss)
    }

    fn check_target(&self, y: &PredictionWindow) -> Result<(), StgcnError> {
        let s = &self.shape;
        if (y.n, y.d, y.h) != (s.n, s.d, s.h) {
            return Err(StgcnError::Shape(format!("target is {}x{}x{}, model expects {}x{}x{}", y.n, y.d, y.h, s.n, s.d, s.h)));
        }
        Ok(())
    }
}
