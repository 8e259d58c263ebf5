//! Chebyshev spectral graph convolution and gated temporal convolution.

use rand::Rng;

use super::StgcnError;
use crate::linalg::Matrix;
use crate::netgraph::Laplacian;
use crate::nn::sigmoid;

/// Graph filter `sum_k T_k(L^) x theta_k + b`; `theta` is `K x c_in x c_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebFilter {
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub theta: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ChebFilter {
    pub fn zeros(k: usize, c_in: usize, c_out: usize) -> Self {
        assert!(k >= 1, "Chebyshev order must be at least 1");
        Self { k, c_in, c_out, theta: vec![0.0; k * c_in * c_out], bias: vec![0.0; c_out] }
    }

    pub fn random<R: Rng>(k: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let mut f = Self::zeros(k, c_in, c_out);
        let limit = (6.0 / ((c_in + c_out) * k) as f64).sqrt();
        f.theta.iter_mut().for_each(|t| *t = rng.gen_range(-limit..limit));
        f
    }

    fn theta_at(&self, k: usize, i: usize, o: usize) -> f64 {
        self.theta[(k * self.c_in + i) * self.c_out + o]
    }
}

/// Chebyshev terms `Z_k = T_k(L^) x` via the three-term recurrence.
fn cheb_terms(x: &Matrix, lhat: &Matrix, k: usize) -> Vec<Matrix> {
    let mut terms = Vec::with_capacity(k);
    terms.push(x.clone());
    if k > 1 {
        terms.push(lhat.matmul(x));
    }
    for j in 2..k {
        let next = lhat.matmul(&terms[j - 1]).scale(2.0).sub(&terms[j - 2]);
        terms.push(next);
    }
    terms
}

fn check_cheb_shapes(x: &Matrix, lhat: &Matrix, filt: &ChebFilter) -> Result<(), StgcnError> {
    if lhat.rows() != x.rows() || lhat.cols() != x.rows() || x.cols() != filt.c_in {
        return Err(StgcnError::Shape(format!(
            "cheb_conv: x is {}x{}, L^ is {}x{}, filter expects {} input channels",
            x.rows(),
            x.cols(),
            lhat.rows(),
            lhat.cols(),
            filt.c_in
        )));
    }
    Ok(())
}

/// Chebyshev graph convolution of an `N x c_in` signal, never materialising `T_k(L^)`.
pub fn cheb_conv(x: &Matrix, lap: &Laplacian, filt: &ChebFilter) -> Result<Matrix, StgcnError> {
    cheb_conv_scaled(x, &lap.scaled, filt)
}

pub(crate) fn cheb_conv_scaled(x: &Matrix, lhat: &Matrix, filt: &ChebFilter) -> Result<Matrix, StgcnError> {
    check_cheb_shapes(x, lhat, filt)?;
    let terms = cheb_terms(x, lhat, filt.k);
    Ok(cheb_combine(&terms, filt))
}

fn cheb_combine(terms: &[Matrix], filt: &ChebFilter) -> Matrix {
    let n = terms[0].rows();
    let mut y = Matrix::zeros(n, filt.c_out);
    for v in 0..n {
        for o in 0..filt.c_out {
            let mut acc = filt.bias[o];
            for (k, z) in terms.iter().enumerate() {
                for i in 0..filt.c_in {
                    acc += z[(v, i)] * filt.theta_at(k, i, o);
                }
            }
            y[(v, o)] = acc;
        }
    }
    y
}

/// Backward pass of [`cheb_conv_scaled`]: accumulates into `grad`, returns `dL/dx`.
pub(crate) fn cheb_backward(x: &Matrix, lhat: &Matrix, filt: &ChebFilter, dy: &Matrix, grad: &mut ChebFilter) -> Matrix {
    let n = x.rows();
    let terms = cheb_terms(x, lhat, filt.k);
    let mut dz: Vec<Matrix> = Vec::with_capacity(filt.k);
    for (k, z) in terms.iter().enumerate() {
        let mut d = Matrix::zeros(n, filt.c_in);
        for v in 0..n {
            for o in 0..filt.c_out {
                let g = dy[(v, o)];
                if g == 0.0 {
                    continue;
                }
                for i in 0..filt.c_in {
                    grad.theta[(k * filt.c_in + i) * filt.c_out + o] += z[(v, i)] * g;
                    d[(v, i)] += filt.theta_at(k, i, o) * g;
                }
            }
        }
        dz.push(d);
    }
    for v in 0..n {
        for o in 0..filt.c_out {
            grad.bias[o] += dy[(v, o)];
        }
    }
    // Reverse the recurrence; L^ is symmetric so its transpose is itself.
    for k in (2..filt.k).rev() {
        let back = lhat.matmul(&dz[k]).scale(2.0);
        let sub = dz[k].clone();
        dz[k - 1] = dz[k - 1].add(&back);
        dz[k - 2] = dz[k - 2].sub(&sub);
    }
    if filt.k > 1 {
        let back = lhat.matmul(&dz[1]);
        dz[0] = dz[0].add(&back);
    }
    dz.swap_remove(0)
}

/// Width-`kt` causal convolution producing `2 c_out` channels, gated as `Y1 * sigmoid(Y2)`.
/// `gamma` is `kt x c_in x 2c_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConvLayer {
    pub kt: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub gamma: Vec<f64>,
    pub bias: Vec<f64>,
}

impl TemporalConvLayer {
    pub fn zeros(kt: usize, c_in: usize, c_out: usize) -> Self {
        assert!(kt >= 1);
        Self { kt, c_in, c_out, gamma: vec![0.0; kt * c_in * 2 * c_out], bias: vec![0.0; 2 * c_out] }
    }

    pub fn random<R: Rng>(kt: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let mut l = Self::zeros(kt, c_in, c_out);
        let limit = (6.0 / ((c_in * kt) + 2 * c_out) as f64).sqrt();
        l.gamma.iter_mut().for_each(|g| *g = rng.gen_range(-limit..limit));
        l
    }

    fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.c_in + i) * 2 * self.c_out + j
    }

    pub fn out_len(&self, m: usize) -> usize {
        m + 1 - self.kt
    }

    /// Pre-activations `[Y1 | Y2]`, `(m - kt + 1) x 2c_out`.
    fn pre(&self, y: &Matrix) -> Matrix {
        let m_out = self.out_len(y.rows());
        let width = 2 * self.c_out;
        let mut pre = Matrix::zeros(m_out, width);
        for tau in 0..m_out {
            for j in 0..width {
                pre[(tau, j)] = self.bias[j];
            }
            for k in 0..self.kt {
                let row = y.row(tau + k);
                for (i, &x) in row.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let base = self.idx(k, i, 0);
                    for j in 0..width {
                        pre[(tau, j)] += x * self.gamma[base + j];
                    }
                }
            }
        }
        pre
    }
}

fn check_temporal(y: &Matrix, layer: &TemporalConvLayer) -> Result<(), StgcnError> {
    if y.rows() < layer.kt {
        return Err(StgcnError::Shape(format!("temporal conv: sequence length {} < kernel width {}", y.rows(), layer.kt)));
    }
    if y.cols() != layer.c_in {
        return Err(StgcnError::Shape(format!("temporal conv: {} channels, layer expects {}", y.cols(), layer.c_in)));
    }
    Ok(())
}

/// Gated temporal convolution of an `m x c_in` sequence, `(m - kt + 1) x c_out` output.
pub fn temporal_gated_conv(y: &Matrix, layer: &TemporalConvLayer) -> Result<Matrix, StgcnError> {
    check_temporal(y, layer)?;
    let pre = layer.pre(y);
    let c = layer.c_out;
    let mut out = Matrix::zeros(pre.rows(), c);
    for tau in 0..pre.rows() {
        for o in 0..c {
            out[(tau, o)] = pre[(tau, o)] * sigmoid(pre[(tau, c + o)]);
        }
    }
    Ok(out)
}

/// Backward of [`temporal_gated_conv`]; accumulates into `grad`, returns `dL/dy`.
pub(crate) fn temporal_backward(y: &Matrix, layer: &TemporalConvLayer, dout: &Matrix, grad: &mut TemporalConvLayer) -> Matrix {
    let pre = layer.pre(y);
    let c = layer.c_out;
    let width = 2 * c;
    let mut dpre = Matrix::zeros(pre.rows(), width);
    for tau in 0..pre.rows() {
        for o in 0..c {
            let a = pre[(tau, o)];
            let s = sigmoid(pre[(tau, c + o)]);
            let g = dout[(tau, o)];
            dpre[(tau, o)] = g * s;
            dpre[(tau, c + o)] = g * a * s * (1.0 - s);
        }
    }
    let mut dy = Matrix::zeros(y.rows(), layer.c_in);
    for tau in 0..pre.rows() {
        let drow = dpre.row(tau);
        for j in 0..width {
            grad.bias[j] += drow[j];
        }
        for k in 0..layer.kt {
            for i in 0..layer.c_in {
                let x = y[(tau + k, i)];
                let base = layer.idx(k, i, 0);
                let mut acc = 0.0;
                for j in 0..width {
                    grad.gamma[base + j] += x * drow[j];
                    acc += layer.gamma[base + j] * drow[j];
                }
                dy[(tau + k, i)] += acc;
            }
        }
    }
    dy
}
