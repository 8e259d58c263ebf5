use super::{GraphError, Result, RoadGraph};
use crate::linalg::Matrix;

/// Conventional largest eigenvalue when the graph has no edges.
const EMPTY_LAMBDA_MAX: f64 = 2.0;
const POWER_REL_TOL: f64 = 1e-6;
const POWER_MAX_ITERS: usize = 1000;

/// Normalized Laplacian together with its largest eigenvalue and the rescaled operator
/// `2L/lambda_max - I` whose spectrum lies in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    pub l: Matrix,
    pub lambda_max: f64,
    pub scaled: Matrix,
}

impl Laplacian {
    pub fn len(&self) -> usize {
        self.l.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Builds the Laplacian from a symmetric nonnegative weight matrix.
    pub fn from_weights(w: &Matrix) -> Result<Laplacian> {
        let n = w.rows();
        for x in 0..n {
            for y in 0..n {
                if w[(x, y)] < 0.0 {
                    return Err(GraphError::NegativeWeight { x, y, w: w[(x, y)] });
                }
            }
        }
        let inv_sqrt_deg: Vec<f64> = (0..n)
            .map(|i| {
                let d: f64 = w.row(i).iter().sum();
                if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }
            })
            .collect();
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let off = inv_sqrt_deg[i] * w[(i, j)] * inv_sqrt_deg[j];
                let diag = if i == j && inv_sqrt_deg[i] > 0.0 { 1.0 } else { 0.0 };
                l[(i, j)] = diag - off;
            }
        }
        // Exact symmetry regardless of rounding in the products above.
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (l[(i, j)] + l[(j, i)]);
                l[(i, j)] = v;
                l[(j, i)] = v;
            }
        }
        let lambda = power_iteration_lambda_max(&l);
        let lambda_max = if lambda > 1e-12 { lambda } else { EMPTY_LAMBDA_MAX };
        let mut lap = Laplacian { l, lambda_max, scaled: Matrix::zeros(n, n) };
        lap.scaled = scale_laplacian(&lap)?;
        Ok(lap)
    }
}

pub fn normalized_laplacian(graph: &RoadGraph) -> Result<Laplacian> {
    Laplacian::from_weights(graph.weights())
}

/// `2L/lambda_max - I`.
pub fn scale_laplacian(lap: &Laplacian) -> Result<Matrix> {
    if !(lap.lambda_max > 0.0) {
        return Err(GraphError::NonPositiveLambda(lap.lambda_max));
    }
    let n = lap.l.rows();
    Ok(lap.l.scale(2.0 / lap.lambda_max).sub(&Matrix::identity(n)))
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power iteration.
///
/// Stops once the eigen-residual `|Mv - rho v|` falls to 1e-6 of the Rayleigh quotient `rho`
/// (or after 1000 iterations). For a symmetric matrix the Rayleigh quotient's error is of the
/// order of the squared residual, so the estimate is far tighter than the stopping tolerance.
pub fn power_iteration_lambda_max(m: &Matrix) -> f64 {
    let n = m.rows();
    if n == 0 {
        return 0.0;
    }
    // Deterministic start vector with no special structure.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract()).collect();
    normalize(&mut v);
    let mut rho = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mut w = m.matvec(&v);
        rho = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let residual = w.iter().zip(&v).map(|(a, b)| (a - rho * b).powi(2)).sum::<f64>().sqrt();
        if normalize(&mut w) == 0.0 {
            return 0.0;
        }
        v = w;
        if residual <= POWER_REL_TOL * rho.abs() {
            break;
        }
    }
    // Rayleigh quotient of the final vector.
    let w = m.matvec(&v);
    w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().max(rho)
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_closed_form() {
        let w = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let lap = Laplacian::from_weights(&w).unwrap();
        assert_eq!(lap.l, Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]));
        assert!((lap.lambda_max - 2.0).abs() < 1e-9);
        let expected = Matrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]);
        assert!(lap.scaled.max_abs_diff(&expected) < 1e-9);
    }

    #[test]
    fn single_node_convention() {
        let lap = Laplacian::from_weights(&Matrix::zeros(1, 1)).unwrap();
        assert_eq!(lap.l, Matrix::zeros(1, 1));
        assert_eq!(lap.lambda_max, 2.0);
        assert_eq!(lap.scaled, Matrix::from_rows(&[vec![-1.0]]));
    }

    #[test]
    fn triangle_entries() {
        let w = Matrix::from_rows(&[vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]);
        let lap = Laplacian::from_weights(&w).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { -0.5 };
                assert!((lap.l[(i, j)] - want).abs() < 1e-15);
            }
        }
        // spectrum {0, 1.5, 1.5}
        assert!((lap.lambda_max - 1.5).abs() < 1e-6);
    }

    #[test]
    fn negative_weight_rejected() {
        let w = Matrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]);
        assert!(matches!(Laplacian::from_weights(&w), Err(GraphError::NegativeWeight { .. })));
    }

    #[test]
    fn nonpositive_lambda_rejected() {
        let lap = Laplacian { l: Matrix::zeros(1, 1), lambda_max: 0.0, scaled: Matrix::zeros(1, 1) };
        assert!(matches!(scale_laplacian(&lap), Err(GraphError::NonPositiveLambda(_))));
    }

    #[test]
    fn isolated_node_rows_are_zero() {
        let w = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]);
        let lap = Laplacian::from_weights(&w).unwrap();
        assert!(lap.l.row(2).iter().all(|&x| x == 0.0));
    }
}
