mod common;

use gplight::linalg::Matrix;
use gplight::netgraph::Laplacian;
use gplight::stgcn::{cheb_conv, ChebFilter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn chebyshev_recurrence_matches_dense_spectral_filter() {
    let c = common::spectral_check(11, 40);
    assert!(c.worst_conv < 1e-8, "worst |recurrence - dense| = {:e}", c.worst_conv);
    assert!(c.worst_lambda < 1e-6, "worst lambda_max relative error = {:e}", c.worst_lambda);
}

#[test]
fn cheb_conv_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let n = rng.gen_range(2..=8);
        let w = common::random_connected_weights(n, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let mut wp = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                wp[(i, j)] = w[(perm[i], perm[j])];
            }
        }
        let filt = ChebFilter::random(4, 2, 3, &mut rng);
        let x = Matrix::from_vec(n, 2, (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let xp = Matrix::from_vec(n, 2, (0..n).flat_map(|i| x.row(perm[i]).to_vec()).collect());
        let y = cheb_conv(&x, &Laplacian::from_weights(&w).unwrap(), &filt).unwrap();
        let yp = cheb_conv(&xp, &Laplacian::from_weights(&wp).unwrap(), &filt).unwrap();
        for i in 0..n {
            for o in 0..3 {
                assert!((yp[(i, o)] - y[(perm[i], o)]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn scaled_spectrum_lies_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in 1..=8 {
        let lap = Laplacian::from_weights(&common::random_connected_weights(n, &mut rng)).unwrap();
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| lap.scaled[(i, j)]);
        for e in nalgebra::SymmetricEigen::new(m).eigenvalues.iter() {
            assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(e), "eigenvalue {e}");
        }
    }
}
