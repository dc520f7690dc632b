//! Independent dense-eigensolver reference for constant-coefficient models.
//!
//! For space-time constant coefficients the principal periodic eigenvalue
//! has a closed algebraic form: the shifted generator acts on constant
//! fields as the matrix `𝐋 + diag(z·A_i z − q_i·z)`, whose dominant
//! (Perron) root gives `λ₁,z = −perron(𝐋 + diag(z·A_i z − q_i·z))`.
//! This module computes that root by brute force with a dense QR
//! eigensolver, with no code shared with the power-iteration path, so the
//! two can cross-validate each other.

use nalgebra::DMatrix;

/// Largest real part among the eigenvalues of a dense real matrix. For an
/// essentially nonnegative (Metzler) matrix this is the Perron root, which
/// is real with a positive eigenvector when the matrix is irreducible.
pub fn perron_root(mat: &[Vec<f64>]) -> f64 {
    let n = mat.len();
    let m = DMatrix::from_fn(n, n, |i, j| mat[i][j]);
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `λ₁,z` for a constant-coefficient model given the matrices `𝐋`, the
/// diffusion matrices `a[i]` (n x n each), the advection vectors `q[i]`,
/// and the shift `z`.
pub fn lambda_constant(lmat: &[Vec<f64>], a: &[Vec<Vec<f64>>], q: &[Vec<f64>], z: &[f64]) -> f64 {
    let nc = lmat.len();
    let n = z.len();
    let mut m: Vec<Vec<f64>> = lmat.to_vec();
    for i in 0..nc {
        let mut zaz = 0.0;
        let mut qz = 0.0;
        for al in 0..n {
            for be in 0..n {
                zaz += z[al] * a[i][al][be] * z[be];
            }
            qz += q[i][al] * z[al];
        }
        m[i][i] += zaz - qz;
    }
    -perron_root(&m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_dispersion_formula() {
        // d = q = 1, r = 1/8: λ₁,z = z(1−z) − 1/8.
        let lmat = vec![vec![0.125]];
        let a = vec![vec![vec![1.0]]];
        let q = vec![vec![1.0]];
        for z in [-0.5, 0.0, 0.25, 0.5, 1.0, 1.5] {
            let got = lambda_constant(&lmat, &a, &q, &[z]);
            let want = z * (1.0 - z) - 0.125;
            assert!((got - want).abs() < 1e-12, "z = {z}: {got} vs {want}");
        }
    }

    #[test]
    fn perron_root_of_metzler_is_dominant() {
        // [[0, 2], [3, 0]] has eigenvalues ±√6.
        let m = vec![vec![0.0, 2.0], vec![3.0, 0.0]];
        assert!((perron_root(&m) - 6.0f64.sqrt()).abs() < 1e-12);
    }
}
