//! Dense complex linear algebra shared by the physics modules.
//!
//! Basis convention: site `j` of an `n`-qubit register maps to bit `n - 1 - j`
//! of the basis index (site 0 is the most significant bit), and a clear bit is
//! spin up, the `+1` eigenstate of `σ_z`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn site_mask(n_qubits: usize, site: usize) -> usize {
    1 << (n_qubits - 1 - site)
}

/// `true` when `site` is spin down in basis state `index`.
#[inline]
pub fn is_down(index: usize, mask: usize) -> bool {
    index & mask != 0
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector of `values[k]`.
    pub vectors: CMatrix,
}

pub fn eigh(matrix: &CMatrix) -> Result<HermitianEigen> {
    let dim = matrix.nrows();
    let eig = SymmetricEigen::try_new(matrix.clone(), f64::EPSILON, 10_000 * dim.max(1))
        .ok_or(Error::EigensolverFailure { dim })?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(HermitianEigen { values, vectors })
}

/// Ascending eigenvalues of a real symmetric matrix.
pub fn symmetric_eigenvalues(matrix: DMatrix<f64>) -> Result<Vec<f64>> {
    let dim = matrix.nrows();
    let eig =
        SymmetricEigen::try_new(matrix, f64::EPSILON, 10_000 * dim.max(1)).ok_or(Error::EigensolverFailure { dim })?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Largest elementwise deviation `|A - A†|`.
pub fn hermiticity_deviation(matrix: &CMatrix) -> f64 {
    let n = matrix.nrows();
    let mut worst = 0.0_f64;
    for r in 0..n {
        for c in r..n {
            let d = (matrix[(r, c)] - matrix[(c, r)].conj()).norm();
            worst = worst.max(d);
        }
    }
    worst
}

/// `⟨a|b⟩`.
#[inline]
pub fn inner(a: &CVector, b: &CVector) -> Complex64 {
    a.dotc(b)
}

/// `⟨ψ|A|ψ⟩` for Hermitian `A`, real part.
pub fn expectation(matrix: &CMatrix, psi: &CVector) -> Complex64 {
    psi.dotc(&(matrix * psi))
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for r in 0..n {
        for c in 0..n {
            acc += a[(r, c)] * b[(c, r)];
        }
    }
    acc
}

pub fn outer(psi: &CVector) -> CMatrix {
    psi * psi.adjoint()
}

/// Smallest eigenvalue of a real symmetric operator given only through
/// matrix-vector products. Lanczos with full reorthogonalisation; the result
/// is a Ritz value and therefore an upper bound on the true minimum.
pub fn lanczos_min_eigenvalue(
    n: usize,
    steps: usize,
    start_seed: u64,
    matvec: impl Fn(&[f64], &mut [f64]),
) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyInput("operator"));
    }
    let steps = steps.min(n).max(1);
    // Deterministic pseudo-random start vector.
    let mut state = start_seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::with_capacity(steps);
    let mut w = vec![0.0; n];
    for k in 0..steps {
        matvec(&v, &mut w);
        let alpha: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        alphas.push(alpha);
        basis.push(v.clone());
        // Full reorthogonalisation against all previous Lanczos vectors.
        for _ in 0..2 {
            for q in &basis {
                let proj: f64 = w.iter().zip(q).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(q).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let beta = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if k + 1 == steps || beta < 1e-12 {
            break;
        }
        betas.push(beta);
        v.iter_mut().zip(&w).for_each(|(a, b)| *a = b / beta);
    }
    let m = alphas.len();
    let tri = DMatrix::from_fn(m, m, |r, c| {
        if r == c {
            alphas[r]
        } else if r + 1 == c {
            betas[r]
        } else if c + 1 == r {
            betas[c]
        } else {
            0.0
        }
    });
    Ok(symmetric_eigenvalues(tri)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn eigh_sorts_ascending() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![
            Complex64::new(3.0, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(2.0, 0.0),
        ]));
        let e = eigh(&m).unwrap();
        assert_eq!(e.values, vec![-1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(e.vectors[(1, 0)].norm(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn lanczos_matches_dense_minimum() {
        let n = 40;
        let a = DMatrix::from_fn(n, n, |r, c| 1.0 / (1.0 + (r as f64 - c as f64).abs()));
        let dense = symmetric_eigenvalues(a.clone()).unwrap()[0];
        let approx = lanczos_min_eigenvalue(n, n, 3, |x, y| {
            let v = &a * DVector::from_column_slice(x);
            y.copy_from_slice(v.as_slice());
        })
        .unwrap();
        assert_abs_diff_eq!(dense, approx, epsilon = 1e-9);
    }
}
