//! Factorizations used throughout the crate.
//!
//! Sparse direct solves are delegated to `faer` (LU with partial pivoting for
//! the indefinite saddle systems, Cholesky for SPD ones) as are dense LU solves;
//! dense eigenproblems and QR use `nalgebra`.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::sparse::{norm2, CsrMatrix};

fn to_faer(a: &CsrMatrix) -> Result<SparseColMat<usize, f64>> {
    let t: Vec<Triplet<usize, usize, f64>> = a
        .triplets()
        .map(|(i, j, v)| Triplet::new(i, j, v))
        .collect();
    SparseColMat::try_new_from_triplets(a.nrows(), a.ncols(), &t)
        .map_err(|e| Error::InvalidArgument(format!("sparse conversion: {e:?}")))
}

fn solve_columns<S: Solve<f64>>(solver: &S, n: usize, rhs: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut b = Mat::<f64>::from_fn(n, rhs.len(), |i, j| rhs[j][i]);
    solver.solve_in_place(b.as_mut());
    (0..rhs.len())
        .map(|j| (0..n).map(|i| b[(i, j)]).collect())
        .collect()
}

/// Sparse LU factorization with row pivoting.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    pub fn new(a: &CsrMatrix, context: &str) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidArgument(format!(
                "{context}: LU needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let lu = to_faer(a)?.sp_lu().map_err(|e| Error::SolverFailure {
            context: format!("{context}: {e:?}"),
            condition_estimate: f64::INFINITY,
        })?;
        Ok(Self { n: a.nrows(), lu })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len("sparse LU right-hand side", self.n, b.len())?;
        Ok(solve_columns(&self.lu, self.n, &[b]).pop().unwrap())
    }

    pub fn solve_many(&self, rhs: &[&[f64]]) -> Vec<Vec<f64>> {
        solve_columns(&self.lu, self.n, rhs)
    }
}

/// Sparse Cholesky factorization of an SPD matrix.
pub struct SparseCholesky {
    n: usize,
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
}

impl SparseCholesky {
    pub fn new(a: &CsrMatrix, context: &str) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidArgument(format!(
                "{context}: Cholesky needs a square matrix"
            )));
        }
        let llt = to_faer(a)?
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::SolverFailure {
                context: format!("{context}: {e:?}"),
                condition_estimate: f64::INFINITY,
            })?;
        Ok(Self { n: a.nrows(), llt })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len("sparse Cholesky right-hand side", self.n, b.len())?;
        Ok(solve_columns(&self.llt, self.n, &[b]).pop().unwrap())
    }

    pub fn solve_many(&self, rhs: &[&[f64]]) -> Vec<Vec<f64>> {
        solve_columns(&self.llt, self.n, rhs)
    }
}

/// Solves `A x = b` and verifies the relative residual, reporting a crude
/// conditioning estimate `‖A‖∞‖x‖/‖b‖` on failure.
pub fn checked_sparse_solve(a: &CsrMatrix, b: &[f64], context: &str, tol: f64) -> Result<Vec<f64>> {
    let lu = SparseLu::new(a, context)?;
    let x = lu.solve(b)?;
    let r: Vec<f64> = a
        .mul_vec(&x)
        .iter()
        .zip(b)
        .map(|(ax, bi)| ax - bi)
        .collect();
    let bn = norm2(b);
    let scale = bn.max(f64::MIN_POSITIVE);
    if !x.iter().all(|v| v.is_finite()) || (bn > 0.0 && norm2(&r) > tol * scale) {
        return Err(Error::SolverFailure {
            context: context.to_string(),
            condition_estimate: infinity_norm(a) * norm2(&x) / scale,
        });
    }
    Ok(x)
}

fn infinity_norm(a: &CsrMatrix) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Dense LU solve (faer, partial pivoting) with two refinement steps.
pub fn dense_solve(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    check_len("dense solve right-hand side", a.nrows(), b.len())?;
    let lu = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]).partial_piv_lu();
    let solve = |r: &DVector<f64>| {
        let x = lu.solve(Mat::from_fn(r.len(), 1, |i, _| r[i]));
        DVector::from_fn(r.len(), |i, _| x[(i, 0)])
    };
    let mut x = solve(b);
    // cheap next to the factorization
    for _ in 0..2 {
        x += solve(&(b - a * &x));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateReducedSystem(format!(
            "{context}: non-finite solution"
        )));
    }
    Ok(x)
}

/// Generalized symmetric eigenproblem `A v = λ B v` with SPD `B`.
/// Eigenvalues ascending; eigenvectors `B`-orthonormal (columns).
pub fn generalized_symmetric_eigen(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = b.clone().cholesky().ok_or_else(|| Error::SolverFailure {
        context: "generalized eigenproblem: right-hand matrix not SPD".into(),
        condition_estimate: f64::INFINITY,
    })?;
    let l = chol.l();
    // C = L⁻¹ A L⁻ᵀ
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::DegenerateBasis("singular Cholesky factor".into()))?;
    let c_t = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::DegenerateBasis("singular Cholesky factor".into()))?;
    let c = (&c_t + c_t.transpose()) * 0.5;
    let n = c.nrows();
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let y = DMatrix::from_fn(n, order.len(), |r, k| eig.eigenvectors[(r, order[k])]);
    let lt = l.transpose();
    let vecs = lt
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::DegenerateBasis("singular Cholesky factor".into()))?;
    Ok((values, vecs))
}

/// Smallest singular value of a dense matrix.
pub fn smallest_singular_value(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(f64::INFINITY, |m, &s| m.min(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn sparse_lu_and_cholesky_agree() {
        let a = laplace_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let x1 = SparseLu::new(&a, "t").unwrap().solve(&b).unwrap();
        let x2 = SparseCholesky::new(&a, "t").unwrap().solve(&b).unwrap();
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-10);
        }
        let r: f64 = a
            .mul_vec(&x1)
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q).powi(2))
            .sum();
        assert!(r.sqrt() < 1e-10);
    }

    #[test]
    fn singular_system_reports_failure() {
        let a =
            CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(checked_sparse_solve(&a, &[1.0, 0.0], "t", 1e-10).is_err());
    }

    #[test]
    fn generalized_eigen_is_b_orthonormal() {
        let a = laplace_1d(6).to_dense();
        let mut b = DMatrix::<f64>::identity(6, 6) * 2.0;
        b[(0, 1)] = 0.5;
        b[(1, 0)] = 0.5;
        let (vals, vecs) = generalized_symmetric_eigen(&a, &b).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let g = vecs.transpose() * &b * &vecs;
        assert!((g - DMatrix::identity(6, 6)).abs().max() < 1e-12);
        let r = &a * &vecs - &b * &vecs * DMatrix::from_diagonal(&DVector::from_vec(vals));
        assert!(r.abs().max() < 1e-12);
    }
}
