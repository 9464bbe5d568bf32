//! Shared dense linear-algebra helpers for the discriminant-analysis and
//! PLDA modules. Thin layer over nalgebra; everything here is
//! deterministic (no randomized algorithms, single-threaded).

use nalgebra::{DMatrix, DVector};

use crate::error::{numerical_err, Result};

/// Max absolute asymmetry |M - Mᵀ| allowed before a matrix is rejected.
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// PSD check with a trace-relative slack: all eigenvalues ≥ -tol_rel·trace.
pub fn is_psd(m: &DMatrix<f64>, tol_rel: f64) -> bool {
    let trace = m.trace().abs().max(1.0);
    sym_eigenvalues(m).first().is_none_or(|&lo| lo >= -tol_rel * trace)
}

/// Result of the generalized symmetric eigenproblem `S_b a = λ S_w a`.
pub struct GenEigen {
    /// Generalized eigenvalues, sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Matching eigenvectors as matrix rows (k × d), unnormalized.
    pub eigenvectors: DMatrix<f64>,
}

/// Solves the symmetric-definite generalized eigenproblem for the top-k
/// pairs via Cholesky whitening of `s_w`: with `S_w = LLᵀ`, the problem
/// reduces to the standard symmetric eigenproblem for `L⁻¹ S_b L⁻ᵀ`, and
/// eigenvectors map back through `L⁻ᵀ`.
///
/// `s_w` must be symmetric positive definite (add a ridge first if it may
/// be singular); `s_b` must be symmetric.
pub fn generalized_symmetric_eigen(
    s_b: &DMatrix<f64>,
    s_w: &DMatrix<f64>,
    k: usize,
) -> Result<GenEigen> {
    let d = s_w.nrows();
    assert!(k <= d, "requested {k} eigenpairs from dimension {d}");
    let chol = match s_w.clone().cholesky() {
        Some(c) => c,
        None => {
            return numerical_err(
                "within-class scatter is not positive definite; increase the ridge parameter",
            )
        }
    };
    let l = chol.l();
    // M = L⁻¹ S_b L⁻ᵀ, built by two triangular solves.
    let a1 = l
        .solve_lower_triangular(s_b)
        .ok_or_else(|| singular_factor())?;
    let m = l
        .solve_lower_triangular(&a1.transpose())
        .ok_or_else(|| singular_factor())?;
    // Symmetrize to absorb roundoff before the eigensolve.
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let lt = l.transpose();
    let mut rows = DMatrix::<f64>::zeros(k, d);
    let mut values = Vec::with_capacity(k);
    for (r, &idx) in order.iter().take(k).enumerate() {
        let v: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
        // a = L⁻ᵀ v
        let a = lt
            .solve_upper_triangular(&v)
            .ok_or_else(|| singular_factor())?;
        rows.row_mut(r).copy_from(&a.transpose());
        values.push(eig.eigenvalues[idx]);
    }
    Ok(GenEigen {
        eigenvalues: values,
        eigenvectors: rows,
    })
}

fn singular_factor() -> crate::Error {
    crate::Error::Numerical("triangular solve failed on a singular Cholesky factor".into())
}

/// Fixed sign convention for eigenvector rows: the first entry with
/// magnitude above `1e-12` is made positive. Keeps fitted projections
/// reproducible across eigensolver implementations.
pub fn apply_sign_convention(rows: &mut DMatrix<f64>) {
    for mut row in rows.row_iter_mut() {
        if let Some(first) = row.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                row.neg_mut();
            }
        }
    }
}

/// Normalizes each row to unit Euclidean norm. Rows with zero norm are
/// left untouched.
pub fn normalize_rows(rows: &mut DMatrix<f64>) {
    for mut row in rows.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
}

/// Σ vᵀ M⁻¹ v via a precomputed Cholesky factorization.
pub struct CholSolver {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    log_det: f64,
}

impl CholSolver {
    pub fn new(m: &DMatrix<f64>, context: &str) -> Result<Self> {
        let chol = match m.clone().cholesky() {
            Some(c) => c,
            None => return numerical_err(format!("{context}: matrix is not positive definite")),
        };
        let log_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        Ok(CholSolver { chol, log_det })
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Quadratic form vᵀ M⁻¹ v.
    pub fn quad(&self, v: &DVector<f64>) -> f64 {
        let x = self.chol.solve(v);
        v.dot(&x)
    }

    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    pub fn solve_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(m)
    }
}
