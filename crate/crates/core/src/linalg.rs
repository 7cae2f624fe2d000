//! Small dense-matrix toolkit: p.s.d. square roots, column-stacking `vec`,
//! Kronecker products, symmetrization, conditioned linear solves and the
//! continuous Lyapunov equation `H F + F Hᵀ = Q`.
//!
//! Everything here works on `nalgebra` dynamic matrices. Dimensions in this
//! crate are small (a handful of state variables), so the Lyapunov solver
//! simply forms the `d² × d²` vectorized system.

use nalgebra::{DMatrix, DVector, SymmetricEigen, LU};

use crate::error::{Error, Result};

/// Largest condition number accepted by [`Solver`].
pub const COND_LIMIT: f64 = 1e12;

/// A symmetric, numerically positive semi-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix(DMatrix<f64>);

impl PsdMatrix {
    /// Validates symmetry (`‖A − Aᵀ‖ ≤ 1e-8 ‖A‖`) and numerical p.s.d.-ness
    /// (eigenvalues `≥ −1e-10 ‖A‖`). The stored matrix is symmetrized.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&a)?;
        let s = sym(&a);
        let norm = s.norm();
        let eig = SymmetricEigen::new(s.clone());
        let min = eig.eigenvalues.min();
        if min < -1e-10 * norm {
            return Err(Error::NotPositiveDefinite(format!(
                "min eigenvalue {min:.3e} below tolerance"
            )));
        }
        Ok(PsdMatrix(s))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// The unique p.s.d. square root.
    pub fn sqrt(&self) -> PsdMatrix {
        PsdMatrix(sqrt_of_symmetric(&self.0))
    }
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let norm = a.norm();
    let asymmetry = (a - a.transpose()).norm();
    if asymmetry > 1e-8 * norm {
        return Err(Error::NotSymmetric { asymmetry, norm });
    }
    Ok(())
}

fn sqrt_of_symmetric(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let b = v * DMatrix::from_diagonal(&roots) * v.transpose();
    sym(&b)
}

/// P.s.d. square root via symmetric eigendecomposition; negative eigenvalues
/// (rounding noise) are clamped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(a)?;
    Ok(sqrt_of_symmetric(&sym(a)))
}

/// `(A + Aᵀ) / 2`.
pub fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Column-stacking vectorization: `vec(A)[j·m + i] = A[i, j]`.
pub fn vec(a: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra storage is column-major already.
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec: length mismatch");
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Kronecker product `A ⊗ B`, so that `vec(B X Aᵀ) = (A ⊗ B) vec(X)`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = a.shape();
    let (r, s) = b.shape();
    let mut out = DMatrix::zeros(p * r, q * s);
    for j in 0..q {
        for i in 0..p {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for l in 0..s {
                for k in 0..r {
                    out[(i * r + k, j * s + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Commutation matrix `K` with `K vec(A) = vec(Aᵀ)` for `d × d` matrices.
pub fn commutation(d: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            k[(i * d + j, j * d + i)] = 1.0;
        }
    }
    k
}

/// 1-norm condition number estimate computed from an explicit inverse.
/// Returns `f64::INFINITY` for exactly singular input.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    Solver::factor(a).1
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// LU factorization with partial pivoting plus a condition estimate.
#[derive(Debug, Clone)]
pub struct Solver {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    cond: f64,
}

impl Solver {
    fn factor(a: &DMatrix<f64>) -> (LU<f64, nalgebra::Dyn, nalgebra::Dyn>, f64) {
        let lu = a.clone().lu();
        let cond = match lu.try_inverse() {
            Some(inv) => {
                let c = norm1(a) * norm1(&inv);
                if c.is_finite() {
                    c
                } else {
                    f64::INFINITY
                }
            }
            None => f64::INFINITY,
        };
        (lu, cond)
    }

    /// Factors `a`; fails with [`Error::IllConditioned`] when the condition
    /// estimate exceeds [`COND_LIMIT`].
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "cannot factor a {}x{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        let (lu, cond) = Self::factor(a);
        if !(cond <= COND_LIMIT) {
            return Err(Error::IllConditioned(cond));
        }
        Ok(Solver { lu, cond })
    }

    pub fn cond(&self) -> f64 {
        self.cond
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(b).expect("factorization checked non-singular")
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(b).expect("factorization checked non-singular")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.lu.try_inverse().expect("factorization checked non-singular")
    }
}

/// Solves `A x = b` with the conditioning guard of [`Solver`].
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(Solver::new(a)?.solve(b))
}

/// Smallest real part over the (complex) eigenvalues of a square matrix.
pub fn min_real_eigenvalue(h: &DMatrix<f64>) -> f64 {
    h.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::INFINITY, f64::min)
}

/// Solves `H F + F Hᵀ = Q` through `(I ⊗ H + H ⊗ I) vec(F) = vec(Q)`.
///
/// All eigenvalues of `H` must have positive real part.
pub fn solve_lyapunov(h: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = h.nrows();
    if !h.is_square() || q.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov: H is {:?}, Q is {:?}",
            h.shape(),
            q.shape()
        )));
    }
    let re = min_real_eigenvalue(h);
    if !(re > 0.0) {
        return Err(Error::UnstableH(re));
    }
    let eye = DMatrix::identity(d, d);
    let system = kron(&eye, h) + kron(h, &eye);
    let f = unvec(&solve(&system, &vec(q))?, d, d);
    Ok(sym(&f))
}

/// Matrix exponential (Padé approximant with scaling and squaring).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.exp()
}

/// Row-major nested vectors, the JSON layout used for matrices.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Inverse of [`to_rows`]; rows must be non-empty and of equal length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if n == 0 || c == 0 || rows.iter().any(|r| r.len() != c) {
        return Err(Error::DimensionMismatch("matrix rows must be non-empty and of equal length".into()));
    }
    Ok(DMatrix::from_fn(n, c, |i, j| rows[i][j]))
}

/// `serde(serialize_with)` helper writing a matrix as nested rows, with
/// non-finite entries as `null`.
pub fn serialize_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(m.row_iter().map(|r| {
        r.iter()
            .map(|v| if v.is_finite() { Some(*v) } else { None })
            .collect::<Vec<_>>()
    }))
}
