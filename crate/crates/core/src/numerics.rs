//! Dense small-matrix kernels.
//!
//! Everything here works on `nalgebra` dynamic matrices. Dimensions in this
//! crate stay small (a few states, LMI blocks of order ~10), so the routines
//! favour robustness over speed: cyclic Jacobi for symmetric spectra, a
//! Kronecker-vectorised solve for the discrete Lyapunov equation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Numerical thresholds shared by the pipeline. All of them can be overridden
/// from a run configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Relative accuracy target of the symmetric eigensolver.
    pub eig_rel: f64,
    /// Minimum LMI margin for a feasibility verdict.
    pub feasibility: f64,
    /// Slack allowed on the level-one invariance test.
    pub invariance: f64,
    /// Allowed residual of the limit-cycle fixed point.
    pub limit_cycle_residual: f64,
    /// Allowed deviation of convex weights from summing to one.
    pub convex_weight: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eig_rel: 1e-10,
            feasibility: 1e-7,
            invariance: 1e-9,
            limit_cycle_residual: 1e-10,
            convex_weight: 1e-12,
        }
    }
}

/// A real symmetric matrix. Symmetry is exact (entry `(i, j)` and `(j, i)`
/// are bitwise equal).
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Wraps `m`, rejecting non-square, empty, non-finite or asymmetric input.
    pub fn new(m: Matrix) -> Result<Self> {
        check_square_finite(&m, "symmetric matrix")?;
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if m[(i, j)] != m[(j, i)] {
                    return Err(invalid(format!(
                        "matrix is not symmetric at ({i}, {j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// Replaces `m` with `(m + mᵀ) / 2`.
    pub fn symmetrized(m: &Matrix) -> Result<Self> {
        check_square_finite(m, "symmetric matrix")?;
        let mut s = (m + m.transpose()) * 0.5;
        let n = s.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                s[(j, i)] = s[(i, j)];
            }
        }
        Ok(Self(s))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n, n))
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(invalid(format!("expected {} entries, got {}", n * n, data.len())));
        }
        Self::new(Matrix::from_row_slice(n, n, data))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: &Vector) -> f64 {
        v.dot(&(&self.0 * v))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(&self.0 * c)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn min_eig(&self) -> f64 {
        sym_eigs(self).min_eig
    }
}

impl std::ops::Deref for SymMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

fn check_square_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(invalid(format!("{what} must be square and non-empty, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(invalid(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// Ascending spectrum of a matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenReport {
    pub eigenvalues: Vec<f64>,
    pub min_eig: f64,
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns.
pub fn sym_eigen_decomposition(m: &SymMatrix) -> (Vec<f64>, Matrix) {
    let n = m.dim();
    let mut a = m.as_matrix().clone();
    let mut v = Matrix::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                let tau = s / (1.0 + c);

                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let g = a[(r, p)];
                        let h = a[(r, q)];
                        let rp = g - s * (h + g * tau);
                        let rq = h + s * (g - h * tau);
                        a[(r, p)] = rp;
                        a[(p, r)] = rp;
                        a[(r, q)] = rq;
                        a[(q, r)] = rq;
                    }
                }
                for r in 0..n {
                    let g = v[(r, p)];
                    let h = v[(r, q)];
                    v[(r, p)] = g - s * (h + g * tau);
                    v[(r, q)] = h + s * (g - h * tau);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigs(m: &SymMatrix) -> EigenReport {
    let (eigenvalues, _) = sym_eigen_decomposition(m);
    let min_eig = eigenvalues[0];
    EigenReport { eigenvalues, min_eig }
}

/// `true` iff the smallest eigenvalue of `m` exceeds `margin`.
pub fn is_positive_definite(m: &SymMatrix, margin: f64) -> bool {
    sym_eigs(m).min_eig > margin
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    check_square_finite(m, "matrix")?;
    let n = m.nrows();
    if n == 1 {
        return Ok(m[(0, 0)].abs());
    }
    // Hessenberg reduction + shifted QR (real Schur form).
    let eigs = m.clone().complex_eigenvalues();
    Ok(eigs.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Exact zero-order-hold discretisation of `ẋ = F x + g`.
///
/// Returns `(exp(F T), ∫₀ᵀ exp(F s) g ds)`, both read off the exponential of
/// the augmented matrix `[[F, g], [0, 0]]·T`.
pub fn expm_affine(f: &Matrix, g: &Matrix, t: f64) -> Result<(Matrix, Matrix)> {
    check_square_finite(f, "F")?;
    let n = f.nrows();
    if g.nrows() != n || g.ncols() != 1 {
        return Err(invalid(format!("g must be {n}x1, got {}x{}", g.nrows(), g.ncols())));
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(invalid("g has non-finite entries"));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid(format!("sampling period must be positive, got {t}")));
    }
    let mut aug = Matrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(f * t));
    aug.view_mut((0, n), (n, 1)).copy_from(&(g * t));
    // Padé-13 scaling and squaring.
    let e = aug.exp();
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, 1)).into_owned();
    if ad.iter().chain(bd.iter()).any(|x| !x.is_finite()) {
        return Err(invalid("matrix exponential overflowed"));
    }
    Ok((ad, bd))
}

/// Solves `Aᵀ X A − X = −W` for symmetric `X`.
pub fn solve_discrete_lyapunov(a: &Matrix, w: &SymMatrix) -> Result<SymMatrix> {
    let radius = spectral_radius(a)?;
    if a.nrows() != w.dim() {
        return Err(invalid("dimension mismatch between A and W"));
    }
    if radius >= 1.0 {
        return Err(Error::NotSchurStable { spectral_radius: radius });
    }
    let n = a.nrows();
    // vec(Aᵀ X A) = (Aᵀ ⊗ Aᵀ) vec(X) for column-major vec.
    let at = a.transpose();
    let kron = at.kronecker(&at);
    let lhs = Matrix::identity(n * n, n * n) - kron;
    let rhs = Vector::from_column_slice(w.as_matrix().as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or(Error::NotSchurStable { spectral_radius: radius })?;
    let x = Matrix::from_column_slice(n, n, sol.as_slice());
    SymMatrix::symmetrized(&x)
}

/// Residual `‖Aᵀ X A − X + W‖_F`.
pub fn lyapunov_residual(a: &Matrix, x: &SymMatrix, w: &SymMatrix) -> f64 {
    (a.transpose() * x.as_matrix() * a - x.as_matrix() + w.as_matrix()).norm()
}
