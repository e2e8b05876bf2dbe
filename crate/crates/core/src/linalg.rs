//! Dense square-root covariance primitives.
//!
//! Everything here works on a lower-triangular factor `S` with `P = S·Sᵀ`.
//! Factors are kept in a canonical form with a nonnegative diagonal so that two
//! factors of the same covariance compare equal entrywise.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Pivot floor relative to the largest absolute entry of the input matrix.
pub const PD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("rank-1 downdate broke down at column {0}")]
    DowndateBreakdown(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Direction of a rank-1 modification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// Lower-triangular square root of a covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SqrtFactor(DMatrix<f64>);

impl SqrtFactor {
    /// Builds a factor from any square matrix by taking its lower triangle and
    /// flipping column signs so the diagonal is nonnegative.
    pub fn from_lower(mut m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "square-root factor must be square");
        let n = m.nrows();
        for j in 0..n {
            for i in 0..j {
                m[(i, j)] = 0.0;
            }
            if m[(j, j)] < 0.0 {
                for i in j..n {
                    m[(i, j)] = -m[(i, j)];
                }
            }
        }
        Self(m)
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// Diagonal factor from per-coordinate standard deviations.
    pub fn from_std_devs(std: &[f64]) -> Self {
        let d = DVector::from_iterator(std.len(), std.iter().map(|s| s.abs()));
        Self(DMatrix::from_diagonal(&d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// `S·Sᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Cholesky factorization `P = S·Sᵀ`.
pub fn chol(p: &DMatrix<f64>) -> Result<SqrtFactor, LinalgError> {
    if !p.is_square() {
        return Err(LinalgError::DimensionMismatch {
            expected: p.nrows(),
            got: p.ncols(),
        });
    }
    let n = p.nrows();
    let scale = max_abs(p);
    let asym = (p - p.transpose()).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if asym > 1e-9 * scale.max(f64::MIN_POSITIVE) {
        return Err(LinalgError::NotSymmetric(asym));
    }
    let floor = PD_FLOOR * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = p[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return Err(LinalgError::NotPositiveDefinite { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = p[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(SqrtFactor(l))
}

/// Lower-triangular `S` with `S·Sᵀ = blockᵀ·block`, via the R factor of a QR
/// decomposition of `block`.
pub fn qr_compress(block: &DMatrix<f64>) -> Result<SqrtFactor, LinalgError> {
    let (r, c) = block.shape();
    if r < c {
        return Err(LinalgError::DimensionMismatch { expected: c, got: r });
    }
    let upper = block.clone().qr().r();
    Ok(SqrtFactor::from_lower(upper.transpose()))
}

/// Returns `S'` with `S'·S'ᵀ = S·Sᵀ ± v·vᵀ`.
pub fn rank1_update(s: &SqrtFactor, v: &DVector<f64>, sign: Sign) -> Result<SqrtFactor, LinalgError> {
    let n = s.dim();
    if v.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            got: v.len(),
        });
    }
    let mut l = s.0.clone();
    let mut w = v.clone();
    for j in 0..n {
        let wj = w[j];
        if wj == 0.0 {
            continue;
        }
        let ljj = l[(j, j)];
        match sign {
            Sign::Plus => {
                // Givens rotation; well defined even for a zero pivot.
                let r = ljj.hypot(wj);
                let c = ljj / r;
                let sn = wj / r;
                l[(j, j)] = r;
                for i in (j + 1)..n {
                    let lij = l[(i, j)];
                    l[(i, j)] = c * lij + sn * w[i];
                    w[i] = c * w[i] - sn * lij;
                }
            }
            Sign::Minus => {
                // Hyperbolic rotation.
                let arg = (ljj - wj) * (ljj + wj);
                if !(arg > f64::EPSILON * ljj * ljj) || !arg.is_finite() {
                    return Err(LinalgError::DowndateBreakdown(j));
                }
                let r = arg.sqrt();
                let c = r / ljj;
                let sn = wj / ljj;
                l[(j, j)] = r;
                for i in (j + 1)..n {
                    let lij = (l[(i, j)] - sn * w[i]) / c;
                    l[(i, j)] = lij;
                    w[i] = c * w[i] - sn * lij;
                }
            }
        }
    }
    Ok(SqrtFactor::from_lower(l))
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Number of singular values above `tol` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = singular_values(m);
    let Some(&top) = sv.first() else { return 0 };
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * top).count()
}

/// Factorizes a symmetric matrix, clipping eigenvalues at `rel_floor·trace`
/// first if plain Cholesky fails. The flag reports whether clipping happened.
pub fn chol_with_clip(p: &DMatrix<f64>, rel_floor: f64) -> Result<(SqrtFactor, bool), LinalgError> {
    let sym = (p + p.transpose()) * 0.5;
    if let Ok(s) = chol(&sym) {
        return Ok((s, false));
    }
    let n = sym.nrows();
    let floor = (rel_floor * sym.trace().abs()).max(f64::MIN_POSITIVE);
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|l| if l.is_finite() { l.max(floor) } else { floor });
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;
    match chol(&rebuilt) {
        Ok(s) => Ok((s, true)),
        Err(_) => {
            // Cholesky can still fail on the clipped matrix when the spread of
            // eigenvalues exceeds the pivot floor; a QR of Λ^½Vᵀ always works.
            let half = DMatrix::from_diagonal(&clipped.map(f64::sqrt)) * eig.eigenvectors.transpose();
            let s = qr_compress(&half)?;
            debug_assert_eq!(s.dim(), n);
            Ok((s, true))
        }
    }
}
