//! Vector norms, induced matrix norms and spectral radius.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial norm applied to the value of a signal at a single instant.
///
/// `Euclidean` is the default everywhere. `Max` (largest absolute component)
/// makes every induced norm of a finite linear kernel exactly computable as a
/// weighted absolute row sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorNorm {
    #[default]
    Euclidean,
    Max,
}

impl VectorNorm {
    pub fn of(self, v: &DVector<f64>) -> f64 {
        match self {
            VectorNorm::Euclidean => v.norm(),
            VectorNorm::Max => v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs())),
        }
    }

    pub fn of_slice(self, v: &[f64]) -> f64 {
        match self {
            VectorNorm::Euclidean => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            VectorNorm::Max => v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs())),
        }
    }

    /// Matrix norm induced by this vector norm.
    pub fn induced(self, m: &DMatrix<f64>) -> f64 {
        match self {
            VectorNorm::Euclidean => spectral_norm(m),
            VectorNorm::Max => max_row_sum(m),
        }
    }

    /// A cheap upper bound on [`VectorNorm::induced`]; exact for `Max`.
    pub fn induced_upper(self, m: &DMatrix<f64>) -> f64 {
        match self {
            VectorNorm::Euclidean => (max_row_sum(m) * max_col_sum(m)).sqrt(),
            VectorNorm::Max => max_row_sum(m),
        }
    }
}

pub fn max_row_sum(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_col_sum(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    if m.nrows() == 2 && m.ncols() == 2 {
        // sqrt of the larger eigenvalue of M'M
        let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        let p = a * a + c * c;
        let q = b * b + d * d;
        let r = a * b + c * d;
        let half_tr = 0.5 * (p + q);
        let disc = (0.25 * (p - q) * (p - q) + r * r).sqrt();
        return (half_tr + disc).max(0.0).sqrt();
    }
    m.singular_values().max()
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidParameter(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix".into()));
    }
    let n = m.nrows();
    match n {
        0 => Ok(0.0),
        1 => Ok(m[(0, 0)].abs()),
        2 => {
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            let disc = 0.25 * tr * tr - det;
            if disc >= 0.0 {
                let s = disc.sqrt();
                Ok((0.5 * tr + s).abs().max((0.5 * tr - s).abs()))
            } else {
                // complex pair, |lambda|^2 = det
                Ok(det.sqrt())
            }
        }
        _ => Ok(m
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)),
    }
}

pub fn abs_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(f64::abs)
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::InvalidParameter("matrix with no rows".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::InvalidParameter("matrix with no columns".into()));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            expected: ncols,
            found: bad.len(),
        });
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix entries".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((spectral_radius(&id).unwrap() - 1.0).abs() < 1e-12);

        let d = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.9]);
        assert!((spectral_radius(&d).unwrap() - 0.9).abs() < 1e-12);

        // lambda^2 - lambda + 0.25 = (lambda - 0.5)^2
        let defective = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.25, 1.0]);
        let r = spectral_radius(&defective).unwrap();
        assert!((r - 0.5).abs() <= 0.5e-9, "{r}");
    }

    #[test]
    fn spectral_radius_rejects_non_square() {
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(spectral_radius(&m).is_err());
    }

    #[test]
    fn spectral_radius_general_path() {
        // rotation by 90 degrees scaled by 0.7, embedded in 3x3 with a 0.2 pole
        let m = DMatrix::from_row_slice(3, 3, &[0.0, -0.7, 0.0, 0.7, 0.0, 0.0, 0.0, 0.0, 0.2]);
        assert!((spectral_radius(&m).unwrap() - 0.7).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_closed_form_matches_svd() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.0, 3.0]);
        let svd = m.singular_values().max();
        assert!((spectral_norm(&m) - svd).abs() < 1e-12);
        assert!((spectral_norm(&m) - 3.650_281_539_872_885).abs() < 1e-12);
    }

    #[test]
    fn induced_norms() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.0, 3.0]);
        assert_eq!(VectorNorm::Max.induced(&m), 3.0);
        assert!(VectorNorm::Euclidean.induced_upper(&m) >= VectorNorm::Euclidean.induced(&m));
    }
}
