use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-8;
const NEGATIVE_TOL: f64 = 1e-8;
const RIDGE: f64 = 1e-6;

/// Symmetric PSD square root by eigendecomposition. Eigenvalues in
/// `[-1e-8, 0)` are clamped to zero; anything more negative is an error.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::config(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix_sqrt_psd"));
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::config(format!("matrix is not symmetric (max deviation {asym:e})")));
    }
    let eig = SymmetricEigen::new(0.5 * (m + m.transpose()));
    if let Some(&lo) = eig.eigenvalues.iter().find(|&&l| l < -NEGATIVE_TOL) {
        return Err(Error::config(format!("matrix is indefinite (eigenvalue {lo:e})")));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

fn moments<R: AsRef<[f64]>>(rows: &[R], what: &'static str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if rows.len() < 2 {
        return Err(Error::config(format!("{what} needs at least 2 vectors, got {}", rows.len())));
    }
    let d = rows[0].as_ref().len();
    if d == 0 {
        return Err(Error::Empty(what));
    }
    let mut x = DMatrix::zeros(rows.len(), d);
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: r.len(),
            });
        }
        x.row_mut(i).copy_from_slice(r);
    }
    let n = rows.len() as f64;
    let mu: DVector<f64> = x.row_mean().transpose();
    for mut row in x.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = x.transpose() * &x / (n - 1.0);
    Ok((mu, cov))
}

/// Fréchet distance between two Gaussians given their moments. A ridge of
/// `1e-6 I` is added to both covariances.
pub fn frechet_from_moments(mu1: &DVector<f64>, s1: &DMatrix<f64>, mu2: &DVector<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    for got in [mu2.len(), s1.nrows(), s1.ncols(), s2.nrows(), s2.ncols()] {
        if got != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: got,
            });
        }
    }
    let ridge = DMatrix::identity(d, d) * RIDGE;
    let s1 = s1 + &ridge;
    let s2 = s2 + &ridge;
    let r1 = matrix_sqrt_psd(&s1)?;
    let inner = &r1 * &s2 * &r1;
    let cross = matrix_sqrt_psd(&(0.5 * (&inner + inner.transpose())))?;
    let diff = mu1 - mu2;
    let value = diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * cross.trace();
    Ok(value.max(0.0))
}

/// Fréchet distance between Gaussian fits (unbiased covariance) of two sets of rows.
pub fn frechet_distance<R: AsRef<[f64]>>(set_a: &[R], set_b: &[R]) -> Result<f64> {
    let (mu1, s1) = moments(set_a, "first set")?;
    let (mu2, s2) = moments(set_b, "second set")?;
    frechet_from_moments(&mu1, &s1, &mu2, &s2)
}
