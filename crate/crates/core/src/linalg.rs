//! Small dense linear-algebra helpers shared by the estimator, the M-step and
//! the EDMD solver.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

/// Relative jitter added to the diagonal before the single retry of a failed
/// symmetric positive-definite factorization.
pub const JITTER_REL: f64 = 1e-10;

/// Relative eigenvalue floor applied to learned covariances.
pub const COV_FLOOR_REL: f64 = 1e-12;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

/// Cholesky factorization with one jitter retry of `1e-10 * trace / n * I`.
///
/// Returns `None` when the matrix is still not positive definite after the
/// retry, or when it contains non-finite entries.
pub fn cholesky_jitter(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let n = m.nrows().max(1);
    let scale = (m.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let jittered = m + DMatrix::identity(m.nrows(), m.ncols()) * (JITTER_REL * scale);
    Cholesky::new(jittered)
}

pub fn log_det_chol(c: &Cholesky<f64, Dyn>) -> f64 {
    c.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

/// Clamps the eigenvalues of a symmetric matrix to at least
/// `rel * trace / dim`. Matrices already above the floor are returned
/// unchanged (bitwise).
pub fn floor_eigenvalues(m: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let floor = rel * (m.trace() / n as f64).abs();
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) && floor > 0.0 {
        return m.clone();
    }
    let floor = floor.max(f64::MIN_POSITIVE);
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrized(out)
}

/// Square-root factor `S` with `S Sᵀ = m` for a symmetric positive
/// semidefinite matrix; negative round-off eigenvalues are truncated to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return c.l();
    }
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d)
}

pub fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Draws `mean + S ξ` where `S` is a square-root factor of `cov`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &DVector<f64>,
    cov_sqrt: &DMatrix<f64>,
) -> DVector<f64> {
    let xi = sample_standard_normal(rng, cov_sqrt.ncols());
    mean + cov_sqrt * xi
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_semidefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(Cholesky::new(m.clone()).is_none());
        assert!(cholesky_jitter(&m).is_some());
    }

    #[test]
    fn jitter_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky_jitter(&m).is_none());
    }

    #[test]
    fn floor_leaves_spd_untouched() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(floor_eigenvalues(&m, COV_FLOOR_REL), m);
    }

    #[test]
    fn floor_lifts_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = floor_eigenvalues(&m, 1e-6);
        let eig = f.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l >= 0.99e-6));
    }

    #[test]
    fn log_det_matches_product_of_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let c = cholesky_jitter(&m).unwrap();
        assert!((log_det_chol(&c) - 11.0f64.ln()).abs() < 1e-14);
    }
}
