//! Koopman eigenvalues of a learned generator and eigenfunction values along
//! estimated trajectories.
//!
//! Eigenvectors are right eigenvectors of `V_u` on the augmented space
//! `ψ = (1, z)`, so that `φ = vᵀψ` satisfies `dφ/dt ≈ λ φ`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{check_dim, Error, Result};
use crate::estimation::PosteriorMoments;
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lam: Complex64,
    /// Unit-norm right eigenvector on `(1, z)`.
    pub v: DVector<Complex64>,
}

/// `V_0 + Σ_k u_k V_k` on the augmented state.
pub fn generator_at_input(params: &ModelParams, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_dim("input vector", params.q, u.len())?;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "input contains non-finite values".into(),
        ));
    }
    let mut v = params.full_generator(0);
    for k in 1..=params.q {
        v += params.full_generator(k) * u[k - 1];
    }
    Ok(v)
}

/// Full eigendecomposition of [`generator_at_input`], sorted by real part,
/// then imaginary part.
///
/// Each eigenvector has unit norm and its largest-modulus component is real
/// and positive; eigenvectors of real eigenvalues are real.
pub fn eigen_spectrum(params: &ModelParams, u: &DVector<f64>) -> Result<Vec<EigenPair>> {
    let v = generator_at_input(params, u)?;
    eigen_pairs(&v)
}

/// Eigenpairs of a general real square matrix.
pub fn eigen_pairs(m: &DMatrix<f64>) -> Result<Vec<EigenPair>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("generator has non-finite entries".into()));
    }
    let dim = m.nrows();
    let lams = m.complex_eigenvalues();
    if lams.iter().any(|l| !l.re.is_finite() || !l.im.is_finite()) {
        return Err(Error::Numerical("eigensolver failed".into()));
    }
    let mc: DMatrix<Complex64> = m.map(|x| Complex64::new(x, 0.0));
    let scale = m.amax().max(1.0);
    let mut pairs = Vec::with_capacity(dim);
    for &lam in lams.iter() {
        let lam = if lam.im.abs() <= 1e-14 * scale {
            Complex64::new(lam.re, 0.0)
        } else {
            lam
        };
        let shifted = &mc - DMatrix::<Complex64>::identity(dim, dim) * lam;
        let svd = shifted.svd(false, true);
        let vt = svd
            .v_t
            .ok_or_else(|| Error::Numerical("singular value decomposition failed".into()))?;
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty spectrum");
        let mut v: DVector<Complex64> = vt.row(imin).transpose().map(|c| c.conj());
        normalize_phase(&mut v, lam.im == 0.0);
        pairs.push(EigenPair { lam, v });
    }
    pairs.sort_by(|a, b| {
        a.lam
            .re
            .total_cmp(&b.lam.re)
            .then_with(|| a.lam.im.total_cmp(&b.lam.im))
    });
    Ok(pairs)
}

fn normalize_phase(v: &mut DVector<Complex64>, real: bool) {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let (imax, _) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .expect("non-empty vector");
    let pivot = v[imax];
    let rot = pivot.conj() / pivot.norm() / norm;
    v.iter_mut().for_each(|c| *c *= rot);
    if real {
        v.iter_mut().for_each(|c| c.im = 0.0);
        let n = v.iter().map(|c| c.re * c.re).sum::<f64>().sqrt();
        v.iter_mut().for_each(|c| c.re /= n);
    }
}

/// Posterior mean and variance of `φ = vᵀ(1, z_l)` at every step.
pub fn eigenfunction_values(
    post: &PosteriorMoments,
    pair: &EigenPair,
) -> Result<Vec<(Complex64, f64)>> {
    let n = pair.v.len().saturating_sub(1);
    if let Some(mu) = post.mu.first() {
        check_dim("eigenvector length", mu.len() + 1, pair.v.len())?;
    }
    let vt = pair.v.rows(1, n).into_owned();
    Ok(post
        .mu
        .iter()
        .zip(&post.sig)
        .map(|(mu, sig)| {
            let value = pair.v[0]
                + vt.iter()
                    .zip(mu.iter())
                    .map(|(a, &b)| a * b)
                    .sum::<Complex64>();
            let sc: DMatrix<Complex64> = sig.map(|x| Complex64::new(x, 0.0));
            let var = (vt.adjoint() * sc * &vt)[(0, 0)].re.max(0.0);
            (value, var)
        })
        .collect())
}
