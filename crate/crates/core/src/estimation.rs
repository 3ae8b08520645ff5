//! E-step machinery: time-varying Kalman filter, Rauch–Tung–Striebel
//! smoother, a dense joint-Gaussian reference posterior, forward-filter
//! backward-sample posterior draws and mean/covariance forecasting.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_jitter, log_det_chol, psd_sqrt, sample_gaussian, symmetrize};
use crate::model::{step_matrices_for, step_matrix, ModelParams, StepMatrices, Trajectory};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Largest `(L+1)·n` accepted by [`dense_posterior_oracle`].
pub const DENSE_ORACLE_CAP: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredMoments {
    /// `μ_{l|l}`
    pub mu_f: Vec<DVector<f64>>,
    /// `Σ_{l,l|l}`
    pub sig_f: Vec<DMatrix<f64>>,
    /// `μ_{l|l-1}`, with `mu_pred[0] = μ0`.
    pub mu_pred: Vec<DVector<f64>>,
    /// `Σ_{l,l|l-1}`, with `sig_pred[0] = Σ0`.
    pub sig_pred: Vec<DMatrix<f64>>,
    /// Innovations log-likelihood of the whole output sequence.
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    /// `μ̂_l`, `l = 0..=L`
    pub mu: Vec<DVector<f64>>,
    /// `Σ̂_{l,l}`, `l = 0..=L`
    pub sig: Vec<DMatrix<f64>>,
    /// `Σ̂_{l,l+1}`, `l = 0..L`
    pub sig_cross: Vec<DMatrix<f64>>,
}

impl PosteriorMoments {
    /// Posterior that is a point mass on the given latent states.
    pub fn exact(states: &[DVector<f64>]) -> Self {
        let n = states.first().map_or(0, |z| z.len());
        PosteriorMoments {
            mu: states.to_vec(),
            sig: vec![DMatrix::zeros(n, n); states.len()],
            sig_cross: vec![DMatrix::zeros(n, n); states.len().saturating_sub(1)],
        }
    }
}

/// Online filter state, advanced one measurement / one input at a time.
#[derive(Debug, Clone)]
pub struct KalmanState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Accumulated innovations log-likelihood.
    pub loglik: f64,
}

impl KalmanState {
    /// Prior `N(μ0, Σ0)` before the first measurement.
    pub fn prior(params: &ModelParams) -> Self {
        KalmanState {
            mean: params.mu0.clone(),
            cov: params.sigma0.clone(),
            loglik: 0.0,
        }
    }

    /// Measurement update with `y`; on return `mean`/`cov` are `μ_{l|l}`,
    /// `Σ_{l,l|l}`.
    pub fn update(&mut self, params: &ModelParams, y: &DVector<f64>) -> Result<()> {
        check_dim("measurement", params.p, y.len())?;
        let (mu, sig, ll) = measurement_update(params, &self.mean, &self.cov, y)?;
        self.mean = mu;
        self.cov = sig;
        self.loglik += ll;
        Ok(())
    }

    /// Time update through input `u`.
    pub fn predict(&mut self, params: &ModelParams, u: &DVector<f64>) -> Result<()> {
        let sm = step_matrix(params, u)?;
        let (mu, sig) = time_update(params, &sm, &self.mean, &self.cov);
        self.mean = mu;
        self.cov = sig;
        Ok(())
    }
}

fn time_update(
    params: &ModelParams,
    sm: &StepMatrices,
    mu: &DVector<f64>,
    sig: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let mu_pred = &sm.a * mu + &sm.b;
    let mut sig_pred = &sm.a * sig * sm.a.transpose() + &params.sigma_w;
    symmetrize(&mut sig_pred);
    (mu_pred, sig_pred)
}

/// Returns `(μ_{l|l}, Σ_{l,l|l}, log N(y; c0 + C̃μ_{l|l-1}, S_l))`.
fn measurement_update(
    params: &ModelParams,
    mu_pred: &DVector<f64>,
    sig_pred: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let p = params.p;
    if p == 0 {
        return Ok((mu_pred.clone(), sig_pred.clone(), 0.0));
    }
    // C̃ = [I 0], so C̃ Σ C̃ᵀ is the leading block and Σ C̃ᵀ the leading columns.
    let s = &params.sigma_v + sig_pred.view((0, 0), (p, p));
    let chol = cholesky_jitter(&s).ok_or_else(|| {
        Error::SingularModel("innovation covariance is not positive definite".into())
    })?;
    let innov = y - &params.c0 - mu_pred.rows(0, p);
    // Kᵀ = S⁻¹ C̃ Σ_pred
    let kt = chol.solve(&sig_pred.rows(0, p).into_owned());
    let k = kt.transpose();
    let mu_f = mu_pred + &k * &innov;
    // Joseph form (I − KC̃) Σ (I − KC̃)ᵀ + K Σ_v Kᵀ keeps the result PSD
    let n = mu_pred.len();
    let mut ikc = DMatrix::identity(n, n);
    let mut lead = ikc.columns_mut(0, p);
    lead -= &k;
    let mut sig_f = &ikc * sig_pred * ikc.transpose() + &k * &params.sigma_v * &kt;
    symmetrize(&mut sig_f);
    let white = chol.solve(&innov);
    let ll = -0.5 * (p as f64 * LN_2PI + log_det_chol(&chol) + innov.dot(&white));
    if !ll.is_finite() {
        return Err(Error::SingularModel(
            "non-finite innovation likelihood".into(),
        ));
    }
    Ok((mu_f, sig_f, ll))
}

fn check_traj(params: &ModelParams, traj: &Trajectory) -> Result<()> {
    traj.validate(params.q, params.p)
}

pub fn kalman_forward(params: &ModelParams, traj: &Trajectory) -> Result<FilteredMoments> {
    check_traj(params, traj)?;
    let steps = step_matrices_for(params, traj);
    kalman_forward_with(params, traj, &steps)
}

pub(crate) fn kalman_forward_with(
    params: &ModelParams,
    traj: &Trajectory,
    steps: &[StepMatrices],
) -> Result<FilteredMoments> {
    let len = traj.outputs.len();
    let mut out = FilteredMoments {
        mu_f: Vec::with_capacity(len),
        sig_f: Vec::with_capacity(len),
        mu_pred: Vec::with_capacity(len),
        sig_pred: Vec::with_capacity(len),
        loglik: 0.0,
    };
    for (l, y) in traj.outputs.iter().enumerate() {
        let (mu_pred, sig_pred) = if l == 0 {
            (params.mu0.clone(), params.sigma0.clone())
        } else {
            time_update(params, &steps[l - 1], &out.mu_f[l - 1], &out.sig_f[l - 1])
        };
        let (mu_f, sig_f, ll) = measurement_update(params, &mu_pred, &sig_pred, y)?;
        out.loglik += ll;
        out.mu_pred.push(mu_pred);
        out.sig_pred.push(sig_pred);
        out.mu_f.push(mu_f);
        out.sig_f.push(sig_f);
    }
    Ok(out)
}

pub fn rts_smoother(
    params: &ModelParams,
    traj: &Trajectory,
    filt: &FilteredMoments,
) -> Result<PosteriorMoments> {
    check_traj(params, traj)?;
    check_dim(
        "filtered moments length",
        traj.outputs.len(),
        filt.mu_f.len(),
    )?;
    let steps = step_matrices_for(params, traj);
    rts_smoother_with(filt, &steps)
}

pub(crate) fn rts_smoother_with(
    filt: &FilteredMoments,
    steps: &[StepMatrices],
) -> Result<PosteriorMoments> {
    let len = filt.mu_f.len();
    let last = len - 1;
    let mut mu = filt.mu_f.clone();
    let mut sig = filt.sig_f.clone();
    let mut sig_cross = Vec::with_capacity(last);
    for l in (0..last).rev() {
        let a = &steps[l].a;
        let pred = &filt.sig_pred[l + 1];
        let chol = cholesky_jitter(pred).ok_or_else(|| {
            Error::SingularModel(format!(
                "predicted covariance at step {} is singular",
                l + 1
            ))
        })?;
        // J_l = Σ_{l|l} Aᵀ Σ_{l+1|l}⁻¹  ⇔  Σ_{l+1|l} J_lᵀ = A Σ_{l|l}
        let jt = chol.solve(&(a * &filt.sig_f[l]));
        let j = jt.transpose();
        mu[l] = &filt.mu_f[l] + &j * (&mu[l + 1] - &filt.mu_pred[l + 1]);
        let mut s = &filt.sig_f[l] + &j * (&sig[l + 1] - pred) * &jt;
        symmetrize(&mut s);
        sig[l] = s;
        sig_cross.push(&j * &sig[l + 1]);
    }
    sig_cross.reverse();
    Ok(PosteriorMoments { mu, sig, sig_cross })
}

/// Filter then smooth; returns the posterior and the trajectory
/// log-likelihood.
pub fn smooth(params: &ModelParams, traj: &Trajectory) -> Result<(PosteriorMoments, f64)> {
    check_traj(params, traj)?;
    let steps = step_matrices_for(params, traj);
    let filt = kalman_forward_with(params, traj, &steps)?;
    let post = rts_smoother_with(&filt, &steps)?;
    Ok((post, filt.loglik))
}

/// Prior mean and covariance of the stacked latent states `(z_0, …, z_L)`,
/// obtained by unrolling the time-varying linear dynamics.
fn unrolled_prior(params: &ModelParams, steps: &[StepMatrices]) -> (DVector<f64>, DMatrix<f64>) {
    let n = params.n;
    let len = steps.len() + 1;
    let mut mean = DVector::zeros(len * n);
    let mut cov = DMatrix::zeros(len * n, len * n);
    mean.rows_mut(0, n).copy_from(&params.mu0);
    cov.view_mut((0, 0), (n, n)).copy_from(&params.sigma0);
    for (l, step) in steps.iter().enumerate() {
        let a = &step.a;
        let m = a * mean.rows(l * n, n) + &step.b;
        mean.rows_mut((l + 1) * n, n).copy_from(&m);
        // Cov(z_j, z_{l+1}) = Cov(z_j, z_l) Aᵀ for j <= l
        for j in 0..=l {
            let c = cov.view((j * n, l * n), (n, n)) * a.transpose();
            cov.view_mut((j * n, (l + 1) * n), (n, n)).copy_from(&c);
            cov.view_mut(((l + 1) * n, j * n), (n, n))
                .copy_from(&c.transpose());
        }
        let d = a * cov.view((l * n, l * n), (n, n)) * a.transpose() + &params.sigma_w;
        cov.view_mut(((l + 1) * n, (l + 1) * n), (n, n))
            .copy_from(&d);
    }
    (mean, cov)
}

struct DenseJoint {
    z_mean: DVector<f64>,
    z_cov: DMatrix<f64>,
    y_mean: DVector<f64>,
    y_cov: DMatrix<f64>,
    zy_cov: DMatrix<f64>,
    y_obs: DVector<f64>,
}

fn dense_joint(params: &ModelParams, traj: &Trajectory) -> Result<DenseJoint> {
    check_traj(params, traj)?;
    params.validate()?;
    let (n, p) = (params.n, params.p);
    let len = traj.outputs.len();
    if len * n > DENSE_ORACLE_CAP {
        return Err(Error::SizeCap {
            size: len * n,
            cap: DENSE_ORACLE_CAP,
        });
    }
    let steps = step_matrices_for(params, traj);
    let (z_mean, z_cov) = unrolled_prior(params, &steps);
    let mut c = DMatrix::zeros(len * p, len * n);
    let mut y_mean = DVector::zeros(len * p);
    let mut y_obs = DVector::zeros(len * p);
    for l in 0..len {
        for i in 0..p {
            c[(l * p + i, l * n + i)] = 1.0;
        }
        y_mean.rows_mut(l * p, p).copy_from(&params.c0);
        y_obs.rows_mut(l * p, p).copy_from(&traj.outputs[l]);
    }
    y_mean += &c * &z_mean;
    let mut y_cov = &c * &z_cov * c.transpose();
    for l in 0..len {
        let mut blk = y_cov.view_mut((l * p, l * p), (p, p));
        blk += &params.sigma_v;
    }
    let zy_cov = &z_cov * c.transpose();
    Ok(DenseJoint {
        z_mean,
        z_cov,
        y_mean,
        y_cov,
        zy_cov,
        y_obs,
    })
}

/// Exact posterior moments from the dense joint Gaussian of all latent
/// states and outputs, conditioned by a Schur complement. Intended as a
/// reference for small problems; `(L+1)·n` is capped at
/// [`DENSE_ORACLE_CAP`].
pub fn dense_posterior_oracle(params: &ModelParams, traj: &Trajectory) -> Result<PosteriorMoments> {
    let joint = dense_joint(params, traj)?;
    let n = params.n;
    let len = traj.outputs.len();
    let (mean, cov) = if params.p == 0 {
        (joint.z_mean.clone(), joint.z_cov.clone())
    } else {
        let chol = cholesky_jitter(&joint.y_cov)
            .ok_or_else(|| Error::SingularModel("output covariance is singular".into()))?;
        let gain_t = chol.solve(&joint.zy_cov.transpose());
        let mean = &joint.z_mean + gain_t.transpose() * (&joint.y_obs - &joint.y_mean);
        let cov = &joint.z_cov - &joint.zy_cov * &gain_t;
        (mean, cov)
    };
    let mut out = PosteriorMoments {
        mu: Vec::with_capacity(len),
        sig: Vec::with_capacity(len),
        sig_cross: Vec::with_capacity(len - 1),
    };
    for l in 0..len {
        out.mu.push(mean.rows(l * n, n).into_owned());
        let mut s = cov.view((l * n, l * n), (n, n)).into_owned();
        symmetrize(&mut s);
        out.sig.push(s);
        if l + 1 < len {
            out.sig_cross
                .push(cov.view((l * n, (l + 1) * n), (n, n)).into_owned());
        }
    }
    Ok(out)
}

/// Log-density of the whole output sequence under the dense joint Gaussian.
pub fn dense_log_likelihood(params: &ModelParams, traj: &Trajectory) -> Result<f64> {
    let joint = dense_joint(params, traj)?;
    if params.p == 0 {
        return Ok(0.0);
    }
    let chol = cholesky_jitter(&joint.y_cov)
        .ok_or_else(|| Error::SingularModel("output covariance is singular".into()))?;
    let r = &joint.y_obs - &joint.y_mean;
    let quad = r.dot(&chol.solve(&r));
    Ok(-0.5 * (r.len() as f64 * LN_2PI + log_det_chol(&chol) + quad))
}

/// Draws one latent trajectory from the exact smoothing distribution by
/// forward filtering, backward sampling.
pub fn sample_posterior<R: Rng + ?Sized>(
    params: &ModelParams,
    traj: &Trajectory,
    filt: &FilteredMoments,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    check_traj(params, traj)?;
    let steps = step_matrices_for(params, traj);
    let last = filt.mu_f.len() - 1;
    let mut out = vec![DVector::zeros(params.n); last + 1];
    out[last] = sample_gaussian(rng, &filt.mu_f[last], &psd_sqrt(&filt.sig_f[last]));
    for l in (0..last).rev() {
        let a = &steps[l].a;
        let pred = &filt.sig_pred[l + 1];
        let chol = cholesky_jitter(pred).ok_or_else(|| {
            Error::SingularModel(format!(
                "predicted covariance at step {} is singular",
                l + 1
            ))
        })?;
        let jt = chol.solve(&(a * &filt.sig_f[l]));
        let j = jt.transpose();
        let mean = &filt.mu_f[l] + &j * (&out[l + 1] - &filt.mu_pred[l + 1]);
        let mut cov = &filt.sig_f[l] - &j * pred * &jt;
        symmetrize(&mut cov);
        out[l] = sample_gaussian(rng, &mean, &psd_sqrt(&cov));
    }
    Ok(out)
}

/// Output forecast after state estimation on a prefix of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    /// Index of the first forecast sample (equal to the number of
    /// observations used for estimation).
    pub start: usize,
    /// Predicted output means for samples `start..=L`.
    pub mean: Vec<DVector<f64>>,
    /// Output standard deviations (sqrt of the diagonal of
    /// `C̃ Σ C̃ᵀ + Σ_v`).
    pub std: Vec<DVector<f64>>,
}

/// Estimates the latent state from the first `warmup` observations, then
/// propagates mean and covariance through the remaining inputs without
/// process noise.
pub fn forecast(params: &ModelParams, traj: &Trajectory, warmup: usize) -> Result<Forecast> {
    check_traj(params, traj)?;
    let len = traj.outputs.len();
    if warmup == 0 || warmup > len {
        return Err(Error::InvalidInput(format!(
            "warmup must lie in 1..={len}, got {warmup}"
        )));
    }
    let mut state = KalmanState::prior(params);
    for l in 0..warmup {
        if l > 0 {
            state.predict(params, &traj.inputs[l - 1])?;
        }
        state.update(params, &traj.outputs[l])?;
    }
    let p = params.p;
    let mut mu = state.mean;
    let mut sig = state.cov;
    let mut out = Forecast {
        start: warmup,
        mean: Vec::with_capacity(len - warmup),
        std: Vec::with_capacity(len - warmup),
    };
    for l in warmup..len {
        let sm = step_matrix(params, &traj.inputs[l - 1])?;
        mu = &sm.a * &mu + &sm.b;
        sig = &sm.a * &sig * sm.a.transpose();
        symmetrize(&mut sig);
        out.mean.push(params.observe(&mu));
        let var = sig.view((0, 0), (p, p)) + &params.sigma_v;
        out.std
            .push(DVector::from_fn(p, |i, _| var[(i, i)].max(0.0).sqrt()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_identity_model() -> ModelParams {
        // A = 1, b = 0, Σ_w = 0, Σ0 = 1, Σ_v = 1
        ModelParams::zeros(1, 0, 1, 0.1)
    }

    #[test]
    fn scalar_conjugate_update() {
        let p = scalar_identity_model();
        let traj = Trajectory {
            inputs: vec![],
            outputs: vec![DVector::from_vec(vec![2.0])],
        };
        let f = kalman_forward(&p, &traj).unwrap();
        assert_relative_eq!(f.mu_f[0][0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(f.sig_f[0][(0, 0)], 0.5, epsilon = 1e-15);
        // y ~ N(0, 2)
        let expect = -0.5 * ((2.0 * std::f64::consts::PI * 2.0).ln() + 4.0 / 2.0);
        assert_relative_eq!(f.loglik, expect, epsilon = 1e-14);
    }

    #[test]
    fn huge_measurement_noise_ignores_data() {
        let mut p = scalar_identity_model();
        p.sigma_v = DMatrix::from_element(1, 1, 1e14);
        let traj = Trajectory {
            inputs: vec![DVector::zeros(0); 3],
            outputs: vec![DVector::from_vec(vec![5.0]); 4],
        };
        let f = kalman_forward(&p, &traj).unwrap();
        for l in 0..4 {
            assert!((f.mu_f[l][0] - f.mu_pred[l][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn smoother_without_future_equals_filter() {
        let p = scalar_identity_model();
        let traj = Trajectory {
            inputs: vec![],
            outputs: vec![DVector::from_vec(vec![0.7])],
        };
        let f = kalman_forward(&p, &traj).unwrap();
        let s = rts_smoother(&p, &traj, &f).unwrap();
        assert_eq!(s.mu, f.mu_f);
        assert_eq!(s.sig, f.sig_f);
        assert!(s.sig_cross.is_empty());
    }

    #[test]
    fn oracle_l0_matches_conjugate_update() {
        let p = scalar_identity_model();
        let traj = Trajectory {
            inputs: vec![],
            outputs: vec![DVector::from_vec(vec![2.0])],
        };
        let o = dense_posterior_oracle(&p, &traj).unwrap();
        assert_relative_eq!(o.mu[0][0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(o.sig[0][(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn oracle_uninformative_data_returns_prior() {
        let mut p = ModelParams::zeros(2, 0, 1, 0.1);
        p.gen[0] = DMatrix::from_row_slice(3, 2, &[0.5, 0.0, -1.0, 0.3, 0.0, -2.0]);
        p.sigma_w = DMatrix::identity(2, 2) * 0.01;
        p.sigma_v = DMatrix::identity(1, 1) * 1e12;
        p.mu0 = DVector::from_vec(vec![1.0, -1.0]);
        let traj = Trajectory {
            inputs: vec![DVector::zeros(0); 3],
            outputs: vec![DVector::from_vec(vec![3.0]); 4],
        };
        let o = dense_posterior_oracle(&p, &traj).unwrap();
        let steps = step_matrices_for(&p, &traj);
        let mut m = p.mu0.clone();
        let mut s = p.sigma0.clone();
        for l in 0..4 {
            assert!((&o.mu[l] - &m).amax() < 1e-9);
            assert!((&o.sig[l] - &s).amax() < 1e-9);
            if let Some(st) = steps.get(l) {
                m = &st.a * &m + &st.b;
                s = &st.a * &s * st.a.transpose() + &p.sigma_w;
            }
        }
    }

    #[test]
    fn oracle_size_cap() {
        let p = ModelParams::zeros(3, 0, 1, 0.1);
        let traj = Trajectory {
            inputs: vec![DVector::zeros(0); 30],
            outputs: vec![DVector::zeros(1); 31],
        };
        assert!(matches!(
            dense_posterior_oracle(&p, &traj),
            Err(Error::SizeCap { .. })
        ));
    }

    #[test]
    fn smoother_recovers_deterministic_latent_path() {
        let mut p = ModelParams::zeros(2, 1, 2, 0.05);
        p.gen[0] = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, -0.5, 0.2, -0.1, -0.8]);
        p.gen[1] = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.5, 0.3, 0.0]);
        p.sigma_v = DMatrix::identity(2, 2) * 1e-10;
        p.sigma0 = DMatrix::identity(2, 2) * 10.0;
        let inputs: Vec<_> = (0..40)
            .map(|l| DVector::from_vec(vec![(l as f64 * 0.3).sin()]))
            .collect();
        let z0 = DVector::from_vec(vec![0.4, -1.2]);
        let sim = simulate(&p, &z0, &inputs, None).unwrap();
        let (post, _) = smooth(&p, &sim.trajectory).unwrap();
        for (m, z) in post.mu.iter().zip(&sim.states) {
            assert!((m - z).amax() < 1e-6);
        }
    }

    #[test]
    fn covariances_symmetric_after_smoothing() {
        let mut p = ModelParams::zeros(3, 1, 1, 0.1);
        p.gen[0] = DMatrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        p.gen[1] = DMatrix::from_fn(4, 3, |i, j| ((i + 2 * j) as f64 * 0.11).cos() * 0.3);
        p.sigma_w = DMatrix::identity(3, 3) * 0.05;
        let inputs = vec![DVector::from_vec(vec![0.5]); 20];
        let sim = simulate(&p, &DVector::zeros(3), &inputs, Some(3)).unwrap();
        let (post, _) = smooth(&p, &sim.trajectory).unwrap();
        for s in &post.sig {
            assert!((s - s.transpose()).amax() <= 1e-12);
        }
    }

    #[test]
    fn forecast_full_warmup_is_empty() {
        let p = scalar_identity_model();
        let traj = Trajectory {
            inputs: vec![DVector::zeros(0); 4],
            outputs: vec![DVector::from_vec(vec![1.0]); 5],
        };
        let f = forecast(&p, &traj, 5).unwrap();
        assert!(f.mean.is_empty());
        assert!(forecast(&p, &traj, 6).is_err());
        assert!(forecast(&p, &traj, 0).is_err());
    }

    #[test]
    fn posterior_samples_have_posterior_mean() {
        let mut p = ModelParams::zeros(1, 0, 1, 0.1);
        p.gen[0] = DMatrix::from_column_slice(2, 1, &[0.2, -0.5]);
        p.sigma_w = DMatrix::from_element(1, 1, 0.05);
        p.sigma_v = DMatrix::from_element(1, 1, 0.2);
        let traj = Trajectory {
            inputs: vec![DVector::zeros(0); 3],
            outputs: [0.3, 0.1, -0.2, 0.4]
                .iter()
                .map(|&v| DVector::from_vec(vec![v]))
                .collect(),
        };
        let f = kalman_forward(&p, &traj).unwrap();
        let post = rts_smoother(&p, &traj, &f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = 20000;
        let mut acc = [0.0; 4];
        let mut cross = 0.0;
        for _ in 0..k {
            let s = sample_posterior(&p, &traj, &f, &mut rng).unwrap();
            for (a, z) in acc.iter_mut().zip(&s) {
                *a += z[0];
            }
            cross += (s[1][0] - post.mu[1][0]) * (s[2][0] - post.mu[2][0]);
        }
        for (a, mu) in acc.iter().zip(&post.mu) {
            assert!((a / k as f64 - mu[0]).abs() < 0.02);
        }
        assert!((cross / k as f64 - post.sig_cross[1][(0, 0)]).abs() < 0.01);
    }
}
