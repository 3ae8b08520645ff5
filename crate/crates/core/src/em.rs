//! Expectation-maximization for the bilinear HMM.
//!
//! The M-step is closed form. Generator matrices solve the Kronecker normal
//! equations
//!
//! ```text
//! (Σ u ⊗ uᵀ ⊗ G_l) [Ṽ_0; …; Ṽ_q] = Σ u ⊗ H̃_lᵀ
//! ```
//!
//! with blocks ordered input-channel-major (channel `k = 0..=q` outer,
//! augmented state coordinate inner). Covariances are the residual second
//! moments divided by their sample counts.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::edmd::{edmd_generator_fit, lift_snapshots, Dictionary};
use crate::error::{Error, Result};
use crate::estimation::{kalman_forward_with, rts_smoother_with, PosteriorMoments};
use crate::linalg::{cholesky_jitter, floor_eigenvalues, log_det_chol, symmetrized, COV_FLOOR_REL};
use crate::model::{augment_input, step_matrices_for, step_matrix_unchecked, Dataset, ModelParams};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Sufficient statistics of the generator regression.
#[derive(Debug, Clone)]
pub struct MStepAccumulators {
    pub n: usize,
    pub q: usize,
    /// `Σ u ⊗ uᵀ ⊗ G_l`, `(q+1)(n+1)` square.
    pub kron_gram: DMatrix<f64>,
    /// `Σ u ⊗ H̃_lᵀ`, `(q+1)(n+1) × n`.
    pub kron_rhs: DMatrix<f64>,
}

impl MStepAccumulators {
    pub fn new(n: usize, q: usize) -> Self {
        let d = (q + 1) * (n + 1);
        MStepAccumulators {
            n,
            q,
            kron_gram: DMatrix::zeros(d, d),
            kron_rhs: DMatrix::zeros(d, n),
        }
    }

    /// Adds every transition of one trajectory.
    pub fn add_trajectory(&mut self, inputs: &[DVector<f64>], post: &PosteriorMoments, dt: f64) {
        let n = self.n;
        let n1 = n + 1;
        for (l, u) in inputs.iter().enumerate() {
            let g = second_moment(&post.mu[l], &post.sig[l]);
            let ht = h_tilde_t(post, l, dt);
            let ua = augment_input(u);
            for j in 0..=self.q {
                if ua[j] == 0.0 {
                    continue;
                }
                let mut rhs = self.kron_rhs.view_mut((j * n1, 0), (n1, n));
                let w = ua[j];
                rhs.zip_apply(&ht, |a, b| *a += w * b);
                for k in 0..=self.q {
                    let w = ua[j] * ua[k];
                    if w != 0.0 {
                        let mut blk = self.kron_gram.view_mut((j * n1, k * n1), (n1, n1));
                        blk.zip_apply(&g, |a, b| *a += w * b);
                    }
                }
            }
        }
    }

    /// Solves the normal equations for the generator stack.
    pub fn solve(&self) -> Result<DMatrix<f64>> {
        let gram = symmetrized(self.kron_gram.clone());
        match cholesky_jitter(&gram) {
            Some(c) => Ok(c.solve(&self.kron_rhs)),
            None => Err(Error::Identifiability(deficient_block(&gram, self.n + 1))),
        }
    }
}

fn deficient_block(gram: &DMatrix<f64>, block: usize) -> String {
    let channels = gram.nrows() / block;
    for k in 0..channels {
        let b = gram
            .view((k * block, k * block), (block, block))
            .into_owned();
        if cholesky_jitter(&b).is_none() {
            return format!(
                "Kronecker Gram block of input channel {k} is singular (channel never excited or latent moments degenerate)"
            );
        }
    }
    "Kronecker Gram is singular (input channels are collinear)".into()
}

/// `G_l = E[(1, z)(1, z)ᵀ]`.
fn second_moment(mu: &DVector<f64>, sig: &DMatrix<f64>) -> DMatrix<f64> {
    let n = mu.len();
    let mut g = DMatrix::zeros(n + 1, n + 1);
    g[(0, 0)] = 1.0;
    g.view_mut((1, 0), (n, 1)).copy_from(mu);
    g.view_mut((0, 1), (1, n)).copy_from(&mu.transpose());
    g.view_mut((1, 1), (n, n))
        .copy_from(&(sig + mu * mu.transpose()));
    g
}

/// `H̃_lᵀ = E[(1, z_l) ż_lᵀ]` with `ż_l = (z_{l+1} − z_l)/dt`.
fn h_tilde_t(post: &PosteriorMoments, l: usize, dt: f64) -> DMatrix<f64> {
    let mu = &post.mu[l];
    let n = mu.len();
    let dmu = (&post.mu[l + 1] - mu) / dt;
    let mut ht = DMatrix::zeros(n + 1, n);
    ht.view_mut((0, 0), (1, n)).copy_from(&dmu.transpose());
    // (Σ_{l,l+1} − Σ_{l,l})/dt + μ_l (Δμ/dt)ᵀ
    let blk = (&post.sig_cross[l] - &post.sig[l]) / dt + mu * dmu.transpose();
    ht.view_mut((1, 0), (n, n)).copy_from(&blk);
    ht
}

fn check_posteriors(dataset: &Dataset, posts: &[PosteriorMoments], n: usize) -> Result<()> {
    if dataset.trajectories.is_empty() {
        return Err(Error::InvalidInput("dataset has no trajectories".into()));
    }
    if posts.len() != dataset.trajectories.len() {
        return Err(Error::Dimension {
            context: "posteriors per trajectory",
            expected: dataset.trajectories.len(),
            found: posts.len(),
        });
    }
    for (t, p) in dataset.trajectories.iter().zip(posts) {
        if p.mu.len() != t.outputs.len() || p.sig_cross.len() != t.inputs.len() {
            return Err(Error::Dimension {
                context: "posterior length",
                expected: t.outputs.len(),
                found: p.mu.len(),
            });
        }
        if p.mu.first().map(|m| m.len()) != Some(n) {
            return Err(Error::Dimension {
                context: "posterior state dimension",
                expected: n,
                found: p.mu.first().map_or(0, |m| m.len()),
            });
        }
    }
    Ok(())
}

/// Residual second-moment matrices `W_i` of the three decoupled objectives,
/// with their counts `α_i`. Each covariance update is `Σ_i = W_i / α_i`.
#[derive(Debug, Clone)]
pub struct ResidualMoments {
    pub w_init: DMatrix<f64>,
    pub alpha_init: f64,
    pub w_obs: DMatrix<f64>,
    pub alpha_obs: f64,
    pub w_dyn: DMatrix<f64>,
    pub alpha_dyn: f64,
}

/// Accumulates `W_1(μ0)`, `W_2(c0)` and `W_3(Ṽ)` at the given parameters.
pub fn residual_moments(
    dataset: &Dataset,
    posts: &[PosteriorMoments],
    params: &ModelParams,
) -> Result<ResidualMoments> {
    check_posteriors(dataset, posts, params.n)?;
    let (n, p) = (params.n, params.p);
    let mut w_init = DMatrix::zeros(n, n);
    let mut w_obs = DMatrix::zeros(p, p);
    let mut w_dyn = DMatrix::zeros(n, n);
    let mut n_obs = 0usize;
    let mut n_trans = 0usize;
    for (traj, post) in dataset.trajectories.iter().zip(posts) {
        let d0 = &post.mu[0] - &params.mu0;
        w_init += &post.sig[0] + &d0 * d0.transpose();
        for (y, (mu, sig)) in traj.outputs.iter().zip(post.mu.iter().zip(&post.sig)) {
            let r = y - &params.c0 - mu.rows(0, p);
            w_obs += sig.view((0, 0), (p, p)) + &r * r.transpose();
        }
        n_obs += traj.outputs.len();
        for (l, u) in traj.inputs.iter().enumerate() {
            let sm = step_matrix_unchecked(params, u);
            let a = &sm.a;
            let cross = a * &post.sig_cross[l];
            let r = &post.mu[l + 1] - a * &post.mu[l] - &sm.b;
            w_dyn += &post.sig[l + 1] - &cross - cross.transpose()
                + a * &post.sig[l] * a.transpose()
                + &r * r.transpose();
        }
        n_trans += traj.inputs.len();
    }
    Ok(ResidualMoments {
        w_init: symmetrized(w_init),
        alpha_init: dataset.trajectories.len() as f64,
        w_obs: symmetrized(w_obs),
        alpha_obs: n_obs as f64,
        w_dyn: symmetrized(w_dyn),
        alpha_dyn: n_trans as f64,
    })
}

/// The decoupled M-step objectives `(L1, L2, L3)`; the expected complete-data
/// log-likelihood equals `-(L1 + L2 + L3) / 2`.
pub fn decoupled_objectives(
    dataset: &Dataset,
    posts: &[PosteriorMoments],
    params: &ModelParams,
) -> Result<(f64, f64, f64)> {
    let rm = residual_moments(dataset, posts, params)?;
    let term = |alpha: f64, sigma: &DMatrix<f64>, w: &DMatrix<f64>| -> Result<f64> {
        if sigma.nrows() == 0 {
            return Ok(0.0);
        }
        let c = cholesky_jitter(sigma)
            .ok_or_else(|| Error::SingularModel("covariance is not positive definite".into()))?;
        let logdet = sigma.nrows() as f64 * LN_2PI + log_det_chol(&c);
        Ok(alpha * logdet + c.solve(w).trace())
    };
    Ok((
        term(rm.alpha_init, &params.sigma0, &rm.w_init)?,
        term(rm.alpha_obs, &params.sigma_v, &rm.w_obs)?,
        term(rm.alpha_dyn, &params.sigma_w, &rm.w_dyn)?,
    ))
}

/// Closed-form maximizer of the evidence lower bound for fixed posteriors.
///
/// Update order: `(μ0, Σ0)`, `c0`, `Σ_v`, generators, then `Σ_w` evaluated
/// with the new generators. Learned covariances are floored at
/// `1e-12 · trace / dim`.
pub fn m_step(
    dataset: &Dataset,
    posteriors: &[PosteriorMoments],
    old: &ModelParams,
) -> Result<ModelParams> {
    let (n, q, p) = (old.n, old.q, old.p);
    check_posteriors(dataset, posteriors, n)?;
    let m = dataset.trajectories.len() as f64;
    let mut new = old.clone();

    new.mu0 = posteriors
        .iter()
        .fold(DVector::zeros(n), |acc, post| acc + &post.mu[0])
        / m;

    let mut c0 = DVector::zeros(p);
    let mut n_obs = 0usize;
    for (traj, post) in dataset.trajectories.iter().zip(posteriors) {
        for (y, mu) in traj.outputs.iter().zip(&post.mu) {
            c0 += y - mu.rows(0, p);
        }
        n_obs += traj.outputs.len();
    }
    new.c0 = c0 / n_obs as f64;

    let mut acc = MStepAccumulators::new(n, q);
    for (traj, post) in dataset.trajectories.iter().zip(posteriors) {
        acc.add_trajectory(&traj.inputs, post, old.dt);
    }
    let stack = acc.solve()?;
    new.set_generator_stack(&stack);

    let rm = residual_moments(dataset, posteriors, &new)?;
    new.sigma0 = floor_eigenvalues(&(rm.w_init / rm.alpha_init), COV_FLOOR_REL);
    new.sigma_v = floor_eigenvalues(&(rm.w_obs / rm.alpha_obs), COV_FLOOR_REL);
    if rm.alpha_dyn > 0.0 {
        new.sigma_w = floor_eigenvalues(&(rm.w_dyn / rm.alpha_dyn), COV_FLOOR_REL);
    }
    Ok(new)
}

/// Runs the E-step on every trajectory. Trajectories are processed in
/// parallel; results keep trajectory order and the log-likelihood is summed
/// in that order.
pub fn e_step(dataset: &Dataset, params: &ModelParams) -> Result<(Vec<PosteriorMoments>, f64)> {
    let results: Vec<Result<(PosteriorMoments, f64)>> = dataset
        .trajectories
        .par_iter()
        .map(|traj| {
            let steps = step_matrices_for(params, traj);
            let filt = kalman_forward_with(params, traj, &steps)?;
            let post = rts_smoother_with(&filt, &steps)?;
            Ok((post, filt.loglik))
        })
        .collect();
    let mut posts = Vec::with_capacity(results.len());
    let mut loglik = 0.0;
    for r in results {
        let (post, ll) = r?;
        loglik += ll;
        posts.push(post);
    }
    Ok((posts, loglik))
}

/// Total innovations log-likelihood of a dataset.
pub fn log_likelihood(dataset: &Dataset, params: &ModelParams) -> Result<f64> {
    dataset.check_compatible(params)?;
    Ok(e_step(dataset, params)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Stop once `(L_new − L_old) / |L_old| < rel_tol`.
    pub rel_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 500,
            rel_tol: 1e-7,
        }
    }
}

/// Why an EM run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The relative likelihood increase fell below `rel_tol`.
    Converged,
    MaxIterations,
    /// The likelihood dropped by more than `1e-8 (1 + |L|)`, which exact EM
    /// cannot do; the run is stopped at the last good iterate.
    LikelihoodDecrease,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters of the last iterate whose likelihood did not drop.
    pub params: ModelParams,
    /// Log-likelihood of `params`.
    pub loglik: f64,
    /// Log-likelihood of every evaluated iterate, starting with the
    /// initialization.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub stop: StopReason,
    pub iterations: usize,
}

impl FitResult {
    pub fn final_loglik(&self) -> f64 {
        self.loglik
    }
}

/// Tolerance for a likelihood decrease attributed to round-off.
pub fn decrease_tolerance(ll: f64) -> f64 {
    1e-8 * (1.0 + ll.abs())
}

pub fn fit(dataset: &Dataset, init: &ModelParams, config: &FitConfig) -> Result<FitResult> {
    fit_with_observer(dataset, init, config, |_, _| {})
}

/// [`fit`] with a callback invoked after every likelihood evaluation with
/// `(iteration, loglik)`.
pub fn fit_with_observer<F: FnMut(usize, f64)>(
    dataset: &Dataset,
    init: &ModelParams,
    config: &FitConfig,
    mut observe: F,
) -> Result<FitResult> {
    init.validate()?;
    dataset.validate()?;
    dataset.check_compatible(init)?;
    if dataset.trajectories.is_empty() {
        return Err(Error::InvalidInput("dataset has no trajectories".into()));
    }
    let mut params = init.clone();
    let (mut posts, mut ll) = e_step(dataset, &params)?;
    if !ll.is_finite() {
        return Err(Error::Numerical(
            "log-likelihood of the initial model is not finite".into(),
        ));
    }
    observe(0, ll);
    let mut trace = vec![ll];
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    while iterations < config.max_iters {
        let next = m_step(dataset, &posts, &params)?;
        let (next_posts, next_ll) = e_step(dataset, &next)?;
        iterations += 1;
        if !next_ll.is_finite() {
            return Err(Error::Numerical(format!(
                "log-likelihood became {next_ll} at EM iteration {iterations}"
            )));
        }
        observe(iterations, next_ll);
        trace.push(next_ll);
        if next_ll < ll - decrease_tolerance(ll) {
            stop = StopReason::LikelihoodDecrease;
            break;
        }
        let rel = (next_ll - ll) / ll.abs().max(f64::MIN_POSITIVE);
        params = next;
        posts = next_posts;
        ll = next_ll;
        if rel < config.rel_tol {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(FitResult {
        params,
        loglik: ll,
        loglik_trace: trace,
        converged: stop == StopReason::Converged,
        stop,
        iterations,
    })
}

/// Random initialization following the circular law: the latent block of
/// `I + dt V_0` and of each `dt · max|u_k| · V_k` has eigenvalues spread
/// approximately over the unit disk.
pub fn init_random(
    n: usize,
    q: usize,
    p: usize,
    dt: f64,
    input_bounds: &[(f64, f64)],
    seed: u64,
) -> Result<ModelParams> {
    init_random_scaled(n, q, p, dt, input_bounds, seed, dt)
}

/// [`init_random`] with the circular law applied over `time_scale` instead
/// of one sampling interval: `I + τ V_0` and `τ · max|u_k| · V_k` fill the
/// unit disk, so drift rates are of order `1/τ`.
pub fn init_random_scaled(
    n: usize,
    q: usize,
    p: usize,
    dt: f64,
    input_bounds: &[(f64, f64)],
    seed: u64,
    time_scale: f64,
) -> Result<ModelParams> {
    if input_bounds.len() != q {
        return Err(Error::Dimension {
            context: "input bounds",
            expected: q,
            found: input_bounds.len(),
        });
    }
    if input_bounds
        .iter()
        .any(|(a, b)| !a.is_finite() || !b.is_finite())
    {
        return Err(Error::InvalidInput("input bounds must be finite".into()));
    }
    if !(time_scale.is_finite() && time_scale > 0.0) {
        return Err(Error::InvalidInput("time scale must be positive".into()));
    }
    let tau = time_scale;
    let mut params = ModelParams::zeros(n, q, p, dt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = 1.0 / (n.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid normal");
    for k in 0..=q {
        let scale = if k == 0 {
            1.0 / tau
        } else {
            let (lo, hi) = input_bounds[k - 1];
            let umax = lo.abs().max(hi.abs());
            1.0 / (tau * if umax > 0.0 { umax } else { 1.0 })
        };
        let mut g = DMatrix::zeros(n + 1, n);
        for i in 1..=n {
            for j in 0..n {
                g[(i, j)] = normal.sample(&mut rng) * scale;
            }
        }
        if k == 0 {
            // I + τ V_0 = R  ⇒  latent block of V_0 = (R − I)/τ
            for i in 0..n {
                g[(i + 1, i)] -= 1.0 / tau;
            }
        }
        params.gen[k] = g;
    }
    params.sigma_w = DMatrix::identity(n, n) * 1e-2;
    params.sigma_v = DMatrix::identity(p, p) * 1e-1;
    params.mu0 = DVector::zeros(n);
    params.sigma0 = DMatrix::identity(n, n);
    Ok(params)
}

/// Per-channel `(min, max)` of the inputs in a dataset.
pub fn input_bounds(dataset: &Dataset) -> Vec<(f64, f64)> {
    let mut b = vec![(f64::INFINITY, f64::NEG_INFINITY); dataset.q];
    for t in &dataset.trajectories {
        for u in &t.inputs {
            for (k, v) in u.iter().enumerate() {
                b[k].0 = b[k].0.min(*v);
                b[k].1 = b[k].1.max(*v);
            }
        }
    }
    b.into_iter()
        .map(|(lo, hi)| if lo <= hi { (lo, hi) } else { (0.0, 0.0) })
        .collect()
}

/// Dictionary lift in the basis used by [`init_from_edmd`]: the first `p`
/// latent coordinates are exactly the outputs, followed by the dictionary
/// functions not displaced by them.
#[derive(Debug, Clone)]
pub struct EdmdLift {
    pub dict: Dictionary,
    /// Maps dictionary values to `(1, z)`.
    pub basis: DMatrix<f64>,
}

impl EdmdLift {
    /// Builds the basis change for full-state outputs of `dataset`. The
    /// dictionary must contain the constant and span the output coordinate
    /// functions.
    pub fn new(dataset: &Dataset, dict: &Dictionary) -> Result<Self> {
        if dataset.trajectories.is_empty() {
            return Err(Error::InvalidInput("dataset has no trajectories".into()));
        }
        dataset.validate()?;
        if dict.dim_in() != dataset.p {
            return Err(Error::Dimension {
                context: "dictionary input dimension",
                expected: dataset.p,
                found: dict.dim_in(),
            });
        }
        let p = dataset.p;
        let nf = dict.len();
        if nf < p + 1 {
            return Err(Error::InvalidInput(
                "dictionary must contain the constant and the coordinate functions".into(),
            ));
        }

        // Express each output coordinate in the dictionary by least squares.
        let mut psi_gram = DMatrix::zeros(nf, nf);
        let mut cross = DMatrix::zeros(p, nf);
        let mut y_scale: f64 = 0.0;
        for t in &dataset.trajectories {
            for y in &t.outputs {
                let psi = dict.eval(y.as_slice());
                psi_gram += &psi * psi.transpose();
                cross += y * psi.transpose();
                y_scale = y_scale.max(y.amax());
            }
        }
        let chol = cholesky_jitter(&psi_gram).ok_or_else(|| {
            Error::Identifiability("dictionary Gram matrix is singular on the data".into())
        })?;
        let coords = chol.solve(&cross.transpose()).transpose();
        for t in &dataset.trajectories {
            for y in &t.outputs {
                let r = y - &coords * dict.eval(y.as_slice());
                if r.amax() > 1e-6 * (1.0 + y_scale) {
                    return Err(Error::InvalidInput(
                        "dictionary lacks the constant or coordinate functions of the outputs"
                            .into(),
                    ));
                }
            }
        }

        // Basis change: row 0 keeps the constant, rows 1..=p are the coordinate
        // functions, remaining rows are the dictionary functions not displaced.
        let mut displaced = vec![false; nf];
        displaced[0] = true;
        for i in 0..p {
            let pivot = (1..nf)
                .filter(|&j| !displaced[j])
                .max_by(|&a, &b| coords[(i, a)].abs().total_cmp(&coords[(i, b)].abs()))
                .ok_or_else(|| Error::InvalidInput("dictionary too small".into()))?;
            if coords[(i, pivot)].abs() < 1e-12 {
                return Err(Error::InvalidInput(
                    "dictionary lacks the coordinate functions of the outputs".into(),
                ));
            }
            displaced[pivot] = true;
        }
        let mut t = DMatrix::zeros(nf, nf);
        t[(0, 0)] = 1.0;
        for i in 0..p {
            t.view_mut((i + 1, 0), (1, nf)).copy_from(&coords.row(i));
        }
        let mut row = p + 1;
        for (j, &d) in displaced.iter().enumerate() {
            if !d {
                t[(row, j)] = 1.0;
                row += 1;
            }
        }
        if t.clone().lu().determinant().abs() < 1e-12 {
            return Err(Error::InvalidInput(
                "dictionary basis change is singular".into(),
            ));
        }
        Ok(EdmdLift {
            dict: dict.clone(),
            basis: t,
        })
    }

    /// Latent state `z` of an output `y`.
    pub fn lift(&self, y: &[f64]) -> DVector<f64> {
        let nf = self.dict.len();
        (&self.basis * self.dict.eval(y))
            .rows(1, nf - 1)
            .into_owned()
    }
}

/// Initial model from generator EDMD on a dictionary evaluated at the
/// (full-state) outputs, in the basis of [`EdmdLift`] so that
/// `C = [0 | I | 0]`.
pub fn init_from_edmd(dataset: &Dataset, dict: &Dictionary) -> Result<ModelParams> {
    Ok(init_from_edmd_lift(dataset, dict)?.0)
}

/// [`init_from_edmd`] returning the lift as well.
pub fn init_from_edmd_lift(
    dataset: &Dataset,
    dict: &Dictionary,
) -> Result<(ModelParams, EdmdLift)> {
    let lift = EdmdLift::new(dataset, dict)?;
    let p = dataset.p;
    let nf = dict.len();
    let lifted: Vec<Vec<DVector<f64>>> = dataset
        .trajectories
        .iter()
        .map(|tr| tr.outputs.iter().map(|y| lift.lift(y.as_slice())).collect())
        .collect();
    let n = nf - 1;
    let (psi, psi_dot) = lift_snapshots(
        dataset.trajectories.iter().map(|t| t.inputs.as_slice()),
        lifted.iter().map(|v| v.as_slice()),
        dataset.dt,
    )?;
    let stack = edmd_generator_fit(&psi, &psi_dot)?;

    let mut params = ModelParams::zeros(n, dataset.q, p, dataset.dt);
    params.set_generator_stack(&stack);
    params.c0 = DVector::zeros(p);

    let m = lifted.len() as f64;
    let mu0 = lifted.iter().fold(DVector::zeros(n), |a, z| a + &z[0]) / m;
    let mut s0 = lifted.iter().fold(DMatrix::zeros(n, n), |a, z| {
        let d = &z[0] - &mu0;
        a + &d * d.transpose()
    }) / m;
    s0 += DMatrix::identity(n, n) * 1e-6;
    params.mu0 = mu0;
    params.sigma0 = s0;

    // process noise from the one-step residuals of the EDMD model
    let mut w = DMatrix::zeros(n, n);
    let mut count = 0usize;
    for (tr, z) in dataset.trajectories.iter().zip(&lifted) {
        for (l, u) in tr.inputs.iter().enumerate() {
            let sm = step_matrix_unchecked(&params, u);
            let r = &z[l + 1] - &sm.a * &z[l] - &sm.b;
            w += &r * r.transpose();
            count += 1;
        }
    }
    let w = if count > 0 { w / count as f64 } else { w };
    params.sigma_w = floor_eigenvalues(&(symmetrized(w) + DMatrix::identity(n, n) * 1e-10), 1e-6);
    params.sigma_v = DMatrix::identity(p, p) * 1e-4;
    Ok((params, lift))
}

/// One row of the model-selection table.
#[derive(Debug, Clone)]
pub struct SelectionRun {
    pub dim: usize,
    pub seed: u64,
    pub final_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: Option<StopReason>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SelectConfig {
    pub fit: FitConfig,
    /// Seed of restart `r` is `base_seed + r`.
    pub base_seed: u64,
    /// Time scale of the random initialization; `None` uses `dt`.
    pub init_time_scale: Option<f64>,
}

/// Fits every `(dim, restart)` pair from random initializations and returns
/// the converged run with the largest final log-likelihood, together with
/// the table of all runs.
pub fn select_model(
    dataset: &Dataset,
    dims: &[usize],
    restarts: usize,
    config: &SelectConfig,
) -> std::result::Result<(FitResult, Vec<SelectionRun>), (Error, Vec<SelectionRun>)> {
    if restarts == 0 || dims.is_empty() {
        return Err((
            Error::InvalidInput("need at least one dimension and one restart".into()),
            Vec::new(),
        ));
    }
    let bounds = input_bounds(dataset);
    let mut table = Vec::new();
    let mut best: Option<FitResult> = None;
    for &dim in dims {
        for r in 0..restarts {
            let seed = config.base_seed + r as u64;
            let tau = config.init_time_scale.unwrap_or(dataset.dt);
            let outcome =
                init_random_scaled(dim, dataset.q, dataset.p, dataset.dt, &bounds, seed, tau)
                    .and_then(|init| fit(dataset, &init, &config.fit));
            match outcome {
                Ok(res) => {
                    table.push(SelectionRun {
                        dim,
                        seed,
                        final_loglik: res.final_loglik(),
                        iterations: res.iterations,
                        converged: res.converged,
                        stop: Some(res.stop),
                        error: None,
                    });
                    let better = best
                        .as_ref()
                        .is_none_or(|b| res.final_loglik() > b.final_loglik());
                    if res.converged && better {
                        best = Some(res);
                    }
                }
                Err(e) => table.push(SelectionRun {
                    dim,
                    seed,
                    final_loglik: f64::NAN,
                    iterations: 0,
                    converged: false,
                    stop: None,
                    error: Some(e.to_string()),
                }),
            }
        }
    }
    match best {
        Some(b) => Ok((b, table)),
        None => {
            let n = table.len();
            Err((Error::NoConvergedRun(n), table))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::smooth;
    use crate::model::{simulate, Trajectory};

    fn one_state_bilinear() -> ModelParams {
        let mut p = ModelParams::zeros(1, 1, 1, 0.05);
        p.gen[0] = DMatrix::from_column_slice(2, 1, &[0.3, -0.8]);
        p.gen[1] = DMatrix::from_column_slice(2, 1, &[1.0, 0.4]);
        p.sigma_v = DMatrix::from_element(1, 1, 0.01);
        p
    }

    fn exact_dataset(params: &ModelParams, m: usize) -> (Dataset, Vec<Vec<DVector<f64>>>) {
        let mut trajs = Vec::new();
        let mut states = Vec::new();
        for i in 0..m {
            let inputs: Vec<_> = (0..30)
                .map(|l| DVector::from_vec(vec![((l * (i + 2)) as f64 * 0.37).sin() * 2.0]))
                .collect();
            let z0 = DVector::from_vec(vec![0.5 + i as f64 * 0.3]);
            let sim = simulate(params, &z0, &inputs, None).unwrap();
            trajs.push(sim.trajectory);
            states.push(sim.states);
        }
        (
            Dataset {
                dt: params.dt,
                p: params.p,
                q: params.q,
                trajectories: trajs,
            },
            states,
        )
    }

    #[test]
    fn initial_mean_is_sample_mean() {
        let params = ModelParams::zeros(1, 0, 1, 0.1);
        let mk = |v: f64| PosteriorMoments::exact(&vec![DVector::from_vec(vec![v]); 2]);
        let traj = Trajectory {
            inputs: vec![DVector::zeros(0)],
            outputs: vec![DVector::from_vec(vec![0.0]); 2],
        };
        let ds = Dataset {
            dt: 0.1,
            p: 1,
            q: 0,
            trajectories: vec![traj.clone(), traj],
        };
        let mut posts = vec![mk(1.0), mk(3.0)];
        // avoid a singular Gram: give the posteriors some spread
        posts[0].sig[0][(0, 0)] = 0.1;
        let new = m_step(&ds, &posts, &params).unwrap();
        assert!((new.mu0[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn exact_states_recover_generators() {
        let truth = one_state_bilinear();
        let (ds, states) = exact_dataset(&truth, 4);
        let posts: Vec<_> = states.iter().map(|s| PosteriorMoments::exact(s)).collect();
        let new = m_step(&ds, &posts, &truth).unwrap();
        for k in 0..2 {
            assert!(
                (&new.gen[k] - &truth.gen[k]).amax() < 1e-10,
                "{k}: {}",
                new.gen[k]
            );
        }
        // residual-free transitions give a (floored) zero process noise
        assert!(new.sigma_w[(0, 0)].abs() < 1e-20);
    }

    #[test]
    fn zero_iterations_return_init() {
        let truth = one_state_bilinear();
        let (ds, _) = exact_dataset(&truth, 2);
        let cfg = FitConfig {
            max_iters: 0,
            rel_tol: 1e-7,
        };
        let res = fit(&ds, &truth, &cfg).unwrap();
        assert_eq!(res.params, truth);
        assert_eq!(res.loglik_trace.len(), 1);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn random_init_is_deterministic_and_shaped() {
        let a = init_random(4, 2, 1, 0.01, &[(-1.0, 1.0), (-3.0, 2.0)], 7).unwrap();
        let b = init_random(4, 2, 1, 0.01, &[(-1.0, 1.0), (-3.0, 2.0)], 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.gen.len(), 3);
        assert!(a.gen.iter().all(|g| g.row(0).amax() == 0.0));
        let c = init_random(3, 0, 1, 0.01, &[], 1).unwrap();
        assert_eq!(c.gen.len(), 1);
    }

    #[test]
    fn lemma_covariances_equal_scaled_residuals() {
        let mut truth = one_state_bilinear();
        truth.sigma_w = DMatrix::from_element(1, 1, 0.02);
        truth.sigma_v = DMatrix::from_element(1, 1, 0.05);
        let mut trajs = Vec::new();
        for i in 0..3u64 {
            let inputs: Vec<_> = (0..25)
                .map(|l| DVector::from_vec(vec![(l as f64 * 0.5).cos()]))
                .collect();
            let sim = simulate(&truth, &DVector::from_vec(vec![1.0]), &inputs, Some(i)).unwrap();
            trajs.push(sim.trajectory);
        }
        let ds = Dataset {
            dt: truth.dt,
            p: 1,
            q: 1,
            trajectories: trajs,
        };
        let posts: Vec<_> = ds
            .trajectories
            .iter()
            .map(|t| smooth(&truth, t).unwrap().0)
            .collect();
        let new = m_step(&ds, &posts, &truth).unwrap();

        // independent accumulation straight from the formulas
        let mut w3 = 0.0;
        let mut w2 = 0.0;
        let mut cnt3 = 0.0;
        let mut cnt2 = 0.0;
        for (t, post) in ds.trajectories.iter().zip(&posts) {
            for l in 0..=t.inputs.len() {
                let r = t.outputs[l][0] - new.c0[0] - post.mu[l][0];
                w2 += post.sig[l][(0, 0)] + r * r;
                cnt2 += 1.0;
            }
            for l in 0..t.inputs.len() {
                let u = t.inputs[l][0];
                let a = 1.0 + new.dt * (new.gen[0][(1, 0)] + u * new.gen[1][(1, 0)]);
                let b = new.dt * (new.gen[0][(0, 0)] + u * new.gen[1][(0, 0)]);
                let r = post.mu[l + 1][0] - a * post.mu[l][0] - b;
                w3 += post.sig[l + 1][(0, 0)] - 2.0 * a * post.sig_cross[l][(0, 0)]
                    + a * a * post.sig[l][(0, 0)]
                    + r * r;
                cnt3 += 1.0;
            }
        }
        assert!((new.sigma_w[(0, 0)] - w3 / cnt3).abs() < 1e-12 * (1.0 + w3 / cnt3));
        assert!((new.sigma_v[(0, 0)] - w2 / cnt2).abs() < 1e-12);
    }
}
