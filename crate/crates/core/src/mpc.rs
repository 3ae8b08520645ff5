//! Surrogate-model optimal control with adjoint gradients and a receding
//! horizon loop closed through the Kalman filter.
//!
//! The open-loop problem over `n_p` steps is
//!
//! ```text
//! min  dt Σ_{j=0..n_p} (y_j − r_j)ᵀ Q (y_j − r_j) + dt Σ_{j<n_p} u_jᵀ R u_j
//! s.t. z_{j+1} = A(u_j) z_j + b(u_j),  y_j = c0 + [I 0] z_j,  u_min ≤ u_j ≤ u_max
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::estimation::KalmanState;
use crate::model::{augment_state, step_matrix_unchecked, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSpec {
    pub q_weight: DMatrix<f64>,
    pub r_weight: DMatrix<f64>,
    pub n_p: usize,
    pub n_c: usize,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    /// At least `n_p + 1` reference outputs.
    pub y_ref: Vec<DVector<f64>>,
}

impl OcpSpec {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        let (p, q) = (params.p, params.q);
        check_dim("tracking weight Q", p, self.q_weight.nrows())?;
        check_dim("tracking weight Q", p, self.q_weight.ncols())?;
        check_dim("input weight R", q, self.r_weight.nrows())?;
        check_dim("input weight R", q, self.r_weight.ncols())?;
        check_dim("u_min", q, self.u_min.len())?;
        check_dim("u_max", q, self.u_max.len())?;
        if self.n_p == 0 || self.n_c == 0 || self.n_c > self.n_p {
            return Err(Error::InvalidInput("need 1 <= n_c <= n_p".into()));
        }
        if self
            .u_min
            .iter()
            .zip(self.u_max.iter())
            .any(|(a, b)| a.partial_cmp(b).is_none_or(|o| o.is_gt()))
        {
            return Err(Error::InvalidInput("u_min must not exceed u_max".into()));
        }
        if self.y_ref.len() < self.n_p + 1 {
            return Err(Error::Dimension {
                context: "reference length",
                expected: self.n_p + 1,
                found: self.y_ref.len(),
            });
        }
        if let Some(r) = self.y_ref.iter().find(|r| r.len() != p) {
            return Err(Error::Dimension {
                context: "reference output",
                expected: p,
                found: r.len(),
            });
        }
        Ok(())
    }

    fn project(&self, u: &mut DVector<f64>) {
        for k in 0..u.len() {
            u[k] = u[k].clamp(self.u_min[k], self.u_max[k]);
        }
    }

    /// Copy of the spec tracking `y_ref[offset..]`, padding with the last
    /// reference value.
    pub fn shifted(&self, offset: usize) -> OcpSpec {
        let last = self.y_ref.last().cloned().unwrap_or_default();
        let y_ref = (0..=self.n_p)
            .map(|j| {
                self.y_ref
                    .get(offset + j)
                    .cloned()
                    .unwrap_or_else(|| last.clone())
            })
            .collect();
        OcpSpec {
            y_ref,
            ..self.clone()
        }
    }
}

/// Noise-free latent trajectory `z_0..z_{n_p}`.
fn rollout_states(
    params: &ModelParams,
    z0: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let mut zs = Vec::with_capacity(inputs.len() + 1);
    zs.push(z0.clone());
    for u in inputs {
        let sm = step_matrix_unchecked(params, u);
        let next = &sm.a * zs.last().expect("non-empty") + &sm.b;
        zs.push(next);
    }
    zs
}

fn check_rollout(params: &ModelParams, z0: &DVector<f64>, inputs: &[DVector<f64>]) -> Result<()> {
    check_dim("initial latent state", params.n, z0.len())?;
    if let Some(u) = inputs.iter().find(|u| u.len() != params.q) {
        return Err(Error::Dimension {
            context: "input vector",
            expected: params.q,
            found: u.len(),
        });
    }
    Ok(())
}

/// Noise-free outputs `y_0..y_{n_p}` driven by `inputs`.
pub fn rollout(
    params: &ModelParams,
    z0: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    check_rollout(params, z0, inputs)?;
    Ok(rollout_states(params, z0, inputs)
        .iter()
        .map(|z| params.observe(z))
        .collect())
}

fn check_horizon(
    params: &ModelParams,
    spec: &OcpSpec,
    z0: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Result<()> {
    spec.validate(params)?;
    check_rollout(params, z0, inputs)?;
    check_dim("control sequence length", spec.n_p, inputs.len())
}

fn cost_of_states(
    params: &ModelParams,
    zs: &[DVector<f64>],
    inputs: &[DVector<f64>],
    spec: &OcpSpec,
) -> f64 {
    let dt = params.dt;
    let track: f64 = zs
        .iter()
        .zip(&spec.y_ref)
        .map(|(z, r)| {
            let e = params.observe(z) - r;
            (e.transpose() * &spec.q_weight * &e)[(0, 0)]
        })
        .sum();
    let effort: f64 = inputs
        .iter()
        .map(|u| (u.transpose() * &spec.r_weight * u)[(0, 0)])
        .sum();
    dt * (track + effort)
}

pub fn ocp_cost(
    params: &ModelParams,
    z0: &DVector<f64>,
    inputs: &[DVector<f64>],
    spec: &OcpSpec,
) -> Result<f64> {
    check_horizon(params, spec, z0, inputs)?;
    let zs = rollout_states(params, z0, inputs);
    Ok(cost_of_states(params, &zs, inputs, spec))
}

/// Exact gradient of [`ocp_cost`] with respect to every input, by the
/// backward adjoint recursion of the discrete rollout.
pub fn ocp_gradient(
    params: &ModelParams,
    z0: &DVector<f64>,
    inputs: &[DVector<f64>],
    spec: &OcpSpec,
) -> Result<Vec<DVector<f64>>> {
    check_horizon(params, spec, z0, inputs)?;
    Ok(gradient_unchecked(params, z0, inputs, spec).1)
}

fn gradient_unchecked(
    params: &ModelParams,
    z0: &DVector<f64>,
    inputs: &[DVector<f64>],
    spec: &OcpSpec,
) -> (f64, Vec<DVector<f64>>) {
    let (dt, n, p) = (params.dt, params.n, params.p);
    let zs = rollout_states(params, z0, inputs);
    let cost = cost_of_states(params, &zs, inputs, spec);
    let qs = &spec.q_weight + spec.q_weight.transpose();
    let rs = &spec.r_weight + spec.r_weight.transpose();
    let track_grad = |j: usize| -> DVector<f64> {
        let e = params.observe(&zs[j]) - &spec.y_ref[j];
        let mut g = DVector::zeros(n);
        g.rows_mut(0, p).copy_from(&(&qs * e * dt));
        g
    };
    let mut lam = track_grad(inputs.len());
    let mut grads = vec![DVector::zeros(params.q); inputs.len()];
    for j in (0..inputs.len()).rev() {
        let psi = augment_state(&zs[j]);
        let mut g = &rs * &inputs[j] * dt;
        for k in 1..=params.q {
            // ∂z_{j+1}/∂u_{j,k} = dt Ṽ_kᵀ (1, z_j)
            g[k - 1] += dt * (params.gen[k].transpose() * &psi).dot(&lam);
        }
        grads[j] = g;
        let sm = step_matrix_unchecked(params, &inputs[j]);
        lam = sm.a.transpose() * lam + track_grad(j);
    }
    (cost, grads)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub initial_step: f64,
    pub backtrack: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-6,
            max_iters: 200,
            initial_step: 1.0,
            backtrack: 0.5,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub inputs: Vec<DVector<f64>>,
    pub cost: f64,
    pub iterations: usize,
    /// Cost after every accepted iterate, starting with the projected warm start.
    pub cost_trace: Vec<f64>,
}

fn projected_step(
    spec: &OcpSpec,
    u: &[DVector<f64>],
    g: &[DVector<f64>],
    step: f64,
) -> Vec<DVector<f64>> {
    u.iter()
        .zip(g)
        .map(|(u, g)| {
            let mut v = u - g * step;
            spec.project(&mut v);
            v
        })
        .collect()
}

fn sq_dist(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum()
}

/// Projected gradient descent with Armijo backtracking.
///
/// The first trial step is `initial_step`; later trial steps are
/// Barzilai-Borwein estimates from the previous iterate. Terminates when the
/// projected-gradient norm `‖u − P(u − ∇J)‖` falls below `tol`, or after
/// `max_iters` iterations.
pub fn solve_ocp(
    params: &ModelParams,
    z0: &DVector<f64>,
    spec: &OcpSpec,
    warm_start: Option<&[DVector<f64>]>,
    config: &SolverConfig,
) -> Result<OcpSolution> {
    spec.validate(params)?;
    let mut u: Vec<DVector<f64>> = match warm_start {
        Some(w) => w.to_vec(),
        None => vec![DVector::zeros(params.q); spec.n_p],
    };
    check_horizon(params, spec, z0, &u)?;
    u.iter_mut().for_each(|v| spec.project(v));
    let (mut cost, mut grad) = gradient_unchecked(params, z0, &u, spec);
    if !cost.is_finite() {
        return Err(Error::Numerical(
            "non-finite cost at the initial control".into(),
        ));
    }
    let mut trace = vec![cost];
    let mut iterations = 0;
    let mut trial = config.initial_step;
    while iterations < config.max_iters {
        let pg = sq_dist(&u, &projected_step(spec, &u, &grad, 1.0)).sqrt();
        if pg < config.tol {
            break;
        }
        iterations += 1;
        let mut step = trial;
        let mut accepted = None;
        for _ in 0..=config.max_backtracks {
            let cand = projected_step(spec, &u, &grad, step);
            let zs = rollout_states(params, z0, &cand);
            let c = cost_of_states(params, &zs, &cand, spec);
            let decrease = sq_dist(&u, &cand) / step;
            if c.is_finite() && c <= cost - config.armijo * decrease {
                accepted = Some((cand, c));
                break;
            }
            step *= config.backtrack;
        }
        let Some((cand, _)) = accepted else { break };
        let (c2, g2) = gradient_unchecked(params, z0, &cand, spec);
        let (mut ss, mut sy) = (0.0, 0.0);
        for j in 0..u.len() {
            let s = &cand[j] - &u[j];
            ss += s.norm_squared();
            sy += s.dot(&(&g2[j] - &grad[j]));
        }
        trial = if sy > 0.0 {
            (ss / sy).clamp(1e-12, 1e12)
        } else {
            config.initial_step
        };
        u = cand;
        cost = c2;
        grad = g2;
        trace.push(cost);
    }
    Ok(OcpSolution {
        inputs: u,
        cost,
        iterations,
        cost_trace: trace,
    })
}

/// A system that advances by one sampling interval per call.
pub trait Plant {
    /// Current measurement.
    fn output(&self) -> DVector<f64>;
    /// Applies `u` for one interval and returns the new measurement.
    fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MpcTrace {
    /// Measurements `y_0..y_N`.
    pub outputs: Vec<DVector<f64>>,
    /// Applied inputs `u_0..u_{N−1}`.
    pub inputs: Vec<DVector<f64>>,
    /// Filtered means `μ_{l|l}` for `l = 0..N`.
    pub estimates: Vec<DVector<f64>>,
    /// References `r_0..r_N` seen by the controller.
    pub references: Vec<DVector<f64>>,
}

/// Receding-horizon loop: the optimal control problem is re-solved from the
/// filtered mean every `n_c` steps and the first `n_c` inputs are applied.
///
/// `y_ref` of `spec` is the reference over the whole run; it needs at least
/// one entry and is padded with its last value beyond its end.
pub fn mpc_loop<P: Plant>(
    plant: &mut P,
    params: &ModelParams,
    spec: &OcpSpec,
    total_steps: usize,
    config: &SolverConfig,
) -> Result<MpcTrace> {
    params.validate()?;
    let padded = spec.shifted(0);
    padded.validate(params)?;
    let reference = |l: usize| -> DVector<f64> {
        spec.y_ref
            .get(l)
            .or(spec.y_ref.last())
            .cloned()
            .expect("non-empty reference")
    };

    let mut trace = MpcTrace::default();
    let mut kf = KalmanState::prior(params);
    let y0 = plant.output();
    check_dim("plant output", params.p, y0.len())?;
    kf.update(params, &y0)?;
    trace.outputs.push(y0);
    trace.estimates.push(kf.mean.clone());
    trace.references.push(reference(0));

    let mut warm: Option<Vec<DVector<f64>>> = None;
    let mut l = 0;
    while l < total_steps {
        let local = spec.shifted(l);
        let sol = solve_ocp(params, &kf.mean, &local, warm.as_deref(), config)?;
        let apply = spec.n_c.min(total_steps - l);
        for u in sol.inputs.iter().take(apply) {
            let y = plant.step(u)?;
            check_dim("plant output", params.p, y.len())?;
            kf.predict(params, u)?;
            kf.update(params, &y)?;
            trace.inputs.push(u.clone());
            trace.outputs.push(y);
            trace.estimates.push(kf.mean.clone());
            l += 1;
            trace.references.push(reference(l));
        }
        let mut next: Vec<DVector<f64>> = sol.inputs[apply..].to_vec();
        let fill = next
            .last()
            .cloned()
            .unwrap_or_else(|| sol.inputs[spec.n_p - 1].clone());
        next.resize(spec.n_p, fill);
        warm = Some(next);
    }
    Ok(trace)
}

/// Plant that evolves by the noise-free surrogate itself.
#[derive(Debug, Clone)]
pub struct ModelPlant {
    pub params: ModelParams,
    pub state: DVector<f64>,
}

impl Plant for ModelPlant {
    fn output(&self) -> DVector<f64> {
        self.params.observe(&self.state)
    }

    fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("input vector", self.params.q, u.len())?;
        let sm = step_matrix_unchecked(&self.params, u);
        self.state = &sm.a * &self.state + &sm.b;
        Ok(self.output())
    }
}
