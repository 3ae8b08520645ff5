//! Bilinear hidden Markov model: parameters, per-step transition matrices and
//! forward simulation.
//!
//! The latent state `z` excludes the constant coordinate. Generator matrices
//! are stored in reduced form `Ṽ_k` of shape `(n+1) × n`; the full generator
//! is `V_k = [0 | Ṽ_k]`, and over one sampling interval
//!
//! ```text
//! U_l = I + dt * Σ_k u_k V_k = [[1, b_lᵀ], [0, A_lᵀ]]
//! z_{l+1} = A_l z_l + b_l + w_l,    y_l = c0 + [I 0] z_l + v_l
//! ```
//!
//! Channel `k = 0` is the drift and always carries `u_0 = 1`; user-facing
//! input vectors hold only the `q` physical channels.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{psd_sqrt, sample_gaussian};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dt: f64,
    /// Latent dimension (without the constant coordinate).
    pub n: usize,
    /// Number of physical input channels.
    pub q: usize,
    /// Output dimension, `p <= n`.
    pub p: usize,
    /// `q + 1` reduced generators `Ṽ_k`, each `(n+1) × n`, drift first.
    pub gen: Vec<DMatrix<f64>>,
    pub c0: DVector<f64>,
    pub sigma_w: DMatrix<f64>,
    pub sigma_v: DMatrix<f64>,
    pub mu0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
}

/// One-step transition on the augmented state `(1, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMatrices {
    /// `U = I + dt Σ u_k V_k`, `(n+1) × (n+1)`.
    pub u: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `L` input vectors of the physical channels.
    pub inputs: Vec<DVector<f64>>,
    /// `L + 1` output vectors.
    pub outputs: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dt: f64,
    pub p: usize,
    pub q: usize,
    pub trajectories: Vec<Trajectory>,
}

/// Result of [`simulate`]: the observed trajectory plus the latent states
/// `z_0..z_L` that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub trajectory: Trajectory,
    pub states: Vec<DVector<f64>>,
}

impl ModelParams {
    /// Parameters with zero generators and the given noise levels.
    pub fn zeros(n: usize, q: usize, p: usize, dt: f64) -> Self {
        ModelParams {
            dt,
            n,
            q,
            p,
            gen: vec![DMatrix::zeros(n + 1, n); q + 1],
            c0: DVector::zeros(p),
            sigma_w: DMatrix::zeros(n, n),
            sigma_v: DMatrix::identity(p, p),
            mu0: DVector::zeros(n),
            sigma0: DMatrix::identity(n, n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, q, p) = (self.n, self.q, self.p);
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidInput(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if p > n {
            return Err(Error::InvalidInput(format!(
                "output dimension p={p} exceeds latent dimension n={n}"
            )));
        }
        check_dim("number of generators", q + 1, self.gen.len())?;
        for g in &self.gen {
            check_dim("generator rows", n + 1, g.nrows())?;
            check_dim("generator cols", n, g.ncols())?;
        }
        check_dim("c0", p, self.c0.len())?;
        check_dim("mu0", n, self.mu0.len())?;
        for (name, m, d) in [
            ("sigma_w", &self.sigma_w, n),
            ("sigma_v", &self.sigma_v, p),
            ("sigma0", &self.sigma0, n),
        ] {
            check_dim(name, d, m.nrows())?;
            check_dim(name, d, m.ncols())?;
            let asym = (m - m.transpose()).abs().max();
            if asym > 1e-8 * (1.0 + m.abs().max()) {
                return Err(Error::InvalidInput(format!("{name} is not symmetric")));
            }
        }
        let finite = self.gen.iter().all(|g| g.iter().all(|v| v.is_finite()))
            && self.c0.iter().all(|v| v.is_finite())
            && self.mu0.iter().all(|v| v.is_finite())
            && [&self.sigma_w, &self.sigma_v, &self.sigma0]
                .iter()
                .all(|m| m.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidInput(
                "parameters contain non-finite values".into(),
            ));
        }
        if p > 0 && nalgebra::Cholesky::new(self.sigma_v.clone()).is_none() {
            return Err(Error::InvalidInput(
                "sigma_v must be positive definite".into(),
            ));
        }
        Ok(())
    }

    /// Full generator `V_k = [0 | Ṽ_k]`.
    pub fn full_generator(&self, k: usize) -> DMatrix<f64> {
        let n = self.n;
        let mut v = DMatrix::zeros(n + 1, n + 1);
        v.view_mut((0, 1), (n + 1, n)).copy_from(&self.gen[k]);
        v
    }

    /// Generator stack `[Ṽ_0; …; Ṽ_q]`, input-channel-major.
    pub fn generator_stack(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut s = DMatrix::zeros((self.q + 1) * (n + 1), n);
        for (k, g) in self.gen.iter().enumerate() {
            s.view_mut((k * (n + 1), 0), (n + 1, n)).copy_from(g);
        }
        s
    }

    pub fn set_generator_stack(&mut self, stack: &DMatrix<f64>) {
        let n = self.n;
        for k in 0..=self.q {
            self.gen[k] = stack.view((k * (n + 1), 0), (n + 1, n)).into_owned();
        }
    }

    /// Output prediction `c0 + [I 0] z`.
    pub fn observe(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.c0 + z.rows(0, self.p)
    }
}

/// Returns the augmented input `(1, u_1, …, u_q)`.
pub fn augment_input(u: &DVector<f64>) -> DVector<f64> {
    let mut a = DVector::zeros(u.len() + 1);
    a[0] = 1.0;
    a.rows_mut(1, u.len()).copy_from(u);
    a
}

/// Returns the augmented state `(1, z)`.
pub fn augment_state(z: &DVector<f64>) -> DVector<f64> {
    let mut a = DVector::zeros(z.len() + 1);
    a[0] = 1.0;
    a.rows_mut(1, z.len()).copy_from(z);
    a
}

pub fn step_matrix(params: &ModelParams, u: &DVector<f64>) -> Result<StepMatrices> {
    check_dim("input vector", params.q, u.len())?;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite input".into()));
    }
    Ok(step_matrix_unchecked(params, u))
}

pub(crate) fn step_matrix_unchecked(params: &ModelParams, u: &DVector<f64>) -> StepMatrices {
    let n = params.n;
    // Σ_k u_k Ṽ_k with u_0 = 1
    let mut g = params.gen[0].clone();
    for k in 1..=params.q {
        let w = u[k - 1];
        if w != 0.0 {
            g.zip_apply(&params.gen[k], |a, b| *a += w * b);
        }
    }
    g *= params.dt;
    let b = g.row(0).transpose();
    let mut a = g.rows(1, n).transpose();
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    let mut um = DMatrix::identity(n + 1, n + 1);
    let mut block = um.view_mut((0, 1), (n + 1, n));
    block += &g;
    StepMatrices { u: um, a, b }
}

pub(crate) fn step_matrices_for(params: &ModelParams, traj: &Trajectory) -> Vec<StepMatrices> {
    traj.inputs
        .iter()
        .map(|u| step_matrix_unchecked(params, u))
        .collect()
}

impl Trajectory {
    pub fn len_steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn validate(&self, q: usize, p: usize) -> Result<()> {
        check_dim(
            "trajectory outputs (inputs + 1)",
            self.inputs.len() + 1,
            self.outputs.len(),
        )?;
        for u in &self.inputs {
            check_dim("input vector", q, u.len())?;
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite input value".into()));
            }
        }
        for y in &self.outputs {
            check_dim("output vector", p, y.len())?;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite output value".into()));
            }
        }
        Ok(())
    }

    /// First `steps` transitions (`steps + 1` outputs).
    pub fn prefix(&self, steps: usize) -> Trajectory {
        let steps = steps.min(self.inputs.len());
        Trajectory {
            inputs: self.inputs[..steps].to_vec(),
            outputs: self.outputs[..=steps].to_vec(),
        }
    }

    /// Transitions from step `start` to the end.
    pub fn suffix(&self, start: usize) -> Trajectory {
        let start = start.min(self.inputs.len());
        Trajectory {
            inputs: self.inputs[start..].to_vec(),
            outputs: self.outputs[start..].to_vec(),
        }
    }
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidInput("dataset dt must be positive".into()));
        }
        for t in &self.trajectories {
            t.validate(self.q, self.p)?;
        }
        Ok(())
    }

    pub fn check_compatible(&self, params: &ModelParams) -> Result<()> {
        check_dim("dataset input channels", params.q, self.q)?;
        check_dim("dataset output dimension", params.p, self.p)?;
        if (self.dt - params.dt).abs() > 1e-12 * self.dt.abs() {
            return Err(Error::InvalidInput(format!(
                "dataset dt {} differs from model dt {}",
                self.dt, params.dt
            )));
        }
        Ok(())
    }

    /// Splits every trajectory after `steps` transitions into a training
    /// prefix and the remaining suffix (which shares the boundary sample).
    pub fn split_at(&self, steps: usize) -> (Dataset, Dataset) {
        let head = self.trajectories.iter().map(|t| t.prefix(steps)).collect();
        let tail = self.trajectories.iter().map(|t| t.suffix(steps)).collect();
        (
            Dataset {
                trajectories: head,
                ..self.clone_empty()
            },
            Dataset {
                trajectories: tail,
                ..self.clone_empty()
            },
        )
    }

    fn clone_empty(&self) -> Dataset {
        Dataset {
            dt: self.dt,
            p: self.p,
            q: self.q,
            trajectories: Vec::new(),
        }
    }
}

/// Simulates the HMM from a known initial latent state.
///
/// With `noise = Some(seed)` the Gaussian draws come from a ChaCha8 stream in
/// the order `v_0, (w_0, v_1), (w_1, v_2), …`: per step, process noise before
/// measurement noise. `None` gives the noise-free response.
pub fn simulate(
    params: &ModelParams,
    z0: &DVector<f64>,
    inputs: &[DVector<f64>],
    noise: Option<u64>,
) -> Result<Simulation> {
    params.validate()?;
    check_dim("initial state", params.n, z0.len())?;
    for u in inputs {
        check_dim("input vector", params.q, u.len())?;
    }
    match noise {
        None => Ok(simulate_inner(params, z0, inputs, None)),
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(simulate_inner(params, z0, inputs, Some(&mut rng)))
        }
    }
}

pub(crate) fn simulate_inner(
    params: &ModelParams,
    z0: &DVector<f64>,
    inputs: &[DVector<f64>],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Simulation {
    let sw = rng.as_ref().map(|_| psd_sqrt(&params.sigma_w));
    let sv = rng.as_ref().map(|_| psd_sqrt(&params.sigma_v));
    let zero_n = DVector::zeros(params.n);
    let zero_p = DVector::zeros(params.p);

    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut outputs = Vec::with_capacity(inputs.len() + 1);
    let measure = |z: &DVector<f64>, rng: &mut Option<&mut ChaCha8Rng>| {
        let mut y = params.observe(z);
        if let (Some(r), Some(s)) = (rng.as_deref_mut(), sv.as_ref()) {
            y += sample_gaussian(r, &zero_p, s);
        }
        y
    };

    let mut z = z0.clone();
    outputs.push(measure(&z, &mut rng));
    states.push(z.clone());
    for u in inputs {
        let sm = step_matrix_unchecked(params, u);
        let mut next = &sm.a * &z + &sm.b;
        if let (Some(r), Some(s)) = (rng.as_deref_mut(), sw.as_ref()) {
            next += sample_gaussian(r, &zero_n, s);
        }
        z = next;
        outputs.push(measure(&z, &mut rng));
        states.push(z.clone());
    }
    Simulation {
        trajectory: Trajectory {
            inputs: inputs.to_vec(),
            outputs,
        },
        states,
    }
}
