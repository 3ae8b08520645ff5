#![allow(dead_code)]

use koopman_em::{simulate, Dataset, ModelParams, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector<R: Rng>(rng: &mut R, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// `B Bᵀ / dim + floor · I`.
pub fn random_spd<R: Rng>(rng: &mut R, dim: usize, scale: f64, floor: f64) -> DMatrix<f64> {
    let b = normal_matrix(rng, dim, dim, 1.0);
    (&b * b.transpose() / dim.max(1) as f64 + DMatrix::identity(dim, dim) * floor) * scale
}

/// Random model whose step matrices stay close to the identity.
pub fn random_model<R: Rng>(rng: &mut R, n: usize, q: usize, p: usize, dt: f64) -> ModelParams {
    let mut m = ModelParams::zeros(n, q, p, dt);
    for k in 0..=q {
        m.gen[k] = normal_matrix(rng, n + 1, n, if k == 0 { 1.0 } else { 0.5 });
    }
    for i in 0..n {
        m.gen[0][(i + 1, i)] -= 1.0;
    }
    m.c0 = normal_vector(rng, p, 0.5);
    m.sigma_w = random_spd(rng, n, 0.05, 0.2);
    m.sigma_v = random_spd(rng, p, 0.1, 0.2);
    m.mu0 = normal_vector(rng, n, 1.0);
    m.sigma0 = random_spd(rng, n, 1.0, 0.2);
    m
}

pub fn random_inputs<R: Rng>(rng: &mut R, q: usize, steps: usize) -> Vec<DVector<f64>> {
    (0..steps).map(|_| normal_vector(rng, q, 1.0)).collect()
}

/// Noisy trajectory simulated from the model itself.
pub fn random_trajectory<R: Rng>(rng: &mut R, m: &ModelParams, steps: usize) -> Trajectory {
    let inputs = random_inputs(rng, m.q, steps);
    let z0 = &m.mu0 + normal_vector(rng, m.n, 0.5);
    simulate(m, &z0, &inputs, Some(rng.random()))
        .expect("valid model")
        .trajectory
}

pub fn random_dataset<R: Rng>(
    rng: &mut R,
    m: &ModelParams,
    trajectories: usize,
    steps: usize,
) -> Dataset {
    Dataset {
        dt: m.dt,
        p: m.p,
        q: m.q,
        trajectories: (0..trajectories)
            .map(|_| random_trajectory(rng, m, steps))
            .collect(),
    }
}
