//! Reference plants, data-generation protocols, input signals and error
//! metrics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::model::{simulate, Dataset, ModelParams, Trajectory};
use crate::mpc::Plant;

/// RK4 substeps per sampling interval used by the plants.
pub const DEFAULT_SUBSTEPS: usize = 10;

/// One classical Runge-Kutta step of size `h`.
pub fn rk4_step<F>(f: &F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + s * y).collect()
    };
    let k1 = f(x);
    let k2 = f(&axpy(x, 0.5 * h, &k1));
    let k3 = f(&axpy(x, 0.5 * h, &k2));
    let k4 = f(&axpy(x, h, &k3));
    x.iter()
        .enumerate()
        .map(|(i, xi)| xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Integrates over `dt` with `substeps` RK4 steps.
pub fn rk4_interval<F>(f: &F, x: &[f64], dt: f64, substeps: usize) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let h = dt / substeps.max(1) as f64;
    let mut x = x.to_vec();
    for _ in 0..substeps.max(1) {
        x = rk4_step(f, &x, h);
    }
    x
}

/// `ẋ1 = −α x1 + u`, `ẋ2 = β (x1³ − x2)`.
pub fn slow_manifold_rhs(alpha: f64, beta: f64, x: &[f64], u: f64) -> Vec<f64> {
    vec![-alpha * x[0] + u, beta * (x[0].powi(3) - x[1])]
}

/// Lifted state `(x2, x1, x1², x1³)`; the observed coordinate comes first.
pub fn slow_manifold_lift(x: &[f64]) -> DVector<f64> {
    DVector::from_vec(vec![x[1], x[0], x[0] * x[0], x[0].powi(3)])
}

/// Exact bilinear model of the slow-manifold system on the lifted state
/// [`slow_manifold_lift`], with the initial-state moments of `x0 ~ N(0, I)`.
pub fn slow_manifold_params(alpha: f64, beta: f64, dt: f64, noise_var: f64) -> ModelParams {
    let mut p = ModelParams::zeros(4, 1, 1, dt);
    // rows index (1, x2, x1, x1², x1³), columns the time derivative of each z_j
    let v0 = &mut p.gen[0];
    v0[(1, 0)] = -beta;
    v0[(4, 0)] = beta;
    v0[(2, 1)] = -alpha;
    v0[(3, 2)] = -2.0 * alpha;
    v0[(4, 3)] = -3.0 * alpha;
    let v1 = &mut p.gen[1];
    v1[(0, 1)] = 1.0;
    v1[(2, 2)] = 2.0;
    v1[(3, 3)] = 3.0;
    p.sigma_w = DMatrix::zeros(4, 4);
    p.sigma_v = DMatrix::from_element(1, 1, noise_var);
    p.mu0 = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0]);
    p.sigma0 = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 3.0, //
            0.0, 0.0, 2.0, 0.0, //
            0.0, 3.0, 0.0, 15.0,
        ],
    );
    p
}

/// Draws standard-normal measurement noise scaled by `std`.
#[derive(Debug, Clone)]
struct MeasurementNoise {
    std: f64,
    rng: ChaCha8Rng,
}

impl MeasurementNoise {
    fn draw(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        self.std * z
    }
}

#[derive(Debug, Clone)]
pub struct SlowManifoldPlant {
    pub alpha: f64,
    pub beta: f64,
    pub dt: f64,
    pub substeps: usize,
    pub state: [f64; 2],
    noise: Option<MeasurementNoise>,
    last: f64,
}

impl SlowManifoldPlant {
    /// Noise-free plant.
    pub fn new(alpha: f64, beta: f64, dt: f64, x0: [f64; 2]) -> Self {
        SlowManifoldPlant {
            alpha,
            beta,
            dt,
            substeps: DEFAULT_SUBSTEPS,
            state: x0,
            noise: None,
            last: x0[1],
        }
    }

    /// Plant whose measurements carry Gaussian noise of variance `noise_var`.
    pub fn with_noise(
        alpha: f64,
        beta: f64,
        dt: f64,
        x0: [f64; 2],
        noise_var: f64,
        seed: u64,
    ) -> Self {
        let mut noise = MeasurementNoise {
            std: noise_var.max(0.0).sqrt(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let last = x0[1] + noise.draw();
        SlowManifoldPlant {
            noise: Some(noise),
            last,
            ..Self::new(alpha, beta, dt, x0)
        }
    }

    pub fn advance(&mut self, u: f64) {
        let (a, b) = (self.alpha, self.beta);
        let x = rk4_interval(
            &|x: &[f64]| slow_manifold_rhs(a, b, x, u),
            &self.state,
            self.dt,
            self.substeps,
        );
        self.state = [x[0], x[1]];
        self.last = self.state[1] + self.noise.as_mut().map_or(0.0, |n| n.draw());
    }
}

impl Plant for SlowManifoldPlant {
    fn output(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.last])
    }

    fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("input vector", 1, u.len())?;
        if !u[0].is_finite() {
            return Err(Error::InvalidInput("non-finite input".into()));
        }
        self.advance(u[0]);
        Ok(self.output())
    }
}

/// Parameters `ẍ + δẋ + x(β + αx²) = 0` with stable spirals at `x = ±1`
/// and a saddle at the origin.
pub const DUFFING_ALPHA: f64 = 1.0;
pub const DUFFING_BETA: f64 = -1.0;
pub const DUFFING_DELTA: f64 = 0.5;

pub fn duffing_rhs(alpha: f64, beta: f64, delta: f64, x: &[f64]) -> Vec<f64> {
    vec![x[1], -delta * x[1] - x[0] * (beta + alpha * x[0] * x[0])]
}

/// Unforced Duffing oscillator observed through its full state `(x, ẋ)`.
#[derive(Debug, Clone)]
pub struct DuffingPlant {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub dt: f64,
    pub substeps: usize,
    pub state: [f64; 2],
}

impl DuffingPlant {
    pub fn new(alpha: f64, beta: f64, delta: f64, dt: f64, x0: [f64; 2]) -> Self {
        DuffingPlant {
            alpha,
            beta,
            delta,
            dt,
            substeps: DEFAULT_SUBSTEPS,
            state: x0,
        }
    }

    pub fn advance(&mut self) {
        let (a, b, d) = (self.alpha, self.beta, self.delta);
        let x = rk4_interval(
            &|x: &[f64]| duffing_rhs(a, b, d, x),
            &self.state,
            self.dt,
            self.substeps,
        );
        self.state = [x[0], x[1]];
    }
}

impl Plant for DuffingPlant {
    fn output(&self) -> DVector<f64> {
        DVector::from_vec(self.state.to_vec())
    }

    fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("input vector", 0, u.len())?;
        self.advance();
        Ok(self.output())
    }
}

/// `ẋ = u x`, advanced exactly.
#[derive(Debug, Clone)]
pub struct ScalarBilinearPlant {
    pub dt: f64,
    pub x: f64,
}

impl ScalarBilinearPlant {
    pub fn new(dt: f64) -> Self {
        ScalarBilinearPlant { dt, x: 1.0 }
    }
}

impl Plant for ScalarBilinearPlant {
    fn output(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.x])
    }

    fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("input vector", 1, u.len())?;
        self.x *= (u[0] * self.dt).exp();
        Ok(self.output())
    }
}

/// Bilinear model of `ẋ = u x` on `(1, x)`.
pub fn scalar_bilinear_params(dt: f64) -> ModelParams {
    let mut p = ModelParams::zeros(1, 1, 1, dt);
    p.gen[1][(1, 0)] = 1.0;
    p.mu0 = DVector::from_vec(vec![1.0]);
    p.sigma0 = DMatrix::from_element(1, 1, 1e-12);
    p.sigma_v = DMatrix::from_element(1, 1, 1e-12);
    p
}

/// Trajectories of `ẋ = u x, x(0) = 1` for `u_a = −1`, `u_b = −3` and
/// `u_c = 2u_a − u_b = 1`.
#[derive(Debug, Clone)]
pub struct SuperpositionDemo {
    pub times: Vec<f64>,
    /// Exact `x_c(t) = e^t`.
    pub truth: Vec<f64>,
    /// Bilinear model driven by `u_c`.
    pub bilinear: Vec<f64>,
    /// `2 x_a − x_b`, what any model obeying superposition must predict.
    pub superposition: Vec<f64>,
}

pub fn superposition_demo(dt: f64, t_end: f64) -> Result<SuperpositionDemo> {
    if !(dt > 0.0 && t_end >= 0.0) {
        return Err(Error::InvalidInput("need dt > 0 and t_end >= 0".into()));
    }
    let steps = (t_end / dt).round() as usize;
    let params = scalar_bilinear_params(dt);
    let run = |u: f64| -> Result<Vec<f64>> {
        let inputs = vec![DVector::from_vec(vec![u]); steps];
        let sim = simulate(&params, &DVector::from_vec(vec![1.0]), &inputs, None)?;
        Ok(sim.trajectory.outputs.iter().map(|y| y[0]).collect())
    };
    let (xa, xb, xc) = (run(-1.0)?, run(-3.0)?, run(1.0)?);
    let times: Vec<f64> = (0..=steps).map(|l| l as f64 * dt).collect();
    Ok(SuperpositionDemo {
        truth: times.iter().map(|t| t.exp()).collect(),
        superposition: xa.iter().zip(&xb).map(|(a, b)| 2.0 * a - b).collect(),
        bilinear: xc,
        times,
    })
}

/// Gaussian values of standard deviation `sigma` held for `hold` time units.
pub fn input_piecewise_constant(
    steps: usize,
    dt: f64,
    hold: f64,
    sigma: f64,
    channels: usize,
    rng: &mut impl Rng,
) -> Result<Vec<DVector<f64>>> {
    let ratio = hold / dt;
    let per = ratio.round();
    if per.is_nan() || per < 1.0 || (ratio - per).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "hold {hold} is not a positive multiple of dt {dt}"
        )));
    }
    let per = per as usize;
    let normal =
        Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut out = Vec::with_capacity(steps);
    let mut current = DVector::zeros(channels);
    for l in 0..steps {
        if l % per == 0 {
            current = DVector::from_fn(channels, |_, _| normal.sample(rng));
        }
        out.push(current.clone());
    }
    Ok(out)
}

/// Natural cubic spline through `(t_i, v_i)`, evaluated at `at`.
pub fn natural_cubic_spline(t: &[f64], v: &[f64], at: &[f64]) -> Vec<f64> {
    let n = t.len();
    if n == 1 {
        return vec![v[0]; at.len()];
    }
    // second derivatives by the tridiagonal system with zero end moments
    let mut m = vec![0.0; n];
    if n > 2 {
        let k = n - 2;
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let mut diag = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            rhs[i] = 6.0 * ((v[i + 2] - v[i + 1]) / h[i + 1] - (v[i + 1] - v[i]) / h[i]);
        }
        for i in 1..k {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * h[i];
            rhs[i] -= w * rhs[i - 1];
        }
        for i in (0..k).rev() {
            let upper = if i + 1 < k { h[i + 1] * m[i + 2] } else { 0.0 };
            m[i + 1] = (rhs[i] - upper) / diag[i];
        }
    }
    at.iter()
        .map(|&x| {
            let i = match t.iter().rposition(|&ti| ti <= x) {
                Some(i) => i.min(n - 2),
                None => 0,
            };
            let h = t[i + 1] - t[i];
            let a = (t[i + 1] - x) / h;
            let b = (x - t[i]) / h;
            a * v[i]
                + b * v[i + 1]
                + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
        })
        .collect()
}

/// Smooth random input: spline interpolation of uniform random knot values
/// on a random time grid with spacings uniform in `grid_range`.
pub fn input_smooth_spline(
    steps: usize,
    dt: f64,
    grid_range: (f64, f64),
    value_box: &[(f64, f64)],
    rng: &mut impl Rng,
) -> Result<Vec<DVector<f64>>> {
    let (lo, hi) = grid_range;
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::InvalidInput(
            "grid spacing range must be positive".into(),
        ));
    }
    if value_box
        .iter()
        .any(|(a, b)| a.partial_cmp(b).is_none_or(|o| o.is_gt()))
    {
        return Err(Error::InvalidInput("empty value box".into()));
    }
    let t_end = steps as f64 * dt;
    let mut knots = vec![0.0];
    while *knots.last().expect("non-empty") < t_end {
        let gap = if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        };
        knots.push(knots.last().expect("non-empty") + gap);
    }
    let at: Vec<f64> = (0..steps).map(|l| l as f64 * dt).collect();
    let channels: Vec<Vec<f64>> = value_box
        .iter()
        .map(|&(a, b)| {
            let vals: Vec<f64> = knots
                .iter()
                .map(|_| if a == b { a } else { rng.random_range(a..b) })
                .collect();
            natural_cubic_spline(&knots, &vals, &at)
        })
        .collect();
    Ok((0..steps)
        .map(|l| DVector::from_fn(value_box.len(), |k, _| channels[k][l]))
        .collect())
}

/// Training and test data of an experiment protocol.
#[derive(Debug, Clone)]
pub struct ProtocolData {
    pub train: Dataset,
    /// Complete test trajectories; forecasts start at sample `warmup`.
    pub test: Dataset,
    /// Number of leading test samples used for state estimation.
    pub warmup: usize,
    /// True plant states along each test trajectory.
    pub test_states: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlowManifoldProtocol {
    pub alpha: f64,
    pub beta: f64,
    pub trajectories: usize,
    pub samples: usize,
    pub dt: f64,
    pub noise_var: f64,
    pub hold: f64,
    pub input_var: f64,
    pub train_samples: usize,
}

impl Default for SlowManifoldProtocol {
    fn default() -> Self {
        SlowManifoldProtocol {
            alpha: 1.0,
            beta: 5.0,
            trajectories: 50,
            samples: 500,
            dt: 0.01,
            noise_var: 0.01,
            hold: 0.5,
            input_var: 5.0,
            train_samples: 250,
        }
    }
}

fn trajectory_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl SlowManifoldProtocol {
    /// Trajectory `m` draws from ChaCha8 stream `m` of `seed` in the order:
    /// initial state, inputs, measurement noise.
    pub fn generate(&self, seed: u64) -> Result<ProtocolData> {
        if self.samples < 2 || self.train_samples < 1 || self.train_samples > self.samples {
            return Err(Error::InvalidInput("inconsistent sample counts".into()));
        }
        let steps = self.samples - 1;
        let runs: Vec<Result<(Trajectory, Vec<[f64; 2]>)>> = (0..self.trajectories)
            .into_par_iter()
            .map(|m| {
                let mut rng = trajectory_rng(seed, m as u64);
                let x0 = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                let inputs = input_piecewise_constant(
                    steps,
                    self.dt,
                    self.hold,
                    self.input_var.sqrt(),
                    1,
                    &mut rng,
                )?;
                let mut plant = SlowManifoldPlant::new(self.alpha, self.beta, self.dt, x0);
                let std = self.noise_var.max(0.0).sqrt();
                let mut noise = || -> f64 {
                    let z: f64 = rng.sample(StandardNormal);
                    std * z
                };
                let mut states = vec![plant.state];
                let mut outputs = vec![DVector::from_vec(vec![plant.state[1] + noise()])];
                for u in &inputs {
                    plant.advance(u[0]);
                    states.push(plant.state);
                    outputs.push(DVector::from_vec(vec![plant.state[1] + noise()]));
                }
                Ok((Trajectory { inputs, outputs }, states))
            })
            .collect();
        let mut trajs = Vec::new();
        let mut states = Vec::new();
        for r in runs {
            let (t, s) = r?;
            trajs.push(t);
            states.push(s);
        }
        let full = Dataset {
            dt: self.dt,
            p: 1,
            q: 1,
            trajectories: trajs,
        };
        let (train, _) = full.split_at(self.train_samples - 1);
        Ok(ProtocolData {
            train,
            test: full,
            warmup: self.train_samples,
            test_states: states,
        })
    }
}

pub fn dataset_protocol_slow_manifold(seed: u64) -> Result<ProtocolData> {
    SlowManifoldProtocol::default().generate(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DuffingProtocol {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub trajectories: usize,
    pub samples: usize,
    pub dt: f64,
    pub half_width: f64,
    pub warmup: usize,
}

impl Default for DuffingProtocol {
    fn default() -> Self {
        DuffingProtocol {
            alpha: DUFFING_ALPHA,
            beta: DUFFING_BETA,
            delta: DUFFING_DELTA,
            trajectories: 50,
            samples: 801,
            dt: 0.02,
            half_width: 2.0,
            warmup: 200,
        }
    }
}

impl DuffingProtocol {
    fn collect(&self, seed: u64, stream_offset: u64) -> (Dataset, Vec<Vec<[f64; 2]>>) {
        let runs: Vec<(Trajectory, Vec<[f64; 2]>)> = (0..self.trajectories)
            .into_par_iter()
            .map(|m| {
                let mut rng = trajectory_rng(seed, stream_offset + m as u64);
                let w = self.half_width;
                let x0 = [rng.random_range(-w..=w), rng.random_range(-w..=w)];
                let mut plant = DuffingPlant::new(self.alpha, self.beta, self.delta, self.dt, x0);
                let mut states = vec![plant.state];
                for _ in 1..self.samples {
                    plant.advance();
                    states.push(plant.state);
                }
                let outputs = states
                    .iter()
                    .map(|s| DVector::from_vec(s.to_vec()))
                    .collect();
                let inputs = vec![DVector::zeros(0); self.samples - 1];
                (Trajectory { inputs, outputs }, states)
            })
            .collect();
        let (trajs, states) = runs.into_iter().unzip();
        (
            Dataset {
                dt: self.dt,
                p: 2,
                q: 0,
                trajectories: trajs,
            },
            states,
        )
    }

    /// Training trajectories use streams `0..M` of `seed`, test trajectories
    /// streams `M..2M`.
    pub fn generate(&self, seed: u64) -> Result<ProtocolData> {
        if self.samples < 2 || self.warmup < 1 || self.warmup > self.samples {
            return Err(Error::InvalidInput("inconsistent sample counts".into()));
        }
        let m = self.trajectories as u64;
        let (train, _) = self.collect(seed, 0);
        let (test, test_states) = self.collect(seed, m);
        Ok(ProtocolData {
            train,
            test,
            warmup: self.warmup,
            test_states,
        })
    }
}

pub fn dataset_protocol_duffing(seed: u64) -> Result<ProtocolData> {
    DuffingProtocol::default().generate(seed)
}

/// `(1/M) Σ_m Σ_l dt ‖ŷ_l − y_l‖ / ‖y_l‖`, skipping samples with `y_l = 0`.
/// Returns the error and the number of skipped samples.
pub fn relative_l2_error(
    preds: &[Vec<DVector<f64>>],
    truth: &[Vec<DVector<f64>>],
    dt: f64,
) -> Result<(f64, usize)> {
    check_dim("trajectory count", truth.len(), preds.len())?;
    if truth.is_empty() {
        return Err(Error::InvalidInput("no trajectories".into()));
    }
    let mut total = 0.0;
    let mut skipped = 0;
    let mut used = 0;
    for (p, t) in preds.iter().zip(truth) {
        check_dim("samples per trajectory", t.len(), p.len())?;
        for (ph, y) in p.iter().zip(t) {
            check_dim("output vector", y.len(), ph.len())?;
            let ny = y.norm();
            if ny == 0.0 {
                skipped += 1;
                continue;
            }
            total += (ph - y).norm() / ny * dt;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::InvalidInput("truth is identically zero".into()));
    }
    Ok((total / truth.len() as f64, skipped))
}
