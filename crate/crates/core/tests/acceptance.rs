//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.
//!
//! `ACCEPTANCE_ONLY=4,8` restricts the run to the listed criteria.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use koopman_em::edmd::{edmd_generator_fit, lift_snapshots};
use koopman_em::em::{
    decoupled_objectives, e_step, init_from_edmd_lift, init_random_scaled, input_bounds, m_step,
    select_model, EdmdLift, MStepAccumulators, SelectConfig, StopReason,
};
use koopman_em::estimation::{dense_posterior_oracle, sample_posterior};
use koopman_em::linalg::max_abs_diff;
use koopman_em::mpc::{mpc_loop, ocp_cost, ocp_gradient, OcpSpec, Plant, SolverConfig};
use koopman_em::systems::{
    dataset_protocol_duffing, dataset_protocol_slow_manifold, duffing_rhs, rk4_interval,
    slow_manifold_params, superposition_demo, ProtocolData, SlowManifoldPlant, DUFFING_ALPHA,
    DUFFING_BETA, DUFFING_DELTA,
};
use koopman_em::{
    eigen_spectrum, eigenfunction_values, fit, forecast, kalman_forward, legendre_dictionary,
    smooth, step_matrix, EigenPair, FitConfig, ModelParams, Result,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{normal_vector, random_dataset, random_inputs, random_model, random_trajectory};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

// 1 -------------------------------------------------------------------------

fn smoother_matches_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=3);
        let q = rng.random_range(0..=2);
        let p = rng.random_range(1..=n);
        let steps = rng.random_range(1..=5);
        let m = random_model(&mut rng, n, q, p, 0.1);
        let traj = random_trajectory(&mut rng, &m, steps);
        let (post, _) = smooth(&m, &traj)?;
        let oracle = dense_posterior_oracle(&m, &traj)?;
        for (a, b) in post.mu.iter().zip(&oracle.mu) {
            worst = worst.max((a - b).amax());
        }
        for (a, b) in post.sig.iter().zip(&oracle.sig) {
            worst = worst.max(max_abs_diff(a, b));
        }
        for (a, b) in post.sig_cross.iter().zip(&oracle.sig_cross) {
            worst = worst.max(max_abs_diff(a, b));
        }
    }
    outcome(
        worst < 1e-8,
        format!("max abs error {worst:.2e} over 100 instances (< 1e-8)"),
    )
}

// 2 -------------------------------------------------------------------------

/// Initialization shared by the slow-manifold criteria.
const SLOW_MANIFOLD_TIME_SCALE: f64 = 0.3;

fn em_monotone() -> Result<Outcome> {
    let data = dataset_protocol_slow_manifold(0)?;
    let train = &data.train;
    let init = init_random_scaled(
        4,
        1,
        1,
        train.dt,
        &input_bounds(train),
        0,
        SLOW_MANIFOLD_TIME_SCALE,
    )?;
    let config = FitConfig {
        max_iters: 200,
        rel_tol: f64::NEG_INFINITY,
    };
    let res = fit(train, &init, &config)?;
    let worst = res
        .loglik_trace
        .windows(2)
        .map(|w| (w[1] - w[0]) / (1.0 + w[0].abs()))
        .fold(f64::INFINITY, f64::min);
    let pass = res.iterations == 200 && res.stop == StopReason::MaxIterations && worst >= -1e-8;
    outcome(
        pass,
        format!(
            "{} iterations, loglik {:.3} -> {:.3}, smallest relative step {worst:.2e} (>= -1e-8)",
            res.iterations,
            res.loglik_trace[0],
            res.final_loglik()
        ),
    )
}

// 3 -------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum Coord {
    Mu0(usize),
    Sigma0(usize, usize),
    C0(usize),
    SigmaV(usize, usize),
    Gen(usize, usize, usize),
    SigmaW(usize, usize),
}

fn coord_value(m: &ModelParams, c: Coord) -> f64 {
    match c {
        Coord::Mu0(i) => m.mu0[i],
        Coord::Sigma0(i, j) => m.sigma0[(i, j)],
        Coord::C0(i) => m.c0[i],
        Coord::SigmaV(i, j) => m.sigma_v[(i, j)],
        Coord::Gen(k, i, j) => m.gen[k][(i, j)],
        Coord::SigmaW(i, j) => m.sigma_w[(i, j)],
    }
}

/// Moves one free parameter; symmetric covariance entries move in pairs.
fn perturb(m: &ModelParams, c: Coord, h: f64) -> ModelParams {
    let mut out = m.clone();
    let sym = |s: &mut DMatrix<f64>, i: usize, j: usize| {
        s[(i, j)] += h;
        if i != j {
            s[(j, i)] += h;
        }
    };
    match c {
        Coord::Mu0(i) => out.mu0[i] += h,
        Coord::Sigma0(i, j) => sym(&mut out.sigma0, i, j),
        Coord::C0(i) => out.c0[i] += h,
        Coord::SigmaV(i, j) => sym(&mut out.sigma_v, i, j),
        Coord::Gen(k, i, j) => out.gen[k][(i, j)] += h,
        Coord::SigmaW(i, j) => sym(&mut out.sigma_w, i, j),
    }
    out
}

fn sym_coords(dim: usize, f: impl Fn(usize, usize) -> Coord) -> Vec<Coord> {
    (0..dim)
        .flat_map(|i| (i..dim).map(move |j| (i, j)))
        .map(|(i, j)| f(i, j))
        .collect()
}

/// `‖∇L‖ / (1 + |L|)` by central differences over `coords`.
fn relative_gradient(
    objective: &dyn Fn(&ModelParams) -> Result<f64>,
    at: &ModelParams,
    coords: &[Coord],
) -> Result<f64> {
    let base = objective(at)?;
    let mut sq = 0.0;
    for &c in coords {
        let h = 1e-6 * coord_value(at, c).abs().max(1e-2);
        let g = (objective(&perturb(at, c, h))? - objective(&perturb(at, c, -h))?) / (2.0 * h);
        sq += g * g;
    }
    Ok(sq.sqrt() / (1.0 + base.abs()))
}

fn mstep_stationary() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let mut least_perturbed = f64::INFINITY;
    for _ in 0..20 {
        let n = rng.random_range(1..=3);
        let q = rng.random_range(0..=2);
        let p = rng.random_range(1..=n);
        let truth = random_model(&mut rng, n, q, p, 0.1);
        let data = random_dataset(&mut rng, &truth, 4, 25);
        let (posts, _) = e_step(&data, &truth)?;
        let opt = m_step(&data, &posts, &truth)?;
        let coords: [Vec<Coord>; 3] = [
            (0..n)
                .map(Coord::Mu0)
                .chain(sym_coords(n, Coord::Sigma0))
                .collect(),
            (0..p)
                .map(Coord::C0)
                .chain(sym_coords(p, Coord::SigmaV))
                .collect(),
            (0..=q)
                .flat_map(|k| (0..=n).flat_map(move |i| (0..n).map(move |j| Coord::Gen(k, i, j))))
                .chain(sym_coords(n, Coord::SigmaW))
                .collect(),
        ];
        let mut shifted = opt.clone();
        shifted.mu0.add_scalar_mut(0.05);
        shifted.c0.add_scalar_mut(0.05);
        shifted.gen[0].add_scalar_mut(0.05);
        for which in 0..3 {
            let obj = |m: &ModelParams| -> Result<f64> {
                let (l1, l2, l3) = decoupled_objectives(&data, &posts, m)?;
                Ok([l1, l2, l3][which])
            };
            worst = worst.max(relative_gradient(&obj, &opt, &coords[which])?);
            least_perturbed =
                least_perturbed.min(relative_gradient(&obj, &shifted, &coords[which])?);
        }
    }
    outcome(
        worst < 1e-5,
        format!(
            "max relative gradient norm {worst:.2e} over 20 instances x 3 objectives (< 1e-5); \
             after a 0.05 shift of the means the smallest is {least_perturbed:.2e}"
        ),
    )
}

// 4 -------------------------------------------------------------------------

fn slow_manifold_spectrum() -> Result<Outcome> {
    let data = dataset_protocol_slow_manifold(0)?;
    let config = SelectConfig {
        fit: FitConfig {
            max_iters: 3000,
            rel_tol: 1e-5,
        },
        base_seed: 0,
        init_time_scale: Some(SLOW_MANIFOLD_TIME_SCALE),
    };
    let (best, table) = match select_model(&data.train, &[4], 5, &config) {
        Ok(r) => r,
        Err((e, table)) => {
            return outcome(
                false,
                format!("selection failed: {e}; runs {}", table.len()),
            );
        }
    };
    let mut lams: Vec<Complex64> = eigen_spectrum(&best.params, &DVector::zeros(1))?
        .iter()
        .map(|e| e.lam)
        .collect();
    lams.sort_by(|a, b| a.re.total_cmp(&b.re));
    let exact = [-5.0, -3.0, -2.0, -1.0, 0.0];
    let worst = lams
        .iter()
        .zip(exact)
        .map(|(l, e)| (l - Complex64::new(e, 0.0)).norm())
        .fold(0.0, f64::max);
    let shown: Vec<String> = lams.iter().map(|l| format!("{:.3}", l.re)).collect();
    let converged = table.iter().filter(|r| r.converged).count();
    outcome(
        lams.len() == 5 && worst <= 0.15,
        format!(
            "eigenvalues [{}], max error {worst:.3} (<= 0.15); {converged}/{} runs converged, best loglik {:.2}",
            shown.join(", "),
            table.len(),
            best.final_loglik()
        ),
    )
}

// 5-7 -----------------------------------------------------------------------

struct DuffingFit {
    data: ProtocolData,
    edmd: ModelParams,
    lift: EdmdLift,
    em: ModelParams,
    iterations: usize,
    stop: StopReason,
}

fn duffing_fit() -> std::result::Result<&'static DuffingFit, String> {
    static FIT: OnceLock<std::result::Result<DuffingFit, String>> = OnceLock::new();
    FIT.get_or_init(|| {
        let run = || -> Result<DuffingFit> {
            let data = dataset_protocol_duffing(0)?;
            let dict = legendre_dictionary(&[(-2.0, 2.0), (-2.0, 2.0)], &[3, 3])?;
            let (edmd, lift) = init_from_edmd_lift(&data.train, &dict)?;
            let res = fit(&data.train, &edmd, &FitConfig::default())?;
            Ok(DuffingFit {
                data,
                edmd,
                lift,
                em: res.params,
                iterations: res.iterations,
                stop: res.stop,
            })
        };
        run().map_err(|e| e.to_string())
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn nearest(pairs: &[EigenPair], target: Complex64) -> Complex64 {
    pairs
        .iter()
        .map(|p| p.lam)
        .min_by(|a, b| (a - target).norm().total_cmp(&(b - target).norm()))
        .expect("non-empty spectrum")
}

fn duffing_spectrum() -> Result<Outcome> {
    let d = match duffing_fit() {
        Ok(d) => d,
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let target = Complex64::new(-0.25, 31f64.sqrt() / 4.0);
    let u = DVector::zeros(0);
    let em = nearest(&eigen_spectrum(&d.em, &u)?, target);
    let edmd = nearest(&eigen_spectrum(&d.edmd, &u)?, target);
    let (de, dd) = ((em - target).norm(), (edmd - target).norm());
    outcome(
        de <= 0.35 && de < dd,
        format!(
            "EM {:.4}{:+.4}i at {de:.4} (<= 0.35), EDMD {:.4}{:+.4}i at {dd:.4}; EM stopped after {} iterations ({:?})",
            em.re, em.im, edmd.re, edmd.im, d.iterations, d.stop
        ),
    )
}

/// Fixed point (`x = −1` or `x = +1`) reached from `x` by the true flow.
fn basin_of(x: &[f64; 2]) -> usize {
    let f = |s: &[f64]| duffing_rhs(DUFFING_ALPHA, DUFFING_BETA, DUFFING_DELTA, s);
    let end = rk4_interval(&f, x, 60.0, 6000);
    assert!(
        (end[0].abs() - 1.0).abs() < 1e-3 && end[1].abs() < 1e-3,
        "not settled: {end:?}"
    );
    usize::from(end[0] > 0.0)
}

fn duffing_basins() -> Result<Outcome> {
    let d = match duffing_fit() {
        Ok(d) => d,
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let pairs = eigen_spectrum(&d.em, &DVector::zeros(0))?;
    let n = d.em.n;
    let constant = (0..pairs.len())
        .min_by(|&a, &b| {
            pairs[a]
                .v
                .rows(1, n)
                .norm()
                .total_cmp(&pairs[b].v.rows(1, n).norm())
        })
        .expect("non-empty spectrum");
    let pair = (0..pairs.len())
        .filter(|&i| i != constant)
        .map(|i| &pairs[i])
        .min_by(|a, b| a.lam.norm().total_cmp(&b.lam.norm()))
        .expect("nonconstant eigenpair");
    let mut counts = [[0usize; 2]; 2];
    for (traj, states) in d.data.test.trajectories.iter().zip(&d.data.test_states) {
        // every point of a trajectory lies in the basin of its end point
        let basin = basin_of(states.last().expect("non-empty"));
        let (post, _) = smooth(&d.em, traj)?;
        for (phi, _) in eigenfunction_values(&post, pair)? {
            counts[basin][usize::from(phi.re > 0.0)] += 1;
        }
    }
    let total: usize = counts.iter().flatten().sum();
    let consistent = counts[0][0].max(counts[0][1]) + counts[1][0].max(counts[1][1]);
    let fraction = consistent as f64 / total as f64;
    let majority = |c: [usize; 2]| c[1] > c[0];
    let separates = majority(counts[0]) != majority(counts[1]);
    outcome(
        fraction >= 0.95 && separates,
        format!(
            "lambda {:.5}{:+.5}i, consistent sign on {:.2}% of {total} points (>= 95%), counts by basin {counts:?}",
            pair.lam.re,
            pair.lam.im,
            100.0 * fraction
        ),
    )
}

fn duffing_prediction() -> Result<Outcome> {
    let d = match duffing_fit() {
        Ok(d) => d,
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let w = d.data.warmup;
    let len = d.data.test.trajectories[0].outputs.len();
    let m = d.data.test.trajectories.len() as f64;
    let mut mse_em = vec![0.0; len - w];
    let mut mse_edmd = vec![0.0; len - w];
    let sm = step_matrix(&d.edmd, &DVector::zeros(0))?;
    for traj in &d.data.test.trajectories {
        let f = forecast(&d.em, traj, w)?;
        // EDMD propagates the lifted last estimation sample
        let mut z = d.lift.lift(traj.outputs[w - 1].as_slice());
        for (j, mean) in f.mean.iter().enumerate() {
            z = &sm.a * &z + &sm.b;
            let y = &traj.outputs[w + j];
            mse_em[j] += (mean - y).norm_squared() / m;
            mse_edmd[j] += (d.edmd.observe(&z) - y).norm_squared() / m;
        }
    }
    let losses = mse_em.iter().zip(&mse_edmd).filter(|(a, b)| a >= b).count();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    outcome(
        losses == 0,
        format!(
            "EM not better at {losses} of {} forecast times; time-averaged MSE EM {:.3e}, EDMD {:.3e}",
            mse_em.len(),
            mean(&mse_em),
            mean(&mse_edmd)
        ),
    )
}

// 8 -------------------------------------------------------------------------

/// Slow-manifold plant that also records the true observed coordinate.
struct RecordingPlant {
    inner: SlowManifoldPlant,
    truth: Vec<f64>,
}

impl Plant for RecordingPlant {
    fn output(&self) -> DVector<f64> {
        self.inner.output()
    }

    fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let y = self.inner.step(u)?;
        self.truth.push(self.inner.state[1]);
        Ok(y)
    }
}

fn mpc_tracking() -> Result<Outcome> {
    let dt = 0.01;
    let segment = 400;
    let levels = [1.0, 2.0, 0.5];
    let total = segment * levels.len();
    let reference: Vec<f64> = (0..=total)
        .map(|l| levels[(l / segment).min(levels.len() - 1)])
        .collect();
    let model = slow_manifold_params(1.0, 5.0, dt, 0.01);
    let spec = OcpSpec {
        q_weight: DMatrix::identity(1, 1),
        r_weight: DMatrix::identity(1, 1) * 1e-3,
        n_p: 50,
        n_c: 5,
        u_min: DVector::from_element(1, -2.0),
        u_max: DVector::from_element(1, 2.0),
        y_ref: reference
            .iter()
            .map(|&r| DVector::from_element(1, r))
            .collect(),
    };
    let x0 = [0.5, 0.2];
    let new_plant = || {
        let inner = SlowManifoldPlant::with_noise(1.0, 5.0, dt, x0, 0.01, 17);
        RecordingPlant {
            truth: vec![inner.state[1]],
            inner,
        }
    };
    let mut plant = new_plant();
    let trace = mpc_loop(&mut plant, &model, &spec, total, &SolverConfig::default())?;
    let in_bounds = trace.inputs.iter().all(|u| (-2.0..=2.0).contains(&u[0]));
    let mut idle = new_plant();
    for _ in 0..total {
        idle.step(&DVector::zeros(1))?;
    }
    let mae = |truth: &[f64]| {
        truth
            .iter()
            .zip(&reference)
            .map(|(y, r)| (y - r).abs())
            .sum::<f64>()
            / truth.len() as f64
    };
    let (e_mpc, e_zero) = (mae(&plant.truth), mae(&idle.truth));
    let tracking = e_mpc <= e_zero / 5.0 && in_bounds;

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=4);
        let q = rng.random_range(1..=2);
        let p = rng.random_range(1..=n);
        let m = random_model(&mut rng, n, q, p, 0.05);
        let n_p = rng.random_range(2..=15);
        let spec = OcpSpec {
            q_weight: common::random_spd(&mut rng, p, 1.0, 0.5),
            r_weight: common::random_spd(&mut rng, q, 0.1, 0.5),
            n_p,
            n_c: 1,
            u_min: DVector::from_element(q, -10.0),
            u_max: DVector::from_element(q, 10.0),
            y_ref: (0..=n_p).map(|_| normal_vector(&mut rng, p, 1.0)).collect(),
        };
        let z0 = normal_vector(&mut rng, n, 1.0);
        let u = random_inputs(&mut rng, q, n_p);
        let g = ocp_gradient(&m, &z0, &u, &spec)?;
        let mut diff = 0.0;
        let mut norm = 0.0;
        for j in 0..n_p {
            for k in 0..q {
                let h = 1e-6 * u[j][k].abs().max(1.0);
                let mut up = u.clone();
                let mut down = u.clone();
                up[j][k] += h;
                down[j][k] -= h;
                let fd =
                    (ocp_cost(&m, &z0, &up, &spec)? - ocp_cost(&m, &z0, &down, &spec)?) / (2.0 * h);
                diff += (g[j][k] - fd).powi(2);
                norm += g[j][k].powi(2);
            }
        }
        worst = worst.max((diff / norm).sqrt());
    }
    outcome(
        tracking && worst < 1e-6,
        format!(
            "mean |y - r| {e_mpc:.4} vs zero input {e_zero:.4} (ratio {:.3} <= 0.2), inputs within bounds: {in_bounds}; \
             adjoint vs finite differences max relative error {worst:.2e} over 50 instances (< 1e-6)",
            e_mpc / e_zero
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn superposition_counterexample() -> Result<Outcome> {
    let demo = superposition_demo(1e-4, 1.0)?;
    let err = demo
        .bilinear
        .iter()
        .zip(&demo.truth)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let last = demo.truth.len() - 1;
    let gap = (demo.superposition[last] - demo.truth[last]).abs();
    let t_end = demo.times[last];
    outcome(
        err < 1e-3 && gap > 1.0 && (t_end - 1.0).abs() < 1e-12,
        format!("bilinear max error {err:.2e} (< 1e-3); superposition off by {gap:.4} at t = {t_end} (> 1)"),
    )
}

// 10 ------------------------------------------------------------------------

fn edmd_limit() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let truth = random_model(&mut rng, 2, 1, 1, 0.1);
    let data = random_dataset(&mut rng, &truth, 2, 20);
    let (posts, _) = e_step(&data, &truth)?;
    let mut acc = MStepAccumulators::new(2, 1);
    for (t, post) in data.trajectories.iter().zip(&posts) {
        acc.add_trajectory(&t.inputs, post, data.dt);
    }
    let exact = acc.solve()?;
    let filters = data
        .trajectories
        .iter()
        .map(|t| kalman_forward(&truth, t))
        .collect::<Result<Vec<_>>>()?;
    let mut sampler = ChaCha8Rng::seed_from_u64(1011);
    let mut errors = Vec::new();
    for k in [100usize, 1000, 10000] {
        let mut inputs = Vec::new();
        let mut states = Vec::new();
        for (t, filt) in data.trajectories.iter().zip(&filters) {
            for _ in 0..k {
                inputs.push(t.inputs.as_slice());
                states.push(sample_posterior(&truth, t, filt, &mut sampler)?);
            }
        }
        let (psi, psi_dot) = lift_snapshots(inputs, states.iter().map(|s| s.as_slice()), data.dt)?;
        let sampled = edmd_generator_fit(&psi, &psi_dot)?;
        errors.push((&sampled - &exact).norm() / exact.norm());
    }
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    outcome(
        monotone && errors[2] < 5e-2,
        format!(
            "relative Frobenius error {:.3e}, {:.3e}, {:.3e} for K = 1e2, 1e3, 1e4 (decreasing, last < 5e-2)",
            errors[0], errors[1], errors[2]
        ),
    )
}

// ---------------------------------------------------------------------------

type Criterion = (usize, &'static str, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "smoother matches dense oracle", smoother_matches_oracle),
        (2, "EM likelihood is monotone", em_monotone),
        (3, "M-step is stationary", mstep_stationary),
        (4, "slow-manifold eigenvalues", slow_manifold_spectrum),
        (5, "Duffing spectrum", duffing_spectrum),
        (6, "Duffing basin separation", duffing_basins),
        (7, "Duffing forecast beats EDMD", duffing_prediction),
        (8, "MPC tracking and adjoint", mpc_tracking),
        (
            9,
            "superposition counterexample",
            superposition_counterexample,
        ),
        (10, "EDMD limit of sampled posteriors", edmd_limit),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(Ok(o)) => (o.pass, o.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {}: {name}: {detail} [{secs:.1}s]",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
