use std::fs::File;
use std::path::{Path, PathBuf};

use koopman_em::em::{
    fit as em_fit, init_from_edmd, init_random_scaled, input_bounds, select_model, FitResult,
    SelectConfig, SelectionRun, StopReason,
};
use koopman_em::estimation::forecast;
use koopman_em::io::{
    read_dataset, read_json, read_model, rows_to_matrix, write_dataset, write_json, write_model,
};
use koopman_em::mpc::{mpc_loop, MpcTrace, OcpSpec, Plant, SolverConfig};
use koopman_em::systems::{
    input_piecewise_constant, relative_l2_error, DuffingPlant, DuffingProtocol, ProtocolData,
    ScalarBilinearPlant, SlowManifoldPlant, SlowManifoldProtocol, DUFFING_ALPHA, DUFFING_BETA,
    DUFFING_DELTA,
};
use koopman_em::{eigen_spectrum, legendre_dictionary, Dataset, Error, FitConfig, Trajectory};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{FitFileConfig, GenerateConfig, InitKind, MpcFileConfig, Protocol};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(
                Error::Numerical(_)
                | Error::SingularModel(_)
                | Error::Identifiability(_)
                | Error::NoConvergedRun(_),
            ) => 2,
            _ => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(format!("csv: {e}"))
    }
}

pub struct Context {
    pub seed: u64,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

type Rows = Vec<Vec<String>>;

fn write_csv(path: &Path, header: &[String], rows: &Rows) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn indexed(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

fn cells(v: &DVector<f64>) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

/// True plant states per trajectory.
type StateHistories = Vec<Vec<[f64; 2]>>;

fn scalar_bilinear_protocol(
    trajectories: usize,
    samples: usize,
    dt: f64,
    seed: u64,
) -> Result<ProtocolData, CliError> {
    if samples < 2 {
        return Err(CliError::Usage("samples must be at least 2".into()));
    }
    let make = |offset: u64| -> Result<(Dataset, StateHistories), CliError> {
        let mut trajs = Vec::new();
        let mut all_states = Vec::new();
        for m in 0..trajectories as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(offset + m);
            let inputs = input_piecewise_constant(samples - 1, dt, 10.0 * dt, 1.0, 1, &mut rng)?;
            let mut plant = ScalarBilinearPlant::new(dt);
            let mut outputs = vec![plant.output()];
            let mut states = vec![[plant.x, 0.0]];
            for u in &inputs {
                outputs.push(plant.step(u)?);
                states.push([plant.x, 0.0]);
            }
            trajs.push(Trajectory { inputs, outputs });
            all_states.push(states);
        }
        Ok((
            Dataset {
                dt,
                p: 1,
                q: 1,
                trajectories: trajs,
            },
            all_states,
        ))
    };
    let (train, _) = make(0)?;
    let (test, test_states) = make(trajectories as u64)?;
    Ok(ProtocolData {
        train,
        test,
        warmup: samples.div_ceil(2),
        test_states,
    })
}

pub fn generate(ctx: &Context, config: &Path) -> Result<(), CliError> {
    let cfg: GenerateConfig = read_json(config)?;
    let seed = cfg.seed.unwrap_or(ctx.seed);
    if cfg.dt.is_some() && !matches!(cfg.protocol, Protocol::ScalarBilinear) {
        return Err(CliError::Usage(
            "dt: only configurable for the scalar_bilinear protocol".into(),
        ));
    }
    let (name, data) = match cfg.protocol {
        Protocol::SlowManifold => {
            let mut p = SlowManifoldProtocol::default();
            if let Some(m) = cfg.trajectories {
                p.trajectories = m;
            }
            if let Some(s) = cfg.samples {
                p.samples = s;
                p.train_samples = s.div_ceil(2);
            }
            ("slow_manifold", p.generate(seed)?)
        }
        Protocol::Duffing => {
            let mut p = DuffingProtocol::default();
            if let Some(m) = cfg.trajectories {
                p.trajectories = m;
            }
            if let Some(s) = cfg.samples {
                p.samples = s;
                p.warmup = p.warmup.min(s);
            }
            ("duffing", p.generate(seed)?)
        }
        Protocol::ScalarBilinear => (
            "scalar_bilinear",
            scalar_bilinear_protocol(
                cfg.trajectories.unwrap_or(10),
                cfg.samples.unwrap_or(101),
                cfg.dt.unwrap_or(0.01),
                seed,
            )?,
        ),
    };
    if data.train.trajectories.is_empty() {
        return Err(CliError::Usage("trajectories must be at least 1".into()));
    }
    write_dataset(&ctx.path("train.json"), &data.train)?;
    write_dataset(&ctx.path("test.json"), &data.test)?;
    let manifest = json!({
        "protocol": name,
        "seed": seed,
        "dt": data.train.dt,
        "train": "train.json",
        "test": "test.json",
        "train_trajectories": data.train.trajectories.len(),
        "test_trajectories": data.test.trajectories.len(),
        "warmup": data.warmup,
    });
    write_json(&ctx.path("manifest.json"), &manifest)?;
    ctx.say(format!(
        "{name}: {} train and {} test trajectories written to {}",
        data.train.trajectories.len(),
        data.test.trajectories.len(),
        ctx.out.display()
    ));
    Ok(())
}

fn stop_name(s: Option<StopReason>) -> &'static str {
    match s {
        Some(StopReason::Converged) => "converged",
        Some(StopReason::MaxIterations) => "max_iterations",
        Some(StopReason::LikelihoodDecrease) => "likelihood_decrease",
        None => "error",
    }
}

fn write_runs(ctx: &Context, table: &[SelectionRun]) -> Result<(), CliError> {
    let header: Vec<String> = [
        "dim",
        "seed",
        "final_loglik",
        "iterations",
        "converged",
        "stop",
        "error",
    ]
    .map(String::from)
    .to_vec();
    let rows = table
        .iter()
        .map(|r| {
            vec![
                r.dim.to_string(),
                r.seed.to_string(),
                r.final_loglik.to_string(),
                r.iterations.to_string(),
                r.converged.to_string(),
                stop_name(r.stop).to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(&ctx.path("runs.csv"), &header, &rows)?;
    if !ctx.quiet {
        for r in table {
            println!(
                "dim {} seed {}: loglik {:.6} after {} iterations ({})",
                r.dim,
                r.seed,
                r.final_loglik,
                r.iterations,
                r.error.as_deref().unwrap_or(stop_name(r.stop))
            );
        }
    }
    Ok(())
}

fn single_run(res: &FitResult, seed: u64) -> SelectionRun {
    SelectionRun {
        dim: res.params.n,
        seed,
        final_loglik: res.final_loglik(),
        iterations: res.iterations,
        converged: res.converged,
        stop: Some(res.stop),
        error: None,
    }
}

/// A single `(dim, restart)` pair is fitted directly and kept whether or not
/// it converged; otherwise the best converged run is selected.
pub fn fit(ctx: &Context, dataset: &Path, config: &Path) -> Result<(), CliError> {
    let data = read_dataset(dataset)?;
    let cfg: FitFileConfig = read_json(config)?;
    let mut fit_cfg = FitConfig::default();
    if let Some(m) = cfg.max_iters {
        fit_cfg.max_iters = m;
    }
    if let Some(t) = cfg.rel_tol {
        fit_cfg.rel_tol = t;
    }
    let result = match cfg.init {
        InitKind::Random if cfg.dims.len() == 1 && cfg.restarts == 1 => {
            let seed = cfg.seed.unwrap_or(ctx.seed);
            let tau = cfg.init_time_scale.unwrap_or(data.dt);
            let bounds = input_bounds(&data);
            let init =
                init_random_scaled(cfg.dims[0], data.q, data.p, data.dt, &bounds, seed, tau)?;
            let res = em_fit(&data, &init, &fit_cfg)?;
            write_runs(ctx, &[single_run(&res, seed)])?;
            res
        }
        InitKind::Random => {
            let select = SelectConfig {
                fit: fit_cfg,
                base_seed: cfg.seed.unwrap_or(ctx.seed),
                init_time_scale: cfg.init_time_scale,
            };
            match select_model(&data, &cfg.dims, cfg.restarts, &select) {
                Ok((best, table)) => {
                    write_runs(ctx, &table)?;
                    best
                }
                Err((e, table)) => {
                    if !table.is_empty() {
                        write_runs(ctx, &table)?;
                    }
                    return Err(e.into());
                }
            }
        }
        InitKind::Edmd => {
            let (Some(degrees), Some(domain)) = (cfg.legendre_degrees, cfg.domain) else {
                return Err(CliError::Usage(
                    "init \"edmd\" requires legendre_degrees and domain".into(),
                ));
            };
            let dict = legendre_dictionary(&domain, &degrees)?;
            let init = init_from_edmd(&data, &dict)?;
            let res = em_fit(&data, &init, &fit_cfg)?;
            write_runs(ctx, &[single_run(&res, 0)])?;
            res
        }
    };
    write_model(&ctx.path("model.json"), &result.params)?;
    let rows = result
        .loglik_trace
        .iter()
        .enumerate()
        .map(|(i, ll)| vec![i.to_string(), ll.to_string()])
        .collect();
    write_csv(
        &ctx.path("loglik.csv"),
        &["iteration".into(), "loglik".into()],
        &rows,
    )?;
    ctx.say(format!(
        "selected n = {} with loglik {:.6}",
        result.params.n,
        result.final_loglik()
    ));
    Ok(())
}

pub fn predict(ctx: &Context, model: &Path, dataset: &Path, warmup: usize) -> Result<(), CliError> {
    let params = read_model(model)?;
    let data = read_dataset(dataset)?;
    data.check_compatible(&params)?;
    let p = params.p;
    let mut header = vec!["trajectory".to_string(), "step".into(), "time".into()];
    header.extend(indexed("y", p));
    header.extend(indexed("y_pred", p));
    header.extend(indexed("lower", p));
    header.extend(indexed("upper", p));
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (m, traj) in data.trajectories.iter().enumerate() {
        let f = forecast(&params, traj, warmup)?;
        for (j, (mean, std)) in f.mean.iter().zip(&f.std).enumerate() {
            let l = f.start + j;
            let mut row = vec![
                m.to_string(),
                l.to_string(),
                (l as f64 * data.dt).to_string(),
            ];
            row.extend(cells(&traj.outputs[l]));
            row.extend(cells(mean));
            row.extend(cells(&(mean - std * 2.0)));
            row.extend(cells(&(mean + std * 2.0)));
            rows.push(row);
        }
        if !f.mean.is_empty() {
            let truth = traj.outputs[f.start..].to_vec();
            let (err, skipped) = relative_l2_error(&[f.mean], &[truth], data.dt)?;
            errors.push(vec![m.to_string(), err.to_string(), skipped.to_string()]);
        }
    }
    write_csv(&ctx.path("predictions.csv"), &header, &rows)?;
    write_csv(
        &ctx.path("errors.csv"),
        &[
            "trajectory".into(),
            "relative_l2_error".into(),
            "skipped".into(),
        ],
        &errors,
    )?;
    if !errors.is_empty() {
        let mean: f64 = errors
            .iter()
            .map(|r| r[1].parse::<f64>().unwrap_or(f64::NAN))
            .sum::<f64>()
            / errors.len() as f64;
        ctx.say(format!(
            "mean relative l2 error over {} trajectories: {mean:.6}",
            errors.len()
        ));
    } else {
        ctx.say("empty prediction horizon");
    }
    Ok(())
}

pub fn spectrum(ctx: &Context, model: &Path, u: Option<Vec<f64>>) -> Result<(), CliError> {
    let params = read_model(model)?;
    let u = DVector::from_vec(u.unwrap_or_else(|| vec![0.0; params.q]));
    let pairs = eigen_spectrum(&params, &u)?;
    let rows: Rows = pairs
        .iter()
        .map(|e| vec![e.lam.re.to_string(), e.lam.im.to_string()])
        .collect();
    write_csv(
        &ctx.path("eigenvalues.csv"),
        &["re".into(), "im".into()],
        &rows,
    )?;
    for e in &pairs {
        ctx.say(format!("{:+.6} {:+.6}i", e.lam.re, e.lam.im));
    }
    Ok(())
}

fn trace_rows(trace: &MpcTrace, dt: f64) -> Rows {
    (0..trace.outputs.len())
        .map(|l| {
            let mut row = vec![l.to_string(), (l as f64 * dt).to_string()];
            row.extend(cells(&trace.outputs[l]));
            row.extend(cells(&trace.references[l]));
            match trace.inputs.get(l) {
                Some(u) => row.extend(cells(u)),
                None => row.extend(std::iter::repeat_n(
                    String::new(),
                    trace.inputs.first().map_or(0, |u| u.len()),
                )),
            }
            row.extend(cells(&trace.estimates[l]));
            row
        })
        .collect()
}

pub fn mpc(ctx: &Context, model: &Path, plant: &str, spec_path: &Path) -> Result<(), CliError> {
    let params = read_model(model)?;
    let cfg: MpcFileConfig = read_json(spec_path)?;
    if cfg.y_ref.is_empty() {
        return Err(CliError::Usage("y_ref: reference must not be empty".into()));
    }
    let (p, q) = (params.p, params.q);
    let spec = OcpSpec {
        q_weight: rows_to_matrix(&cfg.q_weight, p, p, "q_weight")?,
        r_weight: rows_to_matrix(&cfg.r_weight, q, q, "r_weight")?,
        n_p: cfg.n_p,
        n_c: cfg.n_c,
        u_min: DVector::from_vec(cfg.u_min.clone()),
        u_max: DVector::from_vec(cfg.u_max.clone()),
        y_ref: cfg
            .y_ref
            .iter()
            .map(|r| DVector::from_vec(r.clone()))
            .collect(),
    };
    let mut solver = SolverConfig::default();
    if let Some(t) = cfg.solver_tol {
        solver.tol = t;
    }
    if let Some(m) = cfg.solver_max_iters {
        solver.max_iters = m;
    }
    let x0 = |dim: usize| -> Result<Vec<f64>, CliError> {
        if cfg.x0.len() != dim {
            return Err(CliError::Usage(format!(
                "x0: plant {plant} needs {dim} initial state values, got {}",
                cfg.x0.len()
            )));
        }
        Ok(cfg.x0.clone())
    };
    let trace = match plant {
        "slow_manifold" => {
            let x = x0(2)?;
            let noise = cfg.noise_var.unwrap_or(0.0);
            let mut pl =
                SlowManifoldPlant::with_noise(1.0, 5.0, params.dt, [x[0], x[1]], noise, ctx.seed);
            mpc_loop(&mut pl, &params, &spec, cfg.total_steps, &solver)?
        }
        "duffing" => {
            let x = x0(2)?;
            let mut pl = DuffingPlant::new(
                DUFFING_ALPHA,
                DUFFING_BETA,
                DUFFING_DELTA,
                params.dt,
                [x[0], x[1]],
            );
            mpc_loop(&mut pl, &params, &spec, cfg.total_steps, &solver)?
        }
        "scalar_bilinear" => {
            let x = x0(1)?;
            let mut pl = ScalarBilinearPlant::new(params.dt);
            pl.x = x[0];
            mpc_loop(&mut pl, &params, &spec, cfg.total_steps, &solver)?
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown plant \"{other}\" (expected slow_manifold, duffing or scalar_bilinear)"
            )))
        }
    };
    let mut header = vec!["step".to_string(), "time".into()];
    header.extend(indexed("y", p));
    header.extend(indexed("y_ref", p));
    header.extend(indexed("u", q));
    header.extend(indexed("z", params.n));
    write_csv(
        &ctx.path("trace.csv"),
        &header,
        &trace_rows(&trace, params.dt),
    )?;
    let err: f64 = trace
        .outputs
        .iter()
        .zip(&trace.references)
        .map(|(y, r)| (y - r).norm_squared())
        .sum::<f64>()
        * params.dt;
    ctx.say(format!(
        "{} steps, tracking error {err:.6}",
        trace.inputs.len()
    ));
    Ok(())
}
