//! Duffing oscillator: EDMD initialization on a Legendre dictionary, EM
//! refinement, spectra, forecast errors and basin separation.
//!
//! Usage: `duffing [seed] [max_iters]`.

use koopman_em::em::{fit_with_observer, init_from_edmd_lift, EdmdLift};
use koopman_em::spectral::{eigen_spectrum, eigenfunction_values};
use koopman_em::systems::{
    dataset_protocol_duffing, duffing_rhs, rk4_interval, ProtocolData, DUFFING_ALPHA, DUFFING_BETA,
    DUFFING_DELTA,
};
use koopman_em::{
    forecast, legendre_dictionary, smooth, step_matrix, EigenPair, FitConfig, ModelParams,
};
use nalgebra::DVector;
use num_complex::Complex64;

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn nearest(pairs: &[EigenPair], target: Complex64) -> Complex64 {
    pairs
        .iter()
        .map(|p| p.lam)
        .min_by(|a, b| (a - target).norm().total_cmp(&(b - target).norm()))
        .expect("non-empty spectrum")
}

fn main() -> AnyResult<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let max_iters: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(500);

    let data = dataset_protocol_duffing(seed)?;
    let dict = legendre_dictionary(&[(-2.0, 2.0), (-2.0, 2.0)], &[3, 3])?;
    let (edmd, lift) = init_from_edmd_lift(&data.train, &dict)?;
    let config = FitConfig {
        max_iters,
        ..FitConfig::default()
    };
    let res = fit_with_observer(&data.train, &edmd, &config, |it, ll| {
        if it % 10 == 0 {
            println!("iteration {it}: loglik {ll:.3}");
        }
    })?;
    println!(
        "stopped after {} iterations ({:?})",
        res.iterations, res.stop
    );

    let target = Complex64::new(-0.25, 31f64.sqrt() / 4.0);
    let u0 = DVector::zeros(0);
    for (name, m) in [("EDMD", &edmd), ("EM", &res.params)] {
        let lam = nearest(&eigen_spectrum(m, &u0)?, target);
        println!(
            "{name} eigenvalue nearest -0.25+1.3919i: {:.4}{:+.4}i (distance {:.4})",
            lam.re,
            lam.im,
            (lam - target).norm()
        );
    }
    forecast_errors(&data, &res.params, &edmd, &lift)?;
    basin_separation(&data, &res.params)?;
    Ok(())
}

fn forecast_errors(
    data: &ProtocolData,
    em: &ModelParams,
    edmd: &ModelParams,
    lift: &EdmdLift,
) -> AnyResult<()> {
    let w = data.warmup;
    let len = data.test.trajectories[0].outputs.len();
    let m = data.test.trajectories.len() as f64;
    let mut mse_em = vec![0.0; len - w];
    let mut mse_edmd = vec![0.0; len - w];
    let sm = step_matrix(edmd, &DVector::zeros(0))?;
    for traj in &data.test.trajectories {
        let f = forecast(em, traj, w)?;
        let mut z = lift.lift(traj.outputs[w - 1].as_slice());
        for (j, mean) in f.mean.iter().enumerate() {
            z = &sm.a * &z + &sm.b;
            let y = &traj.outputs[w + j];
            mse_em[j] += (mean - y).norm_squared() / m;
            mse_edmd[j] += (edmd.observe(&z) - y).norm_squared() / m;
        }
    }
    let worse = mse_em.iter().zip(&mse_edmd).filter(|(a, b)| a >= b).count();
    println!(
        "forecast times where EM is not better than EDMD: {worse} of {}",
        mse_em.len()
    );
    for j in (0..mse_em.len()).step_by(100) {
        println!(
            "  t = {:5.2}: MSE EM {:.3e}, EDMD {:.3e}",
            (w + j) as f64 * data.test.dt,
            mse_em[j],
            mse_edmd[j]
        );
    }
    Ok(())
}

/// Sign of the eigenfunction with eigenvalue nearest zero against the basin
/// each test trajectory ends in.
fn basin_separation(data: &ProtocolData, em: &ModelParams) -> AnyResult<()> {
    let pairs = eigen_spectrum(em, &DVector::zeros(0))?;
    let constant = (0..pairs.len())
        .min_by(|&a, &b| {
            pairs[a]
                .v
                .rows(1, em.n)
                .norm()
                .total_cmp(&pairs[b].v.rows(1, em.n).norm())
        })
        .expect("non-empty spectrum");
    let pair = (0..pairs.len())
        .filter(|&i| i != constant)
        .map(|i| &pairs[i])
        .min_by(|a, b| a.lam.norm().total_cmp(&b.lam.norm()))
        .expect("nonconstant eigenpair");
    let f = |x: &[f64]| duffing_rhs(DUFFING_ALPHA, DUFFING_BETA, DUFFING_DELTA, x);
    let mut counts = [[0usize; 2]; 2];
    for (traj, states) in data.test.trajectories.iter().zip(&data.test_states) {
        let end = rk4_interval(&f, states.last().expect("non-empty"), 60.0, 6000);
        let basin = usize::from(end[0] > 0.0);
        let (post, _) = smooth(em, traj)?;
        for (phi, _) in eigenfunction_values(&post, pair)? {
            counts[basin][usize::from(phi.re > 0.0)] += 1;
        }
    }
    let total: usize = counts.iter().flatten().sum();
    let consistent = counts[0][0].max(counts[0][1]) + counts[1][0].max(counts[1][1]);
    println!(
        "eigenvalue {:.5}{:+.5}i: sign counts (negative, positive) by basin {counts:?}, consistent {:.2}%",
        pair.lam.re,
        pair.lam.im,
        100.0 * consistent as f64 / total as f64
    );
    Ok(())
}
