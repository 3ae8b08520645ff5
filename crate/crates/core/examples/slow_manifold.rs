//! Fits a 4-dimensional latent model to the slow-manifold system and prints
//! the drift spectrum next to the exact one.

use std::time::Instant;

use koopman_em::em::{select_model, SelectConfig};
use koopman_em::spectral::eigen_spectrum;
use koopman_em::systems::dataset_protocol_slow_manifold;
use koopman_em::FitConfig;
use nalgebra::DVector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let restarts = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let tau: Option<f64> = std::env::args().nth(3).and_then(|s| s.parse().ok());
    let max_iters = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(500);
    let rel_tol = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-7);
    let data = dataset_protocol_slow_manifold(seed)?;
    let start = Instant::now();
    let config = SelectConfig {
        fit: FitConfig { max_iters, rel_tol },
        base_seed: seed,
        init_time_scale: tau,
    };
    let (best, table) = match select_model(&data.train, &[4], restarts, &config) {
        Ok((best, table)) => (Some(best), table),
        Err((e, table)) => {
            println!("selection failed: {e}");
            (None, table)
        }
    };
    for run in &table {
        println!(
            "seed {} loglik {:.4} iterations {} {:?} {}",
            run.seed,
            run.final_loglik,
            run.iterations,
            run.stop,
            run.error.as_deref().unwrap_or("")
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    let Some(best) = best else { return Ok(()) };
    for pair in eigen_spectrum(&best.params, &DVector::zeros(1))? {
        println!("{:+.4} {:+.4}i", pair.lam.re, pair.lam.im);
    }
    println!("exact: 0, -1, -2, -3, -5");
    Ok(())
}
