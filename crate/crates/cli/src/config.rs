//! JSON configuration files of the subcommands. Unknown keys are rejected.

use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    SlowManifold,
    Duffing,
    ScalarBilinear,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub protocol: Protocol,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Overrides the number of trajectories of the protocol.
    #[serde(default)]
    pub trajectories: Option<usize>,
    /// Overrides the samples per trajectory.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Sampling interval of the scalar bilinear protocol.
    #[serde(default)]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Random,
    Edmd,
}

fn default_dims() -> Vec<usize> {
    vec![4]
}

fn default_restarts() -> usize {
    1
}

fn default_init() -> InitKind {
    InitKind::Random
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitFileConfig {
    /// Latent dimensions to try (excluding the constant coordinate).
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub rel_tol: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_init")]
    pub init: InitKind,
    /// Time scale of the random initialization (defaults to dt).
    #[serde(default)]
    pub init_time_scale: Option<f64>,
    /// Legendre degrees per output for `init = "edmd"`.
    #[serde(default)]
    pub legendre_degrees: Option<Vec<usize>>,
    /// Dictionary box per output for `init = "edmd"`.
    #[serde(default)]
    pub domain: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcFileConfig {
    pub q_weight: Vec<Vec<f64>>,
    pub r_weight: Vec<Vec<f64>>,
    pub n_p: usize,
    pub n_c: usize,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    /// Reference outputs over the whole run, padded with the last entry.
    pub y_ref: Vec<Vec<f64>>,
    pub total_steps: usize,
    /// Initial plant state.
    pub x0: Vec<f64>,
    #[serde(default)]
    pub noise_var: Option<f64>,
    #[serde(default)]
    pub solver_tol: Option<f64>,
    #[serde(default)]
    pub solver_max_iters: Option<usize>,
}
