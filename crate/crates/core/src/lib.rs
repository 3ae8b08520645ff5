//! Learning bilinear Koopman-generator surrogate models of control-affine
//! systems from partial, noisy, actuated observations.
//!
//! The model is a hidden Markov model whose latent state evolves under an
//! input-affine combination of generator matrices. Parameters are learned by
//! expectation-maximization ([`em::fit`]); the learned generators give
//! Koopman eigenvalues and eigenfunction estimates ([`spectral`]) and serve
//! as surrogates for model predictive control ([`mpc`]).

pub mod edmd;
pub mod em;
pub mod error;
pub mod estimation;
pub mod io;
pub mod linalg;
pub mod model;
pub mod mpc;
pub mod spectral;
pub mod systems;

pub use edmd::{edmd_generator_fit, legendre_dictionary, Dictionary};
pub use em::{fit, init_from_edmd, init_random, m_step, select_model, FitConfig, FitResult};
pub use error::{Error, Result};
pub use estimation::{
    forecast, kalman_forward, rts_smoother, smooth, FilteredMoments, Forecast, PosteriorMoments,
};
pub use model::{simulate, step_matrix, Dataset, ModelParams, StepMatrices, Trajectory};
pub use mpc::{mpc_loop, solve_ocp, OcpSpec, Plant, SolverConfig};
pub use spectral::{eigen_spectrum, eigenfunction_values, generator_at_input, EigenPair};
