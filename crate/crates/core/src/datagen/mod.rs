//! Benchmark generators with known ground truth.

mod lorenz96;
mod nc8;
mod svar;
mod tvsem;

pub use lorenz96::{lorenz96_derivative, lorenz96_step, lorenz96_truth, simulate_lorenz96, Lorenz96Spec};
pub use nc8::{
    nc8_driver, nc8_linear_matrices, nc8_phi, nc8_step, nc8_truth, simulate_nc8, soft_cubic, Interaction,
    NC8_CLAMP, NC8_DIM, NC8_DRIVEN, NC8_LAGS,
};
pub use svar::{
    companion_spectral_radius, spectral_radius, sample_svar_graph, simulate_svar, simulate_svar_with_graph, svar_step,
    Nonlinearity, SvarSpec,
};
pub use tvsem::{
    simulate_tvsem, tvsem_dominant, tvsem_regime_at, tvsem_regime_matrix, tvsem_step, Direction, TvsemSpec,
};
