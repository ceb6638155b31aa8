//! Monte Carlo accumulators, the exact linear oracle and bounds, and the
//! experiments comparing the reference and Wong–Zakai flows.

mod accumulator;
mod coupled;
mod drivers;
mod linear;
mod milstein;
mod moments;
mod parallel;
mod rate;

pub use accumulator::{Estimate, Merge, MomentAccumulator};
pub(crate) use coupled::checked_scheme;
pub use coupled::{
    certify_model, coupled_error_experiment, default_grid_n, required_condition, CoupledConfig,
    ErrorReport, NodeEstimate,
};
pub use drivers::{driver_moment_check, DriverMomentRow};
pub use linear::{
    exact_linear_variance, exact_linear_variance_limit, lg_stable_bound, per_cell_variance,
    unstable_bounds,
};
pub use milstein::{
    chi_bin_edges, milstein_residual_experiment, orthogonality_check, OrthoEntry,
    OrthogonalityTable, ResidualConfig, ResidualReport, ResidualRow, CHI_BINS,
};
pub use moments::{uniform_moments_experiment, MomentReport};
pub use parallel::{run_paths, BLOCK_PATHS};
pub use rate::{rate_fit, RateFit};
