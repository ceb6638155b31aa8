//! Time meshes, coupled Brownian sampling and the two smooth drivers.
//!
//! Every coupled experiment draws one Brownian path per `(seed, path_id)`:
//! the coarse increments come first from a counter-based stream, and the
//! fine nodes are filled in afterwards by dyadic Brownian-bridge refinement
//! inside each coarse cell. The polygonal driver depends on the coarse
//! increments only, so it and the fine-mesh reference flow are functions of
//! the same stored path.

mod brownian;
mod driver;
mod mesh;

pub use brownian::{sample_brownian, sample_brownian_into, BrownianPath};
pub use driver::{
    build_driver_into, driver_gap_moments, ou_driver, ou_driver_into, polygonal_driver, polygonal_driver_into,
    DriverKind, DriverPath,
};
pub use mesh::{make_mesh, TimeMesh};
