//! Wong–Zakai approximations of SDEs and experiments on their time-uniform
//! error behaviour.
//!
//! The crate is organized by subsystem:
//!
//! * [`meshpaths`]: meshes, coupled Brownian sampling, polygonal and OU drivers;
//! * [`models`]: drift/diffusion definitions, Itô correction, commutation check;
//! * [`spectral`]: logarithmic norms and grid certification of the spectral conditions;
//! * [`flows`]: the Wong–Zakai ODE flow, the fine-mesh reference flow, the
//!   deterministic flow, Milstein terms, tangent decay and the Lamperti transform;
//! * [`estimators`]: Monte Carlo machinery, the exact linear oracle and the
//!   coupled error, rate, residual and orthogonality experiments;
//! * [`wzint`]: Wong–Zakai integrals and their Itô–Stratonovich remainder.

pub mod error;
pub mod estimators;
pub mod flows;
pub mod linalg;
pub mod meshpaths;
pub mod models;
pub mod quad;
pub mod spectral;
pub mod wzint;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use meshpaths::{
    driver_gap_moments, make_mesh, ou_driver, polygonal_driver, sample_brownian, BrownianPath,
    DriverKind, DriverPath, TimeMesh,
};
pub use models::{
    builtin_models, check_commutation, ito_correction, CommutationReport, ModelRegistry, SdeModel,
};
pub use spectral::{certify, lognorm, CertReport, Condition};
