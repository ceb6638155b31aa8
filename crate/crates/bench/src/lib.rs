//! Fixtures shared by the benchmarks.

use wz_core::{make_mesh, polygonal_driver, sample_brownian, BrownianPath, DriverPath};

/// A Brownian path and its polygonal driver on `[0, horizon]`.
pub fn fixture(horizon: f64, eps: f64, refine: usize) -> (BrownianPath, DriverPath) {
    let mesh = make_mesh(horizon, eps, refine).expect("valid mesh");
    let bp = sample_brownian(&mesh, 1, 0, 0);
    let driver = polygonal_driver(&bp, &mesh).expect("matching mesh");
    (bp, driver)
}
