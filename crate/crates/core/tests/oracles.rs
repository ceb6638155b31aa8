//! Library results against independently computed values.

use wz_core::estimators::{coupled_error_experiment, driver_moment_check, CoupledConfig, MomentAccumulator};
use wz_core::flows::lamperti_transform;
use wz_core::models::BoundedSigma1d;
use wz_core::{builtin_models, certify, make_mesh, polygonal_driver, sample_brownian, Condition, DriverKind, SdeModel};

#[test]
fn coarse_values_do_not_depend_on_refinement() {
    let coarse = make_mesh(2.0, 0.25, 4).unwrap();
    let fine = make_mesh(2.0, 0.25, 64).unwrap();
    let a = sample_brownian(&coarse, 2, 3, 17);
    let b = sample_brownian(&fine, 2, 3, 17);
    for k in 0..=coarse.coarse_cells() {
        assert_eq!(a.coarse_value(k), b.coarse_value(k));
    }
    // nodes of the m = 4 mesh are nodes of the m = 64 mesh
    for j in 0..=coarse.fine_cells() {
        assert_eq!(a.value(j), b.value(16 * j));
    }
}

#[test]
fn increments_have_variance_delta() {
    let mesh = make_mesh(1.0, 0.1, 16).unwrap();
    let mut acc = MomentAccumulator::new();
    for id in 0..400 {
        let bp = sample_brownian(&mesh, 1, 1, id);
        for j in 0..mesh.fine_cells() {
            acc.push(bp.increment(j, 0).powi(2));
        }
    }
    let e = acc.estimate();
    assert!(e.within(mesh.delta(), 4.0), "{e:?} vs {}", mesh.delta());
}

#[test]
fn polygonal_gap_is_a_bridge() {
    // E(B − B̄)² = ε u(1 − u) and E(B − B̄)⁴ = 3 (ε u(1 − u))² inside a cell
    let eps = 0.2;
    let mesh = make_mesh(1.0, eps, 16).unwrap();
    let times: Vec<f64> = [2usize, 5, 8, 13].iter().map(|&j| j as f64 * mesh.delta()).collect();
    let rows = driver_moment_check(DriverKind::Polygonal, &mesh, &times, 20_000, 4).unwrap();
    for r in &rows {
        let u = r.t / eps;
        let var = eps * u * (1.0 - u);
        let target = if r.order == 2 { var } else { 3.0 * var * var };
        assert!((r.exact - target).abs() < 1e-14, "{r:?}");
        assert!(r.mc.within(target, 4.0), "{r:?}");
    }
    // the polygonal driver is exact at coarse nodes
    let bp = sample_brownian(&mesh, 1, 9, 0);
    let drv = polygonal_driver(&bp, &mesh).unwrap();
    for k in 0..=mesh.coarse_cells() {
        assert_eq!(drv.value(mesh.fine_index(k)), bp.coarse_value(k));
    }
}

#[test]
fn ou_gap_variance() {
    // B − B̄ = ε Y at the OU state, variance ε/2 (1 − e^{−2t/ε})
    let eps = 0.1;
    let mesh = make_mesh(1.0, eps, 64).unwrap();
    let rows = driver_moment_check(DriverKind::OrnsteinUhlenbeck, &mesh, &[0.1, 0.5, 1.0], 20_000, 6).unwrap();
    for r in rows.iter().filter(|r| r.order == 2) {
        let target = eps / 2.0 * (1.0 - (-2.0 * r.t / eps).exp());
        assert!((r.exact - target).abs() < 1e-14);
        assert!(r.passes(4.0), "{r:?}");
    }
}

#[test]
fn hb_certificate_matches_dense_scan() {
    let model = builtin_models().build("stable_nonlinear1d", &[]).unwrap();
    let rep = certify(model.as_ref(), Condition::Hb, &[(-5.0, 5.0)], 1001).unwrap();
    let scan = (0..=100_000)
        .map(|i| -5.0 + 10.0 * i as f64 / 100_000.0)
        .map(|x: f64| -2.0 + x.cos())
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((rep.sup_value - scan).abs() < 1e-12, "{} vs {scan}", rep.sup_value);
    assert!(rep.holds());
    assert_eq!(rep.lambda, Some(1.0));
}

#[test]
fn linear_gap_matches_closed_form() {
    let (a, eps) = (-1.0f64, 0.1);
    let model = builtin_models().build("linear1d", &[a]).unwrap();
    let cfg = CoupledConfig::new(DriverKind::Polygonal, eps, 3.0, 32, vec![vec![0.0]], 6000, 12);
    let rep = &coupled_error_experiment(model.as_ref(), &cfg).unwrap()[0];
    let z = a * eps;
    let q = z.exp_m1() / z;
    let v = (2.0 * z).exp_m1() / (2.0 * z) - q * q;
    for (n, node) in rep.coarse_nodes().enumerate() {
        let exact: f64 = (0..n).map(|j| v * eps * (2.0 * z * j as f64).exp()).sum();
        assert!(node.l2.within(exact, 4.0), "n={n}: {:?} vs {exact}", node.l2);
    }
}

#[test]
fn lamperti_of_bounded_sigma() {
    // ∫_0^x dy/(2 + cos y) = (2/√3) atan(tan(x/2)/√3) for |x| < π
    let lm = lamperti_transform(BoundedSigma1d, (-5.0, 5.0), 201).unwrap();
    let (lo, hi) = lm.sigma_bounds();
    assert!((lo - 1.0).abs() < 1e-3 && hi == 3.0, "{lo} {hi}");
    for x in [-3.0f64, -1.2, 0.0, 0.4, 2.5, 3.1] {
        let exact = 2.0 / 3f64.sqrt() * ((x / 2.0).tan() / 3f64.sqrt()).atan();
        assert!((lm.theta(x) - exact).abs() < 1e-9, "x={x}");
        assert!((lm.theta_inv(exact) - x).abs() < 1e-8);
    }
    let mut s = [0.0];
    lm.diffusion(&[0.7], &mut s);
    assert_eq!(s[0], 1.0);
}
