use approx::assert_relative_eq;

use qsm_core::asymptotics::{loglog_slope, FitWindow};
use qsm_core::evolve::{evolve_coeffs, EvolveParams};
use qsm_core::metric::{schwarzschild, schwarzschild_profile, QuasiSphericalMetric};
use qsm_core::radial::log_spaced;
use qsm_core::sphere::{make_grid, mode_index, ModeCoeffs, SphereGrid};
use qsm_core::static_solver::{
    coordinate_potential, defect_decomposition, potential_expansion, rigidity_probe, solve_potential,
    solve_potential_radial, solve_potential_symmetric, solve_potential_with, static_residual, InnerBc,
    OuterClosure, RadialOptions, RigidityOptions, SolveOptions,
};

fn seeded(eps: f64, lmax: usize, snapshots: usize) -> (SphereGrid, QuasiSphericalMetric) {
    let grid = make_grid(3, lmax).unwrap();
    let mut c = grid.constant_coeffs(1.0);
    c.data[mode_index(3, 1, 0)] = eps;
    let mut p = EvolveParams::new(1.0, 1e3, lmax);
    p.snapshots = snapshots;
    (grid.clone(), evolve_coeffs(&grid, &c, &p).unwrap())
}

#[test]
fn symmetric_potential_matches_closed_form() {
    let grid = make_grid(3, 4).unwrap();
    let (g, _) = schwarzschild(&grid, 1.0, &log_spaced(4.0, 400.0, 201)).unwrap();
    let sol = solve_potential_symmetric(&grid, &g).unwrap();
    assert_relative_eq!(sol.m0, 1.0, epsilon = 1e-12);
    assert_relative_eq!(sol.potential.value[0].mean(), 0.5f64.sqrt(), epsilon = 1e-8);
    assert!(sol.wronskian_over_u.iter().all(|w| w.abs() < 1e-9));
}

#[test]
fn negative_mass_potential() {
    let grid = make_grid(3, 4).unwrap();
    let radii = log_spaced(1.0, 100.0, 101);
    let (g, _) = schwarzschild(&grid, -0.5625, &radii).unwrap();
    let sol = solve_potential_symmetric(&grid, &g).unwrap();
    for (r, v) in radii.iter().zip(&sol.potential.value) {
        assert_relative_eq!(v.mean(), (1.0 + 1.125 / r).sqrt(), epsilon = 1e-8);
    }
}

#[test]
fn dirichlet_data_recovers_schwarzschild() {
    let grid = make_grid(3, 4).unwrap();
    let radii = log_spaced(3.0, 3000.0, 400);
    let (g, exact) = schwarzschild(&grid, 1.0, &radii).unwrap();
    let v = solve_potential(&grid, &g, &InnerBc::Dirichlet(exact.value[0].clone())).unwrap();
    for (a, b) in v.value.iter().zip(&exact.value) {
        assert!(a.sub(b).norm() < 1e-6);
    }
}

#[test]
fn flat_space_potentials() {
    let grid = make_grid(3, 4).unwrap();
    let radii = log_spaced(1.0, 100.0, 121);
    let (g, _) = schwarzschild(&grid, 0.0, &radii).unwrap();
    let one = solve_potential(&grid, &g, &InnerBc::Dirichlet(grid.constant_coeffs(1.0))).unwrap();
    for v in &one.value {
        assert!(v.sub(&grid.constant_coeffs(1.0)).norm() < 1e-10);
    }

    let exact = coordinate_potential(&grid, &radii).unwrap();
    let opts = SolveOptions {
        outer: OuterClosure::GrowthMatched,
        ..SolveOptions::default()
    };
    let v = solve_potential_with(&grid, &g, &InnerBc::Dirichlet(exact.value[0].clone()), &opts).unwrap();
    for (a, b) in v.value.iter().zip(&exact.value) {
        assert!(a.sub(b).norm() < 1e-6 * b.norm().max(1.0), "{} {}", a.sub(b).norm(), b.norm());
    }
    let agg = static_residual(&grid, &g, &exact).unwrap().aggregate();
    assert!(agg < 1e-10, "{agg}");

    let neumann = InnerBc::Neumann(ModeCoeffs::zeros(3, 4));
    let e = solve_potential_with(&grid, &g, &neumann, &opts).unwrap_err();
    assert_eq!(e.code(), "E_SINGULAR");
}

#[test]
fn corrupted_background_is_refused() {
    let grid = make_grid(3, 4).unwrap();
    let (mut g, v) = schwarzschild(&grid, 1.0, &log_spaced(3.0, 300.0, 61)).unwrap();
    g.lapse[20] = g.lapse[20].scaled(1.01);
    g.lapse_r = None;
    let e = solve_potential(&grid, &g, &InnerBc::Dirichlet(v.value[0].clone())).unwrap_err();
    assert_eq!(e.code(), "E_NOT_SCALAR_FLAT");
}

#[test]
fn rigidity_of_static_backgrounds() {
    let grid = make_grid(3, 4).unwrap();
    let (g, _) = schwarzschild(&grid, 1.0, &log_spaced(3.0, 3000.0, 401)).unwrap();
    let (rep, _) = rigidity_probe(&grid, &g, &RigidityOptions::default()).unwrap();
    assert!(rep.defect < 1e-8, "{}", rep.defect);

    let (grid, g) = seeded(0.0, 4, 300);
    let (rep, _) = rigidity_probe(&grid, &g, &RigidityOptions::default()).unwrap();
    assert!(rep.defect < 1e-7, "{}", rep.defect);
}

#[test]
fn potential_expansion_of_schwarzschild() {
    for n in [3, 4] {
        let grid = make_grid(n, 4).unwrap();
        let (g, v) = schwarzschild(&grid, 1.0, &log_spaced(3.0, 1e5, 300)).unwrap();
        let rep = potential_expansion(&grid, &g, &v, &FitWindow::new(30.0, 1e4)).unwrap();
        assert_relative_eq!(rep.potential.mass(), 1.0, epsilon = 1e-6);
        assert_relative_eq!(rep.lapse.mass(), 1.0, epsilon = 1e-6);
        // V = 1 - m r^{2-n} - (m^2/2) r^{4-2n} + ...
        assert_relative_eq!(rep.potential.quadratic, -0.5, max_relative = 0.01);
    }
}

#[test]
fn defect_decomposition_vanishes_on_schwarzschild() {
    let grid = make_grid(3, 4).unwrap();
    let (g, v) = schwarzschild(&grid, 1.0, &log_spaced(3.0, 300.0, 61)).unwrap();
    let d = defect_decomposition(&grid, &g, &v).unwrap();
    for (_, ode, check) in d.profile() {
        assert!(ode < 1e-10 && check < 1e-10);
    }
    assert_relative_eq!(schwarzschild_profile(3, 1.0, 4.0).v, 0.5f64.sqrt(), epsilon = 1e-15);
}

#[test]
fn defect_decomposition_of_seeded_lapse() {
    let profiles: Vec<Vec<(f64, f64, f64)>> = [1e-3, 2e-3]
        .iter()
        .map(|&e| {
            let (grid, g) = seeded(e, 4, 200);
            let v = solve_potential_radial(&grid, &g, &RadialOptions::default()).unwrap();
            defect_decomposition(&grid, &g, &v).unwrap().profile()
        })
        .collect();
    let mid = profiles[0].len() / 2;
    // The first-order part of the angular deviation is linear in the seed.
    assert_relative_eq!(profiles[1][mid].2 / profiles[0][mid].2, 2.0, max_relative = 0.02);
    let tail: Vec<&(f64, f64, f64)> = profiles[0].iter().filter(|p| p.0 >= 30.0 && p.0 <= 300.0).collect();
    let r: Vec<f64> = tail.iter().map(|p| p.0).collect();
    let a: Vec<f64> = tail.iter().map(|p| p.1).collect();
    assert!(loglog_slope(&r, &a) <= -1.0, "{}", loglog_slope(&r, &a));
}
