use std::f64::consts::PI;

use approx::assert_relative_eq;

use qsm_core::asymptotics::{check_l2_relation, degree_amplitudes, fit_expansion, fit_lapse_expansion, loglog_slope, ExpandedField, FitWindow};
use qsm_core::evolve::{evolve_coeffs, EvolveParams};
use qsm_core::metric::{schwarzschild, QuasiSphericalMetric};
use qsm_core::radial::log_spaced;
use qsm_core::sphere::{make_grid, mode_index, ModeCoeffs, Selector, SphereGrid};

fn closed(n: usize, m: f64) -> (SphereGrid, QuasiSphericalMetric) {
    let grid = make_grid(n, 4).unwrap();
    let (g, _) = schwarzschild(&grid, m, &log_spaced(3.0, 1e5, 300)).unwrap();
    (grid, g)
}

fn seeded(n: usize, eps: f64, r_max: f64) -> (SphereGrid, QuasiSphericalMetric) {
    let grid = make_grid(n, 8).unwrap();
    let mut c = grid.constant_coeffs(1.0);
    c.data[mode_index(n, 1, 0)] = eps;
    let mut p = EvolveParams::new(1.0, r_max, 8);
    p.snapshots = 400;
    (grid.clone(), evolve_coeffs(&grid, &c, &p).unwrap())
}

fn non_radial(rep: &qsm_core::asymptotics::ExpansionReport) -> f64 {
    let mut worst = rep.higher_mode_bound;
    for c in [&rep.dot, &rep.ddot, &rep.hat, &rep.tdot].into_iter().flatten() {
        worst = worst.max(c.project(Selector::Ge(1)).norm());
    }
    worst
}

#[test]
fn schwarzschild_three_dimensions() {
    let (grid, g) = closed(3, 1.0);
    let rep = fit_lapse_expansion(&grid, &g, &FitWindow::new(100.0, 1e4)).unwrap();
    assert_relative_eq!(rep.mass(), 1.0, epsilon = 1e-6);
    assert_relative_eq!(rep.quadratic, 1.5, max_relative = 1e-3);
    assert!(non_radial(&rep) < 1e-8);
}

#[test]
fn schwarzschild_four_dimensions() {
    let (grid, g) = closed(4, 1.0);
    let rep = fit_lapse_expansion(&grid, &g, &FitWindow::new(30.0, 1e4)).unwrap();
    assert_relative_eq!(rep.mass(), 1.0, epsilon = 1e-6);
    assert_relative_eq!(rep.quadratic, 1.5, max_relative = 0.01);
    assert!(non_radial(&rep) < 1e-8);
}

#[test]
fn flat_has_no_coefficients() {
    for n in [3, 4] {
        let (grid, g) = closed(n, 0.0);
        let rep = fit_lapse_expansion(&grid, &g, &FitWindow::new(30.0, 1e4)).unwrap();
        assert!(rep.leading.abs() < 1e-10 && rep.quadratic.abs() < 1e-10);
        assert!(non_radial(&rep) < 1e-10);
        let gap = check_l2_relation(&grid, &rep).unwrap();
        assert!(gap.absolute < 1e-10);
    }
}

/// Hand-assembled `n = 3` data with known coefficients.
#[test]
fn synthetic_coefficients_recovered() {
    let grid = make_grid(3, 4).unwrap();
    let radii = log_spaced(10.0, 1e4, 200);
    let root = grid.area().sqrt();
    let (m, dot, ddot, hat, tdot) = (0.7, 0.2, -0.3, 0.05, -0.1);
    let data: Vec<ModeCoeffs> = radii
        .iter()
        .map(|&r| {
            let mut c = ModeCoeffs::zeros(3, 4);
            c.data[0] = root * (1.0 + m / r + 1.5 * m * m / (r * r));
            c.data[mode_index(3, 1, 1)] = dot / (r * r) + ddot / r.powi(3);
            c.data[mode_index(3, 2, -1)] = hat * r.ln() / r.powi(4) + tdot / r.powi(4);
            c
        })
        .collect();
    let rep = fit_expansion(&grid, &radii, &data, &FitWindow::new(10.0, 1e4), ExpandedField::Lapse).unwrap();
    assert_relative_eq!(rep.leading, m, epsilon = 1e-10);
    assert_relative_eq!(rep.quadratic, 1.5 * m * m, epsilon = 1e-8);
    assert_relative_eq!(rep.dot.as_ref().unwrap().data[mode_index(3, 1, 1)], dot, epsilon = 1e-10);
    assert_relative_eq!(rep.ddot.as_ref().unwrap().data[mode_index(3, 1, 1)], ddot, epsilon = 1e-8);
    assert_relative_eq!(rep.hat.as_ref().unwrap().data[mode_index(3, 2, -1)], hat, epsilon = 1e-8);
    assert_relative_eq!(rep.tdot.as_ref().unwrap().data[mode_index(3, 2, -1)], tdot, epsilon = 1e-7);
}

#[test]
fn dipole_is_linear_in_seed() {
    let w = FitWindow::new(50.0, 1e4);
    let k = mode_index(3, 1, 0);
    let dots: Vec<ModeCoeffs> = [1e-2, 1e-3]
        .iter()
        .map(|&e| {
            let (grid, g) = seeded(3, e, 1e5);
            fit_lapse_expansion(&grid, &g, &w).unwrap().dot.unwrap()
        })
        .collect();
    for d in &dots {
        assert!((d.norm() - d.data[k].abs()) < 1e-6 * d.norm());
    }
    assert_relative_eq!(dots[0].data[k] / dots[1].data[k], 10.0, max_relative = 0.02);
}

/// Legendre oracle: for `u̇ = a cos θ`, `(u̇²)_{l=2} = (2/3) a² P₂`, so the
/// predicted `û` coefficient at `(2, 0)` is `-(7/2)(2/3) a² √(4π/5)`.
#[test]
fn log_quartic_relation() {
    let (grid, g) = seeded(3, 1e-2, 1e5);
    let rep = fit_lapse_expansion(&grid, &g, &FitWindow::new(50.0, 1e4)).unwrap();
    let a = rep.dot.as_ref().unwrap().data[mode_index(3, 1, 0)] / (4.0 * PI / 3.0).sqrt();
    let gap = check_l2_relation(&grid, &rep).unwrap();
    let oracle = -3.5 * (2.0 / 3.0) * a * a * (4.0 * PI / 5.0).sqrt();
    assert_relative_eq!(gap.predicted.data[mode_index(3, 2, 0)], oracle, max_relative = 1e-10);
    assert!(gap.relative_to_prediction < 0.05);
}

#[test]
fn four_dimensional_slopes() {
    let (_, g) = seeded(4, 1e-2, 1e4);
    let w = FitWindow::new(50.0, 2e3);
    let (r, a) = degree_amplitudes(&g.radii, &g.lapse, 1, &w).unwrap();
    assert!((loglog_slope(&r, &a) + 3.0).abs() < 0.05);
}

#[test]
fn window_errors() {
    let (grid, g) = closed(3, 1.0);
    let e = fit_lapse_expansion(&grid, &g, &FitWindow::new(2e5, 3e5)).unwrap_err();
    assert_eq!(e.code(), "E_WINDOW");
}
