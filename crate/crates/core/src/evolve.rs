//! Outward construction of scalar-flat lapse functions.
//!
//! In `s = log r` the zero scalar curvature equation reads
//! `(n-1) u_s = u^2 Δu + ((n-1)(n-2)/2)(u - u^3)`, a quasilinear parabolic
//! equation integrated here by classical RK4 in spectral space. The state is
//! the deviation `w = u - 1`, which keeps relative precision in the decaying
//! modes once `u` is close to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{scalar_residual, QuasiSphericalMetric};
use crate::radial::log_spaced;
use crate::sphere::{eigenvalue, AngularField, ModeCoeffs, SphereGrid};
use crate::tolerances;

/// Controls for [`evolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveParams {
    pub r0: f64,
    pub r_max: f64,
    pub lmax: usize,
    /// Fraction of the diffusive stability bound used as the step.
    pub safety: f64,
    /// Upper bound on the step in `s = log r`.
    pub max_step: f64,
    /// Number of log-spaced snapshot radii, endpoints included.
    pub snapshots: usize,
    pub audit_tolerance: f64,
    pub guard_floor: f64,
    pub guard_ceiling: f64,
}

impl EvolveParams {
    pub fn new(r0: f64, r_max: f64, lmax: usize) -> Self {
        Self {
            r0,
            r_max,
            lmax,
            safety: tolerances::STEP_SAFETY,
            max_step: 0.05,
            snapshots: 200,
            audit_tolerance: tolerances::SCALAR_AUDIT,
            guard_floor: tolerances::GUARD_FLOOR,
            guard_ceiling: tolerances::GUARD_CEILING,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::InvalidParameter(s.to_string()));
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return bad("r0 must be positive");
        }
        if !(self.r_max > self.r0 && self.r_max.is_finite()) {
            return bad("r_max must exceed r0");
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return bad("safety factor must lie in (0, 1)");
        }
        if !(self.max_step > 0.0) {
            return bad("max_step must be positive");
        }
        if self.snapshots < 2 {
            return bad("at least two snapshots are required");
        }
        if !(self.guard_floor >= 0.0 && self.guard_floor < 1.0 && self.guard_ceiling > 1.0) {
            return bad("guard band must contain 1");
        }
        Ok(())
    }

    pub fn snapshot_radii(&self) -> Vec<f64> {
        log_spaced(self.r0, self.r_max, self.snapshots)
    }
}

struct Rhs {
    dw: ModeCoeffs,
    umin: f64,
    umax: f64,
}

fn rhs(grid: &SphereGrid, w: &ModeCoeffs) -> Rhs {
    let nf = grid.n() as f64;
    let k = 0.5 * (nf - 1.0) * (nf - 2.0);
    let wv = grid.synth(w);
    let lv = grid.synth(&w.laplace_beltrami());
    let mut umin = f64::INFINITY;
    let mut umax = f64::NEG_INFINITY;
    let vals: Vec<f64> = wv
        .iter()
        .zip(&lv)
        .map(|(&w, &l)| {
            let u = 1.0 + w;
            umin = umin.min(u);
            umax = umax.max(u);
            // u - u^3 = -(2w + 3w^2 + w^3), expanded to avoid cancellation.
            (u * u * l - k * w * (2.0 + w * (3.0 + w))) / (nf - 1.0)
        })
        .collect();
    Rhs {
        dw: grid.analyze_values(&vals),
        umin,
        umax,
    }
}

/// Integrate from lapse data at `r0` out to `r_max`.
pub fn evolve(grid: &SphereGrid, u_init: &AngularField, p: &EvolveParams) -> Result<QuasiSphericalMetric> {
    p.validate()?;
    if p.lmax != grid.lmax() {
        return Err(Error::GridMismatch {
            expected_n: grid.n(),
            expected_lmax: p.lmax,
            got_n: grid.n(),
            got_lmax: grid.lmax(),
        });
    }
    let min = u_init.min();
    if min <= 0.0 {
        return Err(Error::NonPositiveLapse(min));
    }
    let c = grid.analyze_bandlimited(u_init)?;
    evolve_coeffs(grid, &c, p)
}

/// [`evolve`] starting from spectral lapse data.
pub fn evolve_coeffs(grid: &SphereGrid, u_init: &ModeCoeffs, p: &EvolveParams) -> Result<QuasiSphericalMetric> {
    p.validate()?;
    let radii = p.snapshot_radii();
    let lam_max = eigenvalue(grid.n(), grid.lmax());
    let nf = grid.n() as f64;
    let one = grid.constant_coeffs(1.0);
    let mut w = u_init.sub(&one);

    let guard = |r: f64, f: &Rhs| -> Result<()> {
        if f.umin <= p.guard_floor || f.umax >= p.guard_ceiling {
            return Err(Error::Guard {
                r,
                min: f.umin,
                max: f.umax,
                floor: p.guard_floor,
                ceiling: p.guard_ceiling,
            });
        }
        Ok(())
    };

    let mut lapse = Vec::with_capacity(radii.len());
    let mut lapse_r = Vec::with_capacity(radii.len());
    let mut f0 = rhs(grid, &w);
    if f0.umin <= 0.0 {
        return Err(Error::NonPositiveLapse(f0.umin));
    }
    guard(radii[0], &f0)?;

    for (idx, &r) in radii.iter().enumerate() {
        let mut u = w.clone();
        u.axpy(1.0, &one);
        lapse.push(u);
        lapse_r.push(f0.dw.scaled(1.0 / r));
        if idx + 1 == radii.len() {
            break;
        }
        let (sa, sb) = (r.ln(), radii[idx + 1].ln());
        let bound = (p.safety * (nf - 1.0) / (f0.umax * f0.umax * lam_max)).min(p.max_step);
        let steps = ((sb - sa) / bound).ceil();
        if !(steps.is_finite() && steps < 1e8) {
            return Err(Error::StepUnderflow {
                r_a: r,
                r_b: radii[idx + 1],
                steps,
            });
        }
        let steps = steps.max(1.0) as usize;
        let h = (sb - sa) / steps as f64;
        for step in 0..steps {
            let k1 = if step == 0 { f0.dw.clone() } else { rhs(grid, &w).dw };
            let mut y = w.clone();
            y.axpy(0.5 * h, &k1);
            let k2 = rhs(grid, &y).dw;
            let mut y = w.clone();
            y.axpy(0.5 * h, &k2);
            let k3 = rhs(grid, &y).dw;
            let mut y = w.clone();
            y.axpy(h, &k3);
            let k4 = rhs(grid, &y).dw;
            for i in 0..w.data.len() {
                w.data[i] += h / 6.0 * (k1.data[i] + 2.0 * k2.data[i] + 2.0 * k3.data[i] + k4.data[i]);
            }
            let f = rhs(grid, &w);
            let r_now = (sa + h * (step + 1) as f64).exp();
            guard(r_now, &f)?;
            if step + 1 == steps {
                f0 = f;
            }
        }
    }
    QuasiSphericalMetric::new(grid.n(), grid.lmax(), radii, lapse, Some(lapse_r))
}

/// Closed-form and integrated rotationally symmetric solutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricProfile {
    pub n: usize,
    pub m0: f64,
    pub radii: Vec<f64>,
    pub closed_form: Vec<f64>,
    pub integrated: Vec<f64>,
    /// `d u / d r` of the integrated solution.
    pub integrated_r: Vec<f64>,
    pub max_difference: f64,
}

/// Mass parameter of the symmetric solution through `u(r0) = u0`.
pub fn symmetric_mass(n: usize, r0: f64, u0: f64) -> f64 {
    0.5 * r0.powf(n as f64 - 2.0) * (1.0 - 1.0 / (u0 * u0))
}

/// Symmetric lapse through `u(r0) = u0`, both in closed form and by RK4.
pub fn evolve_symmetric(u0: f64, n: usize, r0: f64, radii: &[f64]) -> Result<SymmetricProfile> {
    if !(u0 > 0.0) {
        return Err(Error::NonPositiveLapse(u0));
    }
    if radii.is_empty() || radii[0] < r0 || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::BadRadii);
    }
    let nf = n as f64;
    let m0 = symmetric_mass(n, r0, u0);
    let k = 0.5 * (nf - 2.0);
    let f = |u: f64| k * (u - u * u * u);
    let closed: Vec<f64> = radii
        .iter()
        .map(|r| 1.0 / (1.0 - 2.0 * m0 * r.powf(2.0 - nf)).sqrt())
        .collect();
    let mut integrated = Vec::with_capacity(radii.len());
    let mut integrated_r = Vec::with_capacity(radii.len());
    let mut u = u0;
    let mut s = r0.ln();
    for &r in radii {
        let target = r.ln();
        let steps = ((target - s) / 1e-3).ceil().max(0.0) as usize;
        if steps > 0 {
            let h = (target - s) / steps as f64;
            for _ in 0..steps {
                let k1 = f(u);
                let k2 = f(u + 0.5 * h * k1);
                let k3 = f(u + 0.5 * h * k2);
                let k4 = f(u + h * k3);
                u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
        s = target;
        integrated.push(u);
        integrated_r.push(f(u) / r);
    }
    let max_difference = closed
        .iter()
        .zip(&integrated)
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    Ok(SymmetricProfile {
        n,
        m0,
        radii: radii.to_vec(),
        closed_form: closed,
        integrated,
        integrated_r,
        max_difference,
    })
}

/// Residual norms of one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationResidual {
    pub r: f64,
    pub sup: f64,
    pub l2: f64,
}

/// Scalar-curvature audit of a metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub stations: Vec<StationResidual>,
    pub max_sup: f64,
    pub max_l2: f64,
}

pub fn residual_report(grid: &SphereGrid, g: &QuasiSphericalMetric) -> Result<ResidualReport> {
    let res = scalar_residual(grid, g)?;
    let stations: Vec<StationResidual> = g
        .radii
        .iter()
        .zip(&res)
        .map(|(&r, f)| StationResidual {
            r,
            sup: f.sup_norm(),
            l2: grid.l2_norm(&f.values),
        })
        .collect();
    let max_sup = stations.iter().fold(0.0f64, |a, s| a.max(s.sup));
    let max_l2 = stations.iter().fold(0.0f64, |a, s| a.max(s.l2));
    Ok(ResidualReport {
        stations,
        max_sup,
        max_l2,
    })
}
