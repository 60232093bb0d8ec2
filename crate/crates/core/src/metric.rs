//! Quasi-spherical metrics `g = u^2 dr^2 + r^2 g_{S^{n-1}}`, candidate static
//! potentials on them, and the curvature quantities of coordinate spheres.
//!
//! Lapse and potential data are stored per radial station as spectral
//! coefficients. Radial derivatives are stored when the producer knows them
//! exactly; otherwise they are recovered with five-point stencils in
//! `s = log r`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radial;
use crate::sphere::{AngularField, ModeCoeffs, SphereGrid, TensorField, VectorField};

/// Metric data on a radial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiSphericalMetric {
    pub n: usize,
    pub lmax: usize,
    pub radii: Vec<f64>,
    pub lapse: Vec<ModeCoeffs>,
    pub lapse_r: Option<Vec<ModeCoeffs>>,
}

/// How a potential was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PotentialSource {
    ClosedForm,
    Dirichlet,
    Neumann,
    RadialEquation,
    Symmetric,
}

/// Candidate static potential sampled on the metric's stations.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub n: usize,
    pub lmax: usize,
    pub radii: Vec<f64>,
    pub value: Vec<ModeCoeffs>,
    pub value_r: Vec<ModeCoeffs>,
    pub value_rr: Option<Vec<ModeCoeffs>>,
    pub source: PotentialSource,
    /// Radius at which the outer condition was imposed.
    pub outer_radius: f64,
}

/// Ricci components and scalar curvature at one station.
#[derive(Debug, Clone)]
pub struct CurvatureEntry {
    pub r: f64,
    /// `R(∂_a, ∂_b)` as a tensor on the unit sphere.
    pub r_ab: TensorField,
    /// `R(∂_a, ν)`.
    pub r_a_nu: VectorField,
    /// `R(ν, ν)`.
    pub r_nu_nu: Vec<f64>,
    /// Scalar curvature `R(g)` from its closed formula.
    pub scalar: Vec<f64>,
    /// Scalar curvature as `r^{-2} σ^{ab} R_ab + R(ν, ν)`.
    pub scalar_from_trace: Vec<f64>,
    pub sup_r_ab: f64,
    pub sup_r_a_nu: f64,
    pub sup_r_nu_nu: f64,
    pub sup_scalar: f64,
    pub l2_scalar: f64,
}

/// Geometry of the coordinate sphere `{r = r_k}`.
#[derive(Debug, Clone)]
pub struct SliceGeometry {
    pub r: f64,
    pub mean_curvature: AngularField,
    pub area: f64,
    pub umbilic: bool,
}

fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() || radii[0] <= 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::BadRadii);
    }
    Ok(())
}

impl QuasiSphericalMetric {
    pub fn new(
        n: usize,
        lmax: usize,
        radii: Vec<f64>,
        lapse: Vec<ModeCoeffs>,
        lapse_r: Option<Vec<ModeCoeffs>>,
    ) -> Result<Self> {
        check_radii(&radii)?;
        if lapse.len() != radii.len() || lapse_r.as_ref().is_some_and(|d| d.len() != radii.len()) {
            return Err(Error::LengthMismatch {
                expected: radii.len(),
                got: lapse.len(),
            });
        }
        Ok(Self {
            n,
            lmax,
            radii,
            lapse,
            lapse_r,
        })
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// Check grid compatibility and positivity of `u` at every node.
    pub fn validate(&self, grid: &SphereGrid) -> Result<()> {
        if grid.n() != self.n || grid.lmax() != self.lmax {
            return Err(Error::GridMismatch {
                expected_n: grid.n(),
                expected_lmax: grid.lmax(),
                got_n: self.n,
                got_lmax: self.lmax,
            });
        }
        let mut min = f64::INFINITY;
        for c in &self.lapse {
            min = min.min(grid.synth(c).into_iter().fold(f64::INFINITY, f64::min));
        }
        if min <= 0.0 {
            return Err(Error::NonPositiveLapse(min));
        }
        Ok(())
    }

    /// `u_r` at every station: stored values, or five-point differences in `log r`.
    pub fn lapse_r(&self) -> Result<Vec<ModeCoeffs>> {
        if let Some(d) = &self.lapse_r {
            return Ok(d.clone());
        }
        radial_derivative(&self.radii, &self.lapse)
    }

    /// Largest spread `max u - min u` over the sphere across all stations.
    pub fn angular_variation(&self, grid: &SphereGrid) -> f64 {
        self.lapse
            .iter()
            .map(|c| {
                let v = grid.synth(c);
                let (lo, hi) = v
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    /// Station index whose radius equals `r` to relative precision 1e-12.
    pub fn station_of(&self, r: f64) -> Option<usize> {
        self.radii
            .iter()
            .position(|&x| (x - r).abs() <= 1e-12 * r.abs().max(1.0))
    }
}

impl PotentialField {
    /// `V_rr` at every station: stored, or differenced from `V_r`.
    pub fn value_rr(&self) -> Result<Vec<ModeCoeffs>> {
        if let Some(d) = &self.value_rr {
            return Ok(d.clone());
        }
        radial_derivative(&self.radii, &self.value_r)
    }

    /// Pointwise affine combination `a V_1 + b V_2` (all stored derivatives combined alike).
    pub fn combine(a: f64, v1: &PotentialField, b: f64, v2: &PotentialField) -> PotentialField {
        let mix = |x: &Vec<ModeCoeffs>, y: &Vec<ModeCoeffs>| -> Vec<ModeCoeffs> {
            x.iter()
                .zip(y)
                .map(|(p, q)| {
                    let mut c = p.scaled(a);
                    c.axpy(b, q);
                    c
                })
                .collect()
        };
        let rr = match (&v1.value_rr, &v2.value_rr) {
            (Some(x), Some(y)) => Some(mix(x, y)),
            _ => None,
        };
        PotentialField {
            n: v1.n,
            lmax: v1.lmax,
            radii: v1.radii.clone(),
            value: mix(&v1.value, &v2.value),
            value_r: mix(&v1.value_r, &v2.value_r),
            value_rr: rr,
            source: v1.source.clone(),
            outer_radius: v1.outer_radius,
        }
    }
}

/// `d/dr` of station data via five-point stencils in `s = log r`.
pub fn radial_derivative(radii: &[f64], data: &[ModeCoeffs]) -> Result<Vec<ModeCoeffs>> {
    if radii.len() < 3 {
        return Err(Error::TooFewStations {
            needed: 3,
            got: radii.len(),
        });
    }
    let s: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let vals: Vec<Vec<f64>> = data.iter().map(|c| c.data.clone()).collect();
    let d = radial::differentiate(&s, &vals, 1, 5);
    Ok(d.into_iter()
        .zip(radii)
        .zip(data)
        .map(|((v, r), c)| ModeCoeffs {
            n: c.n,
            lmax: c.lmax,
            data: v.into_iter().map(|x| x / r).collect(),
        })
        .collect())
}

/// Closed-form Schwarzschild lapse and potential on `radii`.
pub fn schwarzschild(
    grid: &SphereGrid,
    m: f64,
    radii: &[f64],
) -> Result<(QuasiSphericalMetric, PotentialField)> {
    check_radii(radii)?;
    let n = grid.n();
    let nf = n as f64;
    let lhs = radii[0].powf(nf - 2.0);
    if lhs <= 2.0 * m {
        return Err(Error::HorizonViolation { lhs, rhs: 2.0 * m });
    }
    let mut u = Vec::new();
    let mut ur = Vec::new();
    let mut v = Vec::new();
    let mut vr = Vec::new();
    let mut vrr = Vec::new();
    for &r in radii {
        let p = schwarzschild_profile(n, m, r);
        u.push(grid.constant_coeffs(p.u));
        ur.push(grid.constant_coeffs(p.u_r));
        v.push(grid.constant_coeffs(p.v));
        vr.push(grid.constant_coeffs(p.v_r));
        vrr.push(grid.constant_coeffs(p.v_rr));
    }
    let metric = QuasiSphericalMetric::new(n, grid.lmax(), radii.to_vec(), u, Some(ur))?;
    let pot = PotentialField {
        n,
        lmax: grid.lmax(),
        radii: radii.to_vec(),
        value: v,
        value_r: vr,
        value_rr: Some(vrr),
        source: PotentialSource::ClosedForm,
        outer_radius: *radii.last().unwrap(),
    };
    Ok((metric, pot))
}

/// Schwarzschild lapse, potential and their radial derivatives at one radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchwarzschildProfile {
    pub u: f64,
    pub u_r: f64,
    pub v: f64,
    pub v_r: f64,
    pub v_rr: f64,
}

pub fn schwarzschild_profile(n: usize, m: f64, r: f64) -> SchwarzschildProfile {
    let nf = n as f64;
    let a = 1.0 - 2.0 * m * r.powf(2.0 - nf);
    let da = 2.0 * m * (nf - 2.0) * r.powf(1.0 - nf);
    let dda = 2.0 * m * (nf - 2.0) * (1.0 - nf) * r.powf(-nf);
    let v = a.sqrt();
    SchwarzschildProfile {
        u: 1.0 / v,
        u_r: -0.5 * da / (a * v),
        v,
        v_r: 0.5 * da / v,
        v_rr: -0.25 * da * da / (a * v) + 0.5 * dda / v,
    }
}

/// Nodal values of `u`, `Δu` and `u_r` at one station.
pub(crate) struct LapseNodes {
    pub u: Vec<f64>,
    pub lap: Vec<f64>,
    pub u_r: Vec<f64>,
}

pub(crate) fn lapse_nodes(grid: &SphereGrid, u: &ModeCoeffs, u_r: &ModeCoeffs) -> LapseNodes {
    LapseNodes {
        u: grid.synth(u),
        lap: grid.synth(&u.laplace_beltrami()),
        u_r: grid.synth(u_r),
    }
}

/// `u^2 Δu - (n-1) r u_r + ((n-1)(n-2)/2)(u - u^3)` at every station.
pub fn scalar_residual(grid: &SphereGrid, g: &QuasiSphericalMetric) -> Result<Vec<AngularField>> {
    g.validate(grid)?;
    let ur = g.lapse_r()?;
    let nf = g.n as f64;
    let k = 0.5 * (nf - 1.0) * (nf - 2.0);
    Ok(g
        .radii
        .iter()
        .zip(g.lapse.iter().zip(&ur))
        .map(|(&r, (u, u_r))| {
            let ln = lapse_nodes(grid, u, u_r);
            let v = (0..ln.u.len())
                .map(|i| {
                    let u = ln.u[i];
                    u * u * ln.lap[i] - (nf - 1.0) * r * ln.u_r[i] + k * (u - u * u * u)
                })
                .collect();
            grid.field(v)
        })
        .collect())
}

/// Ricci components at station `k`.
pub fn ricci_components(
    grid: &SphereGrid,
    g: &QuasiSphericalMetric,
    k: usize,
) -> Result<CurvatureEntry> {
    if k >= g.len() {
        return Err(Error::StationOutOfRange { index: k, len: g.len() });
    }
    g.validate(grid)?;
    let ur_all = g.lapse_r()?;
    let r = g.radii[k];
    let nf = g.n as f64;
    let u_c = &g.lapse[k];
    let ln = lapse_nodes(grid, u_c, &ur_all[k]);
    let hess = grid.hessian(u_c);
    let grad = grid.gradient(u_c);
    let np = ln.u.len();

    let inv_u: Vec<f64> = ln.u.iter().map(|u| -1.0 / u).collect();
    let iso: Vec<f64> = (0..np)
        .map(|i| {
            let u = ln.u[i];
            r * ln.u_r[i] / (u * u * u) + (nf - 2.0) * (1.0 - 1.0 / (u * u))
        })
        .collect();
    let r_ab = hess.scale_by(&inv_u).add_metric(&iso);

    let coef: Vec<f64> = ln.u.iter().map(|u| (nf - 2.0) / (r * u * u)).collect();
    let r_a_nu = grad.scale_by(&coef);

    let r_nu_nu: Vec<f64> = (0..np)
        .map(|i| {
            let u = ln.u[i];
            -ln.lap[i] / (r * r * u) + (nf - 1.0) / r * ln.u_r[i] / (u * u * u)
        })
        .collect();
    let scalar: Vec<f64> = (0..np)
        .map(|i| {
            let u = ln.u[i];
            (-2.0 * ln.lap[i] / u
                + 2.0 * (nf - 1.0) * r * ln.u_r[i] / (u * u * u)
                + (nf - 1.0) * (nf - 2.0) * (1.0 - 1.0 / (u * u)))
                / (r * r)
        })
        .collect();
    let tr = r_ab.trace();
    let scalar_from_trace: Vec<f64> = (0..np).map(|i| tr[i] / (r * r) + r_nu_nu[i]).collect();

    let sup = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    Ok(CurvatureEntry {
        r,
        sup_r_ab: sup(&r_ab.norm_sq()).sqrt(),
        sup_r_a_nu: sup(&r_a_nu.norm_sq()).sqrt(),
        sup_r_nu_nu: sup(&r_nu_nu),
        sup_scalar: sup(&scalar),
        l2_scalar: grid.l2_norm(&scalar),
        r_ab,
        r_a_nu,
        r_nu_nu,
        scalar,
        scalar_from_trace,
    })
}

/// Mean curvature and area of the coordinate sphere at station `k`.
pub fn sphere_geometry(grid: &SphereGrid, g: &QuasiSphericalMetric, k: usize) -> Result<SliceGeometry> {
    if k >= g.len() {
        return Err(Error::StationOutOfRange { index: k, len: g.len() });
    }
    let r = g.radii[k];
    let nf = g.n as f64;
    let u = grid.synth(&g.lapse[k]);
    Ok(SliceGeometry {
        r,
        mean_curvature: grid.field(u.iter().map(|u| (nf - 1.0) / (r * u)).collect()),
        area: grid.area() * r.powf(nf - 1.0),
        umbilic: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::make_grid;

    #[test]
    fn schwarzschild_values_at_r4() {
        let grid = make_grid(3, 4).unwrap();
        let (g, v) = schwarzschild(&grid, 1.0, &[4.0, 5.0]).unwrap();
        assert!((g.lapse[0].mean() - 2f64.sqrt()).abs() < 1e-14);
        assert!((v.value[0].mean() - 0.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn horizon_is_strict() {
        let grid = make_grid(3, 4).unwrap();
        assert!(matches!(
            schwarzschild(&grid, 1.0, &[1.5, 2.0]),
            Err(Error::HorizonViolation { .. })
        ));
        assert!(schwarzschild(&grid, 1.0, &[2.0, 3.0]).is_err());
    }

    #[test]
    fn potential_second_derivative_matches_differences() {
        let p = |r: f64| schwarzschild_profile(5, 0.7, r);
        let (r, h) = (3.0, 1e-4);
        let fd = (p(r + h).v_r - p(r - h).v_r) / (2.0 * h);
        assert!((fd - p(r).v_rr).abs() < 1e-8);
        let fd_u = (p(r + h).u - p(r - h).u) / (2.0 * h);
        assert!((fd_u - p(r).u_r).abs() < 1e-8);
    }
}
