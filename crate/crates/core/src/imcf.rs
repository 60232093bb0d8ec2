//! Functionals of coordinate spheres in static pairs: Smarr mass, the
//! Minkowski-type gap, the monotone quantity `Q` along inverse mean curvature
//! flow, the equipotential and conformal variants, and the normalized
//! Einstein-Hilbert energy of round spheres.
//!
//! A coordinate sphere `{r}` of `u^2 dr^2 + r^2 σ` has unit normal
//! `u^{-1} ∂_r`, mean curvature `H = (n-1)/(r u)`, and area `w r^{n-1}`
//! where `w` is the quadrature area of the unit sphere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{PotentialField, QuasiSphericalMetric};
use crate::radial::{differentiate, hermite, locate};
use crate::sphere::{ModeCoeffs, SphereGrid};
use crate::tolerances;

/// Radius reached at flow time `t` by the coordinate sphere starting at `r0`.
pub fn imcf_radius(t: f64, r0: f64, n: usize) -> f64 {
    r0 * (t / (n as f64 - 1.0)).exp()
}

/// Nodal values of `u`, `V` and `V_r` on the coordinate sphere of radius `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub n: usize,
    pub r: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub v_r: Vec<f64>,
}

fn check_pair(grid: &SphereGrid, g: &QuasiSphericalMetric, v: &PotentialField) -> Result<()> {
    g.validate(grid)?;
    if v.n != g.n || v.lmax != g.lmax {
        return Err(Error::GridMismatch {
            expected_n: g.n,
            expected_lmax: g.lmax,
            got_n: v.n,
            got_lmax: v.lmax,
        });
    }
    if v.value.len() != g.len() {
        return Err(Error::LengthMismatch {
            expected: g.len(),
            got: v.value.len(),
        });
    }
    Ok(())
}

fn interpolate(
    s: &[f64],
    j: usize,
    x: f64,
    f: &[ModeCoeffs],
    df: &[ModeCoeffs],
    radii: &[f64],
) -> ModeCoeffs {
    let mut out = f[j].clone();
    for i in 0..out.data.len() {
        out.data[i] = hermite(
            x,
            s[j],
            s[j + 1],
            f[j].data[i],
            f[j + 1].data[i],
            radii[j] * df[j].data[i],
            radii[j + 1] * df[j + 1].data[i],
        );
    }
    out
}

/// Restrict `(g, V)` to the sphere of radius `r`: station values when `r`
/// is a station, otherwise cubic Hermite interpolation in `log r`.
pub fn slice_at(grid: &SphereGrid, g: &QuasiSphericalMetric, v: &PotentialField, r: f64) -> Result<Slice> {
    check_pair(grid, g, v)?;
    let (lo, hi) = (g.radii[0], *g.radii.last().unwrap());
    let slack = 1e-12 * hi;
    if !(r >= lo - slack && r <= hi + slack) {
        return Err(Error::InvalidParameter(format!(
            "radius {r} outside the grid [{lo}, {hi}]"
        )));
    }
    let (u_c, v_c, vr_c) = if let Some(k) = g.station_of(r) {
        (g.lapse[k].clone(), v.value[k].clone(), v.value_r[k].clone())
    } else {
        if g.len() < 2 {
            return Err(Error::TooFewStations { needed: 2, got: g.len() });
        }
        let s: Vec<f64> = g.radii.iter().map(|r| r.ln()).collect();
        let x = r.ln();
        let j = locate(&s, x);
        let ur = g.lapse_r()?;
        let vrr = v.value_rr()?;
        (
            interpolate(&s, j, x, &g.lapse, &ur, &g.radii),
            interpolate(&s, j, x, &v.value, &v.value_r, &g.radii),
            interpolate(&s, j, x, &v.value_r, &vrr, &g.radii),
        )
    };
    Ok(Slice {
        n: g.n,
        r,
        u: grid.synth(&u_c),
        v: grid.synth(&v_c),
        v_r: grid.synth(&vr_c),
    })
}

impl Slice {
    fn nf(&self) -> f64 {
        self.n as f64
    }

    pub fn area(&self, grid: &SphereGrid) -> f64 {
        grid.area() * self.r.powf(self.nf() - 1.0)
    }

    /// `H = (n-1)/(r u)` at the nodes.
    pub fn mean_curvature(&self) -> Vec<f64> {
        let nf = self.nf();
        self.u.iter().map(|u| (nf - 1.0) / (self.r * u)).collect()
    }

    /// `∫ V H dσ`.
    pub fn int_vh(&self, grid: &SphereGrid) -> f64 {
        let nf = self.nf();
        let vals: Vec<f64> = self.v.iter().zip(&self.u).map(|(v, u)| v / u).collect();
        (nf - 1.0) * self.r.powf(nf - 2.0) * grid.integrate_values(&vals)
    }

    /// `∫ H dσ`.
    pub fn int_h(&self, grid: &SphereGrid) -> f64 {
        let nf = self.nf();
        let vals: Vec<f64> = self.u.iter().map(|u| 1.0 / u).collect();
        (nf - 1.0) * self.r.powf(nf - 2.0) * grid.integrate_values(&vals)
    }

    /// `(1/((n-2) w)) ∫ u^{-1} V_r dσ`.
    pub fn smarr_mass(&self, grid: &SphereGrid) -> f64 {
        let nf = self.nf();
        let vals: Vec<f64> = self.v_r.iter().zip(&self.u).map(|(vr, u)| vr / u).collect();
        self.r.powf(nf - 1.0) * grid.integrate_values(&vals) / ((nf - 2.0) * grid.area())
    }

    /// `∫(V/H)|h̊|^2 dσ` scaled by `-|Σ|^{-(n-2)/(n-1)}`; coordinate spheres are umbilic.
    pub fn umbilic_term(&self, grid: &SphereGrid) -> f64 {
        let nf = self.nf();
        let traceless_sq = vec![0.0; self.u.len()];
        let h = self.mean_curvature();
        let vals: Vec<f64> = (0..h.len()).map(|i| self.v[i] / h[i] * traceless_sq[i]).collect();
        -self.area(grid).powf(-(nf - 2.0) / (nf - 1.0)) * self.r.powf(nf - 1.0) * grid.integrate_values(&vals)
    }
}

/// `(1/((n-1) w)) ∫ V H dσ + 2m - (|Σ|/w)^{(n-2)/(n-1)}` with `m` the Smarr mass at `r`.
pub fn minkowski_gap(grid: &SphereGrid, g: &QuasiSphericalMetric, v: &PotentialField, r: f64) -> Result<f64> {
    let sl = slice_at(grid, g, v, r)?;
    Ok(gap_of(grid, &sl))
}

fn gap_of(grid: &SphereGrid, sl: &Slice) -> f64 {
    let nf = sl.nf();
    let w = grid.area();
    sl.int_vh(grid) / ((nf - 1.0) * w) + 2.0 * sl.smarr_mass(grid) - (sl.area(grid) / w).powf((nf - 2.0) / (nf - 1.0))
}

fn q_of(grid: &SphereGrid, sl: &Slice) -> f64 {
    let nf = sl.nf();
    let w = grid.area();
    sl.area(grid).powf(-(nf - 2.0) / (nf - 1.0)) * (sl.int_vh(grid) + 2.0 * (nf - 1.0) * w * sl.smarr_mass(grid))
}

/// `Q = |Σ|^{-(n-2)/(n-1)} (∫ V H dσ + 2(n-1) w m)`.
pub fn q_functional(grid: &SphereGrid, g: &QuasiSphericalMetric, v: &PotentialField, r: f64) -> Result<f64> {
    let sl = slice_at(grid, g, v, r)?;
    Ok(q_of(grid, &sl))
}

/// Limit value `(n-1) w^{1/(n-1)}` of `Q`.
pub fn q_limit(grid: &SphereGrid) -> f64 {
    let nf = grid.n() as f64;
    (nf - 1.0) * grid.area().powf(1.0 / (nf - 1.0))
}

pub fn smarr_mass(grid: &SphereGrid, g: &QuasiSphericalMetric, v: &PotentialField, r: f64) -> Result<f64> {
    Ok(slice_at(grid, g, v, r)?.smarr_mass(grid))
}

/// `(1/((n-1) w)) (|Σ|/w)^{(2-n)/(n-1)} ∫ H dσ - V_0` on a slice where `V ≡ V_0`.
pub fn equipotential_gap(grid: &SphereGrid, g: &QuasiSphericalMetric, v: &PotentialField, r: f64) -> Result<f64> {
    let sl = slice_at(grid, g, v, r)?;
    let (lo, hi) = sl
        .v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if hi - lo > tolerances::EQUIPOTENTIAL {
        return Err(Error::NotEquipotential(hi - lo));
    }
    let v0 = grid.integrate_values(&sl.v) / grid.area();
    let nf = sl.nf();
    let w = grid.area();
    Ok((sl.area(grid) / w).powf((2.0 - nf) / (nf - 1.0)) * sl.int_h(grid) / ((nf - 1.0) * w) - v0)
}

/// Normalized Einstein-Hilbert energy `|Σ|^{(3-n)/(n-1)} ∫ R_σ dσ` of the round sphere of radius `r`.
pub fn einstein_hilbert_round(grid: &SphereGrid, r: f64) -> f64 {
    let nf = grid.n() as f64;
    let scalar = (nf - 1.0) * (nf - 2.0) / (r * r);
    let vals = vec![scalar; grid.node_count()];
    let integral = r.powf(nf - 1.0) * grid.integrate_values(&vals);
    let area = grid.area() * r.powf(nf - 1.0);
    area.powf((3.0 - nf) / (nf - 1.0)) * integral
}

/// A static pair in the conformal class `φ g` with potential `V`, stored
/// nodally at the stations of the underlying quasi-spherical metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalPair {
    pub n: usize,
    pub radii: Vec<f64>,
    pub factor: Vec<Vec<f64>>,
    pub potential: Vec<Vec<f64>>,
}

impl ConformalPair {
    /// `(φ g, V) -> (V^{4/(n-2)} φ g, V^{-1})`.
    pub fn transform(&self) -> Result<ConformalPair> {
        let e = 4.0 / (self.n as f64 - 2.0);
        let mut factor = Vec::with_capacity(self.radii.len());
        let mut potential = Vec::with_capacity(self.radii.len());
        for (f, v) in self.factor.iter().zip(&self.potential) {
            if let Some(bad) = v.iter().find(|x| !(**x > 0.0)) {
                return Err(Error::NonPositivePotential(*bad));
            }
            factor.push(f.iter().zip(v).map(|(f, v)| f * v.powf(e)).collect());
            potential.push(v.iter().map(|v| 1.0 / v).collect());
        }
        Ok(ConformalPair {
            n: self.n,
            radii: self.radii.clone(),
            factor,
            potential,
        })
    }

    /// Area of the coordinate sphere at station `k` in the metric `φ g`.
    pub fn slice_area(&self, grid: &SphereGrid, k: usize) -> Result<f64> {
        if k >= self.radii.len() {
            return Err(Error::StationOutOfRange {
                index: k,
                len: self.radii.len(),
            });
        }
        let nf = self.n as f64;
        let vals: Vec<f64> = self.factor[k].iter().map(|f| f.powf(0.5 * (nf - 1.0))).collect();
        Ok(self.radii[k].powf(nf - 1.0) * grid.integrate_values(&vals))
    }
}

/// Conformal data of `(g, V)` together with the conformal slice-area gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalReport {
    pub pair: ConformalPair,
    /// `∫ V^{2(n-1)/(n-2)} dσ` per station.
    pub conformal_area: Vec<f64>,
    /// `(1/((n-1) w)) ∫ V H dσ - (|Σ|_{g_-}/w)^{(n-2)/(n-1)}` per station.
    pub gap: Vec<f64>,
}

/// `g_- = V^{4/(n-2)} g`, `V_- = V^{-1}`, with areas and gaps at every station.
pub fn conformal_transform(grid: &SphereGrid, g: &QuasiSphericalMetric, v: &PotentialField) -> Result<ConformalReport> {
    check_pair(grid, g, v)?;
    let ones = vec![1.0; grid.node_count()];
    let base = ConformalPair {
        n: g.n,
        radii: g.radii.clone(),
        factor: vec![ones; g.len()],
        potential: v.value.iter().map(|c| grid.synth(c)).collect(),
    };
    let pair = base.transform()?;
    let nf = g.n as f64;
    let w = grid.area();
    let mut conformal_area = Vec::with_capacity(g.len());
    let mut gap = Vec::with_capacity(g.len());
    for k in 0..g.len() {
        let area = pair.slice_area(grid, k)?;
        let sl = slice_at(grid, g, v, g.radii[k])?;
        gap.push(sl.int_vh(grid) / ((nf - 1.0) * w) - (area / w).powf((nf - 2.0) / (nf - 1.0)));
        conformal_area.push(area);
    }
    Ok(ConformalReport {
        pair,
        conformal_area,
        gap,
    })
}

/// Samples of the monotone quantity along the coordinate-sphere flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    pub n: usize,
    /// Smarr mass at the first sample.
    pub m: f64,
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub area: Vec<f64>,
    pub int_vh: Vec<f64>,
    pub q: Vec<f64>,
    pub dq_dt: Vec<f64>,
    pub gap: Vec<f64>,
    pub umbilic_term: Vec<f64>,
    /// Largest `dQ/dt`.
    pub max_increase: f64,
    pub monotone: bool,
    /// Set when the coordinate spheres are not an inverse mean curvature flow.
    pub label: Option<String>,
}

impl FlowTrace {
    /// CSV with columns `t, r, area, int_VH, Q, dQdt, gap`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,r,area,int_VH,Q,dQdt,gap\n");
        for i in 0..self.t.len() {
            let row = [self.t[i], self.r[i], self.area[i], self.int_vh[i], self.q[i], self.dq_dt[i], self.gap[i]];
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Label attached to diagnostic traces on non-symmetric backgrounds.
pub const NOT_IMCF: &str = "not an IMCF";

/// `Q` along `r(t) = r0 e^{t/(n-1)}` for `samples` equally spaced `t` in
/// `[t0, t1]`, starting from the innermost station.
pub fn q_trace(
    grid: &SphereGrid,
    g: &QuasiSphericalMetric,
    v: &PotentialField,
    t_range: (f64, f64),
    samples: usize,
) -> Result<FlowTrace> {
    let var = g.angular_variation(grid);
    if var > tolerances::SYMMETRY {
        return Err(Error::NotImcf(var));
    }
    trace(grid, g, v, t_range, samples, None)
}

/// [`q_trace`] without the symmetry precondition; non-symmetric input is labelled.
pub fn q_trace_diagnostic(
    grid: &SphereGrid,
    g: &QuasiSphericalMetric,
    v: &PotentialField,
    t_range: (f64, f64),
    samples: usize,
) -> Result<FlowTrace> {
    let label = (g.angular_variation(grid) > tolerances::SYMMETRY).then(|| NOT_IMCF.to_string());
    trace(grid, g, v, t_range, samples, label)
}

fn trace(
    grid: &SphereGrid,
    g: &QuasiSphericalMetric,
    v: &PotentialField,
    (t0, t1): (f64, f64),
    samples: usize,
    label: Option<String>,
) -> Result<FlowTrace> {
    check_pair(grid, g, v)?;
    if samples < 5 {
        return Err(Error::TooFewStations { needed: 5, got: samples });
    }
    if !(t0 >= 0.0 && t1 > t0) {
        return Err(Error::InvalidParameter("flow times must satisfy 0 <= t0 < t1".into()));
    }
    let r0 = g.radii[0];
    let t: Vec<f64> = (0..samples)
        .map(|i| t0 + (t1 - t0) * i as f64 / (samples - 1) as f64)
        .collect();
    let mut r = Vec::with_capacity(samples);
    let mut area = Vec::with_capacity(samples);
    let mut int_vh = Vec::with_capacity(samples);
    let mut q = Vec::with_capacity(samples);
    let mut gap = Vec::with_capacity(samples);
    let mut umbilic_term = Vec::with_capacity(samples);
    let mut m = 0.0;
    for (i, &ti) in t.iter().enumerate() {
        let ri = imcf_radius(ti, r0, g.n);
        let sl = slice_at(grid, g, v, ri)?;
        if i == 0 {
            m = sl.smarr_mass(grid);
        }
        r.push(ri);
        area.push(sl.area(grid));
        int_vh.push(sl.int_vh(grid));
        q.push(q_of(grid, &sl));
        gap.push(gap_of(grid, &sl));
        umbilic_term.push(sl.umbilic_term(grid));
    }
    let rows: Vec<Vec<f64>> = q.iter().map(|x| vec![*x]).collect();
    let dq_dt: Vec<f64> = differentiate(&t, &rows, 1, 5).into_iter().map(|v| v[0]).collect();
    let max_increase = dq_dt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(FlowTrace {
        n: g.n,
        m,
        t,
        r,
        area,
        int_vh,
        q,
        dq_dt,
        gap,
        umbilic_term,
        max_increase,
        monotone: max_increase <= tolerances::MONOTONICITY,
        label,
    })
}
