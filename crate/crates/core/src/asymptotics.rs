//! Large-`r` expansions of lapse and potential data.
//!
//! Each spectral degree `l` is fitted separately by weighted linear least
//! squares against a short list of radial profiles `r^p` and `r^p log r`.
//! Rows are weighted by the inverse of the leading profile so every station
//! carries comparable relative weight, and columns are normalized before the
//! SVD so the reported condition number reflects the shape of the basis
//! rather than its scale.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::QuasiSphericalMetric;
use crate::sphere::{ModeCoeffs, Selector, SphereGrid};
use crate::tolerances;

/// A radial profile in an expansion basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RadialTerm {
    /// `r^p`
    Power(f64),
    /// `r^p log r`
    LogPower(f64),
}

impl RadialTerm {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            RadialTerm::Power(p) => r.powf(p),
            RadialTerm::LogPower(p) => r.powf(p) * r.ln(),
        }
    }

    fn same(&self, other: &RadialTerm) -> bool {
        match (self, other) {
            (RadialTerm::Power(a), RadialTerm::Power(b)) => (a - b).abs() < 1e-12,
            (RadialTerm::LogPower(a), RadialTerm::LogPower(b)) => (a - b).abs() < 1e-12,
            _ => false,
        }
    }
}

/// Which field an expansion describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpandedField {
    Lapse,
    Potential,
}

/// Radial range and basis options of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub r_min: f64,
    pub r_max: f64,
    /// Stations closer than `near_field * r0` are always excluded.
    pub near_field: f64,
    /// Append the next-order profiles of each degree as nuisance columns.
    pub nuisance: bool,
}

impl FitWindow {
    pub fn new(r_min: f64, r_max: f64) -> Self {
        Self {
            r_min,
            r_max,
            near_field: tolerances::FIT_NEAR_FIELD,
            nuisance: false,
        }
    }

    /// All stations beyond the near field.
    pub fn far_field() -> Self {
        Self::new(0.0, f64::INFINITY)
    }

    /// Indices of the usable stations of `radii`.
    pub fn select(&self, radii: &[f64]) -> Result<Vec<usize>> {
        let r_lo = self.r_min.max(self.near_field * radii[0]);
        let idx: Vec<usize> = (0..radii.len())
            .filter(|&k| radii[k] >= r_lo && radii[k] <= self.r_max)
            .collect();
        if idx.len() < tolerances::FIT_MIN_STATIONS {
            return Err(Error::WindowTooSmall {
                got: idx.len(),
                needed: tolerances::FIT_MIN_STATIONS,
                r_min: r_lo,
            });
        }
        Ok(idx)
    }
}

/// Profiles fitted for degree `l` in dimension `n`.
pub fn expansion_basis(n: usize, l: usize, nuisance: bool) -> Vec<RadialTerm> {
    use RadialTerm::{LogPower as L, Power as P};
    let nf = n as f64;
    let mut terms = if n == 3 {
        match l {
            0 => vec![P(-1.0), P(-2.0), P(-3.0), P(-4.0)],
            1 => vec![P(-2.0), P(-3.0), P(-4.0)],
            2 => vec![L(-4.0), P(-4.0)],
            _ => vec![L(-5.0)],
        }
    } else {
        let gap = 2.0 / (nf - 1.0);
        match l {
            0 => vec![P(2.0 - nf), P(4.0 - 2.0 * nf)],
            1 => vec![P(1.0 - nf)],
            2 => vec![P(-nf - gap), P(2.0 - 2.0 * nf)],
            _ => vec![P(2.0 - 2.0 * nf)],
        }
    };
    if nuisance {
        let extra = if n == 3 {
            match l {
                0 => vec![L(-4.0), P(-5.0)],
                1 => vec![L(-4.0), P(-5.0)],
                2 => vec![L(-5.0), P(-5.0)],
                _ => vec![],
            }
        } else {
            let gap = 2.0 / (nf - 1.0);
            match l {
                0 => vec![P(2.0 - 2.0 * nf), P(6.0 - 3.0 * nf)],
                1 => vec![P(3.0 - 2.0 * nf)],
                2 => vec![P(2.0 - 2.0 * nf - gap), P(3.0 - 3.0 * nf)],
                _ => vec![],
            }
        };
        for t in extra {
            if !terms.iter().any(|s| s.same(&t)) {
                terms.push(t);
            }
        }
    }
    terms
}

/// Least-squares fit of one spectral degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeFit {
    pub degree: usize,
    pub terms: Vec<RadialTerm>,
    /// `coefficients[j][i]`: profile `j`, coefficient `i` within the degree block.
    pub coefficients: Vec<Vec<f64>>,
    /// Largest absolute misfit over stations and block entries.
    pub max_residual: f64,
    /// Largest misfit relative to the data norm at the same station.
    pub relative_residual: f64,
    pub condition: f64,
}

impl ModeFit {
    pub fn coefficient(&self, term: RadialTerm) -> Option<&[f64]> {
        self.terms
            .iter()
            .position(|t| t.same(&term))
            .map(|j| self.coefficients[j].as_slice())
    }
}

/// Weighted least squares `a(r_k) ≈ Σ_j c_j f_j(r_k)` for several right-hand sides.
pub fn fit_profiles(
    radii: &[f64],
    values: &[Vec<f64>],
    terms: &[RadialTerm],
) -> Result<(Vec<Vec<f64>>, f64)> {
    let rows = radii.len();
    let cols = terms.len();
    let rhs_count = values.first().map_or(0, |v| v.len());
    let mut a = DMatrix::<f64>::zeros(rows, cols);
    let mut weights = vec![0.0; rows];
    for (k, &r) in radii.iter().enumerate() {
        weights[k] = 1.0 / terms[0].eval(r).abs();
        for (j, t) in terms.iter().enumerate() {
            a[(k, j)] = weights[k] * t.eval(r);
        }
    }
    let scales: Vec<f64> = (0..cols).map(|j| a.column(j).norm()).collect();
    for j in 0..cols {
        let s = scales[j];
        a.column_mut(j).iter_mut().for_each(|x| *x /= s);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= tolerances::FIT_MAX_CONDITION) {
        return Err(Error::RankDeficient(condition));
    }
    let mut out = vec![vec![0.0; rhs_count]; cols];
    for i in 0..rhs_count {
        let b = DVector::from_iterator(rows, (0..rows).map(|k| weights[k] * values[k][i]));
        let x = svd.solve(&b, 0.0).map_err(|_| Error::RankDeficient(condition))?;
        for j in 0..cols {
            out[j][i] = x[j] / scales[j];
        }
    }
    Ok((out, condition))
}

/// Fitted expansion coefficients.
///
/// Coefficients are function values of the profile's multiplier: `leading`
/// is the coefficient of `r^{2-n}` on the sphere (so `m` for the lapse and
/// `-m` for a potential normalized to 1 at infinity), and the `ModeCoeffs`
/// fields are orthonormal-basis coefficients of the multiplier functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub n: usize,
    pub field: ExpandedField,
    pub window: FitWindow,
    pub r_first: f64,
    pub r_last: f64,
    pub stations: usize,
    /// Coefficient of `r^{2-n}`.
    pub leading: f64,
    /// Degree-0 coefficient of `r^{4-2n}`.
    pub quadratic: f64,
    /// Degree-1 coefficient of `r^{1-n}`.
    pub dot: Option<ModeCoeffs>,
    /// `n = 3`: degrees `<= 1` at `r^{-3}`.
    pub ddot: Option<ModeCoeffs>,
    /// `n = 3`: degrees `<= 2` at `r^{-4} log r`; `n >= 4`: degree 2 at `r^{-n-2/(n-1)}`.
    pub hat: Option<ModeCoeffs>,
    /// `n = 3`: degrees `<= 2` at `r^{-4}`; `n >= 4`: degree 2 at `r^{2-2n}`.
    pub tdot: Option<ModeCoeffs>,
    /// Largest coefficient norm among degrees `>= 3`.
    pub higher_mode_bound: f64,
    pub condition: f64,
    pub modes: Vec<ModeFit>,
}

impl ExpansionReport {
    /// Mass parameter implied by the leading coefficient.
    pub fn mass(&self) -> f64 {
        match self.field {
            ExpandedField::Lapse => self.leading,
            ExpandedField::Potential => -self.leading,
        }
    }

    pub fn mode(&self, l: usize) -> Option<&ModeFit> {
        self.modes.iter().find(|m| m.degree == l)
    }
}

fn gather(
    report_modes: &[ModeFit],
    n: usize,
    lmax: usize,
    degrees: &[usize],
    term: RadialTerm,
) -> Option<ModeCoeffs> {
    let mut out = ModeCoeffs::zeros(n, lmax);
    let mut any = false;
    for &l in degrees {
        if let Some(c) = report_modes.iter().find(|m| m.degree == l).and_then(|m| m.coefficient(term)) {
            out.block_mut(l).copy_from_slice(c);
            any = true;
        }
    }
    any.then_some(out)
}

/// Fit station data of `field` on `radii` against the expansion bases.
pub fn fit_expansion(
    grid: &SphereGrid,
    radii: &[f64],
    data: &[ModeCoeffs],
    window: &FitWindow,
    field: ExpandedField,
) -> Result<ExpansionReport> {
    let n = grid.n();
    let lmax = grid.lmax();
    if data.len() != radii.len() {
        return Err(Error::LengthMismatch {
            expected: radii.len(),
            got: data.len(),
        });
    }
    let idx = window.select(radii)?;
    let r: Vec<f64> = idx.iter().map(|&k| radii[k]).collect();
    let root_area = grid.area().sqrt();
    let mut modes = Vec::new();
    let mut condition = 0.0f64;
    for l in 0..=lmax {
        let terms = expansion_basis(n, l, window.nuisance);
        let values: Vec<Vec<f64>> = idx
            .iter()
            .map(|&k| {
                let mut b = data[k].block(l).to_vec();
                if l == 0 {
                    b[0] -= root_area;
                }
                b
            })
            .collect();
        let (coefficients, cond) = fit_profiles(&r, &values, &terms)?;
        condition = condition.max(cond);
        let mut max_residual = 0.0f64;
        let mut relative_residual = 0.0f64;
        for (k, &rk) in r.iter().enumerate() {
            let mut misfit = 0.0f64;
            let mut size = 0.0f64;
            for (i, v) in values[k].iter().enumerate() {
                let model: f64 = terms
                    .iter()
                    .enumerate()
                    .map(|(j, t)| coefficients[j][i] * t.eval(rk))
                    .sum();
                misfit = misfit.max((v - model).abs());
                size = size.max(v.abs());
            }
            max_residual = max_residual.max(misfit);
            if size > 0.0 {
                relative_residual = relative_residual.max(misfit / size);
            }
        }
        modes.push(ModeFit {
            degree: l,
            terms,
            coefficients,
            max_residual,
            relative_residual,
            condition: cond,
        });
    }

    let nf = n as f64;
    let scalar = |term: RadialTerm| -> f64 {
        modes[0].coefficient(term).map_or(0.0, |c| c[0] / root_area)
    };
    let leading = scalar(RadialTerm::Power(2.0 - nf));
    let quadratic = scalar(RadialTerm::Power(4.0 - 2.0 * nf));
    let dot = gather(&modes, n, lmax, &[1], RadialTerm::Power(1.0 - nf));
    let (ddot, hat, tdot) = if n == 3 {
        (
            gather(&modes, n, lmax, &[0, 1], RadialTerm::Power(-3.0)),
            gather(&modes, n, lmax, &[0, 1, 2], RadialTerm::LogPower(-4.0)),
            gather(&modes, n, lmax, &[0, 1, 2], RadialTerm::Power(-4.0)),
        )
    } else {
        (
            None,
            gather(&modes, n, lmax, &[2], RadialTerm::Power(-nf - 2.0 / (nf - 1.0))),
            gather(&modes, n, lmax, &[2], RadialTerm::Power(2.0 - 2.0 * nf)),
        )
    };
    let higher_mode_bound = modes
        .iter()
        .filter(|m| m.degree >= 3)
        .map(|m| m.coefficients[0].iter().map(|c| c * c).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    Ok(ExpansionReport {
        n,
        field,
        window: *window,
        r_first: r[0],
        r_last: *r.last().unwrap(),
        stations: r.len(),
        leading,
        quadratic,
        dot,
        ddot,
        hat,
        tdot,
        higher_mode_bound,
        condition,
        modes,
    })
}

fn check_metric(grid: &SphereGrid, g: &QuasiSphericalMetric) -> Result<()> {
    if grid.n() != g.n || grid.lmax() != g.lmax {
        return Err(Error::GridMismatch {
            expected_n: grid.n(),
            expected_lmax: grid.lmax(),
            got_n: g.n,
            got_lmax: g.lmax,
        });
    }
    Ok(())
}

/// Lapse expansion in three dimensions.
pub fn fit_expansion_3d(grid: &SphereGrid, g: &QuasiSphericalMetric, window: &FitWindow) -> Result<ExpansionReport> {
    check_metric(grid, g)?;
    if g.n != 3 {
        return Err(Error::UnsupportedDimension(g.n));
    }
    fit_expansion(grid, &g.radii, &g.lapse, window, ExpandedField::Lapse)
}

/// Lapse expansion for `4 <= n <= 8` (axisymmetric data).
pub fn fit_expansion_highdim(
    grid: &SphereGrid,
    g: &QuasiSphericalMetric,
    window: &FitWindow,
) -> Result<ExpansionReport> {
    check_metric(grid, g)?;
    if g.n < 4 {
        return Err(Error::UnsupportedDimension(g.n));
    }
    fit_expansion(grid, &g.radii, &g.lapse, window, ExpandedField::Lapse)
}

/// Dispatch on dimension.
pub fn fit_lapse_expansion(grid: &SphereGrid, g: &QuasiSphericalMetric, window: &FitWindow) -> Result<ExpansionReport> {
    if g.n == 3 {
        fit_expansion_3d(grid, g, window)
    } else {
        fit_expansion_highdim(grid, g, window)
    }
}

/// `(C (n-1)(n-2)/2 + 2(n-1)) / (n(n-3))`, the degree-2 coefficient of
/// `r^{2-2n}` per unit `(u̇^2)_{l=2}` for `n >= 4`.
pub fn quartic_constant(n: usize) -> f64 {
    let nf = n as f64;
    (1.5 * (nf - 1.0) * (nf - 2.0) + 2.0 * (nf - 1.0)) / (nf * (nf - 3.0))
}

/// Comparison of a measured degree-2 coefficient with its prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationGap {
    pub measured: ModeCoeffs,
    pub predicted: ModeCoeffs,
    /// `‖measured - predicted‖`.
    pub absolute: f64,
    /// `absolute / ‖u̇‖^2`.
    pub relative_to_dot: f64,
    /// `absolute / ‖predicted‖`.
    pub relative_to_prediction: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        a
    }
}

pub(crate) fn gap(measured: ModeCoeffs, predicted: ModeCoeffs, scale: f64) -> RelationGap {
    let absolute = measured.sub(&predicted).norm();
    RelationGap {
        relative_to_dot: ratio(absolute, scale),
        relative_to_prediction: ratio(absolute, predicted.norm()),
        measured,
        predicted,
        absolute,
    }
}

/// `(u̇^2)_{l=2}` for the dipole coefficient of a report.
pub fn dot_square_l2(grid: &SphereGrid, dot: &ModeCoeffs) -> ModeCoeffs {
    grid.product(dot, dot).project(Selector::Eq(2))
}

/// Degree-2 relation between the dipole and the quadratic response:
/// `û_{l=2} = -(7/2)(u̇^2)_{l=2}` for `n = 3`, `u⃛ = C_n (u̇^2)_{l=2}` otherwise.
pub fn check_l2_relation(grid: &SphereGrid, rep: &ExpansionReport) -> Result<RelationGap> {
    let missing = |what: &str| Error::MissingCoefficients(what.to_string());
    let dot = rep.dot.as_ref().ok_or_else(|| missing("dipole"))?;
    let sq = dot_square_l2(grid, dot);
    let (measured, factor) = if rep.n == 3 {
        (rep.hat.as_ref().ok_or_else(|| missing("log-quartic"))?, -3.5)
    } else {
        (rep.tdot.as_ref().ok_or_else(|| missing("quartic"))?, quartic_constant(rep.n))
    };
    let dn = dot.norm();
    Ok(gap(measured.project(Selector::Eq(2)), sq.scaled(factor), dn * dn))
}

/// Least-squares slope of `log |a|` against `log r`.
pub fn loglog_slope(radii: &[f64], amplitudes: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(amplitudes)
        .filter(|(_, a)| a.abs() > 0.0)
        .map(|(r, a)| (r.ln(), a.abs().ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Norm of the degree-`l` block at each station inside `window`.
pub fn degree_amplitudes(
    radii: &[f64],
    data: &[ModeCoeffs],
    l: usize,
    window: &FitWindow,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let idx = window.select(radii)?;
    let r = idx.iter().map(|&k| radii[k]).collect();
    let a = idx
        .iter()
        .map(|&k| data[k].block(l).iter().map(|c| c * c).sum::<f64>().sqrt())
        .collect();
    Ok((r, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_recovered_exactly() {
        let radii: Vec<f64> = (0..20).map(|k| 100.0 * 1.2f64.powi(k)).collect();
        let terms = expansion_basis(3, 2, false);
        let values: Vec<Vec<f64>> = radii
            .iter()
            .map(|&r| vec![0.3 * r.powi(-4) * r.ln() - 0.7 * r.powi(-4)])
            .collect();
        let (c, cond) = fit_profiles(&radii, &values, &terms).unwrap();
        assert!((c[0][0] - 0.3).abs() < 1e-9);
        assert!((c[1][0] + 0.7).abs() < 1e-9);
        assert!(cond > 1.0);
    }

    #[test]
    fn quartic_constant_in_four_dimensions() {
        assert!((quartic_constant(4) - 3.75).abs() < 1e-15);
    }

    #[test]
    fn slope_of_pure_power() {
        let r: Vec<f64> = (1..10).map(|k| k as f64 * 10.0).collect();
        let a: Vec<f64> = r.iter().map(|x| 2.0 * x.powf(-3.0)).collect();
        assert!((loglog_slope(&r, &a) + 3.0).abs() < 1e-12);
    }

    #[test]
    fn window_rejects_near_field() {
        let radii: Vec<f64> = (0..30).map(|k| 1.0 + k as f64).collect();
        let w = FitWindow::far_field();
        assert!(matches!(w.select(&radii), Err(Error::WindowTooSmall { .. })));
    }
}
