//! Static potentials on quasi-spherical backgrounds and the residuals of the
//! static vacuum equations.
//!
//! In `s = log r` the Laplace equation `Δ_g V = 0` reads
//! `V_ss + (n-2 - u_s/u) V_s + u^2 ΔV + u ∇u·∇V = 0`, and the `rr`-component
//! of `Hess V = V Ric` on a scalar-flat background reads
//! `V_ss = (1 + u_s/u) V_s - u ∇u·∇V + k (1 - u^2) V` with
//! `k = (n-1)(n-2)/2`. Angular derivatives are spectral; radial derivatives
//! are finite differences on the metric's stations, which must be uniformly
//! spaced in `s` for the elliptic solve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{self, ExpandedField, ExpansionReport, FitWindow, RelationGap};
use crate::error::{Error, Result};
use crate::evolve::{residual_report, symmetric_mass};
use crate::metric::{PotentialField, PotentialSource, QuasiSphericalMetric};
use crate::radial::{fornberg_weights, hermite, hermite_derivative, stencil_window};
use crate::sphere::{degree_of, eigenvalue, ModeCoeffs, Selector, SphereGrid, TensorField, VectorField};
use crate::tolerances;

fn k_const(n: usize) -> f64 {
    let nf = n as f64;
    0.5 * (nf - 1.0) * (nf - 2.0)
}

fn check_grid(grid: &SphereGrid, n: usize, lmax: usize) -> Result<()> {
    if grid.n() != n || grid.lmax() != lmax {
        return Err(Error::GridMismatch {
            expected_n: grid.n(),
            expected_lmax: grid.lmax(),
            got_n: n,
            got_lmax: lmax,
        });
    }
    Ok(())
}

fn check_pair(grid: &SphereGrid, g: &QuasiSphericalMetric, v: &PotentialField) -> Result<()> {
    g.validate(grid)?;
    check_grid(grid, v.n, v.lmax)?;
    if v.value.len() != g.len() || v.value_r.len() != g.len() {
        return Err(Error::LengthMismatch {
            expected: g.len(),
            got: v.value.len(),
        });
    }
    if v.radii.iter().zip(&g.radii).any(|(a, b)| (a - b).abs() > 1e-12 * b) {
        return Err(Error::BadRadii);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Residuals

/// Sup and `L^2` norm of one residual component at one station.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Norms {
    pub sup: f64,
    pub l2: f64,
}

impl Norms {
    fn of_pointwise(grid: &SphereGrid, sq: &[f64]) -> Norms {
        let sup = sq.iter().fold(0.0f64, |a, x| a.max(*x)).sqrt();
        Norms {
            sup,
            l2: grid.integrate_values(sq).max(0.0).sqrt(),
        }
    }

    fn of_scalar(grid: &SphereGrid, v: &[f64]) -> Norms {
        let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        Norms::of_pointwise(grid, &sq)
    }

    fn max(self, o: Norms) -> Norms {
        Norms {
            sup: self.sup.max(o.sup),
            l2: self.l2.max(o.l2),
        }
    }
}

/// Norms of the four static-equation components at one station.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComponentNorms {
    pub r: f64,
    pub laplace: Norms,
    pub ra: Norms,
    pub ab_trace: Norms,
    pub ab_traceless: Norms,
    pub rr: Norms,
    /// `max |r^2 L - (tr AB + u^{-2} r^2 RR - V u^{-3} S)|` with `S` the
    /// scalar-curvature residual.
    pub identity_defect: f64,
}

impl ComponentNorms {
    /// Largest `L^2` norm among the components.
    pub fn score(&self) -> f64 {
        self.laplace
            .l2
            .max(self.ra.l2)
            .max(self.ab_trace.l2)
            .max(self.ab_traceless.l2)
            .max(self.rr.l2)
    }

    /// Largest sup norm among the components.
    pub fn sup(&self) -> f64 {
        self.laplace
            .sup
            .max(self.ra.sup)
            .max(self.ab_trace.sup)
            .max(self.ab_traceless.sup)
            .max(self.rr.sup)
    }
}

/// Residual fields of `Hess V = V Ric`, `ΔV = 0` at one station.
#[derive(Debug, Clone)]
pub struct StaticStation {
    pub r: f64,
    /// `Δ_g V`.
    pub laplace: Vec<f64>,
    /// `Hess V(∂_r, ∂_a) - V Ric(∂_r, ∂_a)` in the orthonormal frame of the unit sphere.
    pub ra: VectorField,
    /// `Hess V(∂_a, ∂_b) - V Ric(∂_a, ∂_b)` on the unit sphere.
    pub ab: TensorField,
    /// `Hess V(∂_r, ∂_r) - V Ric(∂_r, ∂_r)` with `Ric(∂_r, ∂_r)` reduced by scalar flatness.
    pub rr: Vec<f64>,
    pub norms: ComponentNorms,
}

/// Static-equation residuals over all stations.
#[derive(Debug, Clone)]
pub struct StaticResidual {
    pub stations: Vec<StaticStation>,
}

impl StaticResidual {
    pub fn norms(&self) -> Vec<ComponentNorms> {
        self.stations.iter().map(|s| s.norms).collect()
    }

    /// Largest component `L^2` norm over stations with `r_min <= r <= r_max`.
    pub fn score(&self, r_min: f64, r_max: f64) -> f64 {
        self.stations
            .iter()
            .filter(|s| s.r >= r_min && s.r <= r_max)
            .map(|s| s.norms.score())
            .fold(0.0, f64::max)
    }

    /// Largest component `L^2` norm over all stations.
    pub fn aggregate(&self) -> f64 {
        self.score(0.0, f64::INFINITY)
    }

    /// Componentwise maxima over all stations.
    pub fn max_norms(&self) -> ComponentNorms {
        let mut out = ComponentNorms::default();
        for s in &self.stations {
            let c = &s.norms;
            out.laplace = out.laplace.max(c.laplace);
            out.ra = out.ra.max(c.ra);
            out.ab_trace = out.ab_trace.max(c.ab_trace);
            out.ab_traceless = out.ab_traceless.max(c.ab_traceless);
            out.rr = out.rr.max(c.rr);
            out.identity_defect = out.identity_defect.max(c.identity_defect);
        }
        out.r = f64::NAN;
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn station_residual(
    grid: &SphereGrid,
    r: f64,
    u_c: &ModeCoeffs,
    ur_c: &ModeCoeffs,
    v_c: &ModeCoeffs,
    vr_c: &ModeCoeffs,
    vrr_c: &ModeCoeffs,
) -> StaticStation {
    let n = grid.n();
    let nf = n as f64;
    let k = k_const(n);
    let u = grid.synth(u_c);
    let ur = grid.synth(ur_c);
    let lap_u = grid.synth(&u_c.laplace_beltrami());
    let grad_u = grid.gradient(u_c);
    let hess_u = grid.hessian(u_c);
    let v = grid.synth(v_c);
    let vr = grid.synth(vr_c);
    let vrr = grid.synth(vrr_c);
    let lap_v = grid.synth(&v_c.laplace_beltrami());
    let grad_v = grid.gradient(v_c);
    let hess_v = grid.hessian(v_c);
    let grad_vr = grid.gradient(vr_c);
    let gg = grad_u.dot(&grad_v);
    let np = u.len();

    let mut laplace = vec![0.0; np];
    let mut rr = vec![0.0; np];
    let mut iso = vec![0.0; np];
    let mut v_over_u = vec![0.0; np];
    let mut c_grad_u = vec![0.0; np];
    let mut scalar = vec![0.0; np];
    for i in 0..np {
        let (u, ur, v, vr, vrr) = (u[i], ur[i], v[i], vr[i], vrr[i]);
        let u2 = u * u;
        let radial = vrr - ur * vr / u + u * gg[i] / (r * r);
        laplace[i] = radial / u2 + lap_v[i] / (r * r) + (nf - 1.0) / r * vr / u2;
        rr[i] = radial - k / (r * r) * (1.0 - u2) * v;
        iso[i] = r * vr / u2 - v * (r * ur / (u2 * u) + (nf - 2.0) * (1.0 - 1.0 / u2));
        v_over_u[i] = v / u;
        c_grad_u[i] = -(vr / u + (nf - 2.0) / r * v / u);
        scalar[i] = u2 * lap_u[i] - (nf - 1.0) * r * ur + k * (u - u2 * u);
    }
    let ra = grad_vr
        .add(&grad_u.scale_by(&c_grad_u))
        .sub(&grad_v.scale_by(&vec![1.0 / r; np]));
    let ab = hess_v.add(&hess_u.scale_by(&v_over_u)).add_metric(&iso);
    let trace = ab.trace();
    let traceless = ab.traceless();
    let mut identity_defect = 0.0f64;
    for i in 0..np {
        let u = u[i];
        let rhs = trace[i] + r * r * rr[i] / (u * u) - v[i] * scalar[i] / (u * u * u);
        identity_defect = identity_defect.max((r * r * laplace[i] - rhs).abs());
    }
    let norms = ComponentNorms {
        r,
        laplace: Norms::of_scalar(grid, &laplace),
        ra: Norms::of_pointwise(grid, &ra.norm_sq()),
        ab_trace: Norms::of_scalar(grid, &trace),
        ab_traceless: Norms::of_pointwise(grid, &traceless.norm_sq()),
        rr: Norms::of_scalar(grid, &rr),
        identity_defect,
    };
    StaticStation {
        r,
        laplace,
        ra,
        ab,
        rr,
        norms,
    }
}

/// Evaluate every static-equation component of `(g, V)` at every station.
pub fn static_residual(grid: &SphereGrid, g: &QuasiSphericalMetric, v: &PotentialField) -> Result<StaticResidual> {
    check_pair(grid, g, v)?;
    let ur = g.lapse_r()?;
    let vrr = v.value_rr()?;
    let stations = (0..g.len())
        .map(|k| station_residual(grid, g.radii[k], &g.lapse[k], &ur[k], &v.value[k], &v.value_r[k], &vrr[k]))
        .collect();
    Ok(StaticResidual { stations })
}

/// Scale-free residual components at one station, weighted so that the
/// Euclidean norm of the vector is the quadrature `L^2` norm of
/// `(r^2 L, r^2 RR, r RA, AB)`.
fn residual_vector(grid: &SphereGrid, st: &StaticStation) -> Vec<f64> {
    let r = st.r;
    let w = grid.weights();
    let mult = (grid.n() - 2) as f64;
    let mut out = Vec::with_capacity(7 * w.len());
    for (i, wi) in w.iter().enumerate() {
        let sw = wi.sqrt();
        out.push(sw * r * r * st.laplace[i]);
        out.push(sw * r * r * st.rr[i]);
        out.push(sw * r * st.ra.theta[i]);
        out.push(sw * r * st.ra.phi[i]);
        out.push(sw * st.ab.tt[i]);
        out.push(sw * std::f64::consts::SQRT_2 * st.ab.tp[i]);
        out.push(sw * mult.sqrt() * st.ab.pp[i]);
    }
    out
}

// ---------------------------------------------------------------------------
// Symmetric potentials

/// Bounded potential over a rotationally symmetric lapse.
#[derive(Debug, Clone)]
pub struct SymmetricPotential {
    pub potential: PotentialField,
    /// Mass parameter implied by `u(r0)`.
    pub m0: f64,
    /// `V V_0' - V' V_0` against the closed form `V_0 = (1 - 2 m0 r^{2-n})^{1/2}`.
    pub wronskian: Vec<f64>,
    /// `u^{-1} W`.
    pub wronskian_over_u: Vec<f64>,
    /// Largest `|V - V_0|`.
    pub closed_form_error: f64,
    /// Largest difference between the integrated and the stored lapse.
    pub lapse_mismatch: f64,
}

/// Radial-equation potential on a rotationally symmetric background.
///
/// The lapse is integrated outward from `u(r0)` to `10^12 r_K`; then lapse
/// and potential are integrated inward from `V = 1`, `V_s = 0` there, which
/// selects the bounded branch.
pub fn solve_potential_symmetric(grid: &SphereGrid, g: &QuasiSphericalMetric) -> Result<SymmetricPotential> {
    g.validate(grid)?;
    let var = g.angular_variation(grid);
    if var > tolerances::SYMMETRY {
        return Err(Error::NonSymmetric(var));
    }
    let n = g.n;
    let nf = n as f64;
    let k = k_const(n);
    let r0 = g.radii[0];
    let u0 = g.lapse[0].mean();
    let m0 = symmetric_mass(n, r0, u0);
    let h_max = 1e-3;
    let s0 = r0.ln();
    let s_far = (g.radii.last().unwrap() * 1e12).ln();
    // w = u - 1 obeys w_s = -((n-2)/2) w (1 + w)(2 + w).
    let fw = |w: f64| -0.5 * (nf - 2.0) * w * (1.0 + w) * (2.0 + w);
    let steps = ((s_far - s0) / h_max).ceil() as usize;
    let h = (s_far - s0) / steps as f64;
    let mut w = u0 - 1.0;
    for _ in 0..steps {
        let k1 = fw(w);
        let k2 = fw(w + 0.5 * h * k1);
        let k3 = fw(w + 0.5 * h * k2);
        let k4 = fw(w + h * k3);
        w += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }

    // Inward: state (w, y = V - 1, z = V_s).
    let f = |st: [f64; 3]| -> [f64; 3] {
        let [w, y, z] = st;
        let ws = fw(w);
        let zs = (1.0 + ws / (1.0 + w)) * z - k * w * (2.0 + w) * (1.0 + y);
        [ws, z, zs]
    };
    let mut st = [w, 0.0, 0.0];
    let mut s = s_far;
    let len = g.len();
    let mut out = vec![[0.0; 3]; len];
    for idx in (0..len).rev() {
        let target = g.radii[idx].ln();
        let steps = ((s - target) / h_max).ceil().max(1.0) as usize;
        let h = -(s - target) / steps as f64;
        for _ in 0..steps {
            let k1 = f(st);
            let a = |c: f64, kk: [f64; 3]| [st[0] + c * kk[0], st[1] + c * kk[1], st[2] + c * kk[2]];
            let k2 = f(a(0.5 * h, k1));
            let k3 = f(a(0.5 * h, k2));
            let k4 = f(a(h, k3));
            for j in 0..3 {
                st[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        s = target;
        out[idx] = st;
    }

    let mut value = Vec::with_capacity(len);
    let mut value_r = Vec::with_capacity(len);
    let mut value_rr = Vec::with_capacity(len);
    let mut wronskian = Vec::with_capacity(len);
    let mut wronskian_over_u = Vec::with_capacity(len);
    let mut closed_form_error = 0.0f64;
    let mut lapse_mismatch = 0.0f64;
    for (idx, &r) in g.radii.iter().enumerate() {
        let [w, y, z] = out[idx];
        let v = 1.0 + y;
        let vr = z / r;
        let zs = f(out[idx])[2];
        let vrr = (zs - z) / (r * r);
        let a = 1.0 - 2.0 * m0 * r.powf(2.0 - nf);
        let v0 = a.sqrt();
        let v0r = m0 * (nf - 2.0) * r.powf(1.0 - nf) / v0;
        let wr = v * v0r - vr * v0;
        wronskian.push(wr);
        wronskian_over_u.push(wr / (1.0 + w));
        closed_form_error = closed_form_error.max((v - v0).abs());
        lapse_mismatch = lapse_mismatch.max((1.0 + w - g.lapse[idx].mean()).abs());
        value.push(grid.constant_coeffs(v));
        value_r.push(grid.constant_coeffs(vr));
        value_rr.push(grid.constant_coeffs(vrr));
    }
    Ok(SymmetricPotential {
        potential: PotentialField {
            n,
            lmax: g.lmax,
            radii: g.radii.clone(),
            value,
            value_r,
            value_rr: Some(value_rr),
            source: PotentialSource::Symmetric,
            outer_radius: s_far.exp(),
        },
        m0,
        wronskian,
        wronskian_over_u,
        closed_form_error,
        lapse_mismatch,
    })
}

// ---------------------------------------------------------------------------
// Laplace solve

/// Inner boundary data at `r0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InnerBc {
    /// `V(r0, ·)`.
    Dirichlet(ModeCoeffs),
    /// `V_r(r0, ·)`.
    Neumann(ModeCoeffs),
}

/// Condition imposed at the outermost station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OuterClosure {
    /// Each mode decays like a two-term sum `a r^{-p} + b r^{-q}` with
    /// `p = l + n - 2`, `q = p + n - 2`; `V -> 1`.
    Decaying,
    /// Each mode grows like `r^l`.
    GrowthMatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub outer: OuterClosure,
    /// Largest accepted scalar-curvature residual of the background.
    pub flatness_tolerance: f64,
    /// Raise the second-order scheme to sixth order by deferred correction.
    pub high_order: bool,
    /// Iteration cap and relative tolerance of the high-order iteration.
    pub max_corrections: usize,
    pub correction_tolerance: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            outer: OuterClosure::Decaying,
            flatness_tolerance: 1e-6,
            high_order: true,
            max_corrections: 200,
            correction_tolerance: 1e-13,
        }
    }
}

fn uniform_step(radii: &[f64]) -> Result<f64> {
    if radii.len() < 7 {
        return Err(Error::TooFewStations {
            needed: 7,
            got: radii.len(),
        });
    }
    let s: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let h = (s[s.len() - 1] - s[0]) / (s.len() - 1) as f64;
    for (k, sk) in s.iter().enumerate() {
        if (sk - (s[0] + h * k as f64)).abs() > 1e-9 * h {
            return Err(Error::InvalidParameter(
                "elliptic solve requires stations uniformly spaced in log r".into(),
            ));
        }
    }
    Ok(h)
}

/// Coefficient indices of the modes carried by the solve.
fn mode_subset(grid: &SphereGrid, axisymmetric: bool) -> Vec<usize> {
    (0..grid.mode_count())
        .filter(|&i| {
            if !axisymmetric || grid.n() != 3 {
                return true;
            }
            let l = degree_of(3, i);
            i == l * l + l
        })
        .collect()
}

const AXISYMMETRY: f64 = 1e-12;

/// Points per finite-difference stencil of the high-order operator.
const STENCIL: usize = 9;

/// Basis values and gradients at the nodes, restricted to a mode subset.
struct Basis {
    modes: Vec<usize>,
    lambda: Vec<f64>,
    degree: Vec<usize>,
    s: DMatrix<f64>,
    gt: DMatrix<f64>,
    gp: DMatrix<f64>,
    wt: DMatrix<f64>,
}

impl Basis {
    fn new(grid: &SphereGrid, modes: Vec<usize>) -> Self {
        let np = grid.node_count();
        let m = modes.len();
        let mut s = DMatrix::zeros(np, m);
        let mut gt = DMatrix::zeros(np, m);
        let mut gp = DMatrix::zeros(np, m);
        let mut unit = ModeCoeffs::zeros(grid.n(), grid.lmax());
        for (j, &idx) in modes.iter().enumerate() {
            unit.data[idx] = 1.0;
            let v = grid.synth(&unit);
            let gr = grid.gradient(&unit);
            for i in 0..np {
                s[(i, j)] = v[i];
                gt[(i, j)] = gr.theta[i];
                gp[(i, j)] = gr.phi[i];
            }
            unit.data[idx] = 0.0;
        }
        let w = grid.weights();
        let mut wt = s.transpose();
        for i in 0..np {
            wt.column_mut(i).iter_mut().for_each(|x| *x *= w[i]);
        }
        let degree: Vec<usize> = modes.iter().map(|&i| degree_of(grid.n(), i)).collect();
        let lambda = degree.iter().map(|&l| eigenvalue(grid.n(), l)).collect();
        Self {
            modes,
            lambda,
            degree,
            s,
            gt,
            gp,
            wt,
        }
    }

    fn restrict(&self, c: &ModeCoeffs) -> DVector<f64> {
        DVector::from_iterator(self.modes.len(), self.modes.iter().map(|&i| c.data[i]))
    }

    fn expand(&self, grid: &SphereGrid, v: &DVector<f64>) -> ModeCoeffs {
        let mut c = ModeCoeffs::zeros(grid.n(), grid.lmax());
        for (j, &i) in self.modes.iter().enumerate() {
            c.data[i] = v[j];
        }
        c
    }
}

/// `V -> u^2 ΔV + u ∇u·∇V` and `V_s -> (n-2 - u_s/u) V_s` on the mode subset.
fn station_operators(grid: &SphereGrid, basis: &Basis, u_c: &ModeCoeffs, us_c: &ModeCoeffs) -> (DMatrix<f64>, DMatrix<f64>) {
    let nf = grid.n() as f64;
    let u = grid.synth(u_c);
    let us = grid.synth(us_c);
    let gu = grid.gradient(u_c);
    let np = u.len();
    let m = basis.modes.len();
    let mut t = DMatrix::zeros(np, m);
    let mut b = DMatrix::zeros(np, m);
    for j in 0..m {
        let lam = basis.lambda[j];
        for i in 0..np {
            t[(i, j)] = -lam * u[i] * u[i] * basis.s[(i, j)]
                + u[i] * (gu.theta[i] * basis.gt[(i, j)] + gu.phi[i] * basis.gp[(i, j)]);
            b[(i, j)] = (nf - 2.0 - us[i] / u[i]) * basis.s[(i, j)];
        }
    }
    (&basis.wt * t, &basis.wt * b)
}

/// Block-tridiagonal system factored by block Gaussian elimination.
struct BlockFactor {
    lu: Vec<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    c: Vec<DMatrix<f64>>,
    lower: Vec<DMatrix<f64>>,
}

impl BlockFactor {
    fn new(lower: Vec<DMatrix<f64>>, diag: Vec<DMatrix<f64>>, upper: Vec<DMatrix<f64>>) -> Result<Self> {
        let len = diag.len();
        let mut lu = Vec::with_capacity(len);
        let mut c: Vec<DMatrix<f64>> = Vec::with_capacity(len);
        for k in 0..len {
            let d = if k == 0 {
                diag[0].clone()
            } else {
                &diag[k] - &lower[k] * &c[k - 1]
            };
            let f = d.lu();
            let pivots = f.u().diagonal().map(f64::abs);
            if !f.is_invertible() || pivots.min() <= 1e-13 * pivots.max() {
                return Err(Error::SingularSystem(k));
            }
            if k + 1 < len {
                let ck = f.solve(&upper[k]).ok_or(Error::SingularSystem(k))?;
                c.push(ck);
            }
            lu.push(f);
        }
        Ok(Self { lu, c, lower })
    }

    fn solve(&self, rhs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let len = rhs.len();
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(len);
        for k in 0..len {
            let b = if k == 0 {
                rhs[0].clone()
            } else {
                &rhs[k] - &self.lower[k] * &y[k - 1]
            };
            y.push(self.lu[k].solve(&b).ok_or(Error::SingularSystem(k))?);
        }
        for k in (0..len - 1).rev() {
            let t = &self.c[k] * &y[k + 1];
            y[k] -= t;
        }
        Ok(y)
    }
}

fn flatten(v: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(v.iter().map(|b| b.len()).sum(), v.iter().flat_map(|b| b.iter().copied()))
}

/// Restarted GMRES for `op(x) = b`, stopping at relative residual `tol`.
fn gmres<F>(op: F, b: &DVector<f64>, mut x: DVector<f64>, max_iter: usize, tol: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    const RESTART: usize = 40;
    let bn = b.norm().max(1e-300);
    let mut done = 0;
    while done < max_iter {
        let r = b - op(&x)?;
        let beta = r.norm();
        if beta <= tol * bn {
            break;
        }
        let mut basis = vec![r / beta];
        let mut hess = DMatrix::<f64>::zeros(RESTART + 1, RESTART);
        let mut cs = vec![0.0; RESTART];
        let mut sn = vec![0.0; RESTART];
        let mut g = DVector::<f64>::zeros(RESTART + 1);
        g[0] = beta;
        let mut used = 0;
        for j in 0..RESTART.min(max_iter - done) {
            let mut w = op(&basis[j])?;
            for (i, q) in basis.iter().enumerate() {
                let hij = w.dot(q);
                hess[(i, j)] = hij;
                w.axpy(-hij, q, 1.0);
            }
            let hn = w.norm();
            hess[(j + 1, j)] = hn;
            for i in 0..j {
                let t = cs[i] * hess[(i, j)] + sn[i] * hess[(i + 1, j)];
                hess[(i + 1, j)] = -sn[i] * hess[(i, j)] + cs[i] * hess[(i + 1, j)];
                hess[(i, j)] = t;
            }
            let den = hess[(j, j)].hypot(hess[(j + 1, j)]);
            cs[j] = hess[(j, j)] / den;
            sn[j] = hess[(j + 1, j)] / den;
            hess[(j, j)] = den;
            hess[(j + 1, j)] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            done += 1;
            if g[j + 1].abs() <= tol * bn || hn == 0.0 {
                break;
            }
            basis.push(w / hn);
        }
        let mut y = DVector::<f64>::zeros(used);
        for i in (0..used).rev() {
            let mut acc = g[i];
            for l in i + 1..used {
                acc -= hess[(i, l)] * y[l];
            }
            y[i] = acc / hess[(i, i)];
        }
        for (i, yi) in y.iter().enumerate() {
            x.axpy(*yi, &basis[i], 1.0);
        }
    }
    Ok(x)
}

/// Assembled Laplace problem on a background, reusable for many inner data.
struct LaplaceProblem {
    n: usize,
    basis: Basis,
    radii: Vec<f64>,
    h: f64,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    /// Outer closure `V_s(r_K) = F V_K + g`.
    close_f: DMatrix<f64>,
    close_g: DVector<f64>,
    dirichlet: bool,
    factor: BlockFactor,
    options: SolveOptions,
}

impl LaplaceProblem {
    fn new(
        grid: &SphereGrid,
        g: &QuasiSphericalMetric,
        axisymmetric: bool,
        dirichlet: bool,
        options: &SolveOptions,
    ) -> Result<Self> {
        g.validate(grid)?;
        let h = uniform_step(&g.radii)?;
        let audit = residual_report(grid, g)?;
        if audit.max_sup > options.flatness_tolerance {
            return Err(Error::NotScalarFlat {
                residual: audit.max_sup,
                tolerance: options.flatness_tolerance,
            });
        }
        let basis = Basis::new(grid, mode_subset(grid, axisymmetric));
        let ur = g.lapse_r()?;
        let mut a = Vec::with_capacity(g.len());
        let mut b = Vec::with_capacity(g.len());
        for k in 0..g.len() {
            let us = ur[k].scaled(g.radii[k]);
            let (ak, bk) = station_operators(grid, &basis, &g.lapse[k], &us);
            a.push(ak);
            b.push(bk);
        }
        let m = basis.modes.len();
        let nf = g.n as f64;
        let last = g.len() - 1;
        let (close_f, close_g) = match options.outer {
            OuterClosure::GrowthMatched => (
                DMatrix::from_diagonal(&DVector::from_iterator(m, basis.degree.iter().map(|&l| l as f64))),
                DVector::zeros(m),
            ),
            OuterClosure::Decaying => {
                let p: Vec<f64> = basis.degree.iter().map(|&l| l as f64 + nf - 2.0).collect();
                let q: Vec<f64> = p.iter().map(|p| p + nf - 2.0).collect();
                let c1 = DMatrix::from_diagonal(&DVector::from_iterator(m, (0..m).map(|j| p[j] + q[j]))) - &b[last];
                let c0 = DMatrix::from_diagonal(&DVector::from_iterator(m, (0..m).map(|j| p[j] * q[j]))) - &a[last];
                let target = grid.area().sqrt();
                let rhs = DVector::from_iterator(
                    m,
                    (0..m).map(|j| if basis.degree[j] == 0 { p[j] * q[j] * target } else { 0.0 }),
                );
                let lu = c1.lu();
                let f = -lu.solve(&c0).ok_or(Error::SingularSystem(last))?;
                let gv = lu.solve(&rhs).ok_or(Error::SingularSystem(last))?;
                (f, gv)
            }
        };
        let id = DMatrix::<f64>::identity(m, m);
        let h2 = h * h;
        let len = g.len();
        let mut lower = vec![DMatrix::zeros(m, m); len];
        let mut diag = vec![DMatrix::zeros(m, m); len];
        let mut upper = vec![DMatrix::zeros(m, m); len];
        for k in 1..last {
            lower[k] = &id / h2 - &b[k] / (2.0 * h);
            diag[k] = &id * (-2.0 / h2) + &a[k];
            upper[k] = &id / h2 + &b[k] / (2.0 * h);
        }
        if dirichlet {
            diag[0] = id.clone();
        } else {
            diag[0] = &id * (-2.0 / h2) + &a[0];
            upper[0] = &id * (2.0 / h2);
        }
        lower[last] = &id * (2.0 / h2);
        diag[last] = &id * (-2.0 / h2) + &a[last] + (&id * (2.0 / h) + &b[last]) * &close_f;
        let factor = BlockFactor::new(lower, diag, upper)?;
        Ok(Self {
            n: g.n,
            basis,
            radii: g.radii.clone(),
            h,
            a,
            b,
            close_f,
            close_g,
            dirichlet,
            factor,
            options: options.clone(),
        })
    }

    fn len(&self) -> usize {
        self.radii.len()
    }

    /// Right-hand side for inner datum `d` (value or `r0 V_r`) and closure weight `outer`.
    fn rhs(&self, d: &DVector<f64>, outer: f64) -> Vec<DVector<f64>> {
        let m = self.basis.modes.len();
        let len = self.len();
        let last = len - 1;
        let h = self.h;
        let id = DMatrix::<f64>::identity(m, m);
        let mut f = vec![DVector::zeros(m); len];
        f[0] = if self.dirichlet {
            d.clone()
        } else {
            (&id * (2.0 / h) - &self.b[0]) * d
        };
        f[last] = -((&id * (2.0 / h) + &self.b[last]) * &self.close_g) * outer;
        f
    }

    fn derivative_weights(&self, k: usize) -> (usize, Vec<Vec<f64>>) {
        let len = self.len();
        let (a, b) = stencil_window(k, len, STENCIL);
        let x: Vec<f64> = (a..b).map(|j| j as f64 * self.h).collect();
        (a, fornberg_weights(k as f64 * self.h, &x, 2))
    }

    /// Sixth-order derivatives `(V_s, V_ss)` at every station.
    fn derivatives(&self, v: &[DVector<f64>]) -> Vec<(DVector<f64>, DVector<f64>)> {
        let m = self.basis.modes.len();
        (0..self.len())
            .map(|k| {
                let (a, w) = self.derivative_weights(k);
                let mut d1 = DVector::zeros(m);
                let mut d2 = DVector::zeros(m);
                for j in 0..w[1].len() {
                    d1.axpy(w[1][j], &v[a + j], 1.0);
                    d2.axpy(w[2][j], &v[a + j], 1.0);
                }
                (d1, d2)
            })
            .collect()
    }

    /// High-order operator applied to `v`, closure constants excluded.
    fn apply_high(&self, v: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let len = self.len();
        let last = len - 1;
        let h = self.h;
        let der = self.derivatives(v);
        (0..len)
            .map(|k| {
                let (d1, d2) = &der[k];
                if k == 0 {
                    if self.dirichlet {
                        v[0].clone()
                    } else {
                        d2 + d1 * (2.0 / h) + &self.a[0] * &v[0]
                    }
                } else if k == last {
                    let e = &self.close_f * &v[last];
                    d2 - d1 * (2.0 / h) + &self.a[last] * &v[last] + e * (2.0 / h) + &self.b[last] * (&self.close_f * &v[last])
                } else {
                    d2 + &self.b[k] * d1 + &self.a[k] * &v[k]
                }
            })
            .collect()
    }

    fn precondition(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.basis.modes.len();
        let blocks: Vec<DVector<f64>> = (0..self.len()).map(|k| x.rows(k * m, m).into_owned()).collect();
        let lv = self.apply_high(&blocks);
        Ok(flatten(&self.factor.solve(&lv)?))
    }

    /// Second-order solve, then GMRES on the sixth-order system
    /// preconditioned by the second-order factorization.
    fn solve(&self, d: &DVector<f64>, outer: f64) -> Result<Vec<DVector<f64>>> {
        let f = self.rhs(d, outer);
        let v = self.factor.solve(&f)?;
        if !self.options.high_order {
            return Ok(v);
        }
        let b = flatten(&v);
        let x = gmres(
            |x| self.precondition(x),
            &b,
            b.clone(),
            self.options.max_corrections,
            self.options.correction_tolerance,
        )?;
        let m = self.basis.modes.len();
        Ok((0..self.len()).map(|k| x.rows(k * m, m).into_owned()).collect())
    }

    fn to_potential(&self, grid: &SphereGrid, v: &[DVector<f64>]) -> PotentialField {
        let der = self.derivatives(v);
        let len = self.len();
        let mut value = Vec::with_capacity(len);
        let mut value_r = Vec::with_capacity(len);
        let mut value_rr = Vec::with_capacity(len);
        for k in 0..len {
            let r = self.radii[k];
            let vs = &der[k].0;
            let vss = -(&self.b[k] * vs) - &self.a[k] * &v[k];
            value.push(self.basis.expand(grid, &v[k]));
            value_r.push(self.basis.expand(grid, &(vs / r)));
            value_rr.push(self.basis.expand(grid, &((vss - vs) / (r * r))));
        }
        PotentialField {
            n: self.n,
            lmax: grid.lmax(),
            radii: self.radii.clone(),
            value,
            value_r,
            value_rr: Some(value_rr),
            source: if self.dirichlet {
                PotentialSource::Dirichlet
            } else {
                PotentialSource::Neumann
            },
            outer_radius: *self.radii.last().unwrap(),
        }
    }
}

fn metric_axisymmetric(g: &QuasiSphericalMetric) -> bool {
    g.lapse.iter().all(|c| c.is_axisymmetric(AXISYMMETRY))
}

/// Solve `Δ_g V = 0` with the default options.
pub fn solve_potential(grid: &SphereGrid, g: &QuasiSphericalMetric, bc: &InnerBc) -> Result<PotentialField> {
    solve_potential_with(grid, g, bc, &SolveOptions::default())
}

/// Solve `Δ_g V = 0` with inner data `bc` and the chosen outer closure.
pub fn solve_potential_with(
    grid: &SphereGrid,
    g: &QuasiSphericalMetric,
    bc: &InnerBc,
    options: &SolveOptions,
) -> Result<PotentialField> {
    let (data, dirichlet) = match bc {
        InnerBc::Dirichlet(c) => (c, true),
        InnerBc::Neumann(c) => (c, false),
    };
    check_grid(grid, data.n, data.lmax)?;
    let axi = metric_axisymmetric(g) && data.is_axisymmetric(AXISYMMETRY);
    let problem = LaplaceProblem::new(grid, g, axi, dirichlet, options)?;
    let mut d = problem.basis.restrict(data);
    if !dirichlet {
        d *= g.radii[0];
    }
    let outer = if options.outer == OuterClosure::Decaying { 1.0 } else { 0.0 };
    let v = problem.solve(&d, outer)?;
    Ok(problem.to_potential(grid, &v))
}

// ---------------------------------------------------------------------------
// Radial-equation potential

/// Controls for [`solve_potential_radial`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialOptions {
    /// Integration starts at `far_factor * r_K`.
    pub far_factor: f64,
    /// Largest step in `s`.
    pub max_step: f64,
}

impl Default for RadialOptions {
    fn default() -> Self {
        Self {
            far_factor: 1e3,
            max_step: 1e-2,
        }
    }
}

/// Decay exponent `n - 2 + l(l+n-2)/(n-1)` of the linearized lapse mode `l`.
pub fn lapse_decay_exponent(n: usize, l: usize) -> f64 {
    let nf = n as f64;
    nf - 2.0 + eigenvalue(n, l) / (nf - 1.0)
}

/// Leading ratio `V_l / (u_l - δ_{l0})` of the bounded radial-equation potential.
pub fn potential_lapse_ratio(n: usize, l: usize) -> f64 {
    let nf = n as f64;
    let p = lapse_decay_exponent(n, l);
    -(nf - 1.0) * (nf - 2.0) / (p * (p + 1.0))
}

/// Bounded solution of the `rr`-component of the static equations,
/// integrated inward as a mode-coupled system from `far_factor * r_K`.
///
/// Between stations the lapse is cubic-Hermite interpolated in `s`; beyond
/// `r_K` each lapse mode is continued with its decay exponent.
pub fn solve_potential_radial(
    grid: &SphereGrid,
    g: &QuasiSphericalMetric,
    options: &RadialOptions,
) -> Result<PotentialField> {
    g.validate(grid)?;
    if g.len() < 2 {
        return Err(Error::TooFewStations { needed: 2, got: g.len() });
    }
    if !(options.far_factor >= 1.0 && options.max_step > 0.0) {
        return Err(Error::InvalidParameter("far_factor >= 1 and max_step > 0 required".into()));
    }
    let n = g.n;
    let k = k_const(n);
    let one = grid.constant_coeffs(1.0);
    let ur = g.lapse_r()?;
    let w: Vec<ModeCoeffs> = g.lapse.iter().map(|c| c.sub(&one)).collect();
    let ws: Vec<ModeCoeffs> = ur.iter().zip(&g.radii).map(|(c, r)| c.scaled(*r)).collect();
    let s: Vec<f64> = g.radii.iter().map(|r| r.ln()).collect();
    let last = g.len() - 1;
    let decay: Vec<f64> = (0..grid.mode_count())
        .map(|i| lapse_decay_exponent(n, degree_of(n, i)))
        .collect();

    let lapse_at = |sv: f64, seg: Option<usize>| -> (ModeCoeffs, ModeCoeffs) {
        match seg {
            None => {
                let mut a = w[last].clone();
                let mut b = w[last].clone();
                for i in 0..a.data.len() {
                    let e = (-decay[i] * (sv - s[last])).exp();
                    a.data[i] *= e;
                    b.data[i] *= -decay[i] * e;
                }
                (a, b)
            }
            Some(j) => {
                let mut a = w[j].clone();
                let mut b = w[j].clone();
                for i in 0..a.data.len() {
                    let args = (sv, s[j], s[j + 1], w[j].data[i], w[j + 1].data[i], ws[j].data[i], ws[j + 1].data[i]);
                    a.data[i] = hermite(args.0, args.1, args.2, args.3, args.4, args.5, args.6);
                    b.data[i] = hermite_derivative(args.0, args.1, args.2, args.3, args.4, args.5, args.6);
                }
                (a, b)
            }
        }
    };

    // State (y, z) = (V - 1, V_s); returns z_s.
    let rhs = |wc: &ModeCoeffs, wsc: &ModeCoeffs, y: &ModeCoeffs, z: &ModeCoeffs| -> ModeCoeffs {
        let wv = grid.synth(wc);
        let wsv = grid.synth(wsc);
        let gu = grid.gradient(wc);
        let gy = grid.gradient(y);
        let yv = grid.synth(y);
        let zv = grid.synth(z);
        let gg = gu.dot(&gy);
        let vals: Vec<f64> = (0..wv.len())
            .map(|i| {
                let u = 1.0 + wv[i];
                (1.0 + wsv[i] / u) * zv[i] - u * gg[i] - k * wv[i] * (2.0 + wv[i]) * (1.0 + yv[i])
            })
            .collect();
        grid.analyze_values(&vals)
    };

    let s_far = s[last] + options.far_factor.ln();
    let (w_far, _) = lapse_at(s_far, None);
    let mut y = w_far.clone();
    let mut z = w_far.clone();
    for i in 0..y.data.len() {
        let l = degree_of(n, i);
        y.data[i] = potential_lapse_ratio(n, l) * w_far.data[i];
        z.data[i] = -decay[i] * y.data[i];
    }

    let step = |y: &mut ModeCoeffs, z: &mut ModeCoeffs, sa: f64, sb: f64, seg: Option<usize>| {
        let count = ((sa - sb).abs() / options.max_step).ceil().max(1.0) as usize;
        let h = (sb - sa) / count as f64;
        for c in 0..count {
            let s1 = sa + h * c as f64;
            let (w1, ws1) = lapse_at(s1, seg);
            let (w2, ws2) = lapse_at(s1 + 0.5 * h, seg);
            let (w3, ws3) = lapse_at(s1 + h, seg);
            let k1y = z.clone();
            let k1z = rhs(&w1, &ws1, y, z);
            let mut y2 = y.clone();
            y2.axpy(0.5 * h, &k1y);
            let mut z2 = z.clone();
            z2.axpy(0.5 * h, &k1z);
            let k2y = z2.clone();
            let k2z = rhs(&w2, &ws2, &y2, &z2);
            let mut y3 = y.clone();
            y3.axpy(0.5 * h, &k2y);
            let mut z3 = z.clone();
            z3.axpy(0.5 * h, &k2z);
            let k3y = z3.clone();
            let k3z = rhs(&w2, &ws2, &y3, &z3);
            let mut y4 = y.clone();
            y4.axpy(h, &k3y);
            let mut z4 = z.clone();
            z4.axpy(h, &k3z);
            let k4y = z4.clone();
            let k4z = rhs(&w3, &ws3, &y4, &z4);
            for i in 0..y.data.len() {
                y.data[i] += h / 6.0 * (k1y.data[i] + 2.0 * k2y.data[i] + 2.0 * k3y.data[i] + k4y.data[i]);
                z.data[i] += h / 6.0 * (k1z.data[i] + 2.0 * k2z.data[i] + 2.0 * k3z.data[i] + k4z.data[i]);
            }
        }
    };

    step(&mut y, &mut z, s_far, s[last], None);
    let len = g.len();
    let mut ys = vec![ModeCoeffs::zeros(n, g.lmax); len];
    let mut zs = vec![ModeCoeffs::zeros(n, g.lmax); len];
    ys[last] = y.clone();
    zs[last] = z.clone();
    for j in (0..last).rev() {
        step(&mut y, &mut z, s[j + 1], s[j], Some(j));
        ys[j] = y.clone();
        zs[j] = z.clone();
    }

    let mut value = Vec::with_capacity(len);
    let mut value_r = Vec::with_capacity(len);
    let mut value_rr = Vec::with_capacity(len);
    for j in 0..len {
        let r = g.radii[j];
        let zz = rhs(&w[j], &ws[j], &ys[j], &zs[j]);
        let mut v = ys[j].clone();
        v.axpy(1.0, &one);
        value.push(v);
        value_r.push(zs[j].scaled(1.0 / r));
        value_rr.push(zz.sub(&zs[j]).scaled(1.0 / (r * r)));
    }
    Ok(PotentialField {
        n,
        lmax: g.lmax,
        radii: g.radii.clone(),
        value,
        value_r,
        value_rr: Some(value_rr),
        source: PotentialSource::RadialEquation,
        outer_radius: s_far.exp(),
    })
}

// ---------------------------------------------------------------------------
// Rigidity probe

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidityOptions {
    pub solve: SolveOptions,
    /// Stations with `r_min <= r <= r_max` enter the defect.
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for RigidityOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            r_min: 0.0,
            r_max: f64::INFINITY,
        }
    }
}

/// Smallest static defect reachable by varying the inner Dirichlet data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidityReport {
    /// Root mean square over `s` of the scale-free residual norm
    /// `‖(r^2 L, r^2 RR, r RA, AB)‖_{L^2(S^{n-1})}` at the optimum.
    pub defect: f64,
    /// Largest component `L^2` norm at the optimum over the audit window.
    pub aggregate: f64,
    /// Optimal inner Dirichlet data.
    pub data: ModeCoeffs,
    /// Number of free coefficients.
    pub unknowns: usize,
    /// Componentwise maxima at the optimum.
    pub components: ComponentNorms,
}

/// Best static potential for inner Dirichlet data, and its defect.
pub fn rigidity_probe(
    grid: &SphereGrid,
    g: &QuasiSphericalMetric,
    options: &RigidityOptions,
) -> Result<(RigidityReport, PotentialField)> {
    let mut solve = options.solve.clone();
    solve.outer = OuterClosure::Decaying;
    let problem = LaplaceProblem::new(grid, g, metric_axisymmetric(g), true, &solve)?;
    let m = problem.basis.modes.len();
    let s: Vec<f64> = g.radii.iter().map(|r| r.ln()).collect();
    let window: Vec<usize> = (0..g.len())
        .filter(|&k| g.radii[k] >= options.r_min && g.radii[k] <= options.r_max)
        .collect();
    if window.len() < 2 {
        return Err(Error::TooFewStations {
            needed: 2,
            got: window.len(),
        });
    }
    // Trapezoid weights in s over the window.
    let mut quad = vec![0.0; window.len()];
    for j in 0..window.len() - 1 {
        let d = s[window[j + 1]] - s[window[j]];
        quad[j] += 0.5 * d;
        quad[j + 1] += 0.5 * d;
    }
    let span = s[*window.last().unwrap()] - s[window[0]];

    let ur = g.lapse_r()?;
    let station_vector = |k: usize, v: &PotentialField| -> Vec<f64> {
        let st = station_residual(grid, g.radii[k], &g.lapse[k], &ur[k], &v.value[k], &v.value_r[k], &v.value_rr.as_ref().unwrap()[k]);
        residual_vector(grid, &st)
    };

    let zero = DVector::zeros(m);
    let base = problem.to_potential(grid, &problem.solve(&zero, 1.0)?);
    let mut basis = Vec::with_capacity(m);
    for j in 0..m {
        let mut e = DVector::zeros(m);
        e[j] = 1.0;
        basis.push(problem.to_potential(grid, &problem.solve(&e, 1.0)?));
    }
    // Normal equations accumulated station by station.
    let mut normal = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for (&k, q) in window.iter().zip(&quad) {
        let rb = station_vector(k, &base);
        let cols: Vec<Vec<f64>> = basis
            .iter()
            .map(|vj| station_vector(k, vj).iter().zip(&rb).map(|(x, y)| x - y).collect())
            .collect();
        for i in 0..m {
            for j in 0..=i {
                let v = q * cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum::<f64>();
                normal[(i, j)] += v;
                if i != j {
                    normal[(j, i)] += v;
                }
            }
            rhs[i] -= q * cols[i].iter().zip(&rb).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let scale = normal.diagonal().amax().max(1e-300);
    let svd = normal.svd(true, true);
    let coef = svd
        .solve(&rhs, 1e-14 * scale)
        .map_err(|_| Error::SingularSystem(0))?;
    let best = problem.to_potential(grid, &problem.solve(&coef, 1.0)?);
    let energy: f64 = window
        .iter()
        .zip(&quad)
        .map(|(&k, q)| q * station_vector(k, &best).iter().map(|x| x * x).sum::<f64>())
        .sum();
    let defect = if span > 0.0 {
        (energy.max(0.0) / span).sqrt()
    } else {
        0.0
    };
    let res = static_residual(grid, g, &best)?;
    let r_lo = g.radii[window[0]];
    let r_hi = g.radii[*window.last().unwrap()];
    let mut components = ComponentNorms::default();
    for st in res.stations.iter().filter(|st| st.r >= r_lo && st.r <= r_hi) {
        let c = st.norms;
        components.laplace = components.laplace.max(c.laplace);
        components.ra = components.ra.max(c.ra);
        components.ab_trace = components.ab_trace.max(c.ab_trace);
        components.ab_traceless = components.ab_traceless.max(c.ab_traceless);
        components.rr = components.rr.max(c.rr);
        components.identity_defect = components.identity_defect.max(c.identity_defect);
    }
    components.r = f64::NAN;
    let report = RigidityReport {
        defect,
        aggregate: res.score(r_lo, r_hi),
        data: problem.basis.expand(grid, &coef),
        unknowns: m,
        components,
    };
    Ok((report, best))
}

// ---------------------------------------------------------------------------
// Potential expansion

/// Potential expansion together with the lapse expansion and relation gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialExpansion {
    pub potential: ExpansionReport,
    pub lapse: ExpansionReport,
    /// `V̇` against `-((n-2)/n) u̇`; `relative_to_dot` is relative to `‖u̇‖`.
    pub dot_gap: Option<RelationGap>,
    /// `n = 3`: `V̂_{l=2}` against `-û_{l=2}/10`; `n >= 4`: `V̂` against
    /// `-(n-1)(n-2)/((p+1)p) û` with `p = n + 2/(n-1)`.
    pub hat_gap: Option<RelationGap>,
    /// `n >= 4`: `V⃛` against `-(n-2)/(2(2n-1)) u⃛ - (n-2)(n+1)/(4(n-1)(2n-1)) (u̇^2)_{l=2}`.
    pub tdot_gap: Option<RelationGap>,
}

/// Coefficient of `û` in the `n >= 4` relation for `V̂`.
pub fn hat_ratio(n: usize) -> f64 {
    if n == 3 {
        return -0.1;
    }
    let nf = n as f64;
    let p = nf + 2.0 / (nf - 1.0);
    -(nf - 1.0) * (nf - 2.0) / ((p + 1.0) * p)
}

/// Coefficients `(α, β)` of `V⃛ = α u⃛ + β (u̇^2)_{l=2}` for `n >= 4`.
pub fn tdot_coefficients(n: usize) -> (f64, f64) {
    let nf = n as f64;
    (
        -(nf - 2.0) / (2.0 * (2.0 * nf - 1.0)),
        -(nf - 2.0) * (nf + 1.0) / (4.0 * (nf - 1.0) * (2.0 * nf - 1.0)),
    )
}

/// Fit `V` and `u` over `window` and compare the coefficient relations.
pub fn potential_expansion(
    grid: &SphereGrid,
    g: &QuasiSphericalMetric,
    v: &PotentialField,
    window: &FitWindow,
) -> Result<PotentialExpansion> {
    check_pair(grid, g, v)?;
    let lapse = asymptotics::fit_lapse_expansion(grid, g, window)?;
    let potential = asymptotics::fit_expansion(grid, &v.radii, &v.value, window, ExpandedField::Potential)?;
    let n = g.n;
    let nf = n as f64;
    let dot_gap = match (&potential.dot, &lapse.dot) {
        (Some(vd), Some(ud)) => Some(asymptotics::gap(vd.clone(), ud.scaled(-(nf - 2.0) / nf), ud.norm())),
        _ => None,
    };
    let dot_sq = lapse.dot.as_ref().map(|d| {
        let nn = d.norm();
        (asymptotics::dot_square_l2(grid, d), nn * nn)
    });
    let l2 = Selector::Eq(2);
    let hat_gap = match (&potential.hat, &lapse.hat, &dot_sq) {
        (Some(vh), Some(uh), Some((_, scale))) => Some(asymptotics::gap(
            vh.project(l2),
            uh.project(l2).scaled(hat_ratio(n)),
            *scale,
        )),
        _ => None,
    };
    let tdot_gap = if n >= 4 {
        match (&potential.tdot, &lapse.tdot, &dot_sq) {
            (Some(vt), Some(ut), Some((sq, scale))) => {
                let (alpha, beta) = tdot_coefficients(n);
                let mut pred = ut.project(l2).scaled(alpha);
                pred.axpy(beta, sq);
                Some(asymptotics::gap(vt.project(l2), pred, *scale))
            }
            _ => None,
        }
    } else {
        None
    };
    Ok(PotentialExpansion {
        potential,
        lapse,
        dot_gap,
        hat_gap,
        tdot_gap,
    })
}

// ---------------------------------------------------------------------------
// Defect decomposition

/// Auxiliary fields of the first-order equation for the non-radial lapse at one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectStation {
    pub r: f64,
    /// `u - mean(u)`.
    pub u_check: ModeCoeffs,
    /// `V - mean(V)`.
    pub v_check: ModeCoeffs,
    pub f: ModeCoeffs,
    pub g: ModeCoeffs,
    pub i: ModeCoeffs,
    /// `mean(r u^{-2} V_r)`.
    pub a: f64,
    /// `r ŭ_r + (n-1) ŭ - (F + G/(n-2) + I)`.
    pub ode_residual: ModeCoeffs,
    /// `‖X_F - ∇F‖ / ‖X_F‖`.
    pub f_remainder: f64,
    /// `‖X_G - ∇G‖ / ‖X_G‖`.
    pub g_remainder: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectDecomposition {
    pub stations: Vec<DefectStation>,
}

impl DefectDecomposition {
    /// `(r, ‖ode_residual‖, ‖ŭ‖)` per station.
    pub fn profile(&self) -> Vec<(f64, f64, f64)> {
        self.stations
            .iter()
            .map(|s| (s.r, s.ode_residual.norm(), s.u_check.norm()))
            .collect()
    }
}

fn zero_mean(c: &ModeCoeffs) -> ModeCoeffs {
    let mut out = c.clone();
    out.data[0] = 0.0;
    out
}

fn remainder(grid: &SphereGrid, x: &VectorField, pot: &ModeCoeffs) -> f64 {
    let d = x.sub(&grid.gradient(pot));
    let num = grid.integrate_values(&d.norm_sq()).max(0.0).sqrt();
    let den = grid.integrate_values(&x.norm_sq()).max(0.0).sqrt();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Decompose `(g, V)` with the default integrability tolerance.
pub fn defect_decomposition(grid: &SphereGrid, g: &QuasiSphericalMetric, v: &PotentialField) -> Result<DefectDecomposition> {
    defect_decomposition_with(grid, g, v, tolerances::INTEGRABILITY)
}

pub fn defect_decomposition_with(
    grid: &SphereGrid,
    g: &QuasiSphericalMetric,
    v: &PotentialField,
    integrability: f64,
) -> Result<DefectDecomposition> {
    check_pair(grid, g, v)?;
    let n = g.n;
    let nf = n as f64;
    let ur = g.lapse_r()?;
    let mut stations = Vec::with_capacity(g.len());
    for k in 0..g.len() {
        let r = g.radii[k];
        let u_c = &g.lapse[k];
        let v_c = &v.value[k];
        let u = grid.synth(u_c);
        let vv = grid.synth(v_c);
        let vr = grid.synth(&v.value_r[k]);
        let urv = grid.synth(&ur[k]);
        let lap_u = grid.synth(&u_c.laplace_beltrami());
        let u_check = zero_mean(u_c);
        let v_check = zero_mean(v_c);
        let uc = grid.synth(&u_check);
        let gu = grid.gradient(u_c);
        let gv = grid.gradient(v_c);
        let np = u.len();

        let cu: Vec<f64> = (0..np)
            .map(|i| {
                let u3 = u[i] * u[i] * u[i];
                -r * vr[i] / u3 + (nf - 2.0) * (vv[i] / u3 - 1.0)
            })
            .collect();
        let cv: Vec<f64> = u.iter().map(|u| 1.0 / (u * u) - 1.0).collect();
        let xf = gu.scale_by(&cu).add(&gv.scale_by(&cv));
        let f = grid.gradient_potential(&xf);
        let f_remainder = remainder(grid, &xf, &f);

        let phi: Vec<f64> = (0..np).map(|i| 1.0 - vv[i] / u[i]).collect();
        let gphi = grid.gradient(&grid.analyze_values(&phi));
        let hess = grid.hessian(u_c);
        let glap = grid.gradient(&u_c.laplace_beltrami());
        let xg = hess
            .apply(&gphi)
            .add(&glap.add(&gu.scale_by(&vec![nf - 2.0; np])).scale_by(&phi));
        let gg = grid.gradient_potential(&xg);
        let g_remainder = remainder(grid, &xg, &gg);

        if f_remainder > integrability || g_remainder > integrability {
            return Err(Error::NotIntegrable {
                remainder: f_remainder.max(g_remainder),
                tolerance: integrability,
            });
        }

        let ivals: Vec<f64> = (0..np)
            .map(|i| {
                let (u, v) = (u[i], vv[i]);
                let u3 = u * u * u;
                (v / u3 - 1.0) * r * urv[i] / (nf - 2.0)
                    + (u * u - 1.0) * lap_u[i] / (nf - 2.0)
                    + 0.5 * (nf - 1.0) * (u - u3 + 2.0 * uc[i])
            })
            .collect();
        let i_c = zero_mean(&grid.analyze_values(&ivals));
        let avals: Vec<f64> = (0..np).map(|i| r * vr[i] / (u[i] * u[i])).collect();
        let a = grid.integrate_values(&avals) / grid.area();

        let mut ode = zero_mean(&ur[k].scaled(r));
        ode.axpy(nf - 1.0, &u_check);
        ode.axpy(-1.0, &f);
        ode.axpy(-1.0 / (nf - 2.0), &gg);
        ode.axpy(-1.0, &i_c);
        stations.push(DefectStation {
            r,
            u_check,
            v_check,
            f,
            g: gg,
            i: i_c,
            a,
            ode_residual: ode,
            f_remainder,
            g_remainder,
        });
    }
    Ok(DefectDecomposition { stations })
}

/// `V = r X^n` on `radii`, the coordinate-function potential of flat space.
pub fn coordinate_potential(grid: &SphereGrid, radii: &[f64]) -> Result<PotentialField> {
    let x = grid.analyze_bandlimited(&grid.cos_theta_field())?;
    let zero = ModeCoeffs::zeros(grid.n(), grid.lmax());
    Ok(PotentialField {
        n: grid.n(),
        lmax: grid.lmax(),
        radii: radii.to_vec(),
        value: radii.iter().map(|r| x.scaled(*r)).collect(),
        value_r: radii.iter().map(|_| x.clone()).collect(),
        value_rr: Some(radii.iter().map(|_| zero.clone()).collect()),
        source: PotentialSource::ClosedForm,
        outer_radius: *radii.last().unwrap_or(&0.0),
    })
}
