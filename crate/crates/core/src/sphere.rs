//! Spectral calculus on the unit sphere `S^{n-1}`.
//!
//! For `n = 3` fields live on a Gauss–Legendre (in `cos θ`) × uniform
//! longitude grid and are expanded in real orthonormal spherical harmonics.
//! For `4 <= n <= 8` fields are axisymmetric (functions of the polar angle
//! only) and are expanded in orthonormal Gegenbauer polynomials
//! `C_l^{(n/2-1)}(cos θ)`; the quadrature is Gauss–Jacobi for the weight
//! `sin^{n-2} θ`, scaled by the area of `S^{n-2}`.
//!
//! Every basis function is orthonormal for the unit-sphere measure, so
//! coefficient norms are `L^2(S^{n-1})` norms.
//!
//! Mode layout: for `n = 3` the coefficient of degree `l`, order `m`
//! (`-l <= m <= l`) sits at `l^2 + l + m`; `m > 0` pairs with `cos(mφ)` and
//! `m < 0` with `sin(|m|φ)`. For `n >= 4` the coefficient of degree `l` sits
//! at index `l`.
//!
//! Tensors and vectors are stored in the orthonormal frame
//! `(e_θ, e_φ / sin θ)`. For `n >= 4` the `φ̂` slot of a symmetric tensor
//! holds the common diagonal value on the `n - 2` directions tangent to the
//! orbit spheres; axisymmetric gradients have no component there.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{unit_sphere_area, SymmetricJacobi};
use crate::tolerances::BANDLIMIT_RELATIVE;

/// Smallest supported ambient dimension.
pub const MIN_DIMENSION: usize = 3;
/// Largest supported ambient dimension.
pub const MAX_DIMENSION: usize = 8;
/// Smallest accepted mode cutoff.
pub const MIN_LMAX: usize = 4;

/// Spectral coefficients of a function on `S^{n-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCoeffs {
    pub n: usize,
    pub lmax: usize,
    pub data: Vec<f64>,
}

/// Values of a function at the quadrature nodes of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularField {
    pub n: usize,
    pub lmax: usize,
    pub values: Vec<f64>,
}

/// Tangent vector field in the orthonormal frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub n: usize,
    pub lmax: usize,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Symmetric 2-tensor field in the orthonormal frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub n: usize,
    pub lmax: usize,
    pub tt: Vec<f64>,
    pub tp: Vec<f64>,
    pub pp: Vec<f64>,
}

/// Mode sets accepted by [`ModeCoeffs::project`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selector {
    Eq(usize),
    Le(usize),
    Ge(usize),
}

impl Selector {
    pub fn contains(&self, l: usize) -> bool {
        match *self {
            Selector::Eq(k) => l == k,
            Selector::Le(k) => l <= k,
            Selector::Ge(k) => l >= k,
        }
    }
}

/// Number of coefficients for a given dimension and cutoff.
pub fn mode_count(n: usize, lmax: usize) -> usize {
    if n == 3 {
        (lmax + 1) * (lmax + 1)
    } else {
        lmax + 1
    }
}

/// Degree `l` of the coefficient stored at `idx`.
pub fn degree_of(n: usize, idx: usize) -> usize {
    if n == 3 {
        (idx as f64).sqrt().floor() as usize
    } else {
        idx
    }
}

/// Eigenvalue magnitude `l (l + n - 2)` of the sphere Laplacian.
pub fn eigenvalue(n: usize, l: usize) -> f64 {
    (l * (l + n - 2)) as f64
}

impl ModeCoeffs {
    pub fn zeros(n: usize, lmax: usize) -> Self {
        Self {
            n,
            lmax,
            data: vec![0.0; mode_count(n, lmax)],
        }
    }

    /// Coefficient index of degree `l` and order `m` (`m = 0` for `n >= 4`).
    pub fn index(&self, l: usize, m: i64) -> usize {
        mode_index(self.n, l, m)
    }

    pub fn degree(&self, idx: usize) -> usize {
        degree_of(self.n, idx)
    }

    /// Multiply the degree-`l` block by `-l (l + n - 2)`.
    pub fn laplace_beltrami(&self) -> ModeCoeffs {
        let mut out = self.clone();
        for (i, c) in out.data.iter_mut().enumerate() {
            *c *= -eigenvalue(self.n, degree_of(self.n, i));
        }
        out
    }

    /// Zero every coefficient outside `selector`.
    pub fn project(&self, selector: Selector) -> ModeCoeffs {
        let mut out = self.clone();
        for (i, c) in out.data.iter_mut().enumerate() {
            if !selector.contains(degree_of(self.n, i)) {
                *c = 0.0;
            }
        }
        out
    }

    /// Coefficients of degree `l` as a slice.
    pub fn block(&self, l: usize) -> &[f64] {
        let (a, b) = block_range(self.n, l);
        &self.data[a..b]
    }

    pub fn block_mut(&mut self, l: usize) -> &mut [f64] {
        let (a, b) = block_range(self.n, l);
        &mut self.data[a..b]
    }

    /// Euclidean coefficient norm, equal to the `L^2` norm of the field.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, a: f64) -> ModeCoeffs {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|c| *c *= a);
        out
    }

    pub fn axpy(&mut self, a: f64, other: &ModeCoeffs) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn sub(&self, other: &ModeCoeffs) -> ModeCoeffs {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Spherical mean, i.e. the degree-0 coefficient divided by `sqrt(|S^{n-1}|)`.
    pub fn mean(&self) -> f64 {
        self.data[0] / unit_sphere_area(self.n - 1).sqrt()
    }

    /// Azimuthal derivative `∂_φ` (zero for `n >= 4`).
    pub fn dphi(&self) -> ModeCoeffs {
        let mut out = ModeCoeffs::zeros(self.n, self.lmax);
        if self.n != 3 {
            return out;
        }
        for l in 0..=self.lmax {
            for m in 1..=l as i64 {
                let ip = mode_index(3, l, m);
                let im = mode_index(3, l, -m);
                let mf = m as f64;
                out.data[ip] = mf * self.data[im];
                out.data[im] = -mf * self.data[ip];
            }
        }
        out
    }

    /// Same coefficients re-indexed for a different cutoff (truncating or
    /// zero-padding).
    pub fn with_lmax(&self, lmax: usize) -> ModeCoeffs {
        let mut out = ModeCoeffs::zeros(self.n, lmax);
        for l in 0..=lmax.min(self.lmax) {
            out.block_mut(l).copy_from_slice(self.block(l));
        }
        out
    }

    /// True when every coefficient of nonzero azimuthal order is below `tol`.
    pub fn is_axisymmetric(&self, tol: f64) -> bool {
        if self.n != 3 {
            return true;
        }
        (0..self.data.len()).all(|i| {
            let l = degree_of(3, i);
            let m = i as i64 - (l * l + l) as i64;
            m == 0 || self.data[i].abs() <= tol
        })
    }
}

fn block_range(n: usize, l: usize) -> (usize, usize) {
    if n == 3 {
        (l * l, (l + 1) * (l + 1))
    } else {
        (l, l + 1)
    }
}

/// Coefficient index of degree `l`, order `m`.
pub fn mode_index(n: usize, l: usize, m: i64) -> usize {
    if n == 3 {
        assert!(m.unsigned_abs() as usize <= l, "order exceeds degree");
        ((l * l + l) as i64 + m) as usize
    } else {
        assert_eq!(m, 0, "only axisymmetric modes exist for n >= 4");
        l
    }
}

impl AngularField {
    pub fn constant(grid: &SphereGrid, value: f64) -> Self {
        Self {
            n: grid.n,
            lmax: grid.lmax,
            values: vec![value; grid.node_count()],
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> AngularField {
        AngularField {
            n: self.n,
            lmax: self.lmax,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &AngularField, f: impl Fn(f64, f64) -> f64) -> AngularField {
        AngularField {
            n: self.n,
            lmax: self.lmax,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

impl VectorField {
    /// Pointwise inner product with another vector field.
    pub fn dot(&self, other: &VectorField) -> Vec<f64> {
        self.theta
            .iter()
            .zip(&self.phi)
            .zip(other.theta.iter().zip(&other.phi))
            .map(|((a, b), (c, d))| a * c + b * d)
            .collect()
    }

    /// Pointwise squared length.
    pub fn norm_sq(&self) -> Vec<f64> {
        self.dot(self)
    }

    /// Multiply both components pointwise by `s`.
    pub fn scale_by(&self, s: &[f64]) -> VectorField {
        VectorField {
            n: self.n,
            lmax: self.lmax,
            theta: self.theta.iter().zip(s).map(|(a, b)| a * b).collect(),
            phi: self.phi.iter().zip(s).map(|(a, b)| a * b).collect(),
        }
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField {
            n: self.n,
            lmax: self.lmax,
            theta: self.theta.iter().zip(&other.theta).map(|(a, b)| a + b).collect(),
            phi: self.phi.iter().zip(&other.phi).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField {
            n: self.n,
            lmax: self.lmax,
            theta: self.theta.iter().zip(&other.theta).map(|(a, b)| a - b).collect(),
            phi: self.phi.iter().zip(&other.phi).map(|(a, b)| a - b).collect(),
        }
    }
}

impl TensorField {
    /// Pointwise trace `σ^{ab} T_ab`.
    pub fn trace(&self) -> Vec<f64> {
        let mult = (self.n - 2) as f64;
        self.tt
            .iter()
            .zip(&self.pp)
            .map(|(a, b)| a + mult * b)
            .collect()
    }

    /// Traceless part `T - (tr T / (n-1)) σ`.
    pub fn traceless(&self) -> TensorField {
        let tr = self.trace();
        let d = (self.n - 1) as f64;
        TensorField {
            n: self.n,
            lmax: self.lmax,
            tt: self.tt.iter().zip(&tr).map(|(a, t)| a - t / d).collect(),
            tp: self.tp.clone(),
            pp: self.pp.iter().zip(&tr).map(|(a, t)| a - t / d).collect(),
        }
    }

    /// Pointwise squared norm `T_ab T^ab`.
    pub fn norm_sq(&self) -> Vec<f64> {
        let mult = (self.n - 2) as f64;
        (0..self.tt.len())
            .map(|k| self.tt[k].powi(2) + 2.0 * self.tp[k].powi(2) + mult * self.pp[k].powi(2))
            .collect()
    }

    /// `self + a * σ` with `a` given pointwise.
    pub fn add_metric(&self, a: &[f64]) -> TensorField {
        TensorField {
            n: self.n,
            lmax: self.lmax,
            tt: self.tt.iter().zip(a).map(|(x, y)| x + y).collect(),
            tp: self.tp.clone(),
            pp: self.pp.iter().zip(a).map(|(x, y)| x + y).collect(),
        }
    }

    /// Pointwise product with a scalar field.
    pub fn scale_by(&self, s: &[f64]) -> TensorField {
        let m = |v: &Vec<f64>| v.iter().zip(s).map(|(a, b)| a * b).collect();
        TensorField {
            n: self.n,
            lmax: self.lmax,
            tt: m(&self.tt),
            tp: m(&self.tp),
            pp: m(&self.pp),
        }
    }

    pub fn add(&self, other: &TensorField) -> TensorField {
        let d = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| x + y).collect();
        TensorField {
            n: self.n,
            lmax: self.lmax,
            tt: d(&self.tt, &other.tt),
            tp: d(&self.tp, &other.tp),
            pp: d(&self.pp, &other.pp),
        }
    }

    pub fn sub(&self, other: &TensorField) -> TensorField {
        let d = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| x - y).collect();
        TensorField {
            n: self.n,
            lmax: self.lmax,
            tt: d(&self.tt, &other.tt),
            tp: d(&self.tp, &other.tp),
            pp: d(&self.pp, &other.pp),
        }
    }

    /// Contraction `T_ab v^b`.
    pub fn apply(&self, v: &VectorField) -> VectorField {
        let k = self.tt.len();
        VectorField {
            n: self.n,
            lmax: self.lmax,
            theta: (0..k).map(|i| self.tt[i] * v.theta[i] + self.tp[i] * v.phi[i]).collect(),
            phi: (0..k).map(|i| self.tp[i] * v.theta[i] + self.pp[i] * v.phi[i]).collect(),
        }
    }
}

/// Quadrature grid and basis tables for `S^{n-1}`.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    n: usize,
    lmax: usize,
    n_theta: usize,
    n_phi: usize,
    cos_theta: Vec<f64>,
    sin_theta: Vec<f64>,
    w_theta: Vec<f64>,
    w_phi: f64,
    phi: Vec<f64>,
    /// Azimuthal basis values `trig[a][j]`; `a = 0` is the constant,
    /// `a = 2m-1` is `cos(mφ)`, `a = 2m` is `sin(mφ)`.
    trig: Vec<Vec<f64>>,
    /// Polar basis `leg[m][l-m][i]` and its θ-derivative.
    leg: Vec<Vec<Vec<f64>>>,
    dleg: Vec<Vec<Vec<f64>>>,
    weights: Vec<f64>,
}

/// Build the quadrature grid for `S^{n-1}` with mode cutoff `lmax`.
pub fn make_grid(n: usize, lmax: usize) -> Result<SphereGrid> {
    SphereGrid::new(n, lmax)
}

impl SphereGrid {
    pub fn new(n: usize, lmax: usize) -> Result<Self> {
        if !(MIN_DIMENSION..=MAX_DIMENSION).contains(&n) {
            return Err(Error::UnsupportedDimension(n));
        }
        if lmax < MIN_LMAX {
            return Err(Error::LmaxTooSmall(lmax));
        }
        // Exact projection of quartic products of bandlimited fields.
        let n_theta = 2 * lmax + 2;
        let (alpha, n_phi, w_phi) = if n == 3 {
            let n_phi = 4 * lmax + 2;
            (0.0, n_phi, 2.0 * std::f64::consts::PI / n_phi as f64)
        } else {
            ((n as f64 - 3.0) / 2.0, 1, unit_sphere_area(n - 2))
        };
        let (x, w_theta) = SymmetricJacobi::new(alpha).gauss(n_theta);
        let sin_theta: Vec<f64> = x.iter().map(|x: &f64| (1.0 - x * x).sqrt()).collect();

        let phi: Vec<f64> = (0..n_phi)
            .map(|j| 2.0 * std::f64::consts::PI * j as f64 / n_phi as f64)
            .collect();
        let n_az = if n == 3 { 2 * lmax + 1 } else { 1 };
        let mut trig = vec![vec![0.0; n_phi]; n_az];
        let c0 = 1.0 / (w_phi * n_phi as f64).sqrt();
        let cm = 1.0 / std::f64::consts::PI.sqrt();
        for j in 0..n_phi {
            trig[0][j] = c0;
            for m in 1..=(n_az - 1) / 2 {
                let a = m as f64 * phi[j];
                trig[2 * m - 1][j] = cm * a.cos();
                trig[2 * m][j] = cm * a.sin();
            }
        }

        let m_max = if n == 3 { lmax } else { 0 };
        let mut leg = Vec::with_capacity(m_max + 1);
        let mut dleg = Vec::with_capacity(m_max + 1);
        for m in 0..=m_max {
            let rec = if n == 3 {
                SymmetricJacobi::new(m as f64)
            } else {
                SymmetricJacobi::new(alpha)
            };
            let deg = lmax - m;
            let mut p_tab = vec![vec![0.0; n_theta]; deg + 1];
            let mut d_tab = vec![vec![0.0; n_theta]; deg + 1];
            for i in 0..n_theta {
                let (q, dq) = rec.values_and_derivatives(x[i], deg);
                let s = sin_theta[i];
                let sm = s.powi(m as i32);
                for k in 0..=deg {
                    p_tab[k][i] = sm * q[k];
                    // d/dθ [sin^m θ q(cos θ)]
                    let lead = if m == 0 {
                        0.0
                    } else {
                        m as f64 * s.powi(m as i32 - 1) * x[i] * q[k]
                    };
                    d_tab[k][i] = lead - sm * s * dq[k];
                }
            }
            leg.push(p_tab);
            dleg.push(d_tab);
        }

        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for wt in &w_theta {
            for _ in 0..n_phi {
                weights.push(wt * w_phi);
            }
        }

        Ok(Self {
            n,
            lmax,
            n_theta,
            n_phi,
            cos_theta: x,
            sin_theta,
            w_theta,
            w_phi,
            phi,
            trig,
            leg,
            dleg,
            weights,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn node_count(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn mode_count(&self) -> usize {
        mode_count(self.n, self.lmax)
    }

    /// Quadrature weights, node-major (`θ` outer, `φ` inner).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(θ, φ)` of node `k`.
    pub fn node_angles(&self, k: usize) -> (f64, f64) {
        let i = k / self.n_phi;
        let j = k % self.n_phi;
        (self.cos_theta[i].acos(), self.phi[j])
    }

    /// `cos θ` at every node (the polar coordinate function `X^n`).
    pub fn cos_theta_field(&self) -> AngularField {
        let mut v = Vec::with_capacity(self.node_count());
        for i in 0..self.n_theta {
            for _ in 0..self.n_phi {
                v.push(self.cos_theta[i]);
            }
        }
        self.field(v)
    }

    /// Coordinate function `X^{axis+1}` restricted to the sphere. Only the
    /// polar axis (`axis = n - 1`) is available for `n >= 4`.
    pub fn coordinate_field(&self, axis: usize) -> Result<AngularField> {
        if axis == self.n - 1 {
            return Ok(self.cos_theta_field());
        }
        if self.n != 3 || axis > 1 {
            return Err(Error::InvalidParameter(format!(
                "coordinate axis {axis} not representable for n={}",
                self.n
            )));
        }
        let v = (0..self.node_count())
            .map(|k| {
                let i = k / self.n_phi;
                let j = k % self.n_phi;
                let s = self.sin_theta[i];
                if axis == 0 {
                    s * self.phi[j].cos()
                } else {
                    s * self.phi[j].sin()
                }
            })
            .collect();
        Ok(self.field(v))
    }

    /// Wrap raw node values as a field on this grid.
    pub fn field(&self, values: Vec<f64>) -> AngularField {
        debug_assert_eq!(values.len(), self.node_count());
        AngularField {
            n: self.n,
            lmax: self.lmax,
            values,
        }
    }

    /// Field from a function of `(θ, φ)` evaluated at every node.
    pub fn field_from_fn(&self, f: impl Fn(f64, f64) -> f64) -> AngularField {
        let v = (0..self.node_count())
            .map(|k| {
                let (t, p) = self.node_angles(k);
                f(t, p)
            })
            .collect();
        self.field(v)
    }

    fn check_field(&self, f: &AngularField) -> Result<()> {
        if f.n != self.n || f.lmax != self.lmax {
            return Err(Error::GridMismatch {
                expected_n: self.n,
                expected_lmax: self.lmax,
                got_n: f.n,
                got_lmax: f.lmax,
            });
        }
        if f.values.len() != self.node_count() {
            return Err(Error::LengthMismatch {
                expected: self.node_count(),
                got: f.values.len(),
            });
        }
        Ok(())
    }

    fn check_coeffs(&self, c: &ModeCoeffs) -> Result<()> {
        if c.n != self.n || c.lmax != self.lmax {
            return Err(Error::GridMismatch {
                expected_n: self.n,
                expected_lmax: self.lmax,
                got_n: c.n,
                got_lmax: c.lmax,
            });
        }
        if c.data.len() != self.mode_count() {
            return Err(Error::LengthMismatch {
                expected: self.mode_count(),
                got: c.data.len(),
            });
        }
        Ok(())
    }

    /// Quadrature inner products with the orthonormal basis.
    pub fn analyze(&self, f: &AngularField) -> Result<ModeCoeffs> {
        self.check_field(f)?;
        Ok(self.analyze_values(&f.values))
    }

    /// Pointwise evaluation of the basis expansion at the nodes.
    pub fn synthesize(&self, c: &ModeCoeffs) -> Result<AngularField> {
        self.check_coeffs(c)?;
        Ok(self.field(self.synth(c)))
    }

    /// Quadrature sum of `f`.
    pub fn integrate(&self, f: &AngularField) -> f64 {
        self.integrate_values(&f.values)
    }

    pub fn integrate_values(&self, v: &[f64]) -> f64 {
        // Fixed-order pairwise accumulation per latitude ring.
        let mut total = 0.0;
        for i in 0..self.n_theta {
            let row = &v[i * self.n_phi..(i + 1) * self.n_phi];
            total += self.w_theta[i] * self.w_phi * row.iter().sum::<f64>();
        }
        total
    }

    /// Surface measure of `S^{n-1}` as seen by the quadrature.
    pub fn area(&self) -> f64 {
        self.w_theta.iter().sum::<f64>() * self.w_phi * self.n_phi as f64
    }

    /// Quadrature `L^2` norm of node values.
    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        self.integrate_values(&sq).max(0.0).sqrt()
    }

    /// Analyze raw node values.
    pub fn analyze_values(&self, v: &[f64]) -> ModeCoeffs {
        self.analyze_with(v, false)
    }

    /// Synthesize to raw node values.
    pub fn synth(&self, c: &ModeCoeffs) -> Vec<f64> {
        self.synth_with(&c.data, false)
    }

    /// Analyze and verify that the field is representable at `lmax`.
    pub fn analyze_bandlimited(&self, f: &AngularField) -> Result<ModeCoeffs> {
        let c = self.analyze(f)?;
        let back = self.synth(&c);
        let scale = f.sup_norm().max(1.0);
        let err = back
            .iter()
            .zip(&f.values)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        if err > BANDLIMIT_RELATIVE * scale {
            return Err(Error::NotBandlimited {
                lmax: self.lmax,
                error: err,
            });
        }
        Ok(c)
    }

    fn az_index(m: i64) -> usize {
        if m == 0 {
            0
        } else if m > 0 {
            2 * m as usize - 1
        } else {
            2 * (-m) as usize
        }
    }

    fn synth_with(&self, c: &[f64], derivative: bool) -> Vec<f64> {
        let tables = if derivative { &self.dleg } else { &self.leg };
        let n_az = self.trig.len();
        let mut out = vec![0.0; self.node_count()];
        let mut g = vec![0.0; n_az];
        for i in 0..self.n_theta {
            g.iter_mut().for_each(|x| *x = 0.0);
            if self.n == 3 {
                for l in 0..=self.lmax {
                    let base = l * l + l;
                    for m in -(l as i64)..=(l as i64) {
                        let mu = m.unsigned_abs() as usize;
                        let coef = c[(base as i64 + m) as usize];
                        if coef != 0.0 {
                            g[Self::az_index(m)] += coef * tables[mu][l - mu][i];
                        }
                    }
                }
            } else {
                for l in 0..=self.lmax {
                    g[0] += c[l] * tables[0][l][i];
                }
            }
            let row = &mut out[i * self.n_phi..(i + 1) * self.n_phi];
            for (a, ga) in g.iter().enumerate() {
                if *ga == 0.0 {
                    continue;
                }
                for (o, t) in row.iter_mut().zip(&self.trig[a]) {
                    *o += ga * t;
                }
            }
        }
        out
    }

    fn analyze_with(&self, v: &[f64], derivative: bool) -> ModeCoeffs {
        let tables = if derivative { &self.dleg } else { &self.leg };
        let n_az = self.trig.len();
        let mut c = ModeCoeffs::zeros(self.n, self.lmax);
        let mut f = vec![0.0; n_az];
        for i in 0..self.n_theta {
            let row = &v[i * self.n_phi..(i + 1) * self.n_phi];
            for a in 0..n_az {
                f[a] = self.w_phi * row.iter().zip(&self.trig[a]).map(|(x, t)| x * t).sum::<f64>();
            }
            let wt = self.w_theta[i];
            if self.n == 3 {
                for l in 0..=self.lmax {
                    let base = l * l + l;
                    for m in -(l as i64)..=(l as i64) {
                        let mu = m.unsigned_abs() as usize;
                        c.data[(base as i64 + m) as usize] +=
                            wt * tables[mu][l - mu][i] * f[Self::az_index(m)];
                    }
                }
            } else {
                for l in 0..=self.lmax {
                    c.data[l] += wt * tables[0][l][i] * f[0];
                }
            }
        }
        c
    }

    fn per_ring(&self, v: &mut [f64], f: impl Fn(usize) -> f64) {
        for i in 0..self.n_theta {
            let s = f(i);
            v[i * self.n_phi..(i + 1) * self.n_phi]
                .iter_mut()
                .for_each(|x| *x *= s);
        }
    }

    /// Gradient of a bandlimited function in the orthonormal frame.
    pub fn gradient(&self, c: &ModeCoeffs) -> VectorField {
        let theta = self.synth_with(&c.data, true);
        let mut phi = if self.n == 3 {
            self.synth(&c.dphi())
        } else {
            vec![0.0; self.node_count()]
        };
        self.per_ring(&mut phi, |i| 1.0 / self.sin_theta[i]);
        VectorField {
            n: self.n,
            lmax: self.lmax,
            theta,
            phi,
        }
    }

    /// Covariant Hessian `∇_a ∇_b f` of a bandlimited function.
    pub fn hessian(&self, c: &ModeCoeffs) -> TensorField {
        let lap = self.synth(&c.laplace_beltrami());
        let f_t = self.synth_with(&c.data, true);
        let mut pp = f_t.clone();
        self.per_ring(&mut pp, |i| self.cos_theta[i] / self.sin_theta[i]);
        let mut tp = vec![0.0; self.node_count()];
        if self.n == 3 {
            let cp = c.dphi();
            let mut f_pp = self.synth(&cp.dphi());
            self.per_ring(&mut f_pp, |i| 1.0 / (self.sin_theta[i] * self.sin_theta[i]));
            for (a, b) in pp.iter_mut().zip(&f_pp) {
                *a += b;
            }
            // (1/sin θ)(f_θφ - cot θ f_φ)
            let f_tp = self.synth_with(&cp.data, true);
            let f_p = self.synth(&cp);
            for i in 0..self.n_theta {
                let s = self.sin_theta[i];
                let cot = self.cos_theta[i] / s;
                for j in 0..self.n_phi {
                    let k = i * self.n_phi + j;
                    tp[k] = (f_tp[k] - cot * f_p[k]) / s;
                }
            }
        }
        let mult = (self.n - 2) as f64;
        let tt = lap.iter().zip(&pp).map(|(l, p)| l - mult * p).collect();
        TensorField {
            n: self.n,
            lmax: self.lmax,
            tt,
            tp,
            pp,
        }
    }

    /// Pointwise `∇f · ∇g` of two bandlimited fields.
    pub fn gradient_inner(&self, f: &AngularField, g: &AngularField) -> Result<AngularField> {
        let cf = self.analyze_bandlimited(f)?;
        let cg = self.analyze_bandlimited(g)?;
        let gf = self.gradient(&cf);
        let gg = self.gradient(&cg);
        Ok(self.field(gf.dot(&gg)))
    }

    /// Covariant Hessian of a bandlimited field.
    pub fn covariant_hessian(&self, f: &AngularField) -> Result<TensorField> {
        let c = self.analyze_bandlimited(f)?;
        Ok(self.hessian(&c))
    }

    /// Coefficients of the zero-mean potential whose gradient is the
    /// `L^2`-closest gradient field to `x`.
    pub fn gradient_potential(&self, x: &VectorField) -> ModeCoeffs {
        // <X, ∇Y> = <X_θ, ∂_θ Y> + <X_φ̂ / sin θ, ∂_φ Y>
        let mut c = self.analyze_with(&x.theta, true);
        if self.n == 3 {
            let mut h = x.phi.clone();
            self.per_ring(&mut h, |i| 1.0 / self.sin_theta[i]);
            let a = self.analyze_values(&h);
            // ∫ h P ∂_φ T = -(dphi a)
            c.axpy(-1.0, &a.dphi());
        }
        for (i, v) in c.data.iter_mut().enumerate() {
            let l = degree_of(self.n, i);
            *v = if l == 0 { 0.0 } else { *v / eigenvalue(self.n, l) };
        }
        c
    }

    /// Divergence-side coefficients of a vector field, `(div X)_lm`.
    pub fn divergence(&self, x: &VectorField) -> ModeCoeffs {
        let mut c = self.gradient_potential(x);
        for (i, v) in c.data.iter_mut().enumerate() {
            *v *= -eigenvalue(self.n, degree_of(self.n, i));
        }
        c
    }

    /// Evaluate a coefficient vector at an arbitrary point.
    pub fn evaluate_at(&self, c: &ModeCoeffs, theta: f64, phi: f64) -> f64 {
        let x = theta.cos();
        let s = theta.sin();
        if self.n != 3 {
            let rec = SymmetricJacobi::new((self.n as f64 - 3.0) / 2.0);
            let mut q = Vec::new();
            rec.values(x, self.lmax, &mut q);
            let t0 = 1.0 / unit_sphere_area(self.n - 2).sqrt();
            return (0..=self.lmax).map(|l| c.data[l] * q[l]).sum::<f64>() * t0;
        }
        let mut total = 0.0;
        let mut q = Vec::new();
        let t0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let cm = 1.0 / std::f64::consts::PI.sqrt();
        for m in 0..=self.lmax {
            let rec = SymmetricJacobi::new(m as f64);
            rec.values(x, self.lmax - m, &mut q);
            let sm = s.powi(m as i32);
            for l in m..=self.lmax {
                let p = sm * q[l - m];
                if m == 0 {
                    total += c.data[mode_index(3, l, 0)] * p * t0;
                } else {
                    let mf = m as f64 * phi;
                    total += c.data[mode_index(3, l, m as i64)] * p * cm * mf.cos();
                    total += c.data[mode_index(3, l, -(m as i64))] * p * cm * mf.sin();
                }
            }
        }
        total
    }

    /// Coefficients of `x -> f(R^T x)` for a rotation `R` of `R^3` (n = 3).
    pub fn rotate(&self, c: &ModeCoeffs, rot: &[[f64; 3]; 3]) -> Result<ModeCoeffs> {
        if self.n != 3 {
            return Err(Error::UnsupportedDimension(self.n));
        }
        let values: Vec<f64> = (0..self.node_count())
            .map(|k| {
                let (t, p) = self.node_angles(k);
                let x = [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()];
                let y: Vec<f64> = (0..3)
                    .map(|a| (0..3).map(|b| rot[b][a] * x[b]).sum())
                    .collect();
                let ty = y[2].clamp(-1.0, 1.0).acos();
                let py = y[1].atan2(y[0]);
                self.evaluate_at(c, ty, py)
            })
            .collect();
        Ok(self.analyze_values(&values))
    }

    /// Pointwise product of two coefficient vectors, re-projected.
    pub fn product(&self, a: &ModeCoeffs, b: &ModeCoeffs) -> ModeCoeffs {
        let fa = self.synth(a);
        let fb = self.synth(b);
        let p: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
        self.analyze_values(&p)
    }

    /// Coefficients of the constant function `value`.
    pub fn constant_coeffs(&self, value: f64) -> ModeCoeffs {
        let mut c = ModeCoeffs::zeros(self.n, self.lmax);
        c.data[0] = value * self.area().sqrt();
        c
    }

    fn require_full_sphere(&self) -> Result<()> {
        if self.n != 3 {
            return Err(Error::InvalidParameter(format!(
                "all coordinate functions are representable only for n=3, got n={}",
                self.n
            )));
        }
        Ok(())
    }

    /// Columns: `(X^i X^j - δ^{ij}/3)_{ℓ=2}` for `i <= j` in the order
    /// `(0,0) (0,1) (0,2) (1,1) (1,2) (2,2)`; rows: the five `ℓ=2` modes.
    pub fn quadratic_l2_matrix(&self) -> Result<DMatrix<f64>> {
        self.require_full_sphere()?;
        let x: Vec<Vec<f64>> = (0..3)
            .map(|a| self.coordinate_field(a).map(|f| f.values))
            .collect::<Result<_>>()?;
        let mut m = DMatrix::zeros(5, 6);
        let mut col = 0;
        for i in 0..3 {
            for j in i..3 {
                let d = if i == j { 1.0 / 3.0 } else { 0.0 };
                let v: Vec<f64> = x[i].iter().zip(&x[j]).map(|(a, b)| a * b - d).collect();
                let c = self.analyze_values(&v);
                for (row, y) in c.block(2).iter().enumerate() {
                    m[(row, col)] = *y;
                }
                col += 1;
            }
        }
        Ok(m)
    }

    /// Numerical rank of the Gram matrix of the `ℓ=2` parts of `X^i X^j - δ^{ij}/3`.
    pub fn quadratic_l2_rank(&self) -> Result<usize> {
        let m = self.quadratic_l2_matrix()?;
        let gram = m.transpose() * &m;
        let sv = gram.singular_values();
        let top = sv.max();
        Ok(sv.iter().filter(|s| **s > 1e-10 * top).count())
    }

    /// Recover `a` (up to sign) from `((a_0 + a·X)^2)_{ℓ=2}`. A vanishing
    /// `ℓ=2` part returns `a = 0`.
    pub fn first_mode_from_square(&self, square: &ModeCoeffs) -> Result<[f64; 3]> {
        let m = self.quadratic_l2_matrix()?;
        let rhs = DVector::from_column_slice(square.block(2));
        let svd = m.svd(true, true);
        let s = svd
            .solve(&rhs, 1e-10 * svd.singular_values.max())
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        // Off-diagonal columns carry 2 a_i a_j.
        let sym = Matrix3::new(
            s[0], 0.5 * s[1], 0.5 * s[2],
            0.5 * s[1], s[3], 0.5 * s[4],
            0.5 * s[2], 0.5 * s[4], s[5],
        );
        let tr = sym.trace() / 3.0;
        let traceless = sym - Matrix3::identity() * tr;
        let eig = SymmetricEigen::new(traceless);
        let (k, lam) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        let norm = (1.5 * lam.max(0.0)).sqrt();
        let mut dir = eig.eigenvectors.column(k).into_owned();
        if let Some(first) = dir.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                dir = -dir;
            }
        }
        Ok([norm * dir[0], norm * dir[1], norm * dir[2]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn weights_sum_to_sphere_area() {
        for n in 3..=8 {
            let g = make_grid(n, 8).unwrap();
            let exact = unit_sphere_area(n - 1);
            assert!((g.area() - exact).abs() < 1e-12 * exact, "n={n}");
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert_eq!(make_grid(2, 8).unwrap_err(), Error::UnsupportedDimension(2));
        assert_eq!(make_grid(9, 8).unwrap_err(), Error::UnsupportedDimension(9));
        assert_eq!(make_grid(3, 3).unwrap_err(), Error::LmaxTooSmall(3));
    }

    #[test]
    fn constant_analyzes_to_root_area() {
        let g = make_grid(3, 6).unwrap();
        let c = g.analyze(&AngularField::constant(&g, 1.0)).unwrap();
        assert!((c.data[0] - (4.0 * PI).sqrt()).abs() < 1e-13);
        assert!(c.data[1..].iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn gradient_potential_inverts_gradient() {
        for n in [3, 5] {
            let g = make_grid(n, 6).unwrap();
            let mut c = ModeCoeffs::zeros(n, 6);
            for (i, v) in c.data.iter_mut().enumerate().skip(1) {
                *v = ((i * 7 % 11) as f64 - 5.0) / 7.0;
            }
            let back = g.gradient_potential(&g.gradient(&c));
            for (a, b) in back.data.iter().zip(&c.data).skip(1) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
