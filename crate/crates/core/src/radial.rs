//! Radial calculus on arbitrary station grids: finite-difference weights
//! (Fornberg's algorithm), stencil selection near the ends, and cubic Hermite
//! interpolation in `s = log r`.

/// Weights `w[d][j]` such that `f^{(d)}(x0) ≈ Σ_j w[d][j] f(x_j)` for
/// `d = 0..=max_deriv`.
pub fn fornberg_weights(x0: f64, x: &[f64], max_deriv: usize) -> Vec<Vec<f64>> {
    let npts = x.len();
    let mut c = vec![vec![0.0; npts]; max_deriv + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = x[0] - x0;
    for i in 1..npts {
        let mn = i.min(max_deriv);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - x0;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Index window of `width` consecutive stations used around station `k`:
/// centred when possible, shifted inward at the ends.
pub fn stencil_window(k: usize, len: usize, width: usize) -> (usize, usize) {
    let width = width.min(len);
    let half = width / 2;
    let start = k.saturating_sub(half).min(len - width);
    (start, start + width)
}

/// Finite-difference derivative of order `deriv` of a sequence of vectors
/// sampled at `x`, using `width`-point stencils.
pub fn differentiate(x: &[f64], values: &[Vec<f64>], deriv: usize, width: usize) -> Vec<Vec<f64>> {
    let len = x.len();
    let dim = values.first().map_or(0, |v| v.len());
    (0..len)
        .map(|k| {
            let (a, b) = stencil_window(k, len, width);
            let w = fornberg_weights(x[k], &x[a..b], deriv);
            let mut out = vec![0.0; dim];
            for (j, wj) in w[deriv].iter().enumerate() {
                for (o, v) in out.iter_mut().zip(&values[a + j]) {
                    *o += wj * v;
                }
            }
            out
        })
        .collect()
}

/// Cubic Hermite interpolation between `(x0, f0, d0)` and `(x1, f1, d1)`.
pub fn hermite(x: f64, x0: f64, x1: f64, f0: f64, f1: f64, d0: f64, d1: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * f0 + h10 * h * d0 + h01 * f1 + h11 * h * d1
}

/// Derivative of [`hermite`] with respect to `x`.
pub fn hermite_derivative(x: f64, x0: f64, x1: f64, f0: f64, f1: f64, d0: f64, d1: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let dh00 = (6.0 * t2 - 6.0 * t) / h;
    let dh10 = 3.0 * t2 - 4.0 * t + 1.0;
    let dh01 = (-6.0 * t2 + 6.0 * t) / h;
    let dh11 = 3.0 * t2 - 2.0 * t;
    dh00 * f0 + dh10 * d0 + dh01 * f1 + dh11 * d1
}

/// Locate the interval `[x_k, x_{k+1}]` containing `v` (clamped to the ends).
pub fn locate(x: &[f64], v: f64) -> usize {
    match x.binary_search_by(|p| p.partial_cmp(&v).unwrap()) {
        Ok(k) => k.min(x.len() - 2),
        Err(0) => 0,
        Err(k) => (k - 1).min(x.len() - 2),
    }
}

/// `count` logarithmically spaced radii from `r0` to `r1` inclusive.
pub fn log_spaced(r0: f64, r1: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && r0 > 0.0 && r1 > r0);
    let (s0, s1) = (r0.ln(), r1.ln());
    (0..count)
        .map(|k| {
            if k == 0 {
                r0
            } else if k == count - 1 {
                r1
            } else {
                (s0 + (s1 - s0) * k as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_point_central_weights() {
        let x = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let w = fornberg_weights(0.0, &x, 2);
        let d1 = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        let d2 = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
        for j in 0..5 {
            assert!((w[1][j] - d1[j]).abs() < 1e-14);
            assert!((w[2][j] - d2[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn differentiate_is_exact_on_quartics() {
        let x: Vec<f64> = (0..9).map(|k| 0.3 * k as f64 + 0.01 * (k * k) as f64).collect();
        let f: Vec<Vec<f64>> = x.iter().map(|t| vec![t.powi(4) - 2.0 * t]).collect();
        let d = differentiate(&x, &f, 1, 5);
        for (t, v) in x.iter().zip(&d) {
            assert!((v[0] - (4.0 * t.powi(3) - 2.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let f = |x: f64| x * x * x - x;
        let df = |x: f64| 3.0 * x * x - 1.0;
        let (a, b) = (0.5, 1.25);
        for k in 0..=10 {
            let x = a + (b - a) * k as f64 / 10.0;
            let v = hermite(x, a, b, f(a), f(b), df(a), df(b));
            let d = hermite_derivative(x, a, b, f(a), f(b), df(a), df(b));
            assert!((v - f(x)).abs() < 1e-14);
            assert!((d - df(x)).abs() < 1e-13);
        }
    }
}
