//! Numerical tolerances used across the crate. All assume IEEE binary64.

/// Maximum re-synthesis error, relative to the field's sup norm, for a nodal
/// field to count as bandlimited at the grid cutoff.
pub const BANDLIMIT_RELATIVE: f64 = 1e-10;

/// Round-trip accuracy of analyze/synthesize on bandlimited data.
pub const ROUND_TRIP: f64 = 1e-12;

/// Relative Parseval defect.
pub const PARSEVAL: f64 = 1e-10;

/// Absolute spread of a field over the sphere below which it counts as
/// rotationally symmetric.
pub const SYMMETRY: f64 = 1e-10;

/// Absolute spread of `V` on a slice below which the slice is equipotential.
pub const EQUIPOTENTIAL: f64 = 1e-10;

/// Default scalar-curvature audit tolerance for evolved metrics.
pub const SCALAR_AUDIT: f64 = 1e-8;

/// Default curl remainder, relative to the gradient field, accepted when
/// integrating a sphere gradient equation.
pub const INTEGRABILITY: f64 = 1e-2;

/// Monotonicity slack for `Q(t)` per unit flow time.
pub const MONOTONICITY: f64 = 1e-9;

/// Default blow-up guard for the lapse during evolution.
pub const GUARD_FLOOR: f64 = 0.05;
pub const GUARD_CEILING: f64 = 20.0;

/// Default RK4 safety factor relative to the diffusive stability bound.
pub const STEP_SAFETY: f64 = 0.4;

/// Default near-field exclusion factor for asymptotic fits (`r >= factor * r0`).
pub const FIT_NEAR_FIELD: f64 = 50.0;

/// Minimum number of stations inside an asymptotic fit window.
pub const FIT_MIN_STATIONS: usize = 8;

/// Condition number above which a fit matrix is declared rank deficient.
pub const FIT_MAX_CONDITION: f64 = 1e13;
