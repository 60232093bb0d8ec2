//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unsupported dimension n={0}; supported range is 3..=8")]
    UnsupportedDimension(usize),

    #[error("lmax={0} too small; minimum is 4")]
    LmaxTooSmall(usize),

    #[error("grid mismatch: expected (n={expected_n}, lmax={expected_lmax}), got (n={got_n}, lmax={got_lmax})")]
    GridMismatch {
        expected_n: usize,
        expected_lmax: usize,
        got_n: usize,
        got_lmax: usize,
    },

    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("field is not bandlimited at lmax={lmax}: re-synthesis error {error:e}")]
    NotBandlimited { lmax: usize, error: f64 },

    #[error("horizon violation: r0^(n-2)={lhs} must exceed 2m={rhs}")]
    HorizonViolation { lhs: f64, rhs: f64 },

    #[error("need at least {needed} radial stations, got {got}")]
    TooFewStations { needed: usize, got: usize },

    #[error("station index {index} out of range (0..{len})")]
    StationOutOfRange { index: usize, len: usize },

    #[error("radii must be positive and strictly increasing")]
    BadRadii,

    #[error("lapse must be positive; minimum value {0:e}")]
    NonPositiveLapse(f64),

    #[error("lapse left the guard band ({floor}, {ceiling}) at r={r}: range [{min}, {max}]")]
    Guard {
        r: f64,
        min: f64,
        max: f64,
        floor: f64,
        ceiling: f64,
    },

    #[error("step underflow: {steps} substeps required between r={r_a} and r={r_b}")]
    StepUnderflow { r_a: f64, r_b: f64, steps: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("fit window holds {got} stations with r >= {r_min}; need {needed}")]
    WindowTooSmall { got: usize, needed: usize, r_min: f64 },

    #[error("fit matrix rank deficient (condition number {0:e})")]
    RankDeficient(f64),

    #[error("missing coefficients: {0}")]
    MissingCoefficients(String),

    #[error("metric is not rotationally symmetric: angular variation {0:e}")]
    NonSymmetric(f64),

    #[error("foliation is not an IMCF: mean curvature varies by {0:e} on a slice")]
    NotImcf(f64),

    #[error("slice is not equipotential: V varies by {0:e}")]
    NotEquipotential(f64),

    #[error("potential must be positive; minimum value {0:e}")]
    NonPositivePotential(f64),

    #[error("singular linear system at radial block {0}")]
    SingularSystem(usize),

    #[error("background is not scalar-flat: residual {residual:e} exceeds {tolerance:e}")]
    NotScalarFlat { residual: f64, tolerance: f64 },

    #[error("gradient field not integrable: curl remainder {remainder:e} exceeds {tolerance:e}")]
    NotIntegrable { remainder: f64, tolerance: f64 },
}

impl Error {
    /// Stable machine-readable code used by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnsupportedDimension(_) => "E_DIMENSION",
            Error::LmaxTooSmall(_) => "E_LMAX",
            Error::GridMismatch { .. } | Error::LengthMismatch { .. } => "E_GRID",
            Error::NotBandlimited { .. } => "E_BANDLIMIT",
            Error::HorizonViolation { .. } => "E_HORIZON",
            Error::TooFewStations { .. } | Error::StationOutOfRange { .. } | Error::BadRadii => {
                "E_RADII"
            }
            Error::NonPositiveLapse(_) => "E_LAPSE",
            Error::Guard { .. } => "E_GUARD",
            Error::StepUnderflow { .. } => "E_STEP",
            Error::InvalidParameter(_) => "E_PARAM",
            Error::WindowTooSmall { .. } => "E_WINDOW",
            Error::RankDeficient(_) => "E_RANK",
            Error::MissingCoefficients(_) => "E_MISSING",
            Error::NonSymmetric(_) => "E_SYMMETRY",
            Error::NotImcf(_) => "E_NOT_IMCF",
            Error::NotEquipotential(_) => "E_EQUIPOTENTIAL",
            Error::NonPositivePotential(_) => "E_POTENTIAL",
            Error::SingularSystem(_) => "E_SINGULAR",
            Error::NotScalarFlat { .. } => "E_NOT_SCALAR_FLAT",
            Error::NotIntegrable { .. } => "E_INTEGRABILITY",
        }
    }
}
