//! Scalar-flat quasi-spherical metrics `u^2 dr^2 + r^2 g_{S^{n-1}}`:
//! spectral construction by outward parabolic evolution, asymptotic
//! coefficient fits, static vacuum potentials and their residual audits, and
//! the Minkowski-type functionals on coordinate spheres.

pub mod asymptotics;
pub mod error;
pub mod evolve;
pub mod imcf;
pub mod metric;
pub mod quadrature;
pub mod radial;
pub mod sphere;
pub mod static_solver;
pub mod tolerances;

pub use error::{Error, Result};
pub use sphere::{make_grid, AngularField, ModeCoeffs, Selector, SphereGrid};
