//! Numerical laboratory for potential theory on the first Heisenberg group:
//! normal logarithmic potentials of signed densities, weights `e^{c u}`,
//! Muckenhoupt-class estimators, the ball-integral and geodesic
//! quasidistances, singular-set covers, and weighted Sobolev-Poincare
//! verifiers, all over seeded reproducible sampling.

pub mod analysis;
pub mod cloud;
pub mod density;
pub mod error;
pub mod geom;
mod opt;
pub mod paths;
pub mod potential;
pub mod quad;
pub mod weights;

pub use density::{Atom, Bump, Density, Profile};
pub use error::{Error, Result};
pub use geom::{Ball, HorizontalVector, Point};
pub use potential::{Eval, PotentialField};
pub use quad::{IntegralResult, QuadratureScheme, SchemeKind};
pub use weights::{BallFamily, WeightField};
