//! Error type shared across the crate.

use crate::geom::Point;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("degenerate ball: the two endpoints coincide at ({}, {}, {})", .0.x, .0.y, .0.t)]
    DegenerateBall(Point),

    #[error("ball radius must be positive, got {0}")]
    NonpositiveRadius(f64),

    #[error("quadrature scheme: {0}")]
    InvalidScheme(String),

    #[error("integrand returned NaN at sample point ({}, {}, {})", .0.x, .0.y, .0.t)]
    NanSample(Point),

    #[error("1-d radial integral did not converge (residual estimate {residual:.3e})")]
    RadialNonConvergent { residual: f64 },

    #[error("divergent integral: {0}")]
    Divergent(String),

    #[error("density: atom located at the group identity has a divergent log-potential")]
    AtomAtOrigin,

    #[error("density: non-finite bump or atom parameter ({0})")]
    NonFiniteDensity(String),

    #[error("density: bump width must be positive, got {0}")]
    NonpositiveWidth(f64),

    #[error(
        "A1-admissibility hypothesis fails: positive mass alpha = {alpha} \
         must stay below c1_prime = {c1_prime}"
    )]
    NotA1Admissible { alpha: f64, c1_prime: f64 },

    #[error("singular evaluation: query point coincides with an atom at ({}, {}, {})", .0.x, .0.y, .0.t)]
    EvalAtAtom(Point),

    #[error("probe ({}, {}, {}) lies outside the admissible ball (center ({}, {}, {}), radius {radius})",
            probe.x, probe.y, probe.t, center.x, center.y, center.t)]
    ProbeOutsideBall {
        probe: Point,
        center: Point,
        radius: f64,
    },

    #[error("probe ({}, {}, {}) is contained in no ball of the family", .0.x, .0.y, .0.t)]
    ProbeInNoBall(Point),

    #[error("empty ball family")]
    EmptyFamily,

    #[error("ball family generation: {0}")]
    FamilyGeneration(String),

    #[error("family has no nested pairs; a nested_pairs policy is required here")]
    NoNestedPairs,

    #[error("invalid exponent {value}: {requirement}")]
    InvalidExponent { value: f64, requirement: String },

    #[error(
        "endpoint constraint not met after {restarts} restarts: best miss {best_miss:.3e} \
         exceeds tolerance {tolerance:.3e}"
    )]
    EndpointNotConverged {
        restarts: usize,
        best_miss: f64,
        tolerance: f64,
    },

    #[error("epsilon must lie in (0, 1/20], got {0}")]
    InvalidEpsilon(f64),

    #[error(
        "singular-set cover exceeds its diameter budget: sum of diameters {total:.6} >= {budget:.6}; \
         violating mass profile: {profile}"
    )]
    CoverBudgetExceeded {
        total: f64,
        budget: f64,
        profile: String,
    },

    #[error("quadrature failed on ball (center ({}, {}, {}), radius {radius}): {source}",
            center.x, center.y, center.t)]
    BallQuadrature {
        center: Point,
        radius: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap a quadrature failure with the ball it occurred on.
    pub fn on_ball(self, ball: &crate::geom::Ball) -> Error {
        Error::BallQuadrature {
            center: ball.center,
            radius: ball.radius,
            source: Box::new(self),
        }
    }
}
