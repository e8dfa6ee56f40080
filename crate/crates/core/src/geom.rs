//! The first Heisenberg group H^1 as a metric measure space.
//!
//! Points are (x, y, t) with the group law
//! `(x,y,t) * (x',y',t') = (x+x', y+y', t+t' + 2(y x' - x y'))`,
//! chosen so that the left-invariant horizontal frame is
//! `X1 = d/dx + 2y d/dt`, `X2 = d/dy - 2x d/dt`.
//! Haar measure is Lebesgue measure dx dy dt, the homogeneous dimension is 4,
//! and all balls are taken in the Koranyi gauge
//! `|(x,y,t)| = ((x^2+y^2)^2 + t^2)^(1/4)`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Relative padding applied to the `ball_xy` radius so that both endpoints are
/// strictly inside the ball.
pub const BALL_XY_PAD: f64 = 1e-9;

/// Volume of the unit Koranyi ball: integrating the gauge sub-level set gives
/// pi^2/2, and |B(c, r)| = (pi^2/2) r^4 by homogeneity.
pub const UNIT_BALL_VOLUME: f64 = std::f64::consts::PI * std::f64::consts::PI / 2.0;

/// A point of H^1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl Point {
    pub const ORIGIN: Point = Point {
        x: 0.0,
        y: 0.0,
        t: 0.0,
    };

    pub fn new(x: f64, y: f64, t: f64) -> Point {
        Point { x, y, t }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.t.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.t]
    }

    pub fn from_array(v: [f64; 3]) -> Point {
        Point::new(v[0], v[1], v[2])
    }
}

/// Group product `p * q`.
pub fn group_mul(p: Point, q: Point) -> Point {
    Point {
        x: p.x + q.x,
        y: p.y + q.y,
        t: p.t + q.t + 2.0 * (p.y * q.x - p.x * q.y),
    }
}

/// Group inverse `(x,y,t)^{-1} = (-x,-y,-t)`.
pub fn inverse(p: Point) -> Point {
    Point {
        x: -p.x,
        y: -p.y,
        t: -p.t,
    }
}

/// Anisotropic dilation `delta_lambda(x,y,t) = (lambda x, lambda y, lambda^2 t)`;
/// a group automorphism that scales the gauge by `lambda`.
///
/// Panics if `lambda <= 0`.
pub fn dilate(lambda: f64, p: Point) -> Point {
    assert!(
        lambda > 0.0,
        "dilation factor must be positive, got {lambda}"
    );
    Point {
        x: lambda * p.x,
        y: lambda * p.y,
        t: lambda * lambda * p.t,
    }
}

/// Fourth power of the Koranyi gauge, `(x^2+y^2)^2 + t^2`. Cheap and smooth;
/// preferred in inner loops.
pub fn gauge4(p: Point) -> f64 {
    let s = p.x * p.x + p.y * p.y;
    s * s + p.t * p.t
}

/// Koranyi gauge `((x^2+y^2)^2 + t^2)^(1/4)`.
pub fn koranyi_gauge(p: Point) -> f64 {
    gauge4(p).sqrt().sqrt()
}

/// Koranyi quasidistance `d(p, q) = |p^{-1} q|`. Left-invariant; for this
/// gauge it is in fact a true metric (triangle constant 1), which the tests
/// measure rather than assume.
pub fn koranyi_dist(p: Point, q: Point) -> f64 {
    koranyi_gauge(group_mul(inverse(p), q))
}

/// Gauge-ball midpoint `p * delta_{1/2}(p^{-1} q)`.
///
/// Left-invariant and dilation-covariant; exactly halves the distance to `p`:
/// `d(p, m) = d(p, q)/2`, while `d(m, q) <= (9/16)^(1/4) d(p, q)` by direct
/// expansion of the group law.
pub fn group_midpoint(p: Point, q: Point) -> Point {
    group_mul(p, dilate(0.5, group_mul(inverse(p), q)))
}

/// A gauge ball.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Result<Ball> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::NonpositiveRadius(radius));
        }
        Ok(Ball { center, radius })
    }

    /// Membership is strict: `p` belongs to `B` iff `d(center, p) < radius`.
    pub fn contains(&self, p: Point) -> bool {
        koranyi_dist(self.center, p) < self.radius
    }

    /// The concentric ball `lambda B = B(center, lambda * radius)`.
    pub fn scaled(&self, lambda: f64) -> Ball {
        assert!(lambda > 0.0);
        Ball {
            center: self.center,
            radius: lambda * self.radius,
        }
    }

    pub fn volume(&self) -> f64 {
        UNIT_BALL_VOLUME * self.radius.powi(4)
    }
}

/// The ball `B_xy`: smallest gauge ball centered at the group midpoint that
/// contains both endpoints, padded so membership is strict. Its radius never
/// exceeds `d(p, q)`.
pub fn ball_xy(p: Point, q: Point) -> Result<Ball> {
    let d = koranyi_dist(p, q);
    if d == 0.0 {
        return Err(Error::DegenerateBall(p));
    }
    let m = group_midpoint(p, q);
    let r = koranyi_dist(m, p).max(koranyi_dist(m, q)) * (1.0 + BALL_XY_PAD);
    Ball::new(m, r)
}

/// A tangent vector in the span of the horizontal frame, expressed by its
/// frame coefficients: `a X1 + b X2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizontalVector {
    pub a: f64,
    pub b: f64,
}

impl HorizontalVector {
    pub fn new(a: f64, b: f64) -> HorizontalVector {
        HorizontalVector { a, b }
    }

    /// Horizontal length sqrt(a^2 + b^2).
    pub fn norm(&self) -> f64 {
        self.a.hypot(self.b)
    }
}

/// Coordinate expressions of the horizontal frame at `p`:
/// `X1 = (1, 0, 2y)`, `X2 = (0, 1, -2x)`.
pub fn horizontal_frame(p: Point) -> ([f64; 3], [f64; 3]) {
    ([1.0, 0.0, 2.0 * p.y], [0.0, 1.0, -2.0 * p.x])
}

/// Flow along `a X1 + b X2` for unit time starting at `p`; equals the right
/// translation `p * (a, b, 0)` because the frame is left-invariant.
pub fn horizontal_step(p: Point, v: HorizontalVector) -> Point {
    group_mul(p, Point::new(v.a, v.b, 0.0))
}

/// Gauge-polar parameterization of H^1 about the origin.
///
/// `(rho, phi, theta)` with `rho > 0`, `phi` in `(-pi/2, pi/2)`, `theta` in
/// `[0, 2pi)` maps to the point with planar radius `rho sqrt(cos phi)` at
/// angle `theta` and height `t = rho^2 sin phi`; its gauge is exactly `rho`
/// and Lebesgue measure is `rho^3 drho dphi dtheta`.
pub fn gauge_polar_point(rho: f64, phi: f64, theta: f64) -> Point {
    let planar = rho * phi.cos().max(0.0).sqrt();
    Point {
        x: planar * theta.cos(),
        y: planar * theta.sin(),
        t: rho * rho * phi.sin(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    fn assert_close(p: Point, q: Point, tol: f64) {
        assert!(
            (p.x - q.x).abs() <= tol && (p.y - q.y).abs() <= tol && (p.t - q.t).abs() <= tol,
            "{p:?} vs {q:?}"
        );
    }

    #[test]
    fn group_law_identity_and_expansion() {
        let p = Point::new(0.3, -1.2, 2.5);
        assert_close(group_mul(Point::ORIGIN, p), p, 0.0);
        assert_close(group_mul(p, Point::ORIGIN), p, 0.0);
        assert_close(
            group_mul(Point::new(1.0, 0.0, 0.0), Point::new(0.0, 1.0, 0.0)),
            Point::new(1.0, 1.0, -2.0),
            0.0,
        );
        // Noncommutativity: the reversed product flips the t sign.
        assert_close(
            group_mul(Point::new(0.0, 1.0, 0.0), Point::new(1.0, 0.0, 0.0)),
            Point::new(1.0, 1.0, 2.0),
            0.0,
        );
    }

    #[test]
    fn inverse_cancels() {
        assert_close(inverse(Point::ORIGIN), Point::ORIGIN, 0.0);
        assert_close(
            inverse(Point::new(1.0, 2.0, 3.0)),
            Point::new(-1.0, -2.0, -3.0),
            0.0,
        );
        let p = Point::new(1.0, 2.0, 3.0);
        assert_close(group_mul(p, inverse(p)), Point::ORIGIN, TOL);
        assert_close(group_mul(inverse(p), p), Point::ORIGIN, TOL);
    }

    #[test]
    fn dilation_scales_gauge() {
        let p = Point::new(1.0, 0.0, 0.0);
        assert_close(dilate(1.0, p), p, 0.0);
        assert_close(dilate(2.0, p), Point::new(2.0, 0.0, 0.0), 0.0);
        assert_close(
            dilate(2.0, Point::new(0.0, 0.0, 1.0)),
            Point::new(0.0, 0.0, 4.0),
            0.0,
        );
        let q = Point::new(0.7, -0.3, 0.9);
        assert!((koranyi_gauge(dilate(3.5, q)) - 3.5 * koranyi_gauge(q)).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "dilation factor must be positive")]
    fn dilation_rejects_nonpositive_factor() {
        dilate(0.0, Point::ORIGIN);
    }

    #[test]
    fn gauge_values() {
        assert!((koranyi_gauge(Point::new(1.0, 0.0, 0.0)) - 1.0).abs() < TOL);
        assert!((koranyi_gauge(Point::new(0.0, 0.0, 1.0)) - 1.0).abs() < TOL);
        assert!(
            (koranyi_gauge(Point::new(1.0, 1.0, 0.0)) - std::f64::consts::SQRT_2).abs() < TOL
        );
        assert_eq!(koranyi_gauge(Point::ORIGIN), 0.0);
        let p = Point::new(0.2, -0.4, 1.3);
        assert!((koranyi_gauge(inverse(p)) - koranyi_gauge(p)).abs() < TOL);
    }

    #[test]
    fn distance_values() {
        let p = Point::new(0.5, -0.5, 2.0);
        assert_eq!(koranyi_dist(p, p), 0.0);
        assert!((koranyi_dist(Point::ORIGIN, Point::new(1.0, 0.0, 0.0)) - 1.0).abs() < TOL);
        // d((1,0,0),(0,1,0)) = |(-1,1,2)| = 8^(1/4).
        let d = koranyi_dist(Point::new(1.0, 0.0, 0.0), Point::new(0.0, 1.0, 0.0));
        assert!((d - 8.0_f64.powf(0.25)).abs() < TOL);
    }

    #[test]
    fn midpoint_examples() {
        let p = Point::new(0.4, 1.0, -2.0);
        assert_close(group_midpoint(p, p), p, TOL);
        assert_close(
            group_midpoint(Point::ORIGIN, Point::new(2.0, 0.0, 0.0)),
            Point::new(1.0, 0.0, 0.0),
            TOL,
        );
        // Vertical pair: midpoint (0,0,1/4) and d(m, q) = (9/16)^(1/4).
        let q = Point::new(0.0, 0.0, 1.0);
        let m = group_midpoint(Point::ORIGIN, q);
        assert_close(m, Point::new(0.0, 0.0, 0.25), TOL);
        assert!((koranyi_dist(m, q) - (9.0_f64 / 16.0).powf(0.25)).abs() < TOL);
        // Exact halving on the p side.
        let a = Point::new(0.3, -0.7, 1.1);
        let b = Point::new(-1.2, 0.4, -0.6);
        let m = group_midpoint(a, b);
        assert!((koranyi_dist(a, m) - koranyi_dist(a, b) / 2.0).abs() < 1e-12);
        assert!(koranyi_dist(m, b) <= koranyi_dist(a, b));
    }

    #[test]
    fn ball_xy_contains_both_endpoints() {
        let p = Point::ORIGIN;
        let q = Point::new(0.0, 0.0, 1.0);
        let ball = ball_xy(p, q).unwrap();
        assert_close(ball.center, Point::new(0.0, 0.0, 0.25), TOL);
        let expect = (9.0_f64 / 16.0).powf(0.25) * (1.0 + BALL_XY_PAD);
        assert!((ball.radius - expect).abs() < 1e-12);
        assert!(ball.contains(p) && ball.contains(q));
        assert!(ball.radius <= koranyi_dist(p, q));

        let p2 = Point::ORIGIN;
        let q2 = Point::new(2.0, 0.0, 0.0);
        let b2 = ball_xy(p2, q2).unwrap();
        assert_close(b2.center, Point::new(1.0, 0.0, 0.0), TOL);
        assert!((b2.radius - 1.0 * (1.0 + BALL_XY_PAD)).abs() < 1e-12);
    }

    #[test]
    fn ball_xy_rejects_coincident_points() {
        let p = Point::new(1.0, 2.0, 3.0);
        assert!(matches!(ball_xy(p, p), Err(Error::DegenerateBall(_))));
    }

    #[test]
    fn frame_expressions() {
        let (x1, x2) = horizontal_frame(Point::ORIGIN);
        assert_eq!(x1, [1.0, 0.0, 0.0]);
        assert_eq!(x2, [0.0, 1.0, 0.0]);
        let (x1, _) = horizontal_frame(Point::new(0.0, 1.0, 0.0));
        assert_eq!(x1, [1.0, 0.0, 2.0]);
        let (_, x2) = horizontal_frame(Point::new(1.0, 0.0, 0.0));
        assert_eq!(x2, [0.0, 1.0, -2.0]);
    }

    #[test]
    fn gauge_polar_roundtrip() {
        let p = gauge_polar_point(1.7, 0.43, 2.1);
        assert!((koranyi_gauge(p) - 1.7).abs() < 1e-12);
        let q = gauge_polar_point(0.3, -1.2, 5.9);
        assert!((koranyi_gauge(q) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn commutator_of_frame_is_minus_four_dt() {
        // Nested central differences along the frame flows on a smooth test
        // function; the bracket [X1, X2] must act as -4 d/dt.
        let f = |p: Point| (p.x).sin() * (p.y).cos() * (p.t / 3.0).exp();
        let h = 1e-3;
        let x1 = |p: Point, g: &dyn Fn(Point) -> f64| {
            (g(horizontal_step(p, HorizontalVector::new(h, 0.0)))
                - g(horizontal_step(p, HorizontalVector::new(-h, 0.0))))
                / (2.0 * h)
        };
        let x2 = |p: Point, g: &dyn Fn(Point) -> f64| {
            (g(horizontal_step(p, HorizontalVector::new(0.0, h)))
                - g(horizontal_step(p, HorizontalVector::new(0.0, -h))))
                / (2.0 * h)
        };
        for p in [
            Point::new(0.3, -0.2, 0.5),
            Point::new(-1.1, 0.8, -0.4),
            Point::new(0.0, 0.0, 0.0),
        ] {
            let x1x2 = x1(p, &|q| x2(q, &f));
            let x2x1 = x2(p, &|q| x1(q, &f));
            let bracket = x1x2 - x2x1;
            let dt = (f(Point::new(p.x, p.y, p.t + h)) - f(Point::new(p.x, p.y, p.t - h)))
                / (2.0 * h);
            assert!(
                (bracket + 4.0 * dt).abs() < 1e-4,
                "bracket {bracket} vs -4 dt {}",
                -4.0 * dt
            );
        }
    }
}
