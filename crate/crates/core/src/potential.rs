//! The normal representation of the conformal factor:
//! `u(x) = (1/c1') int log(|y| / d(x,y)) f(y) dy`
//! for the signed density `f`, together with its near/far split over a
//! working ball, the centered kernel, the constant `cbar`, and the dilation
//! normalization that reduces a point pair to gauge separation 2.
//!
//! The two log factors are always evaluated as one kernel expression, so the
//! integrand (not just the integral) is small far from the sources.

use crate::cloud::{CloudResolution, PointCloud};
use crate::density::Density;
use crate::error::{Error, Result};
use crate::geom::{self, Ball, Point};
use crate::quad::{
    self, integrate_bump_kernel, log_kernel_tail_bound, near_support, IntegralResult,
    QuadratureScheme, Singularity,
};
use std::sync::{Arc, OnceLock};

const TAG_EVAL_U: u64 = 0x6576_616c;
const TAG_NEAR: u64 = 0x6e65_6172;
const TAG_FAR: u64 = 0x6661_7220;
const TAG_OSC: u64 = 0x6f73_6320;
const TAG_HAT: u64 = 0x6861_7431;
const TAG_CBAR: u64 = 0x6362_6172;

/// A pointwise quadrature estimate.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eval {
    pub value: f64,
    pub std_error: f64,
}

impl Eval {
    fn from_parts(parts: Vec<IntegralResult>, inv_c1: f64) -> Eval {
        let mut value = 0.0;
        let mut var = 0.0;
        for p in parts {
            value += p.value;
            var += p.std_error * p.std_error;
        }
        Eval {
            value: inv_c1 * value,
            std_error: inv_c1.abs() * var.sqrt(),
        }
    }
}

/// Near/far split of the potential over `10B`.
#[derive(Clone, Copy, Debug)]
pub struct NearFarSplit {
    /// Contribution of the density restricted to `10B`.
    pub near: Eval,
    /// Contribution of the complement, truncated at the far radius.
    pub far: Eval,
    /// Analytic bound on the mass discarded beyond the far radius, times the
    /// kernel supremum there. Exactly 0 for compactly supported scenarios
    /// inside the truncation radius.
    pub far_tail_bound: f64,
}

/// The potential field of a signed density, evaluable pointwise by seeded
/// quadrature. Immutable after construction; evaluations at the same point
/// with the same scheme reproduce bit-for-bit.
#[derive(Clone, Debug)]
pub struct PotentialField {
    density: Density,
    scheme: QuadratureScheme,
    cloud_res: CloudResolution,
    /// Far-field truncation for complement integrals, as a multiple of the
    /// working-ball radius.
    pub far_radius_factor: f64,
    cloud: OnceLock<Arc<PointCloud>>,
}

impl PotentialField {
    pub fn new(density: Density, scheme: QuadratureScheme) -> PotentialField {
        PotentialField {
            density,
            scheme,
            cloud_res: CloudResolution::default(),
            far_radius_factor: 1e3,
            cloud: OnceLock::new(),
        }
    }

    pub fn with_cloud_resolution(mut self, res: CloudResolution) -> PotentialField {
        self.cloud_res = res;
        self.cloud = OnceLock::new();
        self
    }

    pub fn density(&self) -> &Density {
        &self.density
    }

    pub fn scheme(&self) -> &QuadratureScheme {
        &self.scheme
    }

    pub fn c1_prime(&self) -> f64 {
        self.density.c1_prime
    }

    /// The deterministic particle surrogate (built lazily, then shared).
    pub fn cloud(&self) -> &Arc<PointCloud> {
        self.cloud
            .get_or_init(|| Arc::new(PointCloud::build(&self.density, self.cloud_res)))
    }

    /// Fast deterministic evaluation through the particle surrogate.
    pub fn eval_u_fast(&self, x: Point) -> f64 {
        self.cloud().eval_u(x)
    }

    /// Reference evaluation of the normal potential by seeded quadrature.
    pub fn eval_u(&self, x: Point) -> Result<Eval> {
        let mut parts = Vec::new();
        self.atom_terms(x, &mut parts)?;
        for (i, bump) in self.density.bumps.iter().enumerate() {
            let kernel =
                |y: Point| geom::koranyi_gauge(y).ln() - geom::koranyi_dist(x, y).ln();
            let (singular, anchor) = if near_support(bump, x) {
                (Singularity::LogAt(x), geom::koranyi_gauge(x))
            } else if near_support(bump, Point::ORIGIN) {
                (Singularity::LogAt(Point::ORIGIN), geom::koranyi_gauge(x))
            } else {
                (Singularity::None, 0.0)
            };
            let seed = quad::subseed(
                self.scheme.seed,
                &[
                    TAG_EVAL_U,
                    i as u64,
                    quad::point_words(x)[0],
                    quad::point_words(x)[1],
                    quad::point_words(x)[2],
                ],
            );
            parts.push(integrate_bump_kernel(
                bump,
                kernel,
                |_| true,
                singular,
                |delta| log_kernel_tail_bound(delta, anchor),
                &self.scheme,
                seed,
            )?);
        }
        Ok(Eval::from_parts(parts, 1.0 / self.density.c1_prime))
    }

    fn atom_terms(&self, x: Point, parts: &mut Vec<IntegralResult>) -> Result<()> {
        for atom in &self.density.atoms {
            let d = geom::koranyi_dist(x, atom.location);
            if d == 0.0 {
                return Err(Error::EvalAtAtom(atom.location));
            }
            parts.push(IntegralResult {
                value: atom.mass * (geom::koranyi_gauge(atom.location).ln() - d.ln()),
                std_error: 0.0,
                samples_used: 0,
            });
        }
        Ok(())
    }

    /// Split `u(x) = u_near + u_far` across the ball `b10` (the paper-style
    /// `10B`). The far part is truncated at `far_radius_factor` times the
    /// working-ball radius `b10.radius / 10`, with the discarded tail bounded
    /// analytically.
    pub fn split_near_far(&self, b10: &Ball, x: Point) -> Result<NearFarSplit> {
        let far_radius = self.far_radius_factor * (b10.radius / 10.0);
        let far_ball = Ball {
            center: b10.center,
            radius: far_radius,
        };

        let mut near_parts = Vec::new();
        let mut far_parts = Vec::new();
        for atom in &self.density.atoms {
            let d = geom::koranyi_dist(x, atom.location);
            if d == 0.0 {
                return Err(Error::EvalAtAtom(atom.location));
            }
            let term = IntegralResult {
                value: atom.mass * (geom::koranyi_gauge(atom.location).ln() - d.ln()),
                std_error: 0.0,
                samples_used: 0,
            };
            if b10.contains(atom.location) {
                near_parts.push(term);
            } else if far_ball.contains(atom.location) {
                far_parts.push(term);
            }
        }
        for (i, bump) in self.density.bumps.iter().enumerate() {
            let kernel =
                |y: Point| geom::koranyi_gauge(y).ln() - geom::koranyi_dist(x, y).ln();
            let (singular, anchor) = if near_support(bump, x) {
                (Singularity::LogAt(x), geom::koranyi_gauge(x))
            } else if near_support(bump, Point::ORIGIN) {
                (Singularity::LogAt(Point::ORIGIN), geom::koranyi_gauge(x))
            } else {
                (Singularity::None, 0.0)
            };
            let xw = quad::point_words(x);
            let near_seed =
                quad::subseed(self.scheme.seed, &[TAG_NEAR, i as u64, xw[0], xw[1], xw[2]]);
            near_parts.push(integrate_bump_kernel(
                bump,
                kernel,
                |y| b10.contains(y),
                singular,
                |delta| log_kernel_tail_bound(delta, anchor),
                &self.scheme,
                near_seed,
            )?);
            let far_seed =
                quad::subseed(self.scheme.seed, &[TAG_FAR, i as u64, xw[0], xw[1], xw[2]]);
            far_parts.push(integrate_bump_kernel(
                bump,
                kernel,
                |y| !b10.contains(y) && far_ball.contains(y),
                singular,
                |delta| log_kernel_tail_bound(delta, anchor),
                &self.scheme,
                far_seed,
            )?);
        }
        let inv_c1 = 1.0 / self.density.c1_prime;
        Ok(NearFarSplit {
            near: Eval::from_parts(near_parts, inv_c1),
            far: Eval::from_parts(far_parts, inv_c1),
            far_tail_bound: self.far_tail_bound(&far_ball, geom::koranyi_gauge(x)) * inv_c1,
        })
    }

    /// Mass beyond the truncation ball times the kernel supremum there. For a
    /// kernel anchored at scale `anchor_gap` (gauge of the evaluation point,
    /// or the probe separation for difference kernels) the log ratio at gauge
    /// distance `G` from the origin is at most `2 anchor_gap / G`.
    fn far_tail_bound(&self, far_ball: &Ball, anchor_gap: f64) -> f64 {
        let mut mass_beyond = 0.0;
        for bump in &self.density.bumps {
            let reach = geom::koranyi_dist(far_ball.center, bump.center) + bump.support_radius();
            if reach > far_ball.radius {
                mass_beyond += bump.mass.abs();
            }
        }
        for atom in &self.density.atoms {
            if !far_ball.contains(atom.location) {
                mass_beyond += atom.mass.abs();
            }
        }
        if mass_beyond == 0.0 {
            return 0.0;
        }
        let g_lo = far_ball.radius - geom::koranyi_gauge(far_ball.center);
        let per_mass = if g_lo > 2.0 * anchor_gap && g_lo > 0.0 {
            2.0 * anchor_gap / g_lo
        } else {
            50.0 + anchor_gap.abs().ln_1p()
        };
        mass_beyond * per_mass
    }

    /// `|u_far(z) - u_far(p0)|` for the far part over the complement of 10B,
    /// where `p0` is the center of the working ball `b`. Evaluated through
    /// the difference kernel `log(d(p0,y)/d(z,y))` in a single quadrature, so
    /// the cancellation happens inside the integrand.
    ///
    /// Requires `z` in `2B`.
    pub fn u2_oscillation(&self, b: &Ball, z: Point) -> Result<Eval> {
        let b2 = b.scaled(2.0);
        let b10 = b.scaled(10.0);
        if !b2.contains(z) && geom::koranyi_dist(b.center, z) > b2.radius {
            return Err(Error::ProbeOutsideBall {
                probe: z,
                center: b2.center,
                radius: b2.radius,
            });
        }
        let p0 = b.center;
        let far_radius = self.far_radius_factor * b.radius;
        let far_ball = Ball {
            center: p0,
            radius: far_radius,
        };
        let mut parts = Vec::new();
        for atom in &self.density.atoms {
            if b10.contains(atom.location) || !far_ball.contains(atom.location) {
                continue;
            }
            let dz = geom::koranyi_dist(z, atom.location);
            let dp = geom::koranyi_dist(p0, atom.location);
            parts.push(IntegralResult {
                value: atom.mass * (dp.ln() - dz.ln()),
                std_error: 0.0,
                samples_used: 0,
            });
        }
        for (i, bump) in self.density.bumps.iter().enumerate() {
            let kernel =
                |y: Point| geom::koranyi_dist(p0, y).ln() - geom::koranyi_dist(z, y).ln();
            let zw = quad::point_words(z);
            let seed = quad::subseed(self.scheme.seed, &[TAG_OSC, i as u64, zw[0], zw[1], zw[2]]);
            parts.push(integrate_bump_kernel(
                bump,
                kernel,
                |y| !b10.contains(y) && far_ball.contains(y),
                Singularity::None,
                |_| 0.0,
                &self.scheme,
                seed,
            )?);
        }
        let inv_c1 = 1.0 / self.density.c1_prime;
        let mut eval = Eval::from_parts(parts, inv_c1);
        eval.std_error += self.far_tail_bound(&far_ball, geom::koranyi_dist(p0, z)) * inv_c1;
        eval.value = eval.value.abs();
        Ok(eval)
    }

    /// The centered near kernel over `10B` without the `log|y|` shift:
    /// `u_hat_near(x) = (1/c1') int_{10B} log(1/d(x,y)) f(y) dy`.
    /// Satisfies `u_hat_near = u_near - cbar`.
    pub fn eval_u_hat1(&self, b10: &Ball, x: Point) -> Result<Eval> {
        let mut parts = Vec::new();
        for atom in &self.density.atoms {
            if !b10.contains(atom.location) {
                continue;
            }
            let d = geom::koranyi_dist(x, atom.location);
            if d == 0.0 {
                return Err(Error::EvalAtAtom(atom.location));
            }
            parts.push(IntegralResult {
                value: -atom.mass * d.ln(),
                std_error: 0.0,
                samples_used: 0,
            });
        }
        for (i, bump) in self.density.bumps.iter().enumerate() {
            let kernel = |y: Point| -geom::koranyi_dist(x, y).ln();
            let singular = if near_support(bump, x) {
                Singularity::LogAt(x)
            } else {
                Singularity::None
            };
            let xw = quad::point_words(x);
            let seed = quad::subseed(self.scheme.seed, &[TAG_HAT, i as u64, xw[0], xw[1], xw[2]]);
            parts.push(integrate_bump_kernel(
                bump,
                kernel,
                |y| b10.contains(y),
                singular,
                |delta| delta.ln().abs() + 1.25,
                &self.scheme,
                seed,
            )?);
        }
        Ok(Eval::from_parts(parts, 1.0 / self.density.c1_prime))
    }

    /// The shift constant `cbar = (1/c1') int_{10B} log|y| f(y) dy`.
    ///
    /// Finite because bump densities are bounded near the origin; an atom at
    /// the origin is rejected at density construction.
    pub fn cbar(&self, b10: &Ball) -> Result<Eval> {
        let mut parts = Vec::new();
        for atom in &self.density.atoms {
            if !b10.contains(atom.location) {
                continue;
            }
            parts.push(IntegralResult {
                value: atom.mass * geom::koranyi_gauge(atom.location).ln(),
                std_error: 0.0,
                samples_used: 0,
            });
        }
        for (i, bump) in self.density.bumps.iter().enumerate() {
            let kernel = |y: Point| geom::koranyi_gauge(y).ln();
            let singular = if near_support(bump, Point::ORIGIN) {
                Singularity::LogAt(Point::ORIGIN)
            } else {
                Singularity::None
            };
            let seed = quad::subseed(self.scheme.seed, &[TAG_CBAR, i as u64]);
            parts.push(integrate_bump_kernel(
                bump,
                kernel,
                |y| b10.contains(y),
                singular,
                |delta| delta.ln().abs() + 1.25,
                &self.scheme,
                seed,
            )?);
        }
        Ok(Eval::from_parts(parts, 1.0 / self.density.c1_prime))
    }

    /// The dilated field whose potential satisfies
    /// `u_new(delta_mu z) = u(z)` for all `z`.
    pub fn dilated(&self, mu: f64) -> PotentialField {
        PotentialField {
            density: self.density.dilated(mu),
            scheme: self.scheme,
            cloud_res: self.cloud_res,
            far_radius_factor: self.far_radius_factor,
            cloud: OnceLock::new(),
        }
    }

    /// Dilate the configuration so that the images of `x` and `y` sit at
    /// gauge distance exactly 2. Masses are preserved; the potential
    /// transforms covariantly (`u_new` at the image equals `u` at the
    /// original point).
    pub fn normalize_to_unit_separation(
        &self,
        x: Point,
        y: Point,
    ) -> Result<(PotentialField, Point, Point)> {
        let d = geom::koranyi_dist(x, y);
        if d == 0.0 {
            return Err(Error::DegenerateBall(x));
        }
        let mu = 2.0 / d;
        Ok((
            self.dilated(mu),
            geom::dilate(mu, x),
            geom::dilate(mu, y),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{Atom, Bump, Profile};

    fn scheme(budget: usize, seed: u64) -> QuadratureScheme {
        QuadratureScheme::monte_carlo(budget, seed)
    }

    #[test]
    fn zero_density_gives_zero_potential() {
        let field = PotentialField::new(Density::zero(1.0), scheme(1_000, 0));
        let e = field.eval_u(Point::new(0.7, -0.1, 0.4)).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn single_atom_closed_form() {
        let y0 = Point::new(1.0, 0.5, -0.3);
        let field = PotentialField::new(
            Density::new(
                vec![],
                vec![Atom {
                    location: y0,
                    mass: 0.8,
                }],
                2.0,
            )
            .unwrap(),
            scheme(1_000, 0),
        );
        let x = Point::new(-0.4, 0.2, 0.1);
        let e = field.eval_u(x).unwrap();
        let expect =
            0.8 / 2.0 * (geom::koranyi_gauge(y0) / geom::koranyi_dist(x, y0)).ln();
        assert!((e.value - expect).abs() < 1e-14);
        assert!(matches!(
            field.eval_u(y0),
            Err(Error::EvalAtAtom(_))
        ));
    }

    #[test]
    fn kernel_vanishes_on_equidistant_locus() {
        // log(|y0| / d(x, y0)) = 0 whenever d(x, y0) = |y0|.
        let y0 = Point::new(1.0, 0.0, 0.0);
        let x = Point::new(2.0, 0.0, 0.0); // d(x, y0) = 1 = |y0|
        let field = PotentialField::new(
            Density::new(
                vec![],
                vec![Atom {
                    location: y0,
                    mass: 3.0,
                }],
                1.0,
            )
            .unwrap(),
            scheme(1_000, 0),
        );
        assert!(field.eval_u(x).unwrap().value.abs() < 1e-14);
    }

    #[test]
    fn narrow_bump_mean_value_oracle() {
        let y0 = Point::new(1.2, -0.4, 0.6);
        let m = -0.75;
        let x = Point::new(-1.0, 0.8, -0.2);
        let expect =
            m / 1.0 * (geom::koranyi_gauge(y0) / geom::koranyi_dist(x, y0)).ln();
        let mut last_err = f64::INFINITY;
        for w in [0.3, 0.1] {
            let field = PotentialField::new(
                Density::new(
                    vec![Bump {
                        center: y0,
                        profile: Profile::PolyBump,
                        width: w,
                        mass: m,
                    }],
                    vec![],
                    1.0,
                )
                .unwrap(),
                scheme(60_000, 4),
            );
            let e = field.eval_u(x).unwrap();
            last_err = (e.value - expect).abs();
            assert!(last_err < 0.05 * expect.abs() + 3.0 * e.std_error);
        }
        assert!(last_err < 0.01 * expect.abs() + 1e-4);
    }

    #[test]
    fn split_restricts_supports() {
        // Density entirely inside 10B: far part vanishes. Entirely outside:
        // near part vanishes.
        let b10 = Ball::new(Point::new(0.2, 0.0, 0.0), 10.0).unwrap();
        let inside = PotentialField::new(
            Density::new(
                vec![Bump {
                    center: Point::new(1.0, 0.0, 0.0),
                    profile: Profile::PolyBump,
                    width: 0.5,
                    mass: -0.4,
                }],
                vec![],
                1.0,
            )
            .unwrap(),
            scheme(20_000, 1),
        );
        let x = Point::new(0.5, 0.5, 0.0);
        let s = inside.split_near_far(&b10, x).unwrap();
        assert_eq!(s.far.value, 0.0);
        assert!(s.near.value != 0.0);
        assert_eq!(s.far_tail_bound, 0.0);

        let outside = PotentialField::new(
            Density::new(
                vec![],
                vec![Atom {
                    location: Point::new(50.0, 0.0, 0.0),
                    mass: -0.4,
                }],
                1.0,
            )
            .unwrap(),
            scheme(20_000, 1),
        );
        let s = outside.split_near_far(&b10, x).unwrap();
        assert_eq!(s.near.value, 0.0);
        assert!(s.far.value != 0.0);
    }

    #[test]
    fn split_adds_up_to_eval() {
        let field = PotentialField::new(
            Density::new(
                vec![
                    Bump {
                        center: Point::new(0.4, 0.3, -0.2),
                        profile: Profile::PolyBump,
                        width: 1.1,
                        mass: -0.6,
                    },
                    Bump {
                        center: Point::new(14.0, 0.0, 0.0),
                        profile: Profile::GaussianLike,
                        width: 0.5,
                        mass: -0.3,
                    },
                ],
                vec![],
                1.0,
            )
            .unwrap(),
            scheme(80_000, 9),
        );
        let b10 = Ball::new(Point::new(0.1, 0.0, 0.1), 10.0).unwrap();
        let x = Point::new(0.6, -0.2, 0.3);
        let s = field.split_near_far(&b10, x).unwrap();
        let u = field.eval_u(x).unwrap();
        let combined = (s.near.std_error.powi(2) + s.far.std_error.powi(2) + u.std_error.powi(2))
            .sqrt()
            + s.far_tail_bound;
        assert!(
            ((s.near.value + s.far.value) - u.value).abs() <= 3.0 * combined,
            "near {} + far {} vs u {} (combined se {})",
            s.near.value,
            s.far.value,
            u.value,
            combined
        );
    }

    #[test]
    fn oscillation_trivial_cases() {
        let b = Ball::new(Point::new(0.3, -0.1, 0.2), 1.0).unwrap();
        // Density entirely inside 10B: the far part is identically zero.
        let field = PotentialField::new(
            Density::new(
                vec![Bump {
                    center: b.center,
                    profile: Profile::PolyBump,
                    width: 1.0,
                    mass: -0.8,
                }],
                vec![],
                1.0,
            )
            .unwrap(),
            scheme(10_000, 2),
        );
        let z = geom::group_mul(b.center, Point::new(0.5, 0.2, 0.0));
        let e = field.u2_oscillation(&b, z).unwrap();
        assert_eq!(e.value, 0.0);
        // z = p0 gives zero by symmetry of the difference kernel.
        let far = PotentialField::new(
            Density::new(
                vec![],
                vec![Atom {
                    location: Point::new(100.0, 0.0, 0.0),
                    mass: -0.5,
                }],
                1.0,
            )
            .unwrap(),
            scheme(10_000, 2),
        );
        let e = far.u2_oscillation(&b, b.center).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn oscillation_single_far_atom() {
        let b = Ball::new(Point::ORIGIN, 1.0).unwrap();
        let y0 = Point::new(100.0, 0.0, 0.0);
        let m = -0.9_f64;
        let field = PotentialField::new(
            Density::new(
                vec![],
                vec![Atom {
                    location: y0,
                    mass: m,
                }],
                1.0,
            )
            .unwrap(),
            scheme(10_000, 3),
        );
        let z = Point::new(1.5, 0.5, 0.0);
        let e = field.u2_oscillation(&b, z).unwrap();
        let expect = (m * (geom::koranyi_dist(Point::ORIGIN, y0).ln()
            - geom::koranyi_dist(z, y0).ln()))
        .abs();
        assert!((e.value - expect).abs() < 1e-12);
        assert!(e.value < 0.25 * m.abs() / 1.0 + 1e-9);
    }

    #[test]
    fn oscillation_rejects_far_probe() {
        let b = Ball::new(Point::ORIGIN, 1.0).unwrap();
        let field = PotentialField::new(Density::zero(1.0), scheme(1_000, 0));
        let z = Point::new(5.0, 0.0, 0.0);
        assert!(matches!(
            field.u2_oscillation(&b, z),
            Err(Error::ProbeOutsideBall { .. })
        ));
    }

    #[test]
    fn cbar_atom_values() {
        let b10 = Ball::new(Point::ORIGIN, 10.0).unwrap();
        // Atom at gauge 1: log 1 = 0.
        let f1 = PotentialField::new(
            Density::new(
                vec![],
                vec![Atom {
                    location: Point::new(1.0, 0.0, 0.0),
                    mass: -0.7,
                }],
                1.0,
            )
            .unwrap(),
            scheme(1_000, 0),
        );
        assert!(f1.cbar(&b10).unwrap().value.abs() < 1e-15);
        // Atom at gauge e with signed mass -m: cbar = -m/c1'.
        let e_gauge = std::f64::consts::E;
        let f2 = PotentialField::new(
            Density::new(
                vec![],
                vec![Atom {
                    location: Point::new(e_gauge, 0.0, 0.0),
                    mass: -0.7,
                }],
                1.0,
            )
            .unwrap(),
            scheme(1_000, 0),
        );
        assert!((f2.cbar(&b10).unwrap().value + 0.7).abs() < 1e-12);
        // Empty density.
        let f3 = PotentialField::new(Density::zero(1.0), scheme(1_000, 0));
        assert_eq!(f3.cbar(&b10).unwrap().value, 0.0);
    }

    #[test]
    fn hat_kernel_shifts_by_cbar() {
        let b10 = Ball::new(Point::new(0.5, 0.0, 0.0), 10.0).unwrap();
        let field = PotentialField::new(
            Density::new(
                vec![Bump {
                    center: Point::new(1.5, -0.5, 0.3),
                    profile: Profile::PolyBump,
                    width: 0.9,
                    mass: -0.8,
                }],
                vec![Atom {
                    location: Point::new(-2.0, 1.0, 0.0),
                    mass: -0.2,
                }],
                1.0,
            )
            .unwrap(),
            scheme(60_000, 8),
        );
        let x = Point::new(0.9, 0.4, -0.1);
        let hat = field.eval_u_hat1(&b10, x).unwrap();
        let cbar = field.cbar(&b10).unwrap();
        let split = field.split_near_far(&b10, x).unwrap();
        let lhs = hat.value + cbar.value;
        let combined = (hat.std_error.powi(2)
            + cbar.std_error.powi(2)
            + split.near.std_error.powi(2))
        .sqrt();
        assert!(
            (lhs - split.near.value).abs() <= 3.0 * combined + 1e-9,
            "hat+cbar {} vs near {} (se {})",
            lhs,
            split.near.value,
            combined
        );
    }

    #[test]
    fn hat_kernel_single_atom_sign() {
        // Signed atom mass m inside 10B at distance d from x contributes
        // (m/c1') log(1/d); a negative-part density therefore flips the sign.
        let b10 = Ball::new(Point::ORIGIN, 10.0).unwrap();
        let y0 = Point::new(2.0, 0.0, 0.0);
        let field = PotentialField::new(
            Density::new(
                vec![],
                vec![Atom {
                    location: y0,
                    mass: -1.3,
                }],
                1.0,
            )
            .unwrap(),
            scheme(1_000, 0),
        );
        let x = Point::new(2.5, 0.0, 0.0);
        let d = geom::koranyi_dist(x, y0);
        let expect = -1.3 * (1.0 / d).ln();
        assert!((field.eval_u_hat1(&b10, x).unwrap().value - expect).abs() < 1e-12);
    }

    #[test]
    fn normalization_reaches_separation_two() {
        let field = PotentialField::new(
            Density::new(
                vec![Bump {
                    center: Point::new(0.3, 0.3, 0.1),
                    profile: Profile::GaussianLike,
                    width: 0.4,
                    mass: -0.5,
                }],
                vec![],
                1.0,
            )
            .unwrap(),
            scheme(30_000, 5),
        );
        let x = Point::new(0.1, 0.0, 0.0);
        let y = Point::new(4.1, 0.7, -0.3);
        let (nf, nx, ny) = field.normalize_to_unit_separation(x, y).unwrap();
        assert!((geom::koranyi_dist(nx, ny) - 2.0).abs() < 1e-12);
        let (a0, b0) = field.density().alpha_beta();
        let (a1, b1) = nf.density().alpha_beta();
        assert!((a0 - a1).abs() < 1e-15 && (b0 - b1).abs() < 1e-15);
        // Identity transform when the separation is already 2.
        let x2 = Point::ORIGIN;
        let y2 = Point::new(2.0, 0.0, 0.0);
        let (_, ix, iy) = field.normalize_to_unit_separation(x2, y2).unwrap();
        assert!((ix.x - x2.x).abs() < 1e-15 && (iy.x - y2.x).abs() < 1e-15);
        // Coincident points rejected.
        assert!(field.normalize_to_unit_separation(x, x).is_err());
    }

    #[test]
    fn dilation_covariance_of_potential() {
        let field = PotentialField::new(
            Density::new(
                vec![Bump {
                    center: Point::new(0.6, -0.2, 0.3),
                    profile: Profile::PolyBump,
                    width: 0.8,
                    mass: -0.9,
                }],
                vec![],
                1.0,
            )
            .unwrap(),
            scheme(80_000, 21),
        );
        let mu = 2.7;
        let dilated = field.dilated(mu);
        for z in [Point::new(1.0, 0.2, -0.3), Point::new(-0.4, 0.9, 0.6)] {
            let orig = field.eval_u(z).unwrap();
            let image = dilated.eval_u(geom::dilate(mu, z)).unwrap();
            let combined =
                (orig.std_error.powi(2) + image.std_error.powi(2)).sqrt();
            assert!(
                (orig.value - image.value).abs() <= 3.0 * combined + 1e-9,
                "u {} vs dilated {} (se {})",
                orig.value,
                image.value,
                combined
            );
        }
    }

    #[test]
    fn positive_and_negative_parts_add_up() {
        let density = Density::new(
            vec![
                Bump {
                    center: Point::new(0.5, 0.0, 0.0),
                    profile: Profile::PolyBump,
                    width: 0.7,
                    mass: 0.4,
                },
                Bump {
                    center: Point::new(-0.5, 0.3, 0.0),
                    profile: Profile::PolyBump,
                    width: 0.6,
                    mass: -0.6,
                },
            ],
            vec![],
            1.0,
        )
        .unwrap();
        let whole = PotentialField::new(density.clone(), scheme(60_000, 13));
        let plus = PotentialField::new(density.positive_part(), scheme(60_000, 14));
        let minus = PotentialField::new(density.negative_part(), scheme(60_000, 15));
        let x = Point::new(0.2, 0.4, 0.3);
        let w = whole.eval_u(x).unwrap();
        let p = plus.eval_u(x).unwrap();
        let m = minus.eval_u(x).unwrap();
        let combined =
            (w.std_error.powi(2) + p.std_error.powi(2) + m.std_error.powi(2)).sqrt();
        assert!((w.value - (p.value + m.value)).abs() <= 3.0 * combined + 1e-9);
    }
}
