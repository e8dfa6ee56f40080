//! Signed density model: the measure `f(y) dy` driving the normal potential,
//! given as a finite sum of radial bumps plus weighted atoms.
//!
//! Bump profiles are radial in the gauge distance from the bump center. Each
//! bump stores its signed total mass; the amplitude is derived so that the
//! closed-form mass matches exactly. A `uniform` profile is included alongside
//! `poly_bump` and `gaussian_like` so that constant-on-a-ball densities (the
//! natural input for the closed-form log-kernel integrals) are expressible.

use crate::error::{Error, Result};
use crate::geom::{self, Point};
use serde::{Deserialize, Serialize};

/// Truncation radius of the gaussian-like profile, in units of its width.
const GAUSSIAN_CUT: f64 = 6.0;

/// Radial bump profile shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `(1 - (rho/w)^2)^2` on `rho < w`.
    PolyBump,
    /// `exp(-(rho/w)^2)` truncated at `rho = 6w`.
    GaussianLike,
    /// Constant on `rho < w`.
    Uniform,
}

/// A radial bump of signed mass centered at a point of H^1.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Bump {
    pub center: Point,
    pub profile: Profile,
    pub width: f64,
    pub mass: f64,
}

/// A signed point mass.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Atom {
    pub location: Point,
    pub mass: f64,
}

/// The signed density `f(y) dy`, together with the normalizing constant
/// `c1_prime` of the potential representation it will feed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Density {
    pub bumps: Vec<Bump>,
    pub atoms: Vec<Atom>,
    pub c1_prime: f64,
    /// When set, construction additionally enforces `alpha < c1_prime`.
    #[serde(default)]
    pub a1_admissible: bool,
}

impl Bump {
    /// Radius of the (truncated) support.
    pub fn support_radius(&self) -> f64 {
        match self.profile {
            Profile::PolyBump | Profile::Uniform => self.width,
            Profile::GaussianLike => GAUSSIAN_CUT * self.width,
        }
    }

    /// Amplitude making the total (truncated) mass equal `self.mass`, using
    /// the layer-cake identity `int = 2 pi^2 int g(rho) rho^3 drho`.
    pub fn amplitude(&self) -> f64 {
        let w4 = self.width.powi(4);
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        match self.profile {
            // 2 pi^2 w^4 int_0^1 (1-s^2)^2 s^3 ds = pi^2 w^4 / 12
            Profile::PolyBump => 12.0 * self.mass / (pi2 * w4),
            // 2 pi^2 (w^4/2) (1 - (1+u) e^{-u}) at u = 36
            Profile::GaussianLike => {
                let u = GAUSSIAN_CUT * GAUSSIAN_CUT;
                let norm = 1.0 - (1.0 + u) * (-u).exp();
                self.mass / (pi2 * w4 * norm)
            }
            // 2 pi^2 w^4 / 4
            Profile::Uniform => 2.0 * self.mass / (pi2 * w4),
        }
    }

    /// Signed density value at gauge distance `rho` from the center.
    pub fn density_at(&self, rho: f64) -> f64 {
        if rho >= self.support_radius() {
            return 0.0;
        }
        let a = self.amplitude();
        match self.profile {
            Profile::PolyBump => {
                let s = rho / self.width;
                let u = 1.0 - s * s;
                a * u * u
            }
            Profile::GaussianLike => {
                let s = rho / self.width;
                a * (-s * s).exp()
            }
            Profile::Uniform => a,
        }
    }

    /// Signed density value at a point.
    pub fn eval(&self, y: Point) -> f64 {
        self.density_at(geom::koranyi_dist(self.center, y))
    }

    /// Fraction of the bump's mass within gauge distance `rho` of its center
    /// (the normalized radial CDF).
    pub fn mass_fraction_within(&self, rho: f64) -> f64 {
        let r = self.support_radius();
        if rho <= 0.0 {
            return 0.0;
        }
        if rho >= r {
            return 1.0;
        }
        match self.profile {
            Profile::PolyBump => {
                let s = rho / self.width;
                let s2 = s * s;
                let s4 = s2 * s2;
                // 24 int_0^s (1-u^2)^2 u^3 du = 6 s^4 - 8 s^6 + 3 s^8
                6.0 * s4 - 8.0 * s4 * s2 + 3.0 * s4 * s4
            }
            Profile::GaussianLike => {
                let u = (rho / self.width).powi(2);
                let u_max = GAUSSIAN_CUT * GAUSSIAN_CUT;
                let num = 1.0 - (1.0 + u) * (-u).exp();
                let den = 1.0 - (1.0 + u_max) * (-u_max).exp();
                num / den
            }
            Profile::Uniform => (rho / self.width).powi(4),
        }
    }

    /// Inverse of `mass_fraction_within`: the gauge radius containing the
    /// given mass fraction. Solved by bisection to f64 accuracy.
    pub fn radius_of_mass_fraction(&self, frac: f64) -> f64 {
        let frac = frac.clamp(0.0, 1.0);
        let (mut lo, mut hi) = (0.0_f64, self.support_radius());
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.mass_fraction_within(mid) < frac {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Radius containing 99.9% of the bump's mass. For compact profiles this
    /// is essentially the support; for the gaussian profile it is about 3
    /// widths, far inside the 6-width truncation.
    pub fn effective_radius(&self) -> f64 {
        self.radius_of_mass_fraction(0.999)
    }

    fn dilated(&self, mu: f64) -> Bump {
        Bump {
            center: geom::dilate(mu, self.center),
            profile: self.profile,
            width: mu * self.width,
            mass: self.mass,
        }
    }
}

impl Density {
    pub fn new(bumps: Vec<Bump>, atoms: Vec<Atom>, c1_prime: f64) -> Result<Density> {
        Density::with_admissibility(bumps, atoms, c1_prime, false)
    }

    pub fn with_admissibility(
        bumps: Vec<Bump>,
        atoms: Vec<Atom>,
        c1_prime: f64,
        a1_admissible: bool,
    ) -> Result<Density> {
        let d = Density {
            bumps,
            atoms,
            c1_prime,
            a1_admissible,
        };
        d.validate()?;
        Ok(d)
    }

    /// The zero density (flat scenarios).
    pub fn zero(c1_prime: f64) -> Density {
        Density {
            bumps: Vec::new(),
            atoms: Vec::new(),
            c1_prime,
            a1_admissible: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1_prime > 0.0) || !self.c1_prime.is_finite() {
            return Err(Error::NonFiniteDensity(format!(
                "c1_prime must be a positive finite real, got {}",
                self.c1_prime
            )));
        }
        for b in &self.bumps {
            if !(b.width > 0.0) {
                return Err(Error::NonpositiveWidth(b.width));
            }
            if !b.center.is_finite() || !b.width.is_finite() || !b.mass.is_finite() {
                return Err(Error::NonFiniteDensity(format!("{b:?}")));
            }
        }
        for a in &self.atoms {
            if !a.location.is_finite() || !a.mass.is_finite() {
                return Err(Error::NonFiniteDensity(format!("{a:?}")));
            }
            // The log |y| factor of the normal kernel diverges on an atom at
            // the identity; such densities are rejected outright.
            if geom::koranyi_gauge(a.location) == 0.0 {
                return Err(Error::AtomAtOrigin);
            }
        }
        if self.a1_admissible {
            let (alpha, _) = self.alpha_beta();
            if alpha >= self.c1_prime {
                return Err(Error::NotA1Admissible {
                    alpha,
                    c1_prime: self.c1_prime,
                });
            }
        }
        Ok(())
    }

    /// Total positive mass `alpha` and total negative mass `beta` (both
    /// reported as nonnegative numbers), from the closed-form bump and atom
    /// masses.
    pub fn alpha_beta(&self) -> (f64, f64) {
        let mut alpha = 0.0;
        let mut beta = 0.0;
        for m in self
            .bumps
            .iter()
            .map(|b| b.mass)
            .chain(self.atoms.iter().map(|a| a.mass))
        {
            if m >= 0.0 {
                alpha += m;
            } else {
                beta += -m;
            }
        }
        (alpha, beta)
    }

    /// Total-variation mass `alpha + beta`.
    pub fn tv_mass(&self) -> f64 {
        let (a, b) = self.alpha_beta();
        a + b
    }

    /// Signed total mass.
    pub fn total_mass(&self) -> f64 {
        let (a, b) = self.alpha_beta();
        a - b
    }

    /// Pointwise value of the continuous (bump) part.
    pub fn eval_continuous(&self, y: Point) -> f64 {
        self.bumps.iter().map(|b| b.eval(y)).sum()
    }

    /// Largest gauge distance from the origin reached by any support.
    pub fn support_reach(&self) -> f64 {
        let bump_reach = self
            .bumps
            .iter()
            .map(|b| geom::koranyi_gauge(b.center) + b.support_radius())
            .fold(0.0_f64, f64::max);
        let atom_reach = self
            .atoms
            .iter()
            .map(|a| geom::koranyi_gauge(a.location))
            .fold(0.0_f64, f64::max);
        bump_reach.max(atom_reach)
    }

    /// Pushforward under the dilation `delta_mu` normalized to preserve
    /// masses: bump centers and atom locations map through `delta_mu`, widths
    /// scale by `mu`, and every signed mass is unchanged.
    pub fn dilated(&self, mu: f64) -> Density {
        assert!(mu > 0.0, "dilation factor must be positive, got {mu}");
        Density {
            bumps: self.bumps.iter().map(|b| b.dilated(mu)).collect(),
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    location: geom::dilate(mu, a.location),
                    mass: a.mass,
                })
                .collect(),
            c1_prime: self.c1_prime,
            a1_admissible: self.a1_admissible,
        }
    }

    /// The positive part `f^+` (keeps components with mass >= 0).
    pub fn positive_part(&self) -> Density {
        self.signed_part(true)
    }

    /// The negative part `-f^-` (keeps components with mass < 0, signs kept).
    pub fn negative_part(&self) -> Density {
        self.signed_part(false)
    }

    fn signed_part(&self, positive: bool) -> Density {
        Density {
            bumps: self
                .bumps
                .iter()
                .filter(|b| (b.mass >= 0.0) == positive)
                .copied()
                .collect(),
            atoms: self
                .atoms
                .iter()
                .filter(|a| (a.mass >= 0.0) == positive)
                .copied()
                .collect(),
            c1_prime: self.c1_prime,
            a1_admissible: false,
        }
    }

    /// Rescale the positive-part masses by `r_pos` and the negative-part
    /// masses by `r_neg`. By linearity of the potential this realizes weights
    /// of the form `e^{(r_pos) 4 u_+} e^{(r_neg) 4 u_-}` through a single field.
    pub fn scaled_parts(&self, r_pos: f64, r_neg: f64) -> Density {
        let scale = |m: f64| if m >= 0.0 { r_pos * m } else { r_neg * m };
        Density {
            bumps: self
                .bumps
                .iter()
                .map(|b| Bump {
                    mass: scale(b.mass),
                    ..*b
                })
                .collect(),
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    mass: scale(a.mass),
                    ..*a
                })
                .collect(),
            c1_prime: self.c1_prime,
            a1_admissible: false,
        }
    }
}
