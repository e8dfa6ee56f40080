//! Deterministic particle discretization of a density.
//!
//! Each bump is replaced by an equal-mass node cloud on gauge-polar shells;
//! the node kernel is softened at the local inter-node spacing so that the
//! discretized potential stays bounded inside bump supports. Atoms stay
//! exact. The cloud evaluator is smooth, cheap, and differentiable, which is
//! what the path optimizer and the ball-average estimators need; its accuracy
//! is cross-checked against the Monte Carlo evaluator by the test suite.

use crate::density::Density;
use crate::geom::{self, Point};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CloudResolution {
    pub radial: usize,
    pub lat: usize,
    pub lon: usize,
}

impl Default for CloudResolution {
    fn default() -> Self {
        // 720 nodes per bump.
        CloudResolution {
            radial: 10,
            lat: 6,
            lon: 12,
        }
    }
}

impl CloudResolution {
    pub fn nodes_per_bump(&self) -> usize {
        self.radial * self.lat * self.lon
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    pos: Point,
    /// log of the gauge of the node position.
    log_gauge: f64,
    mass: f64,
    /// Softening radius; the log-distance kernel is clamped below it.
    soft: f64,
}

#[derive(Clone, Copy, Debug)]
struct ExactAtom {
    pos: Point,
    log_gauge: f64,
    mass: f64,
}

/// Particle form of a density together with the potential normalization.
#[derive(Clone, Debug)]
pub struct PointCloud {
    nodes: Vec<Node>,
    atoms: Vec<ExactAtom>,
    inv_c1: f64,
}

impl PointCloud {
    pub fn build(density: &Density, res: CloudResolution) -> PointCloud {
        let mut nodes = Vec::with_capacity(density.bumps.len() * res.nodes_per_bump());
        for bump in &density.bumps {
            let node_mass = bump.mass / res.nodes_per_bump() as f64;
            for i in 0..res.radial {
                let lo = bump.radius_of_mass_fraction(i as f64 / res.radial as f64);
                let hi = bump.radius_of_mass_fraction((i as f64 + 1.0) / res.radial as f64);
                let rho = bump.radius_of_mass_fraction((i as f64 + 0.5) / res.radial as f64);
                // Local spacing: shell thickness vs angular arc at this shell.
                let arc = rho * std::f64::consts::PI / res.lat.max(res.lon) as f64;
                let soft = 0.5 * (hi - lo).max(arc).max(1e-12 * bump.width);
                for j in 0..res.lat {
                    let phi = -std::f64::consts::FRAC_PI_2
                        + std::f64::consts::PI * (j as f64 + 0.5) / res.lat as f64;
                    for k in 0..res.lon {
                        let theta =
                            2.0 * std::f64::consts::PI * (k as f64 + 0.5) / res.lon as f64;
                        let pos = geom::group_mul(
                            bump.center,
                            geom::gauge_polar_point(rho, phi, theta),
                        );
                        nodes.push(Node {
                            pos,
                            log_gauge: geom::koranyi_gauge(pos).max(1e-300).ln(),
                            mass: node_mass,
                            soft,
                        });
                    }
                }
            }
        }
        let atoms = density
            .atoms
            .iter()
            .map(|a| ExactAtom {
                pos: a.location,
                log_gauge: geom::koranyi_gauge(a.location).ln(),
                mass: a.mass,
            })
            .collect();
        PointCloud {
            nodes,
            atoms,
            inv_c1: 1.0 / density.c1_prime,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Discretized normal potential
    /// `u(x) = (1/c1') sum_i m_i (log|y_i| - log max(d(x, y_i), soft_i))`.
    pub fn eval_u(&self, x: Point) -> f64 {
        let mut acc = 0.0;
        for n in &self.nodes {
            let d = geom::koranyi_dist(x, n.pos).max(n.soft);
            acc += n.mass * (n.log_gauge - d.ln());
        }
        for a in &self.atoms {
            let d = geom::koranyi_dist(x, a.pos).max(1e-300);
            acc += a.mass * (a.log_gauge - d.ln());
        }
        self.inv_c1 * acc
    }

    /// Potential and its Euclidean-coordinate gradient in one pass.
    ///
    /// The gradient of `-log d(x, y)` is assembled from the gauge-quartic
    /// gradient pulled back through the left translation `x -> y^{-1} x`; it
    /// vanishes inside a node's softening radius (the kernel is clamped flat
    /// there).
    pub fn eval_u_grad(&self, x: Point) -> (f64, [f64; 3]) {
        let mut u = 0.0;
        let mut g = [0.0_f64; 3];
        for n in &self.nodes {
            let (val, grad) = log_dist_and_grad(x, n.pos, n.soft);
            u += n.mass * (n.log_gauge - val);
            g[0] -= n.mass * grad[0];
            g[1] -= n.mass * grad[1];
            g[2] -= n.mass * grad[2];
        }
        for a in &self.atoms {
            let (val, grad) = log_dist_and_grad(x, a.pos, 1e-12);
            u += a.mass * (a.log_gauge - val);
            g[0] -= a.mass * grad[0];
            g[1] -= a.mass * grad[1];
            g[2] -= a.mass * grad[2];
        }
        (
            self.inv_c1 * u,
            [self.inv_c1 * g[0], self.inv_c1 * g[1], self.inv_c1 * g[2]],
        )
    }

    /// Total node-and-atom mass (absolute value) inside a gauge ball; the
    /// discrete surrogate for the total-variation ball mass.
    pub fn tv_mass_in_ball(&self, center: Point, radius: f64) -> f64 {
        let mut m = 0.0;
        for n in &self.nodes {
            if geom::koranyi_dist(center, n.pos) < radius {
                m += n.mass.abs();
            }
        }
        for a in &self.atoms {
            if geom::koranyi_dist(center, a.pos) < radius {
                m += a.mass.abs();
            }
        }
        m
    }

    /// Positions of all nodes and atoms (candidate centers for covers).
    pub fn support_points(&self) -> Vec<Point> {
        self.nodes
            .iter()
            .map(|n| n.pos)
            .chain(self.atoms.iter().map(|a| a.pos))
            .collect()
    }
}

/// `(log max(d(x,y), soft), grad_x log d)`; the gradient is zero when clamped.
fn log_dist_and_grad(x: Point, y: Point, soft: f64) -> (f64, [f64; 3]) {
    let yi = geom::inverse(y);
    let v = geom::group_mul(yi, x);
    let s = v.x * v.x + v.y * v.y;
    let n4 = s * s + v.t * v.t;
    let d = n4.sqrt().sqrt();
    if d <= soft {
        return (soft.ln(), [0.0; 3]);
    }
    // grad_v of n4, pulled back through x -> y^{-1} x whose t-row Jacobian is
    // (2 yi.y, -2 yi.x, 1).
    let nx = 4.0 * v.x * s;
    let ny = 4.0 * v.y * s;
    let nt = 2.0 * v.t;
    let scale = 1.0 / (4.0 * n4);
    (
        d.ln(),
        [
            (nx + 2.0 * yi.y * nt) * scale,
            (ny - 2.0 * yi.x * nt) * scale,
            nt * scale,
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{Atom, Bump, Profile};

    #[test]
    fn empty_density_gives_zero_field() {
        let cloud = PointCloud::build(&Density::zero(1.0), CloudResolution::default());
        assert_eq!(cloud.node_count(), 0);
        assert_eq!(cloud.eval_u(Point::new(0.4, 0.2, -1.0)), 0.0);
    }

    #[test]
    fn atom_potential_is_exact() {
        let d = Density::new(
            vec![],
            vec![Atom {
                location: Point::new(1.0, 0.0, 0.0),
                mass: 2.0,
            }],
            4.0,
        )
        .unwrap();
        let cloud = PointCloud::build(&d, CloudResolution::default());
        let x = Point::new(3.0, 1.0, 0.5);
        let expect = 2.0 / 4.0
            * (geom::koranyi_gauge(Point::new(1.0, 0.0, 0.0)).ln()
                - geom::koranyi_dist(x, Point::new(1.0, 0.0, 0.0)).ln());
        assert!((cloud.eval_u(x) - expect).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = Density::new(
            vec![Bump {
                center: Point::new(0.5, -0.3, 0.2),
                profile: Profile::PolyBump,
                width: 0.8,
                mass: -0.7,
            }],
            vec![Atom {
                location: Point::new(-1.0, 0.4, 0.1),
                mass: 0.3,
            }],
            1.0,
        )
        .unwrap();
        let cloud = PointCloud::build(&d, CloudResolution::default());
        for x in [
            Point::new(1.2, 0.8, -0.4),
            Point::new(0.1, 0.0, 1.0),
            Point::new(-0.6, -0.6, 0.3),
        ] {
            let (_, grad) = cloud.eval_u_grad(x);
            let h = 1e-6;
            for (axis, g) in grad.iter().enumerate() {
                let mut plus = x;
                let mut minus = x;
                match axis {
                    0 => {
                        plus.x += h;
                        minus.x -= h;
                    }
                    1 => {
                        plus.y += h;
                        minus.y -= h;
                    }
                    _ => {
                        plus.t += h;
                        minus.t -= h;
                    }
                }
                let fd = (cloud.eval_u(plus) - cloud.eval_u(minus)) / (2.0 * h);
                assert!(
                    (fd - g).abs() < 1e-5 * (1.0 + g.abs()),
                    "axis {axis}: fd {fd} vs grad {g}"
                );
            }
        }
    }

    #[test]
    fn cloud_mass_bookkeeping() {
        let d = Density::new(
            vec![Bump {
                center: Point::new(2.0, 0.0, 0.0),
                profile: Profile::Uniform,
                width: 0.5,
                mass: -1.2,
            }],
            vec![],
            1.0,
        )
        .unwrap();
        let cloud = PointCloud::build(&d, CloudResolution::default());
        let total = cloud.tv_mass_in_ball(Point::new(2.0, 0.0, 0.0), 0.6);
        assert!((total - 1.2).abs() < 1e-12);
        let none = cloud.tv_mass_in_ball(Point::ORIGIN, 0.5);
        assert_eq!(none, 0.0);
    }
}
