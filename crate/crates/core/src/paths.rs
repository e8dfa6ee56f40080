//! Horizontal (contact) curves, weighted lengths, the Carnot-Caratheodory
//! distance, and the geodesic quasidistance `d_omega` by penalty-continuation
//! trajectory optimization.
//!
//! A path is piecewise-constant controls in the horizontal frame; the
//! t-coordinate is reconstructed in closed form per segment (never a free
//! variable), so every emitted trajectory is exactly contact. Following the
//! naming where `delta_omega` is the ball-integral quasidistance and
//! `d_omega` the weighted path infimum.

use crate::error::{Error, Result};
use crate::geom::{self, Ball, HorizontalVector, Point};
use crate::opt::{self, LbfgsConfig};
use crate::potential::Eval;
use crate::quad::{self, integrate_ball};
use crate::weights::WeightField;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A contact curve: start point plus piecewise-constant frame controls on
/// equal parameter intervals.
#[derive(Clone, Debug)]
pub struct HorizontalPath {
    pub start: Point,
    pub controls: Vec<HorizontalVector>,
}

impl HorizontalPath {
    pub fn new(start: Point, controls: Vec<HorizontalVector>) -> HorizontalPath {
        assert!(!controls.is_empty());
        HorizontalPath { start, controls }
    }

    /// Straight horizontal segment from `start` with total displacement `v`.
    pub fn straight(start: Point, v: HorizontalVector, segments: usize) -> HorizontalPath {
        HorizontalPath::new(start, vec![v; segments])
    }

    pub fn segments(&self) -> usize {
        self.controls.len()
    }

    /// Trajectory points `z_0 .. z_N`. Per segment the planar motion is
    /// linear and `t' = 2(y a - x b)` integrates exactly to
    /// `t_{i+1} = t_i + 2 (y_i a_i - x_i b_i) / N` (the cross terms cancel).
    pub fn reconstruct(&self) -> Vec<Point> {
        let n = self.segments();
        let h = 1.0 / n as f64;
        let mut pts = Vec::with_capacity(n + 1);
        let mut z = self.start;
        pts.push(z);
        for c in &self.controls {
            z = Point {
                x: z.x + c.a * h,
                y: z.y + c.b * h,
                t: z.t + 2.0 * (z.y * c.a - z.x * c.b) * h,
            };
            pts.push(z);
        }
        pts
    }

    pub fn endpoint(&self) -> Point {
        *self.reconstruct().last().unwrap()
    }

    /// Segment midpoints (exact, at mid-parameter) with their horizontal
    /// lengths.
    pub fn midpoints(&self) -> Vec<(Point, f64)> {
        let n = self.segments();
        let h = 1.0 / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut z = self.start;
        for c in &self.controls {
            let m = Point {
                x: z.x + c.a * h / 2.0,
                y: z.y + c.b * h / 2.0,
                t: z.t + (z.y * c.a - z.x * c.b) * h,
            };
            out.push((m, c.norm() * h));
            z = Point {
                x: z.x + c.a * h,
                y: z.y + c.b * h,
                t: z.t + 2.0 * (z.y * c.a - z.x * c.b) * h,
            };
        }
        out
    }

    pub fn unweighted_length(&self) -> f64 {
        let h = 1.0 / self.segments() as f64;
        self.controls.iter().map(|c| c.norm() * h).sum()
    }

    /// The same trajectory traversed backwards.
    pub fn reversed(&self) -> HorizontalPath {
        let end = self.endpoint();
        let controls = self
            .controls
            .iter()
            .rev()
            .map(|c| HorizontalVector::new(-c.a, -c.b))
            .collect();
        HorizontalPath::new(end, controls)
    }

    /// Refine to `factor` times as many segments (same trajectory).
    pub fn upsampled(&self, factor: usize) -> HorizontalPath {
        let mut controls = Vec::with_capacity(self.segments() * factor);
        for c in &self.controls {
            for _ in 0..factor {
                controls.push(*c);
            }
        }
        HorizontalPath::new(self.start, controls)
    }
}

/// Length of the path against `omega^{1/4}`:
/// `sum_i omega^{1/4}(m_i) * (horizontal length of segment i)`, the
/// homogeneous-dimension-4 weighted length.
pub fn weighted_length(path: &HorizontalPath, w: &WeightField) -> f64 {
    path.midpoints()
        .into_iter()
        .map(|(m, len)| w.quarter_root_and_grad(m).0 * len)
        .sum()
}

/// Weighted length against an arbitrary pointwise weight.
pub fn weighted_length_of<F>(path: &HorizontalPath, omega: F) -> f64
where
    F: Fn(Point) -> f64,
{
    path.midpoints()
        .into_iter()
        .map(|(m, len)| omega(m).powf(0.25) * len)
        .sum()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathOptimizerConfig {
    pub segments: usize,
    pub restarts: usize,
    /// L-BFGS iterations per penalty stage.
    pub max_iterations: usize,
    pub step_tolerance: f64,
    /// Strictly increasing endpoint penalty weights, one per stage.
    pub endpoint_penalty_schedule: Vec<f64>,
    /// Containment penalty at the first stage; scales with the schedule.
    pub containment_penalty: f64,
    /// Endpoint miss tolerance as a fraction of d(p, q).
    pub endpoint_tolerance_factor: f64,
    pub seed: u64,
}

impl Default for PathOptimizerConfig {
    fn default() -> Self {
        PathOptimizerConfig {
            segments: 64,
            restarts: 8,
            max_iterations: 60,
            step_tolerance: 1e-12,
            endpoint_penalty_schedule: vec![1e2, 1e3, 1e4, 1e6, 1e8],
            containment_penalty: 10.0,
            endpoint_tolerance_factor: 1e-4,
            seed: 0,
        }
    }
}

impl PathOptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments < 8 {
            return Err(Error::FamilyGeneration(format!(
                "optimizer needs at least 8 segments, got {}",
                self.segments
            )));
        }
        if self.endpoint_penalty_schedule.is_empty()
            || self
                .endpoint_penalty_schedule
                .windows(2)
                .any(|w| w[1] <= w[0])
        {
            return Err(Error::FamilyGeneration(
                "endpoint penalty schedule must be nonempty and strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> PathOptimizerConfig {
        PathOptimizerConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Outcome of a geodesic optimization.
#[derive(Clone, Debug)]
pub struct GeodesicResult {
    /// Weighted length of the best feasible path (penalties excluded).
    pub length: f64,
    /// Gauge distance from the path endpoint to the target.
    pub endpoint_miss: f64,
    /// Fraction of the trajectory arclength outside the containment ball
    /// (0 when no containment constraint was imposed).
    pub outside_fraction: f64,
    pub path: HorizontalPath,
}

struct PathProblem<'a> {
    start: Point,
    target: Point,
    d_pq: f64,
    weight: Option<&'a WeightField>,
    containment: Option<Ball>,
    endpoint_penalty: f64,
    containment_penalty: f64,
}

/// `(gauge^4, grad_z gauge^4)` of `d(z, anchor)` as a function of `z`.
fn dist4_grad(z: Point, anchor: Point) -> (f64, [f64; 3]) {
    let g = geom::inverse(anchor);
    let v = geom::group_mul(g, z);
    let s = v.x * v.x + v.y * v.y;
    let n4 = s * s + v.t * v.t;
    let nx = 4.0 * v.x * s;
    let ny = 4.0 * v.y * s;
    let nt = 2.0 * v.t;
    (n4, [nx + 2.0 * g.y * nt, ny - 2.0 * g.x * nt, nt])
}

impl<'a> PathProblem<'a> {
    /// Penalized objective and its gradient with respect to the flattened
    /// controls `[a_0, b_0, a_1, b_1, ...]`, by one reverse (adjoint) sweep.
    fn objective(&self, controls: &[f64], grad: &mut [f64]) -> f64 {
        let n = controls.len() / 2;
        let h = 1.0 / n as f64;

        // Forward pass.
        let mut states = Vec::with_capacity(n + 1);
        states.push(self.start);
        for i in 0..n {
            let (a, b) = (controls[2 * i], controls[2 * i + 1]);
            let z = states[i];
            states.push(Point {
                x: z.x + a * h,
                y: z.y + b * h,
                t: z.t + 2.0 * (z.y * a - z.x * b) * h,
            });
        }

        let mut obj = 0.0;
        // Midpoint data: weight value, weight gradient, midpoint, length.
        let mut phi = vec![1.0_f64; n];
        let mut phi_grad = vec![[0.0_f64; 3]; n];
        let mut lens = vec![0.0_f64; n];
        let mut mids = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = (controls[2 * i], controls[2 * i + 1]);
            let z = states[i];
            let m = Point {
                x: z.x + a * h / 2.0,
                y: z.y + b * h / 2.0,
                t: z.t + (z.y * a - z.x * b) * h,
            };
            mids.push(m);
            let len = (a * a + b * b + 1e-300).sqrt() * h;
            lens[i] = len;
            if let Some(w) = self.weight {
                let (v, g) = w.quarter_root_and_grad(m);
                phi[i] = v;
                phi_grad[i] = g;
            }
            obj += phi[i] * len;
        }

        // Endpoint penalty: P_e * d^2(z_N, target) / d_pq.
        let z_n = states[n];
        let (n4_end, n4_grad_end) = dist4_grad(z_n, self.target);
        let d2_end = n4_end.sqrt();
        obj += self.endpoint_penalty * d2_end / self.d_pq;

        // Containment penalty: P_c * sum relu(d(m_i, c) - R)^2 * h.
        let mut relu = vec![0.0_f64; n];
        if let Some(ball) = &self.containment {
            for i in 0..n {
                let d = geom::koranyi_dist(ball.center, mids[i]);
                let excess = d - ball.radius;
                if excess > 0.0 {
                    relu[i] = excess;
                    obj += self.containment_penalty * excess * excess * h;
                }
            }
        }

        // Backward pass.
        let mut lambda = if d2_end > 1e-300 {
            let c = self.endpoint_penalty / (self.d_pq * 2.0 * d2_end);
            [
                c * n4_grad_end[0],
                c * n4_grad_end[1],
                c * n4_grad_end[2],
            ]
        } else {
            [0.0; 3]
        };
        for i in (0..n).rev() {
            let (a, b) = (controls[2 * i], controls[2 * i + 1]);
            let z = states[i];
            // Direct gradient with respect to the midpoint.
            let mut gm = [
                lens[i] * phi_grad[i][0],
                lens[i] * phi_grad[i][1],
                lens[i] * phi_grad[i][2],
            ];
            if relu[i] > 0.0 {
                let ball = self.containment.as_ref().unwrap();
                let (n4, n4g) = dist4_grad(mids[i], ball.center);
                let d = n4.sqrt().sqrt();
                let c = self.containment_penalty * 2.0 * relu[i] * h / (4.0 * d * d * d);
                gm[0] += c * n4g[0];
                gm[1] += c * n4g[1];
                gm[2] += c * n4g[2];
            }
            // Control gradients: midpoint route + next-state route + the
            // explicit length factor.
            let norm = (a * a + b * b + 1e-300).sqrt();
            grad[2 * i] = gm[0] * (h / 2.0)
                + gm[2] * (z.y * h)
                + lambda[0] * h
                + lambda[2] * (2.0 * z.y * h)
                + phi[i] * h * a / norm;
            grad[2 * i + 1] = gm[1] * (h / 2.0)
                + gm[2] * (-z.x * h)
                + lambda[1] * h
                + lambda[2] * (-2.0 * z.x * h)
                + phi[i] * h * b / norm;
            // Adjoint update: lambda_i = (dm/dz)^T gm + (dF/dz)^T lambda.
            lambda = [
                gm[0] + gm[2] * (-b * h) + lambda[0] + lambda[2] * (-2.0 * b * h),
                gm[1] + gm[2] * (a * h) + lambda[1] + lambda[2] * (2.0 * a * h),
                gm[2] + lambda[2],
            ];
        }
        obj
    }
}

/// Initial controls: straight planar interpolation plus a circular-arc bulge
/// whose amplitude is solved (on the discrete reconstruction) to absorb the
/// vertical gap. Restart 0 is the solved arc; later restarts jitter it.
fn initial_controls(v: Point, n: usize, restart: usize, seed: u64) -> Vec<f64> {
    let planar = (v.x * v.x + v.y * v.y).sqrt();
    let area = -v.t / 4.0;
    let base = if planar > 0.35 * area.abs().sqrt().max(1e-12) && planar > 1e-12 {
        // Arc family through the planar endpoints: bisect the bulge angle on
        // the discrete reconstruction until the vertical gap closes.
        let t_end = |kappa: f64| -> f64 {
            let c = arc_controls(v, n, kappa);
            reconstruct_t(&c, n)
        };
        let (mut lo, mut hi) = (-3.05_f64, 3.05_f64);
        let (t_lo, t_hi) = (t_end(lo), t_end(hi));
        if (t_lo - v.t) * (t_hi - v.t) > 0.0 {
            // Target outside the single-arc family; saturate at the closer end.
            let kappa = if (t_lo - v.t).abs() < (t_hi - v.t).abs() {
                lo
            } else {
                hi
            };
            arc_controls(v, n, kappa)
        } else {
            let increasing = t_hi > t_lo;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if (t_end(mid) < v.t) == increasing {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            arc_controls(v, n, 0.5 * (lo + hi))
        }
    } else {
        // Nearly vertical target: circle through the origin enclosing the
        // required area, plus a straight correction for the planar residue.
        circle_controls(v, n, area)
    };
    if restart == 0 {
        return base;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(quad::subseed(seed, &[0x7265_7374, restart as u64]));
    let scale = geom::koranyi_gauge(v).max(1e-9) * (0.05 + 0.10 * (restart as f64).min(4.0));
    base.iter()
        .map(|c| c + scale * rng.gen_range(-1.0..1.0))
        .collect()
}

/// Planar circular arc from the origin to the planar part of `v` with half
/// central angle `kappa` (0 = straight chord), sampled as N controls.
fn arc_controls(v: Point, n: usize, kappa: f64) -> Vec<f64> {
    let planar = (v.x * v.x + v.y * v.y).sqrt();
    if kappa.abs() < 1e-9 {
        return (0..n).flat_map(|_| [v.x, v.y]).collect();
    }
    let ex = v.x / planar;
    let ey = v.y / planar;
    // Circle of radius R through 0 and w; center on the perpendicular
    // bisector at signed offset R cos(kappa).
    let r = planar / (2.0 * kappa.sin().abs());
    let side = kappa.signum();
    let cx = 0.5 * v.x - side * (-ey) * r * kappa.cos();
    let cy = 0.5 * v.y - side * ex * r * kappa.cos();
    let phi0 = (0.0 - cy).atan2(0.0 - cx);
    // Sweep of 2 kappa, oriented so the arc ends at w.
    let sweep = 2.0 * kappa;
    let mut controls = Vec::with_capacity(2 * n);
    let mut prev = (0.0, 0.0);
    for i in 1..=n {
        let phi = phi0 + sweep * i as f64 / n as f64;
        let p = (cx + r * phi.cos(), cy + r * phi.sin());
        controls.push((p.0 - prev.0) * n as f64);
        controls.push((p.1 - prev.1) * n as f64);
        prev = p;
    }
    controls
}

/// One full circle (vertical-gap absorber) followed by a straight stretch to
/// the planar target.
fn circle_controls(v: Point, n: usize, area: f64) -> Vec<f64> {
    let r = (area.abs() / std::f64::consts::PI).sqrt().max(1e-9);
    let dir = if area >= 0.0 { 1.0 } else { -1.0 };
    let n_circle = (3 * n / 4).max(1);
    let n_line = n - n_circle;
    let speed = 2.0 * std::f64::consts::PI * r * n as f64 / n_circle as f64;
    let mut controls = Vec::with_capacity(2 * n);
    for i in 0..n_circle {
        let s = (i as f64 + 0.5) / n_circle as f64;
        let ang = 2.0 * std::f64::consts::PI * s;
        controls.push(speed * ang.cos());
        controls.push(dir * speed * ang.sin());
    }
    let line_n = n_line.max(1) as f64;
    for _ in 0..n_line {
        controls.push(v.x * n as f64 / line_n);
        controls.push(v.y * n as f64 / line_n);
    }
    controls
}

/// Vertical coordinate of the reconstruction from the origin.
fn reconstruct_t(controls: &[f64], n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let (mut x, mut y, mut t) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (controls[2 * i], controls[2 * i + 1]);
        t += 2.0 * (y * a - x * b) * h;
        x += a * h;
        y += b * h;
    }
    t
}

fn path_from_flat(start: Point, controls: &[f64]) -> HorizontalPath {
    let hv = controls
        .chunks_exact(2)
        .map(|c| HorizontalVector::new(c[0], c[1]))
        .collect();
    HorizontalPath::new(start, hv)
}

fn evaluate_candidate(
    problem_start: Point,
    target: Point,
    weight: Option<&WeightField>,
    containment: Option<&Ball>,
    controls: &[f64],
) -> GeodesicResult {
    let path = path_from_flat(problem_start, controls);
    let length = match weight {
        Some(w) => weighted_length(&path, w),
        None => path.unweighted_length(),
    };
    let endpoint_miss = geom::koranyi_dist(path.endpoint(), target);
    let outside_fraction = match containment {
        Some(ball) => {
            // Grazing the sphere within 0.1% of the radius counts as inside;
            // the containment is a soft constraint and the optimum may touch
            // the boundary.
            let slack = ball.radius * 1.001;
            let mids = path.midpoints();
            let total: f64 = mids.iter().map(|(_, l)| l).sum();
            let outside: f64 = mids
                .iter()
                .filter(|(m, _)| geom::koranyi_dist(ball.center, *m) > slack)
                .map(|(_, l)| l)
                .sum();
            if total > 0.0 {
                outside / total
            } else {
                0.0
            }
        }
        None => 0.0,
    };
    GeodesicResult {
        length,
        endpoint_miss,
        outside_fraction,
        path,
    }
}

fn optimize_from(
    start: Point,
    target: Point,
    weight: Option<&WeightField>,
    containment: Option<Ball>,
    cfg: &PathOptimizerConfig,
    init: Vec<f64>,
) -> GeodesicResult {
    let d_pq = geom::koranyi_dist(start, target);
    let mut controls = init;
    let first = cfg.endpoint_penalty_schedule[0];
    for &p_end in &cfg.endpoint_penalty_schedule {
        let problem = PathProblem {
            start,
            target,
            d_pq,
            weight,
            containment,
            endpoint_penalty: p_end,
            containment_penalty: cfg.containment_penalty * (p_end / first),
        };
        opt::minimize(
            |c, g| problem.objective(c, g),
            &mut controls,
            &LbfgsConfig {
                max_iterations: cfg.max_iterations,
                grad_tol: 1e-10,
                step_tol: cfg.step_tolerance,
                memory: 8,
            },
        );
    }
    evaluate_candidate(start, target, weight, containment.as_ref(), &controls)
}

fn optimize(
    start: Point,
    target: Point,
    weight: Option<&WeightField>,
    containment: Option<Ball>,
    cfg: &PathOptimizerConfig,
) -> Result<GeodesicResult> {
    cfg.validate()?;
    let d_pq = geom::koranyi_dist(start, target);
    if d_pq == 0.0 {
        return Err(Error::DegenerateBall(start));
    }
    let v = geom::group_mul(geom::inverse(start), target);
    let n = cfg.segments;
    let candidates: Vec<GeodesicResult> = (0..cfg.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let init = initial_controls(v, n, r, cfg.seed);
            optimize_from(start, target, weight, containment, cfg, init)
        })
        .collect();
    let tolerance = cfg.endpoint_tolerance_factor * d_pq;
    let feasible = candidates
        .iter()
        .filter(|c| c.endpoint_miss <= tolerance)
        .min_by(|a, b| a.length.total_cmp(&b.length));
    match feasible {
        Some(best) => Ok(best.clone()),
        None => {
            let best_miss = candidates
                .iter()
                .map(|c| c.endpoint_miss)
                .fold(f64::INFINITY, f64::min);
            Err(Error::EndpointNotConverged {
                restarts: cfg.restarts,
                best_miss,
                tolerance,
            })
        }
    }
}

/// Carnot-Caratheodory distance estimate: best horizontal length over
/// optimized controls with the endpoint enforced by penalty continuation.
pub fn cc_distance(p: Point, q: Point, cfg: &PathOptimizerConfig) -> Result<GeodesicResult> {
    optimize(p, q, None, None, cfg)
}

/// The geodesic quasidistance: minimized `omega^{1/4}`-length over contact
/// paths from `p` to `q`, softly contained in `ball_xy(p, q)`. The result
/// reports the arclength fraction left outside the ball.
pub fn d_omega(
    p: Point,
    q: Point,
    w: &WeightField,
    cfg: &PathOptimizerConfig,
) -> Result<GeodesicResult> {
    let ball = geom::ball_xy(p, q)?;
    optimize(p, q, Some(w), Some(ball), cfg)
}

/// The ball-integral quasidistance
/// `delta_omega(p, q) = (int_{B_xy} omega)^(1/4)`.
pub fn delta_omega(p: Point, q: Point, w: &WeightField) -> Result<Eval> {
    let ball = geom::ball_xy(p, q)?;
    let scheme = w.scheme().with_seed(quad::subseed(
        w.scheme().seed,
        &[
            0x646f_6d67,
            ball.center.x.to_bits(),
            ball.center.y.to_bits(),
            ball.center.t.to_bits(),
        ],
    ));
    let r = integrate_ball(|z| w.eval(z), &ball, &scheme).map_err(|e| e.on_ball(&ball))?;
    let value = r.value.max(0.0).powf(0.25);
    let std_error = if r.value > 0.0 {
        0.25 * r.std_error / r.value.powf(0.75)
    } else {
        r.std_error
    };
    Ok(Eval { value, std_error })
}

/// Warm-started refinement at a finer control resolution (exposed for the
/// monotone-refinement checks).
pub fn refine_geodesic(
    result: &GeodesicResult,
    target: Point,
    w: Option<&WeightField>,
    containment: Option<Ball>,
    cfg: &PathOptimizerConfig,
    factor: usize,
) -> GeodesicResult {
    let upsampled = result.path.upsampled(factor);
    let flat: Vec<f64> = upsampled
        .controls
        .iter()
        .flat_map(|c| [c.a, c.b])
        .collect();
    optimize_from(result.path.start, target, w, containment, cfg, flat)
}
