//! Theorem-level experiments: the two-quasidistance comparability scan, the
//! singular-set construction with its kernel bound, the contact-projection
//! arclength claim, the two-weight balance condition, the weighted
//! Sobolev-Poincare verifier, and the power-mean probe.

use crate::density::Density;
use crate::error::{Error, Result};
use crate::geom::{self, Ball, HorizontalVector, Point};
use crate::paths::{self, HorizontalPath, PathOptimizerConfig};
use crate::potential::PotentialField;
use crate::quad::{self, integrate_ball};
use crate::weights::{ball_average, BallFamily, WeightField, EXPONENT_CLAMP};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

// ---------------------------------------------------------------------------
// Strong-A-infinity comparability scan
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairDirection {
    /// Offsets along random horizontal directions. All such pairs are
    /// congruent after normalization, so flat-case ratios are constant.
    Horizontal,
    /// Offsets drawn from the whole gauge sphere (exploratory; the flat-case
    /// ratio then genuinely varies with the pair shape).
    Sphere,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairSampleSpec {
    pub count: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub region: Ball,
    pub direction: PairDirection,
    pub seed: u64,
}

impl PairSampleSpec {
    pub fn generate(&self) -> Vec<(Point, Point)> {
        let mut rng = ChaCha8Rng::seed_from_u64(quad::subseed(self.seed, &[0x7061_6972]));
        (0..self.count)
            .map(|_| {
                let (local, _) = quad::sample_local_in_ball(self.region.radius, &mut rng);
                let p = geom::group_mul(self.region.center, local);
                let s = (self.scale_min.ln()
                    + (self.scale_max.ln() - self.scale_min.ln()) * rng.gen::<f64>())
                .exp();
                let theta = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
                let offset = match self.direction {
                    PairDirection::Horizontal => {
                        Point::new(s * theta.cos(), s * theta.sin(), 0.0)
                    }
                    PairDirection::Sphere => {
                        let phi = -std::f64::consts::FRAC_PI_2
                            + std::f64::consts::PI * rng.gen::<f64>();
                        geom::gauge_polar_point(s, phi, theta)
                    }
                };
                (p, geom::group_mul(p, offset))
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairRow {
    pub p: Point,
    pub q: Point,
    pub delta: f64,
    pub delta_std_error: f64,
    pub d: f64,
    pub endpoint_miss: f64,
    pub outside_fraction: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparabilityReport {
    pub rows: Vec<PairRow>,
    pub sup_delta_over_d: f64,
    pub sup_d_over_delta: f64,
    /// Pairs whose path optimization failed (excluded from the suprema).
    pub failures: usize,
    pub alpha: f64,
    pub beta: f64,
    pub c1_prime: f64,
    pub seed: u64,
}

/// Scan both quasidistance ratios over a seeded pair sample. Every pair is
/// first dilated to gauge separation 2 (both ratios are invariant under that
/// normalization), then `delta_omega` and `d_omega` are measured against the
/// identically transformed weight.
pub fn strong_ainfty_scan(
    w: &WeightField,
    pairs: &PairSampleSpec,
    cfg: &PathOptimizerConfig,
) -> Result<ComparabilityReport> {
    cfg.validate()?;
    let sample = pairs.generate();
    let outcomes: Vec<std::result::Result<PairRow, ()>> = sample
        .par_iter()
        .enumerate()
        .map(|(idx, (p, q))| {
            let (nf, x, y) = w
                .field()
                .normalize_to_unit_separation(*p, *q)
                .map_err(|_| ())?;
            let w_norm = WeightField::new(Arc::new(nf), w.exponent);
            let delta = paths::delta_omega(x, y, &w_norm).map_err(|_| ())?;
            let pair_cfg = cfg.with_seed(quad::subseed(cfg.seed, &[0x7363_616e, idx as u64]));
            let geo = paths::d_omega(x, y, &w_norm, &pair_cfg).map_err(|_| ())?;
            if geo.outside_fraction >= 0.01 {
                return Err(());
            }
            Ok(PairRow {
                p: *p,
                q: *q,
                delta: delta.value,
                delta_std_error: delta.std_error,
                d: geo.length,
                endpoint_miss: geo.endpoint_miss,
                outside_fraction: geo.outside_fraction,
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = 0;
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(()) => failures += 1,
        }
    }
    let mut sup_delta_over_d = 0.0_f64;
    let mut sup_d_over_delta = 0.0_f64;
    for r in &rows {
        if r.delta > 0.0 && r.d > 0.0 {
            sup_delta_over_d = sup_delta_over_d.max(r.delta / r.d);
            sup_d_over_delta = sup_d_over_delta.max(r.d / r.delta);
        }
    }
    let (alpha, beta) = w.field().density().alpha_beta();
    Ok(ComparabilityReport {
        rows,
        sup_delta_over_d,
        sup_d_over_delta,
        failures,
        alpha,
        beta,
        c1_prime: w.field().c1_prime(),
        seed: pairs.seed,
    })
}

// ---------------------------------------------------------------------------
// Singular set (Cartan-type cover)
// ---------------------------------------------------------------------------

/// Cover of the set of centers violating the linear ball-mass bound
/// `mass(B(x, r)) <= r * beta / epsilon`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SingularSet {
    /// The emitted cover (5x enlargements of the selected violating balls).
    pub cover: Vec<Ball>,
    /// The disjoint violating balls the cover was grown from.
    pub selected: Vec<Ball>,
    pub epsilon: f64,
    /// Total-variation mass of the driving measure on the region.
    pub beta: f64,
    pub sum_diameters: f64,
}

impl SingularSet {
    pub fn covers(&self, p: Point) -> bool {
        self.cover.iter().any(|b| b.contains(p))
    }

    pub fn empty(epsilon: f64, beta: f64) -> SingularSet {
        SingularSet {
            cover: Vec::new(),
            selected: Vec::new(),
            epsilon,
            beta,
            sum_diameters: 0.0,
        }
    }
}

/// Discrete measure backing the cover construction: atoms exactly, bumps by
/// a dense equal-mass particle cloud, both restricted to the region.
struct MassModel {
    points: Vec<(Point, f64)>,
    total: f64,
}

impl MassModel {
    fn build(density: &Density, region: &Ball) -> MassModel {
        let res = crate::cloud::CloudResolution {
            radial: 24,
            lat: 10,
            lon: 20,
        };
        let cloud = crate::cloud::PointCloud::build(density, res);
        let mut points: Vec<(Point, f64)> = cloud
            .support_points()
            .into_iter()
            .zip(mass_list(density, &res))
            .filter(|(p, _)| region.contains(*p))
            .collect();
        points.retain(|(_, m)| *m > 0.0);
        let total = points.iter().map(|(_, m)| m).sum();
        MassModel { points, total }
    }

    /// Largest dyadic radius `eps * 2^{-k}` (k = 0..=40) at which the mass
    /// bound is violated at `x`, if any.
    fn max_violating_radius(&self, x: Point, epsilon: f64, beta: f64) -> Option<f64> {
        let mut local: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter_map(|(p, m)| {
                let d = geom::koranyi_dist(x, *p);
                if d < epsilon {
                    Some((d, *m))
                } else {
                    None
                }
            })
            .collect();
        if local.is_empty() {
            return None;
        }
        local.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best: Option<f64> = None;
        for k in 0..=40 {
            let r = epsilon * 0.5_f64.powi(k);
            let threshold = r * beta / epsilon;
            // Mass strictly inside radius r.
            let idx = local.partition_point(|(d, _)| *d < r);
            let mass: f64 = local[..idx].iter().map(|(_, m)| m).sum();
            if mass > threshold {
                best = Some(r);
                break; // radii scanned in decreasing order; first hit is max
            }
        }
        best
    }
}

/// Per-support-point absolute node masses, in the same order as
/// `PointCloud::support_points` (bump nodes first, then atoms).
fn mass_list(density: &Density, res: &crate::cloud::CloudResolution) -> Vec<f64> {
    let mut masses = Vec::new();
    for b in &density.bumps {
        let nm = b.mass.abs() / res.nodes_per_bump() as f64;
        masses.extend(std::iter::repeat(nm).take(res.nodes_per_bump()));
    }
    for a in &density.atoms {
        masses.push(a.mass.abs());
    }
    masses
}

/// Greedy Vitali construction of the singular cover for the total-variation
/// measure of `density` restricted to `region`.
///
/// Candidate centers are the measure's own support points plus a local
/// lattice of pitch `epsilon/10` around each atom; radii are scanned over
/// dyadic multiples of `epsilon`. Maximal violating balls are selected
/// disjointly by decreasing radius and emitted as their 5x enlargements,
/// which forces the diameter budget `sum diam < 10 epsilon` whenever the
/// selected balls genuinely violate the mass bound.
pub fn cartan_singular_set(
    density: &Density,
    region: &Ball,
    epsilon: f64,
) -> Result<SingularSet> {
    if !(epsilon > 0.0 && epsilon <= 0.05) {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    let model = MassModel::build(density, region);
    let beta = model.total;
    if beta == 0.0 {
        return Ok(SingularSet::empty(epsilon, beta));
    }

    // Candidate centers.
    let mut candidates: Vec<Point> = model.points.iter().map(|(p, _)| *p).collect();
    let pitch = epsilon / 10.0;
    for atom in &density.atoms {
        if !region.contains(atom.location) {
            continue;
        }
        let steps = 12i32;
        for i in -steps..=steps {
            for j in -steps..=steps {
                for k in -steps..=steps {
                    let local = Point::new(
                        i as f64 * pitch,
                        j as f64 * pitch,
                        k as f64 * pitch * pitch * 14.4,
                    );
                    if geom::koranyi_gauge(local) <= 1.2 * epsilon {
                        candidates.push(geom::group_mul(atom.location, local));
                    }
                }
            }
        }
    }

    // Maximal violating radius per candidate.
    let mut violating: Vec<(usize, Point, f64)> = candidates
        .par_iter()
        .enumerate()
        .filter_map(|(i, x)| {
            model
                .max_violating_radius(*x, epsilon, beta)
                .map(|r| (i, *x, r))
        })
        .collect();
    violating.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));

    // Greedy disjoint selection (Vitali).
    let mut selected: Vec<Ball> = Vec::new();
    for (_, x, r) in &violating {
        let disjoint = selected
            .iter()
            .all(|s| geom::koranyi_dist(s.center, *x) >= s.radius + r);
        if disjoint {
            selected.push(Ball {
                center: *x,
                radius: *r,
            });
        }
    }
    let cover: Vec<Ball> = selected.iter().map(|b| b.scaled(5.0)).collect();
    let sum_diameters: f64 = cover.iter().map(|b| 2.0 * b.radius).sum();
    if sum_diameters >= 10.0 * epsilon {
        let mut profile = String::new();
        for b in selected.iter().take(8) {
            profile.push_str(&format!(
                "B(({:.3},{:.3},{:.3}), {:.3e}) -> mass {:.3e}; ",
                b.center.x,
                b.center.y,
                b.center.t,
                b.radius,
                model
                    .points
                    .iter()
                    .filter(|(p, _)| geom::koranyi_dist(b.center, *p) < b.radius)
                    .map(|(_, m)| m)
                    .sum::<f64>()
            ));
        }
        return Err(Error::CoverBudgetExceeded {
            total: sum_diameters,
            budget: 10.0 * epsilon,
            profile,
        });
    }
    // Every violating candidate must be absorbed by the cover.
    let set = SingularSet {
        cover,
        selected,
        epsilon,
        beta,
        sum_diameters,
    };
    for (_, x, _) in &violating {
        if !set.covers(*x) {
            return Err(Error::CoverBudgetExceeded {
                total: sum_diameters,
                budget: 10.0 * epsilon,
                profile: format!(
                    "violating center ({}, {}, {}) escaped the cover; refine the candidate grid",
                    x.x, x.y, x.t
                ),
            });
        }
    }
    Ok(set)
}

/// Recheck the linear mass bound at probe points outside the cover, over all
/// dyadic radii. Returns the number of violations (0 means verified).
pub fn verify_mass_bound(
    density: &Density,
    region: &Ball,
    set: &SingularSet,
    probes: &[Point],
) -> usize {
    let model = MassModel::build(density, region);
    probes
        .iter()
        .filter(|x| !set.covers(**x))
        .filter(|x| {
            model
                .max_violating_radius(**x, set.epsilon, set.beta)
                .is_some()
        })
        .count()
}

// ---------------------------------------------------------------------------
// Centered-kernel bound on the complement of the cover
// ---------------------------------------------------------------------------

/// The explicit series constant of the dyadic-annulus kernel estimate:
/// `C0 = 10 sum_{j=-1}^inf (max(|log 2^-j|, |log 2^-(j+1)|) + log 10) 2^-j / c1'`,
/// evaluated by partial sums until they stabilize below 1e-12.
pub fn c0_constant(c1_prime: f64) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    let ln10 = 10.0_f64.ln();
    let mut sum = 0.0;
    for j in -1i32..=200 {
        let own = ((-j) as f64 * ln2).abs().max(((-(j + 1)) as f64 * ln2).abs());
        let term = (own + ln10) * 0.5_f64.powi(j);
        sum += term;
        if j > 1 && term < 1e-12 {
            break;
        }
    }
    10.0 * sum / c1_prime
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelBoundRow {
    pub probe: Point,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelBoundReport {
    pub bound: f64,
    pub max_abs: f64,
    pub rows: Vec<KernelBoundRow>,
    pub violations: usize,
}

/// Check `|u_hat_near(x)| <= C0 beta / epsilon` (plus three standard errors)
/// at probes in `10B` outside the covering balls.
pub fn u_hat1_bound_check(
    field: &PotentialField,
    b10: &Ball,
    set: &SingularSet,
    epsilon: f64,
    probes: &[Point],
) -> Result<KernelBoundReport> {
    let bound = c0_constant(field.c1_prime()) * set.beta / epsilon;
    let rows: Result<Vec<KernelBoundRow>> = probes
        .par_iter()
        .map(|x| {
            if set.covers(*x) {
                return Err(Error::ProbeOutsideBall {
                    probe: *x,
                    center: b10.center,
                    radius: b10.radius,
                });
            }
            let e = field.eval_u_hat1(b10, *x)?;
            Ok(KernelBoundRow {
                probe: *x,
                value: e.value,
                std_error: e.std_error,
            })
        })
        .collect();
    let rows = rows?;
    let mut max_abs = 0.0_f64;
    let mut violations = 0;
    for r in &rows {
        max_abs = max_abs.max(r.value.abs());
        if r.value.abs() > bound + 3.0 * r.std_error {
            violations += 1;
        }
    }
    Ok(KernelBoundReport {
        bound,
        max_abs,
        rows,
        violations,
    })
}

/// Draw probes uniformly from `b10` that avoid the covering balls.
pub fn sample_noncovered_probes(
    b10: &Ball,
    set: &SingularSet,
    count: usize,
    seed: u64,
) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(quad::subseed(seed, &[0x6e6f_636f]));
    let mut out = Vec::with_capacity(count);
    let mut guard = 0;
    while out.len() < count && guard < 100_000 {
        guard += 1;
        let (local, _) = quad::sample_local_in_ball(b10.radius, &mut rng);
        let p = geom::group_mul(b10.center, local);
        if !set.covers(p) {
            out.push(p);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Contact-projection arclength claim
// ---------------------------------------------------------------------------

/// The straight contact segment of the given length from the origin along
/// the x-axis (the normalized chord of the projection claim).
pub fn straight_horizontal_segment(length: f64, segments: usize) -> HorizontalPath {
    HorizontalPath::straight(
        Point::ORIGIN,
        HorizontalVector::new(length, 0.0),
        segments,
    )
}

/// Horizontal arclength of the path outside the covering balls, measured by
/// sub-sampling each segment at 8 interior points.
pub fn projection_length(path: &HorizontalPath, set: &SingularSet) -> f64 {
    let n = path.segments();
    let h = 1.0 / n as f64;
    let sub = 8;
    let mut outside = 0.0;
    let mut z = path.start;
    for c in &path.controls {
        let len = c.norm() * h;
        let mut out_count = 0;
        for j in 0..sub {
            let s = (j as f64 + 0.5) / sub as f64;
            let p = Point {
                x: z.x + c.a * s * h,
                y: z.y + c.b * s * h,
                t: z.t + 2.0 * (z.y * c.a - z.x * c.b) * s * h,
            };
            if !set.covers(p) {
                out_count += 1;
            }
        }
        outside += len * out_count as f64 / sub as f64;
        z = Point {
            x: z.x + c.a * h,
            y: z.y + c.b * h,
            t: z.t + 2.0 * (z.y * c.a - z.x * c.b) * h,
        };
    }
    outside
}

/// A random cover along the normalized segment `[0, length]` with prescribed
/// total diameter, for the projection-claim sweeps.
pub fn random_cover_along_segment(
    length: f64,
    total_diameter: f64,
    balls: usize,
    seed: u64,
) -> SingularSet {
    let mut rng = ChaCha8Rng::seed_from_u64(quad::subseed(seed, &[0x636f_7672]));
    let mut weights: Vec<f64> = (0..balls).map(|_| rng.gen_range(0.2..1.0)).collect();
    let wsum: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w *= total_diameter / wsum;
    }
    let cover: Vec<Ball> = weights
        .iter()
        .map(|diam| {
            let cx = rng.gen_range(-0.1..length + 0.1);
            let cy = rng.gen_range(-0.2..0.2) * diam;
            let ct = rng.gen_range(-0.2..0.2) * diam * diam;
            Ball {
                center: Point::new(cx, cy, ct),
                radius: diam / 2.0,
            }
        })
        .collect();
    let sum_diameters = cover.iter().map(|b| 2.0 * b.radius).sum();
    SingularSet {
        cover,
        selected: Vec::new(),
        epsilon: total_diameter / 10.0,
        beta: 0.0,
        sum_diameters,
    }
}

// ---------------------------------------------------------------------------
// Balance condition
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BalanceRow {
    pub inner: Ball,
    pub outer: Ball,
    pub ratio: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BalanceReport {
    pub max_ratio: f64,
    pub rows: Vec<BalanceRow>,
    pub p: f64,
    pub q: f64,
}

/// Two-weight balance ratios over nested pairs:
/// `(r_I/r_J) (mu(I)/mu(J))^{1/q} / (nu(I)/nu(J))^{1/p}`.
pub fn balance_check(
    mu: &WeightField,
    nu: &WeightField,
    family: &BallFamily,
    p: f64,
    q: f64,
) -> Result<BalanceReport> {
    if !(p >= 1.0 && q > p && q.is_finite()) {
        return Err(Error::InvalidExponent {
            value: p,
            requirement: format!("balance condition needs 1 <= p < q < inf (q = {q})"),
        });
    }
    if family.balls.is_empty() {
        return Err(Error::EmptyFamily);
    }
    if family.nested.is_empty() {
        return Err(Error::NoNestedPairs);
    }
    let rows: Result<Vec<BalanceRow>> = family
        .nested
        .par_iter()
        .map(|(inner, outer)| {
            let (mu_i, mu_i_se, _) = ball_average(mu, inner, 0x6261_6c31, 1.0)?;
            let (mu_j, mu_j_se, _) = ball_average(mu, outer, 0x6261_6c32, 1.0)?;
            let (nu_i, nu_i_se, _) = ball_average(nu, inner, 0x6261_6c33, 1.0)?;
            let (nu_j, nu_j_se, _) = ball_average(nu, outer, 0x6261_6c34, 1.0)?;
            // Ball masses: average times analytic volume.
            let mass = |avg: f64, b: &Ball| avg * b.volume();
            let ratio = (inner.radius / outer.radius)
                * (mass(mu_i, inner) / mass(mu_j, outer)).powf(1.0 / q)
                / (mass(nu_i, inner) / mass(nu_j, outer)).powf(1.0 / p);
            let rel = (mu_i_se / mu_i / q)
                .hypot(mu_j_se / mu_j / q)
                .hypot(nu_i_se / nu_i / p)
                .hypot(nu_j_se / nu_j / p);
            Ok(BalanceRow {
                inner: *inner,
                outer: *outer,
                ratio,
                std_error: ratio * rel,
            })
        })
        .collect();
    let rows = rows?;
    let max_ratio = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(BalanceReport {
        max_ratio,
        rows,
        p,
        q,
    })
}

// ---------------------------------------------------------------------------
// Sobolev-Poincare verifier
// ---------------------------------------------------------------------------

/// Lipschitz test functions with analytic horizontal gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    Constant,
    CoordX,
    CoordY,
    CoordT,
    PlanarSquare,
    GaugeFourth,
    ExpBump,
    SinX,
}

impl TestFunction {
    pub const ALL: [TestFunction; 8] = [
        TestFunction::Constant,
        TestFunction::CoordX,
        TestFunction::CoordY,
        TestFunction::CoordT,
        TestFunction::PlanarSquare,
        TestFunction::GaugeFourth,
        TestFunction::ExpBump,
        TestFunction::SinX,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::Constant => "constant",
            TestFunction::CoordX => "coord_x",
            TestFunction::CoordY => "coord_y",
            TestFunction::CoordT => "coord_t",
            TestFunction::PlanarSquare => "planar_square",
            TestFunction::GaugeFourth => "gauge_fourth",
            TestFunction::ExpBump => "exp_bump",
            TestFunction::SinX => "sin_x",
        }
    }

    pub fn from_name(name: &str) -> Option<TestFunction> {
        TestFunction::ALL.iter().copied().find(|f| f.name() == name)
    }

    pub fn eval(&self, p: Point) -> f64 {
        match self {
            TestFunction::Constant => 1.0,
            TestFunction::CoordX => p.x,
            TestFunction::CoordY => p.y,
            TestFunction::CoordT => p.t,
            TestFunction::PlanarSquare => p.x * p.x + p.y * p.y,
            TestFunction::GaugeFourth => geom::gauge4(p),
            TestFunction::ExpBump => (-(p.x * p.x + p.y * p.y) - p.t * p.t / 4.0).exp(),
            TestFunction::SinX => p.x.sin(),
        }
    }

    /// Analytic horizontal gradient `(X1 f, X2 f)`.
    pub fn horizontal_gradient(&self, p: Point) -> HorizontalVector {
        match self {
            TestFunction::Constant => HorizontalVector::new(0.0, 0.0),
            TestFunction::CoordX => HorizontalVector::new(1.0, 0.0),
            TestFunction::CoordY => HorizontalVector::new(0.0, 1.0),
            // X1 t = 2y, X2 t = -2x.
            TestFunction::CoordT => HorizontalVector::new(2.0 * p.y, -2.0 * p.x),
            TestFunction::PlanarSquare => HorizontalVector::new(2.0 * p.x, 2.0 * p.y),
            TestFunction::GaugeFourth => {
                let s = p.x * p.x + p.y * p.y;
                HorizontalVector::new(
                    4.0 * p.x * s + 4.0 * p.y * p.t,
                    4.0 * p.y * s - 4.0 * p.x * p.t,
                )
            }
            TestFunction::ExpBump => {
                let f = self.eval(p);
                HorizontalVector::new(
                    (-2.0 * p.x - p.y * p.t) * f,
                    (-2.0 * p.y + p.x * p.t) * f,
                )
            }
            TestFunction::SinX => HorizontalVector::new(p.x.cos(), 0.0),
        }
    }
}

/// Central differences along the frame flows, step `h`.
pub fn horizontal_gradient_fd<F>(f: F, p: Point, h: f64) -> HorizontalVector
where
    F: Fn(Point) -> f64,
{
    let step = |a: f64, b: f64| geom::horizontal_step(p, HorizontalVector::new(a, b));
    HorizontalVector::new(
        (f(step(h, 0.0)) - f(step(-h, 0.0))) / (2.0 * h),
        (f(step(0.0, h)) - f(step(0.0, -h))) / (2.0 * h),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SobolevReport {
    pub lhs: f64,
    pub rhs_part: f64,
    /// Empirical constant `lhs / (r * rhs_part)`.
    pub c_emp: f64,
    pub f_mean: f64,
    pub p: f64,
    pub q: f64,
}

/// Measure both sides of the weighted Sobolev-Poincare inequality on one
/// ball, with `mu = e^{4u} dx`, `nu = e^{(4-p)u} dx`, `q = 4p/(4-p)`:
/// `lhs = (avg_mu |f - f_B|^q)^{1/q}` and `rhs_part = (avg_nu |grad_b f|^p)^{1/p}`.
pub fn sobolev_poincare_ratio(
    f: &TestFunction,
    ball: &Ball,
    field: &Arc<PotentialField>,
    p: f64,
) -> Result<SobolevReport> {
    if !(p >= 1.0 && p < 4.0) {
        return Err(Error::InvalidExponent {
            value: p,
            requirement: "Sobolev exponent requires 1 <= p < 4 (q = 4p/(4-p) undefined otherwise)"
                .into(),
        });
    }
    let q = 4.0 * p / (4.0 - p);
    let scheme = field.scheme();
    let n = scheme.sample_budget;
    let mut rng = ChaCha8Rng::seed_from_u64(quad::subseed(
        scheme.seed,
        &[
            0x736f_626c,
            ball.center.x.to_bits(),
            ball.radius.to_bits(),
            p.to_bits(),
        ],
    ));
    // One sample, three weighted sums; u is evaluated once per point.
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let (local, _) = quad::sample_local_in_ball(ball.radius, &mut rng);
        let z = geom::group_mul(ball.center, local);
        let u = field.eval_u_fast(z);
        let w_mu = (4.0 * u).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP).exp();
        let w_nu = ((4.0 - p) * u).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP).exp();
        pts.push((z, w_mu, w_nu));
    }
    let mu_total: f64 = pts.iter().map(|(_, wm, _)| wm).sum();
    let nu_total: f64 = pts.iter().map(|(_, _, wn)| wn).sum();
    let f_mean = pts
        .iter()
        .map(|(z, wm, _)| f.eval(*z) * wm)
        .sum::<f64>()
        / mu_total;
    let lhs = (pts
        .iter()
        .map(|(z, wm, _)| (f.eval(*z) - f_mean).abs().powf(q) * wm)
        .sum::<f64>()
        / mu_total)
        .powf(1.0 / q);
    let rhs_part = (pts
        .iter()
        .map(|(z, _, wn)| f.horizontal_gradient(*z).norm().powf(p) * wn)
        .sum::<f64>()
        / nu_total)
        .powf(1.0 / p);
    let c_emp = if rhs_part > 0.0 {
        lhs / (ball.radius * rhs_part)
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(SobolevReport {
        lhs,
        rhs_part,
        c_emp,
        f_mean,
        p,
        q,
    })
}

// ---------------------------------------------------------------------------
// Power-mean probe
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerMeanReport {
    /// max over the family of `(avg w^s)^{1/s} / avg w`; at most 1 by the
    /// power-mean inequality (shared samples make this exact per ball).
    pub forward_max: f64,
    /// max over the family of `avg w / (avg w^s)^{1/s}`.
    pub backward_max: f64,
    pub s: f64,
}

/// Compare the s-mean and the plain mean of a weight over a ball family.
pub fn stromberg_wheeden_probe(
    w: &WeightField,
    s: f64,
    family: &BallFamily,
) -> Result<PowerMeanReport> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidExponent {
            value: s,
            requirement: "power-mean probe requires s in (0, 1)".into(),
        });
    }
    if family.balls.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let per_ball: Result<Vec<(f64, f64)>> = family
        .balls
        .par_iter()
        .map(|ball| {
            // Same seed tag: shared sample points for both powers.
            let (m_s, _, _) = ball_average(w, ball, 0x7377_7072, s)?;
            let (m_1, _, _) = ball_average(w, ball, 0x7377_7072, 1.0)?;
            let ms = m_s.powf(1.0 / s);
            Ok((ms / m_1, m_1 / ms))
        })
        .collect();
    let per_ball = per_ball?;
    Ok(PowerMeanReport {
        forward_max: per_ball.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max),
        backward_max: per_ball.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max),
        s,
    })
}

// ---------------------------------------------------------------------------
// Near-ball mass ratio (Jensen-type bound diagnostics)
// ---------------------------------------------------------------------------

/// `int_{2B} e^{4u} dz / (e^{4 u_far(p0)} e^{4 cbar})`: the quantity bounded
/// by the Jensen argument in terms of the far field at the center and the
/// near-log shift. Reported for finiteness/monotonicity diagnostics.
pub fn near_ball_mass_ratio(field: &Arc<PotentialField>, b: &Ball) -> Result<f64> {
    let b2 = b.scaled(2.0);
    let b10 = b.scaled(10.0);
    let w = WeightField::new(field.clone(), 4.0);
    let scheme = field.scheme().with_seed(quad::subseed(
        field.scheme().seed,
        &[0x6e62_6d72, b.center.x.to_bits(), b.radius.to_bits()],
    ));
    let mass = integrate_ball(|z| w.eval(z), &b2, &scheme).map_err(|e| e.on_ball(&b2))?;
    let split = field.split_near_far(&b10, b.center)?;
    let cbar = field.cbar(&b10)?;
    let denom = (4.0 * (split.far.value + cbar.value))
        .clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP)
        .exp();
    Ok(mass.value / denom)
}
