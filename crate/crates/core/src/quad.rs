//! Numerical integration over Koranyi balls, radial profiles, and the
//! logarithmically singular kernels of the potential representation.
//!
//! Monte Carlo sampling inside a ball uses rejection from the bounding box
//! `[-r, r]^2 x [-r^2, r^2]` in group-local coordinates (acceptance about
//! 0.617 = (pi^2/2)/8, measured by a test below). Singular kernels are
//! integrated over dyadic annuli shrinking onto the singular point, truncated
//! at `1e-6` times the source radius with an a-priori tail bound folded into
//! the reported standard error.

use crate::density::{Bump, Density};
use crate::error::{Error, Result};
use crate::geom::{self, Ball, Point, UNIT_BALL_VOLUME};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Relative cutoff for the innermost annulus of a singular-kernel integral.
pub const SINGULAR_CUT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    MonteCarlo,
    StratifiedMc,
    TensorGrid,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QuadratureScheme {
    pub kind: SchemeKind,
    pub sample_budget: usize,
    pub seed: u64,
    pub target_rel_error: f64,
}

impl QuadratureScheme {
    pub fn new(
        kind: SchemeKind,
        sample_budget: usize,
        seed: u64,
        target_rel_error: f64,
    ) -> Result<QuadratureScheme> {
        let s = QuadratureScheme {
            kind,
            sample_budget,
            seed,
            target_rel_error,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_budget < 100 {
            return Err(Error::InvalidScheme(format!(
                "sample_budget must be at least 100, got {}",
                self.sample_budget
            )));
        }
        if !(self.target_rel_error > 0.0 && self.target_rel_error < 0.5) {
            return Err(Error::InvalidScheme(format!(
                "target_rel_error must lie in (0, 0.5), got {}",
                self.target_rel_error
            )));
        }
        Ok(())
    }

    pub fn monte_carlo(sample_budget: usize, seed: u64) -> QuadratureScheme {
        QuadratureScheme {
            kind: SchemeKind::MonteCarlo,
            sample_budget,
            seed,
            target_rel_error: 0.01,
        }
    }

    pub fn with_seed(&self, seed: u64) -> QuadratureScheme {
        QuadratureScheme { seed, ..*self }
    }

    pub fn with_budget(&self, sample_budget: usize) -> QuadratureScheme {
        QuadratureScheme {
            sample_budget,
            ..*self
        }
    }
}

impl Default for QuadratureScheme {
    fn default() -> Self {
        QuadratureScheme {
            kind: SchemeKind::MonteCarlo,
            sample_budget: 200_000,
            seed: 0,
            target_rel_error: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct IntegralResult {
    pub value: f64,
    /// Standard error of the estimator; 0 for deterministic schemes. For
    /// singular kernels the truncated-tail bound is folded in.
    pub std_error: f64,
    pub samples_used: u64,
}

impl IntegralResult {
    fn sum(parts: impl IntoIterator<Item = IntegralResult>) -> IntegralResult {
        let mut value = 0.0;
        let mut var = 0.0;
        let mut samples = 0;
        for p in parts {
            value += p.value;
            var += p.std_error * p.std_error;
            samples += p.samples_used;
        }
        IntegralResult {
            value,
            std_error: var.sqrt(),
            samples_used: samples,
        }
    }
}

/// splitmix64 finalizer; the basis of all derived seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic sub-seed derivation from a base seed and context words.
pub fn subseed(base: u64, parts: &[u64]) -> u64 {
    let mut s = mix(base ^ 0xd1b54a32d192ed03);
    for &p in parts {
        s = mix(s ^ mix(p));
    }
    s
}

/// Context words identifying a point (for per-evaluation seeds).
pub fn point_words(p: Point) -> [u64; 3] {
    [p.x.to_bits(), p.y.to_bits(), p.t.to_bits()]
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One rejection draw from the gauge ball, in group-local coordinates.
/// Returns the accepted local point and the number of proposals consumed.
pub(crate) fn sample_local_in_ball(radius: f64, rng: &mut ChaCha8Rng) -> (Point, u64) {
    let r4 = radius.powi(4);
    let mut attempts = 0;
    loop {
        attempts += 1;
        let p = Point::new(
            radius * rng.gen_range(-1.0..1.0),
            radius * rng.gen_range(-1.0..1.0),
            radius * radius * rng.gen_range(-1.0..1.0),
        );
        if geom::gauge4(p) < r4 {
            return (p, attempts);
        }
        if attempts > 10_000 {
            // Cannot happen for a positive radius; guards against NaN radii.
            return (Point::ORIGIN, attempts);
        }
    }
}

/// Rejection draw from the annulus `inner <= |p| < outer` (local coordinates).
fn sample_local_in_annulus(inner: f64, outer: f64, rng: &mut ChaCha8Rng) -> Point {
    let inner4 = inner.powi(4);
    let outer4 = outer.powi(4);
    loop {
        let p = Point::new(
            outer * rng.gen_range(-1.0..1.0),
            outer * rng.gen_range(-1.0..1.0),
            outer * outer * rng.gen_range(-1.0..1.0),
        );
        let g4 = geom::gauge4(p);
        if g4 < outer4 && g4 >= inner4 {
            return p;
        }
    }
}

/// Estimate `int_B f` with respect to Haar (= Lebesgue) measure.
///
/// Reproducible for a fixed scheme seed. A NaN from `f` aborts the estimate
/// and names the offending sample point.
pub fn integrate_ball<F>(f: F, ball: &Ball, scheme: &QuadratureScheme) -> Result<IntegralResult>
where
    F: Fn(Point) -> f64,
{
    scheme.validate()?;
    match scheme.kind {
        SchemeKind::MonteCarlo => integrate_ball_mc(f, ball, scheme),
        SchemeKind::StratifiedMc => integrate_ball_stratified(f, ball, scheme),
        SchemeKind::TensorGrid => integrate_ball_grid(f, ball, scheme),
    }
}

fn integrate_ball_mc<F>(f: F, ball: &Ball, scheme: &QuadratureScheme) -> Result<IntegralResult>
where
    F: Fn(Point) -> f64,
{
    // Hit-or-miss over the bounding box [-r, r]^2 x [-r^2, r^2] in group-local
    // coordinates: value = V_box * mean(f * indicator). The budget counts box
    // proposals; the indicator contributes its share of the variance, so even
    // constant integrands carry the 1/sqrt(n) error the convergence tests
    // measure.
    let mut rng = rng_for(subseed(scheme.seed, &[0x6261_6c6c]));
    let n = scheme.sample_budget;
    let r = ball.radius;
    let r4 = r.powi(4);
    let box_volume = 8.0 * r4;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let local = Point::new(
            r * rng.gen_range(-1.0..1.0),
            r * rng.gen_range(-1.0..1.0),
            r * r * rng.gen_range(-1.0..1.0),
        );
        let v = if geom::gauge4(local) < r4 {
            let p = geom::group_mul(ball.center, local);
            let fv = f(p);
            if fv.is_nan() {
                return Err(Error::NanSample(p));
            }
            fv
        } else {
            0.0
        };
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    Ok(IntegralResult {
        value: box_volume * mean,
        std_error: box_volume * (var / n as f64).sqrt(),
        samples_used: n as u64,
    })
}

fn integrate_ball_stratified<F>(
    f: F,
    ball: &Ball,
    scheme: &QuadratureScheme,
) -> Result<IntegralResult>
where
    F: Fn(Point) -> f64,
{
    // Stratify the bounding box into k^3 cells; within each cell average
    // f * indicator(ball). Unbiased with strictly smaller variance than the
    // plain estimator for integrands dominated by the boundary.
    let k = (((scheme.sample_budget / 8) as f64).cbrt().floor() as usize).max(2);
    let per_cell = (scheme.sample_budget / (k * k * k)).max(2);
    let r = ball.radius;
    let r4 = r.powi(4);
    let cell_volume = 8.0 * r.powi(4) / (k * k * k) as f64;
    let mut value = 0.0;
    let mut var = 0.0;
    let mut used = 0u64;
    for ix in 0..k {
        for iy in 0..k {
            for it in 0..k {
                let mut rng = rng_for(subseed(
                    scheme.seed,
                    &[0x7374_7261, ix as u64, iy as u64, it as u64],
                ));
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for _ in 0..per_cell {
                    let ux = (ix as f64 + rng.gen::<f64>()) / k as f64;
                    let uy = (iy as f64 + rng.gen::<f64>()) / k as f64;
                    let ut = (it as f64 + rng.gen::<f64>()) / k as f64;
                    let local = Point::new(
                        r * (2.0 * ux - 1.0),
                        r * (2.0 * uy - 1.0),
                        r * r * (2.0 * ut - 1.0),
                    );
                    let v = if geom::gauge4(local) < r4 {
                        let p = geom::group_mul(ball.center, local);
                        let fv = f(p);
                        if fv.is_nan() {
                            return Err(Error::NanSample(p));
                        }
                        fv
                    } else {
                        0.0
                    };
                    sum += v;
                    sum_sq += v * v;
                }
                let mean = sum / per_cell as f64;
                let v_cell = (sum_sq / per_cell as f64 - mean * mean).max(0.0);
                value += cell_volume * mean;
                var += cell_volume * cell_volume * v_cell / per_cell as f64;
                used += per_cell as u64;
            }
        }
    }
    Ok(IntegralResult {
        value,
        std_error: var.sqrt(),
        samples_used: used,
    })
}

fn integrate_ball_grid<F>(f: F, ball: &Ball, scheme: &QuadratureScheme) -> Result<IntegralResult>
where
    F: Fn(Point) -> f64,
{
    // Midpoint rule in gauge-polar coordinates (rho, phi, theta), where
    // Lebesgue measure is rho^3 drho dphi dtheta and the ball is the box
    // rho < r. Smooth integrands converge at O(n^{-2}) per axis.
    let n = ((scheme.sample_budget as f64).cbrt().floor() as usize).max(2);
    let r = ball.radius;
    let d_rho = r / n as f64;
    let d_phi = std::f64::consts::PI / n as f64;
    let d_theta = 2.0 * std::f64::consts::PI / n as f64;
    let mut value = 0.0;
    for i in 0..n {
        let rho = (i as f64 + 0.5) * d_rho;
        let w_rho = rho * rho * rho * d_rho;
        for j in 0..n {
            let phi = -std::f64::consts::FRAC_PI_2 + (j as f64 + 0.5) * d_phi;
            for l in 0..n {
                let theta = (l as f64 + 0.5) * d_theta;
                let p = geom::group_mul(ball.center, geom::gauge_polar_point(rho, phi, theta));
                let v = f(p);
                if v.is_nan() {
                    return Err(Error::NanSample(p));
                }
                value += v * w_rho * d_phi * d_theta;
            }
        }
    }
    Ok(IntegralResult {
        value,
        std_error: 0.0,
        samples_used: (n * n * n) as u64,
    })
}

/// Ball average `(1/|B|) int_B f` as a self-normalized estimator: numerator
/// and denominator share the same box proposals, so the indicator noise
/// cancels and constant integrands average exactly to themselves.
pub fn ball_mean<F>(f: F, ball: &Ball, scheme: &QuadratureScheme) -> Result<(f64, f64, u64)>
where
    F: Fn(Point) -> f64,
{
    scheme.validate()?;
    match scheme.kind {
        SchemeKind::MonteCarlo | SchemeKind::StratifiedMc => {
            let mut rng = rng_for(subseed(scheme.seed, &[0x626d_6561]));
            let n = scheme.sample_budget;
            let r = ball.radius;
            let r4 = r.powi(4);
            let mut a = 0.0; // sum of f over hits
            let mut a2 = 0.0; // sum of f^2 over hits
            let mut b = 0.0; // hit count
            for _ in 0..n {
                let local = Point::new(
                    r * rng.gen_range(-1.0..1.0),
                    r * rng.gen_range(-1.0..1.0),
                    r * r * rng.gen_range(-1.0..1.0),
                );
                if geom::gauge4(local) < r4 {
                    let p = geom::group_mul(ball.center, local);
                    let v = f(p);
                    if v.is_nan() {
                        return Err(Error::NanSample(p));
                    }
                    a += v;
                    a2 += v * v;
                    b += 1.0;
                }
            }
            if b == 0.0 {
                return Err(Error::Divergent(
                    "no proposals landed inside the ball".into(),
                ));
            }
            let avg = a / b;
            // Delta-method standard error of the ratio estimator.
            let resid = (a2 - 2.0 * avg * a + avg * avg * b).max(0.0);
            let se = resid.sqrt() / b;
            Ok((avg, se, n as u64))
        }
        SchemeKind::TensorGrid => {
            let r = integrate_ball(f, ball, scheme)?;
            Ok((r.value / ball.volume(), 0.0, r.samples_used))
        }
    }
}

/// Integral of a radial profile over the centered ball of radius `r_max`:
/// `2 pi^2 int_0^{r_max} g(rho) rho^3 drho`, by adaptive Simpson quadrature.
pub fn integrate_radial<G>(g: G, r_max: f64) -> Result<f64>
where
    G: Fn(f64) -> f64,
{
    if !(r_max > 0.0) || !r_max.is_finite() {
        return Err(Error::Divergent(format!(
            "radial integration range must be positive and finite, got {r_max}"
        )));
    }
    let h = |rho: f64| g(rho) * rho * rho * rho;
    let fa = h(0.0);
    let fb = h(r_max);
    if !fa.is_finite() || !fb.is_finite() {
        return Err(Error::Divergent(
            "radial integrand is not finite at an endpoint".into(),
        ));
    }
    let mut residual = 0.0;
    let v = adaptive_simpson(&h, 0.0, r_max, fa, fb, 1e-12, 28, &mut residual)?;
    if residual > 1e-8 * (1.0 + v.abs()) {
        return Err(Error::RadialNonConvergent { residual });
    }
    Ok(2.0 * std::f64::consts::PI * std::f64::consts::PI * v)
}

fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    tol: f64,
    depth: u32,
    residual: &mut f64,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let fm = f(m);
    if !fm.is_finite() {
        return Err(Error::Divergent(format!(
            "radial integrand is not finite at rho = {m}"
        )));
    }
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth, residual)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    residual: &mut f64,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    if !flm.is_finite() || !frm.is_finite() {
        return Err(Error::Divergent(
            "radial integrand is not finite inside the range".into(),
        ));
    }
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let err = left + right - whole;
    if err.abs() <= 15.0 * tol || depth == 0 {
        if depth == 0 {
            *residual += err.abs() / 15.0;
        }
        return Ok(left + right + err / 15.0);
    }
    let l = simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, residual)?;
    let r = simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, residual)?;
    Ok(l + r)
}

/// Where a kernel integrand blows up.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Singularity {
    /// Smooth over the source support; plain mass-importance sampling.
    None,
    /// Log-type singularity at the point; integrate over dyadic annuli around
    /// it. The closure bound gives `sup |kernel|` on the ball of the given
    /// radius about the singular point, for the truncated-tail estimate.
    LogAt(Point),
}

/// Integrate `kernel(y) * bump_density(y)` over the support of one bump,
/// optionally restricted by `indicator`.
pub(crate) fn integrate_bump_kernel<K, I, TB>(
    bump: &Bump,
    kernel: K,
    indicator: I,
    singular: Singularity,
    tail_kernel_bound: TB,
    scheme: &QuadratureScheme,
    seed: u64,
) -> Result<IntegralResult>
where
    K: Fn(Point) -> f64,
    I: Fn(Point) -> bool,
    TB: Fn(f64) -> f64,
{
    match singular {
        Singularity::None => integrate_bump_smooth(bump, &kernel, &indicator, scheme, seed),
        Singularity::LogAt(z) => integrate_bump_annular(
            bump,
            &kernel,
            &indicator,
            z,
            &tail_kernel_bound,
            scheme,
            seed,
        ),
    }
}

fn integrate_bump_smooth(
    bump: &Bump,
    kernel: &dyn Fn(Point) -> f64,
    indicator: &dyn Fn(Point) -> bool,
    scheme: &QuadratureScheme,
    seed: u64,
) -> Result<IntegralResult> {
    let n = scheme.sample_budget;
    match scheme.kind {
        SchemeKind::TensorGrid => {
            // Deterministic grid against the bump's own radial mass: shells at
            // equal-mass quantiles, uniform angles.
            let per_axis = ((n as f64).cbrt().floor() as usize).max(2);
            let (n_rho, n_phi, n_theta) = (per_axis, per_axis, per_axis);
            let mut value = 0.0;
            let node_mass = bump.mass / (n_rho * n_phi * n_theta) as f64;
            for i in 0..n_rho {
                let rho = bump.radius_of_mass_fraction((i as f64 + 0.5) / n_rho as f64);
                for j in 0..n_phi {
                    let phi = -std::f64::consts::FRAC_PI_2
                        + std::f64::consts::PI * (j as f64 + 0.5) / n_phi as f64;
                    for l in 0..n_theta {
                        let theta = 2.0 * std::f64::consts::PI * (l as f64 + 0.5) / n_theta as f64;
                        let y = geom::group_mul(
                            bump.center,
                            geom::gauge_polar_point(rho, phi, theta),
                        );
                        if indicator(y) {
                            let k = kernel(y);
                            if k.is_nan() {
                                return Err(Error::NanSample(y));
                            }
                            value += node_mass * k;
                        }
                    }
                }
            }
            Ok(IntegralResult {
                value,
                std_error: 0.0,
                samples_used: (n_rho * n_phi * n_theta) as u64,
            })
        }
        _ => {
            // Importance-sample from the bump's own mass distribution:
            // gauge radius by inverse CDF, angles uniform in the gauge-polar
            // measure. The estimate is mass * mean(kernel).
            let mut rng = rng_for(seed);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..n {
                let rho = bump.radius_of_mass_fraction(rng.gen::<f64>());
                let phi = -std::f64::consts::FRAC_PI_2
                    + std::f64::consts::PI * rng.gen::<f64>();
                let theta = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
                let y = geom::group_mul(bump.center, geom::gauge_polar_point(rho, phi, theta));
                let v = if indicator(y) {
                    let k = kernel(y);
                    if k.is_nan() {
                        return Err(Error::NanSample(y));
                    }
                    k
                } else {
                    0.0
                };
                sum += v;
                sum_sq += v * v;
            }
            let mean = sum / n as f64;
            let var = (sum_sq / n as f64 - mean * mean).max(0.0);
            Ok(IntegralResult {
                value: bump.mass * mean,
                std_error: bump.mass.abs() * (var / n as f64).sqrt(),
                samples_used: n as u64,
            })
        }
    }
}

fn integrate_bump_annular(
    bump: &Bump,
    kernel: &dyn Fn(Point) -> f64,
    indicator: &dyn Fn(Point) -> bool,
    z: Point,
    tail_kernel_bound: &dyn Fn(f64) -> f64,
    scheme: &QuadratureScheme,
    seed: u64,
) -> Result<IntegralResult> {
    // Hybrid decomposition: the bulk of the bump, away from the singular
    // point, is importance-sampled from the bump's own mass distribution;
    // dyadic annuli cover only a small neighborhood of the singularity where
    // the kernel actually spikes.
    let r_split = (0.5 * bump.effective_radius()).max(4.0 * SINGULAR_CUT * bump.width);
    let mut parts = Vec::new();

    let far_seed = subseed(seed, &[0x6661_7270]);
    let far_budget = scheme.with_budget((scheme.sample_budget / 2).max(100));
    parts.push(integrate_bump_smooth(
        bump,
        &|y| kernel(y),
        &|y| indicator(y) && geom::koranyi_dist(z, y) >= r_split,
        &far_budget,
        far_seed,
    )?);

    let delta_cut = SINGULAR_CUT * bump.support_radius();
    let j_max = ((r_split / delta_cut).log2().ceil() as i64 - 1).max(0) as usize;
    // Budget decays geometrically with depth: the outer annuli carry nearly
    // all of the remaining mass, the inner ones only the kernel spike.
    let min_per_annulus = 48;
    let density_sup = bump.amplitude().abs();
    for j in 0..=j_max {
        let outer = r_split * 0.5_f64.powi(j as i32);
        let inner = 0.5 * outer;
        let n_j = ((scheme.sample_budget as f64 * 0.25 * 0.5_f64.powi(j as i32)) as usize)
            .max(min_per_annulus);
        let volume = UNIT_BALL_VOLUME * (outer.powi(4) - inner.powi(4));
        let mut rng = rng_for(subseed(seed, &[0x616e_6e75, j as u64]));
        match scheme.kind {
            SchemeKind::TensorGrid => {
                let per_axis = ((n_j as f64).cbrt().floor() as usize).max(2);
                let d_rho = (outer - inner) / per_axis as f64;
                let d_phi = std::f64::consts::PI / per_axis as f64;
                let d_theta = 2.0 * std::f64::consts::PI / per_axis as f64;
                let mut value = 0.0;
                for a in 0..per_axis {
                    let rho = inner + (a as f64 + 0.5) * d_rho;
                    let w = rho * rho * rho * d_rho * d_phi * d_theta;
                    for b in 0..per_axis {
                        let phi = -std::f64::consts::FRAC_PI_2 + (b as f64 + 0.5) * d_phi;
                        for c in 0..per_axis {
                            let theta = (c as f64 + 0.5) * d_theta;
                            let y = geom::group_mul(z, geom::gauge_polar_point(rho, phi, theta));
                            let g = bump.eval(y);
                            if g != 0.0 && indicator(y) {
                                let k = kernel(y);
                                if k.is_nan() {
                                    return Err(Error::NanSample(y));
                                }
                                value += w * k * g;
                            }
                        }
                    }
                }
                parts.push(IntegralResult {
                    value,
                    std_error: 0.0,
                    samples_used: (per_axis * per_axis * per_axis) as u64,
                });
            }
            _ => {
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for _ in 0..n_j {
                    let local = sample_local_in_annulus(inner, outer, &mut rng);
                    let y = geom::group_mul(z, local);
                    let g = bump.eval(y);
                    let v = if g != 0.0 && indicator(y) {
                        let k = kernel(y);
                        if k.is_nan() {
                            return Err(Error::NanSample(y));
                        }
                        k * g
                    } else {
                        0.0
                    };
                    sum += v;
                    sum_sq += v * v;
                }
                let mean = sum / n_j as f64;
                let var = (sum_sq / n_j as f64 - mean * mean).max(0.0);
                parts.push(IntegralResult {
                    value: volume * mean,
                    std_error: volume * (var / n_j as f64).sqrt(),
                    samples_used: n_j as u64,
                });
            }
        }
    }
    let mut total = IntegralResult::sum(parts);
    // Truncated tail: everything inside the innermost radius is bounded by
    // sup|density| * |B(z, delta)| * sup|kernel|.
    let delta = r_split * 0.5_f64.powi(j_max as i32 + 1);
    let tail = density_sup * UNIT_BALL_VOLUME * delta.powi(4) * tail_kernel_bound(delta).abs();
    total.std_error += tail;
    Ok(total)
}

/// Decide whether the kernel's singular point sits close enough to the
/// bump's mass to warrant the annular decomposition. Measured against the
/// effective mass radius, not the nominal support: a singularity outside the
/// mass core sees a smooth integrand.
pub(crate) fn near_support(bump: &Bump, z: Point) -> bool {
    geom::koranyi_dist(z, bump.center) < 1.25 * bump.effective_radius()
}

/// Conservative bound for `sup |log(gauge(y)/d(x,y))|`-type kernels on the
/// ball of radius `delta` about a singular point with the other log factor
/// anchored at gauge value `other_gauge`.
pub(crate) fn log_kernel_tail_bound(delta: f64, other_gauge: f64) -> f64 {
    let own = delta.ln().abs() + 0.25;
    let other = if other_gauge > 10.0 * delta {
        other_gauge.ln().abs() + 1.0
    } else {
        // The two singular points nearly coincide; both factors are log-small.
        (3.0 * delta).ln().abs() + 1.0
    };
    own + other + 1.0
}

/// Integrate `y -> log(1/d(x, y)) f(y)` over H^1 for a modeled density,
/// decomposing dyadically around the singularity at `x`.
///
/// A point mass exactly at `x` is genuinely divergent and is rejected.
pub fn integrate_log_kernel(
    f: &Density,
    x: Point,
    scheme: &QuadratureScheme,
) -> Result<IntegralResult> {
    scheme.validate()?;
    let mut parts = Vec::new();
    for atom in &f.atoms {
        let d = geom::koranyi_dist(x, atom.location);
        if d == 0.0 {
            return Err(Error::Divergent(format!(
                "point mass of weight {} located exactly at the evaluation point ({}, {}, {})",
                atom.mass, x.x, x.y, x.t
            )));
        }
        parts.push(IntegralResult {
            value: -atom.mass * d.ln(),
            std_error: 0.0,
            samples_used: 0,
        });
    }
    for (i, bump) in f.bumps.iter().enumerate() {
        let kernel = |y: Point| -geom::koranyi_dist(x, y).ln();
        let singular = if near_support(bump, x) {
            Singularity::LogAt(x)
        } else {
            Singularity::None
        };
        let seed = subseed(scheme.seed, &[0x6c6f_676b, i as u64]);
        let part = integrate_bump_kernel(
            bump,
            kernel,
            |_| true,
            singular,
            |delta: f64| delta.ln().abs() + 1.25,
            scheme,
            seed,
        )?;
        parts.push(part);
    }
    Ok(IntegralResult::sum(parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Profile;

    #[test]
    fn scheme_validation() {
        assert!(QuadratureScheme::new(SchemeKind::MonteCarlo, 50, 0, 0.01).is_err());
        assert!(QuadratureScheme::new(SchemeKind::MonteCarlo, 1000, 0, 0.7).is_err());
        assert!(QuadratureScheme::new(SchemeKind::MonteCarlo, 1000, 0, 0.01).is_ok());
    }

    #[test]
    fn ball_rejection_acceptance_rate() {
        // Documented acceptance of the bounding-box rejection sampler:
        // (pi^2/2)/8 ~ 0.617.
        let mut rng = rng_for(7);
        let mut attempts = 0u64;
        let n = 40_000;
        for _ in 0..n {
            let (_, a) = sample_local_in_ball(1.0, &mut rng);
            attempts += a;
        }
        let acceptance = n as f64 / attempts as f64;
        assert!(
            (acceptance - UNIT_BALL_VOLUME / 8.0).abs() < 0.01,
            "acceptance {acceptance}"
        );
    }

    #[test]
    fn constant_over_unit_ball() {
        let ball = Ball::new(Point::ORIGIN, 1.0).unwrap();
        let scheme = QuadratureScheme::monte_carlo(100_000, 42);
        let r = integrate_ball(|_| 1.0, &ball, &scheme).unwrap();
        assert!((r.value - UNIT_BALL_VOLUME).abs() < 4.0 * r.std_error.max(1e-3));
    }

    #[test]
    fn odd_integrand_vanishes() {
        let ball = Ball::new(Point::ORIGIN, 1.0).unwrap();
        let scheme = QuadratureScheme::monte_carlo(50_000, 3);
        let r = integrate_ball(|p| p.x, &ball, &scheme).unwrap();
        assert!(r.value.abs() < 4.0 * r.std_error);
    }

    #[test]
    fn nan_names_the_sample_point() {
        let ball = Ball::new(Point::new(5.0, 0.0, 0.0), 0.5).unwrap();
        let scheme = QuadratureScheme::monte_carlo(1_000, 1);
        let err = integrate_ball(|p| if p.x > 4.9 { f64::NAN } else { 1.0 }, &ball, &scheme)
            .unwrap_err();
        match err {
            Error::NanSample(p) => assert!(p.x > 4.9),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn radial_closed_forms() {
        let v = integrate_radial(|_| 1.0, 1.0).unwrap();
        assert!((v - UNIT_BALL_VOLUME).abs() < 1e-9);
        let v = integrate_radial(|rho| rho, 1.0).unwrap();
        let expect = 2.0 * std::f64::consts::PI * std::f64::consts::PI / 5.0;
        assert!((v - expect).abs() < 1e-9);
        let v = integrate_radial(|_| 0.0, 2.0).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn radial_divergence_detected() {
        let r = integrate_radial(|rho| rho.powi(-4), 1.0);
        assert!(r.is_err());
    }

    #[test]
    fn log_kernel_zero_density() {
        let d = Density::zero(1.0);
        let scheme = QuadratureScheme::monte_carlo(1_000, 5);
        let r = integrate_log_kernel(&d, Point::ORIGIN, &scheme).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn log_kernel_atom_at_x_rejected() {
        let x = Point::new(1.0, 0.0, 0.0);
        let d = Density::new(
            vec![],
            vec![crate::density::Atom {
                location: x,
                mass: 1.0,
            }],
            1.0,
        )
        .unwrap();
        let scheme = QuadratureScheme::monte_carlo(1_000, 5);
        assert!(matches!(
            integrate_log_kernel(&d, x, &scheme),
            Err(Error::Divergent(_))
        ));
    }

    #[test]
    fn log_kernel_uniform_ball_closed_form() {
        // Uniform density c on B(x, R):
        // c * 2 pi^2 * R^4 (1 - 4 ln R) / 16.
        let x = Point::new(0.3, -0.2, 0.5);
        let c = 0.7;
        for radius in [0.8_f64, 1.0, 1.7] {
            let mass = c * UNIT_BALL_VOLUME * radius.powi(4);
            let d = Density::new(
                vec![Bump {
                    center: x,
                    profile: Profile::Uniform,
                    width: radius,
                    mass,
                }],
                vec![],
                1.0,
            )
            .unwrap();
            let scheme = QuadratureScheme::monte_carlo(120_000, 11);
            let r = integrate_log_kernel(&d, x, &scheme).unwrap();
            let expect = c
                * 2.0
                * std::f64::consts::PI.powi(2)
                * radius.powi(4)
                * (1.0 - 4.0 * radius.ln())
                / 16.0;
            assert!(
                (r.value - expect).abs() < 4.0 * r.std_error.max(1e-4),
                "radius {radius}: got {} expected {expect} (se {})",
                r.value,
                r.std_error
            );
        }
    }

    #[test]
    fn log_kernel_narrow_bump_mean_value() {
        // Shrinking-width oracle: a narrow bump of mass m at y0 integrates to
        // about m * log(1/d(x, y0)).
        let x = Point::ORIGIN;
        let y0 = Point::new(1.3, 0.4, -0.5);
        let m = 0.9;
        let d0 = geom::koranyi_dist(x, y0);
        let mut errs = Vec::new();
        for w in [0.4, 0.2, 0.1] {
            let d = Density::new(
                vec![Bump {
                    center: y0,
                    profile: Profile::PolyBump,
                    width: w,
                    mass: m,
                }],
                vec![],
                1.0,
            )
            .unwrap();
            let scheme = QuadratureScheme::monte_carlo(60_000, 23);
            let r = integrate_log_kernel(&d, x, &scheme).unwrap();
            let expect = -m * d0.ln();
            errs.push(((r.value - expect).abs(), r.std_error));
        }
        // Error shrinks roughly linearly with the width.
        assert!(errs[2].0 < errs[0].0.max(1e-4) + 3.0 * (errs[0].1 + errs[2].1));
        assert!(errs[2].0 < 0.02 * m.abs());
    }

    #[test]
    fn grid_and_mc_agree_on_smooth_integrand() {
        let ball = Ball::new(Point::new(0.5, -0.5, 0.2), 1.3).unwrap();
        let f = |p: Point| (p.x - p.y * 0.5 + 0.1 * p.t).cos();
        let mc = integrate_ball(&f, &ball, &QuadratureScheme::monte_carlo(150_000, 9)).unwrap();
        let grid = integrate_ball(
            &f,
            &ball,
            &QuadratureScheme::new(SchemeKind::TensorGrid, 150_000, 9, 0.01).unwrap(),
        )
        .unwrap();
        assert!(
            (mc.value - grid.value).abs() < 3.0 * mc.std_error,
            "mc {} grid {} se {}",
            mc.value,
            grid.value,
            mc.std_error
        );
        let strat = integrate_ball(
            &f,
            &ball,
            &QuadratureScheme::new(SchemeKind::StratifiedMc, 150_000, 9, 0.01).unwrap(),
        )
        .unwrap();
        assert!((strat.value - grid.value).abs() < 3.0 * strat.std_error.max(1e-4));
    }

    #[test]
    fn mc_error_scales_with_budget() {
        let ball = Ball::new(Point::ORIGIN, 1.0).unwrap();
        let mut errors = Vec::new();
        for budget in [10_000usize, 40_000, 160_000] {
            let r = integrate_ball(
                |_| 1.0,
                &ball,
                &QuadratureScheme::monte_carlo(budget, 77),
            )
            .unwrap();
            errors.push(r.std_error);
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (1.5..2.6).contains(&ratio),
                "std_error ratio per 4x budget: {ratio}"
            );
        }
    }

    #[test]
    fn dilation_change_of_variables() {
        // int_{delta_l B} f = l^4 int_B f(delta_l .) for the Haar measure.
        let ball = Ball::new(Point::new(0.2, 0.1, -0.3), 0.9).unwrap();
        let l = 1.7;
        let big = Ball {
            center: geom::dilate(l, ball.center),
            radius: l * ball.radius,
        };
        let f = |p: Point| (0.3 * p.x + 0.2 * p.y - 0.1 * p.t).sin() + 1.5;
        let lhs = integrate_ball(f, &big, &QuadratureScheme::monte_carlo(120_000, 5)).unwrap();
        let rhs = integrate_ball(
            |p| f(geom::dilate(l, p)),
            &ball,
            &QuadratureScheme::monte_carlo(120_000, 6),
        )
        .unwrap();
        let combined = (lhs.std_error.powi(2) + (l.powi(4) * rhs.std_error).powi(2)).sqrt();
        assert!(
            (lhs.value - l.powi(4) * rhs.value).abs() < 3.0 * combined,
            "lhs {} rhs {}",
            lhs.value,
            l.powi(4) * rhs.value
        );
    }
}
