//! Weight fields `omega = e^{c u}` and the Muckenhoupt estimator battery:
//! A_p products, A_1 maximal ratios, doubling, and reverse Holder probes,
//! all over explicit finite ball families with documented generation
//! policies and seeds. Constants are reported with the family; nothing here
//! claims a supremum over all balls.

use crate::error::{Error, Result};
use crate::geom::{self, Ball, Point};
use crate::potential::PotentialField;
use crate::quad::{self, integrate_ball, QuadratureScheme};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Exponent clamp: `|c u|` is capped here so sweeps stay total instead of
/// overflowing; every clamped evaluation is counted as an exceedance.
pub const EXPONENT_CLAMP: f64 = 700.0;

/// A positive weight `omega(x) = exp(exponent * u(x))`, evaluated through the
/// field's deterministic particle surrogate.
#[derive(Clone, Debug)]
pub struct WeightField {
    field: Arc<PotentialField>,
    pub exponent: f64,
}

impl WeightField {
    pub fn new(field: Arc<PotentialField>, exponent: f64) -> WeightField {
        WeightField { field, exponent }
    }

    pub fn field(&self) -> &Arc<PotentialField> {
        &self.field
    }

    pub fn scheme(&self) -> &QuadratureScheme {
        self.field.scheme()
    }

    /// `exponent * u(x)` before exponentiation (unclamped).
    pub fn log_weight(&self, x: Point) -> f64 {
        self.exponent * self.field.eval_u_fast(x)
    }

    /// Weight value with the exponent clamp applied; the flag reports whether
    /// the clamp fired.
    pub fn eval_flagged(&self, x: Point) -> (f64, bool) {
        let lw = self.log_weight(x);
        if lw.abs() > EXPONENT_CLAMP {
            (lw.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP).exp(), true)
        } else {
            (lw.exp(), false)
        }
    }

    pub fn eval(&self, x: Point) -> f64 {
        self.eval_flagged(x).0
    }

    /// `omega^{1/4}` and its coordinate gradient, for path functionals.
    pub fn quarter_root_and_grad(&self, x: Point) -> (f64, [f64; 3]) {
        let (u, gu) = self.field.cloud().eval_u_grad(x);
        let q = 0.25 * self.exponent;
        let lw = (q * u).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
        let v = lw.exp();
        if lw.abs() >= EXPONENT_CLAMP {
            return (v, [0.0; 3]);
        }
        (v, [v * q * gu[0], v * q * gu[1], v * q * gu[2]])
    }
}

/// Draw points uniformly from a gauge ball region.
pub fn sample_points_in_region(region: &Ball, count: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(quad::subseed(seed, &[0x7072_6f62]));
    (0..count)
        .map(|_| {
            let (local, _) = quad::sample_local_in_ball(region.radius, &mut rng);
            geom::group_mul(region.center, local)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyPolicy {
    GridCenters,
    RandomInRegion,
    NestedPairs,
}

/// A finite, seeded surrogate for "all balls".
#[derive(Clone, Debug)]
pub struct BallFamily {
    pub balls: Vec<Ball>,
    /// Populated only by the `nested_pairs` policy: (inner, outer) with the
    /// inclusion verified by center/radius arithmetic.
    pub nested: Vec<(Ball, Ball)>,
    pub policy: FamilyPolicy,
    pub r_min: f64,
    pub r_max: f64,
    pub seed: u64,
}

impl BallFamily {
    fn check_scales(region: &Ball, r_min: f64, r_max: f64) -> Result<()> {
        if !(r_min > 0.0 && r_max >= r_min) {
            return Err(Error::FamilyGeneration(format!(
                "invalid scale range [{r_min}, {r_max}]"
            )));
        }
        if 2.0 * r_max >= region.radius {
            return Err(Error::FamilyGeneration(format!(
                "r_max = {r_max} too large: doubled balls must fit inside the region of radius {}",
                region.radius
            )));
        }
        Ok(())
    }

    /// Random centers and log-uniform radii; every generated ball keeps its
    /// double `2B` inside the region so doubling estimators stay in bounds.
    pub fn random_in_region(
        region: &Ball,
        count: usize,
        r_min: f64,
        r_max: f64,
        seed: u64,
    ) -> Result<BallFamily> {
        Self::check_scales(region, r_min, r_max)?;
        let mut rng = ChaCha8Rng::seed_from_u64(quad::subseed(seed, &[0x6661_6d31]));
        let log_lo = r_min.ln();
        let log_hi = r_max.ln();
        let balls = (0..count)
            .map(|_| {
                let r = (log_lo + (log_hi - log_lo) * rng.gen::<f64>()).exp();
                let margin = region.radius - 2.0 * r;
                let (local, _) = quad::sample_local_in_ball(margin, &mut rng);
                Ball {
                    center: geom::group_mul(region.center, local),
                    radius: r,
                }
            })
            .collect();
        Ok(BallFamily {
            balls,
            nested: Vec::new(),
            policy: FamilyPolicy::RandomInRegion,
            r_min,
            r_max,
            seed,
        })
    }

    /// Deterministic lattice of centers with log-spaced radii cycling through
    /// the scale range.
    pub fn grid_centers(
        region: &Ball,
        per_axis: usize,
        radii: usize,
        r_min: f64,
        r_max: f64,
    ) -> Result<BallFamily> {
        Self::check_scales(region, r_min, r_max)?;
        let mut balls = Vec::new();
        let n = per_axis.max(1);
        let radii = radii.max(1);
        for ri in 0..radii {
            let f = if radii == 1 {
                0.5
            } else {
                ri as f64 / (radii - 1) as f64
            };
            let r = (r_min.ln() + (r_max.ln() - r_min.ln()) * f).exp();
            let reach = region.radius - 2.0 * r;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let local = Point::new(
                            reach * (2.0 * (i as f64 + 0.5) / n as f64 - 1.0)
                                / std::f64::consts::SQRT_2,
                            reach * (2.0 * (j as f64 + 0.5) / n as f64 - 1.0)
                                / std::f64::consts::SQRT_2,
                            reach * reach * (2.0 * (k as f64 + 0.5) / n as f64 - 1.0) / 2.0,
                        );
                        if geom::koranyi_gauge(local) <= reach {
                            balls.push(Ball {
                                center: geom::group_mul(region.center, local),
                                radius: r,
                            });
                        }
                    }
                }
            }
        }
        Ok(BallFamily {
            balls,
            nested: Vec::new(),
            policy: FamilyPolicy::GridCenters,
            r_min,
            r_max,
            seed: 0,
        })
    }

    /// Nested pairs `I` strictly inside `J`, for balance-condition checks.
    pub fn nested_pairs(
        region: &Ball,
        count: usize,
        r_min: f64,
        r_max: f64,
        seed: u64,
    ) -> Result<BallFamily> {
        Self::check_scales(region, r_min, r_max)?;
        let mut rng = ChaCha8Rng::seed_from_u64(quad::subseed(seed, &[0x6661_6d32]));
        let mut nested = Vec::with_capacity(count);
        let mut balls = Vec::with_capacity(2 * count);
        for _ in 0..count {
            let r_j = (r_min.ln() + (r_max.ln() - r_min.ln()) * rng.gen::<f64>()).exp();
            let margin = region.radius - 2.0 * r_j;
            let (local, _) = quad::sample_local_in_ball(margin, &mut rng);
            let outer = Ball {
                center: geom::group_mul(region.center, local),
                radius: r_j,
            };
            let r_i = r_j * (0.15 + 0.75 * rng.gen::<f64>());
            let (inner_local, _) = quad::sample_local_in_ball(r_j - r_i, &mut rng);
            let inner = Ball {
                center: geom::group_mul(outer.center, inner_local),
                radius: r_i,
            };
            debug_assert!(
                geom::koranyi_dist(outer.center, inner.center) + inner.radius
                    <= outer.radius + 1e-12
            );
            balls.push(inner);
            balls.push(outer);
            nested.push((inner, outer));
        }
        Ok(BallFamily {
            balls,
            nested,
            policy: FamilyPolicy::NestedPairs,
            r_min,
            r_max,
            seed,
        })
    }
}

/// Per-ball estimator output.
#[derive(Clone, Copy, Debug)]
pub struct BallStat {
    pub ball: Ball,
    pub value: f64,
    pub std_error: f64,
}

/// Estimator report: the family maximum plus the per-ball rows and the count
/// of clamped weight evaluations.
#[derive(Clone, Debug)]
pub struct EstimatorReport {
    pub constant: f64,
    pub per_ball: Vec<BallStat>,
    pub clamp_exceedances: u64,
}

/// Average of a weight over one ball: `(1/|B|) int_B omega`, with `|B|`
/// taken analytically as `(pi^2/2) r^4`.
pub fn ball_average(
    w: &WeightField,
    ball: &Ball,
    seed_tag: u64,
    power: f64,
) -> Result<(f64, f64, u64)> {
    // The seed does not depend on `power`: calls sharing a tag and a ball see
    // the same sample points, which makes per-ball power-mean comparisons
    // exact rather than only exact in expectation.
    let exceed = AtomicU64::new(0);
    let scheme = w.scheme().with_seed(quad::subseed(
        w.scheme().seed,
        &[
            seed_tag,
            ball.center.x.to_bits(),
            ball.center.y.to_bits(),
            ball.center.t.to_bits(),
            ball.radius.to_bits(),
        ],
    ));
    let (avg, se, _) = quad::ball_mean(
        |p| {
            let lw = power * w.log_weight(p);
            if lw.abs() > EXPONENT_CLAMP {
                exceed.fetch_add(1, Ordering::Relaxed);
                lw.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP).exp()
            } else {
                lw.exp()
            }
        },
        ball,
        &scheme,
    )
    .map_err(|e| e.on_ball(ball))?;
    Ok((avg, se, exceed.load(Ordering::Relaxed)))
}

/// The A_p product over a family: max over balls of
/// `avg_B(omega) * (avg_B(omega^{-1/(p-1)}))^{p-1}` for p > 1.
pub fn ap_constant(w: &WeightField, family: &BallFamily, p: f64) -> Result<EstimatorReport> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidExponent {
            value: p,
            requirement: "A_p requires p > 1".into(),
        });
    }
    if family.balls.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let dual = -1.0 / (p - 1.0);
    let results: Result<Vec<(BallStat, u64)>> = family
        .balls
        .par_iter()
        .map(|ball| {
            let (a1, se1, x1) = ball_average(w, ball, 0x6170_3161, 1.0)?;
            let (a2, se2, x2) = ball_average(w, ball, 0x6170_3162, dual)?;
            let value = a1 * a2.powf(p - 1.0);
            let rel = (se1 / a1).hypot((p - 1.0) * se2 / a2);
            Ok((
                BallStat {
                    ball: *ball,
                    value,
                    std_error: value * rel,
                },
                x1 + x2,
            ))
        })
        .collect();
    let results = results?;
    let clamp_exceedances = results.iter().map(|(_, x)| *x).sum();
    let stats: Vec<BallStat> = results.into_iter().map(|(s, _)| s).collect();
    let constant = stats.iter().map(|s| s.value).fold(f64::NEG_INFINITY, f64::max);
    Ok(EstimatorReport {
        constant,
        per_ball: stats,
        clamp_exceedances,
    })
}

/// Finite-family A_1 surrogate: max over probes `x` and family balls
/// containing `x` of `avg_B(omega) / omega(x)`.
pub fn a1_ratio(
    w: &WeightField,
    family: &BallFamily,
    probes: &[Point],
) -> Result<EstimatorReport> {
    if family.balls.is_empty() {
        return Err(Error::EmptyFamily);
    }
    // Every probe must be covered by at least one ball.
    for probe in probes {
        if !family.balls.iter().any(|b| b.contains(*probe)) {
            return Err(Error::ProbeInNoBall(*probe));
        }
    }
    let averages: Result<Vec<(f64, f64)>> = family
        .balls
        .par_iter()
        .map(|ball| {
            let (a, se, _) = ball_average(w, ball, 0x6131_6176, 1.0)?;
            Ok((a, se))
        })
        .collect();
    let averages = averages?;
    let mut stats = Vec::with_capacity(probes.len());
    for probe in probes {
        let (wx, _) = w.eval_flagged(*probe);
        let mut best = f64::NEG_INFINITY;
        let mut best_se = 0.0;
        for (ball, (avg, se)) in family.balls.iter().zip(&averages) {
            if ball.contains(*probe) {
                let ratio = avg / wx;
                if ratio > best {
                    best = ratio;
                    best_se = se / wx;
                }
            }
        }
        stats.push(BallStat {
            ball: Ball {
                center: *probe,
                radius: f64::MIN_POSITIVE,
            },
            value: best,
            std_error: best_se,
        });
    }
    let constant = stats.iter().map(|s| s.value).fold(f64::NEG_INFINITY, f64::max);
    Ok(EstimatorReport {
        constant,
        per_ball: stats,
        clamp_exceedances: 0,
    })
}

/// Doubling constant over a family: max of `omega(2B) / omega(B)`.
pub fn doubling_constant(w: &WeightField, family: &BallFamily) -> Result<EstimatorReport> {
    if family.balls.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let stats: Result<Vec<BallStat>> = family
        .balls
        .par_iter()
        .map(|ball| {
            let double = ball.scaled(2.0);
            let (a, se_a, _) = ball_average(w, ball, 0x6462_6c31, 1.0)?;
            let (b, se_b, _) = ball_average(w, &double, 0x6462_6c32, 1.0)?;
            // Ratio of masses, not averages: omega(2B)/omega(B) = 16 b/a.
            let value = 16.0 * b / a;
            let rel = (se_a / a).hypot(se_b / b);
            Ok(BallStat {
                ball: *ball,
                value,
                std_error: value * rel,
            })
        })
        .collect();
    let stats = stats?;
    let constant = stats.iter().map(|s| s.value).fold(f64::NEG_INFINITY, f64::max);
    Ok(EstimatorReport {
        constant,
        per_ball: stats,
        clamp_exceedances: 0,
    })
}

/// Reverse Holder probe at exponent `r >= 1`: max over the family of
/// `(avg_B omega^r)^{1/r} / avg_B omega`. The same sample drives numerator
/// and denominator, so `r = 1` returns exactly 1.
pub fn reverse_holder_probe(
    w: &WeightField,
    family: &BallFamily,
    r: f64,
) -> Result<EstimatorReport> {
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::InvalidExponent {
            value: r,
            requirement: "reverse Holder probe requires r >= 1".into(),
        });
    }
    if family.balls.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let exceed_total = AtomicU64::new(0);
    let stats: Result<Vec<BallStat>> = family
        .balls
        .par_iter()
        .map(|ball| {
            // Shared seed tag: both powers see the same sample points.
            let (a_r, se_r, x1) = ball_average(w, ball, 0x7268_7031, r)?;
            let (a_1, se_1, x2) = ball_average(w, ball, 0x7268_7031, 1.0)?;
            exceed_total.fetch_add(x1 + x2, Ordering::Relaxed);
            let value = a_r.powf(1.0 / r) / a_1;
            let rel = (se_r / (r * a_r)).hypot(se_1 / a_1);
            Ok(BallStat {
                ball: *ball,
                value,
                std_error: value * rel,
            })
        })
        .collect();
    let stats = stats?;
    let constant = stats.iter().map(|s| s.value).fold(f64::NEG_INFINITY, f64::max);
    Ok(EstimatorReport {
        constant,
        per_ball: stats,
        clamp_exceedances: exceed_total.load(Ordering::Relaxed),
    })
}

/// Total positive and negative masses of the density model.
pub fn alpha_beta(density: &crate::density::Density) -> (f64, f64) {
    density.alpha_beta()
}
