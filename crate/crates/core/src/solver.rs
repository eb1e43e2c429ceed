//! Local solver for placing a single anchor: minimize a smooth cost over a box
//! while staying at least `d_th` away from every existing anchor.
//!
//! Each start runs projected BFGS on `f/s + μ·P`, where `s` normalizes the
//! cost and `P = Σ max(0, d_th − ‖r − rᵢ‖)² / d_th²` penalizes separation
//! violations. `μ` grows geometrically between stages; the final point is
//! pushed radially out of any remaining violation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlin::Vec3;
use crate::placement::{BoxConstraint, SeparationConstraint};

const MAX_STAGES: usize = 8;
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const REPAIR_ROUNDS: usize = 20;
const REPAIR_MARGIN: f64 = 1e-10;
const FD_REL_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub multistart: usize,
    pub max_iterations: usize,
    /// Stop a descent once steps shrink below this many meters.
    pub step_tol: f64,
    /// Allowed separation shortfall in meters.
    pub constraint_tol: f64,
    pub penalty_growth: f64,
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            multistart: 32,
            max_iterations: 200,
            step_tol: 1e-8,
            constraint_tol: 1e-9,
            penalty_growth: 10.0,
            seed: 0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("solver {what}")));
        if self.multistart == 0 {
            return bad("multistart must be at least 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.step_tol > 0.0) || !(self.constraint_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.penalty_growth > 1.0) {
            return bad("penalty_growth must exceed 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartDiagnostics {
    pub seed_point: Vec3,
    pub iterations: usize,
    pub converged: bool,
    /// Separation shortfall (meters) after each kept penalty stage.
    pub violations: Vec<f64>,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub point: Vec3,
    pub cost: f64,
    /// Whether `point` satisfies the box exactly and separation within tolerance.
    pub feasible: bool,
    pub starts: Vec<StartDiagnostics>,
}

/// Stratified start points: one Latin-hypercube sample per start.
pub fn latin_hypercube(bounds: &BoxConstraint, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let mut cols: [Vec<usize>; 3] = std::array::from_fn(|_| (0..n).collect());
    for col in cols.iter_mut() {
        col.shuffle(rng);
    }
    (0..n)
        .map(|i| {
            let u = std::array::from_fn(|d| (cols[d][i] as f64 + rng.random::<f64>()) / n as f64);
            bounds.lerp(u)
        })
        .collect()
}

/// Largest separation shortfall from `existing`, zero when satisfied.
pub fn separation_violation(p: &Vec3, existing: &[Vec3], sep: &SeparationConstraint) -> f64 {
    (sep.d_th() - sep.nearest(p, existing)).max(0.0)
}

/// Existing anchors sorted by `x`, so the penalty only visits anchors in the
/// slab `|x − pₓ| < d_th` instead of every anchor.
struct SlabIndex {
    sorted: Vec<Vec3>,
    d_th: f64,
}

impl SlabIndex {
    fn new(existing: &[Vec3], d_th: f64) -> Self {
        let mut sorted = existing.to_vec();
        sorted.sort_by(|a, b| a.x().total_cmp(&b.x()));
        SlabIndex { sorted, d_th }
    }

    fn penalty(&self, p: &Vec3) -> f64 {
        let d_th = self.d_th;
        if d_th == 0.0 {
            return 0.0;
        }
        let start = self.sorted.partition_point(|q| q.x() <= p.x() - d_th);
        self.sorted[start..]
            .iter()
            .take_while(|q| q.x() < p.x() + d_th)
            .map(|q| {
                let dist_sq = (*p - *q).norm_squared();
                if dist_sq >= d_th * d_th {
                    return 0.0;
                }
                let v = (d_th - dist_sq.sqrt()) / d_th;
                v * v
            })
            .sum()
    }
}

/// Pushes `p` radially away from violating anchors and clamps it to the box.
pub fn repair(p: Vec3, bounds: &BoxConstraint, existing: &[Vec3], sep: &SeparationConstraint) -> Vec3 {
    let d_th = sep.d_th();
    let mut p = bounds.clamp(&p);
    for _ in 0..REPAIR_ROUNDS {
        let worst = existing
            .iter()
            .map(|q| (d_th - p.distance(q), q))
            .filter(|(v, _)| *v > 0.0)
            .max_by(|a, b| a.0.total_cmp(&b.0));
        let Some((_, q)) = worst else { break };
        let diff = p - *q;
        let dir = if diff.norm() > 0.0 {
            diff * (1.0 / diff.norm())
        } else {
            Vec3::new(1.0, 0.0, 0.0)
        };
        p = bounds.clamp(&(*q + dir * (d_th * (1.0 + 1e-12) + REPAIR_MARGIN)));
    }
    p
}

struct Objective<'a, F> {
    cost: &'a F,
    scale: f64,
    mu: f64,
    index: &'a SlabIndex,
    h: f64,
}

impl<F: Fn(&Vec3) -> f64> Objective<'_, F> {
    fn value(&self, p: &Vec3) -> f64 {
        (self.cost)(p) / self.scale + self.mu * self.index.penalty(p)
    }

    fn gradient(&self, p: &Vec3) -> Vec3 {
        Vec3(std::array::from_fn(|i| {
            let mut hi = *p;
            let mut lo = *p;
            hi.0[i] += self.h;
            lo.0[i] -= self.h;
            (self.value(&hi) - self.value(&lo)) / (2.0 * self.h)
        }))
    }
}

struct DescentResult {
    point: Vec3,
    iterations: usize,
    converged: bool,
}

fn free_mask(x: &Vec3, g: &Vec3, bounds: &BoxConstraint) -> [bool; 3] {
    std::array::from_fn(|i| {
        let at_lo = x[i] <= bounds.lower()[i] && g[i] > 0.0;
        let at_hi = x[i] >= bounds.upper()[i] && g[i] < 0.0;
        !(at_lo || at_hi)
    })
}

fn mat_vec(h: &[[f64; 3]; 3], v: &Vec3) -> Vec3 {
    Vec3(std::array::from_fn(|i| (0..3).map(|j| h[i][j] * v[j]).sum()))
}

fn identity_scaled(s: f64) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| if i == j { s } else { 0.0 }))
}

/// Projected BFGS with Armijo backtracking along the projection arc.
fn projected_bfgs<F: Fn(&Vec3) -> f64>(
    obj: &Objective<'_, F>,
    start: Vec3,
    bounds: &BoxConstraint,
    settings: &SolverSettings,
) -> DescentResult {
    let mut x = bounds.clamp(&start);
    let mut fx = obj.value(&x);
    let mut g = obj.gradient(&x);
    let gnorm = g.norm();
    let initial_scale = if gnorm > 0.0 {
        (0.1 * bounds.diagonal() / gnorm).min(1.0)
    } else {
        1.0
    };
    let mut h = identity_scaled(initial_scale);
    let mut fresh = true;

    for it in 0..settings.max_iterations {
        let mask = free_mask(&x, &g, bounds);
        let g_free = Vec3(std::array::from_fn(|i| if mask[i] { g[i] } else { 0.0 }));
        if g_free.norm() <= 1e-14 {
            return DescentResult { point: x, iterations: it, converged: true };
        }
        let mut d = -mat_vec(&h, &g_free);
        for (i, free) in mask.iter().enumerate() {
            if !free {
                d.0[i] = 0.0;
            }
        }
        if g.dot(&d) >= 0.0 {
            h = identity_scaled(initial_scale);
            fresh = true;
            d = -(g_free * initial_scale);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = bounds.clamp(&(x + d * t));
            let ft = obj.value(&trial);
            if ft <= fx + ARMIJO_C * g.dot(&(trial - x)) {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            return DescentResult { point: x, iterations: it + 1, converged: false };
        };

        let s = x_new - x;
        let g_new = obj.gradient(&x_new);
        let y = g_new - g;
        x = x_new;
        fx = f_new;
        g = g_new;
        if s.norm() < settings.step_tol {
            return DescentResult { point: x, iterations: it + 1, converged: true };
        }

        let sy = s.dot(&y);
        if sy > 1e-16 * s.norm() * y.norm() {
            if fresh {
                h = identity_scaled(sy / y.norm_squared());
                fresh = false;
            }
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy = mat_vec(&h, &y);
            let yhy = y.dot(&hy);
            for i in 0..3 {
                for j in 0..3 {
                    h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
    }
    DescentResult {
        point: x,
        iterations: settings.max_iterations,
        converged: false,
    }
}

fn better(a: (f64, &Vec3), b: (f64, &Vec3)) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a.1 .0.iter().zip(b.1 .0.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne())
            == Some(std::cmp::Ordering::Less),
    }
}

/// Best feasible point found over all starts.
///
/// `warm_start` is tried in addition to the stratified starts; `stream`
/// selects an independent random stream so repeated calls with the same seed
/// draw different start points. When no start reaches a feasible point the
/// outcome has `feasible == false` and holds the least-violating point.
#[allow(clippy::too_many_arguments)]
pub fn solve_anchor_subproblem<F: Fn(&Vec3) -> f64>(
    cost: F,
    bounds: &BoxConstraint,
    existing: &[Vec3],
    sep: &SeparationConstraint,
    settings: &SolverSettings,
    warm_start: Option<Vec3>,
    stream: u64,
) -> SolveOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(stream);
    let mut seeds = latin_hypercube(bounds, settings.multistart, &mut rng);
    if let Some(w) = warm_start {
        seeds.push(bounds.clamp(&w));
    }

    let scale = seeds
        .iter()
        .map(|p| cost(p).abs())
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let tol = settings.constraint_tol;

    let mut best: Option<(f64, Vec3)> = None;
    let mut fallback: Option<(f64, Vec3)> = None;
    let consider = |p: Vec3, best: &mut Option<(f64, Vec3)>| {
        let c = cost(&p);
        if c.is_finite() && best.as_ref().is_none_or(|(bc, bp)| better((c, &p), (*bc, bp))) {
            *best = Some((c, p));
        }
    };

    let index = SlabIndex::new(existing, sep.d_th());
    let mut starts = Vec::with_capacity(seeds.len());
    for seed in &seeds {
        if bounds.contains(seed) && sep.satisfied(seed, existing, tol) {
            consider(*seed, &mut best);
        }

        let mut obj = Objective {
            cost: &cost,
            scale,
            mu: 1.0,
            index: &index,
            h: FD_REL_STEP * bounds.diagonal(),
        };
        let mut x = *seed;
        let mut violations = Vec::new();
        let mut iterations = 0;
        let mut converged = false;
        let mut last_violation = f64::INFINITY;
        for _ in 0..MAX_STAGES {
            let run = projected_bfgs(&obj, x, bounds, settings);
            iterations += run.iterations;
            let v = separation_violation(&run.point, existing, sep);
            // A stage that worsens the shortfall is discarded.
            if v <= last_violation {
                x = run.point;
                converged = run.converged;
                last_violation = v;
                violations.push(v);
            }
            if last_violation <= tol {
                break;
            }
            obj.mu *= settings.penalty_growth;
        }

        let repaired = repair(x, bounds, existing, sep);
        let feasible = bounds.contains(&repaired) && sep.satisfied(&repaired, existing, tol);
        if feasible {
            consider(repaired, &mut best);
        } else {
            let v = separation_violation(&repaired, existing, sep);
            if fallback.as_ref().is_none_or(|(fv, fp)| better((v, &repaired), (*fv, fp))) {
                fallback = Some((v, repaired));
            }
        }
        starts.push(StartDiagnostics {
            seed_point: *seed,
            iterations,
            converged,
            violations,
            feasible,
        });
    }

    match best {
        Some((cost_value, point)) => SolveOutcome {
            point,
            cost: cost_value,
            feasible: true,
            starts,
        },
        None => {
            let point = fallback.map(|(_, p)| p).unwrap_or_else(|| bounds.clamp(&Vec3::ZERO));
            SolveOutcome {
                point,
                cost: cost(&point),
                feasible: false,
                starts,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> BoxConstraint {
        BoxConstraint::symmetric(Vec3::new(1.0, 1.0, 1.0)).unwrap()
    }

    #[test]
    fn slab_penalty_matches_full_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let existing: Vec<Vec3> = (0..40)
            .map(|_| Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect();
        for d_th in [0.0, 0.5, 2.0, 20.0] {
            let index = SlabIndex::new(&existing, d_th);
            for _ in 0..200 {
                let p = Vec3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
                let full: f64 = if d_th == 0.0 {
                    0.0
                } else {
                    existing.iter().map(|q| ((d_th - p.distance(q)).max(0.0) / d_th).powi(2)).sum()
                };
                assert!((index.penalty(&p) - full).abs() <= 1e-12 * full.max(1.0));
            }
        }
    }

    #[test]
    fn convex_quadratic_clamped_minimizer() {
        let target = Vec3::new(0.3, 2.0, -0.4);
        let cost = |p: &Vec3| (*p - target).norm_squared();
        let out = solve_anchor_subproblem(
            cost,
            &unit_box(),
            &[],
            &SeparationConstraint::new(0.0).unwrap(),
            &SolverSettings::default(),
            None,
            0,
        );
        assert!(out.feasible);
        assert!(out.point.distance(&Vec3::new(0.3, 1.0, -0.4)) < 1e-6);
    }

    #[test]
    fn separation_pushes_off_attractor() {
        let anchor = Vec3::new(0.5, 0.5, 0.5);
        let cost = |p: &Vec3| (*p - anchor).norm_squared();
        let sep = SeparationConstraint::new(0.4).unwrap();
        let out = solve_anchor_subproblem(
            cost,
            &unit_box(),
            &[anchor],
            &sep,
            &SolverSettings::default(),
            None,
            0,
        );
        assert!(out.feasible);
        let d = out.point.distance(&anchor);
        assert!((0.4 - 1e-9..0.4 + 1e-6).contains(&d), "distance {d}");
    }

    #[test]
    fn infeasible_reported() {
        // Anchors at every corner with a huge threshold leave no room.
        let mut existing = Vec::new();
        for x in [-1.0, 1.0] {
            for y in [-1.0, 1.0] {
                for z in [-1.0, 1.0] {
                    existing.push(Vec3::new(x, y, z));
                }
            }
        }
        let sep = SeparationConstraint::new(2.0).unwrap();
        let out = solve_anchor_subproblem(
            |p: &Vec3| p.norm_squared(),
            &unit_box(),
            &existing,
            &sep,
            &SolverSettings {
                multistart: 4,
                ..SolverSettings::default()
            },
            None,
            0,
        );
        assert!(!out.feasible);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cost = |p: &Vec3| (p.x() - 0.2).powi(2) + (p.y() * p.z()).sin();
        let sep = SeparationConstraint::new(0.3).unwrap();
        let existing = [Vec3::new(0.2, 0.0, 0.0)];
        let run = || {
            solve_anchor_subproblem(
                cost,
                &unit_box(),
                &existing,
                &sep,
                &SolverSettings::default(),
                Some(Vec3::new(0.9, 0.9, 0.9)),
                3,
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn latin_hypercube_strata() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = unit_box();
        let pts = latin_hypercube(&b, 10, &mut rng);
        for d in 0..3 {
            let mut bins: Vec<usize> = pts.iter().map(|p| ((p[d] + 1.0) / 0.2) as usize).collect();
            bins.sort();
            assert_eq!(bins, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn repair_clears_violation() {
        let sep = SeparationConstraint::new(0.5).unwrap();
        let existing = [Vec3::ZERO];
        let p = repair(Vec3::new(0.1, 0.0, 0.0), &unit_box(), &existing, &sep);
        assert!(p.norm() >= 0.5);
        let p = repair(Vec3::ZERO, &unit_box(), &existing, &sep);
        assert!(p.norm() >= 0.5);
    }

    #[test]
    fn settings_validation() {
        assert!(SolverSettings::default().validate().is_ok());
        let bad = SolverSettings {
            multistart: 0,
            ..SolverSettings::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverSettings {
            penalty_growth: 1.0,
            ..SolverSettings::default()
        };
        assert!(bad.validate().is_err());
    }
}
