//! Range simulation and least-squares position fixes.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{exact_dop, Kind, Target};
use crate::matlin::{SymMat2, SymMat3, Vec3};
use crate::placement::Mode;

pub const MAX_ITERATIONS: usize = 100;
pub const GRADIENT_TOL: f64 = 1e-9;

const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e16;

/// Biased Gaussian ranging error `w ~ N(b, σ²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeModel {
    pub bias: f64,
    pub sigma: f64,
}

impl RangeModel {
    pub fn new(bias: f64, sigma: f64) -> Result<Self> {
        let model = RangeModel { bias, sigma };
        model.validate()?;
        Ok(model)
    }

    pub fn noiseless() -> Self {
        RangeModel {
            bias: 0.0,
            sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bias >= 0.0) || !(self.sigma >= 0.0) || !self.bias.is_finite() || !self.sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "range bias and sigma must be finite and non-negative, got b={} σ={}",
                self.bias, self.sigma
            )));
        }
        Ok(())
    }

    /// `√(b² + σ²)`, the scale between DOP and the position error bound.
    pub fn error_scale(&self) -> f64 {
        self.bias.hypot(self.sigma)
    }
}

/// `max(0, ‖rᵢ − r_t‖ + wᵢ)` for every anchor.
///
/// Exactly one normal draw is consumed per anchor, whatever the model, so
/// different models fed from the same stream stay aligned.
pub fn simulate_ranges(
    anchors: &[Vec3],
    target: &Vec3,
    model: &RangeModel,
    rng: &mut impl Rng,
) -> Vec<f64> {
    anchors
        .iter()
        .map(|a| {
            let z: f64 = rng.sample(StandardNormal);
            (a.distance(target) + model.bias + model.sigma * z).max(0.0)
        })
        .collect()
}

/// Position error bound `√(b² + σ²)·DOP`.
pub fn position_error_bound(anchors: &[Vec3], target: &Vec3, model: &RangeModel, kind: Kind) -> Result<f64> {
    Ok(model.error_scale() * exact_dop(anchors, &Target::cartesian(*target), kind)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixResult {
    pub position: Vec3,
    /// `√Σ(r̂ᵢ − ‖rᵢ − x‖)²`.
    pub residual_norm: f64,
    pub iterations: usize,
    /// Gradient norm fell below [`GRADIENT_TOL`], or below
    /// [`gradient_tolerance`] once no damped step reduces the residual.
    pub converged: bool,
}

fn dims(mode: Mode) -> usize {
    match mode {
        Mode::ThreeD => 3,
        Mode::TwoD => 2,
    }
}

fn check_inputs(anchors: &[Vec3], ranges: &[f64], mode: Mode) -> Result<()> {
    let needed = dims(mode) + 1;
    if anchors.len() < needed {
        return Err(Error::TooFewAnchors {
            needed,
            got: anchors.len(),
        });
    }
    if ranges.len() != anchors.len() {
        return Err(Error::InvalidParameter(format!(
            "{} ranges for {} anchors",
            ranges.len(),
            anchors.len()
        )));
    }
    if ranges.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

fn residual_sq(anchors: &[Vec3], ranges: &[f64], x: &Vec3) -> f64 {
    anchors
        .iter()
        .zip(ranges)
        .map(|(a, r)| {
            let e = r - a.distance(x);
            e * e
        })
        .sum()
}

/// `JᵀJ` and `Jᵀe` for residuals `eᵢ = r̂ᵢ − ‖x − rᵢ‖`.
fn normal_equations(anchors: &[Vec3], ranges: &[f64], x: &Vec3) -> (SymMat3, Vec3) {
    let mut jtj = SymMat3::ZERO;
    let mut jte = Vec3::ZERO;
    for (a, r) in anchors.iter().zip(ranges) {
        let diff = *x - *a;
        let dist = diff.norm();
        if dist == 0.0 {
            continue;
        }
        let row = diff * (-1.0 / dist);
        jtj = jtj + SymMat3::outer(&row);
        jte += row * (r - dist);
    }
    (jtj, jte)
}

fn solve_damped(jtj: &SymMat3, rhs: &Vec3, lambda: f64, mode: Mode) -> Option<Vec3> {
    match mode {
        Mode::ThreeD => {
            let damped = *jtj
                + SymMat3::diag(
                    lambda * jtj.get(0, 0).max(1e-12),
                    lambda * jtj.get(1, 1).max(1e-12),
                    lambda * jtj.get(2, 2).max(1e-12),
                );
            damped.try_inverse().map(|inv| inv.mul_vec(rhs))
        }
        Mode::TwoD => {
            let a = jtj.top_left();
            let damped = a + SymMat2::diag(
                lambda * a.get(0, 0).max(1e-12),
                lambda * a.get(1, 1).max(1e-12),
            );
            let det = damped.determinant();
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            let (b0, b1) = (rhs[0], rhs[1]);
            let x = (damped.get(1, 1) * b0 - damped.get(0, 1) * b1) / det;
            let y = (damped.get(0, 0) * b1 - damped.get(0, 1) * b0) / det;
            Some(Vec3::new(x, y, 0.0))
        }
    }
}

/// `GRADIENT_TOL·max(1, ‖r̂‖)`, used when the iteration has stalled.
///
/// With a nonzero residual, rounding in the cost hides descent long before
/// an absolute `GRADIENT_TOL` is reached for ranges of a few hundred metres.
pub fn gradient_tolerance(ranges: &[f64]) -> f64 {
    GRADIENT_TOL * ranges.iter().map(|r| r * r).sum::<f64>().sqrt().max(1.0)
}

fn gradient_norm(jte: &Vec3, mode: Mode) -> f64 {
    match mode {
        Mode::ThreeD => jte.norm(),
        Mode::TwoD => jte[0].hypot(jte[1]),
    }
}

/// Levenberg-Marquardt minimization of `Σ(r̂ᵢ − ‖rᵢ − x‖)²`.
///
/// In 2D mode the height is fixed at `z = 0` and only `(x, y)` is solved for.
pub fn nls_fix(anchors: &[Vec3], ranges: &[f64], mode: Mode, initial: Vec3) -> Result<FixResult> {
    check_inputs(anchors, ranges, mode)?;
    if !initial.is_finite() {
        return Err(Error::NonFinite);
    }
    let stall_tol = gradient_tolerance(ranges);
    let mut x = initial;
    if mode == Mode::TwoD {
        x.0[2] = 0.0;
    }
    let mut cost = residual_sq(anchors, ranges, &x);
    let mut lambda = LAMBDA_INIT;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        let (jtj, jte) = normal_equations(anchors, ranges, &x);
        if gradient_norm(&jte, mode) <= GRADIENT_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let mut improved = false;
        while lambda <= LAMBDA_MAX {
            let Some(step) = solve_damped(&jtj, &(-jte), lambda, mode) else {
                lambda *= 10.0;
                continue;
            };
            let trial = x + step;
            let trial_cost = residual_sq(anchors, ranges, &trial);
            if trial_cost < cost {
                x = trial;
                cost = trial_cost;
                lambda = (lambda * 0.1).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No damping reduces the residual further: we are at a minimum to
            // working precision.
            let (_, jte) = normal_equations(anchors, ranges, &x);
            converged = gradient_norm(&jte, mode) <= stall_tol;
            break;
        }
    }
    if !converged && iterations == MAX_ITERATIONS {
        let (_, jte) = normal_equations(anchors, ranges, &x);
        converged = gradient_norm(&jte, mode) <= stall_tol;
    }
    Ok(FixResult {
        position: x,
        residual_norm: cost.sqrt(),
        iterations,
        converged,
    })
}

/// Closed-form linear least squares from range differences against the first
/// anchor. Returns `None` when the anchors are too degenerate.
pub fn multilaterate(anchors: &[Vec3], ranges: &[f64], mode: Mode) -> Option<Vec3> {
    if check_inputs(anchors, ranges, mode).is_err() {
        return None;
    }
    let a0 = anchors[0];
    let r0 = ranges[0];
    let mut ata = SymMat3::ZERO;
    let mut atb = Vec3::ZERO;
    for (a, r) in anchors.iter().zip(ranges).skip(1) {
        // 2(aᵢ − a₀)ᵀx = ‖aᵢ‖² − ‖a₀‖² − rᵢ² + r₀²
        let mut row = (*a - a0) * 2.0;
        if mode == Mode::TwoD {
            row.0[2] = 0.0;
        }
        let b = a.norm_squared() - a0.norm_squared() - r * r + r0 * r0;
        ata = ata + SymMat3::outer(&row);
        atb += row * b;
    }
    match mode {
        Mode::ThreeD => ata.try_inverse().map(|inv| inv.mul_vec(&atb)),
        Mode::TwoD => {
            let m = ata.top_left();
            let det = m.determinant();
            if det.abs() <= 1e-12 * m.trace().abs().max(1.0).powi(2) {
                return None;
            }
            Some(Vec3::new(
                (m.get(1, 1) * atb[0] - m.get(0, 1) * atb[1]) / det,
                (m.get(0, 0) * atb[1] - m.get(0, 1) * atb[0]) / det,
                0.0,
            ))
        }
    }
}

/// [`nls_fix`] from `guess` and from the multilateration solution, keeping
/// the better fix; a local minimum near `guess` is thus escaped whenever the
/// linearized solution lands in the right basin. If neither converges, a
/// spread of starts around the anchors is tried as well. Returns the
/// lowest-residual converged fix, or the lowest-residual fix overall if none
/// converged.
pub fn robust_fix(anchors: &[Vec3], ranges: &[f64], mode: Mode, guess: Vec3) -> Result<FixResult> {
    let rank = |f: &FixResult| (!f.converged, f.residual_norm);
    let mut best = nls_fix(anchors, ranges, mode, guess)?;
    let consider = |start: Vec3, best: &mut FixResult| -> Result<()> {
        let fix = nls_fix(anchors, ranges, mode, start)?;
        if rank(&fix).partial_cmp(&rank(best)) == Some(std::cmp::Ordering::Less) {
            *best = fix;
        }
        Ok(())
    };
    if let Some(p) = multilaterate(anchors, ranges, mode).filter(Vec3::is_finite) {
        consider(p, &mut best)?;
    }
    if best.converged {
        return Ok(best);
    }
    let center = Vec3::mean(anchors);
    let reach = ranges.iter().copied().fold(0.0, f64::max).max(1.0);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                consider(center + Vec3::new(sx, sy, sz) * (reach / 3f64.sqrt()), &mut best)?;
            }
        }
    }
    Ok(best)
}
