//! Single-anchor addition: constraints, rank-1 updates of the anchor matrix,
//! the per-iteration cost functions and the bounds they are checked against.
//!
//! All coordinates here are in the local frame whose origin is the centroid of
//! the current `k` anchors. Adding `r` and re-centering gives
//! `C_{k+1} = C_k + k/(k+1)·r rᵀ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{max_rndop_sq, AnchorMatrix, AnchorSet, Kind};
use crate::matlin::{sherman_morrison_inv, SymMat2, SymMat3, Vec3, SINGULAR_UPDATE_TOL};
use crate::solver::SolverSettings;

/// Axis-aligned box `lower ≤ r ≤ upper` (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRepr", into = "BoxRepr")]
pub struct BoxConstraint {
    lower: Vec3,
    upper: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRepr {
    lower: Vec3,
    upper: Vec3,
}

impl TryFrom<BoxRepr> for BoxConstraint {
    type Error = Error;
    fn try_from(b: BoxRepr) -> Result<Self> {
        BoxConstraint::new(b.lower, b.upper)
    }
}

impl From<BoxConstraint> for BoxRepr {
    fn from(b: BoxConstraint) -> Self {
        BoxRepr {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

impl BoxConstraint {
    pub fn new(lower: Vec3, upper: Vec3) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::NonFinite);
        }
        if (0..3).any(|i| lower[i] >= upper[i]) {
            return Err(Error::InvalidBox);
        }
        Ok(BoxConstraint { lower, upper })
    }

    /// Box `[-h, h]` for half-extents `h`.
    pub fn symmetric(half: Vec3) -> Result<Self> {
        Self::new(-half, half)
    }

    pub fn lower(&self) -> Vec3 {
        self.lower
    }

    pub fn upper(&self) -> Vec3 {
        self.upper
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.lower[i] && p[i] <= self.upper[i])
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3(std::array::from_fn(|i| p[i].clamp(self.lower[i], self.upper[i])))
    }

    pub fn translated(&self, delta: Vec3) -> BoxConstraint {
        BoxConstraint {
            lower: self.lower + delta,
            upper: self.upper + delta,
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.upper - self.lower
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    /// Maps `u ∈ [0,1]³` affinely into the box.
    pub fn lerp(&self, u: [f64; 3]) -> Vec3 {
        Vec3(std::array::from_fn(|i| {
            self.lower[i] + u[i] * (self.upper[i] - self.lower[i])
        }))
    }
}

/// Minimum pairwise anchor distance `d_th` (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SeparationConstraint {
    d_th: f64,
}

impl SeparationConstraint {
    /// Zero is allowed and disables the constraint.
    pub fn new(d_th: f64) -> Result<Self> {
        if !(d_th >= 0.0) || !d_th.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "separation threshold must be finite and non-negative, got {d_th}"
            )));
        }
        Ok(SeparationConstraint { d_th })
    }

    pub fn d_th(&self) -> f64 {
        self.d_th
    }

    /// Distance to the nearest of `existing`, `+∞` when empty.
    pub fn nearest(&self, p: &Vec3, existing: &[Vec3]) -> f64 {
        existing
            .iter()
            .map(|q| p.distance(q))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn satisfied(&self, p: &Vec3, existing: &[Vec3], tol: f64) -> bool {
        self.nearest(p, existing) >= self.d_th - tol
    }
}

impl TryFrom<f64> for SeparationConstraint {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        SeparationConstraint::new(v)
    }
}

impl From<SeparationConstraint> for f64 {
    fn from(s: SeparationConstraint) -> f64 {
        s.d_th
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

impl Mode {
    pub fn kind(self) -> Kind {
        match self {
            Mode::TwoD => Kind::Xy,
            Mode::ThreeD => Kind::Xyz,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::TwoD => "2d",
            Mode::ThreeD => "3d",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Minimize the worst-direction RNDOP directly.
    Rnd,
    /// Minimize the trace of the updated inverse anchor matrix.
    Tr,
    /// Place along the weakest eigen-direction, no optimizer.
    Eig,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rnd => "rnd",
            Method::Tr => "tr",
            Method::Eig => "eig",
        }
    }

    pub const ALL: [Method; 3] = [Method::Rnd, Method::Tr, Method::Eig];
}

/// Random-perturbation settings for the eigenvector scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSettings {
    /// Perturbation radius as a multiple of `d_th`; must exceed 1.
    pub eta: f64,
    /// Perturbation attempts per iteration.
    pub max_tries: usize,
    /// Extra iterations allowed for invalid anchors; `None` means `2·N_a`.
    pub redundancy_cap: Option<usize>,
}

impl Default for PerturbationSettings {
    fn default() -> Self {
        PerturbationSettings {
            eta: 1.1,
            max_tries: 100,
            redundancy_cap: None,
        }
    }
}

/// Everything needed to run one placement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementProblem {
    pub mode: Mode,
    pub method: Method,
    pub bounds: BoxConstraint,
    pub separation: SeparationConstraint,
    /// Number of anchors to add, `N_a`.
    pub n_added: usize,
    pub solver: SolverSettings,
    pub perturbation: PerturbationSettings,
}

impl PlacementProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.perturbation.eta > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "perturbation eta must exceed 1, got {}",
                self.perturbation.eta
            )));
        }
        if self.perturbation.max_tries == 0 {
            return Err(Error::InvalidParameter(
                "perturbation max_tries must be at least 1".into(),
            ));
        }
        self.solver.validate()
    }

    pub fn redundancy_cap(&self) -> usize {
        self.perturbation
            .redundancy_cap
            .unwrap_or(2 * self.n_added)
    }
}

/// Bracket on the squared worst-direction RNDOP after the next addition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationBounds {
    pub lower: f64,
    pub upper: f64,
}

impl IterationBounds {
    pub fn contains(&self, value: f64, slack: f64) -> bool {
        value >= self.lower - slack && value <= self.upper + slack
    }
}

fn update_coef(k: usize) -> f64 {
    k as f64 / (k as f64 + 1.0)
}

/// `C_k + k/(k+1)·r rᵀ`.
pub fn update_c(c: &SymMat3, r: &Vec3, k: usize) -> SymMat3 {
    *c + SymMat3::outer(r).scale(update_coef(k))
}

/// Inverse of [`update_c`] from `D_k = C_k⁻¹`.
pub fn update_d(d: &SymMat3, r: &Vec3, k: usize) -> Result<SymMat3> {
    sherman_morrison_inv(d, r, update_coef(k))
}

/// Horizontal block of [`update_d`], computed from the projection `[D_k r]_{1:2}`.
pub fn update_e(e: &SymMat2, d: &SymMat3, r: &Vec3, k: usize) -> Result<SymMat2> {
    let coef = update_coef(k);
    let dr = d.mul_vec(r);
    let denominator = 1.0 + coef * r.dot(&dr);
    if denominator.abs() <= SINGULAR_UPDATE_TOL || !denominator.is_finite() {
        return Err(Error::SingularUpdate { denominator });
    }
    Ok(*e - SymMat2::outer(&dr.xy()).scale(coef / denominator))
}

/// `tr(M⁻¹) − λ₋(M⁻¹)` for `M = update_c(C_k, r, k)`.
pub fn cost_rnd_3d(c: &SymMat3, r: &Vec3, k: usize) -> Result<f64> {
    let m = update_c(c, r, k);
    let e = m.eig()?;
    if !(e.values[0] > 0.0) {
        return Err(Error::SingularUpdate {
            denominator: e.values[0],
        });
    }
    Ok(1.0 / e.values[0] + 1.0 / e.values[1])
}

/// `rᵀD_k²r / (1 + k/(k+1)·rᵀD_k r)`, the trace reduction `tr(D_k) − tr(D_{k+1})`
/// divided by `k/(k+1)`; larger is better.
pub fn cost_tr_3d(d: &SymMat3, r: &Vec3, k: usize) -> f64 {
    let dr = d.mul_vec(r);
    dr.norm_squared() / (1.0 + update_coef(k) * r.dot(&dr))
}

/// `λ₊(E_{k+1})`.
pub fn cost_rnd_2d(e: &SymMat2, d: &SymMat3, r: &Vec3, k: usize) -> Result<f64> {
    Ok(update_e(e, d, r, k)?.eigenvalues()[1])
}

/// `‖[D_k r]_{1:2}‖² / (1 + k/(k+1)·rᵀD_k r)`, the reduction of `tr(E)` divided
/// by `k/(k+1)`; larger is better.
pub fn cost_tr_2d(d: &SymMat3, r: &Vec3, k: usize) -> f64 {
    let dr = d.mul_vec(r);
    let [x, y] = dr.xy();
    (x * x + y * y) / (1.0 + update_coef(k) * r.dot(&dr))
}

/// Objective to minimize for the optimizer-based methods at iteration `k`.
///
/// The trace schemes are negated so every objective is minimized. Points that
/// make the update singular map to `+∞`.
pub fn subproblem_objective(
    mode: Mode,
    method: Method,
    am: &AnchorMatrix,
) -> impl Fn(&Vec3) -> f64 + '_ {
    let k = am.count();
    move |r: &Vec3| {
        let value = match (mode, method) {
            (Mode::ThreeD, Method::Rnd) => cost_rnd_3d(am.c(), r, k),
            (Mode::ThreeD, _) => Ok(-cost_tr_3d(am.d(), r, k)),
            (Mode::TwoD, Method::Rnd) => cost_rnd_2d(am.e(), am.d(), r, k),
            (Mode::TwoD, _) => Ok(-cost_tr_2d(am.d(), r, k)),
        };
        value.unwrap_or(f64::INFINITY)
    }
}

/// Largest `α ≥ 0` with `α·v` inside `[lower, upper]`, assuming the box
/// contains the origin. Zero components of `v` do not constrain `α`.
pub fn alpha_max<const N: usize>(v: &[f64; N], lower: &[f64; N], upper: &[f64; N]) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..N {
        if v[i] > 0.0 {
            alpha = alpha.min(upper[i] / v[i]);
        } else if v[i] < 0.0 {
            alpha = alpha.min(lower[i] / v[i]);
        }
    }
    alpha.max(0.0)
}

/// Longest feasible ray along `±v`, preferring `+v` on ties.
fn longest_ray<const N: usize>(v: &[f64; N], lower: &[f64; N], upper: &[f64; N]) -> Result<[f64; N]> {
    let neg: [f64; N] = std::array::from_fn(|i| -v[i]);
    let a_pos = alpha_max(v, lower, upper);
    let a_neg = alpha_max(&neg, lower, upper);
    let (alpha, dir) = if a_neg > a_pos { (a_neg, neg) } else { (a_pos, *v) };
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::ZeroFeasible);
    }
    Ok(std::array::from_fn(|i| {
        (alpha * dir[i]).clamp(lower[i], upper[i])
    }))
}

/// Farthest box point along the weakest eigen-direction of `C_k`.
pub fn eig_candidate_3d(c: &SymMat3, bounds: &BoxConstraint) -> Result<Vec3> {
    let v = c.eig()?.min_vector();
    Ok(Vec3(longest_ray(&v, &bounds.lower().0, &bounds.upper().0)?))
}

/// Farthest horizontal point along the strongest eigen-direction of `E_k`,
/// with the height that minimizes the resulting coupling term.
pub fn eig_candidate_2d(e: &SymMat2, d: &SymMat3, bounds: &BoxConstraint) -> Result<Vec3> {
    let v = e.eig()?.max_vector();
    let lo = bounds.lower();
    let hi = bounds.upper();
    let xy = longest_ray(&v, &[lo[0], lo[1]], &[hi[0], hi[1]])?;
    let z = optimal_height(d, &xy, (lo[2], hi[2]));
    Ok(Vec3::new(xy[0], xy[1], z))
}

/// Minimizer of `p z² + 2 z qᵀr̃` over `z_range`, with `q = [D]_{1:2,3}`, `p = D₃₃`.
pub fn optimal_height(d: &SymMat3, xy: &[f64; 2], z_range: (f64, f64)) -> f64 {
    let p = d.get(2, 2);
    let qr = d.get(0, 2) * xy[0] + d.get(1, 2) * xy[1];
    let z = if p > 0.0 { -qr / p } else { 0.0 };
    z.clamp(z_range.0, z_range.1)
}

/// Interlacing bracket on the squared worst-direction RNDOP one addition ahead.
pub fn iteration_bounds(am: &AnchorMatrix, mode: Mode) -> Result<IterationBounds> {
    match mode {
        Mode::ThreeD => {
            let l = am.c().eig()?.values;
            Ok(IterationBounds {
                lower: 1.0 / l[2] + 1.0 / l[1],
                upper: 1.0 / l[1] + 1.0 / l[0],
            })
        }
        Mode::TwoD => {
            let [lower, upper] = am.e().eigenvalues();
            if !(lower > 0.0) {
                return Err(Error::SingularE);
            }
            Ok(IterationBounds { lower, upper })
        }
    }
}

/// Squared worst-direction RNDOP for the given mode.
pub fn achieved_sq_rndop(am: &AnchorMatrix, mode: Mode) -> Result<f64> {
    max_rndop_sq(am, mode.kind())
}

/// Lower bounds on the worst-direction 3D RNDOP (per unit range):
/// configuration-specific `√(6/Σ‖rᵢ‖²)` and universal `√(6/N)/r_max`.
pub fn minimax_lower_bounds(anchors: &AnchorSet) -> Result<(f64, f64)> {
    if !anchors.is_centered() {
        return Err(Error::NotCentered {
            norm: anchors.centroid().norm(),
        });
    }
    let n = anchors.len() as f64;
    let sum_sq: f64 = anchors.points().iter().map(Vec3::norm_squared).sum();
    let config = (6.0 / sum_sq).sqrt();
    let universal = (6.0 / n).sqrt() / anchors.max_radius();
    Ok((config, universal))
}
