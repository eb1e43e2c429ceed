//! Dilution of precision for ToA anchors, exact and in the far-field limit.
//!
//! Far-field quantities only depend on the anchor matrix `C = Σ rᵢrᵢᵀ` of
//! centered anchors, its inverse `D` and the horizontal block `E` of `D`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlin::{SymMat2, SymMat3, Vec3, PD_REL_TOL};

/// Centroid norm (per anchor) below which a set counts as centered.
pub const CENTERED_TOL: f64 = 1e-9;

/// A target closer than this to an anchor makes the geometry matrix undefined.
pub const COINCIDENCE_TOL: f64 = 1e-9;

/// Multiplier on [`far_away_threshold`] beyond which a target is treated as far away.
pub const FAR_AWAY_FACTOR: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    /// Full 3D position error.
    Xyz,
    /// Horizontal error for targets on the XY plane.
    Xy,
}

/// Ordered anchor coordinates in meters with a cached centroid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec3>", into = "Vec<Vec3>")]
pub struct AnchorSet {
    points: Vec<Vec3>,
    centroid: Vec3,
}

impl TryFrom<Vec<Vec3>> for AnchorSet {
    type Error = Error;
    fn try_from(points: Vec<Vec3>) -> Result<Self> {
        AnchorSet::new(points)
    }
}

impl From<AnchorSet> for Vec<Vec3> {
    fn from(set: AnchorSet) -> Self {
        set.points
    }
}

impl AnchorSet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite);
        }
        let centroid = Vec3::mean(&points);
        Ok(AnchorSet { points, centroid })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        self.centroid
    }

    pub fn is_centered(&self) -> bool {
        let sum = self.centroid * self.points.len() as f64;
        sum.norm() <= CENTERED_TOL * self.points.len() as f64
    }

    pub fn translated(&self, delta: Vec3) -> AnchorSet {
        AnchorSet {
            points: self.points.iter().map(|p| *p + delta).collect(),
            centroid: self.centroid + delta,
        }
    }

    /// The set moved so its centroid is the origin, plus the centroid removed.
    pub fn centered(&self) -> (AnchorSet, Vec3) {
        let c = self.centroid;
        let mut out = self.translated(-c);
        out.centroid = Vec3::mean(&out.points);
        (out, c)
    }

    /// Smallest pairwise distance, or `+∞` for fewer than two anchors.
    pub fn min_separation(&self) -> f64 {
        min_pairwise_distance(&self.points)
    }

    /// Largest distance from the origin.
    pub fn max_radius(&self) -> f64 {
        self.points.iter().map(Vec3::norm).fold(0.0, f64::max)
    }
}

pub fn min_pairwise_distance(points: &[Vec3]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.min(p.distance(q));
        }
    }
    best
}

/// Unit direction `[cosθ sinφ, sinθ sinφ, cosφ]`; `φ = π/2` lies in the XY plane.
pub fn direction(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(ct * sp, st * sp, cp)
}

/// Unit horizontal direction `[cosθ, sinθ]`.
pub fn direction_xy(theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c, s]
}

/// Target position, given in Cartesian or polar form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Target {
    pub position: Vec3,
}

impl Target {
    pub fn cartesian(position: Vec3) -> Self {
        Target { position }
    }

    pub fn polar(range: f64, theta: f64, phi: f64) -> Result<Self> {
        if !(range > 0.0) || !range.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "target range must be positive, got {range}"
            )));
        }
        Ok(Target {
            position: direction(theta, phi) * range,
        })
    }
}

/// `C = Σ rᵢrᵢᵀ` with cached `D = C⁻¹` and `E = [D]_{1:2,1:2}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorMatrix {
    c: SymMat3,
    d: SymMat3,
    e: SymMat2,
    count: usize,
}

impl AnchorMatrix {
    /// Builds from a centered anchor set.
    pub fn from_anchors(anchors: &AnchorSet) -> Result<Self> {
        if !anchors.is_centered() {
            return Err(Error::NotCentered {
                norm: anchors.centroid().norm(),
            });
        }
        Self::from_c(SymMat3::sum_of_outer(anchors.points()), anchors.len())
    }

    pub fn from_c(c: SymMat3, count: usize) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::NonFinite);
        }
        if !c.is_positive_definite() {
            return Err(Error::SingularC);
        }
        let d = c.try_inverse().ok_or(Error::SingularC)?;
        Ok(AnchorMatrix {
            c,
            d,
            e: d.top_left(),
            count,
        })
    }

    /// Builds from `C` and a `D` already known to be its inverse, e.g. from a
    /// rank-1 update.
    pub fn from_parts(c: SymMat3, d: SymMat3, count: usize) -> Self {
        AnchorMatrix {
            c,
            d,
            e: d.top_left(),
            count,
        }
    }

    pub fn c(&self) -> &SymMat3 {
        &self.c
    }

    pub fn d(&self) -> &SymMat3 {
        &self.d
    }

    pub fn e(&self) -> &SymMat2 {
        &self.e
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn check_kind(&self, kind: Kind) -> Result<()> {
        if kind == Kind::Xy {
            let [lo, _] = self.e.eigenvalues();
            if !(lo > PD_REL_TOL * self.e.trace().abs()) {
                return Err(Error::SingularE);
            }
        }
        Ok(())
    }
}

/// Exact DOP from the geometry matrix with rows `(r_t − rᵢ)/‖r_t − rᵢ‖`.
pub fn exact_dop(anchors: &[Vec3], target: &Target, kind: Kind) -> Result<f64> {
    let rt = target.position;
    let mut hth = SymMat3::ZERO;
    for (index, r) in anchors.iter().enumerate() {
        let diff = rt - *r;
        let dist = diff.norm();
        if dist <= COINCIDENCE_TOL {
            return Err(Error::TargetAtAnchor { index });
        }
        hth = hth + SymMat3::outer(&(diff * (1.0 / dist)));
    }
    let eig = hth.eig()?;
    if eig.values[0] < PD_REL_TOL * hth.trace() {
        return Err(Error::DegenerateGeometry);
    }
    // Far from the anchors HᵀH is nearly rank one; the adjugate inverse loses
    // every digit there, the spectral form does not.
    let tr: f64 = eig
        .values
        .iter()
        .zip(&eig.vectors)
        .map(|(l, v)| match kind {
            Kind::Xyz => 1.0 / l,
            Kind::Xy => (v[0] * v[0] + v[1] * v[1]) / l,
        })
        .sum();
    Ok(tr.sqrt())
}

/// Anchor distance beyond which the far-field approximation applies:
/// `[N λ₋(D)]^{-1/2}`.
pub fn far_away_threshold(am: &AnchorMatrix) -> Result<f64> {
    let lambda_min_d = am.d().eig()?.min_value();
    Ok(1.0 / (am.count() as f64 * lambda_min_d).sqrt())
}

/// Whether a target range counts as far away for this anchor matrix.
pub fn is_far_away(am: &AnchorMatrix, range: f64) -> Result<bool> {
    Ok(range >= FAR_AWAY_FACTOR * far_away_threshold(am)?)
}

/// Range-normalized DOP in direction `(θ, φ)`; `φ` is ignored for [`Kind::Xy`].
pub fn rndop(am: &AnchorMatrix, theta: f64, phi: f64, kind: Kind) -> Result<f64> {
    match kind {
        Kind::Xyz => rndop_xyz_along(am, &direction(theta, phi)),
        Kind::Xy => rndop_xy_along(am, &direction_xy(theta)),
    }
}

/// `√(tr D − aᵀD²a / aᵀDa)` for a direction `a` (need not be unit).
pub fn rndop_xyz_along(am: &AnchorMatrix, a: &Vec3) -> Result<f64> {
    let d = am.d();
    let da = d.mul_vec(a);
    let sq = d.trace() - da.norm_squared() / a.dot(&da);
    Ok(sq.max(0.0).sqrt())
}

/// `√(tr E − bᵀE²b / bᵀEb)` for a horizontal direction `b`.
pub fn rndop_xy_along(am: &AnchorMatrix, b: &[f64; 2]) -> Result<f64> {
    am.check_kind(Kind::Xy)?;
    let e = am.e();
    let eb = e.mul_vec(b);
    let num = eb[0] * eb[0] + eb[1] * eb[1];
    let sq = e.trace() - num / (b[0] * eb[0] + b[1] * eb[1]);
    Ok(sq.max(0.0).sqrt())
}

/// Asymptotic `(lower, upper)` range of the RNDOP over all directions.
pub fn rndop_bounds(am: &AnchorMatrix, kind: Kind) -> Result<(f64, f64)> {
    match kind {
        Kind::Xyz => {
            let e = am.d().eig()?;
            let tr = am.d().trace();
            Ok((
                (tr - e.max_value()).max(0.0).sqrt(),
                (tr - e.min_value()).max(0.0).sqrt(),
            ))
        }
        Kind::Xy => {
            am.check_kind(Kind::Xy)?;
            let [lo, hi] = am.e().eigenvalues();
            Ok((lo.max(0.0).sqrt(), hi.max(0.0).sqrt()))
        }
    }
}

/// Squared worst-direction RNDOP: `tr D − λ₋(D)` (3D) or `λ₊(E)` (2D).
pub fn max_rndop_sq(am: &AnchorMatrix, kind: Kind) -> Result<f64> {
    let (_, upper) = rndop_bounds(am, kind)?;
    Ok(upper * upper)
}

/// Worst-direction RNDOP of an arbitrary anchor set, centering it first.
pub fn max_rndop_of(points: &[Vec3], kind: Kind) -> Result<f64> {
    let (centered, _) = AnchorSet::new(points.to_vec())?.centered();
    let am = AnchorMatrix::from_anchors(&centered)?;
    Ok(max_rndop_sq(&am, kind)?.sqrt())
}

/// Rectangle in `(θ, φ)` angle space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngularRegion {
    pub theta: (f64, f64),
    pub phi: (f64, f64),
}

impl AngularRegion {
    pub fn full() -> Self {
        AngularRegion {
            theta: (-PI, PI),
            phi: (-PI / 2.0, PI / 2.0),
        }
    }

    fn is_empty(&self) -> bool {
        !(self.theta.1 > self.theta.0 && self.phi.1 > self.phi.0)
    }

    /// Midpoint grid of `n × n` angle pairs.
    pub fn midpoints(&self, n: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        let dt = (self.theta.1 - self.theta.0) / n as f64;
        let dp = (self.phi.1 - self.phi.0) / n as f64;
        (0..n).flat_map(move |i| {
            let theta = self.theta.0 + (i as f64 + 0.5) * dt;
            (0..n).map(move |j| (theta, self.phi.0 + (j as f64 + 0.5) * dp))
        })
    }
}

/// Mean of `f(θ,φ)·R(θ,φ)` over a uniform angular grid.
///
/// The measure is uniform in `(θ, φ)`, not in solid angle; pass `|sin φ|`
/// inside `f` for area weighting.
pub fn weighted_rndop(
    am: &AnchorMatrix,
    weight: impl Fn(f64, f64) -> f64,
    region: &AngularRegion,
    resolution: usize,
    kind: Kind,
) -> Result<f64> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if resolution < 8 {
        return Err(Error::CoarseQuadrature(resolution));
    }
    let mut sum = 0.0;
    for (theta, phi) in region.midpoints(resolution) {
        sum += weight(theta, phi) * rndop(am, theta, phi, kind)?;
    }
    Ok(sum / (resolution * resolution) as f64)
}
