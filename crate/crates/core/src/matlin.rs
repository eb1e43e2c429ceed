//! Small dense symmetric linear algebra for 2×2 and 3×3 problems.
//!
//! Everything here works on fixed-size stack values. The eigen-solver is a
//! cyclic Jacobi iteration, which stays accurate near repeated eigenvalues
//! where closed-form cubic roots lose digits.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominators of rank-1 inverse updates below this magnitude are rejected.
pub const SINGULAR_UPDATE_TOL: f64 = 1e-14;

/// Relative threshold used by positive-definiteness tests:
/// `λ₁ > PD_REL_TOL · max(1, tr)`.
pub const PD_REL_TOL: f64 = 1e-12;

const SIGN_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 64;

/// A 3-vector in meters (or unitless when used as a direction).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn dot(&self, other: &Vec3) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(&self, other: &Vec3) -> f64 {
        (*self - *other).norm()
    }

    /// First two components.
    pub fn xy(&self) -> [f64; 2] {
        [self.0[0], self.0[1]]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Mean of a non-empty slice of points; zero for an empty slice.
    pub fn mean(points: &[Vec3]) -> Vec3 {
        if points.is_empty() {
            return Vec3::ZERO;
        }
        let sum = points.iter().fold(Vec3::ZERO, |acc, p| acc + *p);
        sum * (1.0 / points.len() as f64)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3([self.0[0] + rhs.0[0], self.0[1] + rhs.0[1], self.0[2] + rhs.0[2]])
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, rhs: Vec3) {
        *self = *self + rhs;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3([self.0[0] - rhs.0[0], self.0[1] - rhs.0[1], self.0[2] - rhs.0[2]])
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, rhs: Vec3) {
        *self = *self - rhs;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self * -1.0
    }
}

/// Real symmetric 3×3 matrix. Every constructor mirrors the upper triangle,
/// so the stored array is exactly symmetric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMat3 {
    a: [[f64; 3]; 3],
}

impl SymMat3 {
    pub const ZERO: SymMat3 = SymMat3 { a: [[0.0; 3]; 3] };

    pub fn identity() -> Self {
        Self::diag(1.0, 1.0, 1.0)
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        Self::from_upper(a, 0.0, 0.0, b, 0.0, c)
    }

    /// Builds from the six upper-triangle entries `(xx, xy, xz, yy, yz, zz)`.
    pub fn from_upper(xx: f64, xy: f64, xz: f64, yy: f64, yz: f64, zz: f64) -> Self {
        SymMat3 {
            a: [[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]],
        }
    }

    /// Symmetrizes an arbitrary square array as `(A + Aᵀ)/2`.
    pub fn from_rows_symmetrized(m: [[f64; 3]; 3]) -> Self {
        let mut a = [[0.0; 3]; 3];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = 0.5 * (m[i][j] + m[j][i]);
            }
        }
        SymMat3 { a }
    }

    /// `v vᵀ`.
    pub fn outer(v: &Vec3) -> Self {
        let v = v.0;
        Self::from_upper(
            v[0] * v[0],
            v[0] * v[1],
            v[0] * v[2],
            v[1] * v[1],
            v[1] * v[2],
            v[2] * v[2],
        )
    }

    /// `Σ vᵢ vᵢᵀ` accumulated entrywise.
    pub fn sum_of_outer<'a>(vs: impl IntoIterator<Item = &'a Vec3>) -> Self {
        vs.into_iter()
            .fold(SymMat3::ZERO, |acc, v| acc + SymMat3::outer(v))
    }

    /// `Σ λᵢ vᵢ vᵢᵀ`.
    pub fn from_eigen(decomp: &EigDecomp<3>) -> Self {
        (0..3).fold(SymMat3::ZERO, |acc, i| {
            acc + SymMat3::outer(&Vec3(decomp.vectors[i])).scale(decomp.values[i])
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        self.a
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut a = self.a;
        a.iter_mut().flatten().for_each(|v| *v *= s);
        SymMat3 { a }
    }

    pub fn trace(&self) -> f64 {
        self.a[0][0] + self.a[1][1] + self.a[2][2]
    }

    pub fn mul_vec(&self, v: &Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.a[i][0] * v.0[0] + self.a[i][1] * v.0[1] + self.a[i][2] * v.0[2];
        }
        Vec3(out)
    }

    /// `vᵀ A v`.
    pub fn quad_form(&self, v: &Vec3) -> f64 {
        v.dot(&self.mul_vec(v))
    }

    /// General product `A B` (not symmetric in general).
    pub fn matmul(&self, other: &SymMat3) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.a[i][k] * other.a[k][j]).sum();
            }
        }
        out
    }

    /// `A²`, symmetric because `A` is.
    pub fn square(&self) -> Self {
        Self::from_rows_symmetrized(self.matmul(self))
    }

    /// Congruence `S A S` for symmetric `S`.
    pub fn congruence(&self, s: &SymMat3) -> Self {
        let sa = s.matmul(self);
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| sa[i][k] * s.a[k][j]).sum();
            }
        }
        Self::from_rows_symmetrized(out)
    }

    pub fn determinant(&self) -> f64 {
        let a = &self.a;
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    /// Inverse via the adjugate. Returns `None` when the determinant is zero
    /// or the result is not finite; callers apply their own conditioning test.
    pub fn try_inverse(&self) -> Option<Self> {
        let a = &self.a;
        let c00 = a[1][1] * a[2][2] - a[1][2] * a[1][2];
        let c01 = a[0][2] * a[1][2] - a[0][1] * a[2][2];
        let c02 = a[0][1] * a[1][2] - a[0][2] * a[1][1];
        let c11 = a[0][0] * a[2][2] - a[0][2] * a[0][2];
        let c12 = a[0][1] * a[0][2] - a[0][0] * a[1][2];
        let c22 = a[0][0] * a[1][1] - a[0][1] * a[0][1];
        let det = a[0][0] * c00 + a[0][1] * c01 + a[0][2] * c02;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let inv = Self::from_upper(c00, c01, c02, c11, c12, c22).scale(1.0 / det);
        inv.is_finite().then_some(inv)
    }

    /// Top-left 2×2 block.
    pub fn top_left(&self) -> SymMat2 {
        SymMat2::from_upper(self.a[0][0], self.a[0][1], self.a[1][1])
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().flatten().all(|v| v.is_finite())
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Induced ∞-norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        self.a
            .iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn eig(&self) -> Result<EigDecomp<3>> {
        eig_sym(self)
    }

    /// Scale-relative positive-definiteness test used throughout the crate.
    pub fn is_positive_definite(&self) -> bool {
        match self.eig() {
            Ok(e) => e.values[0] > PD_REL_TOL * self.trace().abs().max(1.0),
            Err(_) => false,
        }
    }
}

impl Add for SymMat3 {
    type Output = SymMat3;
    fn add(self, rhs: SymMat3) -> SymMat3 {
        let mut a = self.a;
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += rhs.a[i][j];
            }
        }
        SymMat3 { a }
    }
}

impl Sub for SymMat3 {
    type Output = SymMat3;
    fn sub(self, rhs: SymMat3) -> SymMat3 {
        self + rhs.scale(-1.0)
    }
}

/// Real symmetric 2×2 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMat2 {
    a: [[f64; 2]; 2],
}

impl SymMat2 {
    pub const ZERO: SymMat2 = SymMat2 { a: [[0.0; 2]; 2] };

    pub fn from_upper(xx: f64, xy: f64, yy: f64) -> Self {
        SymMat2 {
            a: [[xx, xy], [xy, yy]],
        }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Self::from_upper(a, 0.0, b)
    }

    pub fn identity() -> Self {
        Self::diag(1.0, 1.0)
    }

    pub fn outer(v: &[f64; 2]) -> Self {
        Self::from_upper(v[0] * v[0], v[0] * v[1], v[1] * v[1])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn rows(&self) -> [[f64; 2]; 2] {
        self.a
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_upper(self.a[0][0] * s, self.a[0][1] * s, self.a[1][1] * s)
    }

    pub fn trace(&self) -> f64 {
        self.a[0][0] + self.a[1][1]
    }

    pub fn determinant(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[0][1]
    }

    pub fn mul_vec(&self, v: &[f64; 2]) -> [f64; 2] {
        [
            self.a[0][0] * v[0] + self.a[0][1] * v[1],
            self.a[1][0] * v[0] + self.a[1][1] * v[1],
        ]
    }

    pub fn quad_form(&self, v: &[f64; 2]) -> f64 {
        let w = self.mul_vec(v);
        v[0] * w[0] + v[1] * w[1]
    }

    pub fn square(&self) -> Self {
        let [[a, b], [_, c]] = self.a;
        Self::from_upper(a * a + b * b, a * b + b * c, b * b + c * c)
    }

    /// Ascending eigenvalues from the closed form, which is well conditioned
    /// for 2×2 symmetric matrices.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let [[a, b], [_, c]] = self.a;
        let mean = 0.5 * (a + c);
        let radius = (0.5 * (a - c)).hypot(b);
        [mean - radius, mean + radius]
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn eig(&self) -> Result<EigDecomp<2>> {
        eig_sym(self)
    }
}

impl Add for SymMat2 {
    type Output = SymMat2;
    fn add(self, rhs: SymMat2) -> SymMat2 {
        Self::from_upper(
            self.a[0][0] + rhs.a[0][0],
            self.a[0][1] + rhs.a[0][1],
            self.a[1][1] + rhs.a[1][1],
        )
    }
}

impl Sub for SymMat2 {
    type Output = SymMat2;
    fn sub(self, rhs: SymMat2) -> SymMat2 {
        self + rhs.scale(-1.0)
    }
}

/// Ascending eigenvalues with matching orthonormal eigenvectors.
///
/// `vectors[i]` is the unit eigenvector for `values[i]`. Each vector's first
/// component with magnitude above 1e-12 is positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigDecomp<const N: usize> {
    pub values: [f64; N],
    pub vectors: [[f64; N]; N],
}

impl<const N: usize> EigDecomp<N> {
    pub fn min_value(&self) -> f64 {
        self.values[0]
    }

    pub fn max_value(&self) -> f64 {
        self.values[N - 1]
    }

    pub fn min_vector(&self) -> [f64; N] {
        self.vectors[0]
    }

    pub fn max_vector(&self) -> [f64; N] {
        self.vectors[N - 1]
    }

    /// Rebuilds `Σ λᵢ vᵢ vᵢᵀ` as a dense array.
    pub fn reconstruct(&self) -> [[f64; N]; N] {
        let mut out = [[0.0; N]; N];
        for k in 0..N {
            for i in 0..N {
                for j in 0..N {
                    out[i][j] += self.values[k] * self.vectors[k][i] * self.vectors[k][j];
                }
            }
        }
        out
    }
}

/// Symmetric matrices the Jacobi solver accepts.
pub trait SymmetricMatrix<const N: usize> {
    fn to_array(&self) -> [[f64; N]; N];
}

impl SymmetricMatrix<3> for SymMat3 {
    fn to_array(&self) -> [[f64; 3]; 3] {
        self.a
    }
}

impl SymmetricMatrix<2> for SymMat2 {
    fn to_array(&self) -> [[f64; 2]; 2] {
        self.a
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn eig_sym<const N: usize, M: SymmetricMatrix<N>>(m: &M) -> Result<EigDecomp<N>> {
    let mut a = m.to_array();
    if a.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..N)
            .flat_map(|p| ((p + 1)..N).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        if off == 0.0 {
            break;
        }
        let diag: f64 = (0..N).map(|i| a[i][i] * a[i][i]).sum();
        if off <= (f64::EPSILON * f64::EPSILON) * 1e-4 * diag {
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.0
                } else {
                    theta.signum() / (theta.abs() + theta.hypot(1.0))
                };
                if t == 0.0 {
                    a[p][q] = 0.0;
                    a[q][p] = 0.0;
                    continue;
                }
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                // A ← Jᵀ A J with J the (p, q) plane rotation.
                for k in 0..N {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut order: [usize; N] = [0; N];
    for (i, o) in order.iter_mut().enumerate() {
        *o = i;
    }
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));

    let mut values = [0.0; N];
    let mut vectors = [[0.0; N]; N];
    for (slot, &col) in order.iter().enumerate() {
        values[slot] = a[col][col];
        let mut vec = [0.0; N];
        for (i, x) in vec.iter_mut().enumerate() {
            *x = v[i][col];
        }
        let norm = vec.iter().map(|x| x * x).sum::<f64>().sqrt();
        vec.iter_mut().for_each(|x| *x /= norm);
        if let Some(first) = vec.iter().find(|x| x.abs() > SIGN_TOL) {
            if *first < 0.0 {
                vec.iter_mut().for_each(|x| *x = -*x);
            }
        }
        vectors[slot] = vec;
    }
    Ok(EigDecomp { values, vectors })
}

/// `(X + s·y yᵀ)⁻¹` from `X⁻¹` by the Sherman-Morrison identity.
pub fn sherman_morrison_inv(xinv: &SymMat3, y: &Vec3, scale: f64) -> Result<SymMat3> {
    let u = xinv.mul_vec(y);
    let denominator = 1.0 + scale * y.dot(&u);
    if denominator.abs() <= SINGULAR_UPDATE_TOL || !denominator.is_finite() {
        return Err(Error::SingularUpdate { denominator });
    }
    Ok(*xinv - SymMat3::outer(&u).scale(scale / denominator))
}

/// Extreme generalized eigenpairs of `(X, Y)` with `Y ≻ 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneralizedExtremes {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Eigenvectors of `Z = Y^{-1/2} X Y^{-1/2}`.
    pub v_min: Vec3,
    pub v_max: Vec3,
    /// Rayleigh-quotient maximizer `Y^{-1/2} v_max`, unit-normalized.
    pub w_max: Vec3,
    /// Rayleigh-quotient minimizer `Y^{-1/2} v_min`, unit-normalized.
    pub w_min: Vec3,
}

pub fn generalized_eig_extremes(x: &SymMat3, y: &SymMat3) -> Result<GeneralizedExtremes> {
    let ey = y.eig()?;
    if ey.values[0] <= PD_REL_TOL * y.trace().abs().max(1.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let inv_sqrt = (0..3).fold(SymMat3::ZERO, |acc, i| {
        acc + SymMat3::outer(&Vec3(ey.vectors[i])).scale(1.0 / ey.values[i].sqrt())
    });
    let z = x.congruence(&inv_sqrt);
    let ez = z.eig()?;
    let v_min = Vec3(ez.min_vector());
    let v_max = Vec3(ez.max_vector());
    let w_min = inv_sqrt.mul_vec(&v_min);
    let w_max = inv_sqrt.mul_vec(&v_max);
    Ok(GeneralizedExtremes {
        lambda_min: ez.min_value(),
        lambda_max: ez.max_value(),
        v_min,
        v_max,
        w_min: w_min * (1.0 / w_min.norm()),
        w_max: w_max * (1.0 / w_max.norm()),
    })
}

/// Checks the rank-1 interlacing chains for `Y = X + ε w wᵀ`, `‖w‖ = 1`.
pub fn interlacing_check<const N: usize>(
    before: &EigDecomp<N>,
    after: &EigDecomp<N>,
    epsilon: f64,
) -> bool {
    let x = &before.values;
    let y = &after.values;
    let scale = x
        .iter()
        .chain(y.iter())
        .fold(epsilon.abs(), |m, v| m.max(v.abs()))
        .max(1.0);
    let tol = 1e-9 * scale;
    let le = |a: f64, b: f64| a <= b + tol;

    if epsilon >= 0.0 {
        (0..N).all(|i| le(x[i], y[i]))
            && (0..N - 1).all(|i| le(y[i], x[i + 1]))
            && le(y[N - 1], x[N - 1] + epsilon)
    } else {
        le(x[0] + epsilon, y[0])
            && (0..N).all(|i| le(y[i], x[i]))
            && (0..N - 1).all(|i| le(x[i], y[i + 1]))
    }
}

/// Minimum of `tr(X⁻¹) − λ₋(X⁻¹)` over 3×3 positive definite `X` with
/// `tr(X) = K`, attained at `X = (K/3)·I`.
pub fn trace_constrained_optimum(trace: f64) -> Result<f64> {
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::NonPositiveTrace(trace));
    }
    Ok(6.0 / trace)
}
