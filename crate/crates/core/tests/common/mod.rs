#![allow(dead_code)]

use proptest::prelude::*;
use rand::Rng;
use rndop_core::geometry::AnchorSet;
use rndop_core::placement::{BoxConstraint, Method, Mode, PerturbationSettings, PlacementProblem, SeparationConstraint};
use rndop_core::solver::SolverSettings;
use rndop_core::{SymMat3, Vec3};

pub fn room_box() -> BoxConstraint {
    BoxConstraint::symmetric(Vec3::new(30.0, 20.0, 10.0)).unwrap()
}

pub fn room_problem(mode: Mode, method: Method, n_added: usize, seed: u64) -> PlacementProblem {
    PlacementProblem {
        mode,
        method,
        bounds: room_box(),
        separation: SeparationConstraint::new(4.472).unwrap(),
        n_added,
        solver: SolverSettings {
            seed,
            ..SolverSettings::default()
        },
        perturbation: PerturbationSettings::default(),
    }
}

pub fn tetrahedron() -> Vec<Vec3> {
    vec![
        Vec3::new(1.0, 1.0, 1.0),
        Vec3::new(1.0, -1.0, -1.0),
        Vec3::new(-1.0, 1.0, -1.0),
        Vec3::new(-1.0, -1.0, 1.0),
    ]
}

pub fn random_vec(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

/// `n` uniform points in the box, re-centered on their centroid.
pub fn random_centered(rng: &mut impl Rng, n: usize, half: Vec3) -> AnchorSet {
    let pts: Vec<Vec3> = (0..n)
        .map(|_| {
            Vec3::new(
                rng.random_range(-half.x()..half.x()),
                rng.random_range(-half.y()..half.y()),
                rng.random_range(-half.z()..half.z()),
            )
        })
        .collect();
    AnchorSet::new(pts).unwrap().centered().0
}

/// Random SPD matrix `AᵀA + shift·I`.
pub fn random_spd(rng: &mut impl Rng, scale: f64, shift: f64) -> SymMat3 {
    let cols: Vec<Vec3> = (0..3).map(|_| random_vec(rng, scale)).collect();
    SymMat3::sum_of_outer(&cols) + SymMat3::identity().scale(shift)
}

pub fn vec3_strategy(scale: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-scale..scale).prop_map(Vec3)
}

pub fn spd_strategy(scale: f64) -> impl Strategy<Value = SymMat3> {
    (vec3_strategy(scale), vec3_strategy(scale), vec3_strategy(scale), 0.1..10.0f64)
        .prop_map(|(a, b, c, s)| SymMat3::sum_of_outer(&[a, b, c]) + SymMat3::identity().scale(s))
}

/// 3×3 inverse by Gauss-Jordan elimination with partial pivoting; an oracle
/// independent of the adjugate formula used by the library.
pub fn gauss_jordan_inverse(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut a = [[0.0; 6]; 3];
    for i in 0..3 {
        a[i][..3].copy_from_slice(&m[i]);
        a[i][3 + i] = 1.0;
    }
    for col in 0..3 {
        let pivot = (col..3).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for row in 0..3 {
            if row != col {
                let f = a[row][col];
                for j in 0..6 {
                    a[row][j] -= f * a[col][j];
                }
            }
        }
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        inv[i].copy_from_slice(&a[i][3..]);
    }
    inv
}

pub fn max_abs_diff(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            m = m.max((a[i][j] - b[i][j]).abs());
        }
    }
    m
}
