mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rndop_core::geometry::Kind;
use rndop_core::localize::{nls_fix, position_error_bound, robust_fix, simulate_ranges, RangeModel};
use rndop_core::placement::Mode;
use rndop_core::Vec3;

fn scene(rng: &mut impl Rng, mode: Mode) -> (Vec<Vec3>, Vec3) {
    let n = rng.random_range(5..12);
    let anchors: Vec<Vec3> = (0..n).map(|_| random_vec(rng, 25.0)).collect();
    let mut target = random_vec(rng, 200.0);
    if mode == Mode::TwoD {
        target.0[2] = 0.0;
    }
    (anchors, target)
}

#[test]
fn noiseless_fixes_recover_truth_from_origin() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for mode in [Mode::ThreeD, Mode::TwoD] {
        let mut good = 0;
        for _ in 0..200 {
            let (anchors, target) = scene(&mut rng, mode);
            let ranges = simulate_ranges(&anchors, &target, &RangeModel::noiseless(), &mut rng);
            let fix = robust_fix(&anchors, &ranges, mode, Vec3::ZERO).unwrap();
            if fix.position.distance(&target) < 1e-4 {
                good += 1;
            }
        }
        assert!(good >= 198, "{mode:?}: {good}/200");
    }
}

#[test]
fn biased_range_errors_have_the_stated_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let model = RangeModel::new(1.0, 6.0).unwrap();
    let anchor = [Vec3::ZERO];
    let target = Vec3::new(200.0, 0.0, 0.0);
    let n = 1_000_000;
    let mut sum = 0.0;
    for _ in 0..n {
        sum += simulate_ranges(&anchor, &target, &model, &mut rng)[0] - 200.0;
    }
    let mean = sum / n as f64;
    assert!((mean - 1.0).abs() <= 3.0 * 6.0 / (n as f64).sqrt(), "{mean}");
}

#[test]
fn noisy_rms_error_respects_the_error_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let model = RangeModel::new(1.0, 6.0).unwrap();
    for _ in 0..5 {
        let (anchors, target) = scene(&mut rng, Mode::ThreeD);
        let peb = position_error_bound(&anchors, &target, &model, Kind::Xyz).unwrap();
        let mut sq = 0.0;
        for _ in 0..500 {
            let ranges = simulate_ranges(&anchors, &target, &model, &mut rng);
            let fix = robust_fix(&anchors, &ranges, Mode::ThreeD, target).unwrap();
            sq += fix.position.distance(&target).powi(2);
        }
        let rms = (sq / 500.0).sqrt();
        assert!(rms >= 0.8 * peb, "rms {rms} peb {peb}");
    }
}

#[test]
fn fixes_never_increase_the_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let model = RangeModel::new(1.0, 6.0).unwrap();
    for _ in 0..200 {
        let (anchors, target) = scene(&mut rng, Mode::ThreeD);
        let ranges = simulate_ranges(&anchors, &target, &model, &mut rng);
        let guess = target + random_vec(&mut rng, 30.0);
        let start: f64 = anchors
            .iter()
            .zip(&ranges)
            .map(|(a, r)| (r - a.distance(&guess)).powi(2))
            .sum::<f64>()
            .sqrt();
        let fix = nls_fix(&anchors, &ranges, Mode::ThreeD, guess).unwrap();
        assert!(fix.residual_norm <= start);
        let recomputed: f64 = anchors
            .iter()
            .zip(&ranges)
            .map(|(a, r)| (r - a.distance(&fix.position)).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((recomputed - fix.residual_norm).abs() <= 1e-9 * recomputed.max(1.0));
    }
}
