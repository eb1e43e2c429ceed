//! Monte-Carlo evaluation: initial-configuration search, multi-method
//! campaigns on common random numbers, percentile configuration selection,
//! positioning-error CDFs and execution-time fits.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{min_pairwise_distance, AnchorMatrix, AnchorSet};
use crate::localize::{robust_fix, simulate_ranges, RangeModel};
use crate::matlin::{SymMat3, Vec3};
use crate::pipeline::{run_placement, PlacementRun};
use crate::placement::{achieved_sq_rndop, Method, Mode, PlacementProblem};

const INIT_TAG: u64 = 0x696e_6974;
const SOLVER_TAG: u64 = 0x736f_6c76;

/// Standard deviation (meters) of the NLS starting-point perturbation.
pub const NLS_INIT_SIGMA: f64 = 10.0;

/// Independent generator for `(seed, purpose, index)`.
pub fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.rotate_left(32));
    rng.set_stream(index);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McCampaign {
    pub n_mc_init: usize,
    pub n_mc_algo: usize,
    pub n_targ: usize,
    /// Radius (meters) of the target deployment sphere or disc.
    pub r_cov: f64,
    pub range: RangeModel,
    /// Number of anchors in each random initial configuration.
    pub n_initial: usize,
    /// Placement settings shared by every method; `method` is overridden.
    pub problem: PlacementProblem,
    pub seed: u64,
}

impl McCampaign {
    pub fn validate(&self) -> Result<()> {
        if self.n_mc_init == 0 || self.n_mc_algo == 0 || self.n_targ == 0 {
            return Err(Error::InvalidParameter("campaign counts must be at least 1".into()));
        }
        if !(self.r_cov > 0.0) || !self.r_cov.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "r_cov must be positive, got {}",
                self.r_cov
            )));
        }
        if self.n_initial < 4 {
            return Err(Error::TooFewAnchors {
                needed: 4,
                got: self.n_initial,
            });
        }
        self.range.validate()?;
        self.problem.validate()
    }

    pub fn problem_for(&self, method: Method, trial: usize) -> PlacementProblem {
        let mut problem = self.problem.clone();
        problem.method = method;
        problem.solver.seed = self.seed ^ SOLVER_TAG.rotate_left(16) ^ (trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        problem
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitResult {
    /// Best configuration in the deployment frame.
    pub anchors: AnchorSet,
    /// Its worst-direction RNDOP.
    pub score: f64,
    pub feasible_trials: usize,
}

/// Best of `n_mc_init` uniform random configurations that meet the separation
/// threshold, scored by worst-direction RNDOP in the campaign's mode.
pub fn init_search(campaign: &McCampaign, rng: &mut impl Rng) -> Result<InitResult> {
    let problem = &campaign.problem;
    let n = campaign.n_initial;
    let d_th = problem.separation.d_th();
    let mut best: Option<(f64, Vec<Vec3>)> = None;
    let mut feasible_trials = 0;
    let mut points = vec![Vec3::ZERO; n];
    for _ in 0..campaign.n_mc_init {
        for p in points.iter_mut() {
            *p = problem.bounds.lerp([rng.random(), rng.random(), rng.random()]);
        }
        if min_pairwise_distance(&points) < d_th {
            continue;
        }
        feasible_trials += 1;
        let Ok(score) = config_score(&points, problem.mode) else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, points.clone()));
        }
    }
    let (score, pts) = best.ok_or(Error::NoFeasibleInit)?;
    Ok(InitResult {
        anchors: AnchorSet::new(pts)?,
        score,
        feasible_trials,
    })
}

/// Worst-direction RNDOP of an arbitrary configuration after centering.
pub fn config_score(points: &[Vec3], mode: Mode) -> Result<f64> {
    let centroid = Vec3::mean(points);
    let centered: Vec<Vec3> = points.iter().map(|p| *p - centroid).collect();
    let am = AnchorMatrix::from_c(SymMat3::sum_of_outer(&centered), centered.len())?;
    Ok(achieved_sq_rndop(&am, mode)?.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub run: Option<PlacementRun>,
    pub error: Option<String>,
    /// Final worst-direction RNDOP of the returned anchors.
    pub final_rndop: Option<f64>,
    /// Wall-clock time of the placement loop; not serialized so outputs are
    /// reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub initial: Vec<Vec3>,
    pub init_score: f64,
    pub outcomes: Vec<MethodOutcome>,
}

impl TrialRecord {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }
}

/// Runs `f` on a pool of `jobs` threads; `0` uses every available core.
fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// The initial configuration of trial `trial`, drawn from its own stream.
pub fn initial_for_trial(campaign: &McCampaign, trial: usize) -> Result<InitResult> {
    init_search(campaign, &mut stream_rng(campaign.seed, INIT_TAG, trial as u64))
}

/// Runs one trial: a shared initial configuration, then every method on it.
pub fn run_trial(campaign: &McCampaign, methods: &[Method], trial: usize) -> Result<TrialRecord> {
    let init = initial_for_trial(campaign, trial)?;
    let outcomes = methods
        .iter()
        .map(|&method| {
            let problem = campaign.problem_for(method, trial);
            let start = Instant::now();
            let result = run_placement(&problem, &init.anchors);
            let seconds = start.elapsed().as_secs_f64();
            match result {
                Ok(run) => MethodOutcome {
                    method,
                    final_rndop: Some(run.final_rndop()),
                    run: Some(run),
                    error: None,
                    seconds,
                },
                Err(e) => MethodOutcome {
                    method,
                    run: None,
                    error: Some(e.to_string()),
                    final_rndop: None,
                    seconds,
                },
            }
        })
        .collect();
    Ok(TrialRecord {
        trial,
        initial: init.anchors.points().to_vec(),
        init_score: init.score,
        outcomes,
    })
}

/// All `n_mc_algo` trials, every method fed the same initial anchors.
/// Per-method failures are recorded in the trial, not returned.
pub fn run_campaign(campaign: &McCampaign, methods: &[Method], jobs: usize) -> Result<Vec<TrialRecord>> {
    campaign.validate()?;
    in_pool(jobs, || {
        (0..campaign.n_mc_algo)
            .into_par_iter()
            .map(|trial| run_trial(campaign, methods, trial))
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedConfig {
    /// Position in the input slice.
    pub index: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSelection {
    pub good: SelectedConfig,
    pub bad: SelectedConfig,
}

/// Picks the configurations at the 10th and 90th percentile of ascending
/// worst-direction RNDOP: 1-based ranks `⌊0.1·N⌋` and `⌈0.9·N⌉`.
pub fn select_configs(values: &[f64]) -> Result<ConfigSelection> {
    let n = values.len();
    if n < 10 {
        return Err(Error::TooFewRecords { needed: 10, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let good_rank = n / 10;
    let bad_rank = (9 * n).div_ceil(10);
    let pick = |rank: usize| SelectedConfig {
        index: order[rank - 1],
        value: values[order[rank - 1]],
    };
    Ok(ConfigSelection {
        good: pick(good_rank),
        bad: pick(bad_rank),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub n_targ: usize,
    pub r_cov: f64,
    pub range: RangeModel,
    pub mode: Mode,
    /// Center of the target sphere; in 2D only its `(x, y)` is used.
    pub center: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositioningEval {
    /// Position errors in meters (horizontal in 2D), ascending.
    pub errors: Vec<f64>,
    pub not_converged: usize,
}

impl PositioningEval {
    pub fn median(&self) -> f64 {
        nearest_rank(&self.errors, 50.0)
    }

    pub fn rms(&self) -> f64 {
        (self.errors.iter().map(|e| e * e).sum::<f64>() / self.errors.len() as f64).sqrt()
    }

    pub fn cdf(&self) -> Vec<(f64, f64)> {
        empirical_cdf(&self.errors)
    }
}

/// Target uniform in the ball (3D) or disc on the XY plane (2D) of radius
/// `r_cov` around `center`. Consumes the same number of draws in both modes.
pub fn draw_target(center: &Vec3, r_cov: f64, mode: Mode, rng: &mut impl Rng) -> Vec3 {
    let u: f64 = rng.random();
    let g: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
    match mode {
        Mode::ThreeD => {
            let dir = Vec3(g);
            let norm = dir.norm();
            let dir = if norm > 0.0 { dir * (1.0 / norm) } else { Vec3::new(1.0, 0.0, 0.0) };
            *center + dir * (r_cov * u.cbrt())
        }
        Mode::TwoD => {
            let angle = g[0].atan2(g[1]) + PI;
            let r = r_cov * u.sqrt();
            Vec3::new(center.x() + r * angle.cos(), center.y() + r * angle.sin(), 0.0)
        }
    }
}

/// One localization error sample per target, each target with its own
/// random stream so results do not depend on evaluation order.
/// Configurations evaluated with the same `seed` and settings see the same
/// targets and noise draws.
pub fn eval_positioning(anchors: &[Vec3], settings: &EvalSettings, seed: u64, jobs: usize) -> Result<PositioningEval> {
    settings.range.validate()?;
    if settings.n_targ == 0 || !(settings.r_cov > 0.0) || !settings.center.is_finite() {
        return Err(Error::InvalidParameter(
            "evaluation needs n_targ ≥ 1, r_cov > 0 and a finite center".into(),
        ));
    }
    let center = match settings.mode {
        Mode::ThreeD => settings.center,
        Mode::TwoD => Vec3::new(settings.center.x(), settings.center.y(), 0.0),
    };
    let samples: Result<Vec<(f64, bool)>> = in_pool(jobs, || {
        (0..settings.n_targ)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, 0, i as u64);
                let target = draw_target(&center, settings.r_cov, settings.mode, &mut rng);
                let jitter: [f64; 3] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) * NLS_INIT_SIGMA);
                let ranges = simulate_ranges(anchors, &target, &settings.range, &mut rng);
                let guess = target + Vec3(jitter);
                let fix = robust_fix(anchors, &ranges, settings.mode, guess)?;
                let err = match settings.mode {
                    Mode::ThreeD => fix.position.distance(&target),
                    Mode::TwoD => (fix.position.x() - target.x()).hypot(fix.position.y() - target.y()),
                };
                Ok((err, fix.converged))
            })
            .collect()
    });
    let samples = samples?;
    let not_converged = samples.iter().filter(|(_, c)| !c).count();
    let mut errors: Vec<f64> = samples.into_iter().map(|(e, _)| e).collect();
    errors.sort_by(f64::total_cmp);
    Ok(PositioningEval {
        errors,
        not_converged,
    })
}

/// Nearest-rank percentile of an ascending slice; `p` in `[0, 100]`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// `(value, fraction ≤ value)` at every sample of an ascending slice.
pub fn empirical_cdf(sorted: &[f64]) -> Vec<(f64, f64)> {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, v)| (*v, (i + 1) as f64 / n))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// `None` when the response has zero variance.
    pub r_squared: Option<f64>,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::InvalidParameter("linear fit needs matching samples".into()));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientSweep(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = (syy > 0.0).then(|| {
        let ss_res: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
            .sum();
        1.0 - ss_res / syy
    });
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n_added: usize,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub rows: Vec<TimingRow>,
    pub fit_p10: LinearFit,
    pub fit_p50: LinearFit,
    pub fit_p90: LinearFit,
}

/// Nearest-rank percentiles of execution time per `N_a` and their linear fits.
pub fn timing_stats(samples: &BTreeMap<usize, Vec<f64>>) -> Result<TimingStats> {
    let distinct = samples.values().filter(|v| !v.is_empty()).count();
    if distinct < 3 {
        return Err(Error::InsufficientSweep(distinct));
    }
    let rows: Vec<TimingRow> = samples
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(&n_added, times)| {
            let mut sorted = times.clone();
            sorted.sort_by(f64::total_cmp);
            TimingRow {
                n_added,
                p10: nearest_rank(&sorted, 10.0),
                p50: nearest_rank(&sorted, 50.0),
                p90: nearest_rank(&sorted, 90.0),
            }
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.n_added as f64).collect();
    let series = |f: fn(&TimingRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Ok(TimingStats {
        fit_p10: linear_fit(&x, &series(|r| r.p10))?,
        fit_p50: linear_fit(&x, &series(|r| r.p50))?,
        fit_p90: linear_fit(&x, &series(|r| r.p90))?,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_indices_for_500() {
        let values: Vec<f64> = (0..500).rev().map(|v| v as f64).collect();
        let s = select_configs(&values).unwrap();
        // Rank 50 holds value 49, rank 450 holds value 449.
        assert_eq!(s.good.value, 49.0);
        assert_eq!(s.bad.value, 449.0);
        assert_eq!(s.good.index, 500 - 1 - 49);
    }

    #[test]
    fn selection_edge_cases() {
        assert!(matches!(
            select_configs(&[1.0; 9]),
            Err(Error::TooFewRecords { needed: 10, got: 9 })
        ));
        let s = select_configs(&[2.5; 20]).unwrap();
        assert_eq!(s.good.value, s.bad.value);
        let sorted: Vec<f64> = (0..30).map(|v| v as f64).collect();
        let s = select_configs(&sorted).unwrap();
        assert_eq!((s.good.index, s.bad.index), (2, 26));
    }

    #[test]
    fn nearest_rank_definition() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(nearest_rank(&v, 0.0), 1.0);
        assert_eq!(nearest_rank(&v, 20.0), 1.0);
        assert_eq!(nearest_rank(&v, 21.0), 2.0);
        assert_eq!(nearest_rank(&v, 50.0), 3.0);
        assert_eq!(nearest_rank(&v, 100.0), 5.0);
    }

    #[test]
    fn linear_fit_exact_and_constant() {
        let x = [5.0, 10.0, 15.0, 20.0];
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + 2.0).collect();
        let fit = linear_fit(&x, &y).unwrap();
        assert!((fit.r_squared.unwrap() - 1.0).abs() < 1e-12);
        assert!((fit.slope - 0.3).abs() < 1e-12);
        let flat = linear_fit(&x, &[1.0; 4]).unwrap();
        assert_eq!(flat.r_squared, None);
    }

    #[test]
    fn timing_needs_three_counts() {
        let mut m = BTreeMap::new();
        m.insert(5, vec![1.0]);
        m.insert(10, vec![2.0]);
        assert_eq!(timing_stats(&m), Err(Error::InsufficientSweep(2)));
        m.insert(15, vec![3.0, 3.5, 2.5]);
        let t = timing_stats(&m).unwrap();
        assert!(t.rows.iter().all(|r| r.p10 <= r.p50 && r.p50 <= r.p90));
    }

    #[test]
    fn cdf_ends_at_one() {
        let cdf = empirical_cdf(&[0.5, 1.0, 1.0, 3.0]);
        assert_eq!(cdf.last().unwrap().1, 1.0);
        assert!(cdf.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn disc_targets_on_plane() {
        let mut rng = stream_rng(1, 2, 3);
        for _ in 0..100 {
            let t = draw_target(&Vec3::ZERO, 200.0, Mode::TwoD, &mut rng);
            assert_eq!(t.z(), 0.0);
            assert!(t.x().hypot(t.y()) <= 200.0);
        }
    }
}
