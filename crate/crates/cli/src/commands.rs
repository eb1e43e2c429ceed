//! Subcommands. Each writes its files under `config.out` and returns a one-line
//! summary for stdout.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::Path;

use rndop_core::experiments::{
    eval_positioning, initial_for_trial, run_campaign, select_configs, timing_stats, McCampaign,
    TrialRecord,
};
use rndop_core::geometry::{exact_dop, far_away_threshold, rndop, rndop_bounds, AnchorMatrix, AnchorSet, Target};
use rndop_core::pipeline::{run_placement, PlacementRun};
use rndop_core::placement::{Method, Mode};
use rndop_core::Error as CoreError;
use serde::Serialize;

use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::error::{CliError, Result};

pub const PLACEMENT_JSON: &str = "placement.json";
pub const RNDOP_CSV: &str = "rndop_vs_k.csv";
pub const CAMPAIGN_JSON: &str = "campaign.json";
pub const ERROR_CDF_CSV: &str = "error_cdf.csv";
pub const TIMING_CSV: &str = "timing.csv";
pub const DOP_FIELD_CSV: &str = "dop_field.csv";

/// A command's result: its summary, or the error plus the summary of whatever
/// was written before it.
pub struct Outcome {
    pub summary: String,
    pub error: Option<CliError>,
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Initial anchors: the configured set, or trial 0 of the initial search.
pub fn initial_anchors(config: &RunConfig) -> Result<AnchorSet> {
    match &config.placement.initial_anchors {
        Some(points) => Ok(AnchorSet::new(points.clone())?),
        None => Ok(initial_for_trial(&config.campaign(), 0)?.anchors),
    }
}

#[derive(Serialize)]
struct PlacementFile<'a> {
    schema_version: u32,
    seed: u64,
    /// False when the run stopped early; `run` then holds the anchors so far.
    complete: bool,
    run: &'a PlacementRun,
}

#[derive(Serialize)]
pub struct RndopRow {
    pub k: usize,
    pub achieved_sq_rndop: f64,
    pub lb_iter: f64,
    pub ub_iter: f64,
    pub lb_config: Option<f64>,
    pub lb_universal: Option<f64>,
    pub valid: bool,
}

pub const RNDOP_HEADER: [&str; 7] = [
    "k",
    "achieved_sq_rndop",
    "lb_iter",
    "ub_iter",
    "lb_config",
    "lb_universal",
    "valid",
];

pub fn rndop_rows(run: &PlacementRun) -> Vec<RndopRow> {
    run.iterations
        .iter()
        .map(|it| RndopRow {
            k: it.k,
            achieved_sq_rndop: it.achieved_sq_rndop,
            lb_iter: it.bounds.lower,
            ub_iter: it.bounds.upper,
            lb_config: it.lb_config_sq,
            lb_universal: it.lb_universal_sq,
            valid: it.valid,
        })
        .collect()
}

fn write_placement(config: &RunConfig, run: &PlacementRun, complete: bool) -> Result<()> {
    let file = PlacementFile {
        schema_version: SCHEMA_VERSION,
        seed: config.seed,
        complete,
        run,
    };
    write_json(&config.out.join(PLACEMENT_JSON), &file)?;
    write_csv(&config.out.join(RNDOP_CSV), &RNDOP_HEADER, rndop_rows(run))
}

/// Places `n_added` anchors with the configured method.
pub fn place(config: &RunConfig) -> Result<Outcome> {
    let campaign = config.campaign();
    let problem = campaign.problem_for(config.method, 0);
    let initial = initial_anchors(config)?;
    create_out(&config.out)?;
    match run_placement(&problem, &initial) {
        Ok(run) => {
            write_placement(config, &run, true)?;
            Ok(Outcome {
                summary: format!(
                    "place: {} {} added {} anchors ({} invalid), final rndop {:.6}, wrote {}",
                    config.mode.as_str(),
                    config.method.as_str(),
                    run.valid_added(),
                    run.failed,
                    run.final_rndop(),
                    config.out.display()
                ),
                error: None,
            })
        }
        Err(e @ (CoreError::Infeasible { .. } | CoreError::CapExhausted { .. })) => {
            let partial = match &e {
                CoreError::Infeasible { partial, .. } | CoreError::CapExhausted { partial, .. } => partial,
                _ => unreachable!(),
            };
            write_placement(config, partial, false)?;
            Ok(Outcome {
                summary: format!(
                    "place: stopped after {} iterations, partial run written to {}",
                    partial.iterations.len(),
                    config.out.display()
                ),
                error: Some(e.into()),
            })
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
pub struct CdfRow {
    pub method: Method,
    pub config_percentile: u32,
    pub error_m: f64,
    pub cdf: f64,
}

#[derive(Serialize)]
pub struct TimingCsvRow {
    pub method: Method,
    #[serde(rename = "N_a")]
    pub n_added: usize,
    pub p10_s: f64,
    pub p50_s: f64,
    pub p90_s: f64,
}

#[derive(Serialize)]
struct EvalSummary {
    method: Method,
    good_trial: usize,
    good_rndop: f64,
    bad_trial: usize,
    bad_rndop: f64,
    good_median_m: f64,
    good_rms_m: f64,
    good_not_converged: usize,
    bad_median_m: f64,
    bad_rms_m: f64,
    bad_not_converged: usize,
}

#[derive(Serialize)]
struct CampaignFile<'a> {
    schema_version: u32,
    seed: u64,
    campaign: &'a McCampaign,
    methods: &'a [Method],
    trials: &'a [TrialRecord],
    evaluation: Vec<EvalSummary>,
}

fn times(records: &[TrialRecord], method: Method) -> Vec<f64> {
    records
        .iter()
        .filter_map(|t| t.outcome(method))
        .filter(|o| o.run.is_some())
        .map(|o| o.seconds)
        .collect()
}

/// Monte-Carlo campaign: placements, good/bad configuration errors and the
/// execution-time sweep.
pub fn mc(config: &RunConfig, jobs: usize) -> Result<Outcome> {
    let campaign = config.campaign();
    let methods = config.campaign.methods.clone();
    create_out(&config.out)?;
    let records = run_campaign(&campaign, &methods, jobs)?;

    let eval = config.eval_settings();
    let eval_seed = config.seed;
    let mut cdf_rows = Vec::new();
    let mut evaluation = Vec::new();
    for &method in &methods {
        // (trial, anchors, final RNDOP) of the runs that finished.
        let finished: Vec<(usize, &[rndop_core::Vec3], f64)> = records
            .iter()
            .filter_map(|t| {
                let o = t.outcome(method)?;
                Some((t.trial, o.run.as_ref()?.anchors.as_slice(), o.final_rndop?))
            })
            .collect();
        let values: Vec<f64> = finished.iter().map(|f| f.2).collect();
        let selection = select_configs(&values)?;
        let (good_trial, good_anchors, _) = finished[selection.good.index];
        let (bad_trial, bad_anchors, _) = finished[selection.bad.index];
        let good = eval_positioning(good_anchors, &eval, eval_seed, jobs)?;
        let bad = eval_positioning(bad_anchors, &eval, eval_seed, jobs)?;
        for (percentile, result) in [(10, &good), (90, &bad)] {
            cdf_rows.extend(result.cdf().into_iter().map(|(error_m, cdf)| CdfRow {
                method,
                config_percentile: percentile,
                error_m,
                cdf,
            }));
        }
        evaluation.push(EvalSummary {
            method,
            good_trial,
            good_rndop: selection.good.value,
            bad_trial,
            bad_rndop: selection.bad.value,
            good_median_m: good.median(),
            good_rms_m: good.rms(),
            good_not_converged: good.not_converged,
            bad_median_m: bad.median(),
            bad_rms_m: bad.rms(),
            bad_not_converged: bad.not_converged,
        });
    }
    write_csv(
        &config.out.join(ERROR_CDF_CSV),
        &["method", "config_percentile", "error_m", "cdf"],
        cdf_rows,
    )?;

    let mut timing_rows = Vec::new();
    if !config.campaign.timing_sweep.is_empty() {
        let mut samples: BTreeMap<Method, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
        for &n_added in &config.campaign.timing_sweep {
            let sweep_records = if n_added == campaign.problem.n_added {
                None
            } else {
                let mut c = campaign.clone();
                c.problem.n_added = n_added;
                Some(run_campaign(&c, &methods, jobs)?)
            };
            let source = sweep_records.as_deref().unwrap_or(&records);
            for &method in &methods {
                samples.entry(method).or_default().insert(n_added, times(source, method));
            }
        }
        for (method, by_n) in &samples {
            let stats = timing_stats(by_n)?;
            timing_rows.extend(stats.rows.iter().map(|r| TimingCsvRow {
                method: *method,
                n_added: r.n_added,
                p10_s: r.p10,
                p50_s: r.p50,
                p90_s: r.p90,
            }));
        }
    }
    write_csv(
        &config.out.join(TIMING_CSV),
        &["method", "N_a", "p10_s", "p50_s", "p90_s"],
        timing_rows,
    )?;

    let summary = evaluation
        .iter()
        .map(|e| format!("{} median {:.3} m", e.method.as_str(), e.good_median_m))
        .collect::<Vec<_>>()
        .join(", ");
    write_json(
        &config.out.join(CAMPAIGN_JSON),
        &CampaignFile {
            schema_version: SCHEMA_VERSION,
            seed: config.seed,
            campaign: &campaign,
            methods: &methods,
            trials: &records,
            evaluation,
        },
    )?;
    Ok(Outcome {
        summary: format!(
            "mc: {} trials, good-config {summary}, wrote {}",
            records.len(),
            config.out.display()
        ),
        error: None,
    })
}

#[derive(Serialize)]
pub struct DopRow {
    pub theta: f64,
    pub phi: f64,
    pub rndop: f64,
    pub dop_at_rt: f64,
    pub lb: f64,
    pub ub: f64,
    pub r_t: f64,
}

/// Direction grid: `θ` on `[0, 2π)`, `φ` at cell midpoints of `(0, π)`, or
/// `φ = π/2` in 2D mode.
pub fn direction_grid(mode: Mode, n_theta: usize, n_phi: usize) -> Vec<(f64, f64)> {
    let phis: Vec<f64> = match mode {
        Mode::TwoD => vec![FRAC_PI_2],
        Mode::ThreeD => (0..n_phi).map(|j| PI * (j as f64 + 0.5) / n_phi as f64).collect(),
    };
    (0..n_theta)
        .flat_map(|i| {
            let theta = 2.0 * PI * i as f64 / n_theta as f64;
            phis.iter().map(move |&phi| (theta, phi))
        })
        .collect()
}

/// RNDOP and exact DOP over a direction grid for the initial anchors,
/// expressed in their centroid frame.
pub fn dopfield(config: &RunConfig) -> Result<Outcome> {
    let (centered, _) = initial_anchors(config)?.centered();
    let am = AnchorMatrix::from_anchors(&centered)?;
    let kind = config.mode.kind();
    let (lb, ub) = rndop_bounds(&am, kind)?;
    let r_t = config.dopfield.range_factor * far_away_threshold(&am)?;
    let rows = direction_grid(config.mode, config.dopfield.n_theta, config.dopfield.n_phi)
        .into_iter()
        .map(|(theta, phi)| {
            Ok(DopRow {
                theta,
                phi,
                rndop: rndop(&am, theta, phi, kind)?,
                dop_at_rt: exact_dop(centered.points(), &Target::polar(r_t, theta, phi)?, kind)?,
                lb,
                ub,
                r_t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    create_out(&config.out)?;
    let n = rows.len();
    write_csv(
        &config.out.join(DOP_FIELD_CSV),
        &["theta", "phi", "rndop", "dop_at_rt", "lb", "ub", "r_t"],
        rows,
    )?;
    Ok(Outcome {
        summary: format!(
            "dopfield: {n} directions at r_t = {r_t:.6e} m, rndop in [{lb:.6}, {ub:.6}], wrote {}",
            config.out.display()
        ),
        error: None,
    })
}
