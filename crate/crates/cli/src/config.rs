//! Run configuration: presets, JSON files (schema v1), environment and flag
//! overrides.

use std::path::{Path, PathBuf};

use rndop_core::experiments::{EvalSettings, McCampaign};
use rndop_core::localize::RangeModel;
use rndop_core::placement::{
    BoxConstraint, Method, Mode, PerturbationSettings, PlacementProblem, SeparationConstraint,
};
use rndop_core::solver::SolverSettings;
use rndop_core::Vec3;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "RNDOP_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 50 trials, 10³ targets per configuration.
    Desk,
    /// 500 trials, 10⁴ targets per configuration.
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub preset: Preset,
    pub seed: u64,
    pub mode: Mode,
    pub method: Method,
    pub out: PathBuf,
    pub placement: PlacementSection,
    pub campaign: CampaignSection,
    pub dopfield: DopFieldSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSection {
    pub bounds: BoxConstraint,
    pub d_th: SeparationConstraint,
    pub n_added: usize,
    /// Anchors per random initial configuration.
    pub n_initial: usize,
    /// Random configurations tried by the initial search.
    pub n_mc_init: usize,
    /// Fixed initial anchors; when set the initial search is skipped.
    pub initial_anchors: Option<Vec<Vec3>>,
    pub solver: SolverSection,
    pub perturbation: PerturbationSettings,
}

/// [`SolverSettings`] without the seed, which derives from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub multistart: usize,
    pub max_iterations: usize,
    pub step_tol: f64,
    pub constraint_tol: f64,
    pub penalty_growth: f64,
}

impl From<SolverSettings> for SolverSection {
    fn from(s: SolverSettings) -> Self {
        SolverSection {
            multistart: s.multistart,
            max_iterations: s.max_iterations,
            step_tol: s.step_tol,
            constraint_tol: s.constraint_tol,
            penalty_growth: s.penalty_growth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    pub n_mc_algo: usize,
    pub n_targ: usize,
    pub r_cov: f64,
    pub range: RangeModel,
    pub methods: Vec<Method>,
    /// `N_a` values for the execution-time sweep; empty disables it.
    pub timing_sweep: Vec<usize>,
    /// Center of the target sphere; `null` means the box center.
    pub target_center: Option<Vec3>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DopFieldSection {
    /// Target range as a multiple of the far-away threshold.
    pub range_factor: f64,
    pub n_theta: usize,
    /// Elevation samples; ignored in 2D mode, where targets lie on the plane.
    pub n_phi: usize,
}

impl Preset {
    pub fn config(self) -> RunConfig {
        let (n_mc_algo, n_targ) = match self {
            Preset::Desk => (50, 1_000),
            Preset::Paper => (500, 10_000),
        };
        RunConfig {
            schema_version: SCHEMA_VERSION,
            preset: self,
            seed: 1,
            mode: Mode::ThreeD,
            method: Method::Tr,
            out: PathBuf::from("out"),
            placement: PlacementSection {
                bounds: BoxConstraint::symmetric(Vec3::new(30.0, 20.0, 10.0)).expect("valid preset box"),
                d_th: SeparationConstraint::new(4.472).expect("valid preset threshold"),
                n_added: 20,
                n_initial: 4,
                n_mc_init: 100_000,
                initial_anchors: None,
                solver: SolverSettings::default().into(),
                perturbation: PerturbationSettings::default(),
            },
            campaign: CampaignSection {
                n_mc_algo,
                n_targ,
                r_cov: 200.0,
                range: RangeModel { bias: 1.0, sigma: 6.0 },
                methods: Method::ALL.to_vec(),
                timing_sweep: vec![5, 10, 15, 20],
                target_center: None,
            },
            dopfield: DopFieldSection {
                range_factor: 1e4,
                n_theta: 72,
                n_phi: 36,
            },
        }
    }
}

/// Command-line and environment overrides, applied over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub method: Option<Method>,
    pub mode: Option<Mode>,
    /// Value of [`SEED_ENV`], if set.
    pub env_seed: Option<String>,
}

/// Objects merge key by key; anything else in `top` replaces `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Builds the configuration: preset, then the file (if any), then the seed
/// from the environment, then flags.
pub fn resolve(file: Option<&str>, overrides: &Overrides) -> Result<RunConfig> {
    let file_value: Option<Value> = file
        .map(|text| serde_json::from_str(text).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}"))))
        .transpose()?;
    if let Some(v) = &file_value {
        if !v.is_object() {
            return Err(CliError::Config("config must be a JSON object".into()));
        }
        if let Some(version) = v.get("schema_version") {
            if version != &Value::from(SCHEMA_VERSION) {
                return Err(CliError::Config(format!(
                    "unsupported schema_version {version}; expected {SCHEMA_VERSION}"
                )));
            }
        }
    }
    let file_preset = match file_value.as_ref().and_then(|v| v.get("preset")) {
        Some(p) => Some(
            serde_json::from_value::<Preset>(p.clone())
                .map_err(|e| CliError::Config(format!("preset: {e}")))?,
        ),
        None => None,
    };
    let preset = overrides.preset.or(file_preset).unwrap_or(Preset::Desk);

    let mut value = serde_json::to_value(preset.config())?;
    if let Some(v) = file_value {
        merge(&mut value, v);
    }
    let mut config: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    config.preset = preset;

    if let Some(text) = &overrides.env_seed {
        config.seed = text
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={text:?} is not an unsigned 64-bit integer")))?;
    }
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(out) = &overrides.out {
        config.out = out.clone();
    }
    if let Some(method) = overrides.method {
        config.method = method;
        config.campaign.methods = vec![method];
    }
    if let Some(mode) = overrides.mode {
        config.mode = mode;
    }
    config.validate()?;
    Ok(config)
}

/// Reads `path` and resolves it with [`resolve`].
pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let text = path
        .map(|p| std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display()))))
        .transpose()?;
    resolve(text.as_deref(), overrides)
}

impl RunConfig {
    pub fn problem(&self) -> PlacementProblem {
        let s = &self.placement.solver;
        PlacementProblem {
            mode: self.mode,
            method: self.method,
            bounds: self.placement.bounds,
            separation: self.placement.d_th,
            n_added: self.placement.n_added,
            solver: SolverSettings {
                multistart: s.multistart,
                max_iterations: s.max_iterations,
                step_tol: s.step_tol,
                constraint_tol: s.constraint_tol,
                penalty_growth: s.penalty_growth,
                seed: 0,
            },
            perturbation: self.placement.perturbation,
        }
    }

    pub fn campaign(&self) -> McCampaign {
        McCampaign {
            n_mc_init: self.placement.n_mc_init,
            n_mc_algo: self.campaign.n_mc_algo,
            n_targ: self.campaign.n_targ,
            r_cov: self.campaign.r_cov,
            range: self.campaign.range,
            n_initial: self.placement.n_initial,
            problem: self.problem(),
            seed: self.seed,
        }
    }

    pub fn eval_settings(&self) -> EvalSettings {
        let b = &self.placement.bounds;
        EvalSettings {
            n_targ: self.campaign.n_targ,
            r_cov: self.campaign.r_cov,
            range: self.campaign.range,
            mode: self.mode,
            center: self
                .campaign
                .target_center
                .unwrap_or_else(|| (b.lower() + b.upper()) * 0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!("unsupported schema_version {}", self.schema_version));
        }
        self.campaign().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.campaign.methods.is_empty() {
            return fail("campaign.methods must not be empty".into());
        }
        if let Some(c) = self.campaign.target_center {
            if !c.is_finite() {
                return fail("campaign.target_center must be finite".into());
            }
        }
        if let Some(anchors) = &self.placement.initial_anchors {
            if anchors.len() < 4 {
                return fail(format!("initial_anchors needs at least 4 anchors, got {}", anchors.len()));
            }
            if anchors.iter().any(|a| !a.is_finite()) {
                return fail("initial_anchors must be finite".into());
            }
        }
        let d = &self.dopfield;
        if !(d.range_factor > 0.0) || !d.range_factor.is_finite() || d.n_theta == 0 || d.n_phi == 0 {
            return fail("dopfield needs range_factor > 0 and at least one sample per angle".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_differ_in_scale_only() {
        let desk = Preset::Desk.config();
        let paper = Preset::Paper.config();
        assert_eq!((desk.campaign.n_mc_algo, desk.campaign.n_targ), (50, 1_000));
        assert_eq!((paper.campaign.n_mc_algo, paper.campaign.n_targ), (500, 10_000));
        assert_eq!(desk.placement, paper.placement);
        desk.validate().unwrap();
        paper.validate().unwrap();
    }

    #[test]
    fn file_merges_over_preset() {
        let text = r#"{"schema_version": 1, "preset": "paper", "placement": {"n_added": 3}}"#;
        let c = resolve(Some(text), &Overrides::default()).unwrap();
        assert_eq!(c.preset, Preset::Paper);
        assert_eq!(c.placement.n_added, 3);
        assert_eq!(c.campaign.n_mc_algo, 500);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            r#"{"seeed": 3}"#,
            r#"{"placement": {"n_add": 3}}"#,
            r#"{"placement": {"solver": {"seed": 3}}}"#,
        ] {
            assert!(matches!(resolve(Some(text), &Overrides::default()), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn seed_precedence() {
        let text = r#"{"seed": 5}"#;
        let mut o = Overrides::default();
        assert_eq!(resolve(Some(text), &o).unwrap().seed, 5);
        o.env_seed = Some("7".into());
        assert_eq!(resolve(Some(text), &o).unwrap().seed, 7);
        o.seed = Some(9);
        assert_eq!(resolve(Some(text), &o).unwrap().seed, 9);
        o.env_seed = Some("x".into());
        assert!(resolve(None, &o).is_err());
    }

    #[test]
    fn method_flag_restricts_campaign() {
        let o = Overrides {
            method: Some(Method::Eig),
            ..Overrides::default()
        };
        let c = resolve(None, &o).unwrap();
        assert_eq!(c.campaign.methods, vec![Method::Eig]);
    }

    #[test]
    fn wrong_version_and_invalid_values_rejected() {
        for text in [
            r#"{"schema_version": 2}"#,
            r#"{"placement": {"d_th": -1}}"#,
            r#"{"campaign": {"r_cov": 0}}"#,
            r#"{"campaign": {"methods": []}}"#,
            r#"[1]"#,
        ] {
            assert!(matches!(resolve(Some(text), &Overrides::default()), Err(CliError::Config(_))), "{text}");
        }
    }
}
