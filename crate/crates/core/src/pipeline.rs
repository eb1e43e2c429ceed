//! Iterative anchor addition.
//!
//! Both algorithms keep the working anchors in a local frame whose origin is
//! their centroid. After every addition the anchors and the box are shifted by
//! the new centroid and the shift is accumulated, so the final coordinates are
//! mapped back to the deployment frame with one translation.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{direction, max_rndop_sq, AnchorMatrix, AnchorSet};
use crate::matlin::{SymMat3, Vec3};
use crate::placement::{
    eig_candidate_2d, eig_candidate_3d, iteration_bounds, subproblem_objective, BoxConstraint,
    IterationBounds, Method, Mode, PlacementProblem,
};
use crate::solver::solve_anchor_subproblem;

/// Mixed into the solver seed for the perturbation stream.
const PERTURB_STREAM_TAG: u64 = 0x7065_7274_7572_6221;

/// Slack used when auditing separation and bounds.
pub const AUDIT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub starts: usize,
    pub feasible_starts: usize,
    pub iterations: usize,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Anchor count after this addition, invalid anchors included.
    pub k: usize,
    pub anchor_gcs: Vec3,
    /// The added anchor in the frame centered on the previous anchors.
    pub anchor_lcs: Vec3,
    pub valid: bool,
    pub bounds: IterationBounds,
    /// Squared worst-direction RNDOP of the working set after this addition.
    pub achieved_sq_rndop: f64,
    /// Squared lower bounds `6/Σ‖rᵢ‖²` and `6/(N r_max²)` (3D only).
    pub lb_config_sq: Option<f64>,
    pub lb_universal_sq: Option<f64>,
    pub solver: Option<SolverSummary>,
    pub perturbation_tries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementRun {
    pub mode: Mode,
    pub method: Method,
    pub initial: Vec<Vec3>,
    pub iterations: Vec<IterationRecord>,
    /// Initial anchors followed by the valid added anchors, deployment frame.
    pub anchors: Vec<Vec3>,
    /// Number of additions that produced an invalid anchor.
    pub failed: usize,
    /// Squared worst-direction RNDOP of `anchors`.
    pub final_sq_rndop: f64,
}

impl PlacementRun {
    pub fn final_rndop(&self) -> f64 {
        self.final_sq_rndop.sqrt()
    }

    pub fn valid_added(&self) -> usize {
        self.iterations.iter().filter(|r| r.valid).count()
    }
}

/// Working state shared by both algorithms.
struct Frame {
    mode: Mode,
    method: Method,
    gcs_box: BoxConstraint,
    initial: Vec<Vec3>,
    /// Anchors in the local frame, invalid ones included.
    working: Vec<Vec3>,
    valid: Vec<bool>,
    /// Deployment coordinates of `working`.
    gcs: Vec<Vec3>,
    /// Local-to-global translation.
    offset: Vec3,
    local_box: BoxConstraint,
    records: Vec<IterationRecord>,
    failed: usize,
}

impl Frame {
    fn new(problem: &PlacementProblem, initial: &AnchorSet) -> Result<Self> {
        let d_th = problem.separation.d_th();
        for p in initial.points() {
            if !problem.bounds.contains(p) {
                return Err(Error::InvalidParameter(format!(
                    "initial anchor {:?} lies outside the box",
                    p.0
                )));
            }
        }
        if initial.min_separation() < d_th - AUDIT_TOL {
            return Err(Error::InvalidParameter(format!(
                "initial anchors are closer than d_th = {d_th}"
            )));
        }
        let offset = initial.centroid();
        let working: Vec<Vec3> = initial.points().iter().map(|p| *p - offset).collect();
        let c = SymMat3::sum_of_outer(&working);
        if AnchorMatrix::from_c(c, working.len()).is_err() {
            return Err(Error::DegenerateInitial(format!(
                "{} anchors span fewer than three dimensions; the anchor matrix must be invertible in both modes",
                working.len()
            )));
        }
        Ok(Frame {
            mode: problem.mode,
            method: problem.method,
            gcs_box: problem.bounds,
            initial: initial.points().to_vec(),
            valid: vec![true; working.len()],
            gcs: initial.points().to_vec(),
            working,
            offset,
            local_box: problem.bounds.translated(-offset),
            records: Vec::new(),
            failed: 0,
        })
    }

    fn matrix(&self) -> Result<AnchorMatrix> {
        AnchorMatrix::from_c(SymMat3::sum_of_outer(&self.working), self.working.len())
    }

    /// Appends `lcs` (a point of the current local box), re-centers, and
    /// records the iteration.
    fn push(
        &mut self,
        lcs: Vec3,
        valid: bool,
        bounds: IterationBounds,
        solver: Option<SolverSummary>,
        perturbation_tries: usize,
    ) -> Result<()> {
        // Clamp in the deployment frame so the box holds exactly there.
        let gcs = self.gcs_box.clamp(&(lcs + self.offset));
        let local = gcs - self.offset;
        self.working.push(local);
        self.gcs.push(gcs);
        self.valid.push(valid);
        if !valid {
            self.failed += 1;
        }

        let shift = Vec3::mean(&self.working);
        for p in &mut self.working {
            *p -= shift;
        }
        self.offset += shift;
        self.local_box = self.gcs_box.translated(-self.offset);

        let am = self.matrix()?;
        let achieved = max_rndop_sq(&am, self.mode.kind())?;
        let (lb_config_sq, lb_universal_sq) = match self.mode {
            Mode::ThreeD => {
                let sum_sq: f64 = self.working.iter().map(Vec3::norm_squared).sum();
                let r_max_sq = self.working.iter().map(Vec3::norm_squared).fold(0.0, f64::max);
                let n = self.working.len() as f64;
                (Some(6.0 / sum_sq), Some(6.0 / (n * r_max_sq)))
            }
            Mode::TwoD => (None, None),
        };
        self.records.push(IterationRecord {
            k: self.working.len(),
            anchor_gcs: gcs,
            anchor_lcs: local,
            valid,
            bounds,
            achieved_sq_rndop: achieved,
            lb_config_sq,
            lb_universal_sq,
            solver,
            perturbation_tries,
        });
        Ok(())
    }

    fn finish(&self) -> Result<PlacementRun> {
        let anchors: Vec<Vec3> = self
            .gcs
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(|(p, _)| *p)
            .collect();
        let final_sq_rndop = final_sq(&anchors, self.mode)?;
        Ok(PlacementRun {
            mode: self.mode,
            method: self.method,
            initial: self.initial.clone(),
            iterations: self.records.clone(),
            anchors,
            failed: self.failed,
            final_sq_rndop,
        })
    }

    fn partial(&self) -> Box<PlacementRun> {
        Box::new(self.finish().unwrap_or_else(|_| PlacementRun {
            mode: self.mode,
            method: self.method,
            initial: self.initial.clone(),
            iterations: self.records.clone(),
            anchors: self.initial.clone(),
            failed: self.failed,
            final_sq_rndop: f64::NAN,
        }))
    }

    fn eig_candidate(&self, am: &AnchorMatrix) -> Result<Vec3> {
        match self.mode {
            Mode::ThreeD => eig_candidate_3d(am.c(), &self.local_box),
            Mode::TwoD => eig_candidate_2d(am.e(), am.d(), &self.local_box),
        }
    }
}

fn final_sq(points: &[Vec3], mode: Mode) -> Result<f64> {
    let (centered, _) = AnchorSet::new(points.to_vec())?.centered();
    max_rndop_sq(&AnchorMatrix::from_anchors(&centered)?, mode.kind())
}

/// Runs the algorithm matching `problem.method`.
pub fn run_placement(problem: &PlacementProblem, initial: &AnchorSet) -> Result<PlacementRun> {
    match problem.method {
        Method::Eig => run_eigen(problem, initial),
        Method::Rnd | Method::Tr => run_optimized(problem, initial),
    }
}

/// Optimizer-based addition of `N_a` anchors (rnd and tr methods).
pub fn run_optimized(problem: &PlacementProblem, initial: &AnchorSet) -> Result<PlacementRun> {
    problem.validate()?;
    if problem.method == Method::Eig {
        return Err(Error::InvalidParameter(
            "the eigenvector method uses the perturbation algorithm".into(),
        ));
    }
    let mut frame = Frame::new(problem, initial)?;
    for iteration in 0..problem.n_added {
        let am = frame.matrix()?;
        let bounds = iteration_bounds(&am, problem.mode)?;
        let warm = frame.eig_candidate(&am).ok();
        let objective = subproblem_objective(problem.mode, problem.method, &am);
        let outcome = solve_anchor_subproblem(
            objective,
            &frame.local_box,
            &frame.working,
            &problem.separation,
            &problem.solver,
            warm,
            iteration as u64,
        );
        if !outcome.feasible {
            return Err(Error::Infeasible {
                iteration,
                partial: frame.partial(),
            });
        }
        let summary = SolverSummary {
            starts: outcome.starts.len(),
            feasible_starts: outcome.starts.iter().filter(|s| s.feasible).count(),
            iterations: outcome.starts.iter().map(|s| s.iterations).sum(),
            cost: outcome.cost,
        };
        frame.push(outcome.point, true, bounds, Some(summary), 0)?;
    }
    frame.finish()
}

/// Eigenvector-direction addition with random perturbation when a candidate
/// lands too close to an existing anchor.
pub fn run_eigen(problem: &PlacementProblem, initial: &AnchorSet) -> Result<PlacementRun> {
    problem.validate()?;
    if problem.method != Method::Eig {
        return Err(Error::InvalidParameter(
            "the perturbation algorithm only runs the eigenvector method".into(),
        ));
    }
    let mut frame = Frame::new(problem, initial)?;
    let mut rng = ChaCha8Rng::seed_from_u64(problem.solver.seed ^ PERTURB_STREAM_TAG);
    let sep = &problem.separation;
    let d_th = sep.d_th();
    let eta = problem.perturbation.eta;
    let max_additions = problem.n_added + problem.redundancy_cap();
    let mut valid_count = 0;
    let mut additions = 0;

    while valid_count < problem.n_added {
        if additions == max_additions {
            return Err(Error::CapExhausted {
                valid: valid_count,
                wanted: problem.n_added,
                partial: frame.partial(),
            });
        }
        additions += 1;

        let am = frame.matrix()?;
        let bounds = iteration_bounds(&am, problem.mode)?;
        // With the origin pinned to the box boundary the ray is empty; the
        // perturbation step then starts from the centroid itself.
        let candidate = match frame.eig_candidate(&am) {
            Ok(p) => p,
            Err(Error::ZeroFeasible) => frame.local_box.clamp(&Vec3::ZERO),
            Err(e) => return Err(e),
        };

        let mut chosen = candidate;
        let mut accepted = sep.satisfied(&candidate, &frame.working, AUDIT_TOL);
        let mut tries = 0;
        if !accepted {
            let mut best_sep = sep.nearest(&candidate, &frame.working);
            for _ in 0..problem.perturbation.max_tries {
                tries += 1;
                let theta = rng.random_range(-PI..PI);
                let phi = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
                let trial = frame
                    .local_box
                    .clamp(&(candidate + direction(theta, phi) * (eta * d_th)));
                let nearest = sep.nearest(&trial, &frame.working);
                if nearest >= d_th - AUDIT_TOL {
                    chosen = trial;
                    accepted = true;
                    break;
                }
                if nearest > best_sep {
                    best_sep = nearest;
                    chosen = trial;
                }
            }
        }
        frame.push(chosen, accepted, bounds, None, tries)?;
        if accepted {
            valid_count += 1;
        }
    }
    frame.finish()
}
