//! Experiment orchestration: ε sweeps, rate fits, assertion tables and reports.

pub mod assess;
pub mod fit;
pub mod report;
pub mod run;
pub mod setup;
pub mod validate;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use assess::{assess_sweep, Assertion, Assessment, FitOutcome};
pub use fit::{fit_rate, Abscissa, RateFit};
pub use report::{emit_report, recompute_fits, run_id, Summary};
pub use run::{run_epsilon, EpsRun, RunStatus};
pub use setup::{prepare, Prepared};

use crate::config::RunConfig;
use crate::error::Result;
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The first ε of the list only.
    Simulate,
    /// Every ε, rates and the bounds the sweep decides.
    Sweep,
    /// Sweep plus structural, quadrature, randomized and cross-solver checks.
    Validate,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub mode: Mode,
    pub config: RunConfig,
    pub runs: Vec<EpsRun>,
    pub assessment: Assessment,
}

impl Evaluation {
    pub fn all_passed(&self) -> bool {
        self.assessment.assertions.iter().all(|a| a.passed)
    }
}

/// Runs the given ε values in parallel, in list order; the relative-entropy monitor rides
/// on `monitored` if present.
pub fn run_sweep(config: &RunConfig, model: &Model, prep: &Prepared, eps: &[f64], monitored: Option<f64>) -> Vec<EpsRun> {
    eps.par_iter().map(|&e| run_epsilon(config, model, prep, e, monitored == Some(e))).collect()
}

/// Resolves `config`, runs what `mode` asks for and assesses it. `strict` adds a failing
/// assertion for every warning-level event (clamped entries, stiff cross-check).
pub fn execute(mut config: RunConfig, mode: Mode, strict: bool) -> Result<Evaluation> {
    config.resolve()?;
    let model = config.build_model()?;
    let prep = prepare(&config, &model)?;
    let e = &config.experiment;
    let eps: Vec<f64> = match mode {
        Mode::Simulate => e.eps_list[..1].to_vec(),
        _ => e.eps_list.clone(),
    };
    let monitored = match mode {
        Mode::Simulate => None,
        _ => Some(e.cross_check.map(|c| c.eps).unwrap_or(eps[0])),
    };
    info!("{mode:?}: {} runs, eps = {eps:?}", eps.len());
    let runs = run_sweep(&config, &model, &prep, &eps, monitored);

    let mut assessment = match mode {
        Mode::Simulate => Assessment::default(),
        _ => assess_sweep(&config, &runs),
    };
    let mut extra = Vec::new();
    match mode {
        Mode::Simulate => {
            let r = &runs[0];
            extra.push(Assertion::new(
                1,
                "per_step_mass_defect",
                r.completed() && r.telemetry.max_mass_defect <= 1e-10,
                r.telemetry.max_mass_defect,
                match &r.status {
                    RunStatus::Completed => "max per-step |mass − 1| (≤ 1e-10)".to_string(),
                    RunStatus::Failed { reason } => reason.clone(),
                },
            ));
        }
        Mode::Sweep => {}
        Mode::Validate => {
            extra.extend(validate::structural(&config, &model, &prep, &runs)?);
            extra.extend(validate::random_pairs(e.seed, 1000));
            extra.extend(validate::quadrature_oracles(&config, &model)?);
            if let Some(cc) = e.cross_check {
                let snap = runs.iter().find(|r| r.eps == cc.eps).and_then(|r| r.snapshot.as_ref());
                match snap {
                    Some(s) => {
                        let c = validate::direct_cross_check(&config, &model, &prep, s, cc.t)?;
                        if strict && c.stiff {
                            extra.push(Assertion::new(7, "strict_direct_stiffness", false, cc.eps, "eps below the direct grid spacing"));
                        }
                        extra.push(c.assertion);
                    }
                    None => extra.push(Assertion::new(7, "direct_vs_rescaled_l1", false, f64::NAN, "no snapshot: the run failed before the cross-check time")),
                }
            }
        }
    }
    if strict {
        let clamped: usize = runs.iter().map(|r| r.telemetry.clamped).sum();
        extra.push(Assertion::new(1, "strict_no_clamping", clamped == 0, clamped as f64, "negative entries clamped over all runs"));
    }
    extra.append(&mut assessment.assertions);
    extra.sort_by_key(|a| a.group);
    assessment.assertions = extra;
    Ok(Evaluation { mode, config, runs, assessment })
}
