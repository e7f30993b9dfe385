//! Turns the recorded runs of a sweep into rate fits and pass/fail assertions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fit::{fit_rate, Abscissa, RateFit};
use super::run::{metric, suite, EpsRun, SuiteTally};
use crate::config::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    /// Acceptance group 1–7 this check belongs to.
    pub group: u8,
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub detail: String,
}

impl Assertion {
    pub fn new(group: u8, name: impl Into<String>, passed: bool, measured: f64, detail: impl Into<String>) -> Self {
        Self { group, name: name.into(), passed, measured, detail: detail.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub metric: String,
    /// (ε, error) pairs that entered the fit.
    pub points: Vec<(f64, f64)>,
    pub fit: Option<RateFit>,
    pub refused: Option<String>,
}

/// sup over sample times of `name`, skipping times where it is flagged.
pub fn unflagged_sup(run: &EpsRun, name: &str) -> Option<f64> {
    run.samples
        .iter()
        .filter(|s| !s.flagged.iter().any(|f| f == name))
        .filter_map(|s| s.get(name))
        .reduce(f64::max)
}

pub fn fit_metric(runs: &[EpsRun], name: &str, abscissa: Abscissa) -> FitOutcome {
    let points: Vec<(f64, f64)> =
        runs.iter().filter(|r| r.completed()).filter_map(|r| unflagged_sup(r, name).map(|v| (r.eps, v))).collect();
    match fit_rate(&points, abscissa) {
        Ok(f) => FitOutcome { metric: name.into(), points, fit: Some(f), refused: None },
        Err(e) => FitOutcome { metric: name.into(), points, fit: None, refused: Some(e.to_string()) },
    }
}

fn rate_assertions(group: u8, out: &FitOutcome, band: (f64, f64), min_r2: f64) -> Vec<Assertion> {
    match &out.fit {
        Some(f) => vec![
            Assertion::new(
                group,
                format!("{}_slope", out.metric),
                f.slope >= band.0 && f.slope <= band.1,
                f.slope,
                format!("slope vs {:?} in [{}, {}]", f.abscissa, band.0, band.1),
            ),
            Assertion::new(
                group,
                format!("{}_r_squared", out.metric),
                f.r_squared >= min_r2,
                f.r_squared,
                format!("R^2 >= {min_r2}"),
            ),
        ],
        None => vec![Assertion::new(
            group,
            format!("{}_slope", out.metric),
            false,
            f64::NAN,
            out.refused.clone().unwrap_or_default(),
        )],
    }
}

/// Largest ratio of `name` to `envelope(t)` over the samples accepted by `window`.
fn max_ratio(run: &EpsRun, name: &str, window: impl Fn(f64) -> bool, envelope: impl Fn(f64) -> f64) -> Option<f64> {
    run.samples
        .iter()
        .filter(|s| window(s.t) && !s.flagged.iter().any(|f| f == name))
        .filter_map(|s| s.get(name).map(|v| v / envelope(s.t)))
        .reduce(f64::max)
}

/// Envelope constant calibrated on the coarsest ε, then checked on every ε with the
/// constant inflated by (1 + bound_tolerance).
fn calibrated_envelope(
    group: u8,
    label: &str,
    runs: &[EpsRun],
    name: &str,
    margin: f64,
    window: impl Fn(f64, f64) -> bool,
    envelope: impl Fn(f64, f64) -> f64,
) -> Vec<Assertion> {
    let done: Vec<&EpsRun> = runs.iter().filter(|r| r.completed()).collect();
    let Some(coarse) = done.first() else {
        return vec![Assertion::new(group, label, false, f64::NAN, "no completed run")];
    };
    let e0 = coarse.eps;
    let Some(c) = max_ratio(coarse, name, |t| window(t, e0), |t| envelope(t, e0)) else {
        return vec![Assertion::new(group, label, false, f64::NAN, "no calibration samples in the window")];
    };
    let mut worst = 0.0_f64;
    let mut checked = 0usize;
    let mut failed = 0usize;
    for r in &done {
        for s in r.samples.iter().filter(|s| window(s.t, r.eps)) {
            if let Some(v) = s.get(name) {
                checked += 1;
                let bound = c * margin * envelope(s.t, r.eps);
                let ratio = if bound > 0.0 { v / bound } else if v > 0.0 { f64::INFINITY } else { 0.0 };
                worst = worst.max(ratio);
                if v > bound {
                    failed += 1;
                }
            }
        }
    }
    vec![Assertion::new(
        group,
        label,
        failed == 0 && checked > 0,
        worst,
        format!("C = {c:.4e} from eps = {e0}, margin {margin}; {failed} of {checked} samples outside; worst value/bound"),
    )]
}

/// Smallest C with err(t) ≤ C·min(e^{Ct}(E + ε), 1) at every sample of one run.
fn fit_macro_constant(run: &EpsRun, e_mac: f64) -> f64 {
    let excess = |c: f64| -> f64 {
        run.samples
            .iter()
            .filter_map(|s| s.get(metric::MACRO_ERROR).map(|v| v / (c * ((c * s.t).exp() * (e_mac + run.eps)).min(1.0))))
            .fold(0.0, f64::max)
    };
    if excess(1e-12) <= 1.0 {
        return 1e-12;
    }
    let (mut lo, mut hi) = (1e-12_f64, 1.0_f64);
    while excess(hi) > 1.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if excess(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// "Bounded uniformly across the sweep": sup per ε finite and consecutive sups within
/// a factor 3.
fn uniform_bound(group: u8, runs: &[EpsRun], name: &str) -> Assertion {
    let sups: Vec<(f64, f64)> = runs.iter().filter(|r| r.completed()).filter_map(|r| r.sup(name).map(|v| (r.eps, v))).collect();
    let finite = !sups.is_empty() && sups.iter().all(|(_, v)| v.is_finite());
    let worst = sups
        .windows(2)
        .map(|p| {
            let r = p[1].1 / p[0].1;
            r.max(1.0 / r)
        })
        .fold(1.0_f64, f64::max);
    let listing: Vec<String> = sups.iter().map(|(e, v)| format!("{e}:{v:.4e}")).collect();
    Assertion::new(
        group,
        format!("{name}_uniform"),
        finite && worst < 3.0,
        worst,
        format!("largest change between neighbouring eps (must stay < 3); sups {}", listing.join(", ")),
    )
}

fn suite_assertion(group: u8, name: &str, tally: &SuiteTally) -> Assertion {
    Assertion::new(
        group,
        name,
        tally.violations == 0 && tally.checked > 0,
        tally.worst_ratio,
        format!("{} violations of {} checks; worst lhs/rhs", tally.violations, tally.checked),
    )
}

pub fn merged_suites(runs: &[EpsRun]) -> BTreeMap<String, SuiteTally> {
    let mut out: BTreeMap<String, SuiteTally> = BTreeMap::new();
    for r in runs {
        for (k, t) in &r.suites {
            out.entry(k.clone()).or_default().merge(t);
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub fits: Vec<FitOutcome>,
    pub assertions: Vec<Assertion>,
}

/// Rate fits and assertions of groups 2–6 that the sweep data alone decides.
pub fn assess_sweep(config: &RunConfig, runs: &[EpsRun]) -> Assessment {
    let mut a = Assessment::default();
    for r in runs {
        if let super::run::RunStatus::Failed { reason } = &r.status {
            a.assertions.push(Assertion::new(2, format!("run_eps_{}", r.eps), false, r.eps, reason.clone()));
        }
    }
    let l1 = fit_metric(runs, metric::L1_INTEGRATED_SCALED, Abscissa::Eps);
    let l1_mu = fit_metric(runs, metric::L1_MU_INTEGRATED_SCALED, Abscissa::Eps);
    let marg = fit_metric(runs, metric::MARGINAL_H0_SCALED, Abscissa::EpsSqrtLog);
    a.assertions.extend(rate_assertions(2, &l1, (0.35, 0.65), 0.95));
    a.assertions.extend(rate_assertions(2, &l1_mu, (0.35, 0.65), 0.95));
    a.assertions.extend(rate_assertions(3, &marg, (0.8, 1.2), 0.95));
    a.fits.extend([l1, l1_mu, marg]);
    // reported, not asserted
    for name in metric::MU_WEIGHTED.iter().chain([&metric::MU_MARGINAL_H0, &metric::L1_INTEGRATED, &metric::PERP_H0]) {
        a.fits.push(fit_metric(runs, name, Abscissa::Eps));
    }

    let e = &config.experiment;
    let margin = 1.0 + e.bound_tolerance;
    let alpha = config.alpha_star();
    let m_star = config.model.m_star;
    a.assertions.extend(calibrated_envelope(
        3,
        "perp_initial_layer_envelope",
        runs,
        metric::PERP_H0,
        margin,
        |t, eps| t > 0.0 && t <= eps,
        |t, eps| ((-alpha * t / eps).exp() * eps.powf(-alpha / (2.0 * m_star))).min(1.0),
    ));
    a.assertions.extend(calibrated_envelope(
        3,
        "perp_sqrt_eps_envelope",
        runs,
        metric::PERP_H0,
        margin,
        |t, eps| t >= 5.0 * eps * eps.ln().abs(),
        |_, eps| eps.sqrt(),
    ));

    for name in [metric::D2_RATIO, metric::D4_RATIO, metric::ERROR_RATIO, metric::M2, metric::M4] {
        a.assertions.push(uniform_bound(4, runs, name));
    }
    let done: Vec<&EpsRun> = runs.iter().filter(|r| r.completed()).collect();
    let e_mac = e.macro_offset.abs();
    if let Some(coarse) = done.first() {
        let c = fit_macro_constant(coarse, e_mac);
        let (mut worst, mut failed, mut checked) = (0.0_f64, 0usize, 0usize);
        for r in &done {
            for s in &r.samples {
                if let Some(v) = s.get(metric::MACRO_ERROR) {
                    let bound = margin * c * ((c * s.t).exp() * (e_mac + r.eps)).min(1.0);
                    checked += 1;
                    worst = worst.max(v / bound);
                    if v > bound {
                        failed += 1;
                    }
                }
            }
        }
        a.assertions.push(Assertion::new(
            4,
            "macro_error_envelope",
            c.is_finite() && failed == 0,
            worst,
            format!("C = {c:.4e} fitted on eps = {}, margin {margin}; {failed} of {checked} samples outside", coarse.eps),
        ));
    }

    let suites = merged_suites(runs);
    for name in [
        suite::CSISZAR_KULLBACK,
        suite::SANDWICH,
        suite::LOG_SOBOLEV,
        suite::GAUSSIAN_POINCARE,
        suite::P_NORM,
        suite::P_MOMENT,
        suite::ENTROPY_FINITE,
        suite::BAR_NU_GROWTH,
        suite::BAR_NU_W_DERIVATIVE,
    ] {
        a.assertions.push(suite_assertion(5, name, suites.get(name).unwrap_or(&SuiteTally::default())));
    }
    match runs.iter().find_map(|r| r.twin.as_ref()) {
        Some(m) => a.assertions.push(Assertion::new(
            5,
            "relative_entropy_rate_monitor",
            m.violations == 0 && m.integrated_ok && m.checked > 0,
            m.worst_excess,
            format!(
                "{} violations of {} intervals at tolerance {}; integrated bound {}; worst excess of dH/dt over R",
                m.violations,
                m.checked,
                e.twin_tolerance,
                if m.integrated_ok { "held" } else { "failed" }
            ),
        )),
        None => a.assertions.push(Assertion::new(5, "relative_entropy_rate_monitor", false, f64::NAN, "no monitored run")),
    }
    a.assertions.push(suite_assertion(6, suite::EQUICONTINUITY, suites.get(suite::EQUICONTINUITY).unwrap_or(&SuiteTally::default())));
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::{RunStatus, RunTelemetry, SampleRecord};

    fn run(eps: f64, series: &[(f64, f64)], name: &str) -> EpsRun {
        EpsRun {
            eps,
            status: RunStatus::Completed,
            samples: series
                .iter()
                .map(|(t, v)| SampleRecord { t: *t, metrics: vec![(name.into(), *v)], flagged: vec![] })
                .collect(),
            nodes: vec![],
            suites: BTreeMap::new(),
            telemetry: RunTelemetry::default(),
            m1: 0.0,
            twin: None,
            snapshot: None,
        }
    }

    #[test]
    fn fit_uses_sup_and_skips_failed_runs() {
        let mut runs: Vec<EpsRun> = [0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&e| run(e, &[(0.0, 0.0), (1.0, e.sqrt()), (2.0, 0.5 * e.sqrt())], "m"))
            .collect();
        runs[3].status = RunStatus::Failed { reason: "x".into() };
        let f = fit_metric(&runs, "m", Abscissa::Eps);
        assert_eq!(f.points.len(), 3);
        assert!((f.fit.unwrap().slope - 0.5).abs() < 1e-12);
    }

    #[test]
    fn flagged_samples_leave_the_sup() {
        let mut r = run(0.1, &[(0.0, 1.0), (1.0, 5.0)], "m");
        r.samples[1].flagged.push("m".into());
        assert_eq!(unflagged_sup(&r, "m"), Some(1.0));
    }

    #[test]
    fn envelope_calibrated_on_coarsest() {
        // value = 2√ε on the coarse run, 2.5√ε on the fine one
        let runs = vec![run(0.1, &[(1.0, 2.0 * 0.1f64.sqrt())], "p"), run(0.05, &[(1.0, 2.5 * 0.05f64.sqrt())], "p")];
        let strict = calibrated_envelope(3, "x", &runs, "p", 1.0, |_, _| true, |_, e| e.sqrt());
        assert!(!strict[0].passed);
        let loose = calibrated_envelope(3, "x", &runs, "p", 1.5, |_, _| true, |_, e| e.sqrt());
        assert!(loose[0].passed);
    }

    #[test]
    fn macro_constant_is_tight() {
        let r = run(0.1, &[(0.0, 0.0), (1.0, 0.3), (2.0, 0.5)], metric::MACRO_ERROR);
        let c = fit_macro_constant(&r, 0.0);
        let worst = r
            .samples
            .iter()
            .map(|s| s.metrics[0].1 / (c * ((c * s.t).exp() * 0.1).min(1.0)))
            .fold(0.0, f64::max);
        assert!((worst - 1.0).abs() < 1e-9, "{worst}");
    }

    #[test]
    fn uniform_bound_catches_jumps() {
        let runs = vec![run(0.1, &[(0.0, 1.0)], "q"), run(0.05, &[(0.0, 4.0)], "q")];
        assert!(!uniform_bound(4, &runs, "q").passed);
        let runs = vec![run(0.1, &[(0.0, 1.0)], "q"), run(0.05, &[(0.0, 2.0)], "q")];
        assert!(uniform_bound(4, &runs, "q").passed);
    }
}
