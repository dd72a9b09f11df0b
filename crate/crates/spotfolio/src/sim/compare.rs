//! Side-by-side studies over a family of scenarios.
//!
//! These helpers rerun the same scenario under controlled variations —
//! fault-tolerance policy, portfolio breadth, a market-wide outage — and
//! aggregate the per-seed outcomes so policies can be compared on equal
//! footing.

use serde::Serialize;

use super::{
    run, ApplicationSpec, PortfolioPolicy, RecoveryPolicy, Scenario, SimError, SimReport,
};

/// Aggregate outcome of one fault-tolerance policy across seeds.
///
/// A run whose applications are still unfinished when the trace ends —
/// possible under a no-replacement policy once every server is gone — is
/// counted as a non-completion and excluded from the means.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyRow {
    pub label: String,
    /// Runs (out of the seed count) whose applications all finished
    /// within the trace.
    pub completions: usize,
    pub mean_completion_seconds: f64,
    pub mean_runtime_increase: f64,
    pub mean_savings: f64,
    /// Per-seed completion times (mean across that run's applications),
    /// in seed order; `None` marks a run that did not finish within the
    /// trace. Lets callers compare policies seed by seed rather than only
    /// through the means.
    pub completion_seconds: Vec<Option<f64>>,
}

/// Aggregate outcome of one portfolio breadth across seeds.
#[derive(Debug, Clone, Serialize)]
pub struct DiversityRow {
    pub k: usize,
    /// Runs (out of the seed count) whose applications all finished
    /// within the trace.
    pub completions: usize,
    /// Mean over the completed runs only.
    pub mean_runtime_increase: f64,
    /// Per-seed runtime increases, in seed order; `None` marks a run that
    /// did not finish within the trace.
    pub increases: Vec<Option<f64>>,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn apply_policy(spec: &mut ApplicationSpec, label: &str) {
    match label {
        "checkpoint+eager" => {
            spec.recovery_policy = RecoveryPolicy::Eager;
        }
        "checkpoint+none" => {
            spec.recovery_policy = RecoveryPolicy::None;
        }
        "restart+none" => {
            spec.recovery_policy = RecoveryPolicy::None;
            spec.checkpoint_write_seconds = None;
        }
        _ => unreachable!("fixed label set"),
    }
}

/// Runs the scenario produced by `make(seed)` under three fault-tolerance
/// policies — periodic checkpoints with eager replacement, checkpoints
/// without replacement, and plain restart — applied to every application,
/// and averages the outcomes across seeds. Runs that outlast the trace
/// count as non-completions; any other failure aborts the study.
pub fn compare_recovery_policies(
    make: impl Fn(u64) -> Result<Scenario, SimError>,
    seeds: &[u64],
) -> Result<Vec<PolicyRow>, SimError> {
    let labels = ["checkpoint+eager", "checkpoint+none", "restart+none"];
    let mut rows = Vec::with_capacity(labels.len());
    for label in labels {
        let mut completion_seconds = Vec::new();
        let mut increases = Vec::new();
        let mut savings = Vec::new();
        for &seed in seeds {
            let mut scenario = make(seed)?;
            for app in &mut scenario.applications {
                apply_policy(&mut app.spec, label);
            }
            match run(&scenario) {
                Ok(report) => {
                    let per_app: Vec<f64> = report
                        .apps
                        .iter()
                        .map(|a| (a.completion_time - a.arrival_time) as f64)
                        .collect();
                    completion_seconds.push(Some(mean(&per_app)));
                    for app in &report.apps {
                        increases.push(app.runtime_increase_fraction);
                        savings.push(app.savings_fraction);
                    }
                }
                Err(SimError::TraceHorizonExceeded { .. }) => completion_seconds.push(None),
                Err(e) => return Err(e),
            }
        }
        let completed: Vec<f64> = completion_seconds.iter().flatten().copied().collect();
        rows.push(PolicyRow {
            label: label.to_string(),
            completions: completed.len(),
            mean_completion_seconds: mean(&completed),
            mean_runtime_increase: mean(&increases),
            mean_savings: mean(&savings),
            completion_seconds,
        });
    }
    Ok(rows)
}

/// Reruns the scenario with every application forced onto an equal-weight
/// portfolio over the `k` best markets, for each `k`, and averages the
/// runtime stretch across seeds. Widening the portfolio dilutes the work
/// lost to any one market's revocation. Runs that outlast the trace count
/// as non-completions; any other failure aborts the study.
pub fn diversity_series(
    make: impl Fn(u64) -> Result<Scenario, SimError>,
    ks: &[usize],
    seeds: &[u64],
) -> Result<Vec<DiversityRow>, SimError> {
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut increases = Vec::new();
        for &seed in seeds {
            let mut scenario = make(seed)?;
            for app in &mut scenario.applications {
                app.spec.portfolio_policy = PortfolioPolicy::EqualTopK { k };
            }
            match run(&scenario) {
                Ok(report) => {
                    let per_seed: Vec<f64> = report
                        .apps
                        .iter()
                        .map(|a| a.runtime_increase_fraction)
                        .collect();
                    increases.push(Some(mean(&per_seed)));
                }
                Err(SimError::TraceHorizonExceeded { .. }) => increases.push(None),
                Err(e) => return Err(e),
            }
        }
        let completed: Vec<f64> = increases.iter().flatten().copied().collect();
        rows.push(DiversityRow {
            k,
            completions: completed.len(),
            mean_runtime_increase: mean(&completed),
            increases,
        });
    }
    Ok(rows)
}

/// Runs a scenario expected to contain a simultaneous all-market outage and
/// returns the report; `black_swan_observed` confirms the outage actually
/// occurred.
pub fn black_swan(scenario: &Scenario) -> Result<SimReport, SimError> {
    run(scenario)
}
