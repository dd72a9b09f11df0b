//! Trace-driven cluster simulator.
//!
//! Replays price traces against a catalog of spot markets and a set of
//! applications, each running on a portfolio-derived server allocation.
//! Price crossings trigger warnings and market-wide revocations;
//! applications react according to their fault-tolerance model
//! (checkpointing batch jobs, gang-scheduled rigid jobs, elastic task
//! bags), and the engine accounts progress and cost exactly so that
//! reported savings can be audited against the event log.
//!
//! Entry points: [`run`] for a single scenario, [`compare`] for policy
//! grids and diversity sweeps, and [`ScenarioConfig`] for the plain-text
//! scenario file format.

mod apps;
mod compare;
mod engine;

pub use compare::{
    black_swan, compare_recovery_policies, diversity_series, DiversityRow, PolicyRow,
};
pub use engine::run;

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::alloc::{AllocError, AppId, ResourceVector, ServerId, DEFAULT_FREE_LIST_HOLD_SECONDS};
use crate::market::{MarketCatalog, MarketDataError, MarketId, PriceSeries};
use crate::portfolio::{MarketConstraints, PortfolioError};
use crate::risk::{BidPolicy, CovarianceKind, RiskError};
use crate::synth::SyntheticScenarioSpec;

pub const DEFAULT_TICK_SECONDS: u64 = crate::market::DEFAULT_STEP_SECONDS;
/// Lead time between a hard revocation warning and the revocation itself.
pub const DEFAULT_WARNING_SECONDS: u64 = 120;
/// Soft warnings fire when price reaches this fraction of the bid.
pub const DEFAULT_SOFT_WARNING_THRESHOLD: f64 = 0.9;
/// Replacement servers take this long to come up.
pub const DEFAULT_REPLENISH_LATENCY_SECONDS: u64 = 300;
/// Weight-averaged MTTR estimates are refreshed at this cadence.
pub const DEFAULT_MTTR_REFRESH_SECONDS: u64 = 300;

// ---- Errors ----

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trace horizon exceeded at t={time}s with unfinished applications: {}",
        unfinished.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", "))]
    TraceHorizonExceeded { time: u64, unfinished: Vec<AppId> },
    #[error("invalid scenario: {reason}")]
    InvalidScenario { reason: String },
    #[error(transparent)]
    Market(#[from] MarketDataError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Portfolio(#[from] PortfolioError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

// ---- Application specifications ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AppKind {
    /// Long-running batch job with periodic checkpoints.
    BatchCheckpoint,
    /// Gang-scheduled job: runs at full rate with its complete allocation
    /// or not at all, and any revocation forces a restart from the last
    /// durable checkpoint (or from zero).
    Rigid,
    /// Elastic bag of equal independent tasks; sheds and reacquires
    /// capacity instead of replenishing.
    BagOfTasks,
}

impl AppKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AppKind::BatchCheckpoint => "batch-checkpoint",
            AppKind::Rigid => "rigid",
            AppKind::BagOfTasks => "bag-of-tasks",
        }
    }
}

/// What to do about servers lost to a revocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecoveryPolicy {
    /// Replace lost servers immediately.
    Eager,
    /// Never replace; finish degraded on what remains.
    None,
    /// Replace only while completed progress is below this fraction of the
    /// total work (late in the job, replacement cannot pay for itself).
    ProgressThreshold(f64),
}

/// How the application's market weights are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum PortfolioPolicy {
    /// Solve the risk-adjusted optimization at the app's alpha.
    Optimize,
    /// Uniform weights over the k highest-return markets.
    EqualTopK { k: usize },
    /// Fixed caller-supplied weights.
    FixedWeights { weights: Vec<(MarketId, f64)> },
}

#[derive(Debug, Clone)]
pub struct ApplicationSpec {
    pub name: AppId,
    pub kind: AppKind,
    /// Total work in seconds at full rate.
    pub work_seconds: f64,
    pub r: ResourceVector,
    pub alpha: f64,
    pub constraints: MarketConstraints,
    /// Checkpoint write latency δ; `None` disables checkpointing.
    pub checkpoint_write_seconds: Option<f64>,
    pub recovery_policy: RecoveryPolicy,
    /// Bag-of-tasks: relinquish servers while the portfolio-weighted
    /// normalized price exceeds this.
    pub price_threshold: Option<f64>,
    /// Bag-of-tasks: number of equal tasks the work divides into.
    pub task_count: u32,
    pub portfolio_policy: PortfolioPolicy,
}

impl ApplicationSpec {
    fn base(name: impl Into<String>, kind: AppKind, work_seconds: f64, r: ResourceVector) -> Self {
        ApplicationSpec {
            name: AppId::new(name),
            kind,
            work_seconds,
            r,
            alpha: 1.0,
            constraints: MarketConstraints::none(),
            checkpoint_write_seconds: None,
            recovery_policy: RecoveryPolicy::Eager,
            price_threshold: None,
            task_count: 1,
            portfolio_policy: PortfolioPolicy::Optimize,
        }
    }

    /// A checkpointing batch job with write latency δ.
    pub fn batch(
        name: impl Into<String>,
        work_seconds: f64,
        r: ResourceVector,
        checkpoint_write_seconds: f64,
    ) -> Self {
        ApplicationSpec {
            checkpoint_write_seconds: Some(checkpoint_write_seconds),
            ..Self::base(name, AppKind::BatchCheckpoint, work_seconds, r)
        }
    }

    /// A gang-scheduled rigid job (no checkpointing unless δ is set later).
    pub fn rigid(name: impl Into<String>, work_seconds: f64, r: ResourceVector) -> Self {
        ApplicationSpec {
            alpha: 0.0,
            ..Self::base(name, AppKind::Rigid, work_seconds, r)
        }
    }

    /// An elastic bag of `task_count` equal tasks.
    pub fn bag(
        name: impl Into<String>,
        work_seconds: f64,
        r: ResourceVector,
        task_count: u32,
    ) -> Self {
        ApplicationSpec {
            task_count,
            recovery_policy: RecoveryPolicy::None,
            ..Self::base(name, AppKind::BagOfTasks, work_seconds, r)
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |reason: String| Err(SimError::InvalidScenario { reason });
        if !(self.work_seconds > 0.0 && self.work_seconds.is_finite()) {
            return bad(format!("{}: work_seconds must be positive", self.name));
        }
        if !self.r.is_valid_demand() || self.r.is_negligible() {
            return bad(format!("{}: resource demand must be non-zero", self.name));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("{}: alpha must be finite and non-negative", self.name));
        }
        if let Some(delta) = self.checkpoint_write_seconds {
            if !(delta > 0.0 && delta.is_finite()) {
                return bad(format!("{}: checkpoint_write_seconds must be positive", self.name));
            }
        }
        if let RecoveryPolicy::ProgressThreshold(p) = self.recovery_policy {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{}: progress threshold must lie in [0, 1]", self.name));
            }
        }
        if let Some(t) = self.price_threshold {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("{}: price_threshold must be positive", self.name));
            }
        }
        if self.task_count == 0 {
            return bad(format!("{}: task_count must be at least 1", self.name));
        }
        if let PortfolioPolicy::EqualTopK { k } = self.portfolio_policy {
            if k == 0 {
                return bad(format!("{}: top-k portfolio needs k ≥ 1", self.name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScheduledApp {
    pub spec: ApplicationSpec,
    pub arrival_time: u64,
}

// ---- Scenario ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SharingMode {
    /// Every application gets dedicated servers.
    Private,
    /// Applications are packed into surplus capacity first.
    Shared,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub catalog: MarketCatalog,
    pub traces: BTreeMap<MarketId, PriceSeries>,
    pub bid_policy: BidPolicy,
    pub tick_seconds: u64,
    pub warning_seconds: u64,
    pub soft_warning_threshold: f64,
    pub cov_kind: CovarianceKind,
    pub sharing_mode: SharingMode,
    /// Charge revoked servers up to the revocation instant (true) or only
    /// up to the warning (false — provider refunds the warned interval).
    pub charge_through_revocation: bool,
    pub replenish_latency_seconds: u64,
    pub mttr_refresh_seconds: u64,
    pub free_list_hold_seconds: u64,
    pub applications: Vec<ScheduledApp>,
    pub seed: u64,
    /// Record per-event and per-cost-segment detail in the report.
    pub record_event_log: bool,
}

impl Scenario {
    /// A scenario with default timing parameters and no applications.
    pub fn new(catalog: MarketCatalog, traces: BTreeMap<MarketId, PriceSeries>) -> Self {
        Scenario {
            catalog,
            traces,
            bid_policy: BidPolicy::on_demand(),
            tick_seconds: DEFAULT_TICK_SECONDS,
            warning_seconds: DEFAULT_WARNING_SECONDS,
            soft_warning_threshold: DEFAULT_SOFT_WARNING_THRESHOLD,
            cov_kind: CovarianceKind::Price,
            sharing_mode: SharingMode::Private,
            charge_through_revocation: true,
            replenish_latency_seconds: DEFAULT_REPLENISH_LATENCY_SECONDS,
            mttr_refresh_seconds: DEFAULT_MTTR_REFRESH_SECONDS,
            free_list_hold_seconds: DEFAULT_FREE_LIST_HOLD_SECONDS,
            applications: Vec::new(),
            seed: 0,
            record_event_log: false,
        }
    }

    pub fn with_app(mut self, spec: ApplicationSpec, arrival_time: u64) -> Self {
        self.applications.push(ScheduledApp { spec, arrival_time });
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |reason: &str| Err(SimError::InvalidScenario { reason: to_owned(reason) });
        if self.tick_seconds == 0 {
            return bad("tick_seconds must be positive");
        }
        if !(self.soft_warning_threshold > 0.0 && self.soft_warning_threshold < 1.0) {
            return bad("soft_warning_threshold must lie in (0, 1)");
        }
        if self.mttr_refresh_seconds == 0 {
            return bad("mttr_refresh_seconds must be positive");
        }
        let mut names: Vec<&AppId> = self.applications.iter().map(|a| &a.spec.name).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("application names must be unique");
        }
        for app in &self.applications {
            app.spec.validate()?;
        }
        Ok(())
    }
}

fn to_owned(s: &str) -> String {
    s.to_string()
}

// ---- Reports ----

#[derive(Debug, Clone, Serialize)]
pub struct AppReport {
    pub app: AppId,
    pub kind: &'static str,
    pub arrival_time: u64,
    pub completion_time: u64,
    /// Runtime of the same job on dedicated on-demand servers.
    pub baseline_on_demand_time: f64,
    pub runtime_increase_fraction: f64,
    pub transient_cost: f64,
    pub on_demand_cost_baseline: f64,
    /// `1 − transient_cost / on_demand_cost_baseline`.
    pub savings_fraction: f64,
    pub revocation_count: u32,
    pub checkpoints_written: u32,
    pub rollback_work_lost_seconds: f64,
}

impl AppReport {
    pub fn csv_header() -> &'static str {
        "app,kind,arrival_time,completion_time,baseline_on_demand_time,\
         runtime_increase_fraction,transient_cost,on_demand_cost_baseline,\
         savings_fraction,revocation_count,checkpoints_written,\
         rollback_work_lost_seconds"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.app,
            self.kind,
            self.arrival_time,
            self.completion_time,
            self.baseline_on_demand_time,
            self.runtime_increase_fraction,
            self.transient_cost,
            self.on_demand_cost_baseline,
            self.savings_fraction,
            self.revocation_count,
            self.checkpoints_written,
            self.rollback_work_lost_seconds,
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MarketRevocationRecord {
    pub time: u64,
    pub market: MarketId,
    pub servers_lost: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterReport {
    /// Total leased server time, free-list holds included.
    pub total_server_hours: f64,
    /// Cost of leased time not attributable to any application
    /// (free-list holds).
    pub unattributed_cost: f64,
    pub revocations: Vec<MarketRevocationRecord>,
    /// True when every market was simultaneously above its bid.
    pub black_swan_observed: bool,
}

/// One billed interval of one server at one price.
#[derive(Debug, Clone, Serialize)]
pub struct CostSegment {
    pub server: ServerId,
    pub market: MarketId,
    pub start: u64,
    pub end: u64,
    pub price_per_hour: f64,
    pub cost: f64,
    /// How the segment's cost was split among owner applications; empty
    /// for unattributed (free-listed) time.
    pub app_costs: Vec<(AppId, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EventRecord {
    pub time: u64,
    pub kind: String,
    pub subject: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EventLog {
    pub events: Vec<EventRecord>,
    pub cost_segments: Vec<CostSegment>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    /// Per-application results, in application-id order.
    pub apps: Vec<AppReport>,
    pub cluster: ClusterReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_log: Option<EventLog>,
}

impl SimReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn app(&self, name: &str) -> Option<&AppReport> {
        self.apps.iter().find(|a| a.app.as_str() == name)
    }

    pub fn apps_csv(&self) -> String {
        let mut out = String::from(AppReport::csv_header());
        out.push('\n');
        for app in &self.apps {
            out.push_str(&app.csv_row());
            out.push('\n');
        }
        out
    }
}

// ---- Scenario configuration files ----

use serde::Deserialize;

/// Parsed scenario configuration: the plain-text (TOML) file the `simulate`
/// and `compare` commands consume. Traces come either from an embedded
/// `[synthetic]` section or from external files supplied by the caller.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub tick_seconds: u64,
    pub warning_seconds: u64,
    pub soft_warning_threshold: f64,
    pub sharing_mode: SharingMode,
    pub cov_kind: CovarianceKind,
    pub bid_multiple: f64,
    pub charge_through_revocation: bool,
    pub replenish_latency_seconds: u64,
    pub mttr_refresh_seconds: u64,
    pub free_list_hold_seconds: u64,
    pub seed: u64,
    pub record_event_log: bool,
    /// Trace length for synthetic generation.
    pub duration_seconds: Option<u64>,
    pub synthetic: Option<SyntheticScenarioSpec>,
    pub applications: Vec<ScheduledApp>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenarioConfig {
    tick_seconds: Option<u64>,
    warning_seconds: Option<u64>,
    soft_warning_threshold: Option<f64>,
    sharing_mode: Option<String>,
    cov_kind: Option<String>,
    bid_multiple: Option<f64>,
    charge_through_revocation: Option<bool>,
    replenish_latency_seconds: Option<u64>,
    mttr_refresh_seconds: Option<u64>,
    free_list_hold_seconds: Option<u64>,
    seed: Option<u64>,
    record_event_log: Option<bool>,
    duration_seconds: Option<u64>,
    synthetic: Option<toml::Table>,
    #[serde(default)]
    applications: Vec<RawApplication>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawApplication {
    name: String,
    kind: String,
    arrival_time: Option<u64>,
    work_seconds: f64,
    cpu: f64,
    mem_gb: f64,
    alpha: Option<f64>,
    checkpoint_write_seconds: Option<f64>,
    recovery_policy: Option<String>,
    progress_threshold: Option<f64>,
    price_threshold: Option<f64>,
    task_count: Option<u32>,
    portfolio: Option<String>,
    top_k: Option<usize>,
    min_mttr_seconds: Option<f64>,
    include: Option<Vec<String>>,
    exclude: Option<Vec<String>>,
    min_cpu: Option<u32>,
    min_mem_gb: Option<f64>,
    max_markets: Option<usize>,
}

impl RawApplication {
    fn into_scheduled(self) -> Result<ScheduledApp, SimError> {
        let bad = |reason: String| SimError::InvalidScenario { reason };
        let kind = match self.kind.as_str() {
            "batch-checkpoint" => AppKind::BatchCheckpoint,
            "rigid" => AppKind::Rigid,
            "bag-of-tasks" => AppKind::BagOfTasks,
            other => {
                return Err(bad(format!(
                    "kind must be \"batch-checkpoint\", \"rigid\", or \"bag-of-tasks\", \
                     got {other:?}"
                )))
            }
        };
        let recovery_policy = match self.recovery_policy.as_deref() {
            Some("eager") | None => RecoveryPolicy::Eager,
            Some("none") => RecoveryPolicy::None,
            Some("progress-threshold") => RecoveryPolicy::ProgressThreshold(
                self.progress_threshold
                    .ok_or_else(|| bad(to_owned(
                        "recovery_policy = \"progress-threshold\" needs progress_threshold",
                    )))?,
            ),
            Some(other) => {
                return Err(bad(format!(
                    "recovery_policy must be \"eager\", \"none\", or \
                     \"progress-threshold\", got {other:?}"
                )))
            }
        };
        let portfolio_policy = match self.portfolio.as_deref() {
            Some("optimize") | None => PortfolioPolicy::Optimize,
            Some("equal-top-k") => PortfolioPolicy::EqualTopK {
                k: self
                    .top_k
                    .ok_or_else(|| bad(to_owned("portfolio = \"equal-top-k\" needs top_k")))?,
            },
            Some(other) => {
                return Err(bad(format!(
                    "portfolio must be \"optimize\" or \"equal-top-k\", got {other:?}"
                )))
            }
        };
        let spec = ApplicationSpec {
            name: AppId::new(self.name),
            kind,
            work_seconds: self.work_seconds,
            r: ResourceVector::new(self.cpu, self.mem_gb),
            alpha: self.alpha.unwrap_or(match kind {
                AppKind::Rigid => 0.0,
                _ => 1.0,
            }),
            constraints: MarketConstraints {
                min_mttr_seconds: self.min_mttr_seconds,
                include: self.include.unwrap_or_default(),
                exclude: self.exclude.unwrap_or_default(),
                min_cpu: self.min_cpu,
                min_mem_gb: self.min_mem_gb,
                max_markets: self.max_markets,
            },
            checkpoint_write_seconds: self.checkpoint_write_seconds,
            recovery_policy,
            price_threshold: self.price_threshold,
            task_count: self.task_count.unwrap_or(1),
            portfolio_policy,
        };
        Ok(ScheduledApp { spec, arrival_time: self.arrival_time.unwrap_or(0) })
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let raw: RawScenarioConfig =
            toml::from_str(text).map_err(|e| SimError::InvalidScenario { reason: e.to_string() })?;
        let sharing_mode = match raw.sharing_mode.as_deref() {
            Some("private") | None => SharingMode::Private,
            Some("shared") => SharingMode::Shared,
            Some(other) => {
                return Err(SimError::InvalidScenario {
                    reason: format!("sharing_mode must be \"private\" or \"shared\", got {other:?}"),
                })
            }
        };
        let cov_kind = match raw.cov_kind.as_deref() {
            Some("price") | None => CovarianceKind::Price,
            Some("revocation") => CovarianceKind::Revocation,
            Some("hybrid") => CovarianceKind::Hybrid,
            Some(other) => {
                return Err(SimError::InvalidScenario {
                    reason: format!(
                        "cov_kind must be \"price\", \"revocation\", or \"hybrid\", got {other:?}"
                    ),
                })
            }
        };
        let synthetic = raw
            .synthetic
            .map(|table| {
                let text = toml::to_string(&table).map_err(|e| SimError::InvalidScenario {
                    reason: format!("synthetic section: {e}"),
                })?;
                SyntheticScenarioSpec::from_toml_str(&text).map_err(SimError::from)
            })
            .transpose()?;
        let applications = raw
            .applications
            .into_iter()
            .map(RawApplication::into_scheduled)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ScenarioConfig {
            tick_seconds: raw.tick_seconds.unwrap_or(DEFAULT_TICK_SECONDS),
            warning_seconds: raw.warning_seconds.unwrap_or(DEFAULT_WARNING_SECONDS),
            soft_warning_threshold: raw
                .soft_warning_threshold
                .unwrap_or(DEFAULT_SOFT_WARNING_THRESHOLD),
            sharing_mode,
            cov_kind,
            bid_multiple: raw.bid_multiple.unwrap_or(1.0),
            charge_through_revocation: raw.charge_through_revocation.unwrap_or(true),
            replenish_latency_seconds: raw
                .replenish_latency_seconds
                .unwrap_or(DEFAULT_REPLENISH_LATENCY_SECONDS),
            mttr_refresh_seconds: raw
                .mttr_refresh_seconds
                .unwrap_or(DEFAULT_MTTR_REFRESH_SECONDS),
            free_list_hold_seconds: raw
                .free_list_hold_seconds
                .unwrap_or(DEFAULT_FREE_LIST_HOLD_SECONDS),
            seed: raw.seed.unwrap_or(0),
            record_event_log: raw.record_event_log.unwrap_or(false),
            duration_seconds: raw.duration_seconds,
            synthetic,
            applications,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MarketDataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Assembles the runnable scenario. External `catalog`/`traces` take
    /// precedence; otherwise the embedded `[synthetic]` section generates
    /// them (which requires `duration_seconds`).
    pub fn build_scenario(
        &self,
        catalog: Option<MarketCatalog>,
        traces: Option<BTreeMap<MarketId, PriceSeries>>,
    ) -> Result<Scenario, SimError> {
        let (catalog, traces) = match (catalog, traces) {
            (Some(c), Some(t)) => (c, t),
            (maybe_catalog, None) => {
                let synth = self.synthetic.as_ref().ok_or_else(|| SimError::InvalidScenario {
                    reason: to_owned(
                        "no traces supplied and no [synthetic] section in the scenario",
                    ),
                })?;
                let duration =
                    self.duration_seconds.ok_or_else(|| SimError::InvalidScenario {
                        reason: to_owned("synthetic traces need duration_seconds"),
                    })?;
                let mut synth = synth.clone();
                // The scenario seed drives generation so that sweeps can
                // re-roll traces without editing the synthetic section.
                synth.seed = self.seed;
                let catalog = match maybe_catalog {
                    Some(c) => c,
                    None => synth.default_catalog()?,
                };
                let traces = crate::synth::generate_synthetic(&synth, &catalog, duration)?;
                (catalog, traces)
            }
            (None, Some(_)) => {
                return Err(SimError::InvalidScenario {
                    reason: to_owned("traces supplied without a catalog"),
                })
            }
        };
        let mut scenario = Scenario::new(catalog, traces);
        scenario.bid_policy = BidPolicy::on_demand_multiple(self.bid_multiple)?;
        scenario.tick_seconds = self.tick_seconds;
        scenario.warning_seconds = self.warning_seconds;
        scenario.soft_warning_threshold = self.soft_warning_threshold;
        scenario.cov_kind = self.cov_kind;
        scenario.sharing_mode = self.sharing_mode;
        scenario.charge_through_revocation = self.charge_through_revocation;
        scenario.replenish_latency_seconds = self.replenish_latency_seconds;
        scenario.mttr_refresh_seconds = self.mttr_refresh_seconds;
        scenario.free_list_hold_seconds = self.free_list_hold_seconds;
        scenario.applications = self.applications.clone();
        scenario.seed = self.seed;
        scenario.record_event_log = self.record_event_log;
        scenario.validate()?;
        Ok(scenario)
    }
}
