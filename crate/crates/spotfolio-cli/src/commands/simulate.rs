//! Replay one scenario through the cluster simulator and report per-app
//! completions, costs, and savings plus cluster-wide billing.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use spotfolio::market::{load_price_traces, MarketCatalog, MarketId, PriceSeries};
use spotfolio::sim::{self, ScenarioConfig};
use spotfolio::synth::{DiscountModel, SyntheticScenarioSpec};

use crate::io::{file_sets_seed, input, write_named, CovKindArg, OutputArgs};
use crate::manifest::RunManifest;
use crate::{sim_failure, Failure};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario TOML file
    #[arg(long, value_name = "FILE")]
    pub scenario: PathBuf,
    /// Market catalog CSV; omit to use the scenario's synthetic markets
    #[arg(long, value_name = "FILE")]
    pub catalog: Option<PathBuf>,
    /// Price trace CSV; requires --catalog
    #[arg(long, value_name = "FILE", requires = "catalog")]
    pub traces: Option<PathBuf>,
    /// Override the scenario seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the scenario's covariance estimator
    #[arg(long, value_enum)]
    pub cov_kind: Option<CovKindArg>,
    /// Override the scenario's bid multiple
    #[arg(long, value_name = "FACTOR")]
    pub bid_multiple: Option<f64>,
    /// Record the step-by-step event and billing log in the report
    #[arg(long)]
    pub record_events: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// True when generating traces from this spec draws random numbers (a
/// mean-reverting walk, or random spikes). A purely fixed-fraction spec
/// with no random spikes is deterministic and needs no seed.
pub fn spec_needs_rng(spec: &SyntheticScenarioSpec) -> bool {
    matches!(spec.discount_model, DiscountModel::MeanRevertingWithSpikes { .. })
        || spec.spike_rate_per_hour > 0.0
}

/// Random trace generation must be explicitly seeded — by flag or by a
/// seed key in the file — never from the wall clock.
pub fn require_explicit_seed(
    config_path: &std::path::Path,
    spec: &SyntheticScenarioSpec,
    seed_flag: Option<u64>,
) -> Result<(), Failure> {
    if spec_needs_rng(spec) && seed_flag.is_none() && !file_sets_seed(config_path)? {
        return Err(Failure::Usage(format!(
            "this run draws random prices; give --seed or set seed in {}",
            config_path.display()
        )));
    }
    Ok(())
}

/// Loads the optional external market data.
pub fn load_external(
    catalog_path: Option<&PathBuf>,
    traces_path: Option<&PathBuf>,
) -> Result<(Option<MarketCatalog>, Option<BTreeMap<MarketId, PriceSeries>>), Failure> {
    let catalog = catalog_path
        .map(|p| MarketCatalog::load_csv(p).map_err(input))
        .transpose()?;
    let traces = match (traces_path, &catalog) {
        (None, _) => None,
        (Some(path), Some(catalog)) => Some(load_price_traces(path, catalog).map_err(input)?),
        (Some(_), None) => {
            return Err(Failure::Usage(
                "--traces requires --catalog to resolve market ids".to_string(),
            ))
        }
    };
    Ok((catalog, traces))
}

pub fn run(args: SimulateArgs) -> Result<(), Failure> {
    let mut manifest = RunManifest::new("simulate");
    manifest.add_input(&args.scenario)?;
    for path in [&args.catalog, &args.traces].into_iter().flatten() {
        manifest.add_input(path)?;
    }

    let mut config = ScenarioConfig::load(&args.scenario).map_err(sim_failure)?;
    if args.traces.is_none() {
        if let Some(spec) = &config.synthetic {
            require_explicit_seed(&args.scenario, spec, args.seed)?;
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(kind) = args.cov_kind {
        config.cov_kind = kind.to_kind();
    }
    if let Some(multiple) = args.bid_multiple {
        config.bid_multiple = multiple;
    }
    if args.record_events {
        config.record_event_log = true;
    }

    manifest.seed = Some(config.seed);
    manifest.config = json!({
        "tick_seconds": config.tick_seconds,
        "warning_seconds": config.warning_seconds,
        "sharing_mode": config.sharing_mode,
        "cov_kind": config.cov_kind.as_str(),
        "bid_multiple": config.bid_multiple,
        "charge_through_revocation": config.charge_through_revocation,
        "replenish_latency_seconds": config.replenish_latency_seconds,
        "record_event_log": config.record_event_log,
        "applications": config
            .applications
            .iter()
            .map(|a| a.spec.name.as_str())
            .collect::<Vec<_>>(),
    });

    let (catalog, traces) = load_external(args.catalog.as_ref(), args.traces.as_ref())?;
    let scenario = config.build_scenario(catalog, traces).map_err(sim_failure)?;
    let report = sim::run(&scenario).map_err(sim_failure)?;

    if args.out.is_csv() {
        let dir = args.out.csv_dir()?;
        write_named(&dir, "apps.csv", &report.apps_csv())?;
        let mut cluster_csv = String::from(
            "total_server_hours,unattributed_cost,revocation_events,black_swan_observed\n",
        );
        cluster_csv.push_str(&format!(
            "{},{},{},{}\n",
            report.cluster.total_server_hours,
            report.cluster.unattributed_cost,
            report.cluster.revocations.len(),
            report.cluster.black_swan_observed,
        ));
        write_named(&dir, "cluster.csv", &cluster_csv)?;
        let path = manifest.write(&dir)?;
        eprintln!("wrote {}", path.display());
        return Ok(());
    }

    let body = serde_json::to_value(&report).expect("report serializes");
    args.out.emit_json(&manifest, "simulation", body)
}
