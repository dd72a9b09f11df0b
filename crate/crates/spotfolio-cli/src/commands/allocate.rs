//! Turn portfolio weights into concrete server counts and container
//! placements, either dedicated per workload or packed into shared
//! surplus capacity.

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use nalgebra::DMatrix;
use serde_json::json;

use spotfolio::alloc::{AllocationPlan, AllocatorConfig, AppId, ClusterState, ResourceVector};
use spotfolio::market::MarketCatalog;
use spotfolio::portfolio::{Portfolio, PortfolioProblem};
use spotfolio::risk::{CovarianceKind, CovarianceMatrix, ReturnsVector};

use crate::io::{input, parse_weights, write_named, OutputArgs};
use crate::manifest::RunManifest;
use crate::{portfolio_failure, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Dedicated servers per workload
    Private,
    /// Pack workloads into surplus capacity first
    Shared,
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    /// Market catalog CSV (market_id, zone, cpu_cores, mem_gb, on_demand_price)
    #[arg(long, value_name = "FILE")]
    pub catalog: PathBuf,
    /// Market weights, e.g. "m0=0.6,m1=0.4"; must sum to 1
    #[arg(long, value_name = "LIST")]
    pub weights: String,
    /// Sharing mode
    #[arg(long, value_enum, default_value_t = ModeArg::Private)]
    pub mode: ModeArg,
    /// CPU demand of a single workload, cores
    #[arg(long, value_name = "CORES", requires = "mem")]
    pub cpu: Option<f64>,
    /// Memory demand of a single workload, GB
    #[arg(long, value_name = "GB", requires = "cpu")]
    pub mem: Option<f64>,
    /// Named workload "name=cpu:mem"; repeatable, placed in order
    #[arg(long = "workload", value_name = "SPEC", conflicts_with_all = ["cpu", "mem"])]
    pub workloads: Vec<String>,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// Parses `"name=cpu:mem"`.
fn parse_workload(text: &str) -> Result<(AppId, ResourceVector), Failure> {
    let usage = || {
        Failure::Usage(format!(
            "--workload entries are name=cpu:mem (e.g. web=8:24), got {text:?}"
        ))
    };
    let (name, demand) = text.split_once('=').ok_or_else(usage)?;
    let (cpu, mem) = demand.split_once(':').ok_or_else(usage)?;
    let cpu: f64 = cpu.trim().parse().map_err(|_| usage())?;
    let mem: f64 = mem.trim().parse().map_err(|_| usage())?;
    let name = name.trim();
    if name.is_empty() {
        return Err(usage());
    }
    Ok((AppId::new(name), ResourceVector::new(cpu, mem)))
}

/// Wraps explicit weights in a [`Portfolio`] (zero returns and risk: only
/// the weights matter for placement). Validates the simplex constraint.
fn portfolio_from_weights(pairs: &[(spotfolio::market::MarketId, f64)]) -> Result<Portfolio, Failure> {
    let markets: Vec<_> = pairs.iter().map(|(m, _)| m.clone()).collect();
    let weights: Vec<f64> = pairs.iter().map(|(_, w)| *w).collect();
    let n = markets.len();
    let c = ReturnsVector::new(markets.clone(), vec![0.0; n]).map_err(input)?;
    let v = CovarianceMatrix::trusted(markets, CovarianceKind::Synthetic, DMatrix::zeros(n, n))
        .map_err(input)?;
    let problem = PortfolioProblem::new(&c, &v, 0.0).map_err(portfolio_failure)?;
    Portfolio::from_problem(&problem, weights).map_err(portfolio_failure)
}

pub fn run(args: AllocateArgs) -> Result<(), Failure> {
    let single = args.cpu.is_some();
    if single == !args.workloads.is_empty() {
        return Err(Failure::Usage(
            "supply either --cpu/--mem or one or more --workload specs".to_string(),
        ));
    }
    let workloads: Vec<(AppId, ResourceVector)> = if single {
        let cpu = args.cpu.expect("checked: single mode");
        let mem = args.mem.expect("clap: --cpu requires --mem");
        vec![(AppId::new("app"), ResourceVector::new(cpu, mem))]
    } else {
        args.workloads
            .iter()
            .map(|w| parse_workload(w))
            .collect::<Result<_, _>>()?
    };
    {
        let mut seen = BTreeSet::new();
        for (app, _) in &workloads {
            if !seen.insert(app.clone()) {
                return Err(Failure::Usage(format!("duplicate workload name {app}")));
            }
        }
    }

    let mut pairs = parse_weights(&args.weights)?;
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Failure::Usage("--weights names a market twice".to_string()));
    }

    let mut manifest = RunManifest::new("allocate");
    manifest.add_input(&args.catalog)?;
    let catalog = MarketCatalog::load_csv(&args.catalog).map_err(input)?;
    for (market, _) in &pairs {
        if !catalog.contains(market) {
            return Err(Failure::Input(anyhow::anyhow!(
                "market {market} is not in the catalog"
            )));
        }
    }
    let portfolio = portfolio_from_weights(&pairs)?;

    manifest.config = json!({
        "mode": match args.mode { ModeArg::Private => "private", ModeArg::Shared => "shared" },
        "weights": pairs
            .iter()
            .map(|(m, w)| json!({"market": m.as_str(), "weight": w}))
            .collect::<Vec<_>>(),
        "workloads": workloads
            .iter()
            .map(|(a, r)| json!({"app": a.as_str(), "cpu": r.cpu, "mem_gb": r.mem_gb}))
            .collect::<Vec<_>>(),
    });

    let mut cluster = ClusterState::new(catalog, AllocatorConfig::default());
    let mut plans: Vec<AllocationPlan> = Vec::new();
    for (app, r) in &workloads {
        let plan = match args.mode {
            ModeArg::Private => cluster.allocate_private(app, r, &portfolio),
            ModeArg::Shared => cluster.allocate_shared(app, r, &portfolio),
        }
        .map_err(input)?;
        plans.push(plan);
    }

    emit(&args.out, &manifest, &plans, &cluster)
}

fn emit(
    out: &OutputArgs,
    manifest: &RunManifest,
    plans: &[AllocationPlan],
    cluster: &ClusterState,
) -> Result<(), Failure> {
    let servers: Vec<_> = cluster
        .servers()
        .map(|server| {
            let surplus = server.free_capacity();
            let owners: Vec<_> = server
                .owner_apps
                .iter()
                .map(|(app, share)| {
                    json!({
                        "app": app.as_str(),
                        "cpu": share.cpu,
                        "mem_gb": share.mem_gb,
                        "cost_share": server.cost_share(app),
                    })
                })
                .collect();
            json!({
                "server": server.id.to_string(),
                "market": server.market.as_str(),
                "capacity": {"cpu": server.capacity.cpu, "mem_gb": server.capacity.mem_gb},
                "allocated": {"cpu": server.allocated.cpu, "mem_gb": server.allocated.mem_gb},
                "surplus": {"cpu": surplus.cpu, "mem_gb": surplus.mem_gb},
                "owners": owners,
            })
        })
        .collect();

    if out.is_csv() {
        let dir = out.csv_dir()?;
        let mut servers_csv = String::from(
            "server,market,capacity_cpu,capacity_mem_gb,allocated_cpu,\
             allocated_mem_gb,surplus_cpu,surplus_mem_gb\n",
        );
        let mut owners_csv = String::from("server,app,cpu,mem_gb,cost_share\n");
        for server in cluster.servers() {
            let surplus = server.free_capacity();
            servers_csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                server.id,
                server.market,
                server.capacity.cpu,
                server.capacity.mem_gb,
                server.allocated.cpu,
                server.allocated.mem_gb,
                surplus.cpu,
                surplus.mem_gb,
            ));
            for (app, share) in &server.owner_apps {
                owners_csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    server.id,
                    app,
                    share.cpu,
                    share.mem_gb,
                    server.cost_share(app),
                ));
            }
        }
        write_named(&dir, "servers.csv", &servers_csv)?;
        write_named(&dir, "owners.csv", &owners_csv)?;
        let path = manifest.write(&dir)?;
        eprintln!("wrote {}", path.display());
        return Ok(());
    }

    let body = json!({
        "plans": plans,
        "servers": servers,
    });
    out.emit_json(manifest, "allocation", body)
}
