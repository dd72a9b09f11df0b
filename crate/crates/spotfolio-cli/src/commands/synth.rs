//! Generate a synthetic market catalog and price traces from a scenario
//! spec, in the same CSV formats the other commands load.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use spotfolio::synth::{generate_synthetic, SyntheticScenarioSpec};

use crate::commands::simulate::require_explicit_seed;
use crate::io::{input, write_named};
use crate::manifest::RunManifest;
use crate::Failure;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic market spec TOML
    #[arg(long, value_name = "FILE")]
    pub spec: PathBuf,
    /// Trace length, seconds
    #[arg(long, value_name = "SECONDS")]
    pub duration: u64,
    /// Override the spec seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where to write catalog.csv, traces.csv, and manifest.json
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out_dir: PathBuf,
}

pub fn run(args: SynthArgs) -> Result<(), Failure> {
    let mut manifest = RunManifest::new("synth");
    manifest.add_input(&args.spec)?;

    let mut spec = SyntheticScenarioSpec::load(&args.spec).map_err(input)?;
    require_explicit_seed(&args.spec, &spec, args.seed)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let catalog = spec.default_catalog().map_err(input)?;
    let traces = generate_synthetic(&spec, &catalog, args.duration).map_err(input)?;

    manifest.seed = Some(spec.seed);
    manifest.config = json!({
        "duration_seconds": args.duration,
        "market_count": spec.market_count,
        "step_seconds": spec.step_seconds,
    });

    std::fs::create_dir_all(&args.out_dir).map_err(|e| {
        Failure::Input(anyhow::anyhow!("creating {}: {e}", args.out_dir.display()))
    })?;

    let mut catalog_csv = String::from("market_id,zone,cpu_cores,mem_gb,on_demand_price\n");
    for entry in catalog.iter() {
        catalog_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            entry.market_id, entry.zone, entry.cpu_cores, entry.mem_gb, entry.on_demand_price,
        ));
    }
    write_named(&args.out_dir, "catalog.csv", &catalog_csv)?;

    let mut traces_csv = String::from("timestamp,market_id,price\n");
    for (market, series) in &traces {
        for point in series.points() {
            traces_csv.push_str(&format!("{},{},{}\n", point.timestamp, market, point.price));
        }
    }
    write_named(&args.out_dir, "traces.csv", &traces_csv)?;

    let path = manifest.write(&args.out_dir)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
