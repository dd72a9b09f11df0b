//! Multi-seed studies: fault-tolerance policy comparison and the effect
//! of portfolio breadth on runtime stretch.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde_json::json;

use spotfolio::sim::{compare_recovery_policies, diversity_series, Scenario, ScenarioConfig, SimError};

use crate::commands::simulate::load_external;
use crate::io::{parse_list, write_named, OutputArgs};
use crate::manifest::RunManifest;
use crate::{sim_failure, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyArg {
    /// Fault-tolerance policy comparison
    Policies,
    /// Runtime stretch vs number of markets held
    Diversity,
    /// Both studies
    Both,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Scenario TOML file
    #[arg(long, value_name = "FILE")]
    pub scenario: PathBuf,
    /// Market catalog CSV; omit to use the scenario's synthetic markets
    #[arg(long, value_name = "FILE")]
    pub catalog: Option<PathBuf>,
    /// Price trace CSV; requires --catalog
    #[arg(long, value_name = "FILE", requires = "catalog")]
    pub traces: Option<PathBuf>,
    /// Seeds to run, comma-separated
    #[arg(long, value_name = "LIST")]
    pub seeds: String,
    /// Market counts for the diversity study, comma-separated
    #[arg(long, value_name = "LIST", default_value = "1,3,5")]
    pub ks: String,
    /// Which study to run
    #[arg(long, value_enum, default_value_t = StudyArg::Both)]
    pub study: StudyArg,
    #[command(flatten)]
    pub out: OutputArgs,
}

pub fn run(args: CompareArgs) -> Result<(), Failure> {
    let seeds: Vec<u64> = parse_list(&args.seeds, "--seeds")?;
    if seeds.is_empty() {
        return Err(Failure::Usage("--seeds must name at least one seed".to_string()));
    }
    let ks: Vec<usize> = parse_list(&args.ks, "--ks")?;
    if ks.is_empty() {
        return Err(Failure::Usage("--ks must name at least one market count".to_string()));
    }

    let mut manifest = RunManifest::new("compare");
    manifest.add_input(&args.scenario)?;
    for path in [&args.catalog, &args.traces].into_iter().flatten() {
        manifest.add_input(path)?;
    }
    manifest.config = json!({
        "seeds": seeds,
        "ks": ks,
        "study": match args.study {
            StudyArg::Policies => "policies",
            StudyArg::Diversity => "diversity",
            StudyArg::Both => "both",
        },
    });

    let config = ScenarioConfig::load(&args.scenario).map_err(sim_failure)?;
    let (catalog, traces) = load_external(args.catalog.as_ref(), args.traces.as_ref())?;
    // With external traces the market history is fixed; seeds then only
    // vary solver tie-breaking. Synthetic scenarios regenerate per seed.
    let make = |seed: u64| -> Result<Scenario, SimError> {
        let mut seeded = config.clone();
        seeded.seed = seed;
        seeded.build_scenario(catalog.clone(), traces.clone())
    };

    let policies = match args.study {
        StudyArg::Policies | StudyArg::Both => {
            Some(compare_recovery_policies(&make, &seeds).map_err(sim_failure)?)
        }
        StudyArg::Diversity => None,
    };
    let diversity = match args.study {
        StudyArg::Diversity | StudyArg::Both => {
            Some(diversity_series(&make, &ks, &seeds).map_err(sim_failure)?)
        }
        StudyArg::Policies => None,
    };

    if args.out.is_csv() {
        let dir = args.out.csv_dir()?;
        if let Some(rows) = &policies {
            let mut csv = String::from(
                "policy,completions,mean_completion_seconds,mean_runtime_increase,mean_savings\n",
            );
            for row in rows {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.label,
                    row.completions,
                    row.mean_completion_seconds,
                    row.mean_runtime_increase,
                    row.mean_savings,
                ));
            }
            write_named(&dir, "policies.csv", &csv)?;
        }
        if let Some(rows) = &diversity {
            // Long format; an empty value marks a run that outlasted the trace.
            let mut csv = String::from("k,seed,runtime_increase_fraction\n");
            for row in rows {
                for (seed, increase) in seeds.iter().zip(&row.increases) {
                    match increase {
                        Some(value) => csv.push_str(&format!("{},{},{value}\n", row.k, seed)),
                        None => csv.push_str(&format!("{},{},\n", row.k, seed)),
                    }
                }
            }
            write_named(&dir, "diversity.csv", &csv)?;
        }
        let path = manifest.write(&dir)?;
        eprintln!("wrote {}", path.display());
        return Ok(());
    }

    let mut body = serde_json::Map::new();
    if let Some(rows) = policies {
        body.insert("policies".to_string(), serde_json::to_value(rows).expect("rows serialize"));
    }
    if let Some(rows) = diversity {
        body.insert("diversity".to_string(), serde_json::to_value(rows).expect("rows serialize"));
    }
    args.out.emit_json(&manifest, "compare", serde_json::Value::Object(body))
}
