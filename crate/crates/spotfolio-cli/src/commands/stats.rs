//! Per-market statistics: expected returns, bids, stability estimates,
//! and the covariance matrix under the chosen estimator.

use clap::Args;
use serde_json::json;

use spotfolio::risk::{covariance_matrix, mttr_table, returns_vector};

use crate::io::{input, write_named, MarketDataArgs, OutputArgs};
use crate::manifest::RunManifest;
use crate::Failure;

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub data: MarketDataArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

pub fn run(args: StatsArgs) -> Result<(), Failure> {
    let bid_multiple = args.data.effective_bid_multiple()?;

    let mut manifest = RunManifest::new("stats");
    args.data.register_inputs(&mut manifest)?;
    manifest.config = json!({
        "step_seconds": args.data.step,
        "cov_kind": args.data.cov_kind.to_kind().as_str(),
        "bid_multiple": bid_multiple,
    });

    let data = args.data.load()?;
    let returns = returns_vector(&data.aligned, &data.catalog).map_err(input)?;
    let mttr = mttr_table(&data.aligned, &data.catalog, &data.bids).map_err(input)?;
    let cov = covariance_matrix(&data.aligned, &data.catalog, &data.bids, data.cov_kind)
        .map_err(input)?;
    if cov.repaired() {
        eprintln!(
            "warning: {} covariance estimate was not positive semidefinite; \
             negative eigenvalues were clipped to zero",
            cov.kind().as_str()
        );
    }

    let n = cov.dim();
    let entries: Vec<Vec<f64>> = (0..n)
        .map(|r| (0..n).map(|c| cov.entries()[(r, c)]).collect())
        .collect();

    if args.out.is_csv() {
        let dir = args.out.csv_dir()?;

        let mut returns_csv =
            String::from("market,zone,cpu_cores,mem_gb,on_demand_price,bid,expected_return\n");
        for (i, id) in data.aligned.markets().iter().enumerate() {
            let entry = data.catalog.get(id).expect("aligned markets are cataloged");
            returns_csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                id,
                entry.zone,
                entry.cpu_cores,
                entry.mem_gb,
                entry.on_demand_price,
                data.bids.bid_for(entry),
                returns.values()[i],
            ));
        }
        write_named(&dir, "returns.csv", &returns_csv)?;

        let mut mttr_csv = String::from("market,mttr_seconds,revocation_count,censored\n");
        for estimate in &mttr {
            mttr_csv.push_str(&format!(
                "{},{},{},{}\n",
                estimate.market, estimate.mttr_seconds, estimate.revocation_count, estimate.censored,
            ));
        }
        write_named(&dir, "mttr.csv", &mttr_csv)?;

        let mut cov_csv = String::from("market");
        for id in cov.markets() {
            cov_csv.push(',');
            cov_csv.push_str(id.as_str());
        }
        cov_csv.push('\n');
        for (r, id) in cov.markets().iter().enumerate() {
            cov_csv.push_str(id.as_str());
            for value in &entries[r] {
                cov_csv.push_str(&format!(",{value}"));
            }
            cov_csv.push('\n');
        }
        write_named(&dir, "covariance.csv", &cov_csv)?;

        let path = manifest.write(&dir)?;
        eprintln!("wrote {}", path.display());
        return Ok(());
    }

    // JSON mirror: one merged row per traced market, in id order.
    let mut rows = Vec::new();
    for (i, id) in data.aligned.markets().iter().enumerate() {
        let entry = data.catalog.get(id).expect("aligned markets are cataloged");
        let estimate = &mttr[i];
        rows.push(json!({
            "market": id.as_str(),
            "zone": entry.zone,
            "cpu_cores": entry.cpu_cores,
            "mem_gb": entry.mem_gb,
            "on_demand_price": entry.on_demand_price,
            "bid": data.bids.bid_for(entry),
            "expected_return": returns.values()[i],
            "mttr_seconds": estimate.mttr_seconds,
            "revocation_count": estimate.revocation_count,
            "censored": estimate.censored,
        }));
    }
    let body = json!({
        "markets": rows,
        "covariance": {
            "kind": cov.kind().as_str(),
            "repaired": cov.repaired(),
            "markets": cov.markets().iter().map(|m| m.as_str()).collect::<Vec<_>>(),
            "entries": entries,
        },
    });
    args.out.emit_json(&manifest, "stats", body)
}
