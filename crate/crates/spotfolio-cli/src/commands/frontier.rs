//! Sweep the efficient frontier: solve the portfolio at each point of an
//! ascending risk-averseness grid and report return, risk, and weights.

use clap::Args;
use serde_json::json;

use spotfolio::portfolio::{default_alpha_grid, frontier};
use spotfolio::risk::{covariance_matrix, returns_vector};

use crate::io::{input, parse_list, write_named, MarketDataArgs, OutputArgs};
use crate::manifest::RunManifest;
use crate::{portfolio_failure, Failure};

#[derive(Debug, Args)]
pub struct FrontierArgs {
    #[command(flatten)]
    pub data: MarketDataArgs,
    /// Ascending risk-averseness values, comma-separated
    /// (default: 0 plus a 25-point log grid from 1e-3 to 1e3)
    #[arg(long, value_name = "LIST")]
    pub alphas: Option<String>,
    #[command(flatten)]
    pub out: OutputArgs,
}

pub fn run(args: FrontierArgs) -> Result<(), Failure> {
    let bid_multiple = args.data.effective_bid_multiple()?;

    let alphas = match &args.alphas {
        None => default_alpha_grid(),
        Some(text) => {
            let list: Vec<f64> = parse_list(text, "--alphas")?;
            if list.is_empty() {
                return Err(Failure::Usage("--alphas must name at least one value".to_string()));
            }
            if list.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                return Err(Failure::Usage(
                    "--alphas values must be finite and non-negative".to_string(),
                ));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Failure::Usage("--alphas must be strictly ascending".to_string()));
            }
            list
        }
    };

    let mut manifest = RunManifest::new("frontier");
    args.data.register_inputs(&mut manifest)?;
    manifest.config = json!({
        "step_seconds": args.data.step,
        "cov_kind": args.data.cov_kind.to_kind().as_str(),
        "bid_multiple": bid_multiple,
        "alphas": alphas,
    });

    let data = args.data.load()?;
    let c = returns_vector(&data.aligned, &data.catalog).map_err(input)?;
    let v = covariance_matrix(&data.aligned, &data.catalog, &data.bids, data.cov_kind)
        .map_err(input)?;
    if v.repaired() {
        eprintln!(
            "warning: {} covariance estimate was not positive semidefinite; \
             negative eigenvalues were clipped to zero",
            v.kind().as_str()
        );
    }

    let points = frontier(&c, &v, &alphas).map_err(portfolio_failure)?;

    if args.out.is_csv() {
        let dir = args.out.csv_dir()?;
        let mut csv = String::from("alpha,expected_return,risk");
        for id in c.markets() {
            csv.push(',');
            csv.push_str(id.as_str());
        }
        csv.push('\n');
        for point in &points {
            csv.push_str(&format!(
                "{},{},{}",
                point.alpha, point.expected_return, point.risk
            ));
            for w in &point.weights {
                csv.push_str(&format!(",{w}"));
            }
            csv.push('\n');
        }
        write_named(&dir, "frontier.csv", &csv)?;
        let path = manifest.write(&dir)?;
        eprintln!("wrote {}", path.display());
        return Ok(());
    }

    let rows: Vec<_> = points
        .iter()
        .map(|p| {
            json!({
                "alpha": p.alpha,
                "expected_return": p.expected_return,
                "risk": p.risk,
                "weights": p.weights,
            })
        })
        .collect();
    let body = json!({
        "markets": c.markets().iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "points": rows,
    });
    args.out.emit_json(&manifest, "frontier", body)
}
