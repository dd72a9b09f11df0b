//! Solve one mean-variance portfolio, either from market traces (with
//! optional placement constraints) or from an explicit returns vector and
//! covariance matrix supplied as JSON files.

use std::path::PathBuf;

use clap::Args;
use nalgebra::DMatrix;
use serde::Deserialize;
use serde_json::json;

use spotfolio::market::{MarketId, DEFAULT_STEP_SECONDS};
use spotfolio::portfolio::{
    filter_markets, restrict_to, solve, MarketConstraints, Portfolio, PortfolioProblem,
};
use spotfolio::risk::{
    covariance_matrix, mttr_table, returns_vector, BidPolicy, CovarianceKind, CovarianceMatrix,
    ReturnsVector,
};

use crate::io::{check_hybrid_bid, input, write_named, CovKindArg, OutputArgs};
use crate::manifest::RunManifest;
use crate::{portfolio_failure, Failure};

#[derive(Debug, Args)]
pub struct PortfolioArgs {
    // -- Trace mode --
    /// Market catalog CSV (market_id, zone, cpu_cores, mem_gb, on_demand_price)
    #[arg(long, value_name = "FILE", requires = "traces")]
    pub catalog: Option<PathBuf>,
    /// Price trace CSV (timestamp, market_id, price)
    #[arg(long, value_name = "FILE", requires = "catalog")]
    pub traces: Option<PathBuf>,
    /// Uniform grid step for resampling the traces, seconds
    #[arg(long, value_name = "SECONDS", default_value_t = DEFAULT_STEP_SECONDS)]
    pub step: u64,
    /// Covariance estimator
    #[arg(long, value_enum, default_value_t = CovKindArg::Price)]
    pub cov_kind: CovKindArg,
    /// Bid price as a multiple of the on-demand price [default: 1.0;
    /// required with --cov-kind hybrid, whose penalty depends on the bid]
    #[arg(long, value_name = "FACTOR")]
    pub bid_multiple: Option<f64>,

    // -- Matrix mode --
    /// Returns vector JSON ({"markets": [...], "values": [...]})
    #[arg(long, value_name = "FILE", requires = "matrix", conflicts_with_all = ["catalog", "traces"])]
    pub returns: Option<PathBuf>,
    /// Covariance matrix JSON ({"markets": [...], "entries": [[...], ...]})
    #[arg(long, value_name = "FILE", requires = "returns")]
    pub matrix: Option<PathBuf>,

    // -- Problem --
    /// Risk-averseness: weight on portfolio variance in the objective
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,

    // -- Candidate constraints (trace mode only) --
    /// Drop markets whose mean time to revocation is below this
    #[arg(long, value_name = "SECONDS")]
    pub min_mttr_seconds: Option<f64>,
    /// Keep only markets matching one of these patterns (* wildcards)
    #[arg(long, value_name = "PATTERN")]
    pub include: Vec<String>,
    /// Drop markets matching one of these patterns (* wildcards)
    #[arg(long, value_name = "PATTERN")]
    pub exclude: Vec<String>,
    /// Minimum CPU cores per server
    #[arg(long, value_name = "CORES")]
    pub min_cpu: Option<u32>,
    /// Minimum memory per server, GB
    #[arg(long, value_name = "GB")]
    pub min_mem_gb: Option<f64>,
    /// Keep at most this many markets (the most stable ones)
    #[arg(long, value_name = "N")]
    pub max_markets: Option<usize>,

    #[command(flatten)]
    pub out: OutputArgs,
}

impl PortfolioArgs {
    fn constraints(&self) -> MarketConstraints {
        MarketConstraints {
            min_mttr_seconds: self.min_mttr_seconds,
            include: self.include.clone(),
            exclude: self.exclude.clone(),
            min_cpu: self.min_cpu,
            min_mem_gb: self.min_mem_gb,
            max_markets: self.max_markets,
        }
    }

    fn has_constraints(&self) -> bool {
        self.min_mttr_seconds.is_some()
            || !self.include.is_empty()
            || !self.exclude.is_empty()
            || self.min_cpu.is_some()
            || self.min_mem_gb.is_some()
            || self.max_markets.is_some()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReturnsFile {
    markets: Vec<String>,
    values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixFile {
    markets: Vec<String>,
    #[serde(default)]
    kind: Option<String>,
    entries: Vec<Vec<f64>>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(anyhow::anyhow!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Input(anyhow::anyhow!("parsing {}: {e}", path.display())))
}

fn market_ids(raw: Vec<String>) -> Result<Vec<MarketId>, Failure> {
    raw.into_iter().map(|m| MarketId::new(m).map_err(input)).collect()
}

/// Loads the returns/matrix file pair into solver inputs.
fn load_matrix_mode(
    returns_path: &PathBuf,
    matrix_path: &PathBuf,
) -> Result<(ReturnsVector, CovarianceMatrix), Failure> {
    let returns: ReturnsFile = read_json(returns_path)?;
    let matrix: MatrixFile = read_json(matrix_path)?;

    let c = ReturnsVector::new(market_ids(returns.markets)?, returns.values).map_err(input)?;

    let n = matrix.markets.len();
    if matrix.entries.len() != n || matrix.entries.iter().any(|row| row.len() != n) {
        return Err(Failure::Input(anyhow::anyhow!(
            "{}: entries must be a {n}x{n} matrix matching the markets list",
            matrix_path.display()
        )));
    }
    let kind = match matrix.kind.as_deref() {
        None | Some("synthetic") => CovarianceKind::Synthetic,
        Some("price") => CovarianceKind::Price,
        Some("revocation") => CovarianceKind::Revocation,
        Some("hybrid") => CovarianceKind::Hybrid,
        Some(other) => {
            return Err(Failure::Input(anyhow::anyhow!(
                "{}: unknown covariance kind {other:?}",
                matrix_path.display()
            )))
        }
    };
    let entries = DMatrix::from_fn(n, n, |r, col| matrix.entries[r][col]);
    let v = CovarianceMatrix::new(market_ids(matrix.markets)?, kind, entries).map_err(input)?;
    if v.repaired() {
        eprintln!(
            "warning: {} is not positive semidefinite; negative eigenvalues \
             were clipped to zero",
            matrix_path.display()
        );
    }
    Ok((c, v))
}

pub fn run(args: PortfolioArgs) -> Result<(), Failure> {
    let trace_mode = args.catalog.is_some();
    let matrix_mode = args.returns.is_some();
    if trace_mode == matrix_mode {
        return Err(Failure::Usage(
            "supply either --catalog/--traces or --returns/--matrix".to_string(),
        ));
    }
    if matrix_mode && args.has_constraints() {
        return Err(Failure::Usage(
            "market constraints need trace data; they cannot be applied in \
             --returns/--matrix mode"
                .to_string(),
        ));
    }

    let mut manifest = RunManifest::new("portfolio");
    let (c, v, candidates) = if trace_mode {
        let catalog_path = args.catalog.as_ref().expect("checked: trace mode");
        let traces_path = args.traces.as_ref().expect("clap: --catalog requires --traces");
        manifest.add_input(catalog_path)?;
        manifest.add_input(traces_path)?;

        let kind = args.cov_kind.to_kind();
        let bid_multiple = check_hybrid_bid(kind, args.bid_multiple)?;
        let catalog = spotfolio::market::MarketCatalog::load_csv(catalog_path).map_err(input)?;
        let traces = spotfolio::market::load_price_traces(traces_path, &catalog).map_err(input)?;
        let aligned = spotfolio::market::align(&traces, args.step).map_err(input)?;
        let bids = BidPolicy::on_demand_multiple(bid_multiple).map_err(input)?;

        let c = returns_vector(&aligned, &catalog).map_err(input)?;
        let v = covariance_matrix(&aligned, &catalog, &bids, kind).map_err(input)?;
        if v.repaired() {
            eprintln!(
                "warning: {} covariance estimate was not positive semidefinite; \
                 negative eigenvalues were clipped to zero",
                kind.as_str()
            );
        }
        let mttr = mttr_table(&aligned, &catalog, &bids).map_err(input)?;
        let candidates =
            filter_markets(&catalog, &mttr, &args.constraints()).map_err(portfolio_failure)?;
        let (c, v) = restrict_to(&c, &v, &candidates).map_err(portfolio_failure)?;
        (c, v, candidates)
    } else {
        let returns_path = args.returns.as_ref().expect("checked: matrix mode");
        let matrix_path = args.matrix.as_ref().expect("clap: --returns requires --matrix");
        manifest.add_input(returns_path)?;
        manifest.add_input(matrix_path)?;
        let (c, v) = load_matrix_mode(returns_path, matrix_path)?;
        let candidates = c.markets().to_vec();
        (c, v, candidates)
    };

    manifest.config = json!({
        "alpha": args.alpha,
        "cov_kind": v.kind().as_str(),
        "candidate_markets": candidates.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
    });

    let problem = PortfolioProblem::new(&c, &v, args.alpha).map_err(portfolio_failure)?;
    let portfolio = solve(&problem).map_err(portfolio_failure)?;

    emit(&args.out, &manifest, &portfolio)
}

fn emit(
    out: &OutputArgs,
    manifest: &RunManifest,
    portfolio: &Portfolio,
) -> Result<(), Failure> {
    let truncated = portfolio.truncated_weights();
    if out.is_csv() {
        let dir = out.csv_dir()?;
        let mut csv = String::from("market,weight,truncated_weight\n");
        for (i, id) in portfolio.markets().iter().enumerate() {
            csv.push_str(&format!("{},{},{}\n", id, portfolio.weights()[i], truncated[i]));
        }
        write_named(&dir, "weights.csv", &csv)?;
        let path = manifest.write(&dir)?;
        eprintln!("wrote {}", path.display());
        return Ok(());
    }

    let weights: Vec<_> = portfolio
        .markets()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            json!({
                "market": id.as_str(),
                "weight": portfolio.weights()[i],
                "truncated_weight": truncated[i],
            })
        })
        .collect();
    let body = json!({
        "alpha": portfolio.alpha(),
        "expected_return": portfolio.expected_return(),
        "risk": portfolio.risk(),
        "objective": portfolio.objective(),
        "weights": weights,
    });
    out.emit_json(manifest, "portfolio", body)
}
