//! Shared flag groups, input loading, and output writing.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use spotfolio::market::{
    align, load_price_traces, MarketCatalog, MarketId, UniformSeriesSet, DEFAULT_STEP_SECONDS,
};
use spotfolio::risk::{BidPolicy, CovarianceKind};

use crate::Failure;

// ---- Shared flag groups ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CovKindArg {
    /// Covariance of normalized prices
    Price,
    /// Fuzzy-overlap covariance of revocation events
    Revocation,
    /// Price covariance with revocations amplified to a price ceiling
    Hybrid,
}

impl CovKindArg {
    pub fn to_kind(self) -> CovarianceKind {
        match self {
            CovKindArg::Price => CovarianceKind::Price,
            CovKindArg::Revocation => CovarianceKind::Revocation,
            CovKindArg::Hybrid => CovarianceKind::Hybrid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

/// Flags shared by every command that estimates from market data.
#[derive(Debug, Args)]
pub struct MarketDataArgs {
    /// Market catalog CSV (market_id, zone, cpu_cores, mem_gb, on_demand_price)
    #[arg(long, value_name = "FILE")]
    pub catalog: PathBuf,
    /// Price trace CSV (timestamp, market_id, price)
    #[arg(long, value_name = "FILE")]
    pub traces: PathBuf,
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
}

/// Loaded and aligned market data.
pub struct MarketData {
    pub catalog: MarketCatalog,
    pub aligned: UniformSeriesSet,
    pub bids: BidPolicy,
    pub cov_kind: CovarianceKind,
}

impl MarketDataArgs {
    /// The resolved bid multiple; hybrid covariance amplifies prices the
    /// bid would have triggered on, so it demands an explicit bid.
    pub fn effective_bid_multiple(&self) -> Result<f64, Failure> {
        check_hybrid_bid(self.cov_kind.to_kind(), self.bid_multiple)
    }

    pub fn load(&self) -> Result<MarketData, Failure> {
        let multiple = self.effective_bid_multiple()?;
        let catalog = MarketCatalog::load_csv(&self.catalog).map_err(input)?;
        let traces = load_price_traces(&self.traces, &catalog).map_err(input)?;
        let aligned = align(&traces, self.step).map_err(input)?;
        let bids = BidPolicy::on_demand_multiple(multiple).map_err(input)?;
        Ok(MarketData {
            catalog,
            aligned,
            bids,
            cov_kind: self.cov_kind.to_kind(),
        })
    }

    pub fn register_inputs(&self, manifest: &mut crate::manifest::RunManifest) -> Result<(), Failure> {
        manifest.add_input(&self.catalog)?;
        manifest.add_input(&self.traces)
    }
}

/// Output destination flags shared by every command.
#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Directory for output files [default: the working directory;
    /// with --format json, omitting this prints to stdout instead]
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Output format: CSV tables, or a single JSON mirror
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

impl OutputArgs {
    pub fn is_csv(&self) -> bool {
        self.format == FormatArg::Csv
    }

    /// Emits the JSON document: `body` plus the manifest under a
    /// `"manifest"` key, to stdout or `<out_dir>/<stem>.json`.
    pub fn emit_json(
        &self,
        manifest: &crate::manifest::RunManifest,
        stem: &str,
        body: serde_json::Value,
    ) -> Result<(), Failure> {
        let mut object = match body {
            serde_json::Value::Object(map) => map,
            other => {
                let mut map = serde_json::Map::new();
                map.insert("data".to_string(), other);
                map
            }
        };
        object.insert("manifest".to_string(), manifest.to_value());
        let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(object))
            .expect("output serializes");
        text.push('\n');
        match &self.out_dir {
            None => {
                print!("{text}");
                Ok(())
            }
            Some(dir) => {
                let path = dir.join(format!("{stem}.json"));
                write_file(&path, &text)?;
                eprintln!("wrote {}", path.display());
                Ok(())
            }
        }
    }

    /// The output directory for CSV mode, created if missing; defaults to
    /// the working directory.
    pub fn csv_dir(&self) -> Result<PathBuf, Failure> {
        let dir = self
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir)
            .map_err(|e| Failure::Input(anyhow::anyhow!("creating {}: {e}", dir.display())))?;
        Ok(dir)
    }
}

/// Enforces the explicit-bid rule for hybrid covariance and resolves the
/// default elsewhere.
pub fn check_hybrid_bid(kind: CovarianceKind, bid_multiple: Option<f64>) -> Result<f64, Failure> {
    match (kind, bid_multiple) {
        (CovarianceKind::Hybrid, None) => Err(Failure::Usage(
            "--cov-kind hybrid scores prices against the bid; say which bid \
             with --bid-multiple"
                .to_string(),
        )),
        (_, multiple) => Ok(multiple.unwrap_or(1.0)),
    }
}

/// True when the TOML file explicitly sets a seed, either at the top
/// level or inside a [synthetic] table. Commands that draw random prices
/// refuse to invent one.
pub fn file_sets_seed(path: &Path) -> Result<bool, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(anyhow::anyhow!("reading {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Failure::Input(anyhow::anyhow!("parsing {}: {e}", path.display())))?;
    Ok(table.contains_key("seed")
        || table
            .get("synthetic")
            .and_then(|v| v.as_table())
            .is_some_and(|t| t.contains_key("seed")))
}

// ---- Helpers ----

pub fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| {
                Failure::Input(anyhow::anyhow!("creating {}: {e}", parent.display()))
            })?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|e| Failure::Input(anyhow::anyhow!("writing {}: {e}", path.display())))
}

pub fn write_named(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    write_file(&path, contents)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// Parses `"m0=0.5,m1=0.5"` into ordered (market, weight) pairs.
pub fn parse_weights(text: &str) -> Result<Vec<(MarketId, f64)>, Failure> {
    let mut weights = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (market, value) = part.split_once('=').ok_or_else(|| {
            Failure::Usage(format!("--weights entries are market=weight, got {part:?}"))
        })?;
        let weight: f64 = value.trim().parse().map_err(|_| {
            Failure::Usage(format!("--weights: {value:?} is not a number"))
        })?;
        let market = MarketId::new(market.trim()).map_err(input)?;
        weights.push((market, weight));
    }
    if weights.is_empty() {
        return Err(Failure::Usage("--weights must name at least one market".to_string()));
    }
    Ok(weights)
}

/// Parses a comma-separated list of numbers.
pub fn parse_list<T: std::str::FromStr>(text: &str, flag: &str) -> Result<Vec<T>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Failure::Usage(format!("{flag}: {s:?} is not a valid value")))
        })
        .collect()
}

