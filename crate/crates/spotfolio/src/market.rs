//! Market catalog and price-trace handling.
//!
//! A *market* is one purchasable transient-server type in one availability
//! zone, with its own price history. This module loads the market catalog and
//! raw price traces from CSV, normalizes traces onto uniform time grids
//! (carry-forward resampling), and intersects trace spans so that downstream
//! statistics never see imputed data.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default uniform grid step: one 5-minute pricing window per tick.
pub const DEFAULT_STEP_SECONDS: u64 = 300;

// ---- Errors ----

/// Errors from catalog/trace ingestion and resampling.
#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("{path}:{line}: column {column} must be positive")]
    NonPositiveValue {
        path: PathBuf,
        line: u64,
        column: &'static str,
    },
    #[error("duplicate market id {0}")]
    DuplicateMarket(MarketId),
    #[error("unknown market id {0}")]
    UnknownMarket(MarketId),
    #[error("market {0} has no price samples")]
    EmptyTrace(MarketId),
    #[error("no price observation at or before grid start {grid_start}")]
    NoPriorObservation { grid_start: u64 },
    #[error("price traces share no common time window")]
    NoCommonWindow,
    #[error("market id must be a non-empty string")]
    EmptyMarketId,
    #[error("invalid synthetic scenario: {reason}")]
    InvalidScenario { reason: String },
    #[error("catalog entry {0} has a non-positive resource or price")]
    InvalidCatalogEntry(MarketId),
    #[error("price series must contain at least one sample")]
    EmptySeries,
    #[error("invalid time grid: step and count must be positive")]
    InvalidGrid,
}

// ---- Identifiers and catalog ----

/// Opaque identifier of one (server type, zone) market.
///
/// Ordering everywhere in this crate is the lexicographic order of the id
/// string, which makes every market iteration deterministic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarketId(String);

impl MarketId {
    /// Creates an id; the string must be non-empty.
    pub fn new(id: impl Into<String>) -> Result<Self, MarketDataError> {
        let id = id.into();
        if id.is_empty() {
            return Err(MarketDataError::EmptyMarketId);
        }
        Ok(MarketId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MarketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One catalog row: the server shape and on-demand price of a market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketCatalogEntry {
    pub market_id: MarketId,
    pub zone: String,
    /// CPU cores per server; > 0.
    pub cpu_cores: u32,
    /// Memory per server in GB; > 0.
    pub mem_gb: f64,
    /// Hourly price of the equivalent non-revocable server; > 0.
    pub on_demand_price: f64,
}

/// The set of known markets, ordered by [`MarketId`].
#[derive(Debug, Clone, PartialEq)]
pub struct MarketCatalog {
    entries: Vec<MarketCatalogEntry>,
}

impl MarketCatalog {
    /// Builds a catalog, sorting entries by market id and rejecting
    /// duplicates and non-positive resource/price values.
    pub fn new(mut entries: Vec<MarketCatalogEntry>) -> Result<Self, MarketDataError> {
        entries.sort_by(|a, b| a.market_id.cmp(&b.market_id));
        for pair in entries.windows(2) {
            if pair[0].market_id == pair[1].market_id {
                return Err(MarketDataError::DuplicateMarket(pair[0].market_id.clone()));
            }
        }
        for e in &entries {
            if e.cpu_cores == 0
                || !e.mem_gb.is_finite()
                || e.mem_gb <= 0.0
                || !e.on_demand_price.is_finite()
                || e.on_demand_price <= 0.0
            {
                return Err(MarketDataError::InvalidCatalogEntry(e.market_id.clone()));
            }
        }
        Ok(MarketCatalog { entries })
    }

    /// Loads a catalog from CSV with header
    /// `market_id,zone,cpu_cores,mem_gb,on_demand_price`.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, MarketDataError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| MarketDataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_reader(file, path)
    }

    /// Parses catalog CSV from any reader; `path` is used in diagnostics.
    pub fn from_reader(reader: impl Read, path: &Path) -> Result<Self, MarketDataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        expect_header(
            &mut rdr,
            path,
            &["market_id", "zone", "cpu_cores", "mem_gb", "on_demand_price"],
        )?;
        let mut entries = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| csv_row_error(path, &e))?;
            let line = record
                .position()
                .map(|p| p.line())
                .unwrap_or_default();
            let malformed = |reason: String| MarketDataError::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason,
            };
            if record.len() != 5 {
                return Err(malformed(format!("expected 5 columns, got {}", record.len())));
            }
            let market_id = MarketId::new(&record[0])
                .map_err(|_| malformed("empty market_id".to_string()))?;
            let cpu_cores: u32 = record[2]
                .parse()
                .map_err(|_| malformed(format!("bad cpu_cores {:?}", &record[2])))?;
            let mem_gb: f64 = record[3]
                .parse()
                .map_err(|_| malformed(format!("bad mem_gb {:?}", &record[3])))?;
            let on_demand_price: f64 = record[4]
                .parse()
                .map_err(|_| malformed(format!("bad on_demand_price {:?}", &record[4])))?;
            for (value, column) in [
                (cpu_cores as f64, "cpu_cores"),
                (mem_gb, "mem_gb"),
                (on_demand_price, "on_demand_price"),
            ] {
                if !value.is_finite() || value <= 0.0 {
                    return Err(MarketDataError::NonPositiveValue {
                        path: path.to_path_buf(),
                        line,
                        column,
                    });
                }
            }
            entries.push(MarketCatalogEntry {
                market_id,
                zone: record[1].to_string(),
                cpu_cores,
                mem_gb,
                on_demand_price,
            });
        }
        // Duplicate detection must report against the file, so check before
        // the generic constructor re-sorts.
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.market_id.clone()) {
                return Err(MarketDataError::DuplicateMarket(e.market_id.clone()));
            }
        }
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in market-id order.
    pub fn iter(&self) -> impl Iterator<Item = &MarketCatalogEntry> {
        self.entries.iter()
    }

    pub fn get(&self, id: &MarketId) -> Option<&MarketCatalogEntry> {
        self.entries
            .binary_search_by(|e| e.market_id.cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn contains(&self, id: &MarketId) -> bool {
        self.get(id).is_some()
    }

    pub fn ids(&self) -> impl Iterator<Item = &MarketId> {
        self.entries.iter().map(|e| &e.market_id)
    }
}

// ---- Price series ----

/// One raw price observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    /// Epoch seconds UTC. Sub-second timestamps are truncated at parse time.
    pub timestamp: u64,
    pub price: f64,
}

/// An event-style price history: one point per price change, timestamps
/// strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    points: Vec<PricePoint>,
}

impl PriceSeries {
    /// Normalizes raw points: sorts by timestamp and collapses duplicate
    /// timestamps to the last occurrence. The series must be non-empty and
    /// all prices positive and finite.
    pub fn new(mut points: Vec<PricePoint>) -> Result<Self, MarketDataError> {
        if points.is_empty() {
            return Err(MarketDataError::EmptySeries);
        }
        if points.iter().any(|p| !p.price.is_finite() || p.price <= 0.0) {
            return Err(MarketDataError::EmptySeries);
        }
        points.sort_by_key(|p| p.timestamp);
        let mut collapsed: Vec<PricePoint> = Vec::with_capacity(points.len());
        for p in points {
            match collapsed.last_mut() {
                Some(last) if last.timestamp == p.timestamp => *last = p,
                _ => collapsed.push(p),
            }
        }
        Ok(PriceSeries { points: collapsed })
    }

    /// Builds a uniform series: one point per tick starting at `start`.
    pub fn from_uniform(
        start: u64,
        step: u64,
        prices: &[f64],
    ) -> Result<Self, MarketDataError> {
        if step == 0 {
            return Err(MarketDataError::InvalidGrid);
        }
        let points = prices
            .iter()
            .enumerate()
            .map(|(i, &p)| PricePoint {
                timestamp: start + i as u64 * step,
                price: p,
            })
            .collect();
        Self::new(points)
    }

    pub fn points(&self) -> &[PricePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the constructor rejects empty series
    }

    pub fn first_timestamp(&self) -> u64 {
        self.points[0].timestamp
    }

    pub fn last_timestamp(&self) -> u64 {
        self.points[self.points.len() - 1].timestamp
    }

    /// Carry-forward value at `t`: the price of the latest observation at or
    /// before `t`, or `None` when `t` precedes the first observation.
    pub fn value_at(&self, t: u64) -> Option<f64> {
        match self.points.partition_point(|p| p.timestamp <= t) {
            0 => None,
            i => Some(self.points[i - 1].price),
        }
    }
}

// ---- Uniform grids ----

/// A uniform time grid: `count` ticks spaced `step` seconds from `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: u64,
    pub step: u64,
    pub count: usize,
}

impl TimeGrid {
    pub fn new(start: u64, step: u64, count: usize) -> Result<Self, MarketDataError> {
        if step == 0 || count == 0 {
            return Err(MarketDataError::InvalidGrid);
        }
        Ok(TimeGrid { start, step, count })
    }

    pub fn timestamp(&self, tick: usize) -> u64 {
        self.start + tick as u64 * self.step
    }

    pub fn last_timestamp(&self) -> u64 {
        self.timestamp(self.count - 1)
    }

    /// The tick whose window contains `t`, or `None` before the grid start.
    pub fn tick_at(&self, t: u64) -> Option<usize> {
        if t < self.start {
            return None;
        }
        Some((((t - self.start) / self.step) as usize).min(self.count - 1))
    }

    pub fn timestamps(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.count).map(|i| self.timestamp(i))
    }
}

/// Resamples an event-style series onto a uniform grid by carrying the last
/// observation forward; fails when the grid starts before the first
/// observation.
pub fn resample(series: &PriceSeries, grid: &TimeGrid) -> Result<Vec<f64>, MarketDataError> {
    let mut out = Vec::with_capacity(grid.count);
    let points = series.points();
    let mut idx = 0usize; // index of the first point strictly after the cursor
    for t in grid.timestamps() {
        while idx < points.len() && points[idx].timestamp <= t {
            idx += 1;
        }
        if idx == 0 {
            return Err(MarketDataError::NoPriorObservation { grid_start: grid.start });
        }
        out.push(points[idx - 1].price);
    }
    Ok(out)
}

/// A set of price series resampled onto one shared grid, markets in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeriesSet {
    markets: Vec<MarketId>,
    grid: TimeGrid,
    /// `values[m][t]` is the price of market `m` at tick `t`.
    values: Vec<Vec<f64>>,
}

impl UniformSeriesSet {
    pub fn new(
        markets: Vec<MarketId>,
        grid: TimeGrid,
        values: Vec<Vec<f64>>,
    ) -> Result<Self, MarketDataError> {
        if markets.len() != values.len()
            || values.iter().any(|v| v.len() != grid.count)
            || markets.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(MarketDataError::InvalidGrid);
        }
        Ok(UniformSeriesSet {
            markets,
            grid,
            values,
        })
    }

    pub fn markets(&self) -> &[MarketId] {
        &self.markets
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn market_count(&self) -> usize {
        self.markets.len()
    }

    pub fn tick_count(&self) -> usize {
        self.grid.count
    }

    pub fn series(&self, market: usize) -> &[f64] {
        &self.values[market]
    }

    pub fn index_of(&self, id: &MarketId) -> Option<usize> {
        self.markets.binary_search(id).ok()
    }

    pub fn price(&self, market: usize, tick: usize) -> f64 {
        self.values[market][tick]
    }
}

/// Resamples all traces onto one grid covering the intersection of their
/// spans (statistics must not be computed on imputed, unobserved prices).
///
/// The grid starts at the latest first-observation across markets and ends at
/// or before the earliest last-observation, stepping `step_seconds`.
pub fn align(
    traces: &BTreeMap<MarketId, PriceSeries>,
    step_seconds: u64,
) -> Result<UniformSeriesSet, MarketDataError> {
    if step_seconds == 0 {
        return Err(MarketDataError::InvalidGrid);
    }
    if traces.is_empty() {
        return Err(MarketDataError::NoCommonWindow);
    }
    let start = traces
        .values()
        .map(PriceSeries::first_timestamp)
        .max()
        .expect("non-empty");
    let end = traces
        .values()
        .map(PriceSeries::last_timestamp)
        .min()
        .expect("non-empty");
    if end < start {
        return Err(MarketDataError::NoCommonWindow);
    }
    let count = ((end - start) / step_seconds) as usize + 1;
    let grid = TimeGrid::new(start, step_seconds, count)?;
    let markets: Vec<MarketId> = traces.keys().cloned().collect();
    let values = traces
        .values()
        .map(|s| resample(s, &grid))
        .collect::<Result<Vec<_>, _>>()?;
    UniformSeriesSet::new(markets, grid, values)
}

// ---- Trace CSV ----

/// Loads price traces from CSV with header `timestamp,market_id,price`.
///
/// Every market referenced by a row must exist in the catalog, and every
/// catalog market must end up with at least one sample.
pub fn load_price_traces(
    path: impl AsRef<Path>,
    catalog: &MarketCatalog,
) -> Result<BTreeMap<MarketId, PriceSeries>, MarketDataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| MarketDataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_price_traces_from_reader(file, path, catalog)
}

/// Parses trace CSV from any reader; `path` is used in diagnostics.
pub fn load_price_traces_from_reader(
    reader: impl Read,
    path: &Path,
    catalog: &MarketCatalog,
) -> Result<BTreeMap<MarketId, PriceSeries>, MarketDataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    expect_header(&mut rdr, path, &["timestamp", "market_id", "price"])?;
    let mut raw: BTreeMap<MarketId, Vec<PricePoint>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_row_error(path, &e))?;
        let line = record.position().map(|p| p.line()).unwrap_or_default();
        let malformed = |reason: String| MarketDataError::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason,
        };
        if record.len() != 3 {
            return Err(malformed(format!("expected 3 columns, got {}", record.len())));
        }
        let timestamp = parse_timestamp(&record[0])
            .ok_or_else(|| malformed(format!("bad timestamp {:?}", &record[0])))?;
        let market_id =
            MarketId::new(&record[1]).map_err(|_| malformed("empty market_id".to_string()))?;
        if !catalog.contains(&market_id) {
            return Err(MarketDataError::UnknownMarket(market_id));
        }
        let price: f64 = record[2]
            .parse()
            .map_err(|_| malformed(format!("bad price {:?}", &record[2])))?;
        if !price.is_finite() || price <= 0.0 {
            return Err(MarketDataError::NonPositiveValue {
                path: path.to_path_buf(),
                line,
                column: "price",
            });
        }
        raw.entry(market_id)
            .or_default()
            .push(PricePoint { timestamp, price });
    }
    for id in catalog.ids() {
        if !raw.contains_key(id) {
            return Err(MarketDataError::EmptyTrace(id.clone()));
        }
    }
    raw.into_iter()
        .map(|(id, points)| PriceSeries::new(points).map(|s| (id, s)))
        .collect()
}

/// Epoch-second timestamps; fractional-second inputs are truncated.
fn parse_timestamp(text: &str) -> Option<u64> {
    if let Ok(t) = text.parse::<u64>() {
        return Some(t);
    }
    let t: f64 = text.parse().ok()?;
    if t.is_finite() && t >= 0.0 {
        Some(t.trunc() as u64)
    } else {
        None
    }
}

fn expect_header(
    rdr: &mut csv::Reader<impl Read>,
    path: &Path,
    expected: &[&str],
) -> Result<(), MarketDataError> {
    let headers = rdr.headers().map_err(|e| csv_row_error(path, &e))?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(MarketDataError::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected header {:?}, got {:?}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn csv_row_error(path: &Path, err: &csv::Error) -> MarketDataError {
    let line = match err.position() {
        Some(pos) => pos.line(),
        None => 0,
    };
    MarketDataError::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason: err.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mid(s: &str) -> MarketId {
        MarketId::new(s).unwrap()
    }

    fn series(points: &[(u64, f64)]) -> PriceSeries {
        PriceSeries::new(
            points
                .iter()
                .map(|&(timestamp, price)| PricePoint { timestamp, price })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn catalog_csv_round_trip() {
        let csv = "market_id,zone,cpu_cores,mem_gb,on_demand_price\n\
                   m2,us-east-1a,4,16,0.5\n\
                   m1,us-east-1b,2,7.5,0.25\n";
        let cat = MarketCatalog::from_reader(csv.as_bytes(), Path::new("cat.csv")).unwrap();
        assert_eq!(cat.len(), 2);
        // Sorted by id regardless of file order.
        let ids: Vec<&str> = cat.ids().map(MarketId::as_str).collect();
        assert_eq!(ids, ["m1", "m2"]);
        assert_eq!(cat.get(&mid("m1")).unwrap().mem_gb, 7.5);
    }

    #[test]
    fn catalog_rejects_duplicates_and_nonpositive() {
        let dup = "market_id,zone,cpu_cores,mem_gb,on_demand_price\n\
                   m1,z,2,4,0.1\nm1,z,2,4,0.1\n";
        assert!(matches!(
            MarketCatalog::from_reader(dup.as_bytes(), Path::new("c")),
            Err(MarketDataError::DuplicateMarket(_))
        ));
        let bad = "market_id,zone,cpu_cores,mem_gb,on_demand_price\nm1,z,2,-4,0.1\n";
        assert!(matches!(
            MarketCatalog::from_reader(bad.as_bytes(), Path::new("c")),
            Err(MarketDataError::NonPositiveValue { column: "mem_gb", .. })
        ));
    }

    #[test]
    fn catalog_reports_malformed_row_line() {
        let csv = "market_id,zone,cpu_cores,mem_gb,on_demand_price\n\
                   m1,z,2,4,0.1\nm2,z,two,4,0.1\n";
        match MarketCatalog::from_reader(csv.as_bytes(), Path::new("c")) {
            Err(MarketDataError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected MalformedRow, got {other:?}"),
        }
    }

    #[test]
    fn resample_carries_forward() {
        // Samples at 0 and 100; a 3-tick grid stepping 50 holds the old
        // price until the change is observed.
        let s = series(&[(0, 1.0), (100, 2.0)]);
        let grid = TimeGrid::new(0, 50, 3).unwrap();
        assert_eq!(resample(&s, &grid).unwrap(), vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn resample_requires_prior_observation() {
        let s = series(&[(100, 1.0)]);
        let grid = TimeGrid::new(0, 50, 3).unwrap();
        assert!(matches!(
            resample(&s, &grid),
            Err(MarketDataError::NoPriorObservation { grid_start: 0 })
        ));
    }

    #[test]
    fn resample_is_idempotent_on_uniform_series() {
        let prices = [1.0, 3.0, 2.0, 2.0, 5.0];
        let s = PriceSeries::from_uniform(1000, 300, &prices).unwrap();
        let grid = TimeGrid::new(1000, 300, prices.len()).unwrap();
        assert_eq!(resample(&s, &grid).unwrap(), prices.to_vec());
    }

    #[test]
    fn align_intersects_spans() {
        let mut traces = BTreeMap::new();
        traces.insert(mid("a"), series(&[(0, 1.0), (100, 2.0)]));
        traces.insert(mid("b"), series(&[(50, 3.0), (150, 4.0)]));
        let set = align(&traces, 10).unwrap();
        // Window is [50, 100]: latest start 50, earliest end 100.
        assert_eq!(set.grid().start, 50);
        assert_eq!(set.tick_count(), 6);
        assert_eq!(set.series(0), &[1.0, 1.0, 1.0, 1.0, 1.0, 2.0]);
        assert_eq!(set.series(1), &[3.0; 6]);
        // Every grid value equals the carry-forward value of the raw series.
        for (m, id) in set.markets().iter().enumerate() {
            for (t, ts) in set.grid().timestamps().enumerate() {
                assert_eq!(set.price(m, t), traces[id].value_at(ts).unwrap());
            }
        }
    }

    #[test]
    fn align_rejects_disjoint_spans() {
        let mut traces = BTreeMap::new();
        traces.insert(mid("a"), series(&[(0, 1.0), (10, 2.0)]));
        traces.insert(mid("b"), series(&[(100, 3.0), (110, 4.0)]));
        assert!(matches!(
            align(&traces, 10),
            Err(MarketDataError::NoCommonWindow)
        ));
    }

    #[test]
    fn trace_csv_loads_sorted_and_validated() {
        let cat = MarketCatalog::from_reader(
            "market_id,zone,cpu_cores,mem_gb,on_demand_price\nm1,z,2,4,1.0\n".as_bytes(),
            Path::new("c"),
        )
        .unwrap();
        let csv = "timestamp,market_id,price\n200,m1,0.3\n100,m1,0.2\n100.9,m1,0.25\n";
        let traces =
            load_price_traces_from_reader(csv.as_bytes(), Path::new("t"), &cat).unwrap();
        let s = &traces[&mid("m1")];
        // 100.9 truncates to 100 and, being the later row, wins the tie.
        assert_eq!(
            s.points(),
            &[
                PricePoint { timestamp: 100, price: 0.25 },
                PricePoint { timestamp: 200, price: 0.3 }
            ]
        );
    }

    #[test]
    fn trace_csv_rejects_unknown_market_and_missing_trace() {
        let cat = MarketCatalog::from_reader(
            "market_id,zone,cpu_cores,mem_gb,on_demand_price\nm1,z,2,4,1.0\nm2,z,2,4,1.0\n"
                .as_bytes(),
            Path::new("c"),
        )
        .unwrap();
        let unknown = "timestamp,market_id,price\n100,zz,0.2\n";
        assert!(matches!(
            load_price_traces_from_reader(unknown.as_bytes(), Path::new("t"), &cat),
            Err(MarketDataError::UnknownMarket(_))
        ));
        let partial = "timestamp,market_id,price\n100,m1,0.2\n";
        assert!(matches!(
            load_price_traces_from_reader(partial.as_bytes(), Path::new("t"), &cat),
            Err(MarketDataError::EmptyTrace(id)) if id.as_str() == "m2"
        ));
    }

    #[test]
    fn value_at_before_first_sample_is_none() {
        let s = series(&[(100, 1.0)]);
        assert_eq!(s.value_at(99), None);
        assert_eq!(s.value_at(100), Some(1.0));
        assert_eq!(s.value_at(1_000_000), Some(1.0));
    }
}
