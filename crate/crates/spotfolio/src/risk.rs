//! Market risk statistics: expected returns, covariance constructions,
//! revocation rates, and PSD validation/repair.
//!
//! Three covariance estimators are provided, each capturing a different
//! notion of "markets failing together":
//!
//! * **price** — plain covariance of normalized prices `S(t)/Dᵢ`;
//! * **revocation** — probability of simultaneous revocation events,
//!   estimated from matched above-bid price crossings;
//! * **hybrid** — price covariance after clamping above-bid prices to
//!   `10·Dᵢ`, so co-revocations dominate the entries while ordinary price
//!   wiggle still contributes.
//!
//! All estimators normalize by the on-demand price so that markets of
//! different sizes contribute comparable risk units.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::market::{MarketCatalog, MarketCatalogEntry, MarketId, UniformSeriesSet};

/// Each revocation event exposes this many ticks starting at the event
/// (one tick = one pricing window); two markets count as simultaneously
/// revoked on any tick exposed by both. Width 1 means same-tick
/// co-occurrence only.
pub const DEFAULT_REVOCATION_WINDOW_TICKS: usize = 1;

/// Matrices with eigenvalues above this floor are accepted as PSD;
/// anything lower triggers repair.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Maximum entrywise asymmetry tolerated by [`psd_repair`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Above-bid prices are clamped to this multiple of the on-demand price by
/// the hybrid transform.
pub const HYBRID_PENALTY_MULTIPLE: f64 = 10.0;

// ---- Errors ----

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("price series is empty")]
    EmptySeries,
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 samples for covariance, got {len}")]
    TooShort { len: usize },
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:.3e})")]
    NonSymmetricInput { max_asymmetry: f64 },
    #[error("need at least 1 market for a covariance matrix, got {got}")]
    TooFewMarkets { got: usize },
    #[error("kind 'synthetic' tags externally constructed matrices; it cannot be estimated from traces")]
    UnsupportedKind,
    #[error("bid price must be positive")]
    NonPositiveBid,
}

// ---- Bid policy ----

/// Per-market bid prices. The default bids exactly the on-demand price,
/// which caps spending at the non-revocable cost while keeping revocations
/// rare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidPolicy {
    /// Bid = `multiple · on_demand_price` for markets without an override.
    multiple: f64,
    overrides: BTreeMap<MarketId, f64>,
}

impl Default for BidPolicy {
    fn default() -> Self {
        Self::on_demand()
    }
}

impl BidPolicy {
    /// Bid the on-demand price in every market.
    pub fn on_demand() -> Self {
        BidPolicy {
            multiple: 1.0,
            overrides: BTreeMap::new(),
        }
    }

    /// Bid `multiple · on_demand_price` in every market.
    pub fn on_demand_multiple(multiple: f64) -> Result<Self, RiskError> {
        if !(multiple > 0.0 && multiple.is_finite()) {
            return Err(RiskError::NonPositiveBid);
        }
        Ok(BidPolicy {
            multiple,
            overrides: BTreeMap::new(),
        })
    }

    /// Fixes an absolute bid for one market.
    pub fn with_override(mut self, market: MarketId, bid: f64) -> Result<Self, RiskError> {
        if !(bid > 0.0 && bid.is_finite()) {
            return Err(RiskError::NonPositiveBid);
        }
        self.overrides.insert(market, bid);
        Ok(self)
    }

    /// The bid price in force for `entry`'s market.
    pub fn bid_for(&self, entry: &MarketCatalogEntry) -> f64 {
        self.overrides
            .get(&entry.market_id)
            .copied()
            .unwrap_or(self.multiple * entry.on_demand_price)
    }

    pub fn multiple(&self) -> f64 {
        self.multiple
    }
}

// ---- Returns ----

/// Expected per-dollar saving of one market: `1 − mean(S)/D`.
///
/// 1.0 would mean free servers; 0 means spot costs as much as on-demand;
/// negative values are possible when the mean spot price exceeds on-demand.
pub fn expected_return(series: &[f64], on_demand: f64) -> Result<f64, RiskError> {
    if series.is_empty() {
        return Err(RiskError::EmptySeries);
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    Ok(1.0 - mean / on_demand)
}

/// Expected returns of every market in an aligned series set, market order
/// matching the set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsVector {
    markets: Vec<MarketId>,
    values: Vec<f64>,
}

impl ReturnsVector {
    pub fn new(markets: Vec<MarketId>, values: Vec<f64>) -> Result<Self, RiskError> {
        if markets.len() != values.len() {
            return Err(RiskError::LengthMismatch {
                left: markets.len(),
                right: values.len(),
            });
        }
        Ok(ReturnsVector { markets, values })
    }

    pub fn markets(&self) -> &[MarketId] {
        &self.markets
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Builds the returns vector for every market of an aligned set.
pub fn returns_vector(
    aligned: &UniformSeriesSet,
    catalog: &MarketCatalog,
) -> Result<ReturnsVector, RiskError> {
    let values = aligned
        .markets()
        .iter()
        .enumerate()
        .map(|(m, id)| {
            let on_demand = catalog
                .get(id)
                .map(|e| e.on_demand_price)
                .ok_or(RiskError::EmptySeries)?;
            expected_return(aligned.series(m), on_demand)
        })
        .collect::<Result<Vec<_>, _>>()?;
    ReturnsVector::new(aligned.markets().to_vec(), values)
}

// ---- Covariance entries ----

/// Population covariance of two equal-length series (1/T normalization).
pub fn price_covariance(x: &[f64], y: &[f64]) -> Result<f64, RiskError> {
    if x.len() != y.len() {
        return Err(RiskError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(RiskError::TooShort { len: x.len() });
    }
    let t = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / t;
    let mean_y = y.iter().sum::<f64>() / t;
    let sum: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mean_x) * (b - mean_y))
        .sum();
    Ok(sum / t)
}

/// Ticks at which the price crosses *upward* through the bid: `price(t) > B`
/// with `price(t−1) ≤ B`. A sustained above-bid excursion counts once — the
/// server is revoked at the crossing and there is nothing left to revoke
/// until the price falls back and a new server could run.
pub fn revocation_events(series: &[f64], bid: f64) -> Vec<usize> {
    series
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] <= bid && w[1] > bid)
        .map(|(i, _)| i + 1)
        .collect()
}

/// Probability that markets X and Y are simultaneously inside a revocation
/// window: each event exposes the `window_ticks` ticks starting at it, and
/// the estimate is the fraction of all ticks exposed by *both* markets.
///
/// This is the inner product of two 0/1 exposure indicators divided by the
/// series length, so a matrix of these estimates — with each market's own
/// exposure fraction on the diagonal — is a Gram matrix, positive
/// semidefinite by construction. An empty series (or no events on either
/// side) estimates 0.
pub fn simultaneous_revocation_probability(
    x: &[f64],
    y: &[f64],
    bid_x: f64,
    bid_y: f64,
    window_ticks: usize,
) -> Result<f64, RiskError> {
    if x.len() != y.len() {
        return Err(RiskError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let wx = windowed_event_ticks(&revocation_events(x, bid_x), window_ticks, x.len());
    let wy = windowed_event_ticks(&revocation_events(y, bid_y), window_ticks, y.len());
    Ok(sorted_overlap_count(&wx, &wy) as f64 / x.len() as f64)
}

/// Ticks covered when each event of the (ascending) list is dilated to the
/// half-open window `[event, event + window)`, clipped to the series length;
/// overlapping windows merge rather than double-count. Width 0 behaves as 1.
fn windowed_event_ticks(events: &[usize], window: usize, len: usize) -> Vec<usize> {
    let window = window.max(1);
    let mut ticks: Vec<usize> = Vec::new();
    for &event in events {
        let from = event.max(ticks.last().map_or(0, |&last| last + 1));
        ticks.extend(from..(event + window).min(len));
    }
    ticks
}

/// Number of elements common to two strictly ascending sequences.
fn sorted_overlap_count(x: &[usize], y: &[usize]) -> usize {
    let mut i = 0;
    let mut j = 0;
    let mut shared = 0;
    while i < x.len() && j < y.len() {
        match x[i].cmp(&y[j]) {
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    shared
}

/// Clamps above-bid prices to `10·D`: `S′(t) = S(t)` if `S(t) < B`
/// (strictly), else `10·D`. At-bid prices already trigger revocation, so
/// they take the penalty value.
pub fn hybrid_transform(series: &[f64], bid: f64, on_demand: f64) -> Vec<f64> {
    series
        .iter()
        .map(|&s| {
            if s < bid {
                s
            } else {
                HYBRID_PENALTY_MULTIPLE * on_demand
            }
        })
        .collect()
}

// ---- Covariance matrices ----

/// How a covariance matrix was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    Price,
    Revocation,
    Hybrid,
    /// Externally constructed (e.g. generated test matrices); never produced
    /// by the trace estimators.
    Synthetic,
}

impl CovarianceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceKind::Price => "price",
            CovarianceKind::Revocation => "revocation",
            CovarianceKind::Hybrid => "hybrid",
            CovarianceKind::Synthetic => "synthetic",
        }
    }
}

/// A symmetric PSD (post-repair) covariance matrix over an ordered market
/// list.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    markets: Vec<MarketId>,
    kind: CovarianceKind,
    entries: DMatrix<f64>,
    repaired: bool,
}

impl CovarianceMatrix {
    /// Wraps an externally supplied symmetric matrix, repairing it if its
    /// smallest eigenvalue is below the PSD tolerance.
    pub fn new(
        markets: Vec<MarketId>,
        kind: CovarianceKind,
        entries: DMatrix<f64>,
    ) -> Result<Self, RiskError> {
        if markets.len() != entries.nrows() || markets.len() != entries.ncols() {
            return Err(RiskError::LengthMismatch {
                left: markets.len(),
                right: entries.nrows(),
            });
        }
        let (entries, repaired) = psd_repair(&entries)?;
        Ok(CovarianceMatrix {
            markets,
            kind,
            entries,
            repaired,
        })
    }

    /// Wraps a matrix that is PSD by construction (e.g. a Gram matrix built
    /// as AᵀA), skipping the eigenvalue check. Symmetry is still enforced.
    pub fn trusted(
        markets: Vec<MarketId>,
        kind: CovarianceKind,
        entries: DMatrix<f64>,
    ) -> Result<Self, RiskError> {
        if markets.len() != entries.nrows() || markets.len() != entries.ncols() {
            return Err(RiskError::LengthMismatch {
                left: markets.len(),
                right: entries.nrows(),
            });
        }
        check_symmetry(&entries)?;
        Ok(CovarianceMatrix {
            markets,
            kind,
            entries,
            repaired: false,
        })
    }

    pub fn markets(&self) -> &[MarketId] {
        &self.markets
    }

    pub fn kind(&self) -> CovarianceKind {
        self.kind
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn repaired(&self) -> bool {
        self.repaired
    }

    pub fn dim(&self) -> usize {
        self.markets.len()
    }

    /// The quadratic form `aᵀVa` — the variance of the portfolio `a`.
    pub fn quadratic_form(&self, a: &[f64]) -> f64 {
        let a = DVector::from_column_slice(a);
        (a.transpose() * &self.entries * &a)[(0, 0)]
    }
}

/// Assembles the unrepaired covariance estimate of `kind` over all markets
/// of the aligned set. Exposed separately from [`covariance_matrix`] so the
/// raw estimate's spectrum can be inspected.
pub fn assemble_entries(
    aligned: &UniformSeriesSet,
    catalog: &MarketCatalog,
    bids: &BidPolicy,
    kind: CovarianceKind,
) -> Result<DMatrix<f64>, RiskError> {
    let n = aligned.market_count();
    if n == 0 {
        return Err(RiskError::TooFewMarkets { got: n });
    }
    let t = aligned.tick_count();
    let entries_for = |id: &MarketId| {
        catalog.get(id).ok_or(RiskError::EmptySeries)
    };

    match kind {
        CovarianceKind::Price | CovarianceKind::Hybrid => {
            // Normalized (and, for hybrid, transformed) series per market.
            let mut normalized: Vec<Vec<f64>> = Vec::with_capacity(n);
            for (m, id) in aligned.markets().iter().enumerate() {
                let entry = entries_for(id)?;
                let d = entry.on_demand_price;
                let raw = aligned.series(m);
                let series = if kind == CovarianceKind::Hybrid {
                    hybrid_transform(raw, bids.bid_for(entry), d)
                } else {
                    raw.to_vec()
                };
                normalized.push(series.into_iter().map(|s| s / d).collect());
            }
            let mut v = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let c = price_covariance(&normalized[i], &normalized[j])?;
                    v[(i, j)] = c;
                    v[(j, i)] = c;
                }
            }
            Ok(v)
        }
        CovarianceKind::Revocation => {
            // Gram matrix of per-market revocation-exposure indicators:
            // entry (i, j) is the fraction of ticks inside both markets'
            // revocation windows, the diagonal the fraction inside the
            // market's own. As a product of 0/1 indicator vectors scaled by
            // 1/T the matrix is positive semidefinite by construction.
            let mut windows = Vec::with_capacity(n);
            for (m, id) in aligned.markets().iter().enumerate() {
                let entry = entries_for(id)?;
                let bid = bids.bid_for(entry);
                let events = revocation_events(aligned.series(m), bid);
                windows.push(windowed_event_ticks(
                    &events,
                    DEFAULT_REVOCATION_WINDOW_TICKS,
                    t,
                ));
            }
            let mut v = DMatrix::zeros(n, n);
            for i in 0..n {
                v[(i, i)] = windows[i].len() as f64 / t as f64;
                for j in (i + 1)..n {
                    let p = sorted_overlap_count(&windows[i], &windows[j]) as f64 / t as f64;
                    v[(i, j)] = p;
                    v[(j, i)] = p;
                }
            }
            Ok(v)
        }
        CovarianceKind::Synthetic => Err(RiskError::UnsupportedKind),
    }
}

/// Estimates the covariance matrix of `kind` over all markets of the
/// aligned set, PSD-repairing the result if needed.
pub fn covariance_matrix(
    aligned: &UniformSeriesSet,
    catalog: &MarketCatalog,
    bids: &BidPolicy,
    kind: CovarianceKind,
) -> Result<CovarianceMatrix, RiskError> {
    let entries = assemble_entries(aligned, catalog, bids, kind)?;
    CovarianceMatrix::new(aligned.markets().to_vec(), kind, entries)
}

// ---- MTTR ----

/// Mean time between revocations of one market at a given bid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MttrEstimate {
    pub market: MarketId,
    pub mttr_seconds: f64,
    pub revocation_count: usize,
    /// True when no revocations were observed; `mttr_seconds` is then the
    /// observed span — a lower bound, treated as "very stable".
    pub censored: bool,
}

/// Estimates MTTR from a uniform price series: observed span `L = T·step`
/// with `k ≥ 1` revocation events gives `L/k`; zero events gives the
/// censored span itself.
pub fn mttr(
    market: MarketId,
    series: &[f64],
    bid: f64,
    step_seconds: u64,
) -> Result<MttrEstimate, RiskError> {
    if series.is_empty() {
        return Err(RiskError::EmptySeries);
    }
    let span = (series.len() as u64 * step_seconds) as f64;
    let k = revocation_events(series, bid).len();
    Ok(MttrEstimate {
        market,
        mttr_seconds: if k == 0 { span } else { span / k as f64 },
        revocation_count: k,
        censored: k == 0,
    })
}

/// MTTR table for every market of an aligned set, in market order.
pub fn mttr_table(
    aligned: &UniformSeriesSet,
    catalog: &MarketCatalog,
    bids: &BidPolicy,
) -> Result<Vec<MttrEstimate>, RiskError> {
    aligned
        .markets()
        .iter()
        .enumerate()
        .map(|(m, id)| {
            let entry = catalog.get(id).ok_or(RiskError::EmptySeries)?;
            mttr(
                id.clone(),
                aligned.series(m),
                bids.bid_for(entry),
                aligned.grid().step,
            )
        })
        .collect()
}

// ---- PSD repair ----

fn check_symmetry(m: &DMatrix<f64>) -> Result<(), RiskError> {
    let mut max_asymmetry = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            max_asymmetry = max_asymmetry.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if max_asymmetry > SYMMETRY_TOLERANCE {
        return Err(RiskError::NonSymmetricInput { max_asymmetry });
    }
    Ok(())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    nalgebra::SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Projects a symmetric matrix onto the PSD cone by clipping negative
/// eigenvalues to zero — the minimal repair in Frobenius norm. Returns the
/// (possibly repaired) matrix and whether repair was applied; matrices with
/// minimum eigenvalue ≥ −1e-8 pass through unchanged.
pub fn psd_repair(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool), RiskError> {
    check_symmetry(m)?;
    let eigen = nalgebra::SymmetricEigen::new(m.clone());
    let min = eigen.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min >= -PSD_TOLERANCE {
        return Ok((m.clone(), false));
    }
    let clipped = DVector::from_iterator(
        eigen.eigenvalues.len(),
        eigen.eigenvalues.iter().map(|&l| l.max(0.0)),
    );
    let q = &eigen.eigenvectors;
    let rebuilt = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    // Re-symmetrize: the reconstruction is symmetric in exact arithmetic but
    // not bitwise in floating point.
    let repaired = (&rebuilt + rebuilt.transpose()) * 0.5;
    Ok((repaired, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::TimeGrid;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mid(s: &str) -> MarketId {
        MarketId::new(s).unwrap()
    }

    /// Builds a baseline-0.5 series of `ticks` ticks with price 2.0 at the
    /// given event ticks (bid 1.0 → upward crossings exactly there, provided
    /// no two event ticks are adjacent).
    fn series_with_events(ticks: usize, events: &[usize]) -> Vec<f64> {
        let mut s = vec![0.5; ticks];
        for &e in events {
            s[e] = 2.0;
        }
        s
    }

    fn catalog(entries: &[(&str, f64)]) -> MarketCatalog {
        MarketCatalog::new(
            entries
                .iter()
                .map(|&(id, d)| MarketCatalogEntry {
                    market_id: mid(id),
                    zone: "z".to_string(),
                    cpu_cores: 4,
                    mem_gb: 16.0,
                    on_demand_price: d,
                })
                .collect(),
        )
        .unwrap()
    }

    fn aligned(markets: &[&str], values: Vec<Vec<f64>>) -> UniformSeriesSet {
        let grid = TimeGrid::new(0, 300, values[0].len()).unwrap();
        UniformSeriesSet::new(markets.iter().map(|s| mid(s)).collect(), grid, values).unwrap()
    }

    #[test]
    fn expected_return_matches_definition() {
        assert_eq!(expected_return(&[1.0, 1.0], 1.0).unwrap(), 0.0);
        assert_relative_eq!(
            expected_return(&[0.2, 0.2, 0.2], 1.0).unwrap(),
            0.8,
            epsilon = 1e-15
        );
        assert_relative_eq!(expected_return(&[0.1, 0.3], 1.0).unwrap(), 0.8);
        // Mean above on-demand → negative return.
        assert!(expected_return(&[3.0], 1.0).unwrap() < 0.0);
        assert!(matches!(
            expected_return(&[], 1.0),
            Err(RiskError::EmptySeries)
        ));
    }

    #[test]
    fn price_covariance_is_population_normalized() {
        // Anti-correlated ramps: covariance −2/3 under 1/T normalization.
        let v = price_covariance(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_relative_eq!(v, -2.0 / 3.0, max_relative = 1e-15);
        // Constant series has zero covariance with anything.
        assert_eq!(price_covariance(&[5.0, 5.0, 5.0], &[1.0, 9.0, 4.0]).unwrap(), 0.0);
        // Self-covariance is the variance.
        let x = [1.0f64, 2.0, 4.0];
        let mean = 7.0 / 3.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert_relative_eq!(price_covariance(&x, &x).unwrap(), var);
        assert!(matches!(
            price_covariance(&[1.0], &[1.0, 2.0]),
            Err(RiskError::LengthMismatch { .. })
        ));
        assert!(matches!(
            price_covariance(&[1.0], &[1.0]),
            Err(RiskError::TooShort { len: 1 })
        ));
    }

    #[test]
    fn revocation_events_are_upward_crossings() {
        assert_eq!(
            revocation_events(&[0.5, 1.5, 1.6, 0.5, 1.5], 1.0),
            vec![1, 4]
        );
        // Always below bid → no events; always above → no crossing either.
        assert!(revocation_events(&[0.5, 0.9, 0.3], 1.0).is_empty());
        assert!(revocation_events(&[1.5, 1.6, 1.7], 1.0).is_empty());
        // Price exactly at bid does not revoke; exceeding it does.
        assert_eq!(revocation_events(&[1.0, 1.1], 1.0), vec![1]);
    }

    #[test]
    fn simultaneous_revocation_matches_hand_count() {
        // Width-2 windows: events {10, 50} expose {10,11,50,51} and
        // {11, 90} expose {11,12,90,91}; tick 11 is the only tick exposed
        // by both, over 100 ticks.
        let x = series_with_events(100, &[10, 50]);
        let y = series_with_events(100, &[11, 90]);
        let p = simultaneous_revocation_probability(&x, &y, 1.0, 1.0, 2).unwrap();
        assert_relative_eq!(p, 1.0 / 100.0, max_relative = 1e-15);
        // Width 1 exposes only the event tick itself: no shared tick.
        let p = simultaneous_revocation_probability(&x, &y, 1.0, 1.0, 1).unwrap();
        assert_eq!(p, 0.0);
        // A market always co-occurs with itself; the probability is its own
        // exposure fraction — the same value the matrix diagonal carries.
        let p = simultaneous_revocation_probability(&x, &x, 1.0, 1.0, 1).unwrap();
        assert_relative_eq!(p, 2.0 / 100.0, max_relative = 1e-15);
        // One side eventless → 0.0.
        let quiet = vec![0.5; 100];
        let p = simultaneous_revocation_probability(&x, &quiet, 1.0, 1.0, 1).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn event_windows_merge_and_clip() {
        // Overlapping windows merge instead of double-counting ticks.
        assert_eq!(windowed_event_ticks(&[3, 4], 2, 100), vec![3, 4, 5]);
        // Windows never run past the end of the series.
        assert_eq!(windowed_event_ticks(&[98], 5, 100), vec![98, 99]);
        // Width 0 degrades to the event tick itself.
        assert_eq!(windowed_event_ticks(&[7], 0, 100), vec![7]);
        assert_eq!(sorted_overlap_count(&[1, 2, 5], &[2, 3, 5, 9]), 2);
        assert_eq!(sorted_overlap_count(&[], &[1, 2]), 0);
    }

    #[test]
    fn hybrid_transform_clamps_at_bid() {
        assert_eq!(hybrid_transform(&[0.3], 1.0, 0.5), vec![0.3]);
        assert_eq!(hybrid_transform(&[1.2], 1.0, 0.5), vec![5.0]);
        // The comparison is strict: price exactly at bid takes the penalty.
        assert_eq!(hybrid_transform(&[1.0], 1.0, 0.5), vec![5.0]);
    }

    #[test]
    fn covariance_matrix_kinds() {
        let cat = catalog(&[("a", 1.0), ("b", 2.0)]);
        // Constant prices → zero price-kind matrix.
        let set = aligned(&["a", "b"], vec![vec![0.2; 10], vec![0.4; 10]]);
        let v = covariance_matrix(&set, &cat, &BidPolicy::on_demand(), CovarianceKind::Price)
            .unwrap();
        assert_eq!(v.kind(), CovarianceKind::Price);
        assert!(!v.repaired());
        // Constant series deviate from their mean only by rounding dust.
        assert!(v.entries().iter().all(|&e| e.abs() < 1e-30));

        // Identical event patterns: both markets expose the same 2 of 50
        // ticks, so every entry — diagonal and off-diagonal alike — is the
        // shared exposure fraction. The resulting rank-one matrix is PSD by
        // construction and needs no repair.
        let spiky = series_with_events(50, &[10, 30]);
        let spiky_b: Vec<f64> = spiky.iter().map(|p| p * 2.0).collect();
        let set = aligned(&["a", "b"], vec![spiky.clone(), spiky_b]);
        let raw =
            assemble_entries(&set, &cat, &BidPolicy::on_demand(), CovarianceKind::Revocation)
                .unwrap();
        assert_relative_eq!(raw[(0, 1)], 2.0 / 50.0);
        assert_relative_eq!(raw[(1, 0)], 2.0 / 50.0);
        assert_relative_eq!(raw[(0, 0)], 2.0 / 50.0);
        assert!(crate::risk::min_eigenvalue(&raw) >= -PSD_TOLERANCE);
        let v = covariance_matrix(&set, &cat, &BidPolicy::on_demand(), CovarianceKind::Revocation)
            .unwrap();
        assert!(!v.repaired());

        // Price and hybrid agree when prices never reach the bid.
        let calm = aligned(
            &["a", "b"],
            vec![
                vec![0.2, 0.3, 0.25, 0.4, 0.2],
                vec![0.9, 1.1, 0.8, 1.0, 0.7],
            ],
        );
        let p = assemble_entries(&calm, &cat, &BidPolicy::on_demand(), CovarianceKind::Price)
            .unwrap();
        let h = assemble_entries(&calm, &cat, &BidPolicy::on_demand(), CovarianceKind::Hybrid)
            .unwrap();
        assert_eq!(p, h);

        assert!(matches!(
            assemble_entries(&calm, &cat, &BidPolicy::on_demand(), CovarianceKind::Synthetic),
            Err(RiskError::UnsupportedKind)
        ));
    }

    #[test]
    fn covariance_matrix_matches_pairwise_recomputation() {
        // 3-market pseudorandom traces; matrix entries must equal direct
        // per-pair recomputation.
        let cat = catalog(&[("a", 1.0), ("b", 2.0), ("c", 0.5)]);
        let mut state = 88172645463325252u64;
        let mut next = move || {
            // xorshift64 — cheap deterministic noise for test fixtures
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let values: Vec<Vec<f64>> = (0..3)
            .map(|m| {
                let d = [1.0, 2.0, 0.5][m];
                (0..200).map(|_| (0.1 + 0.9 * next()) * d).collect()
            })
            .collect();
        let set = aligned(&["a", "b", "c"], values.clone());
        let v = assemble_entries(&set, &cat, &BidPolicy::on_demand(), CovarianceKind::Price)
            .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let di = [1.0, 2.0, 0.5][i];
                let dj = [1.0, 2.0, 0.5][j];
                let xi: Vec<f64> = values[i].iter().map(|p| p / di).collect();
                let xj: Vec<f64> = values[j].iter().map(|p| p / dj).collect();
                let expect = price_covariance(&xi, &xj).unwrap();
                assert_relative_eq!(v[(i, j)], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mttr_estimates() {
        // 3 events over a 30 h span → 10 h.
        let s = series_with_events(30, &[5, 12, 20]);
        let e = mttr(mid("a"), &s, 1.0, 3600).unwrap();
        assert_eq!(e.revocation_count, 3);
        assert!(!e.censored);
        assert_relative_eq!(e.mttr_seconds, 10.0 * 3600.0);
        // No events over 100 h → censored at the span.
        let quiet = vec![0.5; 100];
        let e = mttr(mid("a"), &quiet, 1.0, 3600).unwrap();
        assert!(e.censored);
        assert_eq!(e.revocation_count, 0);
        assert_relative_eq!(e.mttr_seconds, 100.0 * 3600.0);
    }

    #[test]
    fn psd_repair_clips_negative_eigenvalues() {
        // Identity passes through untouched.
        let id = DMatrix::<f64>::identity(3, 3);
        let (out, repaired) = psd_repair(&id).unwrap();
        assert!(!repaired);
        assert_eq!(out, id);

        // diag(1, −0.01) → diag(1, 0).
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.01]));
        let (out, repaired) = psd_repair(&m).unwrap();
        assert!(repaired);
        assert_relative_eq!(out[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(out[(1, 1)], 0.0, epsilon = 1e-12);

        // Asymmetric input is rejected.
        let mut bad = DMatrix::<f64>::identity(2, 2);
        bad[(0, 1)] = 0.5;
        assert!(matches!(
            psd_repair(&bad),
            Err(RiskError::NonSymmetricInput { .. })
        ));
    }

    #[test]
    fn psd_repair_keeps_gram_matrices() {
        // A PSD matrix built as AᵀA survives entrywise to 1e-10.
        let a = DMatrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        let gram = a.transpose() * &a;
        let sym = (&gram + gram.transpose()) * 0.5;
        let (out, _) = psd_repair(&sym).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(out[(i, j)], sym[(i, j)], epsilon = 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn quadratic_form_nonnegative_after_repair(
            entries in proptest::collection::vec(-1.0f64..1.0, 16),
            a in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            // Symmetrize an arbitrary 4×4 matrix, repair it, and check the
            // PSD certificate on a random direction.
            let m = DMatrix::from_vec(4, 4, entries);
            let sym = (&m + m.transpose()) * 0.5;
            let (v, _) = psd_repair(&sym).unwrap();
            let av = DVector::from_column_slice(&a);
            let quad = (av.transpose() * &v * &av)[(0, 0)];
            let norm2: f64 = a.iter().map(|x| x * x).sum();
            prop_assert!(quad >= -PSD_TOLERANCE * norm2);
        }

        #[test]
        fn revocation_probability_symmetric_and_bounded(
            ex in proptest::collection::btree_set(1usize..98, 0..8),
            ey in proptest::collection::btree_set(1usize..98, 0..8),
            window in 0usize..3,
        ) {
            // Drop adjacent ticks so each marked tick is a clean crossing.
            let thin = |s: &std::collections::BTreeSet<usize>| {
                let mut out: Vec<usize> = Vec::new();
                for &t in s {
                    if out.last().map_or(true, |&p| t > p + 1) {
                        out.push(t);
                    }
                }
                out
            };
            let ex = thin(&ex);
            let ey = thin(&ey);
            let x = series_with_events(100, &ex);
            let y = series_with_events(100, &ey);
            let pxy = simultaneous_revocation_probability(&x, &y, 1.0, 1.0, window).unwrap();
            let pyx = simultaneous_revocation_probability(&y, &x, 1.0, 1.0, window).unwrap();
            prop_assert_eq!(pxy, pyx);
            prop_assert!((0.0..=1.0).contains(&pxy));
        }

        #[test]
        fn expected_return_depends_only_on_mean(
            series in proptest::collection::vec(0.01f64..2.0, 2..20),
            shift in 0usize..10,
        ) {
            let base = expected_return(&series, 1.0).unwrap();
            let mut rotated = series.clone();
            rotated.rotate_left(shift % series.len());
            // Rotation reorders the summation, so allow rounding slack.
            let other = expected_return(&rotated, 1.0).unwrap();
            prop_assert!((other - base).abs() <= 1e-12 * (1.0 + base.abs()));
        }

        #[test]
        fn mttr_halves_when_events_double(events in 1usize..10) {
            let spread = |k: usize| -> Vec<usize> {
                (0..k).map(|i| 1 + i * 2).collect()
            };
            let tick_count = 100;
            let s1 = series_with_events(tick_count, &spread(events));
            let s2 = series_with_events(tick_count, &spread(events * 2));
            let m1 = mttr(mid("a"), &s1, 1.0, 300).unwrap().mttr_seconds;
            let m2 = mttr(mid("a"), &s2, 1.0, 300).unwrap().mttr_seconds;
            prop_assert!((m2 - m1 / 2.0).abs() < 1e-9);
        }
    }
}
