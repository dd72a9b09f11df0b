//! Synthetic price-trace scenarios.
//!
//! Real spot-price archives are not always available (or not extreme enough),
//! so this module generates price traces with controllable structure:
//! fixed-discount markets, mean-reverting discounts with revocation-inducing
//! price spikes, cross-market spike correlation, scripted spikes, and a
//! "black swan" instant where every market spikes at once.
//!
//! Generation is a pure function of (scenario, catalog, duration, seed):
//! the same inputs always produce byte-identical traces.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::market::{
    MarketCatalog, MarketCatalogEntry, MarketDataError, MarketId, PriceSeries,
    DEFAULT_STEP_SECONDS,
};

/// Discount fractions drift within this band; spot prices never touch zero
/// and never sit exactly at the on-demand price.
const MIN_FRACTION: f64 = 0.01;
const MAX_FRACTION: f64 = 0.95;

/// How each market's discount (spot price / on-demand price) evolves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiscountModel {
    /// Price is exactly `fraction · on_demand_price` at every tick; no random
    /// spikes occur (scripted spikes and the black swan still apply).
    FixedFraction { fraction: f64 },
    /// Discount follows an AR(1) process around `mean_fraction`, clamped to
    /// a sane band, with Poisson-like random price spikes layered on top.
    MeanRevertingWithSpikes {
        mean_fraction: f64,
        /// Per-tick standard deviation of the discount innovation.
        volatility: f64,
        /// AR(1) persistence in [0, 1); 0 is white noise around the mean.
        reversion: f64,
    },
}

/// How spikes couple across markets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrelationModel {
    /// Spikes hit only the market they originate in.
    Independent,
    /// Each originating spike propagates to *all* markets with probability
    /// `rho` (one coupling draw per spike event).
    SharedSpike { rho: f64 },
    /// Every spike propagates to all markets.
    AllCorrelated,
}

impl CorrelationModel {
    fn rho(self) -> f64 {
        match self {
            CorrelationModel::Independent => 0.0,
            CorrelationModel::SharedSpike { rho } => rho,
            CorrelationModel::AllCorrelated => 1.0,
        }
    }
}

/// A scripted spike: market `market_id` spikes at tick `tick`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedSpike {
    pub market_id: MarketId,
    pub tick: usize,
}

/// Full description of a synthetic scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenarioSpec {
    /// Number of markets in the default catalog (must match the catalog
    /// passed to [`generate_synthetic`]).
    pub market_count: usize,
    /// Tick length of the generated traces, seconds.
    pub step_seconds: u64,
    pub discount_model: DiscountModel,
    /// Expected spike events per hour per market.
    pub spike_rate_per_hour: f64,
    pub correlation_model: CorrelationModel,
    /// If set, every market spikes simultaneously at the tick containing
    /// this timestamp (all discount models, fixed-fraction included).
    pub black_swan_time: Option<u64>,
    /// Scripted spikes, applied on top of the random ones.
    pub forced_spikes: Vec<ForcedSpike>,
    /// A spike holds the price elevated for this many ticks.
    pub spike_dwell_ticks: u32,
    /// Spiked price = `spike_multiple · on_demand_price`.
    pub spike_multiple: f64,
    pub seed: u64,
}

impl Default for SyntheticScenarioSpec {
    fn default() -> Self {
        SyntheticScenarioSpec {
            market_count: 5,
            step_seconds: DEFAULT_STEP_SECONDS,
            discount_model: DiscountModel::MeanRevertingWithSpikes {
                mean_fraction: 0.3,
                volatility: 0.02,
                reversion: 0.9,
            },
            spike_rate_per_hour: 0.1,
            correlation_model: CorrelationModel::Independent,
            black_swan_time: None,
            forced_spikes: Vec::new(),
            spike_dwell_ticks: 3,
            spike_multiple: 10.0,
            seed: 0,
        }
    }
}

impl SyntheticScenarioSpec {
    /// Checks all scenario invariants.
    pub fn validate(&self) -> Result<(), MarketDataError> {
        let invalid = |reason: &str| MarketDataError::InvalidScenario {
            reason: reason.to_string(),
        };
        if self.market_count == 0 {
            return Err(invalid("market_count must be at least 1"));
        }
        if self.step_seconds == 0 {
            return Err(invalid("step_seconds must be positive"));
        }
        if !(self.spike_rate_per_hour >= 0.0 && self.spike_rate_per_hour.is_finite()) {
            return Err(invalid("spike_rate must be finite and non-negative"));
        }
        match self.discount_model {
            DiscountModel::FixedFraction { fraction } => {
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(invalid("fixed_fraction must lie in (0, 1)"));
                }
            }
            DiscountModel::MeanRevertingWithSpikes {
                mean_fraction,
                volatility,
                reversion,
            } => {
                if !(mean_fraction > 0.0 && mean_fraction < 1.0) {
                    return Err(invalid("mean_fraction must lie in (0, 1)"));
                }
                if !(volatility >= 0.0 && volatility.is_finite()) {
                    return Err(invalid("volatility must be finite and non-negative"));
                }
                if !(0.0..1.0).contains(&reversion) {
                    return Err(invalid("reversion must lie in [0, 1)"));
                }
            }
        }
        if let CorrelationModel::SharedSpike { rho } = self.correlation_model {
            if !(0.0..=1.0).contains(&rho) {
                return Err(invalid("rho must lie in [0, 1]"));
            }
        }
        if self.spike_dwell_ticks == 0 {
            return Err(invalid("spike_dwell_ticks must be at least 1"));
        }
        if !(self.spike_multiple > 1.0 && self.spike_multiple.is_finite()) {
            return Err(invalid("spike_multiple must exceed 1"));
        }
        Ok(())
    }

    /// A homogeneous catalog of `market_count` synthetic markets
    /// (4 cores, 16 GB, $1/hour on-demand), ids zero-padded so lexicographic
    /// order equals numeric order.
    pub fn default_catalog(&self) -> Result<MarketCatalog, MarketDataError> {
        let width = self.market_count.saturating_sub(1).to_string().len();
        let entries = (0..self.market_count)
            .map(|i| {
                Ok(MarketCatalogEntry {
                    market_id: MarketId::new(format!("m{i:0width$}"))?,
                    zone: "synthetic".to_string(),
                    cpu_cores: 4,
                    mem_gb: 16.0,
                    on_demand_price: 1.0,
                })
            })
            .collect::<Result<Vec<_>, MarketDataError>>()?;
        MarketCatalog::new(entries)
    }

    /// Parses a scenario from its plain-text (TOML) configuration form.
    /// Unknown keys are rejected; omitted keys take documented defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, MarketDataError> {
        let raw: RawScenario =
            toml::from_str(text).map_err(|e| MarketDataError::InvalidScenario {
                reason: e.to_string(),
            })?;
        let spec = raw.into_spec()?;
        spec.validate()?;
        Ok(spec)
    }

    /// Loads and parses a scenario configuration file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MarketDataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MarketDataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

/// Serde shape of the scenario configuration file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    market_count: Option<usize>,
    step_seconds: Option<u64>,
    discount_model: Option<String>,
    fixed_fraction: Option<f64>,
    mean_fraction: Option<f64>,
    volatility: Option<f64>,
    reversion: Option<f64>,
    spike_rate: Option<f64>,
    correlation_model: Option<String>,
    rho: Option<f64>,
    black_swan_time: Option<u64>,
    spike_dwell_ticks: Option<u32>,
    spike_multiple: Option<f64>,
    seed: Option<u64>,
    #[serde(default)]
    forced_spikes: Vec<RawForcedSpike>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawForcedSpike {
    market_id: String,
    tick: usize,
}

impl RawScenario {
    fn into_spec(self) -> Result<SyntheticScenarioSpec, MarketDataError> {
        let defaults = SyntheticScenarioSpec::default();
        let invalid = |reason: String| MarketDataError::InvalidScenario { reason };
        let discount_model = match self.discount_model.as_deref().unwrap_or("mean-reverting") {
            "fixed" => DiscountModel::FixedFraction {
                fraction: self.fixed_fraction.unwrap_or(0.2),
            },
            "mean-reverting" => DiscountModel::MeanRevertingWithSpikes {
                mean_fraction: self.mean_fraction.unwrap_or(0.3),
                volatility: self.volatility.unwrap_or(0.02),
                reversion: self.reversion.unwrap_or(0.9),
            },
            other => {
                return Err(invalid(format!(
                    "discount_model must be \"fixed\" or \"mean-reverting\", got {other:?}"
                )))
            }
        };
        let correlation_model = match self.correlation_model.as_deref().unwrap_or("independent") {
            "independent" => CorrelationModel::Independent,
            "shared" => CorrelationModel::SharedSpike {
                rho: self.rho.unwrap_or(0.5),
            },
            "all-correlated" => CorrelationModel::AllCorrelated,
            other => {
                return Err(invalid(format!(
                    "correlation_model must be \"independent\", \"shared\", or \
                     \"all-correlated\", got {other:?}"
                )))
            }
        };
        let forced_spikes = self
            .forced_spikes
            .into_iter()
            .map(|f| {
                Ok(ForcedSpike {
                    market_id: MarketId::new(f.market_id)?,
                    tick: f.tick,
                })
            })
            .collect::<Result<Vec<_>, MarketDataError>>()?;
        Ok(SyntheticScenarioSpec {
            market_count: self.market_count.unwrap_or(defaults.market_count),
            step_seconds: self.step_seconds.unwrap_or(defaults.step_seconds),
            discount_model,
            spike_rate_per_hour: self.spike_rate.unwrap_or(defaults.spike_rate_per_hour),
            correlation_model,
            black_swan_time: self.black_swan_time,
            forced_spikes,
            spike_dwell_ticks: self.spike_dwell_ticks.unwrap_or(defaults.spike_dwell_ticks),
            spike_multiple: self.spike_multiple.unwrap_or(defaults.spike_multiple),
            seed: self.seed.unwrap_or(defaults.seed),
        })
    }
}

/// Generates one price trace per catalog market over `duration_seconds`,
/// starting at timestamp 0.
///
/// Deterministic given the scenario seed. Within each tick the generator
/// advances markets in id order: one discount innovation per market (the
/// mean-reverting model), one spike-arrival draw per market, and one
/// coupling draw per spike that fired.
pub fn generate_synthetic(
    spec: &SyntheticScenarioSpec,
    catalog: &MarketCatalog,
    duration_seconds: u64,
) -> Result<BTreeMap<MarketId, PriceSeries>, MarketDataError> {
    spec.validate()?;
    if catalog.len() != spec.market_count {
        return Err(MarketDataError::InvalidScenario {
            reason: format!(
                "scenario names {} markets but the catalog has {}",
                spec.market_count,
                catalog.len()
            ),
        });
    }
    if duration_seconds < spec.step_seconds {
        return Err(MarketDataError::InvalidScenario {
            reason: "duration must cover at least one tick".to_string(),
        });
    }
    for f in &spec.forced_spikes {
        if !catalog.contains(&f.market_id) {
            return Err(MarketDataError::UnknownMarket(f.market_id.clone()));
        }
    }

    let n = catalog.len();
    let ticks = (duration_seconds / spec.step_seconds) as usize;
    let spike_prob =
        (spec.spike_rate_per_hour * spec.step_seconds as f64 / 3600.0).clamp(0.0, 1.0);
    let rho = spec.correlation_model.rho();
    let black_swan_tick = spec.black_swan_time.map(|t| (t / spec.step_seconds) as usize);
    let mut forced: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for f in &spec.forced_spikes {
        let market = catalog
            .ids()
            .position(|id| id == &f.market_id)
            .expect("checked above");
        forced.entry(f.tick).or_default().push(market);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let entries: Vec<&MarketCatalogEntry> = catalog.iter().collect();
    let start_fraction = match spec.discount_model {
        DiscountModel::FixedFraction { fraction } => fraction,
        DiscountModel::MeanRevertingWithSpikes { mean_fraction, .. } => mean_fraction,
    };
    let mut fractions = vec![start_fraction; n];
    let mut dwell = vec![0u32; n];
    let mut prices = vec![Vec::with_capacity(ticks); n];

    for tick in 0..ticks {
        // Advance discount processes; the fixed model consumes no randomness
        // so its traces are seed-independent, as the model promises.
        if let DiscountModel::MeanRevertingWithSpikes {
            mean_fraction,
            volatility,
            reversion,
        } = spec.discount_model
        {
            for f in fractions.iter_mut() {
                let noise: f64 = rng.sample(StandardNormal);
                *f = (mean_fraction + reversion * (*f - mean_fraction) + volatility * noise)
                    .clamp(MIN_FRACTION, MAX_FRACTION);
            }
        }

        // Random spike arrivals (mean-reverting model only), with one
        // coupling draw per spike deciding whether it propagates to all
        // markets this tick.
        let mut spiking = vec![false; n];
        let mut propagate = false;
        if matches!(spec.discount_model, DiscountModel::MeanRevertingWithSpikes { .. }) {
            for s in spiking.iter_mut() {
                if rng.gen::<f64>() < spike_prob {
                    *s = true;
                    if rng.gen::<f64>() < rho {
                        propagate = true;
                    }
                }
            }
        }
        if Some(tick) == black_swan_tick {
            propagate = true;
        }
        if let Some(markets) = forced.get(&tick) {
            for &m in markets {
                spiking[m] = true;
            }
        }

        for m in 0..n {
            if propagate || spiking[m] {
                dwell[m] = spec.spike_dwell_ticks;
            }
            let price = if dwell[m] > 0 {
                dwell[m] -= 1;
                spec.spike_multiple * entries[m].on_demand_price
            } else {
                fractions[m] * entries[m].on_demand_price
            };
            prices[m].push(price);
        }
    }

    let mut out = BTreeMap::new();
    for (m, entry) in entries.iter().enumerate() {
        let series = PriceSeries::from_uniform(0, spec.step_seconds, &prices[m])?;
        out.insert(entry.market_id.clone(), series);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed_spec(fraction: f64) -> SyntheticScenarioSpec {
        SyntheticScenarioSpec {
            market_count: 3,
            discount_model: DiscountModel::FixedFraction { fraction },
            spike_rate_per_hour: 5.0, // ignored by the fixed model
            seed: 7,
            ..SyntheticScenarioSpec::default()
        }
    }

    #[test]
    fn fixed_fraction_prices_are_constant() {
        let spec = fixed_spec(0.2);
        let catalog = spec.default_catalog().unwrap();
        let traces = generate_synthetic(&spec, &catalog, 24 * 3600).unwrap();
        assert_eq!(traces.len(), 3);
        for (id, series) in &traces {
            let d = catalog.get(id).unwrap().on_demand_price;
            assert!(series.points().iter().all(|p| p.price == 0.2 * d));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticScenarioSpec {
            market_count: 4,
            correlation_model: CorrelationModel::SharedSpike { rho: 0.5 },
            spike_rate_per_hour: 2.0,
            seed: 42,
            ..SyntheticScenarioSpec::default()
        };
        let catalog = spec.default_catalog().unwrap();
        let a = generate_synthetic(&spec, &catalog, 48 * 3600).unwrap();
        let b = generate_synthetic(&spec, &catalog, 48 * 3600).unwrap();
        assert_eq!(a, b);
        let other = generate_synthetic(
            &SyntheticScenarioSpec { seed: 43, ..spec },
            &catalog,
            48 * 3600,
        )
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn fully_correlated_spikes_hit_all_markets_together() {
        let spec = SyntheticScenarioSpec {
            market_count: 4,
            correlation_model: CorrelationModel::AllCorrelated,
            spike_rate_per_hour: 4.0,
            seed: 11,
            ..SyntheticScenarioSpec::default()
        };
        let catalog = spec.default_catalog().unwrap();
        let traces = generate_synthetic(&spec, &catalog, 72 * 3600).unwrap();
        // Under full correlation every spike propagates, so at any tick the
        // set of spiked markets is either empty or all of them.
        let spiked: Vec<Vec<bool>> = traces
            .iter()
            .map(|(id, series)| {
                let d = catalog.get(id).unwrap().on_demand_price;
                series.points().iter().map(|p| p.price > d).collect()
            })
            .collect();
        let any_spike = spiked.iter().flatten().any(|&s| s);
        assert!(any_spike, "scenario produced no spikes; raise the rate");
        for tick in 0..spiked[0].len() {
            let states: Vec<bool> = spiked.iter().map(|m| m[tick]).collect();
            assert!(
                states.iter().all(|&s| s == states[0]),
                "tick {tick}: spike states diverge {states:?}"
            );
        }
    }

    #[test]
    fn black_swan_spikes_every_market() {
        let spec = SyntheticScenarioSpec {
            market_count: 3,
            discount_model: DiscountModel::FixedFraction { fraction: 0.2 },
            spike_rate_per_hour: 0.0,
            black_swan_time: Some(3600),
            seed: 1,
            ..SyntheticScenarioSpec::default()
        };
        let catalog = spec.default_catalog().unwrap();
        let traces = generate_synthetic(&spec, &catalog, 4 * 3600).unwrap();
        let swan_tick = 3600 / spec.step_seconds;
        for (id, series) in &traces {
            let d = catalog.get(id).unwrap().on_demand_price;
            for p in series.points() {
                let tick = p.timestamp / spec.step_seconds;
                let spiked = tick >= swan_tick && tick < swan_tick + 3;
                if spiked {
                    assert_eq!(p.price, 10.0 * d, "market {id} tick {tick}");
                } else {
                    assert_eq!(p.price, 0.2 * d, "market {id} tick {tick}");
                }
            }
        }
    }

    #[test]
    fn forced_spikes_are_scripted() {
        let mut spec = fixed_spec(0.5);
        let catalog = spec.default_catalog().unwrap();
        let target = catalog.ids().next().unwrap().clone();
        spec.forced_spikes.push(ForcedSpike {
            market_id: target.clone(),
            tick: 2,
        });
        let traces = generate_synthetic(&spec, &catalog, 3600 * 2).unwrap();
        let d = catalog.get(&target).unwrap().on_demand_price;
        let spiked: Vec<u64> = traces[&target]
            .points()
            .iter()
            .filter(|p| p.price > d)
            .map(|p| p.timestamp / spec.step_seconds)
            .collect();
        assert_eq!(spiked, vec![2, 3, 4]);
        // Other markets are untouched.
        for (id, series) in &traces {
            if id != &target {
                assert!(series.points().iter().all(|p| p.price < d));
            }
        }
    }

    #[test]
    fn toml_round_trip_with_defaults() {
        let text = r#"
            market_count = 2
            discount_model = "fixed"
            fixed_fraction = 0.25
            correlation_model = "shared"
            rho = 0.8
            seed = 99

            [[forced_spikes]]
            market_id = "m0"
            tick = 10
        "#;
        let spec = SyntheticScenarioSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.market_count, 2);
        assert_eq!(spec.discount_model, DiscountModel::FixedFraction { fraction: 0.25 });
        assert_eq!(spec.correlation_model, CorrelationModel::SharedSpike { rho: 0.8 });
        assert_eq!(spec.step_seconds, 300); // documented default
        assert_eq!(spec.spike_dwell_ticks, 3); // documented default
        assert_eq!(spec.seed, 99);
        assert_eq!(spec.forced_spikes.len(), 1);
        assert_eq!(spec.forced_spikes[0].tick, 10);

        assert!(SyntheticScenarioSpec::from_toml_str("rho = 1.5\ncorrelation_model = \"shared\"").is_err());
        assert!(SyntheticScenarioSpec::from_toml_str("unknown_key = 1").is_err());
    }

    #[test]
    fn catalog_size_must_match() {
        let spec = fixed_spec(0.2);
        let small = SyntheticScenarioSpec {
            market_count: 2,
            ..spec.clone()
        }
        .default_catalog()
        .unwrap();
        assert!(matches!(
            generate_synthetic(&spec, &small, 3600),
            Err(MarketDataError::InvalidScenario { .. })
        ));
    }
}
