//! The discrete-event simulation engine.
//!
//! Time is in whole seconds on the trace's clock. Events at the same
//! instant are ordered by a fixed priority (price updates first, then
//! revocations, warnings, capacity grants, and application events last)
//! and by insertion order within a priority, so every run of the same
//! scenario replays identically.
//!
//! Billing is segment-exact: a server is settled up to the current instant
//! before anything about its ownership, price, or existence changes, and
//! each settled segment is split among owners by their cost shares at that
//! moment. Summing an application's segments reproduces its reported cost.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::alloc::{
    capacity_of, servers_for_share, AllocatorConfig, AppId, ClusterState, ResourceVector,
    ServerId,
};
use crate::market::{align, MarketId};
use crate::portfolio::{
    filter_markets, greedy_select, restrict_to, solve, Portfolio, PortfolioProblem,
};
use crate::risk::{
    covariance_matrix, mttr_table, returns_vector, CovarianceMatrix, MttrEstimate,
    ReturnsVector,
};

use super::apps::{behavior_for, AppBehavior, AppCommon};
use super::{
    AppKind, AppReport, ClusterReport, CostSegment, EventLog, EventRecord,
    MarketRevocationRecord, PortfolioPolicy, Scenario, SimError, SimReport,
};

// ---- Event ordering ----

const PRIO_PRICE_TICK: u8 = 0;
const PRIO_REVOCATION: u8 = 1;
const PRIO_HARD_WARNING: u8 = 2;
const PRIO_SOFT_WARNING: u8 = 3;
const PRIO_PRICE_CHECK: u8 = 4;
const PRIO_MTTR_REFRESH: u8 = 5;
const PRIO_CAPACITY_GRANT: u8 = 6;
const PRIO_FREE_EXPIRY: u8 = 7;
const PRIO_CHECKPOINT_DONE: u8 = 8;
const PRIO_ARRIVAL: u8 = 9;
const PRIO_CHECKPOINT_TIMER: u8 = 10;
const PRIO_APP_DONE: u8 = 11;

#[derive(Debug, Clone)]
enum Payload {
    PriceTick { tick: usize },
    Revocation { market: usize },
    HardWarning { market: usize },
    SoftWarning { market: usize },
    /// Re-evaluate an app's price threshold and reacquisition conditions.
    PriceCheck { app: usize },
    MttrRefresh,
    ReplenishComplete { app: usize, market: usize, count: u32, share: ResourceVector },
    /// A market with deferred grants became available again.
    GrantRelease { market: usize },
    FreeListExpiry,
    CheckpointDone { app: usize, generation: u64 },
    Arrival { app: usize },
    CheckpointTimer { app: usize, generation: u64 },
    AppDone { app: usize, generation: u64 },
}

#[derive(Debug)]
struct QueuedEvent {
    time: u64,
    priority: u8,
    seq: u64,
    payload: Payload,
}

impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.priority, self.seq).cmp(&(other.time, other.priority, other.seq))
    }
}

impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueuedEvent {}

// ---- Per-application runtime state ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lifecycle {
    NotArrived,
    Active,
    /// Relinquished all servers until prices recover.
    WaitingForPrice,
    Done,
}

struct AppEntry {
    common: AppCommon,
    behavior: &'static dyn AppBehavior,
    id: AppId,
    arrival_abs: u64,
    state: Lifecycle,
    portfolio: Option<Portfolio>,
    /// `(market index, weight)` for every non-dust portfolio weight.
    weights: Vec<(usize, f64)>,
    /// `(market index, dedicated server count)` — what a private
    /// deployment of the weights needs; fixed at arrival.
    baseline: Vec<(usize, u32)>,
    mttr_seconds: f64,
    tau_seconds: u64,
    last_update: u64,
    rate: f64,
    done_gen: u64,
    timer_gen: u64,
    write_gen: u64,
    /// Progress value being checkpointed right now, if any.
    in_flight: Option<f64>,
    checkpoints_written: u32,
    revocation_count: u32,
    transient_cost: f64,
    completion_abs: Option<u64>,
    /// Deferred grants and in-flight replenishments owed to this app.
    pending_sources: u32,
    price_above: bool,
}

struct PendingGrant {
    app: usize,
    market: usize,
    count: u32,
    share: ResourceVector,
}

struct Billing {
    market: usize,
    last_billed: u64,
    warned_at: Option<u64>,
}

// ---- Engine ----

struct Engine<'s> {
    scenario: &'s Scenario,
    markets: Vec<MarketId>,
    capacities: Vec<ResourceVector>,
    on_demand: Vec<f64>,
    bids: Vec<f64>,
    series: Vec<Vec<f64>>,
    grid_start: u64,
    tick_count: usize,
    horizon_abs: u64,
    current_price: Vec<f64>,
    market_down: Vec<bool>,
    soft_armed: Vec<bool>,
    c_full: ReturnsVector,
    v_full: CovarianceMatrix,
    mttr_estimates: Vec<MttrEstimate>,
    cluster: ClusterState,
    apps: Vec<AppEntry>,
    app_index: BTreeMap<AppId, usize>,
    queue: BinaryHeap<Reverse<QueuedEvent>>,
    seq: u64,
    now: u64,
    billing: BTreeMap<ServerId, Billing>,
    pending_grants: Vec<PendingGrant>,
    revocations: Vec<MarketRevocationRecord>,
    black_swan: bool,
    unattributed: f64,
    server_seconds: f64,
    log: Option<EventLog>,
    all_done: bool,
}

/// Runs the scenario to completion and reports per-application and
/// cluster-level outcomes. Fails with
/// [`TraceHorizonExceeded`](SimError::TraceHorizonExceeded) when the price
/// traces end before every application finishes.
pub fn run(scenario: &Scenario) -> Result<SimReport, SimError> {
    scenario.validate()?;
    let mut engine = Engine::new(scenario)?;
    engine.run_loop()?;
    engine.report()
}

impl<'s> Engine<'s> {
    fn new(scenario: &'s Scenario) -> Result<Self, SimError> {
        let aligned = align(&scenario.traces, scenario.tick_seconds)?;
        let trace_ids: Vec<&MarketId> = aligned.markets().iter().collect();
        let catalog_ids: Vec<&MarketId> = scenario.catalog.ids().collect();
        if trace_ids != catalog_ids {
            return Err(SimError::InvalidScenario {
                reason: "catalog and traces must cover exactly the same markets".to_string(),
            });
        }

        let c_full = returns_vector(&aligned, &scenario.catalog)?;
        let v_full =
            covariance_matrix(&aligned, &scenario.catalog, &scenario.bid_policy, scenario.cov_kind)?;
        let mttr_estimates = mttr_table(&aligned, &scenario.catalog, &scenario.bid_policy)?;

        let markets: Vec<MarketId> = aligned.markets().to_vec();
        let mut capacities = Vec::with_capacity(markets.len());
        let mut on_demand = Vec::with_capacity(markets.len());
        let mut bids = Vec::with_capacity(markets.len());
        for id in &markets {
            let entry = scenario.catalog.get(id).expect("checked above");
            capacities.push(capacity_of(entry));
            on_demand.push(entry.on_demand_price);
            bids.push(scenario.bid_policy.bid_for(entry));
        }
        let series: Vec<Vec<f64>> =
            (0..markets.len()).map(|i| aligned.series(i).to_vec()).collect();
        let grid = *aligned.grid();

        let cluster = ClusterState::new(
            scenario.catalog.clone(),
            AllocatorConfig {
                free_list_hold_seconds: scenario.free_list_hold_seconds,
                ..AllocatorConfig::default()
            },
        );

        let mut apps = Vec::with_capacity(scenario.applications.len());
        let mut app_index = BTreeMap::new();
        for scheduled in &scenario.applications {
            let id = scheduled.spec.name.clone();
            app_index.insert(id.clone(), apps.len());
            apps.push(AppEntry {
                behavior: behavior_for(scheduled.spec.kind),
                common: AppCommon::new(scheduled.spec.clone()),
                id,
                arrival_abs: grid.start + scheduled.arrival_time,
                state: Lifecycle::NotArrived,
                portfolio: None,
                weights: Vec::new(),
                baseline: Vec::new(),
                mttr_seconds: 0.0,
                tau_seconds: 0,
                last_update: grid.start,
                rate: 0.0,
                done_gen: 0,
                timer_gen: 0,
                write_gen: 0,
                in_flight: None,
                checkpoints_written: 0,
                revocation_count: 0,
                transient_cost: 0.0,
                completion_abs: None,
                pending_sources: 0,
                price_above: false,
            });
        }

        let n = markets.len();
        let mut engine = Engine {
            scenario,
            markets,
            capacities,
            on_demand,
            bids,
            series,
            grid_start: grid.start,
            tick_count: grid.count,
            horizon_abs: grid.last_timestamp(),
            current_price: vec![0.0; n],
            market_down: vec![false; n],
            soft_armed: vec![false; n],
            c_full,
            v_full,
            mttr_estimates,
            cluster,
            apps,
            app_index,
            queue: BinaryHeap::new(),
            seq: 0,
            now: grid.start,
            billing: BTreeMap::new(),
            pending_grants: Vec::new(),
            revocations: Vec::new(),
            black_swan: false,
            unattributed: 0.0,
            server_seconds: 0.0,
            log: scenario.record_event_log.then(EventLog::default),
            all_done: scenario.applications.is_empty(),
        };

        engine.push(grid.start, PRIO_PRICE_TICK, Payload::PriceTick { tick: 0 });
        engine.push(
            grid.start + scenario.mttr_refresh_seconds,
            PRIO_MTTR_REFRESH,
            Payload::MttrRefresh,
        );
        for i in 0..engine.apps.len() {
            engine.push(engine.apps[i].arrival_abs, PRIO_ARRIVAL, Payload::Arrival { app: i });
        }
        Ok(engine)
    }

    // ---- Plumbing ----

    fn push(&mut self, time: u64, priority: u8, payload: Payload) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(QueuedEvent { time, priority, seq, payload }));
    }

    fn now_off(&self) -> u64 {
        self.now - self.grid_start
    }

    fn log_event(&mut self, kind: &str, subject: impl Into<String>) {
        let time = self.now_off();
        if let Some(log) = self.log.as_mut() {
            log.events.push(EventRecord { time, kind: kind.to_string(), subject: subject.into() });
        }
    }

    /// Bills the server for `[last_billed, bill_until)` at the current
    /// price, splits the cost among its owners, and advances the billing
    /// cursor to the present.
    fn settle_to(&mut self, id: ServerId, bill_until: u64) {
        let Some(billing) = self.billing.get(&id) else {
            return;
        };
        let market = billing.market;
        let start = billing.last_billed;
        let end = bill_until.min(self.now);
        if end > start {
            let duration = (end - start) as f64;
            self.server_seconds += duration;
            let price = self.current_price[market];
            let cost = price * duration / 3600.0;
            let shares: Vec<(AppId, f64)> = self
                .cluster
                .server(id)
                .map(|server| {
                    server
                        .owner_apps
                        .keys()
                        .map(|app| (app.clone(), server.cost_share(app)))
                        .collect()
                })
                .unwrap_or_default();
            let mut app_costs = Vec::with_capacity(shares.len());
            if shares.is_empty() {
                self.unattributed += cost;
            } else {
                for (app, frac) in shares {
                    let amount = frac * cost;
                    if let Some(&idx) = self.app_index.get(&app) {
                        self.apps[idx].transient_cost += amount;
                    }
                    app_costs.push((app, amount));
                }
            }
            if let Some(log) = self.log.as_mut() {
                log.cost_segments.push(CostSegment {
                    server: id,
                    market: self.markets[market].clone(),
                    start: start - self.grid_start,
                    end: end - self.grid_start,
                    price_per_hour: price,
                    cost,
                    app_costs,
                });
            }
        }
        if let Some(billing) = self.billing.get_mut(&id) {
            billing.last_billed = self.now;
        }
    }

    fn settle_all(&mut self) {
        let ids: Vec<ServerId> = self.billing.keys().copied().collect();
        for id in ids {
            self.settle_to(id, self.now);
        }
    }

    /// Registers billing for servers that just appeared (existing entries
    /// are left untouched: a reused free-listed server keeps its cursor).
    fn track_servers(&mut self, ids: &[ServerId]) {
        for &id in ids {
            if self.billing.contains_key(&id) {
                continue;
            }
            let market = self
                .cluster
                .server(id)
                .and_then(|s| self.market_idx(&s.market))
                .expect("new server exists in a known market");
            self.billing
                .insert(id, Billing { market, last_billed: self.now, warned_at: None });
        }
    }

    fn market_idx(&self, id: &MarketId) -> Option<usize> {
        self.markets.binary_search(id).ok()
    }

    // ---- Portfolio pipeline ----

    fn solve_for_app(&self, app: usize) -> Result<Portfolio, SimError> {
        let spec = &self.apps[app].common.spec;
        let candidates =
            filter_markets(&self.scenario.catalog, &self.mttr_estimates, &spec.constraints)?;
        let (c_sub, v_sub) = restrict_to(&self.c_full, &self.v_full, &candidates)?;

        let portfolio = match &spec.portfolio_policy {
            PortfolioPolicy::Optimize => {
                solve(&PortfolioProblem::new(&c_sub, &v_sub, spec.alpha)?)?
            }
            PortfolioPolicy::EqualTopK { k } => greedy_select(&c_sub, Some(&v_sub), *k)?,
            PortfolioPolicy::FixedWeights { weights } => {
                let mut w = vec![0.0; candidates.len()];
                for (market, x) in weights {
                    match candidates.binary_search(market) {
                        Ok(i) => w[i] += x,
                        Err(_) => {
                            return Err(SimError::InvalidScenario {
                                reason: format!(
                                    "{}: fixed weight on {market} which the market \
                                     constraints exclude",
                                    spec.name
                                ),
                            })
                        }
                    }
                }
                Portfolio::from_problem(&PortfolioProblem::new(&c_sub, &v_sub, spec.alpha)?, w)?
            }
        };
        Ok(portfolio)
    }

    fn weighted_mttr(&self, weights: &[(usize, f64)]) -> f64 {
        weights
            .iter()
            .map(|&(i, w)| w * self.mttr_estimates[i].mttr_seconds)
            .sum()
    }

    fn tau_for(&self, app: usize) -> u64 {
        let e = &self.apps[app];
        match e.common.spec.checkpoint_write_seconds {
            Some(delta) => {
                let tau = (2.0 * delta * e.mttr_seconds).sqrt().round();
                (tau as u64).max(1)
            }
            None => 0,
        }
    }

    // ---- Progress accounting ----

    fn advance(&mut self, app: usize) {
        let e = &mut self.apps[app];
        if e.state == Lifecycle::Active && self.now > e.last_update {
            let elapsed = (self.now - e.last_update) as f64;
            e.common.progress =
                (e.common.progress + e.rate * elapsed).min(e.common.spec.work_seconds);
        }
        e.last_update = self.now;
    }

    /// Recomputes the execution rate from the current allocation and
    /// reschedules the completion event.
    fn refresh_rate(&mut self, app: usize) {
        let (rate, remaining) = {
            let e = &self.apps[app];
            if e.state != Lifecycle::Active {
                (0.0, 0.0)
            } else {
                let allocated = self.cluster.app_allocated(&e.id);
                let r = e.common.spec.r;
                let mut fraction = f64::INFINITY;
                if r.cpu > 0.0 {
                    fraction = fraction.min(allocated.cpu / r.cpu);
                }
                if r.mem_gb > 0.0 {
                    fraction = fraction.min(allocated.mem_gb / r.mem_gb);
                }
                if !fraction.is_finite() {
                    fraction = 1.0;
                }
                if fraction > 1.0 - super::apps::FULL_RATE_EPS {
                    fraction = 1.0;
                }
                (e.behavior.rate_from_fraction(fraction), e.common.remaining())
            }
        };
        let e = &mut self.apps[app];
        e.rate = rate;
        e.done_gen += 1;
        if e.state == Lifecycle::Active && rate > 0.0 {
            let eta = if remaining <= 1e-6 { 0 } else { ((remaining / rate).ceil() as u64).max(1) };
            let gen = e.done_gen;
            let at = self.now + eta;
            self.push(at, PRIO_APP_DONE, Payload::AppDone { app, generation: gen });
        }
    }

    // ---- Allocation ----

    /// Gives the app its portfolio's servers. Markets currently priced
    /// above the bid are deferred: the provider grants them once the price
    /// recovers.
    fn acquire(&mut self, app: usize) -> Result<(), SimError> {
        self.settle_all();
        let (id, r, portfolio, weights) = {
            let e = &self.apps[app];
            (
                e.id.clone(),
                e.common.spec.r,
                e.portfolio.clone().expect("portfolio solved at arrival"),
                e.weights.clone(),
            )
        };
        let down: BTreeSet<&MarketId> = weights
            .iter()
            .filter(|&&(i, _)| self.market_down[i])
            .map(|&(i, _)| &self.markets[i])
            .collect();
        let plan = match self.scenario.sharing_mode {
            super::SharingMode::Private => self.cluster.allocate_private_where(
                &id,
                &r,
                &portfolio,
                |m| !down.contains(m),
            )?,
            super::SharingMode::Shared => self.cluster.allocate_shared_where(
                &id,
                &r,
                &portfolio,
                |m| !down.contains(m),
            )?,
        };
        self.track_servers(&plan.server_ids());
        for &(i, w) in &weights {
            if self.market_down[i] {
                let count = servers_for_share(w, &r, &self.capacities[i]);
                if count > 0 {
                    let share = r.scale(w / f64::from(count));
                    self.pending_grants.push(PendingGrant { app, market: i, count, share });
                    self.apps[app].pending_sources += 1;
                }
            }
        }
        let e = &mut self.apps[app];
        e.state = Lifecycle::Active;
        e.last_update = self.now;
        self.refresh_rate(app);
        Ok(())
    }

    /// Releases every server the app holds and cancels everything owed to
    /// it (deferred grants, in-flight replenishments, timers).
    fn release_app(&mut self, app: usize) -> Result<(), SimError> {
        self.settle_all();
        let id = self.apps[app].id.clone();
        if self.cluster.has_app(&id) {
            let freed = self.cluster.release(&id, self.now)?;
            if !freed.is_empty() {
                self.push(
                    self.now + self.scenario.free_list_hold_seconds,
                    PRIO_FREE_EXPIRY,
                    Payload::FreeListExpiry,
                );
            }
        }
        self.pending_grants.retain(|g| g.app != app);
        let e = &mut self.apps[app];
        e.pending_sources = 0;
        e.done_gen += 1;
        e.timer_gen += 1;
        e.write_gen += 1;
        e.in_flight = None;
        e.rate = 0.0;
        Ok(())
    }

    fn weighted_price(&self, weights: &[(usize, f64)]) -> f64 {
        weights
            .iter()
            .map(|&(i, w)| w * self.current_price[i] / self.on_demand[i])
            .sum()
    }

    // ---- Event handlers ----

    fn on_price_tick(&mut self, tick: usize) {
        self.settle_all();
        let first = tick == 0;
        for i in 0..self.markets.len() {
            self.current_price[i] = self.series[i][tick];
        }
        let mut all_down = true;
        for i in 0..self.markets.len() {
            let price = self.current_price[i];
            let bid = self.bids[i];
            let down = price > bid;
            if !down {
                all_down = false;
            }
            if first {
                self.market_down[i] = down;
                self.soft_armed[i] = price < self.scenario.soft_warning_threshold * bid;
                continue;
            }
            if down && !self.market_down[i] {
                self.push(self.now, PRIO_HARD_WARNING, Payload::HardWarning { market: i });
                self.push(
                    self.now + self.scenario.warning_seconds,
                    PRIO_REVOCATION,
                    Payload::Revocation { market: i },
                );
            }
            if !down
                && self.market_down[i]
                && self.pending_grants.iter().any(|g| g.market == i)
            {
                self.push(self.now, PRIO_CAPACITY_GRANT, Payload::GrantRelease { market: i });
            }
            self.market_down[i] = down;
            let soft_level = self.scenario.soft_warning_threshold * bid;
            if price < soft_level {
                self.soft_armed[i] = true;
            } else if down {
                self.soft_armed[i] = false;
            } else if self.soft_armed[i] {
                self.soft_armed[i] = false;
                self.push(self.now, PRIO_SOFT_WARNING, Payload::SoftWarning { market: i });
            }
        }
        if all_down && !self.markets.is_empty() {
            self.black_swan = true;
        }
        for a in 0..self.apps.len() {
            let e = &self.apps[a];
            let watches_price = e.common.spec.price_threshold.is_some()
                || e.common.spec.kind == AppKind::BagOfTasks;
            if watches_price
                && matches!(e.state, Lifecycle::Active | Lifecycle::WaitingForPrice)
            {
                self.push(self.now, PRIO_PRICE_CHECK, Payload::PriceCheck { app: a });
            }
        }
        if !self.all_done && tick + 1 < self.tick_count {
            self.push(
                self.now + self.scenario.tick_seconds,
                PRIO_PRICE_TICK,
                Payload::PriceTick { tick: tick + 1 },
            );
        }
    }

    fn on_hard_warning(&mut self, market: usize) {
        let id = self.markets[market].clone();
        let warned = self.cluster.warn_market(&id);
        for sid in &warned {
            if let Some(b) = self.billing.get_mut(sid) {
                b.warned_at = Some(self.now);
            }
        }
        self.log_event("hard-revocation-warning", id.as_str());

        // Affected apps get a last-minute checkpoint attempt if their model
        // supports one and the write can finish inside the warning window.
        let mut affected = BTreeSet::new();
        for sid in &warned {
            if let Some(server) = self.cluster.server(*sid) {
                for app in server.owner_apps.keys() {
                    if let Some(&idx) = self.app_index.get(app) {
                        affected.insert(idx);
                    }
                }
            }
        }
        for a in affected {
            let (wants, delta) = {
                let e = &self.apps[a];
                (
                    e.state == Lifecycle::Active
                        && e.behavior.checkpoint_on_warning()
                        && e.in_flight.is_none(),
                    e.common.spec.checkpoint_write_seconds,
                )
            };
            let Some(delta) = delta else { continue };
            if !wants || (self.scenario.warning_seconds as f64) < delta {
                continue;
            }
            self.advance(a);
            let e = &mut self.apps[a];
            if e.common.progress > e.behavior.durable_progress(&e.common) + 1e-9 {
                e.in_flight = Some(e.common.progress);
                let gen = e.write_gen;
                let at = self.now + delta.ceil() as u64;
                self.push(
                    at,
                    PRIO_CHECKPOINT_DONE,
                    Payload::CheckpointDone { app: a, generation: gen },
                );
            }
        }
    }

    fn on_soft_warning(&mut self, market: usize) {
        let id = self.markets[market].clone();
        self.log_event("soft-revocation-warning", id.as_str());
    }

    fn on_revocation(&mut self, market: usize) -> Result<(), SimError> {
        let id = self.markets[market].clone();
        let ids: Vec<ServerId> = self
            .cluster
            .servers()
            .filter(|s| s.market == id)
            .map(|s| s.id)
            .collect();

        // Settle before anything disappears. Without charge-through, the
        // provider refunds the interval after the warning on servers it
        // takes back.
        for &sid in &ids {
            let until = if self.scenario.charge_through_revocation {
                self.now
            } else {
                self.billing.get(&sid).and_then(|b| b.warned_at).unwrap_or(self.now)
            };
            self.settle_to(sid, until);
        }

        // Per-app losses, measured before the servers vanish.
        let mut lost: BTreeMap<usize, (ResourceVector, u32)> = BTreeMap::new();
        for &sid in &ids {
            let Some(server) = self.cluster.server(sid) else { continue };
            for (app, share) in &server.owner_apps {
                if let Some(&idx) = self.app_index.get(app) {
                    let entry = lost.entry(idx).or_insert((ResourceVector::ZERO, 0));
                    entry.0 = entry.0.plus(share);
                    entry.1 += 1;
                }
            }
        }
        let totals: BTreeMap<usize, ResourceVector> = lost
            .keys()
            .map(|&a| (a, self.cluster.app_allocated(&self.apps[a].id)))
            .collect();

        let revoked = self.cluster.revoke_market(&id);
        for sid in &ids {
            self.billing.remove(sid);
        }
        self.revocations.push(MarketRevocationRecord {
            time: self.now_off(),
            market: id.clone(),
            servers_lost: revoked.len() as u32,
        });
        self.log_event("revocation", id.as_str());

        for (a, (lost_share, lost_servers)) in lost {
            if self.apps[a].state != Lifecycle::Active {
                continue;
            }
            self.advance(a);
            let total = totals[&a];
            let fraction = if total.cpu > 1e-12 {
                lost_share.cpu / total.cpu
            } else if total.mem_gb > 1e-12 {
                lost_share.mem_gb / total.mem_gb
            } else {
                1.0
            }
            .clamp(0.0, 1.0);
            let e = &mut self.apps[a];
            e.behavior.apply_revocation(&mut e.common, fraction);
            e.revocation_count += 1;
            e.write_gen += 1;
            e.in_flight = None;
            let wants_replenish = e.behavior.wants_replenish(&e.common) && lost_servers > 0;
            if wants_replenish {
                let share = lost_share.scale(1.0 / f64::from(lost_servers));
                e.pending_sources += 1;
                let at = self.now + self.scenario.replenish_latency_seconds;
                self.push(
                    at,
                    PRIO_CAPACITY_GRANT,
                    Payload::ReplenishComplete {
                        app: a,
                        market,
                        count: lost_servers,
                        share,
                    },
                );
            }
            self.refresh_rate(a);
        }
        Ok(())
    }

    fn on_price_check(&mut self, app: usize) -> Result<(), SimError> {
        if !matches!(self.apps[app].state, Lifecycle::Active | Lifecycle::WaitingForPrice) {
            return Ok(());
        }
        if let Some(threshold) = self.apps[app].common.spec.price_threshold {
            let p = self.weighted_price(&self.apps[app].weights);
            let above = p > threshold;
            if above != self.apps[app].price_above {
                self.apps[app].price_above = above;
                let name = self.apps[app].id.clone();
                self.log_event("price-threshold-crossed", name.as_str());
                if self.apps[app].behavior.releases_on_price_threshold() {
                    if above && self.apps[app].state == Lifecycle::Active {
                        self.advance(app);
                        self.release_app(app)?;
                        self.apps[app].state = Lifecycle::WaitingForPrice;
                        self.log_event("release", name.as_str());
                    } else if !above && self.apps[app].state == Lifecycle::WaitingForPrice {
                        self.acquire(app)?;
                        self.log_event("reacquire", name.as_str());
                    }
                }
            }
        }
        // A serverless elastic app reacquires as soon as any of its markets
        // is available again (a revocation with no replenishment policy
        // would otherwise strand it).
        let e = &self.apps[app];
        if e.state == Lifecycle::Active
            && e.common.spec.kind == AppKind::BagOfTasks
            && !e.price_above
            && e.pending_sources == 0
            && self.cluster.app_allocated(&e.id).is_negligible()
            && e.weights.iter().any(|&(i, _)| !self.market_down[i])
        {
            let name = e.id.clone();
            if self.cluster.has_app(&name) {
                self.cluster.release(&name, self.now)?;
            }
            self.acquire(app)?;
            self.log_event("reacquire", name.as_str());
        }
        Ok(())
    }

    fn on_mttr_refresh(&mut self) {
        self.log_event("mttr-refresh", "");
        for a in 0..self.apps.len() {
            if self.apps[a].state != Lifecycle::Active {
                continue;
            }
            let mttr = self.weighted_mttr(&self.apps[a].weights);
            self.apps[a].mttr_seconds = mttr;
            let tau = self.tau_for(a);
            let e = &mut self.apps[a];
            if tau != e.tau_seconds {
                e.tau_seconds = tau;
                if e.behavior.periodic_checkpoints() && tau > 0 {
                    e.timer_gen += 1;
                    let gen = e.timer_gen;
                    let at = self.now + tau;
                    self.push(
                        at,
                        PRIO_CHECKPOINT_TIMER,
                        Payload::CheckpointTimer { app: a, generation: gen },
                    );
                }
            }
        }
        if !self.all_done {
            self.push(
                self.now + self.scenario.mttr_refresh_seconds,
                PRIO_MTTR_REFRESH,
                Payload::MttrRefresh,
            );
        }
    }

    fn on_replenish_complete(
        &mut self,
        app: usize,
        market: usize,
        count: u32,
        share: ResourceVector,
    ) -> Result<(), SimError> {
        {
            let e = &mut self.apps[app];
            e.pending_sources = e.pending_sources.saturating_sub(1);
            if e.state != Lifecycle::Active {
                return Ok(());
            }
        }
        if self.market_down[market] {
            // The replacement market is itself above the bid; hold the
            // grant until it recovers.
            self.pending_grants.push(PendingGrant { app, market, count, share });
            self.apps[app].pending_sources += 1;
            return Ok(());
        }
        self.settle_all();
        self.advance(app);
        let id = self.apps[app].id.clone();
        if !self.cluster.has_app(&id) {
            return Ok(());
        }
        let ids = self.cluster.add_servers(&id, &self.markets[market], count, share)?;
        self.track_servers(&ids);
        self.refresh_rate(app);
        self.log_event("replenish-complete", id.as_str());
        Ok(())
    }

    fn on_grant_release(&mut self, market: usize) -> Result<(), SimError> {
        if self.market_down[market] {
            return Ok(());
        }
        let due: Vec<PendingGrant> = {
            let mut due = Vec::new();
            let mut keep = Vec::new();
            for g in self.pending_grants.drain(..) {
                if g.market == market {
                    due.push(g);
                } else {
                    keep.push(g);
                }
            }
            self.pending_grants = keep;
            due
        };
        for grant in due {
            let e = &mut self.apps[grant.app];
            e.pending_sources = e.pending_sources.saturating_sub(1);
            if e.state != Lifecycle::Active {
                continue;
            }
            self.settle_all();
            self.advance(grant.app);
            let id = self.apps[grant.app].id.clone();
            if !self.cluster.has_app(&id) {
                continue;
            }
            let ids =
                self.cluster
                    .add_servers(&id, &self.markets[market], grant.count, grant.share)?;
            self.track_servers(&ids);
            self.refresh_rate(grant.app);
            self.log_event("grant-release", id.as_str());
        }
        Ok(())
    }

    fn on_free_list_expiry(&mut self) {
        self.settle_all();
        let expired = self.cluster.expire_free_list(self.now);
        for id in &expired {
            self.billing.remove(id);
            self.log_event("free-list-expiry", format!("{id}"));
        }
    }

    fn on_checkpoint_timer(&mut self, app: usize, generation: u64) {
        let (valid, tau, delta) = {
            let e = &self.apps[app];
            (
                e.state == Lifecycle::Active && generation == e.timer_gen,
                e.tau_seconds,
                e.common.spec.checkpoint_write_seconds,
            )
        };
        let (Some(delta), true) = (delta, valid && tau > 0) else {
            return;
        };
        // Starts stay anchored on the cadence regardless of whether this
        // start writes anything.
        let at = self.now + tau;
        self.push(
            at,
            PRIO_CHECKPOINT_TIMER,
            Payload::CheckpointTimer { app, generation },
        );
        self.advance(app);
        let e = &mut self.apps[app];
        if e.in_flight.is_none()
            && e.common.progress > e.behavior.durable_progress(&e.common) + 1e-9
        {
            e.in_flight = Some(e.common.progress);
            let gen = e.write_gen;
            let done_at = self.now + delta.ceil() as u64;
            self.push(
                done_at,
                PRIO_CHECKPOINT_DONE,
                Payload::CheckpointDone { app, generation: gen },
            );
        }
    }

    fn on_checkpoint_done(&mut self, app: usize, generation: u64) {
        let e = &mut self.apps[app];
        if e.state != Lifecycle::Active || generation != e.write_gen {
            return;
        }
        let Some(snapshot) = e.in_flight.take() else {
            return;
        };
        e.common.checkpointed = e.common.checkpointed.max(snapshot);
        e.checkpoints_written += 1;
        let name = e.id.clone();
        self.log_event("checkpoint-complete", name.as_str());
    }

    fn on_arrival(&mut self, app: usize) -> Result<(), SimError> {
        if self.apps[app].state != Lifecycle::NotArrived {
            return Ok(());
        }
        let portfolio = self.solve_for_app(app)?;
        let weights: Vec<(usize, f64)> = portfolio
            .markets()
            .iter()
            .zip(portfolio.truncated_weights())
            .filter(|&(_, w)| w > 0.0)
            .map(|(m, w)| (self.market_idx(m).expect("portfolio markets are catalog markets"), w))
            .collect();
        let baseline: Vec<(usize, u32)> = weights
            .iter()
            .map(|&(i, w)| {
                (i, servers_for_share(w, &self.apps[app].common.spec.r, &self.capacities[i]))
            })
            .collect();
        let mttr = self.weighted_mttr(&weights);
        {
            let e = &mut self.apps[app];
            e.portfolio = Some(portfolio);
            e.weights = weights;
            e.baseline = baseline;
            e.mttr_seconds = mttr;
        }
        self.apps[app].tau_seconds = self.tau_for(app);
        let name = self.apps[app].id.clone();
        self.log_event("app-arrival", name.as_str());

        // An elastic app arriving while prices are over its threshold waits
        // instead of buying in at the top.
        let spec = &self.apps[app].common.spec;
        if let (Some(threshold), true) = (
            spec.price_threshold,
            self.apps[app].behavior.releases_on_price_threshold(),
        ) {
            let p = self.weighted_price(&self.apps[app].weights);
            if p > threshold {
                self.apps[app].price_above = true;
                self.apps[app].state = Lifecycle::WaitingForPrice;
                return Ok(());
            }
        }
        self.acquire(app)?;
        let e = &self.apps[app];
        if e.behavior.periodic_checkpoints() && e.tau_seconds > 0 {
            let gen = e.timer_gen;
            let at = self.now + e.tau_seconds;
            self.push(
                at,
                PRIO_CHECKPOINT_TIMER,
                Payload::CheckpointTimer { app, generation: gen },
            );
        }
        Ok(())
    }

    fn on_app_done(&mut self, app: usize, generation: u64) -> Result<(), SimError> {
        if self.apps[app].state != Lifecycle::Active || generation != self.apps[app].done_gen {
            return Ok(());
        }
        self.advance(app);
        if self.apps[app].common.remaining() > 1e-6 {
            self.refresh_rate(app);
            return Ok(());
        }
        self.apps[app].common.progress = self.apps[app].common.spec.work_seconds;
        self.apps[app].completion_abs = Some(self.now);
        self.release_app(app)?;
        self.apps[app].state = Lifecycle::Done;
        let name = self.apps[app].id.clone();
        self.log_event("app-done", name.as_str());
        if self.apps.iter().all(|e| e.state == Lifecycle::Done) {
            self.all_done = true;
        }
        Ok(())
    }

    // ---- Main loop ----

    fn run_loop(&mut self) -> Result<(), SimError> {
        while let Some(Reverse(event)) = self.queue.pop() {
            if event.time > self.horizon_abs && !self.all_done {
                return Err(self.horizon_error());
            }
            debug_assert!(event.time >= self.now, "events replay in order");
            self.now = event.time;
            match event.payload {
                Payload::PriceTick { tick } => self.on_price_tick(tick),
                Payload::Revocation { market } => self.on_revocation(market)?,
                Payload::HardWarning { market } => self.on_hard_warning(market),
                Payload::SoftWarning { market } => self.on_soft_warning(market),
                Payload::PriceCheck { app } => self.on_price_check(app)?,
                Payload::MttrRefresh => self.on_mttr_refresh(),
                Payload::ReplenishComplete { app, market, count, share } => {
                    self.on_replenish_complete(app, market, count, share)?
                }
                Payload::GrantRelease { market } => self.on_grant_release(market)?,
                Payload::FreeListExpiry => self.on_free_list_expiry(),
                Payload::CheckpointDone { app, generation } => {
                    self.on_checkpoint_done(app, generation)
                }
                Payload::Arrival { app } => self.on_arrival(app)?,
                Payload::CheckpointTimer { app, generation } => {
                    self.on_checkpoint_timer(app, generation)
                }
                Payload::AppDone { app, generation } => self.on_app_done(app, generation)?,
            }
        }
        if !self.all_done {
            return Err(self.horizon_error());
        }
        Ok(())
    }

    fn horizon_error(&self) -> SimError {
        let mut unfinished: Vec<AppId> = self
            .apps
            .iter()
            .filter(|e| e.state != Lifecycle::Done)
            .map(|e| e.id.clone())
            .collect();
        unfinished.sort();
        SimError::TraceHorizonExceeded {
            time: self.horizon_abs - self.grid_start,
            unfinished,
        }
    }

    fn report(&self) -> Result<SimReport, SimError> {
        let mut order: Vec<usize> = (0..self.apps.len()).collect();
        order.sort_by(|&a, &b| self.apps[a].id.cmp(&self.apps[b].id));
        let apps = order
            .into_iter()
            .map(|i| {
                let e = &self.apps[i];
                let completion_abs = e.completion_abs.expect("all applications finished");
                let work = e.common.spec.work_seconds;
                let wall = (completion_abs - e.arrival_abs) as f64;
                let baseline_cost: f64 = e
                    .baseline
                    .iter()
                    .map(|&(m, n)| f64::from(n) * self.on_demand[m] * work / 3600.0)
                    .sum();
                AppReport {
                    app: e.id.clone(),
                    kind: e.common.spec.kind.as_str(),
                    arrival_time: e.arrival_abs - self.grid_start,
                    completion_time: completion_abs - self.grid_start,
                    baseline_on_demand_time: work,
                    runtime_increase_fraction: wall / work - 1.0,
                    transient_cost: e.transient_cost,
                    on_demand_cost_baseline: baseline_cost,
                    savings_fraction: 1.0 - e.transient_cost / baseline_cost,
                    revocation_count: e.revocation_count,
                    checkpoints_written: e.checkpoints_written,
                    rollback_work_lost_seconds: e.common.rollback_lost_seconds,
                }
            })
            .collect();
        Ok(SimReport {
            apps,
            cluster: ClusterReport {
                total_server_hours: self.server_seconds / 3600.0,
                unattributed_cost: self.unattributed,
                revocations: self.revocations.clone(),
                black_swan_observed: self.black_swan,
            },
            event_log: self.log.clone(),
        })
    }
}
