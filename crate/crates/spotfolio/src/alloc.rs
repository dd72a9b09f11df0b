//! Server allocation: turning portfolio weights into concrete servers.
//!
//! Given an application's resource demand `r` and portfolio weights `x`,
//! market `i` must host the demand share `x_i·r`. The number of servers that
//! takes is driven by whichever resource dimension is binding:
//!
//! `n_i = ceil(max{x_i·r_cpu / CPU_i, x_i·r_mem / MEM_i})`
//!
//! Rounding up leaves surplus capacity on the last server of each market.
//! Private mode dedicates every server to its application; shared mode
//! carves containers out of surplus on running servers first and only then
//! requests new ones, which is where statistical multiplexing recovers the
//! rounding waste. Released servers are parked on a free list for a hold
//! period before termination so that a quick re-acquire is free.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{MarketCatalog, MarketCatalogEntry, MarketId};
use crate::portfolio::Portfolio;

/// Released servers are held for reuse this long before termination.
pub const DEFAULT_FREE_LIST_HOLD_SECONDS: u64 = 600;
/// Resource amounts at or below this are treated as zero.
pub const DEMAND_EPSILON: f64 = 1e-9;

// ---- Errors ----

#[derive(Debug, Error)]
pub enum AllocError {
    #[error("unknown market {0}")]
    UnknownMarket(MarketId),
    #[error("unknown application {0} (never allocated, or already released)")]
    UnknownApp(AppId),
    #[error("application {0} already has an allocation")]
    DuplicateApp(AppId),
    #[error("resource demand must be finite and non-negative, got ({cpu}, {mem_gb})")]
    InvalidDemand { cpu: f64, mem_gb: f64 },
}

// ---- Resource arithmetic ----

/// A (cpu cores, memory GB) pair. Fractional values are meaningful: shared
/// containers take fractional cores, and demand shares are weight-scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceVector {
    pub cpu: f64,
    pub mem_gb: f64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector { cpu: 0.0, mem_gb: 0.0 };

    pub fn new(cpu: f64, mem_gb: f64) -> Self {
        ResourceVector { cpu, mem_gb }
    }

    pub fn scale(&self, s: f64) -> Self {
        ResourceVector { cpu: self.cpu * s, mem_gb: self.mem_gb * s }
    }

    pub fn plus(&self, other: &Self) -> Self {
        ResourceVector {
            cpu: self.cpu + other.cpu,
            mem_gb: self.mem_gb + other.mem_gb,
        }
    }

    /// Componentwise subtraction clamped at zero (guards float dust).
    pub fn minus_clamped(&self, other: &Self) -> Self {
        ResourceVector {
            cpu: (self.cpu - other.cpu).max(0.0),
            mem_gb: (self.mem_gb - other.mem_gb).max(0.0),
        }
    }

    pub fn min(&self, other: &Self) -> Self {
        ResourceVector {
            cpu: self.cpu.min(other.cpu),
            mem_gb: self.mem_gb.min(other.mem_gb),
        }
    }

    /// True when both components are within [`DEMAND_EPSILON`] of zero.
    pub fn is_negligible(&self) -> bool {
        self.cpu <= DEMAND_EPSILON && self.mem_gb <= DEMAND_EPSILON
    }

    pub fn is_valid_demand(&self) -> bool {
        self.cpu.is_finite() && self.mem_gb.is_finite() && self.cpu >= 0.0 && self.mem_gb >= 0.0
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} cores, {} GB)", self.cpu, self.mem_gb)
    }
}

/// Usable capacity of one server in the entry's market.
pub fn capacity_of(entry: &MarketCatalogEntry) -> ResourceVector {
    ResourceVector::new(f64::from(entry.cpu_cores), entry.mem_gb)
}

// ---- Identifiers ----

/// Application identifier (a human-chosen name).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AppId(String);

impl AppId {
    pub fn new(id: impl Into<String>) -> Self {
        AppId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Server identifier, assigned monotonically by [`ClusterState`].
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ServerId(pub u64);

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

// ---- Servers ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ServerState {
    Running,
    /// Revocation warning received; still usable until the revocation lands.
    Warned,
    Revoked,
    /// Released by its owners, parked awaiting reuse or expiry.
    FreeListed,
}

/// One leased server and the containers currently placed on it.
#[derive(Debug, Clone, Serialize)]
pub struct ServerInstance {
    pub id: ServerId,
    pub market: MarketId,
    pub capacity: ResourceVector,
    /// Sum of all owner shares; never exceeds capacity.
    pub allocated: ResourceVector,
    pub state: ServerState,
    /// Per-application resource shares on this server.
    pub owner_apps: BTreeMap<AppId, ResourceVector>,
}

impl ServerInstance {
    pub fn free_capacity(&self) -> ResourceVector {
        self.capacity.minus_clamped(&self.allocated)
    }

    /// Fraction of this server's cost attributed to `app`: proportional to
    /// allocated CPU, falling back to the memory fraction when every
    /// container on the server is memory-only, and to an equal split when
    /// shares carry no resources at all.
    pub fn cost_share(&self, app: &AppId) -> f64 {
        let Some(share) = self.owner_apps.get(app) else {
            return 0.0;
        };
        if self.owner_apps.len() == 1 {
            return 1.0;
        }
        let total_cpu: f64 = self.owner_apps.values().map(|s| s.cpu).sum();
        if total_cpu > DEMAND_EPSILON {
            return share.cpu / total_cpu;
        }
        let total_mem: f64 = self.owner_apps.values().map(|s| s.mem_gb).sum();
        if total_mem > DEMAND_EPSILON {
            return share.mem_gb / total_mem;
        }
        1.0 / self.owner_apps.len() as f64
    }
}

// ---- Plans ----

/// What an allocation did in one market: servers newly requested plus every
/// container placement (reused and new servers included, since ids are
/// assigned by the time the plan is returned).
#[derive(Debug, Clone, Serialize)]
pub struct MarketAllocation {
    pub market: MarketId,
    pub n_new_servers: u32,
    pub containers: Vec<(ServerId, ResourceVector)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AllocationPlan {
    pub app: AppId,
    pub markets: Vec<MarketAllocation>,
}

impl AllocationPlan {
    pub fn total_new_servers(&self) -> u32 {
        self.markets.iter().map(|m| m.n_new_servers).sum()
    }

    pub fn server_ids(&self) -> Vec<ServerId> {
        let mut ids: Vec<ServerId> = self
            .markets
            .iter()
            .flat_map(|m| m.containers.iter().map(|(id, _)| *id))
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Container placement order for shared allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    /// Carve from the server with the most free CPU first (free memory and
    /// server id break ties). The default.
    #[default]
    BestFit,
    /// Carve in server-id order.
    FirstFit,
}

// ---- Server counts ----

/// Servers needed in one market for weight `w` of demand `r` on servers of
/// the given capacity — the binding-dimension ceiling. Zero weight (or zero
/// demand) needs zero servers.
pub fn servers_for_share(weight: f64, r: &ResourceVector, capacity: &ResourceVector) -> u32 {
    if weight <= 0.0 {
        return 0;
    }
    let cpu_ratio = weight * r.cpu / capacity.cpu;
    let mem_ratio = weight * r.mem_gb / capacity.mem_gb;
    let binding = cpu_ratio.max(mem_ratio);
    if binding <= 0.0 {
        0
    } else {
        binding.ceil() as u32
    }
}

/// Per-market server counts for a whole portfolio (dust weights truncated
/// first, exactly as allocation does it).
pub fn servers_per_market(
    portfolio: &Portfolio,
    r: &ResourceVector,
    catalog: &MarketCatalog,
) -> Result<Vec<(MarketId, u32)>, AllocError> {
    if !r.is_valid_demand() {
        return Err(AllocError::InvalidDemand { cpu: r.cpu, mem_gb: r.mem_gb });
    }
    let weights = portfolio.truncated_weights();
    let mut counts = Vec::new();
    for (market, &w) in portfolio.markets().iter().zip(&weights) {
        let entry = catalog
            .get(market)
            .ok_or_else(|| AllocError::UnknownMarket(market.clone()))?;
        counts.push((market.clone(), servers_for_share(w, r, &capacity_of(entry))));
    }
    Ok(counts)
}

// ---- Cluster state ----

#[derive(Debug, Clone)]
pub struct AllocatorConfig {
    pub free_list_hold_seconds: u64,
    pub placement: Placement,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        AllocatorConfig {
            free_list_hold_seconds: DEFAULT_FREE_LIST_HOLD_SECONDS,
            placement: Placement::BestFit,
        }
    }
}

/// Released servers awaiting reuse, each with its termination deadline.
#[derive(Debug, Clone, Default)]
pub struct FreeList {
    entries: Vec<(ServerId, u64)>,
}

impl FreeList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: ServerId) -> bool {
        self.entries.iter().any(|(s, _)| *s == id)
    }

    /// Earliest termination deadline among held servers, if any.
    pub fn next_expiry(&self) -> Option<u64> {
        self.entries.iter().map(|&(_, t)| t).min()
    }

    fn push(&mut self, id: ServerId, expires_at: u64) {
        self.entries.push((id, expires_at));
        self.entries.sort();
    }

    fn remove(&mut self, id: ServerId) {
        self.entries.retain(|(s, _)| *s != id);
    }

    fn drain_expired(&mut self, now: u64) -> Vec<ServerId> {
        let (expired, kept): (Vec<_>, Vec<_>) =
            self.entries.drain(..).partition(|&(_, t)| t <= now);
        self.entries = kept;
        expired.into_iter().map(|(id, _)| id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AppMode {
    Private,
    Shared,
}

#[derive(Debug, Clone)]
struct AppRecord {
    mode: AppMode,
    /// Truncated portfolio weights this app was allocated under.
    weights: Vec<(MarketId, f64)>,
    demand: ResourceVector,
    placements: BTreeMap<ServerId, ResourceVector>,
}

/// A server revoked out from under its owners.
#[derive(Debug, Clone)]
pub struct RevokedServer {
    pub id: ServerId,
    pub market: MarketId,
    /// The displaced containers: who lost how much.
    pub owners: Vec<(AppId, ResourceVector)>,
}

/// The whole cluster: servers, their containers, and the free list.
///
/// All mutation goes through the allocation operations, which keep the
/// per-app placement index, per-server owner shares, and the free list
/// consistent with each other.
#[derive(Debug, Clone)]
pub struct ClusterState {
    catalog: MarketCatalog,
    config: AllocatorConfig,
    servers: BTreeMap<ServerId, ServerInstance>,
    apps: BTreeMap<AppId, AppRecord>,
    free_list: FreeList,
    next_server: u64,
}

impl ClusterState {
    pub fn new(catalog: MarketCatalog, config: AllocatorConfig) -> Self {
        ClusterState {
            catalog,
            config,
            servers: BTreeMap::new(),
            apps: BTreeMap::new(),
            free_list: FreeList::default(),
            next_server: 0,
        }
    }

    pub fn catalog(&self) -> &MarketCatalog {
        &self.catalog
    }

    pub fn free_list(&self) -> &FreeList {
        &self.free_list
    }

    pub fn server(&self, id: ServerId) -> Option<&ServerInstance> {
        self.servers.get(&id)
    }

    pub fn servers(&self) -> impl Iterator<Item = &ServerInstance> {
        self.servers.values()
    }

    pub fn server_count(&self) -> usize {
        self.servers.len()
    }

    pub fn has_app(&self, app: &AppId) -> bool {
        self.apps.contains_key(app)
    }

    /// The app's current placements (server → share).
    pub fn app_placements(&self, app: &AppId) -> Option<&BTreeMap<ServerId, ResourceVector>> {
        self.apps.get(app).map(|r| &r.placements)
    }

    /// Total resources currently allocated to the app across all servers.
    pub fn app_allocated(&self, app: &AppId) -> ResourceVector {
        self.apps
            .get(app)
            .map(|r| {
                r.placements
                    .values()
                    .fold(ResourceVector::ZERO, |acc, s| acc.plus(s))
            })
            .unwrap_or(ResourceVector::ZERO)
    }

    fn fresh_server(&mut self, market: &MarketId, capacity: ResourceVector) -> ServerId {
        let id = ServerId(self.next_server);
        self.next_server += 1;
        self.servers.insert(
            id,
            ServerInstance {
                id,
                market: market.clone(),
                capacity,
                allocated: ResourceVector::ZERO,
                state: ServerState::Running,
                owner_apps: BTreeMap::new(),
            },
        );
        id
    }

    fn place(&mut self, app: &AppId, server: ServerId, share: ResourceVector) {
        let s = self.servers.get_mut(&server).expect("placing on live server");
        s.allocated = s.allocated.plus(&share);
        let entry = s.owner_apps.entry(app.clone()).or_insert(ResourceVector::ZERO);
        *entry = entry.plus(&share);
        let record = self.apps.get_mut(app).expect("app record exists");
        let p = record
            .placements
            .entry(server)
            .or_insert(ResourceVector::ZERO);
        *p = p.plus(&share);
    }

    /// Pulls up to `max` free-listed servers of `market`, lowest id first,
    /// back into running state.
    fn reuse_from_free_list(&mut self, market: &MarketId, max: usize) -> Vec<ServerId> {
        let mut picked: Vec<ServerId> = self
            .free_list
            .entries
            .iter()
            .map(|&(id, _)| id)
            .filter(|id| self.servers[id].market == *market)
            .collect();
        picked.sort();
        picked.truncate(max);
        for &id in &picked {
            self.free_list.remove(id);
            self.servers.get_mut(&id).expect("free-listed server exists").state =
                ServerState::Running;
        }
        picked
    }

    fn demand_weights(
        &self,
        portfolio: &Portfolio,
    ) -> Result<Vec<(MarketId, f64, ResourceVector)>, AllocError> {
        let weights = portfolio.truncated_weights();
        portfolio
            .markets()
            .iter()
            .zip(&weights)
            .map(|(market, &w)| {
                let entry = self
                    .catalog
                    .get(market)
                    .ok_or_else(|| AllocError::UnknownMarket(market.clone()))?;
                Ok((market.clone(), w, capacity_of(entry)))
            })
            .collect()
    }

    /// Allocates dedicated servers for an application: per market, the
    /// binding-dimension server count, satisfied from the free list first
    /// and fresh requests for the rest. Every server is owned exclusively,
    /// holding an equal slice of the market's demand share.
    pub fn allocate_private(
        &mut self,
        app: &AppId,
        r: &ResourceVector,
        portfolio: &Portfolio,
    ) -> Result<AllocationPlan, AllocError> {
        self.allocate_private_where(app, r, portfolio, |_| true)
    }

    /// [`allocate_private`](Self::allocate_private) restricted to markets
    /// the predicate accepts. The app record still carries the full weight
    /// vector; skipped markets can be granted later with
    /// [`add_servers`](Self::add_servers) once they become available.
    pub fn allocate_private_where(
        &mut self,
        app: &AppId,
        r: &ResourceVector,
        portfolio: &Portfolio,
        available: impl Fn(&MarketId) -> bool,
    ) -> Result<AllocationPlan, AllocError> {
        if !r.is_valid_demand() {
            return Err(AllocError::InvalidDemand { cpu: r.cpu, mem_gb: r.mem_gb });
        }
        if self.apps.contains_key(app) {
            return Err(AllocError::DuplicateApp(app.clone()));
        }
        let demands = self.demand_weights(portfolio)?;
        self.apps.insert(
            app.clone(),
            AppRecord {
                mode: AppMode::Private,
                weights: demands.iter().map(|(m, w, _)| (m.clone(), *w)).collect(),
                demand: *r,
                placements: BTreeMap::new(),
            },
        );

        let mut plan = AllocationPlan { app: app.clone(), markets: Vec::new() };
        for (market, w, capacity) in demands {
            let n = servers_for_share(w, r, &capacity);
            if n == 0 || !available(&market) {
                continue;
            }
            let share = r.scale(w / f64::from(n));
            let reused = self.reuse_from_free_list(&market, n as usize);
            let n_new = n - reused.len() as u32;
            let mut ids = reused;
            for _ in 0..n_new {
                ids.push(self.fresh_server(&market, capacity));
            }
            let mut containers = Vec::with_capacity(ids.len());
            for id in ids {
                self.place(app, id, share);
                containers.push((id, share));
            }
            plan.markets.push(MarketAllocation { market, n_new_servers: n_new, containers });
        }
        Ok(plan)
    }

    /// Allocates with statistical multiplexing: each market's demand share
    /// is carved out of surplus capacity on running servers (placement
    /// order per [`Placement`]), then out of free-listed servers, and only
    /// the remainder spawns new servers.
    pub fn allocate_shared(
        &mut self,
        app: &AppId,
        r: &ResourceVector,
        portfolio: &Portfolio,
    ) -> Result<AllocationPlan, AllocError> {
        self.allocate_shared_where(app, r, portfolio, |_| true)
    }

    /// [`allocate_shared`](Self::allocate_shared) restricted to markets the
    /// predicate accepts; see
    /// [`allocate_private_where`](Self::allocate_private_where).
    pub fn allocate_shared_where(
        &mut self,
        app: &AppId,
        r: &ResourceVector,
        portfolio: &Portfolio,
        available: impl Fn(&MarketId) -> bool,
    ) -> Result<AllocationPlan, AllocError> {
        if !r.is_valid_demand() {
            return Err(AllocError::InvalidDemand { cpu: r.cpu, mem_gb: r.mem_gb });
        }
        if self.apps.contains_key(app) {
            return Err(AllocError::DuplicateApp(app.clone()));
        }
        let demands = self.demand_weights(portfolio)?;
        self.apps.insert(
            app.clone(),
            AppRecord {
                mode: AppMode::Shared,
                weights: demands.iter().map(|(m, w, _)| (m.clone(), *w)).collect(),
                demand: *r,
                placements: BTreeMap::new(),
            },
        );

        let mut plan = AllocationPlan { app: app.clone(), markets: Vec::new() };
        for (market, w, capacity) in demands {
            let mut remaining = r.scale(w);
            if remaining.is_negligible() || !available(&market) {
                continue;
            }
            let mut containers = Vec::new();

            // 1. Surplus on running servers.
            let mut candidates: Vec<(ServerId, ResourceVector)> = self
                .servers
                .values()
                .filter(|s| s.state == ServerState::Running && s.market == market)
                .map(|s| (s.id, s.free_capacity()))
                .filter(|(_, free)| !free.is_negligible())
                .collect();
            match self.config.placement {
                Placement::BestFit => candidates.sort_by(|(aid, a), (bid, b)| {
                    b.cpu
                        .total_cmp(&a.cpu)
                        .then(b.mem_gb.total_cmp(&a.mem_gb))
                        .then(aid.cmp(bid))
                }),
                Placement::FirstFit => candidates.sort_by_key(|(id, _)| *id),
            }
            for (id, free) in candidates {
                if remaining.is_negligible() {
                    break;
                }
                let take = free.min(&remaining);
                if take.is_negligible() {
                    continue;
                }
                self.place(app, id, take);
                containers.push((id, take));
                remaining = remaining.minus_clamped(&take);
            }

            // 2. Free-listed servers (full capacity each).
            while !remaining.is_negligible() {
                let picked = self.reuse_from_free_list(&market, 1);
                let Some(&id) = picked.first() else { break };
                let take = capacity.min(&remaining);
                self.place(app, id, take);
                containers.push((id, take));
                remaining = remaining.minus_clamped(&take);
            }

            // 3. New servers for the remainder.
            let mut n_new = 0u32;
            if !remaining.is_negligible() {
                n_new = servers_for_share(1.0, &remaining, &capacity);
                let share = remaining.scale(1.0 / f64::from(n_new));
                for _ in 0..n_new {
                    let id = self.fresh_server(&market, capacity);
                    self.place(app, id, share);
                    containers.push((id, share));
                }
            }

            plan.markets.push(MarketAllocation { market, n_new_servers: n_new, containers });
        }
        Ok(plan)
    }

    /// Adds `count` running servers in `market`, each carrying `share` for
    /// the app — how replacement servers materialize after a revocation.
    pub fn add_servers(
        &mut self,
        app: &AppId,
        market: &MarketId,
        count: u32,
        share: ResourceVector,
    ) -> Result<Vec<ServerId>, AllocError> {
        if !self.apps.contains_key(app) {
            return Err(AllocError::UnknownApp(app.clone()));
        }
        let entry = self
            .catalog
            .get(market)
            .ok_or_else(|| AllocError::UnknownMarket(market.clone()))?;
        let capacity = capacity_of(entry);
        let mut ids = self.reuse_from_free_list(market, count as usize);
        while ids.len() < count as usize {
            ids.push(self.fresh_server(market, capacity));
        }
        for &id in &ids {
            self.place(app, id, share);
        }
        Ok(ids)
    }

    /// Releases everything the app holds. Containers are shed; any server
    /// left ownerless is parked on the free list until `now +
    /// free_list_hold_seconds`. Releasing twice is an error.
    pub fn release(&mut self, app: &AppId, now: u64) -> Result<Vec<ServerId>, AllocError> {
        let record = self
            .apps
            .remove(app)
            .ok_or_else(|| AllocError::UnknownApp(app.clone()))?;
        let mut freed = Vec::new();
        for (server, share) in record.placements {
            let s = self.servers.get_mut(&server).expect("placement index in sync");
            s.owner_apps.remove(app);
            s.allocated = s.allocated.minus_clamped(&share);
            if s.owner_apps.is_empty()
                && matches!(s.state, ServerState::Running | ServerState::Warned)
            {
                s.state = ServerState::FreeListed;
                s.allocated = ResourceVector::ZERO;
                self.free_list.push(server, now + self.config.free_list_hold_seconds);
                freed.push(server);
            }
        }
        Ok(freed)
    }

    /// Re-sizes the app's allocation for a new demand, keeping its weights.
    ///
    /// Private mode recomputes the per-market server count: growth acquires
    /// servers (free list first); shrink releases whole servers, largest
    /// free capacity first (ties toward the higher id, so the
    /// earliest-acquired servers survive), and the remaining servers are
    /// rebalanced to equal slices of the new demand share. Shared mode
    /// re-carves the delta: growth allocates like a shared allocation of
    /// the increase; shrink sheds containers in the same largest-surplus
    /// order, trimming the last one to fit.
    pub fn adjust_resources(
        &mut self,
        app: &AppId,
        new_r: &ResourceVector,
        now: u64,
    ) -> Result<AllocationPlan, AllocError> {
        if !new_r.is_valid_demand() {
            return Err(AllocError::InvalidDemand { cpu: new_r.cpu, mem_gb: new_r.mem_gb });
        }
        let record = self
            .apps
            .get(app)
            .ok_or_else(|| AllocError::UnknownApp(app.clone()))?
            .clone();
        let mut plan = AllocationPlan { app: app.clone(), markets: Vec::new() };

        for (market, w) in &record.weights {
            let entry = self
                .catalog
                .get(market)
                .ok_or_else(|| AllocError::UnknownMarket(market.clone()))?;
            let capacity = capacity_of(entry);

            // The app's current servers in this market.
            let mut held: Vec<ServerId> = record
                .placements
                .keys()
                .copied()
                .filter(|id| self.servers[id].market == *market)
                .collect();
            held.sort();

            match record.mode {
                AppMode::Private => {
                    let n_target = servers_for_share(*w, new_r, &capacity);
                    // Shrink: drop whole servers, largest free capacity
                    // first, higher id on ties.
                    while held.len() > n_target as usize {
                        let victim = *held
                            .iter()
                            .max_by(|a, b| {
                                let fa = self.servers[a].free_capacity();
                                let fb = self.servers[b].free_capacity();
                                fa.cpu
                                    .total_cmp(&fb.cpu)
                                    .then(fa.mem_gb.total_cmp(&fb.mem_gb))
                                    .then(a.cmp(b))
                            })
                            .expect("held is non-empty");
                        held.retain(|&id| id != victim);
                        self.shed_placement(app, victim, now);
                    }
                    // Grow: free list first, then fresh servers.
                    let mut n_new = 0u32;
                    while held.len() < n_target as usize {
                        let missing = n_target as usize - held.len();
                        let mut ids = self.reuse_from_free_list(market, missing);
                        if ids.is_empty() {
                            ids.push(self.fresh_server(market, capacity));
                            n_new += 1;
                        }
                        for id in ids {
                            held.push(id);
                            self.place(app, id, ResourceVector::ZERO);
                        }
                    }
                    // Rebalance every held server to an equal slice.
                    if n_target > 0 {
                        let share = new_r.scale(*w / f64::from(n_target));
                        let mut containers = Vec::with_capacity(held.len());
                        for &id in &held {
                            self.set_placement(app, id, share);
                            containers.push((id, share));
                        }
                        plan.markets.push(MarketAllocation {
                            market: market.clone(),
                            n_new_servers: n_new,
                            containers,
                        });
                    }
                }
                AppMode::Shared => {
                    let target = new_r.scale(*w);
                    let current = held.iter().fold(ResourceVector::ZERO, |acc, id| {
                        acc.plus(&record.placements[id])
                    });
                    let mut containers: Vec<(ServerId, ResourceVector)> = Vec::new();
                    let mut n_new = 0u32;

                    // Shed surplus containers, largest-free-capacity
                    // servers first, trimming the last to fit.
                    let mut excess = current.minus_clamped(&target);
                    if !excess.is_negligible() {
                        let mut order = held.clone();
                        order.sort_by(|a, b| {
                            let fa = self.servers[a].free_capacity();
                            let fb = self.servers[b].free_capacity();
                            fa.cpu
                                .total_cmp(&fb.cpu)
                                .then(fa.mem_gb.total_cmp(&fb.mem_gb))
                                .then(a.cmp(b))
                        });
                        for id in order {
                            if excess.is_negligible() {
                                break;
                            }
                            let share = record.placements[&id];
                            let cut = share.min(&excess);
                            let kept = share.minus_clamped(&cut);
                            if kept.is_negligible() {
                                self.shed_placement(app, id, now);
                            } else {
                                self.set_placement(app, id, kept);
                            }
                            excess = excess.minus_clamped(&cut);
                        }
                    }

                    // Carve any growth like a fresh shared allocation.
                    let have = self.app_allocated_in_market(app, market);
                    let mut remaining = target.minus_clamped(&have);
                    if !remaining.is_negligible() {
                        let mut candidates: Vec<(ServerId, ResourceVector)> = self
                            .servers
                            .values()
                            .filter(|s| {
                                s.state == ServerState::Running && s.market == *market
                            })
                            .map(|s| (s.id, s.free_capacity()))
                            .filter(|(_, f)| !f.is_negligible())
                            .collect();
                        match self.config.placement {
                            Placement::BestFit => candidates.sort_by(|(aid, a), (bid, b)| {
                                b.cpu
                                    .total_cmp(&a.cpu)
                                    .then(b.mem_gb.total_cmp(&a.mem_gb))
                                    .then(aid.cmp(bid))
                            }),
                            Placement::FirstFit => candidates.sort_by_key(|(id, _)| *id),
                        }
                        for (id, free) in candidates {
                            if remaining.is_negligible() {
                                break;
                            }
                            let take = free.min(&remaining);
                            if take.is_negligible() {
                                continue;
                            }
                            self.place(app, id, take);
                            remaining = remaining.minus_clamped(&take);
                        }
                        while !remaining.is_negligible() {
                            let picked = self.reuse_from_free_list(market, 1);
                            let Some(&id) = picked.first() else { break };
                            let take = capacity.min(&remaining);
                            self.place(app, id, take);
                            remaining = remaining.minus_clamped(&take);
                        }
                        if !remaining.is_negligible() {
                            n_new = servers_for_share(1.0, &remaining, &capacity);
                            let share = remaining.scale(1.0 / f64::from(n_new));
                            for _ in 0..n_new {
                                let id = self.fresh_server(market, capacity);
                                self.place(app, id, share);
                            }
                        }
                    }

                    if let Some(rec) = self.apps.get(app) {
                        for (&id, &share) in &rec.placements {
                            if self.servers[&id].market == *market {
                                containers.push((id, share));
                            }
                        }
                    }
                    if !containers.is_empty() {
                        plan.markets.push(MarketAllocation {
                            market: market.clone(),
                            n_new_servers: n_new,
                            containers,
                        });
                    }
                }
            }
        }

        if let Some(rec) = self.apps.get_mut(app) {
            rec.demand = *new_r;
        }
        Ok(plan)
    }

    fn app_allocated_in_market(&self, app: &AppId, market: &MarketId) -> ResourceVector {
        self.apps
            .get(app)
            .map(|r| {
                r.placements
                    .iter()
                    .filter(|(id, _)| self.servers[*id].market == *market)
                    .fold(ResourceVector::ZERO, |acc, (_, s)| acc.plus(s))
            })
            .unwrap_or(ResourceVector::ZERO)
    }

    /// Removes the app's container from one server, free-listing the server
    /// if that leaves it ownerless.
    fn shed_placement(&mut self, app: &AppId, server: ServerId, now: u64) {
        let Some(record) = self.apps.get_mut(app) else { return };
        let Some(share) = record.placements.remove(&server) else { return };
        let s = self.servers.get_mut(&server).expect("placement index in sync");
        s.owner_apps.remove(app);
        s.allocated = s.allocated.minus_clamped(&share);
        if s.owner_apps.is_empty()
            && matches!(s.state, ServerState::Running | ServerState::Warned)
        {
            s.state = ServerState::FreeListed;
            s.allocated = ResourceVector::ZERO;
            self.free_list.push(server, now + self.config.free_list_hold_seconds);
        }
    }

    /// Overwrites the app's share on one server with `share`.
    fn set_placement(&mut self, app: &AppId, server: ServerId, share: ResourceVector) {
        let record = self.apps.get_mut(app).expect("app record exists");
        let old = record
            .placements
            .insert(server, share)
            .unwrap_or(ResourceVector::ZERO);
        let s = self.servers.get_mut(&server).expect("placement index in sync");
        s.allocated = s.allocated.minus_clamped(&old).plus(&share);
        s.owner_apps.insert(app.clone(), share);
    }

    /// Marks every running server in the market as warned; returns the ids.
    pub fn warn_market(&mut self, market: &MarketId) -> Vec<ServerId> {
        let mut warned = Vec::new();
        for s in self.servers.values_mut() {
            if s.market == *market && s.state == ServerState::Running {
                s.state = ServerState::Warned;
                warned.push(s.id);
            }
        }
        warned
    }

    /// Terminates every server in the market — running, warned, or parked
    /// on the free list — and reports the displaced containers.
    pub fn revoke_market(&mut self, market: &MarketId) -> Vec<RevokedServer> {
        let ids: Vec<ServerId> = self
            .servers
            .values()
            .filter(|s| s.market == *market)
            .map(|s| s.id)
            .collect();
        let mut revoked = Vec::new();
        for id in ids {
            let server = self.servers.remove(&id).expect("listed above");
            self.free_list.remove(id);
            let mut owners = Vec::new();
            for (app, share) in server.owner_apps {
                if let Some(record) = self.apps.get_mut(&app) {
                    record.placements.remove(&id);
                }
                owners.push((app, share));
            }
            revoked.push(RevokedServer { id, market: server.market, owners });
        }
        revoked
    }

    /// Terminates free-listed servers whose hold expired; returns the ids.
    pub fn expire_free_list(&mut self, now: u64) -> Vec<ServerId> {
        let expired = self.free_list.drain_expired(now);
        for id in &expired {
            self.servers.remove(id);
        }
        expired
    }
}
