//! Application fault-tolerance models.
//!
//! Each model answers the same questions — what survives a revocation,
//! whether lost servers get replaced, how partial allocations translate
//! into execution rate — behind one trait, so the engine can drive any
//! mix of applications through a single event loop.

use super::{AppKind, ApplicationSpec, RecoveryPolicy};

/// An allocation within a rounding error of complete counts as complete.
pub(crate) const FULL_RATE_EPS: f64 = 1e-9;

/// Progress state shared by every model.
#[derive(Debug, Clone)]
pub(crate) struct AppCommon {
    pub spec: ApplicationSpec,
    /// Work completed so far, seconds at full rate.
    pub progress: f64,
    /// Progress durably written by the last completed checkpoint.
    pub checkpointed: f64,
    /// Work redone (or forfeited) because of revocations.
    pub rollback_lost_seconds: f64,
}

impl AppCommon {
    pub fn new(spec: ApplicationSpec) -> Self {
        AppCommon { spec, progress: 0.0, checkpointed: 0.0, rollback_lost_seconds: 0.0 }
    }

    pub fn work(&self) -> f64 {
        self.spec.work_seconds
    }

    pub fn remaining(&self) -> f64 {
        (self.work() - self.progress).max(0.0)
    }
}

fn policy_allows_replenish(policy: &RecoveryPolicy, progress: f64, work: f64) -> bool {
    match policy {
        RecoveryPolicy::Eager => true,
        RecoveryPolicy::None => false,
        RecoveryPolicy::ProgressThreshold(p) => progress < p * work,
    }
}

/// How one application model reacts to the engine's events.
pub(crate) trait AppBehavior: Sync {
    /// Checkpoints are taken on a fixed cadence.
    fn periodic_checkpoints(&self) -> bool {
        false
    }

    /// A hard revocation warning triggers a last-minute checkpoint attempt.
    fn checkpoint_on_warning(&self) -> bool {
        false
    }

    /// Crossing the price threshold releases all servers (and recovering
    /// reacquires them).
    fn releases_on_price_threshold(&self) -> bool {
        false
    }

    /// The progress floor a revocation can roll back to.
    fn durable_progress(&self, c: &AppCommon) -> f64;

    /// Applies the loss of `lost_fraction` of the allocation to progress.
    fn apply_revocation(&self, c: &mut AppCommon, lost_fraction: f64);

    /// Whether the servers just lost should be replaced.
    fn wants_replenish(&self, c: &AppCommon) -> bool;

    /// Execution rate for an allocation fraction in `[0, 1]`.
    fn rate_from_fraction(&self, fraction: f64) -> f64;
}

pub(crate) fn behavior_for(kind: AppKind) -> &'static dyn AppBehavior {
    match kind {
        AppKind::BatchCheckpoint => &BatchModel,
        AppKind::Rigid => &RigidModel,
        AppKind::BagOfTasks => &BagModel,
    }
}

// ---- Batch with periodic checkpoints ----

/// Work since the last durable checkpoint is held in memory across the
/// allocation; losing a fraction of the servers loses that fraction of the
/// uncheckpointed work. Runs at whatever rate the surviving allocation
/// supports.
struct BatchModel;

impl AppBehavior for BatchModel {
    fn periodic_checkpoints(&self) -> bool {
        true
    }

    fn durable_progress(&self, c: &AppCommon) -> f64 {
        c.checkpointed
    }

    fn apply_revocation(&self, c: &mut AppCommon, lost_fraction: f64) {
        let durable = self.durable_progress(c);
        let at_risk = (c.progress - durable).max(0.0);
        let lost = lost_fraction * at_risk;
        c.progress = durable + (at_risk - lost);
        c.rollback_lost_seconds += lost;
    }

    fn wants_replenish(&self, c: &AppCommon) -> bool {
        policy_allows_replenish(&c.spec.recovery_policy, c.progress, c.work())
    }

    fn rate_from_fraction(&self, fraction: f64) -> f64 {
        fraction.clamp(0.0, 1.0)
    }
}

// ---- Gang-scheduled rigid ----

/// All ranks advance in lockstep: losing any server discards everything
/// since the last durable checkpoint, and execution halts until the full
/// allocation is restored.
struct RigidModel;

impl AppBehavior for RigidModel {
    fn periodic_checkpoints(&self) -> bool {
        true
    }

    fn durable_progress(&self, c: &AppCommon) -> f64 {
        c.checkpointed
    }

    fn apply_revocation(&self, c: &mut AppCommon, _lost_fraction: f64) {
        let durable = self.durable_progress(c);
        let lost = (c.progress - durable).max(0.0);
        c.progress = durable;
        c.rollback_lost_seconds += lost;
    }

    fn wants_replenish(&self, c: &AppCommon) -> bool {
        policy_allows_replenish(&c.spec.recovery_policy, c.progress, c.work())
    }

    fn rate_from_fraction(&self, fraction: f64) -> f64 {
        if fraction >= 1.0 - FULL_RATE_EPS {
            1.0
        } else {
            0.0
        }
    }
}

// ---- Elastic bag of tasks ----

/// Independent equal tasks: a finished task is durable on its own, so a
/// revocation forfeits only in-flight task work. Lost servers are never
/// replaced; the bag instead relinquishes and reacquires capacity as
/// prices move.
struct BagModel;

impl BagModel {
    fn task_floor(c: &AppCommon) -> f64 {
        let task_len = c.spec.work_seconds / f64::from(c.spec.task_count);
        if task_len <= 0.0 {
            return c.progress;
        }
        // The nudge keeps an exactly-finished task on the durable side of
        // the boundary despite rounding.
        (c.progress / task_len + 1e-9).floor() * task_len
    }
}

impl AppBehavior for BagModel {
    fn checkpoint_on_warning(&self) -> bool {
        true
    }

    fn releases_on_price_threshold(&self) -> bool {
        true
    }

    fn durable_progress(&self, c: &AppCommon) -> f64 {
        c.checkpointed.max(Self::task_floor(c)).min(c.progress)
    }

    fn apply_revocation(&self, c: &mut AppCommon, lost_fraction: f64) {
        let durable = self.durable_progress(c);
        let at_risk = (c.progress - durable).max(0.0);
        let lost = lost_fraction * at_risk;
        c.progress = durable + (at_risk - lost);
        c.rollback_lost_seconds += lost;
    }

    fn wants_replenish(&self, _c: &AppCommon) -> bool {
        false
    }

    fn rate_from_fraction(&self, fraction: f64) -> f64 {
        fraction.clamp(0.0, 1.0)
    }
}
