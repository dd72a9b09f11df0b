//! Risk-adjusted portfolios of transient cloud servers.
//!
//! Transient servers (EC2 spot, GCP preemptible) sell at a steep discount but
//! can be revoked whenever the market price rises above the buyer's bid.
//! Treating the markets as risky assets, this crate builds mean-variance
//! portfolios over them and carries the result all the way to operations:
//!
//! * [`market`] — market catalog and price-trace ingestion, uniform-grid
//!   resampling, and a deterministic synthetic trace generator ([`synth`]).
//! * [`risk`] — expected returns, three covariance constructions (price,
//!   revocation, hybrid), mean-time-to-revocation estimates, and PSD repair.
//! * [`portfolio`] — the simplex-constrained quadratic program, efficient
//!   frontiers, portfolio caching, candidate filtering, and baselines.
//! * [`alloc`] — portfolio weights to concrete server counts, shared-cluster
//!   packing, and the relinquished-server free-list.
//! * [`sim`] — a deterministic discrete-event simulator replaying price
//!   traces against pluggable application fault-tolerance models.

pub mod alloc;
pub mod market;
pub mod portfolio;
pub mod risk;
pub mod sim;
pub mod synth;
