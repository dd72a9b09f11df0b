//! One module per subcommand. Each exposes a clap `Args` struct and a
//! `run` function returning `Result<(), Failure>`; everything else
//! (loading, manifests, output plumbing) lives in [`crate::io`] and
//! [`crate::manifest`].

pub mod allocate;
pub mod compare;
pub mod frontier;
pub mod portfolio;
pub mod simulate;
pub mod stats;
pub mod synth;
