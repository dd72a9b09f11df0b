//! Command-line driver for spot-market portfolio construction, server
//! allocation, and trace-driven simulation.
//!
//! Every run emits a manifest — tool version, subcommand, resolved
//! settings, and SHA-256 digests of every input file — embedded in JSON
//! outputs and written as `manifest.json` next to CSV outputs, so results
//! can be traced back to their exact inputs. Outputs are byte-identical
//! across reruns with the same inputs.
//!
//! Exit codes: 0 success, 1 usage error, 2 input error, 3 numerical
//! failure (the solver could not certify an optimum).

mod commands;
mod io;
mod manifest;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::commands::{allocate, compare, frontier, portfolio, simulate, stats, synth};

#[derive(Parser)]
#[command(
    name = "spotfolio",
    version,
    about = "Risk-adjusted portfolios of transient cloud servers",
    after_help = "Settings precedence: command-line flags override \
                  configuration-file keys, which override built-in defaults.\n\
                  Exit codes: 0 success, 1 usage error, 2 input error, \
                  3 numerical failure.",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-market statistics: returns, bids, stability, covariance
    Stats(stats::StatsArgs),
    /// Solve one mean-variance portfolio
    Portfolio(portfolio::PortfolioArgs),
    /// Sweep the efficient frontier over a risk-averseness grid
    Frontier(frontier::FrontierArgs),
    /// Turn portfolio weights into server counts and container placements
    Allocate(allocate::AllocateArgs),
    /// Replay a scenario through the cluster simulator
    Simulate(simulate::SimulateArgs),
    /// Generate a synthetic market catalog and price traces
    Synth(synth::SynthArgs),
    /// Compare fault-tolerance policies and portfolio breadths across seeds
    Compare(compare::CompareArgs),
}

/// A failed run, carrying the process exit code.
pub enum Failure {
    /// Flags or arguments that cannot be acted on (exit 1).
    Usage(String),
    /// Unreadable, malformed, or inconsistent input data (exit 2).
    Input(anyhow::Error),
    /// The optimizer could not certify a solution (exit 3).
    Numerical(anyhow::Error),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

/// Maps a portfolio-solver error onto the exit-code contract.
pub fn portfolio_failure(e: spotfolio::portfolio::PortfolioError) -> Failure {
    match e {
        spotfolio::portfolio::PortfolioError::NotConverged { .. } => Failure::Numerical(e.into()),
        other => Failure::Input(other.into()),
    }
}

/// Maps a simulation error onto the exit-code contract.
pub fn sim_failure(e: spotfolio::sim::SimError) -> Failure {
    match e {
        spotfolio::sim::SimError::Portfolio(
            spotfolio::portfolio::PortfolioError::NotConverged { .. },
        ) => Failure::Numerical(e.into()),
        other => Failure::Input(other.into()),
    }
}

fn main() {
    std::process::exit(run());
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use spotfolio::market::MarketId;
    use spotfolio::portfolio::{Portfolio, PortfolioError, PortfolioProblem};
    use spotfolio::risk::{CovarianceKind, CovarianceMatrix, ReturnsVector};

    use super::*;

    #[test]
    fn failure_codes_match_the_contract() {
        assert_eq!(Failure::Usage("x".into()).code(), 1);
        assert_eq!(Failure::Input(anyhow::anyhow!("x")).code(), 2);
        assert_eq!(Failure::Numerical(anyhow::anyhow!("x")).code(), 3);
    }

    #[test]
    fn error_classifiers_route_to_the_right_exit_codes() {
        let markets = vec![MarketId::new("m0").unwrap()];
        let c = ReturnsVector::new(markets.clone(), vec![0.5]).unwrap();
        let v =
            CovarianceMatrix::trusted(markets, CovarianceKind::Synthetic, DMatrix::zeros(1, 1))
                .unwrap();
        let problem = PortfolioProblem::new(&c, &v, 1.0).unwrap();
        let best = Portfolio::from_problem(&problem, vec![1.0]).unwrap();

        let stalled = PortfolioError::NotConverged { best, gap_bound: 1.0 };
        assert_eq!(portfolio_failure(stalled).code(), 3);
        assert_eq!(portfolio_failure(PortfolioError::NoCandidateMarkets).code(), 2);
        let invalid = spotfolio::sim::SimError::InvalidScenario { reason: "x".into() };
        assert_eq!(sim_failure(invalid).code(), 2);
    }
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Stats(args) => stats::run(args),
        Command::Portfolio(args) => portfolio::run(args),
        Command::Frontier(args) => frontier::run(args),
        Command::Allocate(args) => allocate::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::Synth(args) => synth::run(args),
        Command::Compare(args) => compare::run(args),
    };
    match result {
        Ok(()) => 0,
        Err(failure) => {
            match &failure {
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Input(e) | Failure::Numerical(e) => eprintln!("error: {e:#}"),
            }
            failure.code()
        }
    }
}
