//! Risk-adjusted portfolio construction over spot markets.
//!
//! The central problem: choose market weights `x` on the probability simplex
//! maximizing `c·x − α·xVx`, where `c` holds expected returns, `V` is a
//! covariance matrix, and `α ≥ 0` trades expected saving against the risk of
//! losing many servers at once. This module provides:
//!
//! * [`solve`] — projected-gradient solver for the quadratic program;
//! * [`brute_force_solve`] — exact simplex-lattice oracle for small
//!   instances, used to validate the solver;
//! * [`frontier`] — efficient-frontier sweeps over a risk-averseness grid;
//! * [`filter_markets`] — candidate filtering by MTTR, shape, and id
//!   patterns;
//! * [`greedy_select`] / [`lowest_cost_select`] — baseline policies;
//! * [`PortfolioCache`] — precomputed portfolios keyed by α.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::market::{MarketCatalog, MarketId};
use crate::risk::{CovarianceMatrix, MttrEstimate, ReturnsVector};

/// Iteration cap for the projected-gradient solver.
pub const MAX_ITERATIONS: usize = 100_000;
/// Duality-style optimality certificate: the solver stops once the
/// linearization bound `max_i ∇f_i − ∇f·x` drops below this.
pub const CERTIFIED_GAP: f64 = 1e-13;
/// Secondary stop: objective improvement below this for
/// [`IMPROVEMENT_STREAK`] consecutive iterations.
pub const IMPROVEMENT_EPS: f64 = 1e-10;
pub const IMPROVEMENT_STREAK: usize = 10;
/// Weights below this are dropped (and the rest renormalized) before
/// allocation; portfolios routinely assign sub-1e-6 dust to many markets.
pub const WEIGHT_TRUNCATION_THRESHOLD: f64 = 1e-6;
/// The largest-eigenvalue estimate is inflated by this factor so the fixed
/// gradient step stays on the safe side of the curvature bound.
const STEP_SAFETY: f64 = 1.05;

// ---- Errors ----

#[derive(Debug, Error)]
pub enum PortfolioError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(
        "solver hit the iteration cap; best objective {:.6e}, optimality gap ≤ {gap_bound:.3e}",
        best.objective()
    )]
    NotConverged {
        /// Best feasible iterate found before the cap.
        best: Portfolio,
        /// Upper bound on how far its objective can be from optimal.
        gap_bound: f64,
    },
    #[error("brute-force oracle is limited to 4 markets, got {n}")]
    TooManyMarkets { n: usize },
    #[error("k must lie in 1..={n}, got {k}")]
    KOutOfRange { k: usize, n: usize },
    #[error("no market satisfies the constraints")]
    NoCandidateMarkets,
    #[error("cache inputs changed since precompute; rebuild the cache")]
    StaleCache,
    #[error("weights are not a valid simplex point: {reason}")]
    InfeasibleWeights { reason: String },
    #[error("alpha values must be finite, non-negative, and sorted ascending")]
    InvalidAlpha,
    #[error("market {0} is not part of the problem")]
    UnknownMarket(MarketId),
}

// ---- Problem and solution types ----

/// One optimization instance: returns, covariance, and risk-averseness.
#[derive(Debug, Clone)]
pub struct PortfolioProblem {
    markets: Vec<MarketId>,
    c: Vec<f64>,
    v: CovarianceMatrix,
    alpha: f64,
}

impl PortfolioProblem {
    pub fn new(
        c: &ReturnsVector,
        v: &CovarianceMatrix,
        alpha: f64,
    ) -> Result<Self, PortfolioError> {
        if c.markets() != v.markets() {
            return Err(PortfolioError::DimensionMismatch {
                expected: c.len(),
                got: v.dim(),
            });
        }
        if c.is_empty() {
            return Err(PortfolioError::DimensionMismatch { expected: 1, got: 0 });
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(PortfolioError::InvalidAlpha);
        }
        Ok(PortfolioProblem {
            markets: c.markets().to_vec(),
            c: c.values().to_vec(),
            v: v.clone(),
            alpha,
        })
    }

    pub fn markets(&self) -> &[MarketId] {
        &self.markets
    }

    pub fn returns(&self) -> &[f64] {
        &self.c
    }

    pub fn covariance(&self) -> &CovarianceMatrix {
        &self.v
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.markets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markets.is_empty()
    }
}

/// A feasible portfolio with its recorded statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Portfolio {
    markets: Vec<MarketId>,
    weights: Vec<f64>,
    alpha: f64,
    expected_return: f64,
    risk: f64,
    objective: f64,
}

impl Portfolio {
    /// Validates and normalizes `weights` against the problem, then records
    /// the portfolio statistics. Weights in `[−1e-10, 0)` are clipped to 0;
    /// anything more negative is rejected.
    pub fn from_problem(
        problem: &PortfolioProblem,
        weights: Vec<f64>,
    ) -> Result<Self, PortfolioError> {
        build_portfolio(
            &problem.markets,
            &problem.c,
            Some(problem.v.entries()),
            problem.alpha,
            weights,
        )
    }

    pub fn markets(&self) -> &[MarketId] {
        &self.markets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn expected_return(&self) -> f64 {
        self.expected_return
    }

    pub fn risk(&self) -> f64 {
        self.risk
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn weight_of(&self, id: &MarketId) -> f64 {
        self.markets
            .binary_search(id)
            .map(|i| self.weights[i])
            .unwrap_or(0.0)
    }

    /// Weights with sub-threshold dust removed and the rest renormalized —
    /// the form handed to the allocator. Returns the weights unchanged in
    /// the degenerate case where everything is dust.
    pub fn truncated_weights(&self) -> Vec<f64> {
        let mut w: Vec<f64> = self
            .weights
            .iter()
            .map(|&x| if x < WEIGHT_TRUNCATION_THRESHOLD { 0.0 } else { x })
            .collect();
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return self.weights.clone();
        }
        for x in &mut w {
            *x /= sum;
        }
        w
    }
}

fn build_portfolio(
    markets: &[MarketId],
    c: &[f64],
    v: Option<&DMatrix<f64>>,
    alpha: f64,
    mut weights: Vec<f64>,
) -> Result<Portfolio, PortfolioError> {
    if weights.len() != markets.len() {
        return Err(PortfolioError::DimensionMismatch {
            expected: markets.len(),
            got: weights.len(),
        });
    }
    for w in &mut weights {
        if !w.is_finite() || *w < -1e-10 {
            return Err(PortfolioError::InfeasibleWeights {
                reason: format!("weight {w} out of range"),
            });
        }
        if *w < 0.0 {
            *w = 0.0;
        }
    }
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(PortfolioError::InfeasibleWeights {
            reason: format!("weights sum to {sum}"),
        });
    }
    for w in &mut weights {
        *w /= sum;
    }
    let expected_return = dot(c, &weights);
    let risk = v.map_or(0.0, |m| quadratic_form(m, &weights));
    Ok(Portfolio {
        markets: markets.to_vec(),
        weights,
        alpha,
        expected_return,
        risk,
        objective: expected_return - alpha * risk,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quadratic_form(v: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += v[(i, j)] * x[j];
        }
        total += x[i] * row;
    }
    total
}

// ---- Simplex projection ----

/// Euclidean projection onto the probability simplex (sort-and-threshold).
/// Exact up to floating-point rounding; O(n log n).
pub fn project_to_simplex(v: &mut [f64]) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite weights"));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for w in v.iter_mut() {
        *w = (*w - theta).max(0.0);
    }
}

/// Largest eigenvalue of a symmetric PSD matrix via power iteration with a
/// deterministic start vector (clamped at 0: PSD inputs cannot have a
/// negative top eigenvalue).
fn largest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    // Irregular deterministic start; a uniform vector can be orthogonal to
    // the top eigenspace of structured matrices.
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.123 * ((i % 7) as f64));
    x /= x.norm();
    let mut y = DVector::zeros(n);
    let mut lambda = 0.0f64;
    for _ in 0..500 {
        y.gemv(1.0, m, &x, 0.0);
        let norm = y.norm();
        if !(norm > 0.0) {
            return 0.0; // start vector lies in the null space; V ≈ 0 there
        }
        let rayleigh = x.dot(&y);
        if (rayleigh - lambda).abs() <= 1e-12 * rayleigh.abs().max(1e-300) {
            lambda = rayleigh;
            break;
        }
        lambda = rayleigh;
        x.copy_from(&y);
        x /= norm;
    }
    lambda.max(0.0)
}

// ---- Solver ----

/// Maximizes `c·x − α·xVx` over the probability simplex.
///
/// Projected-gradient ascent with exact simplex projection and fixed step
/// `1/(2α·λmax(V))`. Stops on an optimality certificate (linearization gap
/// ≤ [`CERTIFIED_GAP`]) or when the objective stalls; hitting the iteration
/// cap returns [`PortfolioError::NotConverged`] carrying the best feasible
/// iterate and its gap bound. `α = 0` (and numerically vanished `V`) reduce
/// to the analytic vertex optimum: all weight on the highest return, ties
/// broken toward the lowest market id.
pub fn solve(problem: &PortfolioProblem) -> Result<Portfolio, PortfolioError> {
    solve_internal(problem, None, false)
}

fn solve_internal(
    problem: &PortfolioProblem,
    warm_start: Option<&[f64]>,
    require_certificate: bool,
) -> Result<Portfolio, PortfolioError> {
    let n = problem.len();
    if n == 1 {
        return Portfolio::from_problem(problem, vec![1.0]);
    }
    let v = problem.v.entries();
    let lambda_max = largest_eigenvalue(v);
    let curvature = 2.0 * problem.alpha * lambda_max;
    if problem.alpha == 0.0 || !(curvature > f64::MIN_POSITIVE) {
        // Linear objective (or numerically nil quadratic term): the optimum
        // sits on the best-return vertex. Markets are id-ordered, so taking
        // the first strict maximum breaks ties toward the lowest id.
        let mut best = 0;
        for i in 1..n {
            if problem.c[i] > problem.c[best] {
                best = i;
            }
        }
        let mut w = vec![0.0; n];
        w[best] = 1.0;
        return Portfolio::from_problem(problem, w);
    }

    let step = 1.0 / (curvature * STEP_SAFETY);
    let c = DVector::from_column_slice(&problem.c);
    let mut x = match warm_start {
        Some(w) => DVector::from_column_slice(w),
        None => DVector::from_element(n, 1.0 / n as f64),
    };
    let mut g = DVector::zeros(n);
    let mut grad = DVector::zeros(n);
    let mut best_objective = f64::NEG_INFINITY;
    let mut best_x = x.clone();
    let mut previous_objective = f64::NEG_INFINITY;
    let mut stall_streak = 0usize;
    let mut gap = f64::INFINITY;
    let mut converged = false;

    for _ in 0..MAX_ITERATIONS {
        g.gemv(1.0, v, &x, 0.0); // g = V·x
        let risk = x.dot(&g);
        let objective = c.dot(&x) - problem.alpha * risk;
        grad.copy_from(&c);
        grad.axpy(-2.0 * problem.alpha, &g, 1.0); // ∇f = c − 2α·V·x

        if objective > best_objective {
            best_objective = objective;
            best_x.copy_from(&x);
        }
        // Linearization bound: for concave f, f* ≤ f(x) + max_y∈simplex
        // ∇f·(y−x) = f(x) + max_i ∇f_i − ∇f·x. Gap under tolerance is a
        // certificate of optimality.
        gap = grad.max() - grad.dot(&x);
        if gap <= CERTIFIED_GAP {
            converged = true;
            break;
        }
        if !require_certificate {
            if objective - previous_objective < IMPROVEMENT_EPS {
                stall_streak += 1;
                if stall_streak >= IMPROVEMENT_STREAK {
                    converged = true;
                    break;
                }
            } else {
                stall_streak = 0;
            }
        }
        previous_objective = objective;

        x.axpy(step, &grad, 1.0); // x ← x + step·∇f
        project_to_simplex(x.as_mut_slice());
    }

    let best = Portfolio::from_problem(problem, best_x.as_slice().to_vec())?;
    if converged {
        Ok(best)
    } else {
        Err(PortfolioError::NotConverged {
            best,
            gap_bound: gap,
        })
    }
}

// ---- Brute-force oracle ----

/// Exact maximum over the simplex lattice with spacing ~`grid_step`
/// (weights are multiples of `1/m`, `m = round(1/grid_step)`). Limited to 4
/// markets; independent of the gradient solver, so it serves as its oracle.
///
/// The last coordinate is always determined by the simplex constraint. For
/// n = 4 the innermost coordinate is not enumerated either: along the line
/// `(k₂, K−k₂)` the objective is a one-dimensional quadratic in `k₂`, so its
/// lattice maximum lies at an interval endpoint or adjacent to the
/// continuous vertex — at most six candidates, each evaluated exactly.
pub fn brute_force_solve(
    problem: &PortfolioProblem,
    grid_step: f64,
) -> Result<Portfolio, PortfolioError> {
    let n = problem.len();
    if n > 4 {
        return Err(PortfolioError::TooManyMarkets { n });
    }
    if n == 1 {
        return Portfolio::from_problem(problem, vec![1.0]);
    }
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(PortfolioError::InvalidAlpha);
    }
    let m = (1.0 / grid_step).round().max(1.0) as usize;
    let mf = m as f64;
    let c = &problem.c;
    let v = problem.v.entries();
    let alpha = problem.alpha;

    let eval = |w: &[f64]| dot(c, w) - alpha * quadratic_form(v, w);

    let mut best_objective = f64::NEG_INFINITY;
    let mut best_w: Vec<f64> = Vec::new();
    let mut consider = |w: &[f64]| {
        let obj = eval(w);
        if obj > best_objective {
            best_objective = obj;
            best_w = w.to_vec();
        }
    };

    match n {
        2 => {
            for k0 in 0..=m {
                consider(&[k0 as f64 / mf, (m - k0) as f64 / mf]);
            }
        }
        3 => {
            for k0 in 0..=m {
                for k1 in 0..=(m - k0) {
                    consider(&[
                        k0 as f64 / mf,
                        k1 as f64 / mf,
                        (m - k0 - k1) as f64 / mf,
                    ]);
                }
            }
        }
        4 => {
            // f(base + t·d) with d = (e₂ − e₃)/m is quadratic in t:
            // coefficient a = −α·dᵀVd, so when a < 0 the continuous vertex
            // is t* = b/(−2a); the integer maximum is within 1 of it.
            let dvd = (v[(2, 2)] - v[(2, 3)] - v[(3, 2)] + v[(3, 3)]) / (mf * mf);
            for k0 in 0..=m {
                for k1 in 0..=(m - k0) {
                    let cap = m - k0 - k1;
                    let base = [k0 as f64 / mf, k1 as f64 / mf, 0.0, cap as f64 / mf];
                    let mut candidates = [0i64; 6];
                    let mut count = 0;
                    let push = |t: i64, candidates: &mut [i64; 6], count: &mut usize| {
                        let t = t.clamp(0, cap as i64);
                        if !candidates[..*count].contains(&t) {
                            candidates[*count] = t;
                            *count += 1;
                        }
                    };
                    push(0, &mut candidates, &mut count);
                    push(cap as i64, &mut candidates, &mut count);
                    if alpha * dvd > 0.0 {
                        // Concave along d: locate the continuous vertex.
                        // b = c·d − 2α·baseᵀVd, both in units of 1/m.
                        let cd = (c[2] - c[3]) / mf;
                        let bvd = (0..4)
                            .map(|j| base[j] * (v[(j, 2)] - v[(j, 3)]))
                            .sum::<f64>()
                            / mf;
                        let t_star = (cd - 2.0 * alpha * bvd) / (2.0 * alpha * dvd);
                        let floor = t_star.floor();
                        if floor.is_finite() {
                            let f = floor as i64;
                            for t in [f - 1, f, f + 1, f + 2] {
                                push(t, &mut candidates, &mut count);
                            }
                        }
                    }
                    for &t in &candidates[..count] {
                        let w = [
                            base[0],
                            base[1],
                            t as f64 / mf,
                            (cap as i64 - t) as f64 / mf,
                        ];
                        consider(&w);
                    }
                }
            }
        }
        _ => unreachable!("n is 2, 3, or 4 here"),
    }

    Portfolio::from_problem(problem, best_w)
}

// ---- Frontier ----

/// One solved point of an efficient frontier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub alpha: f64,
    pub expected_return: f64,
    pub risk: f64,
    pub weights: Vec<f64>,
}

/// Default risk-averseness grid: 0 plus 25 logarithmically spaced values
/// spanning (1e-3, 1e3).
pub fn default_alpha_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    let (lo, hi, count) = (1e-3f64, 1e3f64, 25usize);
    for i in 0..count {
        let t = i as f64 / (count - 1) as f64;
        grid.push(lo * (hi / lo).powf(t));
    }
    grid
}

/// Sweeps the efficient frontier over an ascending α grid, warm-starting
/// each solve from the previous optimum.
///
/// Every point is solved to the optimality certificate (not merely to the
/// stall heuristic), which is what makes the exchange-argument monotonicity
/// of risk and return hold to tight tolerance across adjacent points.
pub fn frontier(
    c: &ReturnsVector,
    v: &CovarianceMatrix,
    alphas: &[f64],
) -> Result<Vec<FrontierPoint>, PortfolioError> {
    if alphas.is_empty()
        || alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0))
        || alphas.windows(2).any(|w| w[0] > w[1])
    {
        return Err(PortfolioError::InvalidAlpha);
    }
    let mut points = Vec::with_capacity(alphas.len());
    let mut warm: Option<Vec<f64>> = None;
    for &alpha in alphas {
        let problem = PortfolioProblem::new(c, v, alpha)?;
        let portfolio = solve_internal(&problem, warm.as_deref(), true)?;
        warm = Some(portfolio.weights().to_vec());
        points.push(FrontierPoint {
            alpha,
            expected_return: portfolio.expected_return(),
            risk: portfolio.risk(),
            weights: portfolio.weights().to_vec(),
        });
    }
    Ok(points)
}

// ---- Market filtering ----

/// Candidate-market constraints applied before optimization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarketConstraints {
    /// Markets must have MTTR at least this (censored estimates pass — no
    /// observed revocation means "very stable").
    pub min_mttr_seconds: Option<f64>,
    /// Keep only ids matching at least one pattern (`*` wildcard); empty
    /// keeps all.
    pub include: Vec<String>,
    /// Drop ids matching any pattern.
    pub exclude: Vec<String>,
    pub min_cpu: Option<u32>,
    pub min_mem_gb: Option<f64>,
    /// Keep at most this many markets (most stable first).
    pub max_markets: Option<usize>,
}

/// MTTR must exceed this multiple of the job length for a market to be a
/// sensible host (a server expected to die mid-job is not).
pub const DEFAULT_MTTR_FACTOR: f64 = 2.0;

impl MarketConstraints {
    pub fn none() -> Self {
        Self::default()
    }

    /// Constraints requiring MTTR ≥ `DEFAULT_MTTR_FACTOR ×` the job length.
    pub fn for_job_length(job_length_seconds: f64) -> Self {
        MarketConstraints {
            min_mttr_seconds: Some(DEFAULT_MTTR_FACTOR * job_length_seconds),
            ..Self::default()
        }
    }
}

/// `*`-wildcard match (any substring); no other metacharacters.
fn glob_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let mut rest = text;
    if !rest.starts_with(parts[0]) {
        return false;
    }
    rest = &rest[parts[0].len()..];
    let last = parts[parts.len() - 1];
    for part in &parts[1..parts.len() - 1] {
        if part.is_empty() {
            continue;
        }
        match rest.find(part) {
            Some(i) => rest = &rest[i + part.len()..],
            None => return false,
        }
    }
    rest.ends_with(last)
}

/// Filters the catalog down to candidate markets, in id order.
///
/// `mttr_table` must cover every catalog market. When `max_markets` caps the
/// set, the most stable markets win (censored first, then by descending
/// MTTR, then by id).
pub fn filter_markets(
    catalog: &MarketCatalog,
    mttr_table: &[MttrEstimate],
    constraints: &MarketConstraints,
) -> Result<Vec<MarketId>, PortfolioError> {
    let by_id: BTreeMap<&MarketId, &MttrEstimate> =
        mttr_table.iter().map(|e| (&e.market, e)).collect();
    let covered = catalog.ids().filter(|id| by_id.contains_key(id)).count();
    if covered != catalog.len() {
        return Err(PortfolioError::DimensionMismatch {
            expected: catalog.len(),
            got: covered,
        });
    }

    let mut keep: Vec<(&MarketId, &MttrEstimate)> = Vec::new();
    for entry in catalog.iter() {
        let id = &entry.market_id;
        let est = by_id[id];
        if let Some(min) = constraints.min_mttr_seconds {
            if !est.censored && est.mttr_seconds < min {
                continue;
            }
        }
        if let Some(min_cpu) = constraints.min_cpu {
            if entry.cpu_cores < min_cpu {
                continue;
            }
        }
        if let Some(min_mem) = constraints.min_mem_gb {
            if entry.mem_gb < min_mem {
                continue;
            }
        }
        if !constraints.include.is_empty()
            && !constraints.include.iter().any(|p| glob_match(p, id.as_str()))
        {
            continue;
        }
        if constraints.exclude.iter().any(|p| glob_match(p, id.as_str())) {
            continue;
        }
        keep.push((id, est));
    }

    if let Some(cap) = constraints.max_markets {
        if keep.len() > cap {
            keep.sort_by(|(aid, a), (bid, b)| {
                let stability = |e: &MttrEstimate| {
                    if e.censored {
                        f64::INFINITY
                    } else {
                        e.mttr_seconds
                    }
                };
                stability(b)
                    .partial_cmp(&stability(a))
                    .expect("finite or +inf")
                    .then_with(|| aid.cmp(bid))
            });
            keep.truncate(cap);
            keep.sort_by(|(aid, _), (bid, _)| aid.cmp(bid));
        }
    }

    if keep.is_empty() {
        return Err(PortfolioError::NoCandidateMarkets);
    }
    Ok(keep.into_iter().map(|(id, _)| id.clone()).collect())
}

/// Restricts a returns vector and its covariance matrix to a subset of
/// their markets (e.g. the output of [`filter_markets`]). The base market
/// list must be id-sorted, as produced by the trace-alignment pipeline. A
/// principal submatrix of a PSD matrix is PSD, so no repair pass runs.
pub fn restrict_to(
    c: &ReturnsVector,
    v: &CovarianceMatrix,
    markets: &[MarketId],
) -> Result<(ReturnsVector, CovarianceMatrix), PortfolioError> {
    if v.markets() != c.markets() {
        return Err(PortfolioError::DimensionMismatch {
            expected: c.len(),
            got: v.dim(),
        });
    }
    if markets.is_empty() {
        return Err(PortfolioError::NoCandidateMarkets);
    }
    let indices = markets
        .iter()
        .map(|m| {
            c.markets()
                .binary_search(m)
                .map_err(|_| PortfolioError::UnknownMarket(m.clone()))
        })
        .collect::<Result<Vec<usize>, _>>()?;
    let values: Vec<f64> = indices.iter().map(|&i| c.values()[i]).collect();
    let entries = DMatrix::from_fn(indices.len(), indices.len(), |r, col| {
        v.entries()[(indices[r], indices[col])]
    });
    // Same index list on both axes: lengths agree and symmetry carries over.
    let c_sub = ReturnsVector::new(markets.to_vec(), values).expect("consistent by construction");
    let v_sub = CovarianceMatrix::trusted(markets.to_vec(), v.kind(), entries)
        .expect("consistent by construction");
    Ok((c_sub, v_sub))
}

// ---- Baseline selectors ----

/// Baseline: weight `1/k` on each of the `k` highest-return markets (ties
/// toward the lowest id). Supply `v` to record the baseline's risk for
/// comparison against optimized portfolios; without it risk is recorded
/// as 0.
pub fn greedy_select(
    c: &ReturnsVector,
    v: Option<&CovarianceMatrix>,
    k: usize,
) -> Result<Portfolio, PortfolioError> {
    let n = c.len();
    if k < 1 || k > n {
        return Err(PortfolioError::KOutOfRange { k, n });
    }
    if let Some(v) = v {
        if v.markets() != c.markets() {
            return Err(PortfolioError::DimensionMismatch {
                expected: n,
                got: v.dim(),
            });
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        c.values()[b]
            .partial_cmp(&c.values()[a])
            .expect("finite returns")
            .then(a.cmp(&b))
    });
    let mut weights = vec![0.0; n];
    for &i in order.iter().take(k) {
        weights[i] = 1.0 / k as f64;
    }
    build_portfolio(
        c.markets(),
        c.values(),
        v.map(CovarianceMatrix::entries),
        0.0,
        weights,
    )
}

/// Baseline: all weight on the single highest-return market.
pub fn lowest_cost_select(
    c: &ReturnsVector,
    v: Option<&CovarianceMatrix>,
) -> Result<Portfolio, PortfolioError> {
    greedy_select(c, v, 1)
}

// ---- Cache ----

/// Precomputed portfolios over an α grid, invalidated whenever the inputs
/// change. Lookups at grid α return the cached portfolio bitwise; off-grid
/// α and restricted candidate sets are solved on demand and memoized.
#[derive(Debug, Clone)]
pub struct PortfolioCache {
    c: ReturnsVector,
    v: CovarianceMatrix,
    grid: Vec<f64>,
    by_alpha: BTreeMap<u64, Portfolio>,
    by_subset: BTreeMap<(u64, Vec<MarketId>), Portfolio>,
}

impl PortfolioCache {
    /// Solves the grid upfront (ascending, warm-started).
    pub fn precompute(
        c: &ReturnsVector,
        v: &CovarianceMatrix,
        alpha_grid: &[f64],
    ) -> Result<Self, PortfolioError> {
        if alpha_grid.is_empty()
            || alpha_grid.iter().any(|a| !(a.is_finite() && *a >= 0.0))
            || alpha_grid.windows(2).any(|w| w[0] > w[1])
        {
            return Err(PortfolioError::InvalidAlpha);
        }
        let mut by_alpha = BTreeMap::new();
        for &alpha in alpha_grid {
            let problem = PortfolioProblem::new(c, v, alpha)?;
            // Solved cold, exactly like a standalone `solve`, so off-grid
            // fallbacks and cached entries are interchangeable.
            by_alpha.insert(alpha.to_bits(), solve(&problem)?);
        }
        Ok(PortfolioCache {
            c: c.clone(),
            v: v.clone(),
            grid: alpha_grid.to_vec(),
            by_alpha,
            by_subset: BTreeMap::new(),
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    fn check_fresh(
        &self,
        c: &ReturnsVector,
        v: &CovarianceMatrix,
    ) -> Result<(), PortfolioError> {
        if *c != self.c || *v != self.v {
            return Err(PortfolioError::StaleCache);
        }
        Ok(())
    }

    /// Returns the portfolio for `alpha` over all cached markets. Callers
    /// pass their current inputs; if they differ from the cached ones the
    /// cache refuses with [`PortfolioError::StaleCache`].
    pub fn lookup(
        &mut self,
        c: &ReturnsVector,
        v: &CovarianceMatrix,
        alpha: f64,
    ) -> Result<Portfolio, PortfolioError> {
        self.check_fresh(c, v)?;
        if let Some(p) = self.by_alpha.get(&alpha.to_bits()) {
            return Ok(p.clone());
        }
        let problem = PortfolioProblem::new(&self.c, &self.v, alpha)?;
        let portfolio = solve(&problem)?;
        self.by_alpha.insert(alpha.to_bits(), portfolio.clone());
        Ok(portfolio)
    }

    /// Portfolio over a restricted candidate set (e.g. after market
    /// filtering); solved on the principal sub-problem and memoized.
    pub fn lookup_constrained(
        &mut self,
        c: &ReturnsVector,
        v: &CovarianceMatrix,
        alpha: f64,
        candidates: &[MarketId],
    ) -> Result<Portfolio, PortfolioError> {
        self.check_fresh(c, v)?;
        if candidates.len() == self.c.len() && candidates == self.c.markets() {
            return self.lookup(c, v, alpha);
        }
        let key = (alpha.to_bits(), candidates.to_vec());
        if let Some(p) = self.by_subset.get(&key) {
            return Ok(p.clone());
        }
        let indices: Vec<usize> = candidates
            .iter()
            .map(|id| {
                self.c
                    .markets()
                    .binary_search(id)
                    .map_err(|_| PortfolioError::NoCandidateMarkets)
            })
            .collect::<Result<_, _>>()?;
        let sub_c = ReturnsVector::new(
            candidates.to_vec(),
            indices.iter().map(|&i| self.c.values()[i]).collect(),
        )
        .map_err(|_| PortfolioError::DimensionMismatch {
            expected: candidates.len(),
            got: 0,
        })?;
        let entries = self.v.entries();
        let sub_entries = DMatrix::from_fn(indices.len(), indices.len(), |i, j| {
            entries[(indices[i], indices[j])]
        });
        // A principal submatrix of a PSD matrix is PSD.
        let sub_v =
            CovarianceMatrix::trusted(candidates.to_vec(), self.v.kind(), sub_entries)
                .map_err(|_| PortfolioError::DimensionMismatch {
                    expected: candidates.len(),
                    got: 0,
                })?;
        let problem = PortfolioProblem::new(&sub_c, &sub_v, alpha)?;
        let portfolio = solve(&problem)?;
        self.by_subset.insert(key, portfolio.clone());
        Ok(portfolio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::risk::CovarianceKind;

    fn mids(n: usize) -> Vec<MarketId> {
        (0..n)
            .map(|i| MarketId::new(format!("m{i}")).unwrap())
            .collect()
    }

    fn problem(c: &[f64], v_entries: &[f64], alpha: f64) -> PortfolioProblem {
        let n = c.len();
        let markets = mids(n);
        let c = ReturnsVector::new(markets.clone(), c.to_vec()).unwrap();
        let m = DMatrix::from_row_slice(n, n, v_entries);
        let v = CovarianceMatrix::new(markets, CovarianceKind::Synthetic, m).unwrap();
        PortfolioProblem::new(&c, &v, alpha).unwrap()
    }

    fn random_psd_problem(rng: &mut ChaCha8Rng, n: usize, alpha: f64) -> PortfolioProblem {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let gram = a.transpose() * &a;
        let sym = (&gram + gram.transpose()) * 0.5;
        let c: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let markets = mids(n);
        let c = ReturnsVector::new(markets.clone(), c).unwrap();
        let v = CovarianceMatrix::new(markets, CovarianceKind::Synthetic, sym).unwrap();
        PortfolioProblem::new(&c, &v, alpha).unwrap()
    }

    #[test]
    fn zero_alpha_concentrates_on_best_return() {
        let p = problem(&[0.8, 0.9, 0.7], &[0.0; 9], 0.0);
        let x = solve(&p).unwrap();
        assert_eq!(x.weights(), &[0.0, 1.0, 0.0]);
        assert_eq!(x.expected_return(), 0.9);
        // Ties break toward the lowest market id.
        let p = problem(&[0.9, 0.9], &[0.0; 4], 0.0);
        assert_eq!(solve(&p).unwrap().weights(), &[1.0, 0.0]);
    }

    #[test]
    fn single_market_gets_everything() {
        let p = problem(&[0.4], &[0.5], 7.0);
        assert_eq!(solve(&p).unwrap().weights(), &[1.0]);
        assert_eq!(brute_force_solve(&p, 1e-3).unwrap().weights(), &[1.0]);
    }

    #[test]
    fn interior_optimum_matches_first_order_condition() {
        // c=[0.9,0.8], V=diag(0.04,0.01), α=10: equalizing the gradient
        // components on the interior gives x₁ = 0.3.
        let p = problem(&[0.9, 0.8], &[0.04, 0.0, 0.0, 0.01], 10.0);
        let x = solve(&p).unwrap();
        assert_relative_eq!(x.weights()[0], 0.3, epsilon = 1e-6);
        assert_relative_eq!(x.weights()[1], 0.7, epsilon = 1e-6);
        // Recorded statistics are consistent with the weights.
        let expect_risk = 0.04 * 0.09 + 0.01 * 0.49;
        assert_relative_eq!(x.risk(), expect_risk, epsilon = 1e-9);
        assert_relative_eq!(
            x.objective(),
            x.expected_return() - 10.0 * x.risk(),
            epsilon = 1e-12
        );

        let oracle = brute_force_solve(&p, 1e-4).unwrap();
        assert_relative_eq!(oracle.weights()[0], 0.3, epsilon = 1e-9);
        assert!(x.objective() >= oracle.objective() - 1e-6);
    }

    #[test]
    fn symmetric_instance_is_uniform() {
        let p = problem(
            &[0.5, 0.5, 0.5],
            &[0.02, 0.0, 0.0, 0.0, 0.02, 0.0, 0.0, 0.0, 0.02],
            100.0,
        );
        let x = solve(&p).unwrap();
        for &w in x.weights() {
            assert_relative_eq!(w, 1.0 / 3.0, epsilon = 1e-10);
        }
        assert_relative_eq!(x.risk(), 0.02 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_psd_problem(&mut rng, 5, 1.0);
        assert!(matches!(
            brute_force_solve(&p, 0.01),
            Err(PortfolioError::TooManyMarkets { n: 5 })
        ));
    }

    #[test]
    fn four_market_oracle_equals_full_enumeration() {
        // The n=4 path replaces the innermost loop with a closed-form
        // lattice maximum; verify against the naive triple loop on a coarse
        // grid.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for alpha in [0.0, 0.5, 3.0, 50.0] {
            let p = random_psd_problem(&mut rng, 4, alpha);
            let fast = brute_force_solve(&p, 0.05).unwrap();
            let m = 20usize;
            let mf = m as f64;
            let mut best = f64::NEG_INFINITY;
            for k0 in 0..=m {
                for k1 in 0..=(m - k0) {
                    for k2 in 0..=(m - k0 - k1) {
                        let w = [
                            k0 as f64 / mf,
                            k1 as f64 / mf,
                            k2 as f64 / mf,
                            (m - k0 - k1 - k2) as f64 / mf,
                        ];
                        let obj = dot(p.returns(), &w)
                            - alpha * quadratic_form(p.covariance().entries(), &w);
                        if obj > best {
                            best = obj;
                        }
                    }
                }
            }
            assert_eq!(fast.objective(), best, "alpha {alpha}");
        }
    }

    #[test]
    fn frontier_is_monotone_on_default_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_psd_problem(&mut rng, 4, 0.0);
        let c = ReturnsVector::new(p.markets().to_vec(), p.returns().to_vec()).unwrap();
        let points = frontier(&c, p.covariance(), &default_alpha_grid()).unwrap();
        assert_eq!(points.len(), 26);
        for pair in points.windows(2) {
            assert!(pair[1].risk <= pair[0].risk + 1e-9);
            assert!(pair[1].expected_return <= pair[0].expected_return + 1e-9);
        }
    }

    #[test]
    fn frontier_validates_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_psd_problem(&mut rng, 3, 0.0);
        let c = ReturnsVector::new(p.markets().to_vec(), p.returns().to_vec()).unwrap();
        assert!(matches!(
            frontier(&c, p.covariance(), &[1.0, 0.5]),
            Err(PortfolioError::InvalidAlpha)
        ));
        assert!(matches!(
            frontier(&c, p.covariance(), &[-1.0]),
            Err(PortfolioError::InvalidAlpha)
        ));
    }

    #[test]
    fn baseline_selectors() {
        let markets = mids(3);
        let c = ReturnsVector::new(markets, vec![0.9, 0.8, 0.7]).unwrap();
        let top2 = greedy_select(&c, None, 2).unwrap();
        assert_eq!(top2.weights(), &[0.5, 0.5, 0.0]);
        let all = greedy_select(&c, None, 3).unwrap();
        for &w in all.weights() {
            assert_relative_eq!(w, 1.0 / 3.0, epsilon = 1e-15);
        }
        let single = lowest_cost_select(&c, None).unwrap();
        assert_eq!(single.weights(), &[1.0, 0.0, 0.0]);
        assert!(matches!(
            greedy_select(&c, None, 0),
            Err(PortfolioError::KOutOfRange { k: 0, n: 3 })
        ));
        assert!(matches!(
            greedy_select(&c, None, 4),
            Err(PortfolioError::KOutOfRange { k: 4, n: 3 })
        ));
        // Supplying the covariance records the baseline's risk.
        let v = CovarianceMatrix::trusted(
            mids(3),
            CovarianceKind::Synthetic,
            DMatrix::identity(3, 3) * 0.04,
        )
        .unwrap();
        let with_risk = greedy_select(&c, Some(&v), 2).unwrap();
        assert_relative_eq!(with_risk.risk(), 0.02, epsilon = 1e-12);
    }

    #[test]
    fn filtering_by_mttr_and_patterns() {
        use crate::market::MarketCatalogEntry;
        let catalog = MarketCatalog::new(
            ["m-a", "m-b", "m-c"]
                .iter()
                .map(|id| MarketCatalogEntry {
                    market_id: MarketId::new(*id).unwrap(),
                    zone: "z".to_string(),
                    cpu_cores: 4,
                    mem_gb: 16.0,
                    on_demand_price: 1.0,
                })
                .collect(),
        )
        .unwrap();
        let table: Vec<MttrEstimate> = [
            ("m-a", 5.0 * 3600.0, 4, false),
            ("m-b", 20.0 * 3600.0, 1, false),
            ("m-c", 100.0 * 3600.0, 0, true),
        ]
        .iter()
        .map(|&(id, mttr_seconds, revocation_count, censored)| MttrEstimate {
            market: MarketId::new(id).unwrap(),
            mttr_seconds,
            revocation_count,
            censored,
        })
        .collect();

        let all = filter_markets(&catalog, &table, &MarketConstraints::none()).unwrap();
        assert_eq!(all.len(), 3);

        // 5 h job, factor 2 → need MTTR ≥ 10 h; censored m-c passes.
        let c = MarketConstraints::for_job_length(5.0 * 3600.0);
        let filtered = filter_markets(&catalog, &table, &c).unwrap();
        let names: Vec<&str> = filtered.iter().map(MarketId::as_str).collect();
        assert_eq!(names, ["m-b", "m-c"]);

        let c = MarketConstraints {
            exclude: vec!["m-*".to_string()],
            ..MarketConstraints::none()
        };
        assert!(matches!(
            filter_markets(&catalog, &table, &c),
            Err(PortfolioError::NoCandidateMarkets)
        ));

        // max_markets keeps the most stable.
        let c = MarketConstraints {
            max_markets: Some(2),
            ..MarketConstraints::none()
        };
        let capped = filter_markets(&catalog, &table, &c).unwrap();
        let names: Vec<&str> = capped.iter().map(MarketId::as_str).collect();
        assert_eq!(names, ["m-b", "m-c"]);
    }

    #[test]
    fn glob_patterns() {
        assert!(glob_match("m-a", "m-a"));
        assert!(!glob_match("m-a", "m-ab"));
        assert!(glob_match("m-*", "m-anything"));
        assert!(glob_match("*large*", "us-east-1a/m3.large"));
        assert!(glob_match("us-*/m3.*", "us-east-1a/m3.large"));
        assert!(!glob_match("eu-*", "us-east-1a/m3.large"));
    }

    #[test]
    fn cache_hits_misses_and_staleness() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_psd_problem(&mut rng, 3, 0.0);
        let c = ReturnsVector::new(p.markets().to_vec(), p.returns().to_vec()).unwrap();
        let v = p.covariance().clone();
        let grid = [0.0, 1.0, 10.0];
        let mut cache = PortfolioCache::precompute(&c, &v, &grid).unwrap();

        // Grid hits are bitwise equal to a cold solve.
        let hit = cache.lookup(&c, &v, 1.0).unwrap();
        let cold = solve(&PortfolioProblem::new(&c, &v, 1.0).unwrap()).unwrap();
        assert_eq!(hit, cold);

        // Off-grid lookups equal a fresh solve and are memoized.
        let off = cache.lookup(&c, &v, 5.0).unwrap();
        let fresh = solve(&PortfolioProblem::new(&c, &v, 5.0).unwrap()).unwrap();
        assert_eq!(off, fresh);
        assert_eq!(cache.lookup(&c, &v, 5.0).unwrap(), off);

        // Restricted candidate set solves the sub-problem.
        let subset = [p.markets()[0].clone(), p.markets()[2].clone()];
        let sub = cache.lookup_constrained(&c, &v, 1.0, &subset).unwrap();
        assert_eq!(sub.markets(), &subset);
        assert_relative_eq!(sub.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-9);

        // Changing V without rebuilding → StaleCache.
        let scaled = CovarianceMatrix::trusted(
            v.markets().to_vec(),
            v.kind(),
            v.entries() * 2.0,
        )
        .unwrap();
        assert!(matches!(
            cache.lookup(&c, &scaled, 1.0),
            Err(PortfolioError::StaleCache)
        ));
    }

    #[test]
    fn simplex_projection_examples() {
        let mut v = [1.2, -0.3];
        project_to_simplex(&mut v);
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(v[1], 0.0, epsilon = 1e-12);

        let mut v = [0.2, 0.4];
        project_to_simplex(&mut v);
        assert_relative_eq!(v[0], 0.4, epsilon = 1e-12);
        assert_relative_eq!(v[1], 0.6, epsilon = 1e-12);

        // Feasible points are fixed points.
        let mut v = [0.25, 0.75];
        project_to_simplex(&mut v);
        assert_relative_eq!(v[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(v[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn truncation_drops_dust() {
        let p = problem(&[0.9, 0.8], &[0.0; 4], 0.0);
        let x = Portfolio::from_problem(&p, vec![1.0 - 1e-9, 1e-9]).unwrap();
        let t = x.truncated_weights();
        assert_eq!(t, vec![1.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn solve_is_feasible_and_deterministic(seed in 0u64..1000, n in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let alpha = [0.0, 0.1, 1.0, 10.0][(seed % 4) as usize];
            let p = random_psd_problem(&mut rng, n, alpha);
            let a = solve(&p).unwrap();
            let b = solve(&p).unwrap();
            prop_assert_eq!(a.weights(), b.weights());
            prop_assert!((a.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-8);
            prop_assert!(a.weights().iter().all(|&w| w >= 0.0));
        }

        #[test]
        fn solve_dominates_coarse_oracle(seed in 0u64..500, n in 2usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let alpha = [0.0, 0.5, 5.0, 50.0][(seed % 4) as usize];
            let p = random_psd_problem(&mut rng, n, alpha);
            let solved = solve(&p).unwrap();
            let oracle = brute_force_solve(&p, 0.01).unwrap();
            prop_assert!(
                solved.objective() >= oracle.objective() - 1e-6,
                "solver {} vs oracle {}", solved.objective(), oracle.objective()
            );
        }

        #[test]
        fn scaling_v_and_inverse_scaling_alpha_is_invariant(
            seed in 0u64..500,
            scale in 0.01f64..100.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_psd_problem(&mut rng, 3, 2.0);
            let base = solve(&p).unwrap();

            let c = ReturnsVector::new(p.markets().to_vec(), p.returns().to_vec()).unwrap();
            let scaled_v = CovarianceMatrix::trusted(
                p.markets().to_vec(),
                p.covariance().kind(),
                p.covariance().entries() * scale,
            ).unwrap();
            let scaled_p = PortfolioProblem::new(&c, &scaled_v, 2.0 / scale).unwrap();
            let scaled = solve(&scaled_p).unwrap();
            // α·xVx is unchanged by (V·s, α/s), so optimal objectives agree.
            prop_assert!((base.objective() - scaled.objective()).abs() <= 1e-8);
        }

        #[test]
        fn zero_alpha_weight_stays_on_argmax(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_psd_problem(&mut rng, 4, 0.0);
            let x = solve(&p).unwrap();
            let best = p.returns().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let off_argmax: f64 = x.weights().iter().zip(p.returns())
                .filter(|(_, &r)| r < best)
                .map(|(&w, _)| w)
                .sum();
            prop_assert!(off_argmax <= 1e-8);
        }
    }
}
