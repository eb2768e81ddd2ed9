//! Rank selection on random subgrids.
//!
//! Each draw picks one node per block of `m` consecutive grid nodes, fits the
//! masked completion on the resulting `L* x L*` covariance for increasing
//! ranks and applies the scree cutoff. Draws are aggregated by their mode
//! (rank selection) or by the per-rank median of the scree values combined
//! with a condition-number cap (essential rank).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{band_mask, covariance_of_rows, empirical_covariance, Completion, CompletionOptions};
use crate::error::{invalid, Error, Result};
use crate::grid::{CurveSet, Grid};
use crate::seed;

/// Smallest subgrid that admits rank 1 under the `L* ≥ 4(r + 1)` bound.
pub const MIN_SUBGRID: usize = 8;

/// Tuning constants shared by the rank procedures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankSettings {
    /// Subgrid stride; `L* = ⌊L / m⌋`.
    pub m: usize,
    /// Number of subgrid draws.
    pub b: usize,
    /// Band fraction removed from the subgrid covariance.
    pub delta_star: f64,
    /// Largest rank scanned.
    pub max_rank: usize,
    /// Scree cutoff is `c1_multiplier · L*²`.
    pub c1_multiplier: f64,
    /// Condition-number cap for the essential rank.
    pub c2: f64,
    pub seed: u64,
    pub completion: CompletionOptions,
}

impl Default for RankSettings {
    fn default() -> Self {
        Self {
            m: 4,
            b: 100,
            delta_star: 0.15,
            max_rank: 10,
            c1_multiplier: 0.01,
            c2: 50.0,
            seed: 0,
            completion: CompletionOptions::default(),
        }
    }
}

impl RankSettings {
    pub fn lstar(&self, l: usize) -> usize {
        l / self.m.max(1)
    }

    pub fn c1(&self, l: usize) -> f64 {
        let ls = self.lstar(l) as f64;
        self.c1_multiplier * ls * ls
    }
}

/// Largest rank the mode may take on an `L*` subgrid, `⌊L*/4 − 1⌋`.
pub fn mode_bound(lstar: usize) -> usize {
    (lstar as f64 / 4.0 - 1.0).floor().max(0.0) as usize
}

/// Largest rank scanned for the essential rank, `⌊L*/4 + 1⌋`.
pub fn essential_bound(lstar: usize) -> usize {
    lstar / 4 + 1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgridPlan {
    pub m: usize,
    pub lstar: usize,
    /// Zero-based original-grid indices, one from each block `[m j, m j + m)`.
    pub indices: Vec<usize>,
}

impl SubgridPlan {
    /// Largest rank `r` with `L* ≥ 4(r + 1)`.
    pub fn max_identifiable_rank(&self) -> usize {
        (self.lstar / 4).saturating_sub(1)
    }

    pub fn subgrid(&self, grid: &Grid) -> Result<Grid> {
        Grid::new(self.indices.iter().map(|&i| grid.nodes()[i]).collect())
            .or_else(|_| Grid::midpoints(self.lstar))
    }
}

pub fn subsample(grid: &Grid, m: usize, seed: u64) -> Result<SubgridPlan> {
    if m <= 1 {
        return Err(invalid(format!("subgrid stride m must exceed 1, got {m}")));
    }
    let lstar = grid.len() / m;
    if lstar < MIN_SUBGRID {
        return Err(invalid(format!(
            "subgrid size {lstar} = ⌊{}/{m}⌋ is below {MIN_SUBGRID}, the critical value 4(r + 1) for rank 1",
            grid.len()
        )));
    }
    let mut rng = seed::rng(seed);
    let indices = (0..lstar).map(|j| m * j + rng.random_range(0..m)).collect();
    Ok(SubgridPlan { m, lstar, indices })
}

/// Outcome of one subgrid draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEstimate {
    pub rank: usize,
    /// No scanned rank reached the cutoff; `rank` is the largest scanned.
    pub saturated: bool,
    pub scan: BTreeMap<usize, f64>,
    /// Ranks whose optimiser stopped before meeting its gradient tolerance.
    pub unconverged: Vec<usize>,
}

fn subgrid_covariance(w: &CurveSet, plan: &SubgridPlan) -> Result<crate::covariance::CovMatrix> {
    if plan.indices.iter().any(|&i| i >= w.grid_len()) {
        return Err(invalid("subgrid plan does not fit the curve grid"));
    }
    covariance_of_rows(&w.select_columns(&plan.indices))
}

fn scan_subgrid(
    w: &CurveSet,
    plan: &SubgridPlan,
    delta_star: f64,
    max_rank: usize,
    stop_below: Option<f64>,
    opts: CompletionOptions,
) -> Result<(BTreeMap<usize, f64>, Vec<usize>)> {
    if max_rank == 0 {
        return Err(invalid("maximum rank must be at least 1"));
    }
    let k = subgrid_covariance(w, plan)?;
    let mask = band_mask(plan.lstar, delta_star)?;
    let scan = Completion::new(&k, mask, opts)?.scan(max_rank.min(plan.lstar), stop_below)?;
    let unconverged = scan.converged.iter().filter(|(_, &c)| !c).map(|(&j, _)| j).collect();
    Ok((scan.values, unconverged))
}

/// Scree-rule rank on one subgrid.
pub fn estimate_rank_once(
    w: &CurveSet,
    plan: &SubgridPlan,
    delta_star: f64,
    max_rank: usize,
    c1: f64,
    opts: CompletionOptions,
) -> Result<RankEstimate> {
    let (scan, unconverged) = scan_subgrid(w, plan, delta_star, max_rank, Some(c1), opts)?;
    let picked = crate::covariance::scree_select(&scan, c1)?;
    let top = *scan.keys().next_back().expect("non-empty scan");
    Ok(RankEstimate { rank: picked.unwrap_or(top), saturated: picked.is_none(), scan, unconverged })
}

/// Most frequent value; ties go to the smaller one.
pub fn mode_of(votes: &[usize]) -> Option<usize> {
    let mut hist = BTreeMap::new();
    for &v in votes {
        *hist.entry(v).or_insert(0usize) += 1;
    }
    // BTreeMap iterates ascending, and `max_by_key` keeps the last maximum,
    // so scan in reverse to keep the first.
    hist.iter().rev().max_by_key(|(_, &c)| c).map(|(&v, _)| v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankVote {
    pub per_iteration: Vec<usize>,
    pub histogram: BTreeMap<usize, usize>,
    pub mode: usize,
    pub b: usize,
    pub lstar: usize,
    /// Upper end of the admissible mode range, `⌊L*/4 − 1⌋`.
    pub mode_bound: usize,
    /// Every vote exceeded `mode_bound`; `mode` is then the unrestricted mode.
    pub mode_out_of_range: bool,
    pub saturated_draws: usize,
    pub scans: Vec<BTreeMap<usize, f64>>,
    pub c1: f64,
    pub settings: RankSettings,
}

pub fn estimate_rank_mode(w: &CurveSet, settings: &RankSettings) -> Result<RankVote> {
    if settings.b == 0 {
        return Err(invalid("number of subgrid draws B must be at least 1"));
    }
    let grid = w.grid();
    let lstar = settings.lstar(grid.len());
    let c1 = settings.c1(grid.len());
    let draws: Vec<RankEstimate> = (0..settings.b)
        .into_par_iter()
        .map(|b| {
            let s = settings.seed.wrapping_add(b as u64);
            let plan = subsample(grid, settings.m, s)?;
            let opts = CompletionOptions { seed: seed::derive(s, 1), ..settings.completion };
            estimate_rank_once(w, &plan, settings.delta_star, settings.max_rank, c1, opts)
        })
        .collect::<Result<_>>()?;

    let per_iteration: Vec<usize> = draws.iter().map(|d| d.rank).collect();
    let mut histogram = BTreeMap::new();
    for &v in &per_iteration {
        *histogram.entry(v).or_insert(0usize) += 1;
    }
    let bound = mode_bound(lstar);
    let admissible: Vec<usize> = per_iteration.iter().copied().filter(|&v| v <= bound).collect();
    let (mode, out_of_range) = match mode_of(&admissible) {
        Some(m) => (m, false),
        None => (mode_of(&per_iteration).expect("B ≥ 1"), true),
    };
    Ok(RankVote {
        histogram,
        mode,
        b: settings.b,
        lstar,
        mode_bound: bound,
        mode_out_of_range: out_of_range,
        saturated_draws: draws.iter().filter(|d| d.saturated).count(),
        scans: draws.into_iter().map(|d| d.scan).collect(),
        per_iteration,
        c1,
        settings: *settings,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssentialRankResult {
    /// Median of `f(j)` over the subgrid draws.
    pub medians: BTreeMap<usize, f64>,
    /// `λ₁ / λ_j` of the full-grid rank-`j` completion.
    pub condition_numbers: BTreeMap<usize, f64>,
    /// `None` only inside a [`Error::NoFeasibleRank`] diagnostic.
    pub rank: Option<usize>,
    pub scans: Vec<BTreeMap<usize, f64>>,
    pub c1: f64,
    pub c2: f64,
    pub lstar: usize,
    pub settings: RankSettings,
}

/// Eigenvalues of `θθᵀ`, descending, via the `j x j` matrix `θᵀθ`.
fn factor_eigenvalues(theta: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(theta.transpose() * theta).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Condition numbers `λ₁/λ_j` of full-grid completions for `j = 1..=max_rank`.
pub fn completion_condition_numbers(
    w: &CurveSet,
    delta_star: f64,
    max_rank: usize,
    opts: CompletionOptions,
) -> Result<BTreeMap<usize, f64>> {
    let k = empirical_covariance(w)?;
    let mask = band_mask(w.grid_len(), delta_star)?;
    let scan = Completion::new(&k, mask, opts)?.scan(max_rank.min(w.grid_len()), None)?;
    Ok(scan
        .fits
        .iter()
        .map(|(&j, fit)| {
            let ev = factor_eigenvalues(fit.factor.theta());
            let ratio = if ev[j - 1] > 0.0 { ev[0] / ev[j - 1] } else { f64::INFINITY };
            (j, ratio)
        })
        .collect())
}

/// `max { j : f̃(j) ≤ c₁, ã_j ≤ c₂ }` with ranks scanned up to
/// `min(M, ⌊L*/4⌋ + 1)`.
pub fn essential_rank(w: &CurveSet, settings: &RankSettings) -> Result<EssentialRankResult> {
    if !(settings.c2 > 1.0) {
        return Err(invalid(format!("condition-number cap c2 must exceed 1, got {}", settings.c2)));
    }
    if settings.b == 0 {
        return Err(invalid("number of subgrid draws B must be at least 1"));
    }
    let grid = w.grid();
    let lstar = settings.lstar(grid.len());
    let c1 = settings.c1(grid.len());
    let top = settings.max_rank.min(essential_bound(lstar));
    let scans: Vec<BTreeMap<usize, f64>> = (0..settings.b)
        .into_par_iter()
        .map(|b| {
            let s = settings.seed.wrapping_add(b as u64);
            let plan = subsample(grid, settings.m, s)?;
            let opts = CompletionOptions { seed: seed::derive(s, 1), ..settings.completion };
            scan_subgrid(w, &plan, settings.delta_star, top, None, opts).map(|(scan, _)| scan)
        })
        .collect::<Result<_>>()?;
    let top = scans[0].len();
    let medians: BTreeMap<usize, f64> = (1..=top)
        .map(|j| {
            let mut v: Vec<f64> = scans.iter().map(|s| s[&j]).collect();
            (j, median(&mut v))
        })
        .collect();
    let full_opts = CompletionOptions { seed: seed::derive(settings.seed, u64::MAX), ..settings.completion };
    let condition_numbers = completion_condition_numbers(w, settings.delta_star, top, full_opts)?;
    let rank = (1..=top)
        .filter(|j| medians[j] <= c1 && condition_numbers[j] <= settings.c2)
        .max();
    let result = EssentialRankResult {
        medians,
        condition_numbers,
        rank,
        scans,
        c1,
        c2: settings.c2,
        lstar,
        settings: *settings,
    };
    match rank {
        Some(_) => Ok(result),
        None => Err(Error::NoFeasibleRank(Box::new(result))),
    }
}

/// The essential-rank rule applied to precomputed diagnostics.
pub fn essential_rule(
    medians: &BTreeMap<usize, f64>,
    condition_numbers: &BTreeMap<usize, f64>,
    c1: f64,
    c2: f64,
) -> Option<usize> {
    medians
        .iter()
        .filter(|(j, &f)| f <= c1 && condition_numbers.get(j).is_some_and(|&a| a <= c2))
        .map(|(&j, _)| j)
        .max()
}
