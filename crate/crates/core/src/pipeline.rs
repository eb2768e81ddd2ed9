//! End-to-end covariance recovery: choose a rank on subgrids, complete the
//! full-grid covariance at that rank and decompose it.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::covariance::{band_mask, empirical_covariance, Completion, CompletionOptions, CovMatrix};
use crate::error::{invalid, Result};
use crate::grid::{CurveSet, GridFunction};
use crate::operator::{kernel_eigen, EigenSystem};
use crate::rank::{essential_rank, estimate_rank_mode, EssentialRankResult, RankSettings, RankVote};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankChoice {
    /// Mode of the subgrid scree ranks.
    Mode,
    /// Essential rank with the condition-number cap.
    Essential,
    Fixed(usize),
}

#[derive(Clone, Debug)]
pub struct CovarianceFit {
    pub rank: usize,
    pub kx: CovMatrix,
    pub eigensystem: EigenSystem,
    pub objective: f64,
    pub converged: bool,
    pub vote: Option<RankVote>,
    pub essential: Option<EssentialRankResult>,
}

/// Rank-`r` completion of the full-grid covariance of `w`.
pub fn complete_full_grid(w: &CurveSet, r: usize, delta_star: f64, opts: CompletionOptions) -> Result<(CovMatrix, f64, bool)> {
    let k = empirical_covariance(w)?;
    let mask = band_mask(w.grid_len(), delta_star)?;
    let fit = Completion::new(&k, mask, opts)?.fit(r)?;
    Ok((fit.factor.gram(), fit.objective, fit.converged))
}

pub fn estimate_covariance(w: &CurveSet, settings: &RankSettings, choice: RankChoice) -> Result<CovarianceFit> {
    let (rank, vote, essential) = match choice {
        RankChoice::Fixed(0) => return Err(invalid("fixed rank must be at least 1")),
        RankChoice::Fixed(r) => (r, None, None),
        RankChoice::Mode => {
            let v = estimate_rank_mode(w, settings)?;
            (v.mode, Some(v), None)
        }
        RankChoice::Essential => {
            let e = essential_rank(w, settings)?;
            (e.rank.expect("feasible essential rank"), None, Some(e))
        }
    };
    let opts = CompletionOptions { seed: seed::derive(settings.seed, u64::MAX - 1), ..settings.completion };
    let (kx, objective, converged) = complete_full_grid(w, rank, settings.delta_star, opts)?;
    let eigensystem = kernel_eigen(&kx, w.grid(), rank)?;
    Ok(CovarianceFit { rank, kx, eigensystem, objective, converged, vote, essential })
}

/// `W̄ + Σ_j ⟨W_i − W̄, η_j⟩ η_j` for every curve.
pub fn decontaminate(w: &CurveSet, es: &EigenSystem) -> Result<CurveSet> {
    let mean = w.mean();
    let mut out = w.centered();
    for i in 0..w.n() {
        let row = GridFunction::new(out.row(i).iter().copied().collect());
        let proj = es.project(&row)?;
        for (t, v) in proj.values().iter().enumerate() {
            out[(i, t)] = v + mean.values()[t];
        }
    }
    CurveSet::new(out, w.grid().clone())
}

/// `diag(K̂_W − K̂_X)` clipped at zero.
pub fn error_variance(w: &CurveSet, kx: &CovMatrix) -> Result<Vec<f64>> {
    let kw = empirical_covariance(w)?;
    if kw.dim() != kx.dim() {
        return Err(invalid("covariance sizes differ"));
    }
    let d: DVector<f64> = kw.entries().diagonal() - kx.entries().diagonal();
    Ok(d.iter().map(|v| v.max(0.0)).collect())
}
