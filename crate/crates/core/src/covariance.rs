//! Empirical covariances, band masks and masked low-rank completion.
//!
//! The completion problem fits a rank-`j` PSD matrix `Θ = θθᵀ` to the entries
//! of an empirical covariance `K̂` that lie *outside* a diagonal band:
//!
//! ```text
//! f(θ) = ‖P ∘ (K̂ − θθᵀ)‖_F²,   P_ab = 1(|a − b| > ⌈L δ*⌉)
//! ```
//!
//! Deleting the band removes the contribution of a measurement-error process
//! whose covariance vanishes beyond the band; the low-rank fit then fills the
//! band back in. The objective is kept unnormalised.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::CurveSet;
use crate::lbfgs::{self, LbfgsOptions};
use crate::seed;

/// A symmetric `L x L` covariance matrix with nonnegative diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct CovMatrix {
    entries: DMatrix<f64>,
}

impl CovMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(invalid("covariance matrix must be square"));
        }
        let scale = entries.amax().max(1.0);
        let l = entries.nrows();
        for a in 0..l {
            if entries[(a, a)] < -1e-12 * scale || !entries[(a, a)].is_finite() {
                return Err(invalid(format!("covariance diagonal entry {} is negative", a + 1)));
            }
            for b in 0..a {
                if (entries[(a, b)] - entries[(b, a)]).abs() > 1e-12 * scale {
                    return Err(invalid(format!(
                        "covariance matrix not symmetric at ({}, {})",
                        a + 1,
                        b + 1
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub(crate) fn from_symmetric_unchecked(entries: DMatrix<f64>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }
}

/// `(1/n) Σ (W_i − W̄)(W_i − W̄)ᵀ`.
pub fn empirical_covariance(w: &CurveSet) -> Result<CovMatrix> {
    covariance_of_rows(w.data())
}

/// Empirical covariance of the rows of `data` (divisor `n`).
pub fn covariance_of_rows(data: &DMatrix<f64>) -> Result<CovMatrix> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mean = data.row_mean();
    let mut c = data.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    let mut k = c.transpose() * &c;
    k /= n as f64;
    k.fill_upper_triangle_with_lower_triangle();
    Ok(CovMatrix::from_symmetric_unchecked(k))
}

/// `P_ab = 1(|a − b| > ⌈L δ*⌉)`, stored implicitly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandMask {
    l: usize,
    band_fraction: f64,
    half_width: usize,
}

impl BandMask {
    pub fn new(l: usize, delta_star: f64) -> Result<Self> {
        if !(0.0..=0.25).contains(&delta_star) {
            return Err(invalid(format!("band fraction {delta_star} outside [0, 1/4]")));
        }
        // Guard against products like 100 * 0.15 = 15.000000000000002.
        let half_width = ((l as f64 * delta_star) - 1e-9).ceil().max(0.0) as usize;
        Ok(Self { l, band_fraction: delta_star, half_width })
    }

    pub fn len(&self) -> usize {
        self.l
    }

    pub fn is_empty(&self) -> bool {
        self.l == 0
    }

    pub fn band_fraction(&self) -> f64 {
        self.band_fraction
    }

    /// `⌈L δ*⌉`.
    pub fn half_width(&self) -> usize {
        self.half_width
    }

    /// Zero-based entry rule.
    pub fn entry(&self, a: usize, b: usize) -> bool {
        a.abs_diff(b) > self.half_width
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.l, self.l, |a, b| if self.entry(a, b) { 1.0 } else { 0.0 })
    }
}

pub fn band_mask(l: usize, delta_star: f64) -> Result<BandMask> {
    BandMask::new(l, delta_star)
}

/// `θ` in the factorisation `Θ = θθᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankFactor {
    theta: DMatrix<f64>,
}

impl LowRankFactor {
    pub fn new(theta: DMatrix<f64>) -> Self {
        Self { theta }
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn rank(&self) -> usize {
        self.theta.ncols()
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    /// `Θ = θθᵀ`, the only quantity downstream code should consume.
    pub fn gram(&self) -> CovMatrix {
        let mut g = &self.theta * self.theta.transpose();
        g.fill_upper_triangle_with_lower_triangle();
        CovMatrix::from_symmetric_unchecked(g)
    }
}

fn check_dims(theta: &LowRankFactor, khat: &CovMatrix, mask: &BandMask) -> Result<()> {
    let l = khat.dim();
    if theta.dim() != l || mask.len() != l {
        return Err(invalid(format!(
            "dimension mismatch: theta has {} rows, K has {l}, mask has {}",
            theta.dim(),
            mask.len()
        )));
    }
    Ok(())
}

/// `‖P ∘ (K̂ − θθᵀ)‖_F²`.
pub fn masked_objective(theta: &LowRankFactor, khat: &CovMatrix, mask: &BandMask) -> Result<f64> {
    check_dims(theta, khat, mask)?;
    let gram = theta.gram();
    let (k, g) = (khat.entries(), gram.entries());
    let l = khat.dim();
    let mut f = 0.0;
    for b in 0..l {
        for a in 0..l {
            if mask.entry(a, b) {
                f += (k[(a, b)] - g[(a, b)]).powi(2);
            }
        }
    }
    Ok(f)
}

/// `∇f(θ) = −4 (P ∘ (K̂ − θθᵀ)) θ`.
pub fn masked_gradient(theta: &LowRankFactor, khat: &CovMatrix, mask: &BandMask) -> Result<DMatrix<f64>> {
    check_dims(theta, khat, mask)?;
    let gram = theta.gram();
    let resid = DMatrix::from_fn(khat.dim(), khat.dim(), |a, b| {
        if mask.entry(a, b) {
            khat.entries()[(a, b)] - gram.entries()[(a, b)]
        } else {
            0.0
        }
    });
    Ok(resid * theta.theta() * -4.0)
}

/// Objective and gradient over the masked upper triangle only, with `θ`
/// stored row-major (`x[a * j + k] = θ_ak`) so rows are contiguous.
struct MaskedProblem<'a> {
    k: &'a DMatrix<f64>,
    half_width: usize,
    l: usize,
    j: usize,
}

impl MaskedProblem<'_> {
    fn eval(&self, x: &[f64], g: &mut [f64]) -> f64 {
        let (l, j) = (self.l, self.j);
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut f = 0.0;
        for a in 0..l {
            let ra = &x[a * j..(a + 1) * j];
            for b in (a + self.half_width + 1)..l {
                let rb = &x[b * j..(b + 1) * j];
                let theta_ab: f64 = ra.iter().zip(rb).map(|(p, q)| p * q).sum();
                let r = self.k[(a, b)] - theta_ab;
                f += 2.0 * r * r;
                let c = -4.0 * r;
                for t in 0..j {
                    g[a * j + t] += c * rb[t];
                    g[b * j + t] += c * ra[t];
                }
            }
        }
        f
    }
}

fn to_row_major(theta: &DMatrix<f64>) -> Vec<f64> {
    let (l, j) = theta.shape();
    let mut x = vec![0.0; l * j];
    for a in 0..l {
        for t in 0..j {
            x[a * j + t] = theta[(a, t)];
        }
    }
    x
}

fn from_row_major(x: &[f64], l: usize, j: usize) -> DMatrix<f64> {
    DMatrix::from_fn(l, j, |a, t| x[a * j + t])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionOptions {
    /// Gradient infinity-norm tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Total number of starts, the first being the spectral initialisation.
    pub restarts: usize,
    pub memory: usize,
    /// Relative objective decrease over ten iterations below which a run is
    /// abandoned as stalled (reported unconverged).
    pub ftol: f64,
    /// Seed for the perturbed starts.
    pub seed: u64,
}

impl Default for CompletionOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 2000, restarts: 3, memory: 10, ftol: 1e-10, seed: 0 }
    }
}

/// Result of one rank-`j` completion.
#[derive(Clone, Debug)]
pub struct CompletionFit {
    pub factor: LowRankFactor,
    pub objective: f64,
    pub converged: bool,
    pub grad_inf: f64,
    pub iterations: usize,
}

/// Relative perturbation size for the non-spectral starts.
const PERTURBATION: f64 = 0.2;

/// Reusable solver for one `(K̂, mask)` pair; holds the spectral decomposition
/// of `K̂` so that a scan over ranks decomposes once.
pub struct Completion<'a> {
    khat: &'a CovMatrix,
    mask: BandMask,
    /// Eigenpairs of `K̂` in descending order.
    values: Vec<f64>,
    vectors: DMatrix<f64>,
    opts: CompletionOptions,
    masked_energy: f64,
}

impl<'a> Completion<'a> {
    pub fn new(khat: &'a CovMatrix, mask: BandMask, opts: CompletionOptions) -> Result<Self> {
        if mask.len() != khat.dim() {
            return Err(invalid(format!(
                "mask size {} does not match covariance size {}",
                mask.len(),
                khat.dim()
            )));
        }
        let eig = SymmetricEigen::new(khat.entries().clone());
        let mut order: Vec<usize> = (0..khat.dim()).collect();
        order.sort_by(|&p, &q| eig.eigenvalues[q].total_cmp(&eig.eigenvalues[p]));
        let values = order.iter().map(|&p| eig.eigenvalues[p]).collect();
        let vectors = DMatrix::from_fn(khat.dim(), khat.dim(), |a, c| eig.eigenvectors[(a, order[c])]);
        let zero = LowRankFactor::new(DMatrix::zeros(khat.dim(), 0));
        let masked_energy = masked_objective(&zero, khat, &mask)?;
        Ok(Self { khat, mask, values, vectors, opts, masked_energy })
    }

    pub fn mask(&self) -> &BandMask {
        &self.mask
    }

    /// Best rank-`j` approximation of `K̂` in factor form.
    pub fn spectral_init(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.khat.dim(), j, |a, t| self.vectors[(a, t)] * self.values[t].max(0.0).sqrt())
    }

    fn run(&self, theta0: &DMatrix<f64>) -> CompletionFit {
        let (l, j) = theta0.shape();
        let problem = MaskedProblem { k: self.khat.entries(), half_width: self.mask.half_width(), l, j };
        let opts = LbfgsOptions {
            memory: self.opts.memory,
            tol: self.opts.tol,
            max_iter: self.opts.max_iter,
            ftol: self.opts.ftol,
        };
        let report = lbfgs::minimize(|x, g| problem.eval(x, g), to_row_major(theta0), &opts);
        CompletionFit {
            factor: LowRankFactor::new(from_row_major(&report.x, l, j)),
            objective: report.f,
            converged: report.converged,
            grad_inf: report.grad_inf,
            iterations: report.iterations,
        }
    }

    fn perturbed(&self, base: &DMatrix<f64>, stream: u64) -> DMatrix<f64> {
        let (l, j) = base.shape();
        let typical = (self.khat.entries().trace().max(0.0) / (l as f64 * j.max(1) as f64)).sqrt();
        let sigma = PERTURBATION * typical.max(1e-8);
        let mut rng = seed::rng(seed::derive(self.opts.seed, stream));
        DMatrix::from_fn(l, j, |a, t| {
            let z: f64 = StandardNormal.sample(&mut rng);
            base[(a, t)] + sigma * z
        })
    }

    fn is_degenerate(&self) -> bool {
        self.khat.entries().amax() == 0.0
    }

    fn good_enough(&self, fit: &CompletionFit) -> bool {
        fit.objective <= 1e-14 * self.masked_energy.max(f64::MIN_POSITIVE)
    }

    fn best_of(&self, starts: impl IntoIterator<Item = DMatrix<f64>>) -> CompletionFit {
        let mut best: Option<CompletionFit> = None;
        for theta0 in starts {
            let fit = self.run(&theta0);
            let better = match &best {
                None => true,
                Some(b) => fit.objective < b.objective,
            };
            if better {
                best = Some(fit);
            }
            if best.as_ref().is_some_and(|b| self.good_enough(b)) {
                break;
            }
        }
        best.expect("at least one start")
    }

    fn zero_fit(&self, j: usize) -> CompletionFit {
        CompletionFit {
            factor: LowRankFactor::new(DMatrix::zeros(self.khat.dim(), j)),
            objective: 0.0,
            converged: true,
            grad_inf: 0.0,
            iterations: 0,
        }
    }

    /// Rank-`j` fit from the spectral start plus `restarts − 1` perturbed starts.
    pub fn fit(&self, j: usize) -> Result<CompletionFit> {
        self.check_rank(j)?;
        if self.is_degenerate() {
            return Ok(self.zero_fit(j));
        }
        let init = self.spectral_init(j);
        let starts = std::iter::once(init.clone())
            .chain((1..self.opts.restarts.max(1)).map(|s| self.perturbed(&init, (j * 64 + s) as u64)));
        Ok(self.best_of(starts))
    }

    /// Rank-`j` fit during an ascending scan: spectral start, the previous
    /// optimum padded with a small new column, then perturbed starts.
    /// The padded start makes `f(j) ≤ f(j − 1)` hold by construction.
    pub fn fit_nested(&self, j: usize, previous: Option<&LowRankFactor>) -> Result<CompletionFit> {
        let Some(prev) = previous.filter(|p| p.rank() + 1 == j) else {
            return self.fit(j);
        };
        self.check_rank(j)?;
        if self.is_degenerate() {
            return Ok(self.zero_fit(j));
        }
        let init = self.spectral_init(j);
        let mut padded = DMatrix::zeros(self.khat.dim(), j);
        padded.columns_mut(0, j - 1).copy_from(prev.theta());
        let newcol = self.perturbed(&DMatrix::zeros(self.khat.dim(), 1), (j * 64 + 63) as u64) * 0.05;
        padded.column_mut(j - 1).copy_from(&newcol.column(0));
        let starts = std::iter::once(init.clone())
            .chain(std::iter::once(padded))
            .chain((2..self.opts.restarts.max(1)).map(|s| self.perturbed(&init, (j * 64 + s) as u64)));
        Ok(self.best_of(starts))
    }

    fn check_rank(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.khat.dim() {
            return Err(invalid(format!("rank {j} outside 1..={}", self.khat.dim())));
        }
        Ok(())
    }

    /// `f(j)` for `j = 1..=max_rank`; stops after the first `j` with
    /// `f(j) ≤ stop_below` when given.
    pub fn scan(&self, max_rank: usize, stop_below: Option<f64>) -> Result<RankScan> {
        let mut scan = RankScan::default();
        let mut previous: Option<LowRankFactor> = None;
        for j in 1..=max_rank {
            let fit = self.fit_nested(j, previous.as_ref())?;
            scan.values.insert(j, fit.objective);
            scan.converged.insert(j, fit.converged);
            let done = stop_below.is_some_and(|c| fit.objective <= c);
            previous = Some(fit.factor.clone());
            scan.fits.insert(j, fit);
            if done {
                break;
            }
        }
        Ok(scan)
    }
}

/// Scree values `j ↦ f(j)` from a rank scan.
#[derive(Clone, Debug, Default)]
pub struct RankScan {
    pub values: BTreeMap<usize, f64>,
    pub converged: BTreeMap<usize, bool>,
    pub fits: BTreeMap<usize, CompletionFit>,
}

/// Minimises the masked objective over rank-`j` factors. Returns the fit and
/// `f(j)`; a fit that hit `max_iter` is returned with `converged == false`.
pub fn minimize_rank_j(
    khat: &CovMatrix,
    mask: &BandMask,
    j: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(CompletionFit, f64)> {
    let opts = CompletionOptions { tol, max_iter, ..Default::default() };
    let fit = Completion::new(khat, *mask, opts)?.fit(j)?;
    let f = fit.objective;
    Ok((fit, f))
}

/// `min { j : f(j) ≤ c₁ }`, or `None` when no rank qualifies.
pub fn scree_select(f: &BTreeMap<usize, f64>, c1: f64) -> Result<Option<usize>> {
    if f.is_empty() {
        return Err(invalid("scree values are empty"));
    }
    Ok(f.iter().find(|(_, &v)| v <= c1).map(|(&j, _)| j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, GridFunction};

    fn random_sym(l: usize, seed: u64) -> CovMatrix {
        let mut rng = seed::rng(seed);
        let a: DMatrix<f64> = DMatrix::from_fn(l, l + 2, |_, _| StandardNormal.sample(&mut rng));
        let mut k: DMatrix<f64> = &a * a.transpose() / (l as f64);
        k.fill_upper_triangle_with_lower_triangle();
        CovMatrix::new(k).unwrap()
    }

    #[test]
    fn identical_rows_give_zero_covariance() {
        let grid = Grid::midpoints(3).unwrap();
        let row = GridFunction::new(vec![1.0, 2.0, 3.0]);
        let w = CurveSet::from_rows(&[row.clone(), row.clone(), row], grid).unwrap();
        assert_eq!(empirical_covariance(&w).unwrap().entries().amax(), 0.0);
    }

    #[test]
    fn covariance_uses_divisor_n() {
        let grid = Grid::midpoints(1).unwrap();
        let w = CurveSet::new(DMatrix::from_column_slice(2, 1, &[0.0, 2.0]), grid).unwrap();
        assert_eq!(empirical_covariance(&w).unwrap().entries()[(0, 0)], 1.0);
    }

    #[test]
    fn covariance_needs_two_rows() {
        let grid = Grid::midpoints(2).unwrap();
        let w = CurveSet::new(DMatrix::zeros(1, 2), grid).unwrap();
        assert!(matches!(empirical_covariance(&w), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn mask_rules() {
        let m = band_mask(8, 0.25).unwrap();
        assert_eq!(m.half_width(), 2);
        assert!(m.entry(0, 3)); // (1, 4) one-based
        assert!(!m.entry(0, 2));
        let m0 = band_mask(6, 0.0).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                assert_eq!(m0.entry(a, b), a != b);
            }
        }
        assert_eq!(band_mask(25, 0.15).unwrap().half_width(), 4);
        assert_eq!(band_mask(100, 0.15).unwrap().half_width(), 15);
        assert!(band_mask(10, 0.3).is_err());
        assert!(band_mask(10, -0.1).is_err());
    }

    #[test]
    fn objective_zero_at_exact_fit() {
        let theta = LowRankFactor::new(DMatrix::from_fn(5, 2, |a, b| (a + 2 * b) as f64 * 0.3 - 0.4));
        let k = theta.gram();
        let mask = band_mask(5, 0.2).unwrap();
        assert_eq!(masked_objective(&theta, &k, &mask).unwrap(), 0.0);
    }

    #[test]
    fn objective_at_zero_factor() {
        let k = CovMatrix::new(DMatrix::from_fn(6, 6, |a, b| if a == b { 3.0 } else { 1.0 })).unwrap();
        let mask = band_mask(6, 0.2).unwrap(); // half width 2
        let zero = LowRankFactor::new(DMatrix::zeros(6, 1));
        let count = (0usize..6).flat_map(|a| (0..6).map(move |b| (a, b))).filter(|&(a, b)| a.abs_diff(b) > 2).count();
        assert_eq!(masked_objective(&zero, &k, &mask).unwrap(), count as f64);
    }

    #[test]
    fn objective_matches_double_loop() {
        let k = random_sym(6, 4);
        let mut rng = seed::rng(5);
        let theta = DMatrix::from_fn(6, 2, |_, _| StandardNormal.sample(&mut rng));
        let mask = band_mask(6, 0.2).unwrap();
        let mut expected = 0.0;
        for a in 0usize..6 {
            for b in 0..6 {
                if a.abs_diff(b) > 2 {
                    let mut t = 0.0;
                    for c in 0..2 {
                        t += theta[(a, c)] * theta[(b, c)];
                    }
                    expected += (k.entries()[(a, b)] - t).powi(2);
                }
            }
        }
        let f = masked_objective(&LowRankFactor::new(theta.clone()), &k, &mask).unwrap();
        assert!((f - expected).abs() <= 1e-12 * expected.max(1.0));
        // The fast path used by the optimiser agrees too.
        let p = MaskedProblem { k: k.entries(), half_width: 2, l: 6, j: 2 };
        let mut g = vec![0.0; 12];
        let f2 = p.eval(&to_row_major(&theta), &mut g);
        assert!((f2 - expected).abs() <= 1e-12 * expected.max(1.0));
        let g_ref = masked_gradient(&LowRankFactor::new(theta), &k, &mask).unwrap();
        let g_fast = from_row_major(&g, 6, 2);
        assert!((g_ref - g_fast).amax() < 1e-12);
    }

    #[test]
    fn objective_dimension_mismatch() {
        let k = random_sym(4, 1);
        let theta = LowRankFactor::new(DMatrix::zeros(3, 1));
        assert!(masked_objective(&theta, &k, &band_mask(4, 0.25).unwrap()).is_err());
    }

    #[test]
    fn rank_one_completion_is_exact() {
        let v = DMatrix::from_fn(10, 1, |a, _| 1.0 + 0.1 * a as f64);
        let k = LowRankFactor::new(v).gram();
        let mask = band_mask(10, 0.2).unwrap();
        let (fit, f) = minimize_rank_j(&k, &mask, 1, 1e-8, 2000).unwrap();
        assert!(f <= 1e-10, "f = {f}");
        assert!(fit.converged || f <= 1e-20);
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        let k = CovMatrix::new(DMatrix::zeros(8, 8)).unwrap();
        let mask = band_mask(8, 0.25).unwrap();
        let c = Completion::new(&k, mask, CompletionOptions::default()).unwrap();
        let scan = c.scan(3, None).unwrap();
        assert!(scan.values.values().all(|&f| f == 0.0));
        assert_eq!(scree_select(&scan.values, 0.0).unwrap(), Some(1));
    }

    #[test]
    fn rank_out_of_range() {
        let k = random_sym(4, 2);
        let mask = band_mask(4, 0.25).unwrap();
        assert!(minimize_rank_j(&k, &mask, 0, 1e-8, 10).is_err());
        assert!(minimize_rank_j(&k, &mask, 5, 1e-8, 10).is_err());
    }

    #[test]
    fn scree_rule() {
        let f: BTreeMap<usize, f64> = [(1, 50.0), (2, 3.0), (3, 0.4)].into_iter().collect();
        assert_eq!(scree_select(&f, 1.0).unwrap(), Some(3));
        assert_eq!(scree_select(&f, 100.0).unwrap(), Some(1));
        assert_eq!(scree_select(&f, 0.1).unwrap(), None);
        assert!(scree_select(&BTreeMap::new(), 1.0).is_err());
    }

    #[test]
    fn scan_is_monotone() {
        let k = random_sym(12, 9);
        let mask = band_mask(12, 0.1).unwrap();
        let c = Completion::new(&k, mask, CompletionOptions::default()).unwrap();
        let scan = c.scan(4, None).unwrap();
        let v: Vec<f64> = scan.values.values().copied().collect();
        for w in v.windows(2) {
            assert!(w[1] <= w[0] + 1e-8, "{v:?}");
        }
    }
}
