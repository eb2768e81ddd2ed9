//! Slope estimators, prediction and error metrics.
//!
//! Regression calibration replaces the contaminated covariance `K̂_W` by the
//! completed `K̂_X` and inverts it on its leading eigenspace. Spectral
//! truncation is the usual principal-component regression on `K̂_W`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{inner_product, CurveSet, Grid, GridFunction};
use crate::operator::{curve_covariance_eigen, var_xx_pinv, EigenSystem, EIGEN_CLIP};
use crate::seed;

/// Scalar responses, one per curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScalarResponseSet {
    y: Vec<f64>,
}

impl ScalarResponseSet {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("response {i} is not finite")));
        }
        Ok(Self { y })
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.y.len().max(1) as f64
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self { y: idx.iter().map(|&i| self.y[i]).collect() }
    }
}

impl TryFrom<Vec<f64>> for ScalarResponseSet {
    type Error = Error;

    fn try_from(y: Vec<f64>) -> Result<Self> {
        Self::new(y)
    }
}

impl From<ScalarResponseSet> for Vec<f64> {
    fn from(s: ScalarResponseSet) -> Self {
        s.y
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFunction {
    pub beta: GridFunction,
    pub intercept: f64,
    pub grid: Grid,
}

impl SlopeFunction {
    /// `α̂ + ⟨W_i, β̂⟩` for every row.
    pub fn predict(&self, w: &CurveSet) -> Result<Vec<f64>> {
        check_grid(&self.grid, w.grid())?;
        let b = DVector::from_column_slice(self.beta.values());
        let scores = w.data() * b * self.grid.weight();
        Ok(scores.iter().map(|s| self.intercept + s).collect())
    }
}

/// Kernel `b(s, t)` of an operator from functions on `in_grid` to functions
/// on `out_grid`; applies as `(1/L_in) Σ_t b(s, t) f(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeOperator {
    #[serde(with = "matrix_rows")]
    pub kernel: DMatrix<f64>,
    pub out_grid: Grid,
    pub in_grid: Grid,
}

impl SlopeOperator {
    pub fn apply(&self, f: &[f64]) -> DVector<f64> {
        &self.kernel * DVector::from_column_slice(f) * self.in_grid.weight()
    }

    /// `⟨f ⊗ f, ℬ⟩_HS` for a square operator.
    pub fn quadratic_form(&self, f: &[f64]) -> f64 {
        let v = DVector::from_column_slice(f);
        v.dot(&(&self.kernel * &v)) * self.in_grid.weight() * self.out_grid.weight()
    }
}

/// Function-on-function fit `y(s) = α(s) + (ℬ W)(s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalFit {
    pub slope: SlopeOperator,
    pub intercept: GridFunction,
}

impl FunctionalFit {
    pub fn predict(&self, w: &CurveSet) -> Result<CurveSet> {
        check_grid(&self.slope.in_grid, w.grid())?;
        let mut out = w.data() * self.slope.kernel.transpose() * self.slope.in_grid.weight();
        for mut row in out.row_iter_mut() {
            for (v, a) in row.iter_mut().zip(self.intercept.values()) {
                *v += a;
            }
        }
        CurveSet::new(out, self.slope.out_grid.clone())
    }
}

/// Scalar response with linear and quadratic parts; the intercept lives in
/// `linear.intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub linear: SlopeFunction,
    pub quadratic: SlopeOperator,
}

impl QuadraticFit {
    pub fn predict(&self, w: &CurveSet) -> Result<Vec<f64>> {
        let lin = self.linear.predict(w)?;
        Ok(lin
            .into_iter()
            .enumerate()
            .map(|(i, p)| p + self.quadratic.quadratic_form(w.data().row(i).transpose().as_slice()))
            .collect())
    }
}

/// Any fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Fit {
    Scalar(SlopeFunction),
    Functional(FunctionalFit),
    Quadratic(QuadraticFit),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Predictions {
    Scalar(Vec<f64>),
    Functional(CurveSet),
}

pub fn predict(fit: &Fit, w: &CurveSet) -> Result<Predictions> {
    Ok(match fit {
        Fit::Scalar(f) => Predictions::Scalar(f.predict(w)?),
        Fit::Functional(f) => Predictions::Functional(f.predict(w)?),
        Fit::Quadratic(f) => Predictions::Scalar(f.predict(w)?),
    })
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged kernel rows"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |a, b| rows[a][b]))
    }
}

fn check_grid(expected: &Grid, got: &Grid) -> Result<()> {
    if expected.len() != got.len() {
        return Err(invalid(format!("grid has {} nodes, expected {}", got.len(), expected.len())));
    }
    if expected.nodes().iter().zip(got.nodes()).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(invalid("grid nodes differ from those used in the fit"));
    }
    Ok(())
}

fn check_n(y: usize, w: &CurveSet) -> Result<()> {
    if y != w.n() {
        return Err(invalid(format!("{y} responses but {} curves", w.n())));
    }
    if y < 2 {
        return Err(Error::InsufficientData { needed: 2, got: y });
    }
    Ok(())
}

/// `(1/n) Σ y_i W_i − ȳ W̄`.
pub fn cross_cov_scalar(y: &ScalarResponseSet, w: &CurveSet) -> Result<GridFunction> {
    check_n(y.len(), w)?;
    let n = y.len() as f64;
    let yv = DVector::from_column_slice(y.values());
    let raw = w.data().tr_mul(&yv) / n;
    let ybar = y.mean();
    let wbar = w.mean();
    Ok(GridFunction::new(raw.iter().zip(wbar.values()).map(|(a, m)| a - ybar * m).collect()))
}

/// `Σ_j λ_j⁻¹ ⟨Ĉ, η_j⟩ η_j`, intercept `ȳ − ⟨W̄, β̂⟩`.
pub fn rc_scalar(es: &EigenSystem, cyw: &GridFunction, ybar: f64, wbar: &GridFunction) -> Result<SlopeFunction> {
    if es.rank() == 0 {
        return Err(invalid("empty eigensystem"));
    }
    let scores = es.scores(cyw)?;
    let top = es.eigenvalues()[0];
    let coef = DVector::from_fn(es.rank(), |j, _| {
        let lam = es.eigenvalues()[j];
        if lam < EIGEN_CLIP * top {
            0.0
        } else {
            scores[j] / lam
        }
    });
    let beta = GridFunction::new((es.functions() * coef).iter().copied().collect());
    let intercept = ybar - inner_product(wbar, &beta, es.grid())?;
    Ok(SlopeFunction { beta, intercept, grid: es.grid().clone() })
}

/// Scalar fit from data and an eigensystem of the covariate covariance.
pub fn fit_scalar(es: &EigenSystem, y: &ScalarResponseSet, w: &CurveSet) -> Result<SlopeFunction> {
    let cyw = cross_cov_scalar(y, w)?;
    rc_scalar(es, &cyw, y.mean(), &w.mean())
}

/// Kernel of `Σ_j λ_j⁻¹ η_j ⊗ η_j`.
fn inverse_kernel(es: &EigenSystem) -> DMatrix<f64> {
    let top = es.eigenvalues()[0];
    let mut h = es.functions().clone();
    for (j, mut col) in h.column_iter_mut().enumerate() {
        let lam = es.eigenvalues()[j];
        col *= if lam < EIGEN_CLIP * top { 0.0 } else { 1.0 / lam };
    }
    h * es.functions().transpose()
}

/// `ℬ̂ = Ĉ_{y,W} 𝒦̂⁻` for curve responses.
pub fn rc_functional(es: &EigenSystem, ycurves: &CurveSet, w: &CurveSet) -> Result<FunctionalFit> {
    if ycurves.n() != w.n() {
        return Err(invalid(format!("{} response curves but {} covariate curves", ycurves.n(), w.n())));
    }
    if w.n() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: w.n() });
    }
    check_grid(es.grid(), w.grid())?;
    let n = w.n() as f64;
    // C(s, t) = (1/n) Σ (y_i(s) − ȳ(s)) (W_i(t) − W̄(t)).
    let c = ycurves.centered().tr_mul(&w.centered()) / n;
    let kernel = c * inverse_kernel(es) * w.grid().weight();
    let slope = SlopeOperator { kernel, out_grid: ycurves.grid().clone(), in_grid: w.grid().clone() };
    let bw = slope.apply(w.mean().values());
    let intercept = GridFunction::new(ycurves.mean().values().iter().zip(bw.iter()).map(|(a, b)| a - b).collect());
    Ok(FunctionalFit { slope, intercept })
}

/// `(1/n) Σ y_i W_i W_iᵀ − ȳ (1/n) Σ W_i W_iᵀ` on uncentred curves.
pub fn cross_cov_quadratic(y: &ScalarResponseSet, w: &CurveSet) -> Result<SlopeOperator> {
    check_n(y.len(), w)?;
    let n = y.len() as f64;
    let ybar = y.mean();
    let mut weighted = w.data().clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= y.values()[i] - ybar;
    }
    let mut kernel = weighted.tr_mul(w.data()) / n;
    symmetrize(&mut kernel);
    Ok(SlopeOperator { kernel, out_grid: w.grid().clone(), in_grid: w.grid().clone() })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Linear part as [`rc_scalar`]; quadratic part `var(X⊗X)⁻ Ĉ_{y,W⊗W}`.
/// The returned intercept is zero; see [`fit_quadratic`].
pub fn rc_quadratic(
    es: &EigenSystem,
    cyw: &GridFunction,
    cyww: &SlopeOperator,
    paper_coefficients: bool,
) -> Result<QuadraticFit> {
    let linear = rc_scalar(es, cyw, 0.0, &GridFunction::zeros(cyw.len()))?;
    let op = var_xx_pinv(es, paper_coefficients)?;
    let mut kernel = op.pinv(&cyww.kernel)?;
    symmetrize(&mut kernel);
    Ok(QuadraticFit {
        linear: SlopeFunction { intercept: 0.0, ..linear },
        quadratic: SlopeOperator { kernel, out_grid: es.grid().clone(), in_grid: es.grid().clone() },
    })
}

/// Quadratic fit with intercept `ȳ − ⟨W̄, β̂⟩ − ⟨mean(W Wᵀ), ℬ̂⟩`.
pub fn fit_quadratic(
    es: &EigenSystem,
    y: &ScalarResponseSet,
    w: &CurveSet,
    paper_coefficients: bool,
) -> Result<QuadraticFit> {
    let cyw = cross_cov_scalar(y, w)?;
    let cyww = cross_cov_quadratic(y, w)?;
    let mut fit = rc_quadratic(es, &cyw, &cyww, paper_coefficients)?;
    let second = w.data().tr_mul(w.data()) / w.n() as f64;
    let l = w.grid_len() as f64;
    let quad_mean = second.dot(&fit.quadratic.kernel) / (l * l);
    fit.linear.intercept = y.mean() - inner_product(&w.mean(), &fit.linear.beta, w.grid())? - quad_mean;
    Ok(fit)
}

/// Principal-component regression on the uncorrected covariance of `W`.
pub fn spectral_truncation(w: &CurveSet, y: &ScalarResponseSet, k: usize) -> Result<SlopeFunction> {
    if k == 0 {
        return Err(invalid("number of components must be at least 1"));
    }
    let es = curve_covariance_eigen(w, k)?;
    fit_scalar(&es, y, w)
}

pub fn spectral_truncation_functional(w: &CurveSet, ycurves: &CurveSet, k: usize) -> Result<FunctionalFit> {
    if k == 0 {
        return Err(invalid("number of components must be at least 1"));
    }
    let es = curve_covariance_eigen(w, k)?;
    rc_functional(&es, ycurves, w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Selected number of components.
    pub k: usize,
    /// Mean squared prediction error for `k = 1, 2, ...`; infinite where the
    /// training covariance has fewer positive eigenvalues than `k`.
    pub errors: Vec<f64>,
    pub folds: usize,
    pub reps: usize,
    pub seed: u64,
}

/// Cross-validated number of principal components for a scalar response.
pub fn cv_select_components(
    w: &CurveSet,
    y: &ScalarResponseSet,
    k_max: usize,
    folds: usize,
    reps: usize,
    seed_value: u64,
) -> Result<CvResult> {
    check_n(y.len(), w)?;
    let ymat = DMatrix::from_column_slice(y.len(), 1, y.values());
    cv_core(w, &ymat, 1.0, k_max, folds, reps, seed_value)
}

/// As [`cv_select_components`] with squared `L²` norms of residual curves.
pub fn cv_select_components_functional(
    w: &CurveSet,
    ycurves: &CurveSet,
    k_max: usize,
    folds: usize,
    reps: usize,
    seed_value: u64,
) -> Result<CvResult> {
    if ycurves.n() != w.n() {
        return Err(invalid(format!("{} response curves but {} covariate curves", ycurves.n(), w.n())));
    }
    cv_core(w, ycurves.data(), ycurves.grid().weight(), k_max, folds, reps, seed_value)
}

fn cv_core(
    w: &CurveSet,
    y: &DMatrix<f64>,
    y_weight: f64,
    k_max: usize,
    folds: usize,
    reps: usize,
    seed_value: u64,
) -> Result<CvResult> {
    let n = w.n();
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, got: n });
    }
    if folds < 2 || n / folds < 2 {
        return Err(invalid(format!("{folds} folds leave fewer than two curves per fold for n = {n}")));
    }
    if k_max == 0 || reps == 0 {
        return Err(invalid("k range and repetition count must be positive"));
    }
    let per_rep: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut seed::rng(seed::derive(seed_value, rep as u64)));
            let mut sse = vec![0.0; k_max];
            for f in 0..folds {
                let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
                let test: Vec<usize> = idx[lo..hi].to_vec();
                let train: Vec<usize> = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
                let fold = pcr_path(w, y, &train, &test, k_max, y_weight);
                sse.iter_mut().zip(fold).for_each(|(a, b)| *a += b);
            }
            sse
        })
        .collect();
    let mut errors = vec![0.0; k_max];
    for rep in &per_rep {
        errors.iter_mut().zip(rep).for_each(|(a, b)| *a += b);
    }
    let denom = (reps * n) as f64;
    errors.iter_mut().for_each(|e| *e /= denom);
    let k = argmin_first(&errors).ok_or_else(|| invalid("no component count gave a finite prediction error"))? + 1;
    Ok(CvResult { k, errors, folds, reps, seed: seed_value })
}

fn argmin_first(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &e) in v.iter().enumerate() {
        if e.is_finite() && best.is_none_or(|b| e < v[b]) {
            best = Some(i);
        }
    }
    best
}

/// Test-fold squared errors of PC regression for every `k ≤ k_max`.
fn pcr_path(
    w: &CurveSet,
    y: &DMatrix<f64>,
    train: &[usize],
    test: &[usize],
    k_max: usize,
    y_weight: f64,
) -> Vec<f64> {
    let l = w.grid_len();
    let nt = train.len();
    let wt = DMatrix::from_fn(nt, l, |i, t| w.data()[(train[i], t)]);
    let yt = DMatrix::from_fn(nt, y.ncols(), |i, c| y[(train[i], c)]);
    let wbar = wt.row_mean();
    let ybar = yt.row_mean();
    let wc = DMatrix::from_fn(nt, l, |i, t| wt[(i, t)] - wbar[t]);
    let yc = DMatrix::from_fn(nt, y.ncols(), |i, c| yt[(i, c)] - ybar[c]);

    // Eigenfunctions as columns of `eta` (unit norm under the 1/L quadrature).
    let (values, eta) = if nt < l {
        let mut g = &wc * wc.transpose() / (nt as f64 * l as f64);
        g.fill_upper_triangle_with_lower_triangle();
        let (vals, u) = sorted_eig(g);
        let count = vals.len().min(k_max);
        let mut eta = DMatrix::zeros(l, count);
        for j in 0..count {
            if vals[j] > 0.0 {
                let col = wc.tr_mul(&u.column(j)) / (nt as f64 * vals[j]).sqrt();
                eta.column_mut(j).copy_from(&col);
            }
        }
        (vals[..count].to_vec(), eta)
    } else {
        let mut k = wc.tr_mul(&wc) / (nt as f64 * l as f64);
        k.fill_upper_triangle_with_lower_triangle();
        let (vals, v) = sorted_eig(k);
        let count = vals.len().min(k_max);
        (vals[..count].to_vec(), v.columns(0, count) * (l as f64).sqrt())
    };
    let top = values.first().copied().unwrap_or(0.0);
    let usable = values.iter().take_while(|&&v| top > 0.0 && v > EIGEN_CLIP * top).count();

    let inv_l = 1.0 / l as f64;
    // ⟨Ĉ_{y,W}, η_j⟩ = (1/(n L)) η_jᵀ W_cᵀ y_c, one row per component.
    let proj = wc.clone() * &eta * inv_l; // nt x k, training scores
    let cross = proj.tr_mul(&yc) / nt as f64; // k x q
    let wtest = DMatrix::from_fn(test.len(), l, |i, t| w.data()[(test[i], t)] - wbar[t]);
    let scores = wtest * &eta * inv_l; // ntest x k

    let q = y.ncols();
    let mut pred = DMatrix::from_fn(test.len(), q, |_, c| ybar[c]);
    let mut out = vec![f64::INFINITY; k_max];
    for j in 0..usable {
        let coef = cross.row(j) / values[j];
        pred += scores.column(j) * coef;
        let mut sse = 0.0;
        for (i, &row) in test.iter().enumerate() {
            for c in 0..q {
                sse += (y[(row, c)] - pred[(i, c)]).powi(2);
            }
        }
        out[j] = sse * y_weight;
    }
    out
}

fn sorted_eig(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[q].total_cmp(&eig.eigenvalues[p]));
    let vals = order.iter().map(|&p| eig.eigenvalues[p]).collect();
    let vecs = DMatrix::from_fn(n, n, |a, c| eig.eigenvectors[(a, order[c])]);
    (vals, vecs)
}

/// `1 − SS_res / SS_tot`.
pub fn r_squared(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(invalid(format!("{} actual values but {} predictions", actual.len(), predicted.len())));
    }
    let mean = actual.iter().sum::<f64>() / actual.len().max(1) as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::UndefinedMetric("R² needs responses with nonzero variation".into()));
    }
    let ss_res: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Functional `R²` from squared `L²` norms of residual and centred curves.
pub fn r_squared_functional(actual: &CurveSet, predicted: &CurveSet) -> Result<f64> {
    if actual.data().shape() != predicted.data().shape() {
        return Err(invalid("actual and predicted curve sets differ in shape"));
    }
    let ss_tot = actual.centered().norm_squared();
    if !(ss_tot > 0.0) {
        return Err(Error::UndefinedMetric("R² needs responses with nonzero variation".into()));
    }
    let ss_res = (actual.data() - predicted.data()).norm_squared();
    Ok(1.0 - ss_res / ss_tot)
}

/// `‖f − g‖` under the grid inner product.
pub fn l2_distance(f: &GridFunction, g: &GridFunction, grid: &Grid) -> Result<f64> {
    crate::grid::norm(&f.sub(g), grid)
}
