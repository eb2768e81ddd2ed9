//! From covariance matrices to integral operators.
//!
//! A covariance matrix `K` on an `L`-node grid defines the piecewise-constant
//! kernel `k(s, t) = K(i, j)` for `(s, t) ∈ I_i × I_j`. Its integral operator
//! has the eigenvalues of `K / L` and eigenfunctions that are the grid vectors
//! `√L v_j`, which have unit norm under the grid inner product. This scaling
//! is used everywhere in the crate.
//!
//! Hilbert-Schmidt operators are carried as kernel matrices `T` (rows indexed
//! by the output grid, columns by the input grid) acting as
//! `(T f)(s) = (1/L) Σ_t T(s, t) f(t)`, with `⟨A, B⟩_HS = (1/(L_out L_in)) Σ A ∘ B`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::covariance::CovMatrix;
use crate::error::{invalid, Error, Result};
use crate::grid::{CurveSet, Grid, GridFunction};

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIGEN_CLIP: f64 = 1e-12;

/// The piecewise-constant kernel of a covariance matrix.
#[derive(Clone, Debug)]
pub struct KernelEstimate {
    pub matrix: CovMatrix,
    pub grid: Grid,
}

impl KernelEstimate {
    pub fn new(matrix: CovMatrix, grid: Grid) -> Result<Self> {
        if matrix.dim() != grid.len() {
            return Err(invalid("kernel matrix and grid sizes differ"));
        }
        Ok(Self { matrix, grid })
    }

    /// `k(s, t)` for `s, t ∈ [0, 1]`.
    pub fn value(&self, s: f64, t: f64) -> f64 {
        let l = self.grid.len();
        let cell = |x: f64| ((x * l as f64).floor().max(0.0) as usize).min(l - 1);
        self.matrix.entries()[(cell(s), cell(t))]
    }

    pub fn eigen(&self, r: usize) -> Result<EigenSystem> {
        kernel_eigen(&self.matrix, &self.grid, r)
    }
}

/// Leading eigenpairs of an estimated covariance operator.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenSystem {
    eigenvalues: Vec<f64>,
    /// `L x r`, column `j` is `η_j` sampled on the grid.
    functions: DMatrix<f64>,
    grid: Grid,
}

impl EigenSystem {
    /// Checks: positive non-increasing eigenvalues and quadrature
    /// orthonormality within `1e-8`.
    pub fn new(eigenvalues: Vec<f64>, functions: DMatrix<f64>, grid: Grid) -> Result<Self> {
        if functions.nrows() != grid.len() || functions.ncols() != eigenvalues.len() {
            return Err(invalid("eigenfunction matrix does not match grid or eigenvalue count"));
        }
        if eigenvalues.iter().any(|&v| !(v > 0.0)) {
            return Err(invalid("eigenvalues must be strictly positive"));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("eigenvalues must be non-increasing"));
        }
        let gram = functions.transpose() * &functions * grid.weight();
        let dev = (gram - DMatrix::identity(eigenvalues.len(), eigenvalues.len())).amax();
        if dev > 1e-8 {
            return Err(invalid(format!("eigenfunctions not orthonormal (deviation {dev:e})")));
        }
        Ok(Self { eigenvalues, functions, grid })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn functions(&self) -> &DMatrix<f64> {
        &self.functions
    }

    pub fn eigenfunction(&self, j: usize) -> GridFunction {
        GridFunction::new(self.functions.column(j).iter().copied().collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `λ₁ / λ_r`.
    pub fn condition_number(&self) -> f64 {
        match (self.eigenvalues.first(), self.eigenvalues.last()) {
            (Some(a), Some(b)) => a / b,
            _ => f64::NAN,
        }
    }

    /// The leading `r` pairs.
    pub fn truncated(&self, r: usize) -> Result<EigenSystem> {
        if r == 0 || r > self.rank() {
            return Err(Error::RankDeficient { requested: r, available: self.rank() });
        }
        Ok(EigenSystem {
            eigenvalues: self.eigenvalues[..r].to_vec(),
            functions: self.functions.columns(0, r).into_owned(),
            grid: self.grid.clone(),
        })
    }

    /// Scores `⟨f, η_j⟩` for every eigenfunction.
    pub fn scores(&self, f: &GridFunction) -> Result<DVector<f64>> {
        if f.len() != self.grid.len() {
            return Err(invalid("function length does not match eigensystem grid"));
        }
        let v = DVector::from_column_slice(f.values());
        Ok(self.functions.tr_mul(&v) * self.grid.weight())
    }

    /// Orthogonal projection onto `span{η_j}`.
    pub fn project(&self, f: &GridFunction) -> Result<GridFunction> {
        let s = self.scores(f)?;
        Ok(GridFunction::new((&self.functions * s).iter().copied().collect()))
    }

    /// Kernel matrix `Σ_j c_j η_j η_jᵀ`.
    fn spectral_kernel(&self, c: &[f64]) -> DMatrix<f64> {
        let mut scaled = self.functions.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= c[j];
        }
        scaled * self.functions.transpose()
    }
}

#[derive(Serialize, Deserialize)]
struct EigenSystemJson {
    eigenvalues: Vec<f64>,
    eigenfunctions: Vec<Vec<f64>>,
    grid: Vec<f64>,
    rank: usize,
}

impl Serialize for EigenSystem {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        EigenSystemJson {
            eigenvalues: self.eigenvalues.clone(),
            eigenfunctions: self.functions.column_iter().map(|c| c.iter().copied().collect()).collect(),
            grid: self.grid.nodes().to_vec(),
            rank: self.rank(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EigenSystem {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = EigenSystemJson::deserialize(d)?;
        let grid = Grid::new(raw.grid).map_err(D::Error::custom)?;
        let l = grid.len();
        if raw.eigenfunctions.iter().any(|f| f.len() != l) || raw.rank != raw.eigenvalues.len() {
            return Err(D::Error::custom("eigensystem arrays have inconsistent sizes"));
        }
        let functions = DMatrix::from_fn(l, raw.eigenfunctions.len(), |a, j| raw.eigenfunctions[j][a]);
        EigenSystem::new(raw.eigenvalues, functions, grid).map_err(D::Error::custom)
    }
}

/// Flips `v` so that its first non-negligible coordinate is positive.
fn fix_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-10 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Sorted eigenpairs `(λ, v)` of a symmetric matrix, descending.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[q].total_cmp(&eig.eigenvalues[p]));
    let values = order.iter().map(|&p| eig.eigenvalues[p]).collect();
    let vectors = DMatrix::from_fn(n, n, |a, c| eig.eigenvectors[(a, order[c])]);
    (values, vectors)
}

fn positive_count(values: &[f64]) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return 0;
    }
    values.iter().take_while(|&&v| v > EIGEN_CLIP * top).count()
}

/// Top `r` eigenpairs of the integral operator with the piecewise-constant
/// kernel of `kx`: eigenvalues of `kx / L`, eigenfunctions `√L v_j`.
pub fn kernel_eigen(kx: &CovMatrix, grid: &Grid, r: usize) -> Result<EigenSystem> {
    let l = grid.len();
    if kx.dim() != l {
        return Err(invalid(format!("covariance is {}x{} but grid has {l} nodes", kx.dim(), kx.dim())));
    }
    if r == 0 || r > l {
        return Err(invalid(format!("requested rank {r} outside 1..={l}")));
    }
    let (values, vectors) = sorted_eigen(kx.entries() / l as f64);
    let available = positive_count(&values);
    if available < r {
        return Err(Error::RankDeficient { requested: r, available });
    }
    let sqrt_l = (l as f64).sqrt();
    let mut functions = DMatrix::zeros(l, r);
    for j in 0..r {
        let mut v: Vec<f64> = vectors.column(j).iter().map(|x| x * sqrt_l).collect();
        fix_sign(&mut v);
        functions.column_mut(j).copy_from_slice(&v);
    }
    EigenSystem::new(values[..r].to_vec(), functions, grid.clone())
}

/// Leading eigenpairs of the empirical covariance operator of `w`, computed
/// from the `n x n` Gram matrix when `n < L` (same nonzero spectrum).
pub fn curve_covariance_eigen(w: &CurveSet, r: usize) -> Result<EigenSystem> {
    let (n, l) = (w.n(), w.grid_len());
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if n >= l {
        let k = crate::covariance::empirical_covariance(w)?;
        return kernel_eigen(&k, w.grid(), r);
    }
    if r == 0 || r > l {
        return Err(invalid(format!("requested rank {r} outside 1..={l}")));
    }
    let c = w.centered();
    let scale = 1.0 / (n as f64 * l as f64);
    let mut gram = &c * c.transpose() * scale;
    gram.fill_upper_triangle_with_lower_triangle();
    let (values, u) = sorted_eigen(gram);
    let available = positive_count(&values);
    if available < r {
        return Err(Error::RankDeficient { requested: r, available });
    }
    let mut functions = DMatrix::zeros(l, r);
    for j in 0..r {
        // η = Cᵀu / sqrt(n λ), unit norm under the 1/L quadrature.
        let eta = c.tr_mul(&u.column(j)) / (n as f64 * values[j]).sqrt();
        let mut v: Vec<f64> = eta.iter().copied().collect();
        fix_sign(&mut v);
        functions.column_mut(j).copy_from_slice(&v);
    }
    EigenSystem::new(values[..r].to_vec(), functions, w.grid().clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorMode {
    Covariance,
    PseudoInverse,
}

/// `Σ_j λ_j^{±1} ⟨·, η_j⟩ η_j`.
#[derive(Clone, Debug)]
pub struct RankedOperator {
    pub eigensystem: EigenSystem,
    pub mode: OperatorMode,
}

impl RankedOperator {
    pub fn covariance(es: EigenSystem) -> Self {
        Self { eigensystem: es, mode: OperatorMode::Covariance }
    }

    fn weight(&self, j: usize) -> f64 {
        let lam = self.eigensystem.eigenvalues[j];
        match self.mode {
            OperatorMode::Covariance => lam,
            OperatorMode::PseudoInverse if lam < EIGEN_CLIP * self.eigensystem.eigenvalues[0] => 0.0,
            OperatorMode::PseudoInverse => 1.0 / lam,
        }
    }

    /// Kernel matrix of the operator on the eigensystem grid.
    pub fn kernel(&self) -> DMatrix<f64> {
        let weights: Vec<f64> = (0..self.eigensystem.rank()).map(|j| self.weight(j)).collect();
        self.eigensystem.spectral_kernel(&weights)
    }

    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        apply_operator(self, f)
    }
}

/// Moore-Penrose inverse of the finite-rank operator `Σ λ_j η_j ⊗ η_j`.
pub fn pseudo_inverse(es: &EigenSystem) -> Result<RankedOperator> {
    if es.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(invalid("pseudo-inverse needs strictly positive eigenvalues"));
    }
    Ok(RankedOperator { eigensystem: es.clone(), mode: OperatorMode::PseudoInverse })
}

pub fn apply_operator(op: &RankedOperator, f: &GridFunction) -> Result<GridFunction> {
    let scores = op.eigensystem.scores(f)?;
    let weighted = DVector::from_fn(scores.len(), |j, _| scores[j] * op.weight(j));
    Ok(GridFunction::new((op.eigensystem.functions() * weighted).iter().copied().collect()))
}

/// `⟨A, B⟩_HS` for kernel matrices of the same shape.
pub fn hs_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b) / (a.nrows() * a.ncols()) as f64
}

pub fn hs_norm(a: &DMatrix<f64>) -> f64 {
    hs_inner(a, a).sqrt()
}

/// Kernel matrix of `ζ_{jk} = η_j ⊗ η_k`, i.e. `η_j(s) η_k(t)`.
pub fn zeta(es: &EigenSystem, j: usize, k: usize) -> DMatrix<f64> {
    es.functions.column(j) * es.functions.column(k).transpose()
}

/// `var(X ⊗ X)` for Gaussian `X` with the given eigensystem, acting on
/// Hilbert-Schmidt operators given as kernel matrices.
///
/// Forward: `2λ_j²` on `ζ_jj`, `2λ_jλ_k` on `ζ_jk + ζ_kj`, zero on
/// `ζ_jk − ζ_kj` and on everything outside `span{ζ_jk}`.
#[derive(Clone, Debug)]
pub struct FourthMomentOperator {
    pub eigensystem: EigenSystem,
    /// Use the coefficients `2λ_j⁻²` and `λ_j⁻¹λ_k⁻¹` in the inverse, which
    /// are four times the Moore-Penrose values.
    pub paper_coefficients: bool,
}

impl FourthMomentOperator {
    /// `C_jk = ⟨ζ_jk, T⟩_HS`.
    fn coefficients(&self, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let l = self.eigensystem.grid.len();
        if t.nrows() != l || t.ncols() != l {
            return Err(invalid(format!("operator kernel must be {l}x{l}")));
        }
        let h = &self.eigensystem.functions;
        Ok(h.transpose() * t * h / (l * l) as f64)
    }

    fn synthesize(&self, coef: &DMatrix<f64>) -> DMatrix<f64> {
        let h = &self.eigensystem.functions;
        h * coef * h.transpose()
    }

    pub fn forward(&self, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let c = self.coefficients(t)?;
        let lam = &self.eigensystem.eigenvalues;
        let r = lam.len();
        let out = DMatrix::from_fn(r, r, |j, k| {
            if j == k {
                2.0 * lam[j] * lam[j] * c[(j, j)]
            } else {
                lam[j] * lam[k] * (c[(j, k)] + c[(k, j)])
            }
        });
        Ok(self.synthesize(&out))
    }

    /// The generalised inverse applied to `t`.
    pub fn pinv(&self, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let c = self.coefficients(t)?;
        let lam = &self.eigensystem.eigenvalues;
        let r = lam.len();
        let factor = if self.paper_coefficients { 4.0 } else { 1.0 };
        let out = DMatrix::from_fn(r, r, |j, k| {
            if j == k {
                factor * c[(j, j)] / (2.0 * lam[j] * lam[j])
            } else {
                factor * (c[(j, k)] + c[(k, j)]) / (4.0 * lam[j] * lam[k])
            }
        });
        Ok(self.synthesize(&out))
    }
}

pub fn var_xx_pinv(es: &EigenSystem, paper_coefficients: bool) -> Result<FourthMomentOperator> {
    if es.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(invalid("fourth-moment operator needs strictly positive eigenvalues"));
    }
    Ok(FourthMomentOperator { eigensystem: es.clone(), paper_coefficients })
}
