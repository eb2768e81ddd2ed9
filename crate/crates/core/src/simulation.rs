//! Data-generating processes for the simulation studies.
//!
//! `X = Σ_j λ_j^{1/2} P_j η_j` with standard normal scores, contaminated by
//! either a banded process `U = Σ_l γ_l^{1/2} Q_l φ_l` built from disjoint
//! tent functions, i.i.d. node noise, or nothing. Scalar responses follow the
//! linear model, optionally with a quadratic term, evaluated by grid
//! quadrature on the true `X`.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariance::CovMatrix;
use crate::error::{invalid, Error, Result};
use crate::grid::{gram_schmidt, gram_schmidt_with_tol, CurveSet, Grid, GridFunction};
use crate::regression::SlopeFunction;
use crate::seed;

use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisFamily {
    Fourier,
    GramSchmidtM2,
    LegendreM3,
    FourierExtendedM4,
    GramSchmidtExtendedM5,
    LegendreExtendedM6,
    /// Basis values supplied in [`ModelSpec::custom_basis`].
    Custom,
}

/// The six canonical models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Model {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(Model::M1),
            "M2" => Ok(Model::M2),
            "M3" => Ok(Model::M3),
            "M4" => Ok(Model::M4),
            "M5" => Ok(Model::M5),
            "M6" => Ok(Model::M6),
            _ => Err(invalid(format!("unknown model {s:?}; expected M1 to M6"))),
        }
    }
}

/// One quadratic term `c · ζ_{jk}`, zero-based indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTerm {
    pub j: usize,
    pub k: usize,
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: BasisFamily,
    pub rank: usize,
    pub eigenvalues: Vec<f64>,
    /// Slope coefficients on `η_1, η_2, ...`; missing entries are zero.
    pub slope: Vec<f64>,
    pub noise_sd: f64,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub quadratic: Vec<QuadraticTerm>,
    /// Rows are basis functions sampled on the simulation grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_basis: Option<Vec<Vec<f64>>>,
}

impl ModelSpec {
    pub fn canonical(model: Model) -> Self {
        let (family, eigenvalues, slope): (BasisFamily, Vec<f64>, Vec<f64>) = match model {
            Model::M1 => (BasisFamily::Fourier, head(3), vec![1.0, 1.0, -1.0]),
            Model::M2 => (BasisFamily::GramSchmidtM2, head(5), vec![-0.4, 2.0, -1.0, 1.0, -0.7]),
            Model::M3 => (BasisFamily::LegendreM3, head(5), vec![0.7, 3.0, 0.0, -1.0, 0.5]),
            Model::M4 => (BasisFamily::FourierExtendedM4, tail_eigenvalues_m456(model), vec![1.0, 1.0, -1.0, -1.0, 0.5]),
            Model::M5 => (
                BasisFamily::GramSchmidtExtendedM5,
                tail_eigenvalues_m456(model),
                vec![-0.4, 2.0, -1.0, 1.0, -0.7, 0.5, -0.3],
            ),
            Model::M6 => (
                BasisFamily::LegendreExtendedM6,
                tail_eigenvalues_m456(model),
                vec![0.7, 3.0, 0.0, -1.0, 0.5, 0.0, 0.3],
            ),
        };
        Self {
            family,
            rank: eigenvalues.len(),
            eigenvalues,
            slope,
            noise_sd: 1.0,
            intercept: 0.0,
            quadratic: Vec::new(),
            custom_basis: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.eigenvalues.len() != self.rank {
            return Err(invalid(format!(
                "model rank {} does not match {} eigenvalues",
                self.rank,
                self.eigenvalues.len()
            )));
        }
        if self.eigenvalues.iter().any(|&v| !(v > 0.0)) || self.eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("eigenvalues must be positive and non-increasing"));
        }
        if self.slope.len() > self.rank {
            return Err(invalid("more slope coefficients than basis functions"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(invalid("response noise standard deviation must be non-negative"));
        }
        if self.quadratic.iter().any(|q| q.j >= self.rank || q.k >= self.rank) {
            return Err(invalid("quadratic term index exceeds the model rank"));
        }
        Ok(())
    }
}

fn head(r: usize) -> Vec<f64> {
    eigenvalue_schedule(r, 1.5, 0.3).expect("valid constants")
}

/// `r` equispaced values from `hi` down to `lo`.
pub fn eigenvalue_schedule(r: usize, hi: f64, lo: f64) -> Result<Vec<f64>> {
    if r == 0 || !(hi > lo && lo > 0.0) {
        return Err(invalid(format!("need r ≥ 1 and hi > lo > 0, got r={r}, hi={hi}, lo={lo}")));
    }
    if r == 1 {
        return Ok(vec![hi]);
    }
    Ok((0..r).map(|k| hi - (hi - lo) * k as f64 / (r - 1) as f64).collect())
}

/// Twenty eigenvalues: an equispaced head followed by a quartic tail.
pub fn tail_eigenvalues_m456(model: Model) -> Vec<f64> {
    let (h, c) = match model {
        Model::M4 => (3, 0.1421),
        Model::M5 | Model::M6 => (5, 0.2368),
        _ => return head(if model == Model::M1 { 3 } else { 5 }),
    };
    let mut v = head(h);
    v.extend((h + 1..=20).map(|j| c * ((j - h) as f64).powi(-4)));
    v
}

fn fourier(j: usize, t: f64) -> f64 {
    // η₁ = 1, η_{2k} = √2 sin(2πkt), η_{2k+1} = √2 cos(2πkt), one-based.
    if j == 1 {
        return 1.0;
    }
    let k = (j / 2) as f64;
    if j % 2 == 0 {
        2f64.sqrt() * (2.0 * PI * k * t).sin()
    } else {
        2f64.sqrt() * (2.0 * PI * k * t).cos()
    }
}

fn m2_generator(j: usize, t: f64) -> f64 {
    match j {
        1 => 5.0 * t * (2.0 * PI * t).sin(),
        2 => t * (2.0 * PI * t).cos() - 3.0,
        3 => 5.0 * t + (2.0 * PI * t).sin() - 2.0,
        4 => (4.0 * PI * t).cos() + 0.25 * t * t,
        5 => 6.0 * t * (1.0 - t),
        _ => unreachable!("M2 has five generators"),
    }
}

/// Shifted Legendre polynomial of degree `d` on `[0, 1]`, unnormalised.
pub fn shifted_legendre(d: usize, t: f64) -> f64 {
    let x = 2.0 * t - 1.0;
    let (mut p0, mut p1) = (1.0, x);
    if d == 0 {
        return p0;
    }
    for k in 1..d {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

fn normalized_legendre(d: usize, t: f64) -> f64 {
    (2.0 * d as f64 + 1.0).sqrt() * shifted_legendre(d, t)
}

/// Residual threshold for the M5 orthogonalisation, whose high-degree
/// monomials are nearly dependent on a 100-node grid.
const M5_TOL: f64 = 1e-14;

/// The model basis sampled on `grid`.
pub fn make_basis(spec: &ModelSpec, grid: &Grid) -> Result<Vec<GridFunction>> {
    let r = spec.rank;
    let sample_all = |f: &dyn Fn(usize, f64) -> f64| -> Vec<GridFunction> {
        (1..=r).map(|j| grid.sample(|t| f(j, t))).collect()
    };
    let need = |max: usize| -> Result<()> {
        if r > max {
            Err(invalid(format!("{:?} supports at most {max} functions, got rank {r}", spec.family)))
        } else {
            Ok(())
        }
    };
    match spec.family {
        BasisFamily::Fourier | BasisFamily::FourierExtendedM4 => Ok(sample_all(&fourier)),
        BasisFamily::LegendreM3 => {
            need(5)?;
            Ok(sample_all(&|j, t| normalized_legendre(j - 1, t)))
        }
        BasisFamily::GramSchmidtM2 => {
            need(5)?;
            gram_schmidt(&sample_all(&m2_generator), grid)
        }
        BasisFamily::GramSchmidtExtendedM5 => {
            // f₁..f₅ from M2, then t^{j−3} for j ≥ 6.
            let raw = sample_all(&|j, t| if j <= 5 { m2_generator(j, t) } else { t.powi(j as i32 - 3) });
            gram_schmidt_with_tol(&raw, grid, M5_TOL)
        }
        BasisFamily::LegendreExtendedM6 => {
            // Orthogonalising f₁..f₅, t⁵, t⁶, ... gives the same functions as
            // orthogonalising the Legendre polynomials of increasing degree:
            // the nested spans agree and leading coefficients are positive.
            gram_schmidt(&sample_all(&|j, t| shifted_legendre(j - 1, t)), grid)
        }
        BasisFamily::Custom => {
            let rows = spec
                .custom_basis
                .as_ref()
                .ok_or_else(|| invalid("custom basis family needs custom_basis values"))?;
            if rows.len() < r || rows.iter().any(|f| f.len() != grid.len()) {
                return Err(invalid("custom basis must have rank rows of grid length"));
            }
            Ok(rows[..r].iter().cloned().map(GridFunction::new).collect())
        }
    }
}

/// `Σ_j λ_j η_j(s) η_j(t)` on the grid.
pub fn true_covariance(spec: &ModelSpec, grid: &Grid) -> Result<CovMatrix> {
    let basis = make_basis(spec, grid)?;
    let l = grid.len();
    let mut k = DMatrix::zeros(l, l);
    for (lam, eta) in spec.eigenvalues.iter().zip(&basis) {
        let v = nalgebra::DVector::from_column_slice(eta.values());
        k += &v * v.transpose() * *lam;
    }
    Ok(CovMatrix::from_symmetric_unchecked(k))
}

/// Kernel matrix of `Σ c ζ_{jk}` for the model's quadratic terms.
pub fn quadratic_kernel(spec: &ModelSpec, grid: &Grid) -> Result<DMatrix<f64>> {
    let basis = make_basis(spec, grid)?;
    let l = grid.len();
    let mut b = DMatrix::zeros(l, l);
    for q in &spec.quadratic {
        let u = nalgebra::DVector::from_column_slice(basis[q.j].values());
        let v = nalgebra::DVector::from_column_slice(basis[q.k].values());
        b += &u * v.transpose() * q.coefficient;
    }
    Ok(b)
}

pub fn slope_for_model(spec: &ModelSpec, grid: &Grid) -> Result<SlopeFunction> {
    let basis = make_basis(spec, grid)?;
    let mut beta = GridFunction::zeros(grid.len());
    for (c, eta) in spec.slope.iter().zip(&basis) {
        beta = beta.axpy(*c, eta);
    }
    Ok(SlopeFunction { beta, intercept: spec.intercept, grid: grid.clone() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ErrorSpec {
    None,
    Banded { delta: f64, gammas: Vec<f64> },
    Iid { variance: f64 },
}

impl ErrorSpec {
    /// Banded error with `γ₁ = 0.09` and `γ₂..γ_D` equispaced from 0.04 to 0.01.
    pub fn banded(delta: f64) -> Result<Self> {
        let d = tent_count(delta)?;
        let mut gammas = vec![0.09];
        if d > 1 {
            gammas.extend(if d == 2 { vec![0.04] } else { eigenvalue_schedule(d - 1, 0.04, 0.01)? });
        }
        Ok(ErrorSpec::Banded { delta, gammas })
    }

    pub fn iid(variance: f64) -> Self {
        ErrorSpec::Iid { variance }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ErrorSpec::None => Ok(()),
            ErrorSpec::Banded { delta, gammas } => {
                let d = tent_count(*delta)?;
                if gammas.len() != d || gammas.iter().any(|&g| !(g > 0.0)) {
                    return Err(invalid(format!("banded error needs {d} positive variances")));
                }
                Ok(())
            }
            ErrorSpec::Iid { variance } if *variance >= 0.0 => Ok(()),
            ErrorSpec::Iid { .. } => Err(invalid("i.i.d. error variance must be non-negative")),
        }
    }
}

/// `D = ⌊1/δ⌋`.
fn tent_count(delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(invalid(format!("error bandwidth must lie in (0, 1], got {delta}")));
    }
    Ok((1.0 / delta + 1e-9).floor() as usize)
}

/// Tent functions supported on `[(l−1)δ, lδ]` with height `√(3/δ)`, so that
/// each has unit `L²[0, 1]` norm.
pub fn triangular_error_basis(delta: f64, grid: &Grid) -> Result<Vec<GridFunction>> {
    let d = tent_count(delta)?;
    let h = (3.0 / delta).sqrt();
    Ok((1..=d)
        .map(|l| {
            let c = (l as f64 - 0.5) * delta;
            grid.sample(|t| h * (1.0 - (t - c).abs() / (0.5 * delta)).max(0.0))
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub model: ModelSpec,
    pub error: ErrorSpec,
    pub n: usize,
    pub seed: u64,
    pub grid: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedData {
    pub x: CurveSet,
    pub u: CurveSet,
    pub w: CurveSet,
    pub y: Vec<f64>,
    pub truth: Truth,
}

pub fn simulate(spec: &ModelSpec, err: &ErrorSpec, n: usize, grid: &Grid, seed_value: u64) -> Result<SimulatedData> {
    spec.validate()?;
    err.validate()?;
    if n == 0 {
        return Err(invalid("sample size must be positive"));
    }
    let l = grid.len();
    let basis = make_basis(spec, grid)?;
    let tents = match err {
        ErrorSpec::Banded { delta, .. } => triangular_error_basis(*delta, grid)?,
        _ => Vec::new(),
    };
    let beta = slope_for_model(spec, grid)?;
    let bq = (!spec.quadratic.is_empty()).then(|| quadratic_kernel(spec, grid)).transpose()?;

    // Separate streams keep X identical across error specifications.
    let mut rng_x = seed::rng(seed::derive(seed_value, 0));
    let mut rng_u = seed::rng(seed::derive(seed_value, 1));
    let mut rng_e = seed::rng(seed::derive(seed_value, 2));
    let mut x = DMatrix::zeros(n, l);
    let mut u = DMatrix::zeros(n, l);
    let mut y = Vec::with_capacity(n);
    let w8 = grid.weight();
    for i in 0..n {
        for (lam, eta) in spec.eigenvalues.iter().zip(&basis) {
            let p: f64 = StandardNormal.sample(&mut rng_x);
            let a = lam.sqrt() * p;
            for (t, e) in eta.values().iter().enumerate() {
                x[(i, t)] += a * e;
            }
        }
        match err {
            ErrorSpec::None => {}
            ErrorSpec::Banded { gammas, .. } => {
                for (g, phi) in gammas.iter().zip(&tents) {
                    let q: f64 = StandardNormal.sample(&mut rng_u);
                    let a = g.sqrt() * q;
                    for (t, p) in phi.values().iter().enumerate() {
                        u[(i, t)] += a * p;
                    }
                }
            }
            ErrorSpec::Iid { variance } => {
                let sd = variance.sqrt();
                for t in 0..l {
                    let z: f64 = StandardNormal.sample(&mut rng_u);
                    u[(i, t)] = sd * z;
                }
            }
        }
        let xi = x.row(i);
        let mut yi = spec.intercept + w8 * xi.iter().zip(beta.beta.values()).map(|(a, b)| a * b).sum::<f64>();
        if let Some(b) = &bq {
            yi += w8 * w8 * (xi * b * xi.transpose())[(0, 0)];
        }
        if spec.noise_sd > 0.0 {
            yi += Normal::new(0.0, spec.noise_sd).expect("finite sd").sample(&mut rng_e);
        }
        y.push(yi);
    }
    let w = &x + &u;
    Ok(SimulatedData {
        x: CurveSet::new(x, grid.clone())?,
        u: CurveSet::new(u, grid.clone())?,
        w: CurveSet::new(w, grid.clone())?,
        y,
        truth: Truth {
            model: spec.clone(),
            error: err.clone(),
            n,
            seed: seed_value,
            grid: grid.nodes().to_vec(),
            beta: beta.beta.into_values(),
        },
    })
}
