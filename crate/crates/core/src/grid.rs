//! Observation grids, grid-sampled functions and quadrature.
//!
//! A [`Grid`] has `L` nodes on `[0, 1]` with node `j` lying in the cell
//! `[(j-1)/L, j/L]`. Every node carries quadrature weight `1/L`, so the inner
//! product of two grid functions is the Riemann sum `(1/L) Σ f_j g_j`. This is
//! the same piecewise-constant rule used to turn covariance matrices into
//! integral operators in [`crate::operator`].

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

/// Slack allowed on the cell-membership check for grids read from text.
const CELL_SLACK: f64 = 1e-12;

/// Residual norm below which Gram-Schmidt declares its input dependent.
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid {
    nodes: Vec<f64>,
}

impl Grid {
    /// Validates an adequate grid: strictly increasing, one node per cell.
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(invalid("grid must have at least one node"));
        }
        let l = nodes.len() as f64;
        for (j, &t) in nodes.iter().enumerate() {
            if !t.is_finite() {
                return Err(invalid(format!("grid node {} is not finite", j + 1)));
            }
            if j > 0 && t <= nodes[j - 1] {
                return Err(invalid(format!("grid nodes not strictly increasing at node {}", j + 1)));
            }
            let (lo, hi) = (j as f64 / l, (j + 1) as f64 / l);
            if t < lo - CELL_SLACK || t > hi + CELL_SLACK {
                return Err(invalid(format!(
                    "grid node {} = {t} lies outside its cell [{lo}, {hi}]",
                    j + 1
                )));
            }
        }
        Ok(Self { nodes })
    }

    /// Cell midpoints `(j - 1/2)/L`.
    pub fn midpoints(l: usize) -> Result<Self> {
        if l == 0 {
            return Err(invalid("grid size L must be positive"));
        }
        Self::new((0..l).map(|j| (j as f64 + 0.5) / l as f64).collect())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.nodes.len() as f64
    }

    /// Samples `f` at every node.
    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> GridFunction {
        GridFunction::new(self.nodes.iter().map(|&t| f(t)).collect())
    }
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = Error;

    fn try_from(nodes: Vec<f64>) -> Result<Self> {
        Grid::new(nodes)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(g: Grid) -> Self {
        g.nodes
    }
}

/// One node drawn uniformly from each cell `[(j-1)/L, j/L)`.
pub fn sample_adequate_grid(l: usize, seed: u64) -> Result<Grid> {
    if l == 0 {
        return Err(invalid("grid size L must be positive"));
    }
    let mut rng = seed::rng(seed);
    let width = 1.0 / l as f64;
    let nodes = (0..l)
        .map(|j| (j as f64 + rng.random::<f64>()) * width)
        .collect::<Vec<_>>();
    Grid::new(nodes)
}

/// Values of a function at the nodes of some grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(l: usize) -> Self {
        Self { values: vec![0.0; l] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.values.iter().map(|v| v * c).collect())
    }

    /// `self + c * other`, elementwise.
    pub fn axpy(&self, c: f64, other: &GridFunction) -> Self {
        Self::new(self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect())
    }

    pub fn sub(&self, other: &GridFunction) -> Self {
        self.axpy(-1.0, other)
    }
}

fn check_len(f: &GridFunction, grid: &Grid) -> Result<()> {
    if f.len() != grid.len() {
        return Err(invalid(format!(
            "grid function has {} values but grid has {} nodes",
            f.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// Riemann-sum inner product `(1/L) Σ f_j g_j`.
pub fn inner_product(f: &GridFunction, g: &GridFunction, grid: &Grid) -> Result<f64> {
    check_len(f, grid)?;
    check_len(g, grid)?;
    Ok(dot(f.values(), g.values()) * grid.weight())
}

pub fn norm(f: &GridFunction, grid: &Grid) -> Result<f64> {
    inner_product(f, f, grid).map(f64::sqrt)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt with one re-orthogonalisation pass, under the
/// quadrature inner product. Output `k` spans the same space as inputs `1..=k`.
pub fn gram_schmidt(fs: &[GridFunction], grid: &Grid) -> Result<Vec<GridFunction>> {
    gram_schmidt_with_tol(fs, grid, DEGENERACY_TOL)
}

/// As [`gram_schmidt`], with an explicit threshold on the residual norm.
pub fn gram_schmidt_with_tol(
    fs: &[GridFunction],
    grid: &Grid,
    tol: f64,
) -> Result<Vec<GridFunction>> {
    let w = grid.weight();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(fs.len());
    for (index, f) in fs.iter().enumerate() {
        check_len(f, grid)?;
        let mut v = f.values().to_vec();
        for _pass in 0..2 {
            for q in &out {
                let c = dot(&v, q) * w;
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
            }
        }
        let residual = (dot(&v, &v) * w).sqrt();
        if !(residual >= tol) {
            return Err(Error::DegenerateBasis { index, residual });
        }
        v.iter_mut().for_each(|x| *x /= residual);
        out.push(v);
    }
    Ok(out.into_iter().map(GridFunction::new).collect())
}

/// Gram matrix `G_{ab} = <f_a, f_b>` under the grid inner product.
pub fn gram_matrix(fs: &[GridFunction], grid: &Grid) -> Result<DMatrix<f64>> {
    let k = fs.len();
    let mut g = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let v = inner_product(&fs[a], &fs[b], grid)?;
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    Ok(g)
}

/// `n` curves observed on a common grid, stored as an `n x L` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSet {
    data: DMatrix<f64>,
    grid: Grid,
}

impl CurveSet {
    pub fn new(data: DMatrix<f64>, grid: Grid) -> Result<Self> {
        if data.ncols() != grid.len() {
            return Err(invalid(format!(
                "curve matrix has {} columns but grid has {} nodes",
                data.ncols(),
                grid.len()
            )));
        }
        Ok(Self { data, grid })
    }

    pub fn from_rows(rows: &[GridFunction], grid: Grid) -> Result<Self> {
        let l = grid.len();
        for r in rows {
            check_len(r, &grid)?;
        }
        let data = DMatrix::from_fn(rows.len(), l, |i, j| rows[i].values()[j]);
        Self::new(data, grid)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn grid_len(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> GridFunction {
        GridFunction::new(self.data.row(i).iter().copied().collect())
    }

    pub fn mean(&self) -> GridFunction {
        let n = self.n().max(1) as f64;
        GridFunction::new(self.data.row_sum().iter().map(|s| s / n).collect())
    }

    /// Rows with the pointwise mean subtracted.
    pub fn centered(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut c = self.data.clone();
        for mut row in c.row_iter_mut() {
            row.iter_mut().zip(mean.values()).for_each(|(v, m)| *v -= m);
        }
        c
    }

    /// Rows `indices` as a new curve set.
    pub fn select_rows(&self, indices: &[usize]) -> CurveSet {
        let data = DMatrix::from_fn(indices.len(), self.grid_len(), |i, j| self.data[(indices[i], j)]);
        CurveSet { data, grid: self.grid.clone() }
    }

    /// Columns `indices` as a plain matrix (subgrids need not be adequate grids).
    pub fn select_columns(&self, indices: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), indices.len(), |i, j| self.data[(i, indices[j])])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, SQRT_2};

    #[test]
    fn small_grid_respects_cells() {
        let g = sample_adequate_grid(4, 11).unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.nodes()[0] >= 0.0 && g.nodes()[0] < 0.25);
        for (j, t) in g.nodes().iter().enumerate() {
            assert!(*t >= j as f64 / 4.0 && *t <= (j + 1) as f64 / 4.0);
        }
    }

    #[test]
    fn hundred_node_grid_one_per_cell() {
        let g = sample_adequate_grid(100, 3).unwrap();
        for (j, t) in g.nodes().iter().enumerate() {
            assert!(*t >= 0.01 * j as f64 && *t <= 0.01 * (j + 1) as f64);
            assert!((t - (j as f64 + 0.5) / 100.0).abs() <= 0.5 / 100.0);
        }
    }

    #[test]
    fn grid_sampling_is_deterministic() {
        assert_eq!(sample_adequate_grid(37, 5).unwrap(), sample_adequate_grid(37, 5).unwrap());
        assert_ne!(sample_adequate_grid(37, 5).unwrap(), sample_adequate_grid(37, 6).unwrap());
    }

    #[test]
    fn zero_size_grid_rejected() {
        assert!(matches!(sample_adequate_grid(0, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(vec![0.1, 0.6]).is_ok());
        assert!(Grid::new(vec![0.6, 0.7]).is_err());
        assert!(Grid::new(vec![0.2, 0.2]).is_err());
        assert!(Grid::new(vec![]).is_err());
    }

    #[test]
    fn constant_inner_product_is_one() {
        for l in [1, 7, 100] {
            let g = sample_adequate_grid(l, 1).unwrap();
            let one = g.sample(|_| 1.0);
            assert_eq!(inner_product(&one, &one, &g).unwrap(), 1.0);
        }
    }

    #[test]
    fn fourier_quadrature() {
        // ∫ 2 sin² = 1 and ∫ 2 sin cos = 0; the Riemann sum on an adequate grid
        // is within 0.05 of both.
        for seed in 0..20 {
            let g = sample_adequate_grid(100, seed).unwrap();
            let s = g.sample(|t| SQRT_2 * (2.0 * PI * t).sin());
            let c = g.sample(|t| SQRT_2 * (2.0 * PI * t).cos());
            assert!((inner_product(&s, &s, &g).unwrap() - 1.0).abs() < 0.05);
            assert!(inner_product(&s, &c, &g).unwrap().abs() < 0.05);
        }
    }

    #[test]
    fn inner_product_length_mismatch() {
        let g = Grid::midpoints(3).unwrap();
        let f = GridFunction::new(vec![1.0, 2.0]);
        assert!(inner_product(&f, &f, &g).is_err());
    }

    #[test]
    fn gram_schmidt_keeps_orthonormal_input() {
        let g = Grid::midpoints(4).unwrap();
        let e: Vec<_> = (0..4)
            .map(|k| {
                let mut v = vec![0.0; 4];
                v[k] = 2.0; // unit norm under weight 1/4
                GridFunction::new(v)
            })
            .collect();
        let out = gram_schmidt(&e, &g).unwrap();
        for (a, b) in out.iter().zip(&e) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_schmidt_two_functions() {
        let g = sample_adequate_grid(50, 2).unwrap();
        let f1 = g.sample(|t| 1.0 + t);
        let f2 = g.sample(|t| t * t);
        let out = gram_schmidt(&[f1, f2], &g).unwrap();
        assert!(inner_product(&out[0], &out[1], &g).unwrap().abs() <= 1e-10);
        for o in &out {
            assert!((norm(o, &g).unwrap() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn gram_schmidt_detects_dependence() {
        let g = Grid::midpoints(10).unwrap();
        let f1 = g.sample(|t| t);
        let f2 = g.sample(|t| 3.0 * t);
        match gram_schmidt(&[f1, f2], &g) {
            Err(Error::DegenerateBasis { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected degenerate basis, got {other:?}"),
        }
    }
}
