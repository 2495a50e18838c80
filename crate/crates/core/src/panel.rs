//! Mixed scalar/functional panels stored as basis coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRAM_SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    Scalar,
    Functional,
}

/// The Hilbert space of one series: a basis dimension and the Gram matrix
/// `G[j][k] = <φ_j, φ_k>` of that basis.
#[derive(Debug, Clone)]
pub struct SpaceSpec {
    kind: SpaceKind,
    gram: DMatrix<f64>,
    /// Upper Cholesky factor `U` with `G = Uᵀ U`. Maps coefficients to
    /// coordinates in an orthonormal basis of the same space.
    chol_upper: DMatrix<f64>,
}

impl SpaceSpec {
    pub fn scalar() -> Self {
        let one = DMatrix::identity(1, 1);
        SpaceSpec { kind: SpaceKind::Scalar, gram: one.clone(), chol_upper: one }
    }

    /// Functional space with an orthonormal basis of dimension `dim`.
    pub fn orthonormal(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("basis dimension must be positive".into()));
        }
        let id = DMatrix::identity(dim, dim);
        Ok(SpaceSpec { kind: SpaceKind::Functional, gram: id.clone(), chol_upper: id })
    }

    /// Functional space with an arbitrary basis. The Gram matrix must be
    /// symmetric (relative tolerance 1e-12) and positive definite.
    pub fn functional(gram: DMatrix<f64>) -> Result<Self> {
        Self::with_kind(SpaceKind::Functional, gram)
    }

    pub fn with_kind(kind: SpaceKind, gram: DMatrix<f64>) -> Result<Self> {
        let dim = gram.nrows();
        if dim == 0 || gram.ncols() != dim {
            return Err(Error::InvalidInput(format!(
                "gram must be square and nonempty, got {}x{}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if kind == SpaceKind::Scalar && (dim != 1 || (gram[(0, 0)] - 1.0).abs() > GRAM_SYMMETRY_TOL) {
            return Err(Error::InvalidInput("scalar spaces have dim 1 and gram [1]".into()));
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("gram has non-finite entries".into()));
        }
        let asym = max_asymmetry(&gram);
        let scale = gram.amax().max(f64::MIN_POSITIVE);
        if asym > GRAM_SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric(asym / scale));
        }
        let sym = (&gram + gram.transpose()) * 0.5;
        let chol = sym
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { series: 0 })?;
        let chol_upper = chol.l().transpose();
        Ok(SpaceSpec { kind, gram: sym, chol_upper })
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Upper Cholesky factor `U` of the Gram matrix (`G = UᵀU`).
    pub fn chol_upper(&self) -> &DMatrix<f64> {
        &self.chol_upper
    }

    /// `aᵀ G b`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for j in 0..d {
            let mut row = 0.0;
            for k in 0..d {
                row += self.gram[(j, k)] * b[k];
            }
            acc += a[j] * row;
        }
        acc
    }

    pub fn norm_sq(&self, a: &[f64]) -> f64 {
        self.inner(a, a)
    }
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// An observed `N × T` panel. Series `i` is a `dim_i × T` coefficient matrix
/// whose column `t` is the observation at time `t`.
#[derive(Debug, Clone)]
pub struct Panel {
    spaces: Vec<SpaceSpec>,
    series: Vec<DMatrix<f64>>,
    t_len: usize,
}

/// Per-series time averages of the coefficient vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanVector(pub Vec<DVector<f64>>);

impl Panel {
    pub fn new(spaces: Vec<SpaceSpec>, series: Vec<DMatrix<f64>>) -> Result<Self> {
        if spaces.is_empty() {
            return Err(Error::InvalidInput("panel needs at least one series".into()));
        }
        if spaces.len() != series.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} spaces but {} series",
                spaces.len(),
                series.len()
            )));
        }
        let t_len = series[0].ncols();
        if t_len < 2 {
            return Err(Error::InvalidInput(format!("panel needs T >= 2, got {t_len}")));
        }
        for (i, (sp, x)) in spaces.iter().zip(&series).enumerate() {
            if x.nrows() != sp.dim() || x.ncols() != t_len {
                return Err(Error::ShapeMismatch(format!(
                    "series {i} is {}x{}, expected {}x{}",
                    x.nrows(),
                    x.ncols(),
                    sp.dim(),
                    t_len
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("series {i} has non-finite values")));
            }
        }
        Ok(Panel { spaces, series, t_len })
    }

    /// All-scalar panel from an `N × T` matrix.
    pub fn scalar(values: &DMatrix<f64>) -> Result<Self> {
        let spaces = vec![SpaceSpec::scalar(); values.nrows()];
        let series = (0..values.nrows()).map(|i| values.rows(i, 1).into_owned()).collect();
        Panel::new(spaces, series)
    }

    /// Same spaces, new coefficient matrices.
    pub fn with_series(&self, series: Vec<DMatrix<f64>>) -> Result<Self> {
        Panel::new(self.spaces.clone(), series)
    }

    pub fn zeros_like(&self) -> Self {
        let series = self.series.iter().map(|x| DMatrix::zeros(x.nrows(), x.ncols())).collect();
        Panel { spaces: self.spaces.clone(), series, t_len: self.t_len }
    }

    pub fn n(&self) -> usize {
        self.spaces.len()
    }

    pub fn t(&self) -> usize {
        self.t_len
    }

    pub fn spaces(&self) -> &[SpaceSpec] {
        &self.spaces
    }

    pub fn series(&self, i: usize) -> &DMatrix<f64> {
        &self.series[i]
    }

    pub fn all_series(&self) -> &[DMatrix<f64>] {
        &self.series
    }

    pub fn into_series(self) -> Vec<DMatrix<f64>> {
        self.series
    }

    /// Coefficient vector of series `i` at time `t` (0-based).
    pub fn coeff(&self, i: usize, t: usize) -> Vec<f64> {
        self.series[i].column(t).iter().copied().collect()
    }

    /// Total coefficient count per time slice, `Σ_i dim_i`.
    pub fn total_dim(&self) -> usize {
        self.spaces.iter().map(SpaceSpec::dim).sum()
    }

    /// `<x_s, x_t> = Σ_i a_{is}ᵀ G_i a_{it}` with 0-based time indices.
    pub fn inner_product(&self, s: usize, t: usize) -> Result<f64> {
        for idx in [s, t] {
            if idx >= self.t_len {
                return Err(Error::IndexOutOfRange { index: idx, len: self.t_len });
            }
        }
        let mut acc = 0.0;
        for (sp, x) in self.spaces.iter().zip(&self.series) {
            let a: Vec<f64> = x.column(s).iter().copied().collect();
            let b: Vec<f64> = x.column(t).iter().copied().collect();
            acc += sp.inner(&a, &b);
        }
        Ok(acc)
    }

    /// Stacked orthonormal-coordinate matrix `Z` (`Σ dim_i × T`) with
    /// `Zᵀ Z = [<x_s, x_t>]`.
    pub fn whitened(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.total_dim(), self.t_len);
        let mut row = 0;
        for (sp, x) in self.spaces.iter().zip(&self.series) {
            let d = sp.dim();
            let block = sp.chol_upper() * x;
            z.view_mut((row, 0), (d, self.t_len)).copy_from(&block);
            row += d;
        }
        z
    }

    /// Panel Gram matrix `F[s][t] = <x_s, x_t> / N`.
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        let z = self.whitened();
        let mut f = z.tr_mul(&z) / self.n() as f64;
        symmetrize(&mut f);
        f
    }

    /// Per-series squared norms summed over the panel, `Σ_i Σ_t ||x_it||²`.
    pub fn total_sq_norm(&self) -> f64 {
        self.whitened().norm_squared()
    }

    /// Subtracts per-series time averages.
    pub fn center(&self) -> (Panel, MeanVector) {
        let mut means = Vec::with_capacity(self.n());
        let mut series = Vec::with_capacity(self.n());
        for x in &self.series {
            // Constant coordinates center to exact zeros.
            let mu = DVector::from_fn(x.nrows(), |j, _| {
                let row = x.row(j);
                if row.iter().all(|&v| v == row[0]) {
                    row[0]
                } else {
                    row.sum() / x.ncols() as f64
                }
            });
            let mut y = x.clone();
            for mut col in y.column_iter_mut() {
                col -= &mu;
            }
            means.push(mu);
            series.push(y);
        }
        (Panel { spaces: self.spaces.clone(), series, t_len: self.t_len }, MeanVector(means))
    }

    /// Adds `means` back to every time point.
    pub fn add_means(&self, means: &MeanVector) -> Result<Panel> {
        self.check_means(means)?;
        let series = self
            .series
            .iter()
            .zip(&means.0)
            .map(|(x, mu)| {
                let mut y = x.clone();
                for mut col in y.column_iter_mut() {
                    col += mu;
                }
                y
            })
            .collect();
        Ok(Panel { spaces: self.spaces.clone(), series, t_len: self.t_len })
    }

    pub(crate) fn check_means(&self, means: &MeanVector) -> Result<()> {
        if means.0.len() != self.n()
            || means.0.iter().zip(&self.spaces).any(|(m, sp)| m.len() != sp.dim())
        {
            return Err(Error::ShapeMismatch("mean vector does not match panel spaces".into()));
        }
        Ok(())
    }

    /// First `n` series under `perm` and first `t_len` time points.
    pub fn subpanel(&self, n: usize, t_len: usize, perm: &[usize]) -> Result<Panel> {
        if n == 0 || n > self.n() {
            return Err(Error::InvalidInput(format!("subpanel size n={n} outside 1..={}", self.n())));
        }
        if t_len < 2 || t_len > self.t_len {
            return Err(Error::InvalidInput(format!(
                "subpanel length {t_len} outside 2..={}",
                self.t_len
            )));
        }
        check_permutation(perm, self.n())?;
        let (spaces, series) = perm[..n]
            .iter()
            .map(|&i| (self.spaces[i].clone(), self.series[i].columns(0, t_len).into_owned()))
            .unzip();
        Ok(Panel { spaces, series, t_len })
    }

    /// Entrywise coefficient difference `self − other`.
    pub fn sub(&self, other: &Panel) -> Result<Panel> {
        self.check_same_shape(other)?;
        let series = self.series.iter().zip(&other.series).map(|(a, b)| a - b).collect();
        Ok(Panel { spaces: self.spaces.clone(), series, t_len: self.t_len })
    }

    pub fn add(&self, other: &Panel) -> Result<Panel> {
        self.check_same_shape(other)?;
        let series = self.series.iter().zip(&other.series).map(|(a, b)| a + b).collect();
        Ok(Panel { spaces: self.spaces.clone(), series, t_len: self.t_len })
    }

    pub(crate) fn check_same_shape(&self, other: &Panel) -> Result<()> {
        if self.n() != other.n() || self.t() != other.t() {
            return Err(Error::ShapeMismatch(format!(
                "panels are {}x{} and {}x{}",
                self.n(),
                self.t(),
                other.n(),
                other.t()
            )));
        }
        for (i, (a, b)) in self.spaces.iter().zip(&other.spaces).enumerate() {
            if a.dim() != b.dim() {
                return Err(Error::ShapeMismatch(format!("series {i} dimensions differ")));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::InvalidInput(format!("permutation has length {}, expected {n}", perm.len())));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidInput("not a permutation".into()));
        }
    }
    Ok(())
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
