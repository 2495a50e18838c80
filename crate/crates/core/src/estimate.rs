//! Principal-component estimation of factors, loadings and common components.
//!
//! Everything is driven by the `T × T` panel Gram matrix `F[s][t] = <x_s, x_t>/N`.
//! Its leading eigenvectors, rescaled to norm `√T`, are the estimated factors;
//! the loadings are obtained by projecting the panel on them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::metrics::LoadingMatrix;
use crate::panel::{max_asymmetry, Panel, SpaceSpec};

/// Eigenvalues below `RANK_TOL · trace(F)` are treated as zero.
pub const RANK_TOL: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-10;

/// Leading `k` eigenpairs of a symmetric matrix, eigenvalues descending.
///
/// Each eigenvector is signed so that its first coordinate with magnitude
/// above 1e-12 is positive.
pub fn symmetric_eigen(m: &DMatrix<f64>, k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::ShapeMismatch(format!("{}x{} matrix is not square", n, m.ncols())));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("k={k} outside 1..={n}")));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym / scale));
    }
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order[..k].iter().map(|&j| eig.eigenvalues[j]).collect();
    let mut vectors = DMatrix::zeros(n, k);
    for (l, &j) in order[..k].iter().enumerate() {
        let mut v = eig.eigenvectors.column(j).into_owned();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        vectors.set_column(l, &v);
    }
    Ok((values, vectors))
}

/// All eigenvalues of the panel Gram matrix, descending, with numerically
/// vanishing ones set to zero. Enough to evaluate `V(k)` for every `k`.
#[derive(Debug, Clone)]
pub struct EigenProfile {
    pub eigenvalues: Vec<f64>,
    pub trace: f64,
    pub n: usize,
    pub t: usize,
}

impl EigenProfile {
    pub fn from_gram(f: &DMatrix<f64>, n: usize) -> Self {
        let t = f.nrows();
        let trace = f.trace();
        let floor = RANK_TOL * trace;
        let mut eigenvalues: Vec<f64> = f
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .map(|&v| if v <= floor { 0.0 } else { v })
            .collect();
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        EigenProfile { eigenvalues, trace, n, t }
    }

    pub fn of_panel(panel: &Panel) -> Self {
        Self::from_gram(&panel.gram_matrix(), panel.n())
    }

    /// `V(k) = (trace F − Σ_{l≤k} λ̃_l) / T`, evaluated as the tail sum of the
    /// eigenvalues so that it is nonnegative and nonincreasing in `k`.
    pub fn goodness_of_fit(&self, k: usize) -> Result<f64> {
        if k > self.t {
            return Err(Error::InvalidInput(format!("k={k} exceeds T={}", self.t)));
        }
        Ok(self.eigenvalues[k..].iter().sum::<f64>() / self.t as f64)
    }
}

/// Result of a `k`-factor principal-component fit.
#[derive(Debug, Clone)]
pub struct FactorFit {
    pub k: usize,
    /// `λ̂_l = T^{-1/2} λ̃_l`, nonincreasing.
    pub lambda_hat: Vec<f64>,
    /// `k × T`; row `l` is `f̂_l`, with Euclidean norm `√T`.
    pub factors: DMatrix<f64>,
    /// Normalized loadings `ê_l`, each of `H_N`-norm `√N`.
    pub e_hat: LoadingMatrix,
    /// Scaled loadings `b̃_l = T^{-1} Σ_t f̂_{lt} x_t`.
    pub b_tilde: LoadingMatrix,
    pub trace_f: f64,
    pub t: usize,
}

impl FactorFit {
    /// Eigenvalues `λ̃_l` of the panel Gram matrix.
    pub fn lambda_tilde(&self) -> Vec<f64> {
        let s = (self.t as f64).sqrt();
        self.lambda_hat.iter().map(|l| l * s).collect()
    }

    pub fn n(&self) -> usize {
        self.b_tilde.spaces().len()
    }

    pub fn spaces(&self) -> &[SpaceSpec] {
        self.b_tilde.spaces()
    }
}

/// Least-squares estimation of `k` factors and loadings.
///
/// `k = 0` yields the empty fit. Fails with [`Error::RankDeficient`] when one
/// of the leading `k` eigenvalues of `F` is below `1e-12 · trace(F)`.
pub fn fit_factors(panel: &Panel, k: usize) -> Result<FactorFit> {
    let t = panel.t();
    if k > t {
        return Err(Error::InvalidInput(format!("k={k} exceeds T={t}")));
    }
    let f = panel.gram_matrix();
    let trace_f = f.trace();
    let spaces = panel.spaces().to_vec();
    if k == 0 {
        return Ok(FactorFit {
            k,
            lambda_hat: Vec::new(),
            factors: DMatrix::zeros(0, t),
            e_hat: LoadingMatrix::zeros(spaces.clone(), 0),
            b_tilde: LoadingMatrix::zeros(spaces, 0),
            trace_f,
            t,
        });
    }
    let (lambda_tilde, vectors) = symmetric_eigen(&f, k)?;
    let floor = RANK_TOL * trace_f;
    if let Some(l) = lambda_tilde.iter().position(|&v| !(v > floor)) {
        return Err(Error::RankDeficient { component: l + 1 });
    }
    let sqrt_t = (t as f64).sqrt();
    let mut factors = vectors.transpose();
    for mut row in factors.row_iter_mut() {
        let norm = row.norm();
        row *= sqrt_t / norm;
    }

    let b_blocks: Vec<DMatrix<f64>> =
        panel.all_series().iter().map(|x| x * factors.transpose() / t as f64).collect();
    let e_scale: Vec<f64> = lambda_tilde.iter().map(|&l| (l / t as f64).sqrt().recip()).collect();
    let e_blocks = b_blocks
        .iter()
        .map(|b| {
            let mut e = b.clone();
            for (l, mut col) in e.column_iter_mut().enumerate() {
                col *= e_scale[l];
            }
            e
        })
        .collect();

    Ok(FactorFit {
        k,
        lambda_hat: lambda_tilde.iter().map(|l| l / sqrt_t).collect(),
        factors,
        e_hat: LoadingMatrix::new(spaces.clone(), e_blocks)?,
        b_tilde: LoadingMatrix::new(spaces, b_blocks)?,
        trace_f,
        t,
    })
}

/// `χ̂_it = (B̃ ũ_t)_i` for every series and time point.
pub fn common_component(fit: &FactorFit) -> Panel {
    let series = fit.b_tilde.blocks().iter().map(|b| b * &fit.factors).collect();
    Panel::new(fit.spaces().to_vec(), series).expect("fit shapes are consistent")
}

/// `ξ̂ = x − χ̂`, coefficientwise.
pub fn idiosyncratic_residual(panel: &Panel, fit: &FactorFit) -> Result<Panel> {
    if fit.t != panel.t() || fit.n() != panel.n() {
        return Err(Error::ShapeMismatch("fit and panel shapes differ".into()));
    }
    panel.sub(&common_component(fit))
}

/// `V(k)`: mean squared residual `(NT)^{-1} Σ_t ||x_t − B ũ_t||²` after the
/// optimal regression on `k` estimated factors.
pub fn goodness_of_fit(panel: &Panel, k: usize) -> Result<f64> {
    EigenProfile::of_panel(panel).goodness_of_fit(k)
}

/// Forecast-time combination `Σ_l b̃_l u_l` for a single factor vector.
pub fn combine_loadings(fit: &FactorFit, u: &DVector<f64>) -> Vec<DVector<f64>> {
    fit.b_tilde.blocks().iter().map(|b| b * u).collect()
}
