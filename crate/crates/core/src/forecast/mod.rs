//! h-step-ahead forecasting of functional panels.
//!
//! [`tnh_forecast`] selects the number of factors, splits the centered panel
//! into common and idiosyncratic parts, forecasts the factors and every
//! idiosyncratic coefficient with BIC-selected AR models, and recombines.
//! [`cf_forecast`] is the componentwise baseline: an independent functional
//! principal component forecast for each series.

pub mod ar;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit_factors, idiosyncratic_residual, symmetric_eigen, FactorFit};
use crate::metrics::mafe_msfe;
use crate::panel::{MeanVector, Panel};
use crate::select::{abc_select_r, AbcConfig, PenaltyKind, SelectionTrace};

pub use ar::{ar_forecast, fit_ar_bic, ArModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub horizon: usize,
    pub p_max: usize,
    /// Selection settings; `None` uses the reference configuration for the
    /// panel's size with `abc_seed`.
    pub abc: Option<AbcConfig>,
    pub abc_seed: u64,
    pub penalty: PenaltyKind,
    pub fixed_r: Option<usize>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            horizon: 1,
            p_max: 5,
            abc: None,
            abc_seed: 0,
            penalty: PenaltyKind::Ic2a,
            fixed_r: None,
        }
    }
}

impl ForecastConfig {
    fn validate(&self, t: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidInput("forecast horizon must be >= 1".into()));
        }
        if t < ar::min_length(self.p_max) {
            return Err(Error::SeriesTooShort { required: ar::min_length(self.p_max), actual: t });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TnhForecast {
    /// Selected (or fixed) number of factors.
    pub r_hat: usize,
    /// Factors actually used: `r_hat` capped at the numerical rank of the centered panel.
    pub r_used: usize,
    pub trace: Option<SelectionTrace>,
    pub means: MeanVector,
    pub fit: FactorFit,
    pub factor_models: Vec<ArModel>,
    /// `ũ_{T+h}`.
    pub factor_forecast: DVector<f64>,
    /// Per-series forecast coefficients `x̂_{i,T+h}`.
    pub forecast: Vec<DVector<f64>>,
}

/// Fits at most `k` factors, dropping trailing components that are numerically zero.
fn fit_up_to(panel: &Panel, k: usize) -> Result<FactorFit> {
    match fit_factors(panel, k) {
        Err(Error::RankDeficient { component }) => fit_factors(panel, component - 1),
        other => other,
    }
}

fn forecast_series(series: &[f64], p_max: usize, h: usize) -> Result<(ArModel, f64)> {
    let model = fit_ar_bic(series, p_max)?;
    let path = ar_forecast(&model, series, h)?;
    Ok((model, path[h - 1]))
}

/// The factor-model forecast of every series `h` steps after the panel ends.
pub fn tnh_forecast(panel: &Panel, cfg: &ForecastConfig) -> Result<TnhForecast> {
    cfg.validate(panel.t())?;
    let h = cfg.horizon;
    let (centered, means) = panel.center();

    let (r_hat, trace) = match cfg.fixed_r {
        Some(r) => (r, None),
        None => {
            let abc = match &cfg.abc {
                Some(a) => a.clone(),
                None => AbcConfig::reference(panel.n(), panel.t(), cfg.abc_seed),
            };
            let (r, tr) = abc_select_r(&centered, &abc, cfg.penalty)?;
            (r, Some(tr))
        }
    };
    let fit = fit_up_to(&centered, r_hat)?;
    let r_used = fit.k;

    let factor_results: Vec<(ArModel, f64)> = (0..r_used)
        .into_par_iter()
        .map(|l| {
            let row: Vec<f64> = fit.factors.row(l).iter().copied().collect();
            forecast_series(&row, cfg.p_max, h)
        })
        .collect::<Result<_>>()?;
    let factor_forecast = DVector::from_iterator(r_used, factor_results.iter().map(|r| r.1));
    let factor_models = factor_results.into_iter().map(|r| r.0).collect();

    let resid = idiosyncratic_residual(&centered, &fit)?;
    let forecast = resid
        .all_series()
        .par_iter()
        .enumerate()
        .map(|(i, xi)| {
            let idio = DVector::from_iterator(
                xi.nrows(),
                (0..xi.nrows()).map(|j| {
                    let row: Vec<f64> = xi.row(j).iter().copied().collect();
                    forecast_series(&row, cfg.p_max, h).map(|r| r.1)
                }).collect::<Result<Vec<_>>>()?,
            );
            let common = &fit.b_tilde.blocks()[i] * &factor_forecast;
            Ok(&means.0[i] + common + idio)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TnhForecast { r_hat, r_used, trace, means, fit, factor_models, factor_forecast, forecast })
}

/// Functional principal components of one series: mean, retained
/// eigen-directions in orthonormal coordinates, and their score series.
pub(crate) struct SeriesFpca {
    pub mean: DVector<f64>,
    pub directions: DMatrix<f64>,
    pub scores: DMatrix<f64>,
    chol_upper: DMatrix<f64>,
}

impl SeriesFpca {
    pub fn new(panel: &Panel, i: usize, n_components: usize) -> Result<Self> {
        let sp = &panel.spaces()[i];
        if n_components == 0 || n_components > sp.dim() {
            return Err(Error::InvalidInput(format!(
                "n_components={n_components} outside 1..={} for series {i}",
                sp.dim()
            )));
        }
        let x = panel.series(i);
        let mean = x.column_mean();
        let mut centered = x.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        let z = sp.chol_upper() * centered;
        let cov = &z * z.transpose() / panel.t() as f64;
        let (_, directions) = symmetric_eigen(&cov, n_components)?;
        let scores = directions.transpose() * z;
        Ok(SeriesFpca { mean, directions, scores, chol_upper: sp.chol_upper().clone() })
    }

    /// Coefficient vector for a set of scores.
    pub fn recompose(&self, scores: &DVector<f64>) -> DVector<f64> {
        let z = &self.directions * scores;
        let a = self.chol_upper.clone().solve_upper_triangular(&z).expect("cholesky factor is invertible");
        &self.mean + a
    }
}

/// Componentwise forecast: per-series FPCA with `n_components` scores, each
/// forecast by an AR model selected by BIC.
pub fn cf_forecast(panel: &Panel, h: usize, n_components: usize, p_max: usize) -> Result<Vec<DVector<f64>>> {
    if h == 0 {
        return Err(Error::InvalidInput("forecast horizon must be >= 1".into()));
    }
    if panel.t() < ar::min_length(p_max) {
        return Err(Error::SeriesTooShort { required: ar::min_length(p_max), actual: panel.t() });
    }
    (0..panel.n())
        .into_par_iter()
        .map(|i| {
            let k = n_components.min(panel.spaces()[i].dim());
            let fpca = SeriesFpca::new(panel, i, k)?;
            let mut next = DVector::zeros(k);
            for l in 0..k {
                let row: Vec<f64> = fpca.scores.row(l).iter().copied().collect();
                next[l] = forecast_series(&row, p_max, h)?.1;
            }
            Ok(fpca.recompose(&next))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum Method {
    Tnh,
    Cf { n_components: usize },
}

/// Aggregate rolling-origin accuracy for one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingScore {
    pub h: usize,
    pub origins: usize,
    pub mafe: f64,
    pub msfe: f64,
}

/// Forecasts `x_{Δ+h}` from the first `Δ` time points for every origin
/// `Δ = first_origin..=T−h` and scores the forecasts after mapping
/// coefficients to evaluation curves with `evaluate(i, coeffs)`. `actual(i, t)`
/// returns the observed curve at 0-based time `t`.
pub fn rolling_origin<E, A>(
    panel: &Panel,
    method: Method,
    cfg: &ForecastConfig,
    first_origin: usize,
    evaluate: E,
    actual: A,
) -> Result<RollingScore>
where
    E: Fn(usize, &DVector<f64>) -> Vec<f64> + Sync,
    A: Fn(usize, usize) -> Vec<f64> + Sync,
{
    let h = cfg.horizon;
    if h == 0 {
        return Err(Error::InvalidInput("forecast horizon must be >= 1".into()));
    }
    if first_origin + h > panel.t() || first_origin < 2 {
        return Err(Error::InvalidInput(format!(
            "no forecast origin: first origin {first_origin}, h={h}, T={}",
            panel.t()
        )));
    }
    let identity: Vec<usize> = (0..panel.n()).collect();
    let origins: Vec<usize> = (first_origin..=panel.t() - h).collect();
    let per_origin: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = origins
        .iter()
        .map(|&delta| {
            let train = panel.subpanel(panel.n(), delta, &identity)?;
            let fc = match method {
                Method::Tnh => tnh_forecast(&train, cfg)?.forecast,
                Method::Cf { n_components } => cf_forecast(&train, h, n_components, cfg.p_max)?,
            };
            let target = delta + h - 1;
            let f = fc.iter().enumerate().map(|(i, c)| evaluate(i, c)).collect();
            let a = (0..panel.n()).map(|i| actual(i, target)).collect();
            Ok((f, a))
        })
        .collect::<Result<_>>()?;
    let (f, a): (Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>) = per_origin.into_iter().unzip();
    let f: Vec<Vec<f64>> = f.into_iter().flatten().collect();
    let a: Vec<Vec<f64>> = a.into_iter().flatten().collect();
    let (mafe, msfe) = mafe_msfe(&f, &a)?;
    Ok(RollingScore { h, origins: origins.len(), mafe, msfe })
}

/// Persistence forecast `x̂_{T+h} = x_T`.
pub fn persistence_forecast(panel: &Panel) -> Vec<DVector<f64>> {
    panel.all_series().iter().map(|x| x.column(x.ncols() - 1).into_owned()).collect()
}
