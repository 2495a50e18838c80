//! Autoregressive models with intercept, order chosen by BIC.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub order: usize,
    pub intercept: f64,
    /// `coefficients[j]` multiplies `y_{t−1−j}`.
    pub coefficients: Vec<f64>,
    pub innovation_variance: f64,
}

impl ArModel {
    pub fn constant(value: f64) -> Self {
        ArModel { order: 0, intercept: value, coefficients: Vec::new(), innovation_variance: 0.0 }
    }

    /// Spectral radius of the companion matrix (0 for AR(0)).
    pub fn spectral_radius(&self) -> f64 {
        let p = self.order;
        if p == 0 {
            return 0.0;
        }
        let mut c = DMatrix::zeros(p, p);
        for (j, &a) in self.coefficients.iter().enumerate() {
            c[(0, j)] = a;
        }
        for j in 1..p {
            c[(j, j - 1)] = 1.0;
        }
        c.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Minimum series length accepted by [`fit_ar_bic`] for a given `p_max`.
pub fn min_length(p_max: usize) -> usize {
    3 * (p_max + 2)
}

/// Fits AR(p) for `p = 0..=p_max` by conditional least squares on the common
/// sample `t = p_max+1..T` and returns the model minimizing
/// `T_eff·log(RSS/T_eff) + (p+2)·log(T_eff)`; ties go to the smaller order.
pub fn fit_ar_bic(series: &[f64], p_max: usize) -> Result<ArModel> {
    let t = series.len();
    if t < min_length(p_max) {
        return Err(Error::SeriesTooShort { required: min_length(p_max), actual: t });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("series has non-finite values".into()));
    }
    let first = series[0];
    if series.iter().all(|&v| v == first) {
        return Ok(ArModel::constant(first));
    }
    let t_eff = t - p_max;
    let target = DVector::from_iterator(t_eff, series[p_max..].iter().copied());
    let log_t = (t_eff as f64).ln();
    let mut best: Option<(f64, ArModel)> = None;
    for p in 0..=p_max {
        let design = DMatrix::from_fn(t_eff, p + 1, |row, col| {
            if col == 0 {
                1.0
            } else {
                series[p_max + row - col]
            }
        });
        let (beta, rss) = least_squares(&design, &target)?;
        let bic = t_eff as f64 * (rss / t_eff as f64).ln() + (p + 2) as f64 * log_t;
        let model = ArModel {
            order: p,
            intercept: beta[0],
            coefficients: beta.iter().skip(1).copied().collect(),
            innovation_variance: rss / t_eff as f64,
        };
        match &best {
            Some((b, _)) if !(bic < *b) => {}
            _ => best = Some((bic, model)),
        }
    }
    Ok(best.expect("at least one order is fitted").1)
}

/// Least squares through the SVD; tolerates mildly collinear lag matrices.
fn least_squares(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let svd = design.clone().svd(true, true);
    let tol = svd.singular_values.max() * 1e-12 * design.nrows() as f64;
    let beta = svd.solve(target, tol).map_err(|e| Error::Collinear(e.to_string()))?;
    let rss = (target - design * &beta).norm_squared();
    Ok((beta, rss))
}

/// Iterated plug-in forecasts for steps `1..=h` after the end of `history`.
pub fn ar_forecast(model: &ArModel, history: &[f64], h: usize) -> Result<Vec<f64>> {
    if history.len() < model.order {
        return Err(Error::SeriesTooShort { required: model.order, actual: history.len() });
    }
    let mut buf: Vec<f64> = history[history.len() - model.order..].to_vec();
    let mut out = Vec::with_capacity(h);
    for _ in 0..h {
        let n = buf.len();
        let next = model.intercept
            + model.coefficients.iter().enumerate().map(|(j, a)| a * buf[n - 1 - j]).sum::<f64>();
        buf.push(next);
        out.push(next);
    }
    Ok(out)
}
