//! Simulated functional factor panels.
//!
//! Three AR(1) factors with unit stationary variance drive the first three
//! coordinates of a 7-dimensional orthonormal basis. Idiosyncratic
//! coefficients are i.i.d. Gaussian with covariance `c·E/trace(E)`, where the
//! design (1–4) fixes `c` and the ordering of the diagonal `E`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::LoadingMatrix;
use crate::panel::{Panel, SpaceSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub dgp: u8,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub basis_dim: usize,
    pub n_factors: usize,
    pub target_opnorm: f64,
    /// Seeds factors and idiosyncratic noise.
    pub seed: u64,
    /// Seeds the AR coefficients and loadings, which stay fixed across replications.
    pub fixed_design_seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            dgp: 1,
            n: 100,
            t: 200,
            basis_dim: 7,
            n_factors: 3,
            target_opnorm: 0.8,
            seed: 0,
            fixed_design_seed: 20_230_101,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(1..=4).contains(&self.dgp) {
            return bad(format!("dgp must be 1..=4, got {}", self.dgp));
        }
        if self.n == 0 || self.t < 2 {
            return bad(format!("need N >= 1 and T >= 2, got N={} T={}", self.n, self.t));
        }
        if self.n_factors == 0 || self.basis_dim < self.n_factors {
            return bad("need 1 <= n_factors <= basis_dim".into());
        }
        if !(self.target_opnorm > 0.0 && self.target_opnorm < 1.0) {
            return bad(format!("target_opnorm must lie in (0, 1), got {}", self.target_opnorm));
        }
        Ok(())
    }

    /// Relative idiosyncratic scale `c`.
    pub fn noise_scale(&self) -> f64 {
        if self.dgp <= 2 {
            1.0
        } else {
            7.0
        }
    }

    /// Diagonal of `E`: `(1, 2⁻², …, d⁻²)` for designs 1 and 3, reversed for 2 and 4.
    pub fn noise_shape(&self) -> Vec<f64> {
        let d = self.basis_dim;
        let diag: Vec<f64> = (1..=d).map(|j| (j as f64).powi(-2)).collect();
        if self.dgp % 2 == 1 {
            diag
        } else {
            diag.into_iter().rev().collect()
        }
    }

    /// Per-coordinate idiosyncratic variances `c·E_jj / trace(E)`.
    pub fn noise_variances(&self) -> Vec<f64> {
        let e = self.noise_shape();
        let tr: f64 = e.iter().sum();
        e.iter().map(|v| self.noise_scale() * v / tr).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// `r × T` true factors.
    pub u: DMatrix<f64>,
    /// `N × r` loading coefficients `b̃_il`, rows of unit norm.
    pub b_tilde: DMatrix<f64>,
    /// True loadings as `H_N` columns (`b̃_il` on basis function `l`).
    pub b_coeffs: LoadingMatrix,
    pub chi: Panel,
    /// AR coefficients after rescaling.
    pub a: Vec<f64>,
}

/// Draws a stationary Gaussian AR(1) path `u_t = a u_{t−1} + ε_t`,
/// `ε_t ~ N(0, innov_sd²)`, starting from the stationary law.
pub fn ar_burn_in_draw(a: f64, innov_sd: f64, t: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ar_draw(&mut rng, a, innov_sd, t)
}

fn ar_draw<R: Rng>(rng: &mut R, a: f64, innov_sd: f64, t: usize) -> Result<Vec<f64>> {
    if !(a.abs() < 1.0) {
        return Err(Error::InvalidInput(format!("AR coefficient |a| = {} must be < 1", a.abs())));
    }
    if !(innov_sd >= 0.0) {
        return Err(Error::InvalidInput("innovation sd must be >= 0".into()));
    }
    let mut out = Vec::with_capacity(t);
    if t == 0 {
        return Ok(out);
    }
    let stationary_sd = innov_sd / (1.0 - a * a).sqrt();
    let mut x = stationary_sd * rng.sample::<f64, _>(StandardNormal);
    out.push(x);
    for _ in 1..t {
        x = a * x + innov_sd * rng.sample::<f64, _>(StandardNormal);
        out.push(x);
    }
    Ok(out)
}

/// Design quantities shared across replications: rescaled AR coefficients
/// and the `N × r` loading coefficients.
pub fn fixed_design(cfg: &DgpConfig) -> Result<(Vec<f64>, DMatrix<f64>)> {
    cfg.validate()?;
    let r = cfg.n_factors;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.fixed_design_seed);
    let raw: Vec<f64> = (0..r).map(|_| rng.random_range(-1.0..1.0)).collect();
    let max = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Err(Error::InvalidInput("degenerate AR coefficient draw".into()));
    }
    let a: Vec<f64> = raw.iter().map(|v| v * cfg.target_opnorm / max).collect();
    let mut b = DMatrix::<f64>::zeros(cfg.n, r);
    for i in 0..cfg.n {
        loop {
            for l in 0..r {
                b[(i, l)] = rng.random_range(0.0..1.0);
            }
            let norm = b.row(i).norm();
            if norm > 0.0 {
                b.row_mut(i).scale_mut(norm.recip());
                break;
            }
        }
    }
    Ok((a, b))
}

/// Generates one panel with its ground truth.
pub fn gen_dgp(cfg: &DgpConfig) -> Result<(Panel, GroundTruth)> {
    let (a, b_tilde) = fixed_design(cfg)?;
    let (n, t, d, r) = (cfg.n, cfg.t, cfg.basis_dim, cfg.n_factors);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut u = DMatrix::zeros(r, t);
    for (l, &al) in a.iter().enumerate() {
        let path = ar_draw(&mut rng, al, (1.0 - al * al).sqrt(), t)?;
        for (s, v) in path.into_iter().enumerate() {
            u[(l, s)] = v;
        }
    }

    let sds: Vec<f64> = cfg.noise_variances().iter().map(|v| v.sqrt()).collect();
    let space = SpaceSpec::orthonormal(d)?;
    let mut chi_series = Vec::with_capacity(n);
    let mut x_series = Vec::with_capacity(n);
    let mut b_blocks = Vec::with_capacity(n);
    for i in 0..n {
        let mut bi = DMatrix::zeros(d, r);
        for l in 0..r {
            bi[(l, l)] = b_tilde[(i, l)];
        }
        let chi = &bi * &u;
        let mut x = chi.clone();
        for s in 0..t {
            for (j, sd) in sds.iter().enumerate() {
                x[(j, s)] += sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        b_blocks.push(bi);
        chi_series.push(chi);
        x_series.push(x);
    }
    let spaces = vec![space; n];
    let truth = GroundTruth {
        u,
        b_tilde,
        b_coeffs: LoadingMatrix::new(spaces.clone(), b_blocks)?,
        chi: Panel::new(spaces.clone(), chi_series)?,
        a,
    };
    Ok((Panel::new(spaces, x_series)?, truth))
}
