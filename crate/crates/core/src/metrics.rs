//! Error functionals for estimated factors, loadings, common components and
//! forecasts.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::panel::{Panel, SpaceSpec};

/// `r` columns of `H_N` in coefficient form: block `i` is the `dim_i × r`
/// matrix holding the `i`-th component of every column.
#[derive(Debug, Clone)]
pub struct LoadingMatrix {
    spaces: Vec<SpaceSpec>,
    blocks: Vec<DMatrix<f64>>,
}

impl LoadingMatrix {
    pub fn new(spaces: Vec<SpaceSpec>, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if spaces.len() != blocks.len() || spaces.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} spaces but {} loading blocks",
                spaces.len(),
                blocks.len()
            )));
        }
        let r = blocks[0].ncols();
        for (i, (sp, b)) in spaces.iter().zip(&blocks).enumerate() {
            if b.nrows() != sp.dim() || b.ncols() != r {
                return Err(Error::ShapeMismatch(format!(
                    "loading block {i} is {}x{}, expected {}x{r}",
                    b.nrows(),
                    b.ncols(),
                    sp.dim()
                )));
            }
        }
        Ok(LoadingMatrix { spaces, blocks })
    }

    pub fn zeros(spaces: Vec<SpaceSpec>, r: usize) -> Self {
        let blocks = spaces.iter().map(|sp| DMatrix::zeros(sp.dim(), r)).collect();
        LoadingMatrix { spaces, blocks }
    }

    pub fn spaces(&self) -> &[SpaceSpec] {
        &self.spaces
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn ncols(&self) -> usize {
        self.blocks[0].ncols()
    }

    /// `[<a_l, b_m>_{H_N}]` for columns of `self` and `other`.
    pub fn cross_gram(&self, other: &LoadingMatrix) -> Result<DMatrix<f64>> {
        self.check_compatible(other)?;
        let mut g = DMatrix::zeros(self.ncols(), other.ncols());
        for ((sp, a), b) in self.spaces.iter().zip(&self.blocks).zip(&other.blocks) {
            g += a.transpose() * sp.gram() * b;
        }
        Ok(g)
    }

    /// `r × r` matrix of `H_N` inner products between columns.
    pub fn gram(&self) -> DMatrix<f64> {
        self.cross_gram(self).expect("self-compatible")
    }

    /// Squared Hilbert–Schmidt norm `Σ_l ||col_l||²_{H_N}`.
    pub fn hs_norm_sq(&self) -> f64 {
        self.spaces
            .iter()
            .zip(&self.blocks)
            .map(|(sp, b)| (sp.chol_upper() * b).norm_squared())
            .sum()
    }

    fn check_compatible(&self, other: &LoadingMatrix) -> Result<()> {
        if self.spaces.len() != other.spaces.len()
            || self.spaces.iter().zip(&other.spaces).any(|(a, b)| a.dim() != b.dim())
        {
            return Err(Error::ShapeMismatch("loading matrices live in different spaces".into()));
        }
        Ok(())
    }
}

/// `δ = min_R ||Ũ − R U||_F / √T`, computed as `||(I − P_U) Ũᵀ||_F / √T`
/// where `P_U` projects onto the row space of `U_true`. A rank-deficient
/// `U_true` is handled through its numerical row space.
pub fn delta_nt(u_est: &DMatrix<f64>, u_true: &DMatrix<f64>) -> Result<f64> {
    let t = u_est.ncols();
    if u_true.ncols() != t {
        return Err(Error::ShapeMismatch(format!(
            "factor matrices have {} and {} columns",
            t,
            u_true.ncols()
        )));
    }
    let basis = row_space_basis(u_true);
    let ut = u_est.transpose();
    let resid = &ut - &basis * (basis.transpose() * &ut);
    Ok(resid.norm() / (t as f64).sqrt())
}

/// Orthonormal `T × rank` basis of the row space of `u`.
fn row_space_basis(u: &DMatrix<f64>) -> DMatrix<f64> {
    let t = u.ncols();
    if u.nrows() == 0 {
        return DMatrix::zeros(t, 0);
    }
    let svd = u.transpose().svd(true, false);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12 * (t.max(u.nrows()) as f64);
    let left = svd.u.expect("requested U");
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&j| smax > 0.0 && svd.singular_values[j] > tol)
        .collect();
    DMatrix::from_fn(t, keep.len(), |i, j| left[(i, keep[j])])
}

/// `ε = min_R ||B̄ − B R||_F / √N` with all inner products taken in `H_N`.
pub fn epsilon_nt(b_est: &LoadingMatrix, b_true: &LoadingMatrix) -> Result<f64> {
    let bb = b_true.gram();
    let r = bb.nrows();
    let max_diag = (0..r).map(|i| bb[(i, i)]).fold(0.0, f64::max);
    let eig_min = if r == 0 { 0.0 } else { bb.clone().symmetric_eigenvalues().min() };
    if r == 0 || !(eig_min > 1e-12 * max_diag) {
        return Err(Error::SingularLoadings);
    }
    let bbar = b_true.cross_gram(b_est)?;
    let coef = bb.cholesky().ok_or(Error::SingularLoadings)?.solve(&bbar);
    let resid_blocks: Vec<DMatrix<f64>> = b_est
        .blocks()
        .iter()
        .zip(b_true.blocks())
        .map(|(e, b)| e - b * &coef)
        .collect();
    let resid = LoadingMatrix::new(b_est.spaces().to_vec(), resid_blocks)?;
    Ok(resid.hs_norm_sq().max(0.0).sqrt() / (b_est.spaces().len() as f64).sqrt())
}

/// `φ = (NT)^{-1} Σ_i Σ_t ||χ_it − χ̂_it||²_{H_i}`.
pub fn phi_nt(chi_est: &Panel, chi_true: &Panel) -> Result<f64> {
    chi_true.check_same_shape(chi_est)?;
    let diff = chi_true.sub(chi_est)?;
    Ok(diff.total_sq_norm() / (chi_true.n() * chi_true.t()) as f64)
}

/// Mean absolute and mean squared error over a collection of curves
/// evaluated on a common grid (one entry per series × origin).
pub fn mafe_msfe(forecasts: &[Vec<f64>], actuals: &[Vec<f64>]) -> Result<(f64, f64)> {
    if forecasts.len() != actuals.len() || forecasts.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} forecast curves vs {} actual curves",
            forecasts.len(),
            actuals.len()
        )));
    }
    let (mut abs, mut sq, mut count) = (0.0, 0.0, 0usize);
    for (f, a) in forecasts.iter().zip(actuals) {
        if f.len() != a.len() || f.is_empty() {
            return Err(Error::ShapeMismatch("forecast and actual grids differ".into()));
        }
        for (x, y) in f.iter().zip(a) {
            let e = x - y;
            abs += e.abs();
            sq += e * e;
        }
        count += f.len();
    }
    Ok((abs / count as f64, sq / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::testutil::{random_panel, random_spd};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Explicit argmin over R from the normal equations `R (U Uᵀ) = Ũ Uᵀ`.
    fn delta_by_normal_equations(u_est: &DMatrix<f64>, u_true: &DMatrix<f64>) -> f64 {
        let r = (u_est * u_true.transpose()) * (u_true * u_true.transpose()).try_inverse().unwrap();
        (u_est - r * u_true).norm() / (u_est.ncols() as f64).sqrt()
    }

    fn random_loadings(rng: &mut ChaCha8Rng, spaces: &[SpaceSpec], r: usize) -> LoadingMatrix {
        let blocks = spaces.iter().map(|sp| rand_mat(rng, sp.dim(), r)).collect();
        LoadingMatrix::new(spaces.to_vec(), blocks).unwrap()
    }

    #[test]
    fn delta_zero_for_row_mixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = rand_mat(&mut rng, 3, 40);
        let r = rand_mat(&mut rng, 3, 3) + DMatrix::identity(3, 3) * 2.0;
        assert!(delta_nt(&(r * &u), &u).unwrap() < 1e-10);
    }

    #[test]
    fn delta_full_residual() {
        // Rows of u_est orthogonal to row space of u_true, each of norm √T.
        let t = 8;
        let mut u_true = DMatrix::zeros(2, t);
        u_true[(0, 0)] = 1.0;
        u_true[(1, 1)] = 3.0;
        let mut u_est = DMatrix::zeros(3, t);
        for l in 0..3 {
            u_est[(l, 2 + l)] = (t as f64).sqrt();
        }
        assert!((delta_nt(&u_est, &u_true).unwrap() - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn delta_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (a, b) = (rand_mat(&mut rng, 3, 40), rand_mat(&mut rng, 3, 40));
            let want = delta_by_normal_equations(&a, &b);
            assert!((delta_nt(&a, &b).unwrap() - want).abs() < 1e-10);
        }
        assert!(delta_nt(&rand_mat(&mut rng, 2, 5), &rand_mat(&mut rng, 2, 6)).is_err());
    }

    #[test]
    fn delta_rank_deficient_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let row = rand_mat(&mut rng, 1, 20);
        let u_true = DMatrix::from_fn(2, 20, |i, j| row[(0, j)] * (i + 1) as f64);
        let u_est = rand_mat(&mut rng, 2, 20);
        let want = delta_by_normal_equations(&u_est, &row);
        assert!((delta_nt(&u_est, &u_true).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn epsilon_zero_and_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spaces = random_panel(4, 5, 3).spaces().to_vec();
        let b = random_loadings(&mut rng, &spaces, 2);
        let r0 = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -0.5, 1.5]);
        let be = LoadingMatrix::new(spaces.clone(), b.blocks().iter().map(|x| x * &r0).collect()).unwrap();
        assert!(epsilon_nt(&be, &b).unwrap() < 1e-10);

        // Orthonormal single-coordinate spaces: B_true on coordinate 0, B_est on coordinate 1.
        let n = 4;
        let spaces = vec![SpaceSpec::orthonormal(3).unwrap(); n];
        let mk = |row: usize, cols: usize| {
            let blocks = (0..n)
                .map(|_| {
                    let mut m = DMatrix::zeros(3, cols);
                    for c in 0..cols {
                        m[(row + c, c)] = 1.0;
                    }
                    m
                })
                .collect();
            LoadingMatrix::new(spaces.clone(), blocks).unwrap()
        };
        let b_true = mk(0, 1);
        let b_est = mk(1, 2);
        // Each column has H_N norm √N and is orthogonal to range(B_true).
        assert!((epsilon_nt(&b_est, &b_true).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn epsilon_matches_refined_minimization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spaces = random_panel(5, 6, 3).spaces().to_vec();
        let b = random_loadings(&mut rng, &spaces, 2);
        let be = random_loadings(&mut rng, &spaces, 3);
        let got = epsilon_nt(&be, &b).unwrap();
        let objective = |r: &DMatrix<f64>| {
            let blocks = be.blocks().iter().zip(b.blocks()).map(|(e, t)| e - t * r).collect();
            LoadingMatrix::new(spaces.clone(), blocks).unwrap().hs_norm_sq().sqrt() / 6f64.sqrt()
        };
        // Coarse grid over each entry of R, then refinement by coordinate descent.
        let mut best = DMatrix::zeros(2, 3);
        let mut best_val = objective(&best);
        for step in [1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7] {
            for _ in 0..200 {
                let mut improved = false;
                for idx in 0..6 {
                    for sgn in [-1.0, 1.0] {
                        let mut cand = best.clone();
                        cand[idx] += sgn * step;
                        let v = objective(&cand);
                        if v < best_val {
                            best = cand;
                            best_val = v;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
        }
        assert!(got <= best_val + 1e-10);
        assert!((got - best_val).abs() < 1e-8);
    }

    #[test]
    fn epsilon_singular_truth() {
        let spaces = vec![SpaceSpec::orthonormal(2).unwrap(); 3];
        let zero = LoadingMatrix::zeros(spaces.clone(), 2);
        assert!(matches!(epsilon_nt(&zero, &zero), Err(Error::SingularLoadings)));
    }

    #[test]
    fn epsilon_basis_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spaces: Vec<SpaceSpec> = (0..4).map(|_| SpaceSpec::functional(random_spd(&mut rng, 3)).unwrap()).collect();
        let b = random_loadings(&mut rng, &spaces, 2);
        let be = random_loadings(&mut rng, &spaces, 2);
        let base = epsilon_nt(&be, &b).unwrap();
        // Change of basis M: coefficients → M⁻¹ a, gram → Mᵀ G M.
        let ms: Vec<DMatrix<f64>> = (0..4).map(|_| rand_mat(&mut rng, 3, 3) + DMatrix::identity(3, 3) * 2.0).collect();
        let rot_spaces: Vec<SpaceSpec> = spaces
            .iter()
            .zip(&ms)
            .map(|(sp, m)| {
                let g = m.transpose() * sp.gram() * m;
                SpaceSpec::functional((&g + g.transpose()) * 0.5).unwrap()
            })
            .collect();
        let rot = |lm: &LoadingMatrix| {
            let blocks = lm.blocks().iter().zip(&ms).map(|(x, m)| m.clone().try_inverse().unwrap() * x).collect();
            LoadingMatrix::new(rot_spaces.clone(), blocks).unwrap()
        };
        assert!((epsilon_nt(&rot(&be), &rot(&b)).unwrap() - base).abs() < 1e-10);
    }

    #[test]
    fn phi_basic() {
        let p = random_panel(7, 4, 5);
        assert_eq!(phi_nt(&p, &p).unwrap(), 0.0);
        let zero = p.zeros_like();
        let want = p.total_sq_norm() / 20.0;
        assert!((phi_nt(&zero, &p).unwrap() - want).abs() < 1e-12 * want);
        assert!(phi_nt(&random_panel(7, 4, 6), &p).is_err());
    }

    #[test]
    fn mafe_msfe_cases() {
        let a = vec![vec![1.0, 2.0, 3.0], vec![0.0, -1.0, 4.0]];
        assert_eq!(mafe_msfe(&a, &a).unwrap(), (0.0, 0.0));
        let shifted: Vec<Vec<f64>> = a.iter().map(|c| c.iter().map(|x| x + 0.25).collect()).collect();
        let (m, s) = mafe_msfe(&shifted, &a).unwrap();
        assert!((m - 0.25).abs() < 1e-15 && (s - 0.0625).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (ns, no, ng) = (3, 4, 5);
        let f: Vec<Vec<f64>> = (0..ns * no).map(|_| (0..ng).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<Vec<f64>> = (0..ns * no).map(|_| (0..ng).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let (mut ea, mut es) = (0.0, 0.0);
        for i in 0..ns {
            for o in 0..no {
                for g in 0..ng {
                    let e = f[i * no + o][g] - y[i * no + o][g];
                    ea += e.abs();
                    es += e * e;
                }
            }
        }
        let denom = (ns * no * ng) as f64;
        let (m, s) = mafe_msfe(&f, &y).unwrap();
        assert!((m - ea / denom).abs() < 1e-12 && (s - es / denom).abs() < 1e-12);
        assert!(mafe_msfe(&f[..2], &y[..3]).is_err());
    }
}
