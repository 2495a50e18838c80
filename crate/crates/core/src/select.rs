//! Selection of the number of factors.
//!
//! `IC(c, k) = V(k) + c·k·g(N, T)` is minimized over `k = 1..=k_max`. The
//! tuning constant `c` is chosen by the permutation-enhanced stability
//! procedure in [`abc_select_r`]: for a grid of `c` values, the selection is
//! repeated on nested subpanels of randomly permuted panels, and `c` is taken
//! in the middle of the second interval where all subpanels agree.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::EigenProfile;
use crate::panel::{symmetrize, Panel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenaltyKind {
    #[serde(rename = "IC1a")]
    Ic1a,
    #[serde(rename = "IC2a")]
    Ic2a,
}

impl std::str::FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ic1a" => Ok(PenaltyKind::Ic1a),
            "ic2a" => Ok(PenaltyKind::Ic2a),
            other => Err(Error::InvalidInput(format!("unknown penalty '{other}'"))),
        }
    }
}

/// Penalty `g(N, T)`.
///
/// * IC1a: `√((N+T)/(NT)) · log(NT/(N+T))`
/// * IC2a: `√((N+T)/(NT)) · log(min(N, T))`
pub fn penalty(kind: PenaltyKind, n: usize, t: usize) -> Result<f64> {
    let (nf, tf) = (n as f64, t as f64);
    let ratio = nf * tf / (nf + tf);
    if n < 2 || t < 2 || ratio <= 1.0 {
        return Err(Error::InvalidInput(format!("penalty undefined for N={n}, T={t}")));
    }
    let scale = ratio.recip().sqrt();
    Ok(match kind {
        PenaltyKind::Ic1a => scale * ratio.ln(),
        PenaltyKind::Ic2a => scale * nf.min(tf).ln(),
    })
}

/// `V(k) + c·k·g(N, T)`.
pub fn ic_value(panel: &Panel, k: usize, c: f64, kind: PenaltyKind) -> Result<f64> {
    check_c(c)?;
    let g = penalty(kind, panel.n(), panel.t())?;
    let v = EigenProfile::of_panel(panel).goodness_of_fit(k)?;
    Ok(v + c * k as f64 * g)
}

fn check_c(c: f64) -> Result<()> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::InvalidInput(format!("penalty tuning c={c} must be finite and >= 0")));
    }
    Ok(())
}

/// Smallest `k` in `1..=k_max` minimizing `V(k) + c·k·g`.
fn argmin_ic(profile: &EigenProfile, c: f64, g: f64, k_max: usize) -> usize {
    let mut best = (1, f64::INFINITY);
    for k in 1..=k_max {
        let v = profile.eigenvalues[k..].iter().sum::<f64>() / profile.t as f64;
        let ic = v + c * k as f64 * g;
        if ic < best.1 {
            best = (k, ic);
        }
    }
    best.0
}

fn check_k_max(k_max: usize, t: usize) -> Result<()> {
    if k_max == 0 || k_max > t {
        return Err(Error::InvalidInput(format!("k_max={k_max} outside 1..={t}")));
    }
    Ok(())
}

/// `argmin_{k=1..k_max} IC(c, k)`; ties go to the smallest `k`.
pub fn select_r_fixed(panel: &Panel, c: f64, kind: PenaltyKind, k_max: usize) -> Result<usize> {
    check_c(c)?;
    check_k_max(k_max, panel.t())?;
    let g = penalty(kind, panel.n(), panel.t())?;
    Ok(argmin_ic(&EigenProfile::of_panel(panel), c, g, k_max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcConfig {
    pub k_max: usize,
    pub permutations: usize,
    pub c_grid: Vec<f64>,
    /// `(N_j, T_j)` for `j = 1..=J`; the last entry must be the full panel.
    pub subpanel_sizes: Vec<(usize, usize)>,
    pub rng_seed: u64,
}

impl AbcConfig {
    /// `k_max = 10`, `P = 5`, `N_j = ⌊4N/5 + N(j−1)/45⌋` for `j = 1..=10`,
    /// `T_j = T`, `c ∈ {0, 0.05, …, 10}`.
    pub fn reference(n: usize, t: usize, rng_seed: u64) -> Self {
        let subpanel_sizes = (1..=10)
            .map(|j| {
                // Integer arithmetic keeps the floor exact: ⌊(36N + N(j−1)) / 45⌋.
                let nj = (36 * n + n * (j - 1)) / 45;
                (nj.max(1), t)
            })
            .collect();
        AbcConfig {
            k_max: 10,
            permutations: 5,
            c_grid: (0..=200).map(|i| i as f64 * 0.05).collect(),
            subpanel_sizes,
            rng_seed,
        }
    }

    pub fn validate(&self, n: usize, t: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.k_max == 0 {
            return bad("k_max must be >= 1".into());
        }
        if self.permutations == 0 {
            return bad("at least one permutation is required".into());
        }
        if self.c_grid.is_empty() || self.c_grid[0] != 0.0 {
            return bad("c grid must start at 0".into());
        }
        if self.c_grid.windows(2).any(|w| !(w[1] > w[0])) || self.c_grid.iter().any(|c| !c.is_finite()) {
            return bad("c grid must be finite and strictly increasing".into());
        }
        match self.subpanel_sizes.last() {
            Some(&(nj, tj)) if nj == n && tj == t => {}
            _ => return bad(format!("last subpanel must be the full panel ({n}, {t})")),
        }
        if self.subpanel_sizes.windows(2).any(|w| w[1].0 < w[0].0) {
            return bad("subpanel sizes N_j must be nondecreasing".into());
        }
        for &(nj, tj) in &self.subpanel_sizes {
            if nj == 0 || nj > n || tj < 2 || tj > t {
                return bad(format!("subpanel ({nj}, {tj}) does not fit a {n}x{t} panel"));
            }
            if self.k_max > tj {
                return bad(format!("k_max={} exceeds subpanel length {tj}", self.k_max));
            }
            penalty(PenaltyKind::Ic1a, nj, tj)?;
        }
        Ok(())
    }
}

/// How `ĉ` was obtained for one permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum ChosenC {
    /// Middle of the second zero-variance plateau.
    Plateau { index: usize, c: f64 },
    /// No second plateau: smallest-variance grid point with `r̂ < k_max`.
    MinVariance { index: usize, c: f64 },
    /// Nothing usable on the grid: untuned criterion with `c = 1`.
    Untuned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub penalty: PenaltyKind,
    pub k_max: usize,
    pub c_grid: Vec<f64>,
    pub subpanel_sizes: Vec<(usize, usize)>,
    pub rng_seed: u64,
    /// Series order used for each permutation.
    pub permutations: Vec<Vec<usize>>,
    /// `r_hat_table[p][i][j] = r̂(c_i, j, p)`.
    pub r_hat_table: Vec<Vec<Vec<usize>>>,
    /// `variance_profile[p][i]`: population variance of `r̂(c_i, ·, p)` over `j`.
    pub variance_profile: Vec<Vec<f64>>,
    /// Maximal runs `(first, last)` of at least two grid indices with zero
    /// variance and a constant selection.
    pub plateaus: Vec<Vec<(usize, usize)>>,
    pub chosen_c: Vec<ChosenC>,
    /// `r̂(ĉ_p, J, p)`.
    pub r_hat_per_permutation: Vec<usize>,
    pub r_hat_final: usize,
}

impl SelectionTrace {
    /// Long-format variance profile: `permutation,c_index,c,variance,r_hat_full`.
    pub fn variance_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["permutation", "c_index", "c", "variance", "r_hat_full"])?;
        let last = self.subpanel_sizes.len() - 1;
        for (p, row) in self.variance_profile.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                w.write_record([
                    p.to_string(),
                    i.to_string(),
                    format!("{}", self.c_grid[i]),
                    format!("{v}"),
                    self.r_hat_table[p][i][last].to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Lower median (for odd lengths, the median).
pub fn lower_median(values: &[usize]) -> usize {
    let mut v = values.to_vec();
    v.sort_unstable();
    v[(v.len() - 1) / 2]
}

/// Plateau runs of a per-`c` selection table (`rows[i][j]`).
pub fn find_plateaus(rows: &[Vec<usize>]) -> Vec<(usize, usize)> {
    let stable: Vec<Option<usize>> = rows
        .iter()
        .map(|r| if r.iter().all(|&x| x == r[0]) { Some(r[0]) } else { None })
        .collect();
    let mut runs = Vec::new();
    let mut i = 0;
    while i < stable.len() {
        let Some(val) = stable[i] else {
            i += 1;
            continue;
        };
        let start = i;
        while i + 1 < stable.len() && stable[i + 1] == Some(val) {
            i += 1;
        }
        if i > start {
            runs.push((start, i));
        }
        i += 1;
    }
    runs
}

/// Index of the second plateau. The first plateau is the stable region at
/// `c = 0` (where `r̂ = k_max`), whether or not it spans two grid points.
fn second_plateau(rows: &[Vec<usize>], plateaus: &[(usize, usize)]) -> Option<(usize, usize)> {
    let zero_stable = rows.first().is_some_and(|r| r.iter().all(|&x| x == r[0]));
    if zero_stable {
        plateaus.iter().copied().find(|&(s, _)| s > 0)
    } else {
        plateaus.get(1).copied()
    }
}

fn population_variance(values: &[usize]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<usize>() as f64 / n;
    values.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Eigen-profiles of the nested subpanels of `z` (stacked orthonormal
/// coordinates) taken in series order `perm`.
fn subpanel_profiles(
    z: &DMatrix<f64>,
    offsets: &[(usize, usize)],
    perm: &[usize],
    sizes: &[(usize, usize)],
) -> Vec<EigenProfile> {
    sizes
        .par_iter()
        .map(|&(nj, tj)| {
            let rows: usize = perm[..nj].iter().map(|&i| offsets[i].1).sum();
            let mut sub = DMatrix::zeros(rows, tj);
            let mut r = 0;
            for &i in &perm[..nj] {
                let (start, d) = offsets[i];
                sub.view_mut((r, 0), (d, tj)).copy_from(&z.view((start, 0), (d, tj)));
                r += d;
            }
            let mut f = sub.tr_mul(&sub) / nj as f64;
            symmetrize(&mut f);
            EigenProfile::from_gram(&f, nj)
        })
        .collect()
}

/// Permutation-enhanced tuned selection of the number of factors.
pub fn abc_select_r(panel: &Panel, cfg: &AbcConfig, kind: PenaltyKind) -> Result<(usize, SelectionTrace)> {
    cfg.validate(panel.n(), panel.t())?;
    let z = panel.whitened();
    let mut offsets = Vec::with_capacity(panel.n());
    let mut acc = 0;
    for sp in panel.spaces() {
        offsets.push((acc, sp.dim()));
        acc += sp.dim();
    }
    let penalties: Vec<f64> = cfg
        .subpanel_sizes
        .iter()
        .map(|&(nj, tj)| penalty(kind, nj, tj))
        .collect::<Result<_>>()?;
    let last = cfg.subpanel_sizes.len() - 1;

    let per_p: Vec<_> = (0..cfg.permutations)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(p as u64));
            let mut perm: Vec<usize> = (0..panel.n()).collect();
            perm.shuffle(&mut rng);
            let profiles = subpanel_profiles(&z, &offsets, &perm, &cfg.subpanel_sizes);
            let table: Vec<Vec<usize>> = cfg
                .c_grid
                .iter()
                .map(|&c| {
                    profiles
                        .iter()
                        .zip(&penalties)
                        .map(|(prof, &g)| argmin_ic(prof, c, g, cfg.k_max))
                        .collect()
                })
                .collect();
            (perm, table)
        })
        .collect();

    let mut trace = SelectionTrace {
        penalty: kind,
        k_max: cfg.k_max,
        c_grid: cfg.c_grid.clone(),
        subpanel_sizes: cfg.subpanel_sizes.clone(),
        rng_seed: cfg.rng_seed,
        permutations: Vec::new(),
        r_hat_table: Vec::new(),
        variance_profile: Vec::new(),
        plateaus: Vec::new(),
        chosen_c: Vec::new(),
        r_hat_per_permutation: Vec::new(),
        r_hat_final: 0,
    };
    let mut untuned = None;
    for (perm, table) in per_p {
        let variance: Vec<f64> = table.iter().map(|row| population_variance(row)).collect();
        let plateaus = find_plateaus(&table);
        let (chosen, r_p) = match second_plateau(&table, &plateaus) {
            Some((s, e)) => {
                let mid = (s + e) / 2;
                (ChosenC::Plateau { index: mid, c: cfg.c_grid[mid] }, table[mid][last])
            }
            None => {
                let candidate = (0..table.len())
                    .filter(|&i| table[i][last] < cfg.k_max)
                    .min_by(|&a, &b| variance[a].total_cmp(&variance[b]).then(a.cmp(&b)));
                match candidate {
                    Some(i) => (ChosenC::MinVariance { index: i, c: cfg.c_grid[i] }, table[i][last]),
                    None => {
                        let r = match untuned {
                            Some(r) => r,
                            None => {
                                let r = select_r_fixed(panel, 1.0, kind, cfg.k_max)?;
                                untuned = Some(r);
                                r
                            }
                        };
                        (ChosenC::Untuned, r)
                    }
                }
            }
        };
        trace.permutations.push(perm);
        trace.r_hat_table.push(table);
        trace.variance_profile.push(variance);
        trace.plateaus.push(plateaus);
        trace.chosen_c.push(chosen);
        trace.r_hat_per_permutation.push(r_p);
    }
    trace.r_hat_final = lower_median(&trace.r_hat_per_permutation);
    Ok((trace.r_hat_final, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::testutil::random_panel;
    use crate::simulate::{gen_dgp, DgpConfig};
    use rand::Rng;

    fn rank_panel(seed: u64, n: usize, t: usize, r: usize, noise: f64) -> Panel {
        scaled_rank_panel(seed, n, t, r, 1.0, noise)
    }

    /// Rank-`r` signal times `signal`, plus uniform noise of half-width `noise`.
    fn scaled_rank_panel(seed: u64, n: usize, t: usize, r: usize, signal: f64, noise: f64) -> Panel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = DMatrix::from_fn(r, t, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
        let e = DMatrix::from_fn(n, t, |_, _| noise * rng.random_range(-1.0..1.0));
        Panel::scalar(&(b * u * signal + e)).unwrap()
    }

    #[test]
    fn penalty_values() {
        let ic1 = penalty(PenaltyKind::Ic1a, 100, 100).unwrap();
        let ic2 = penalty(PenaltyKind::Ic2a, 100, 100).unwrap();
        assert!((ic1 - 0.02f64.sqrt() * 50f64.ln()).abs() < 1e-12);
        assert!((ic1 - 0.553244).abs() < 1e-6);
        assert!((ic2 - 0.651269).abs() < 1e-6);
        for kind in [PenaltyKind::Ic1a, PenaltyKind::Ic2a] {
            for n in [50, 100, 200] {
                assert!(penalty(kind, 2 * n, 2 * n).unwrap() < penalty(kind, n, n).unwrap());
            }
        }
        assert!(penalty(PenaltyKind::Ic1a, 2, 2).is_err());
        assert!(penalty(PenaltyKind::Ic2a, 1, 50).is_err());
    }

    #[test]
    fn penalty_meets_consistency_conditions_numerically() {
        // g → 0 and C²_{N,T}·g → ∞ along N = T → ∞.
        for kind in [PenaltyKind::Ic1a, PenaltyKind::Ic2a] {
            let vals: Vec<(f64, f64)> = [1e2, 1e4, 1e6, 1e8]
                .iter()
                .map(|&m| {
                    let g = penalty(kind, m as usize, m as usize).unwrap();
                    (g, m * g)
                })
                .collect();
            assert!(vals.windows(2).all(|w| w[1].0 < w[0].0 && w[1].1 > w[0].1));
            assert!(vals[3].0 < 1e-2);
        }
    }

    #[test]
    fn ic_value_composition() {
        let p = random_panel(1, 5, 9);
        let v = crate::estimate::goodness_of_fit(&p, 2).unwrap();
        assert_eq!(ic_value(&p, 2, 0.0, PenaltyKind::Ic2a).unwrap(), v);
        let g = penalty(PenaltyKind::Ic1a, 5, 9).unwrap();
        let got = ic_value(&p, 2, 0.7, PenaltyKind::Ic1a).unwrap();
        assert!((got - (v + 0.7 * 2.0 * g)).abs() < 1e-12);
        assert!(ic_value(&p, 2, -1.0, PenaltyKind::Ic1a).is_err());
    }

    #[test]
    fn fixed_selection_noiseless_rank_three() {
        // The criterion is not scale invariant: the signal must dominate c·k·g over the grid.
        let p = scaled_rank_panel(2, 20, 30, 3, 100.0, 0.0);
        for c in [0.0, 0.01, 0.5, 1.0, 3.0, 10.0] {
            assert_eq!(select_r_fixed(&p, c, PenaltyKind::Ic2a, 10).unwrap(), 3);
        }
    }

    #[test]
    fn fixed_selection_is_exhaustive_argmin() {
        for seed in 0..10 {
            let p = rank_panel(seed, 12, 20, 2, 0.3);
            let k_max = 8;
            let c = 0.4;
            let vals: Vec<f64> = (1..=k_max).map(|k| ic_value(&p, k, c, PenaltyKind::Ic1a).unwrap()).collect();
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let want = 1 + vals.iter().position(|&v| v == min).unwrap();
            assert_eq!(select_r_fixed(&p, c, PenaltyKind::Ic1a, k_max).unwrap(), want);
        }
    }

    #[test]
    fn reference_config_shape() {
        let cfg = AbcConfig::reference(50, 100, 0);
        assert_eq!(cfg.c_grid.len(), 201);
        assert!((cfg.c_grid[200] - 10.0).abs() < 1e-12);
        let ns: Vec<usize> = cfg.subpanel_sizes.iter().map(|s| s.0).collect();
        assert_eq!(ns, vec![40, 41, 42, 43, 44, 45, 46, 47, 48, 50]);
        cfg.validate(50, 100).unwrap();
        assert_eq!(AbcConfig::reference(10, 25, 0).subpanel_sizes[0], (8, 25));
    }

    #[test]
    fn config_validation() {
        let mut cfg = AbcConfig::reference(20, 30, 0);
        assert!(cfg.validate(21, 30).is_err());
        cfg.c_grid[1] = 0.0;
        assert!(cfg.validate(20, 30).is_err());
    }

    #[test]
    fn plateau_detection() {
        let rows = vec![
            vec![10, 10],
            vec![10, 10],
            vec![7, 8],
            vec![3, 3],
            vec![3, 3],
            vec![3, 3],
            vec![2, 3],
            vec![1, 1],
            vec![1, 1],
        ];
        let runs = find_plateaus(&rows);
        assert_eq!(runs, vec![(0, 1), (3, 5), (7, 8)]);
        assert_eq!(second_plateau(&rows, &runs), Some((3, 5)));
        // Single stable point at c = 0 still counts as the first plateau.
        let rows = vec![vec![10, 10], vec![9, 8], vec![3, 3], vec![3, 3]];
        let runs = find_plateaus(&rows);
        assert_eq!(second_plateau(&rows, &runs), Some((2, 3)));
    }

    #[test]
    fn lower_median_even_and_odd() {
        assert_eq!(lower_median(&[3, 1, 2]), 2);
        assert_eq!(lower_median(&[4, 1, 3, 2]), 2);
    }

    #[test]
    fn abc_noiseless_rank_three() {
        let p = scaled_rank_panel(3, 40, 60, 3, 100.0, 0.0);
        let cfg = AbcConfig::reference(40, 60, 7);
        let (r, trace) = abc_select_r(&p, &cfg, PenaltyKind::Ic2a).unwrap();
        assert_eq!(r, 3);
        assert!(trace.r_hat_per_permutation.iter().all(|&x| x == 3));
    }

    #[test]
    fn abc_trace_invariants() {
        let cfg_seed = 11;
        let dgp = DgpConfig { n: 30, t: 60, seed: 5, ..DgpConfig::default() };
        let (p, _) = gen_dgp(&dgp).unwrap();
        let mut cfg = AbcConfig::reference(30, 60, cfg_seed);
        cfg.c_grid.push(1e6);
        let (r, trace) = abc_select_r(&p, &cfg, PenaltyKind::Ic2a).unwrap();
        let (r2, trace2) = abc_select_r(&p, &cfg, PenaltyKind::Ic2a).unwrap();
        assert_eq!(r, r2);
        assert_eq!(trace.r_hat_table, trace2.r_hat_table);
        assert_eq!(trace.permutations, trace2.permutations);

        let last = cfg.subpanel_sizes.len() - 1;
        let full: Vec<_> = trace.r_hat_table.iter().map(|t| t.iter().map(|row| row[last]).collect::<Vec<_>>()).collect();
        assert!(full.windows(2).all(|w| w[0] == w[1]), "full panel is permutation invariant");
        for p in 0..cfg.permutations {
            assert_eq!(trace.variance_profile[p][0], 0.0);
            assert!(trace.r_hat_table[p][0].iter().all(|&x| x == 10));
            assert!(trace.r_hat_table[p].last().unwrap().iter().all(|&x| x == 1));
            assert!(trace.r_hat_table[p].iter().flatten().all(|&x| (1..=10).contains(&x)));
        }
        // Final selection re-derived from the table.
        let per_p: Vec<usize> = trace
            .chosen_c
            .iter()
            .enumerate()
            .map(|(p, ch)| match ch {
                ChosenC::Plateau { index, .. } | ChosenC::MinVariance { index, .. } => trace.r_hat_table[p][*index][last],
                ChosenC::Untuned => select_r_fixed(&p_ref(&dgp), 1.0, PenaltyKind::Ic2a, 10).unwrap(),
            })
            .collect();
        assert_eq!(lower_median(&per_p), r);
        let csv = trace.variance_csv().unwrap();
        assert_eq!(csv.lines().count(), 1 + cfg.permutations * cfg.c_grid.len());
    }

    fn p_ref(cfg: &DgpConfig) -> Panel {
        gen_dgp(cfg).unwrap().0
    }
}
