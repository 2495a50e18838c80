//! Monte Carlo driver over a grid of simulation designs.
//!
//! Each replication draws a panel with seed `seed + replication`, fits every
//! requested number of factors and records `δ²`, `ε²` and `φ`. Rows are
//! written in `(dgp, N, T, replication, k)` order regardless of scheduling.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{common_component, fit_factors};
use crate::io::Manifest;
use crate::metrics::{delta_nt, epsilon_nt, phi_nt};
use crate::select::{abc_select_r, AbcConfig, PenaltyKind};
use crate::simulate::{gen_dgp, DgpConfig};

pub const CSV_HEADER: &str = "dgp,N,T,k,replication,delta_sq,epsilon_sq,phi";
pub const SELECTION_HEADER: &str = "dgp,N,T,replication,r_hat";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionSpec {
    #[serde(default = "default_penalty")]
    pub penalty: PenaltyKind,
    /// Seed offset for the permutation stream of each replication.
    #[serde(default)]
    pub abc_seed: u64,
}

fn default_penalty() -> PenaltyKind {
    PenaltyKind::Ic2a
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSpec {
    pub dgp: Vec<u8>,
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    #[serde(rename = "T")]
    pub t: Vec<usize>,
    pub replications: usize,
    pub k: Vec<usize>,
    /// Base seed; replication `m` uses `seed + m`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_design_seed")]
    pub fixed_design_seed: u64,
    pub output: PathBuf,
    /// Also run the tuned selection on every replication.
    #[serde(default)]
    pub selection: Option<SelectionSpec>,
}

fn default_design_seed() -> u64 {
    DgpConfig::default().fixed_design_seed
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dgp.is_empty() || self.n.is_empty() || self.t.is_empty() || self.k.is_empty() {
            return Err(Error::InvalidInput("dgp, N, T and k lists must be nonempty".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidInput("replications must be >= 1".into()));
        }
        for &dgp in &self.dgp {
            for &n in &self.n {
                for &t in &self.t {
                    self.config(dgp, n, t, 0).validate()?;
                    if let Some(&k) = self.k.iter().find(|&&k| k > t) {
                        return Err(Error::InvalidInput(format!("k={k} exceeds T={t}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn config(&self, dgp: u8, n: usize, t: usize, replication: usize) -> DgpConfig {
        DgpConfig {
            dgp,
            n,
            t,
            seed: self.seed + replication as u64,
            fixed_design_seed: self.fixed_design_seed,
            ..DgpConfig::default()
        }
    }

    pub fn manifest(&self) -> Manifest {
        Manifest::new("bench")
            .with("dgp", &self.dgp)
            .with("N", &self.n)
            .with("T", &self.t)
            .with("k", &self.k)
            .with("replications", self.replications)
            .with("seed", self.seed)
            .with("fixed_design_seed", self.fixed_design_seed)
            .with("selection", &self.selection)
    }

    /// `(dgp, N, T)` cells in canonical order.
    fn cells(&self) -> Vec<(u8, usize, usize)> {
        let mut cells = Vec::new();
        for &d in &self.dgp {
            for &n in &self.n {
                for &t in &self.t {
                    cells.push((d, n, t));
                }
            }
        }
        cells.sort_unstable();
        cells.dedup();
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dgp: u8,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub k: usize,
    pub replication: usize,
    pub delta_sq: f64,
    pub epsilon_sq: f64,
    pub phi: f64,
}

impl BenchRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:e},{:e},{:e}",
            self.dgp, self.n, self.t, self.k, self.replication, self.delta_sq, self.epsilon_sq, self.phi
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub dgp: u8,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub replication: usize,
    pub r_hat: usize,
}

/// Under- and overestimation counts of `r̂` for one design cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub dgp: u8,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub replications: usize,
    pub under: usize,
    pub over: usize,
}

/// All rows of one replication.
pub fn run_replication(spec: &BenchSpec, dgp: u8, n: usize, t: usize, replication: usize) -> Result<Vec<BenchRow>> {
    let (panel, truth) = gen_dgp(&spec.config(dgp, n, t, replication))?;
    let mut ks = spec.k.clone();
    ks.sort_unstable();
    ks.dedup();
    ks.iter()
        .map(|&k| {
            let fit = fit_factors(&panel, k)?;
            let delta = delta_nt(&fit.factors, &truth.u)?;
            let eps = epsilon_nt(&fit.e_hat, &truth.b_coeffs)?;
            let phi = phi_nt(&common_component(&fit), &truth.chi)?;
            Ok(BenchRow { dgp, n, t, k, replication, delta_sq: delta * delta, epsilon_sq: eps * eps, phi })
        })
        .collect()
}

/// Runs the whole grid in memory, rows in canonical order.
pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    spec.validate()?;
    let jobs: Vec<(u8, usize, usize, usize)> = spec
        .cells()
        .into_iter()
        .flat_map(|(d, n, t)| (0..spec.replications).map(move |m| (d, n, t, m)))
        .collect();
    let rows: Vec<Vec<BenchRow>> = jobs
        .par_iter()
        .map(|&(d, n, t, m)| run_replication(spec, d, n, t, m))
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Tuned selection on every replication.
pub fn run_selection(spec: &BenchSpec) -> Result<Vec<SelectionRow>> {
    spec.validate()?;
    let sel = spec
        .selection
        .clone()
        .ok_or_else(|| Error::InvalidInput("bench spec has no selection block".into()))?;
    let jobs: Vec<(u8, usize, usize, usize)> = spec
        .cells()
        .into_iter()
        .flat_map(|(d, n, t)| (0..spec.replications).map(move |m| (d, n, t, m)))
        .collect();
    jobs.par_iter()
        .map(|&(dgp, n, t, m)| {
            let (panel, _) = gen_dgp(&spec.config(dgp, n, t, m))?;
            let cfg = AbcConfig::reference(n, t, sel.abc_seed.wrapping_add(1000 * m as u64));
            let (r_hat, _) = abc_select_r(&panel, &cfg, sel.penalty)?;
            Ok(SelectionRow { dgp, n, t, replication: m, r_hat })
        })
        .collect()
}

pub fn summarize_selection(rows: &[SelectionRow], r_true: usize) -> Vec<SelectionSummary> {
    let mut out: Vec<SelectionSummary> = Vec::new();
    for row in rows {
        let pos = out.iter().position(|s| (s.dgp, s.n, s.t) == (row.dgp, row.n, row.t));
        let s = match pos {
            Some(p) => &mut out[p],
            None => {
                out.push(SelectionSummary { dgp: row.dgp, n: row.n, t: row.t, replications: 0, under: 0, over: 0 });
                out.last_mut().expect("just pushed")
            }
        };
        s.replications += 1;
        s.under += usize::from(row.r_hat < r_true);
        s.over += usize::from(row.r_hat > r_true);
    }
    out
}

fn row_key(r: &BenchRow) -> (u8, usize, usize, usize, usize) {
    (r.dgp, r.n, r.t, r.replication, r.k)
}

/// Reads the rows already present in a bench CSV.
pub fn read_rows(path: &Path) -> Result<Vec<BenchRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::InvalidInput(format!("unexpected bench CSV header {header:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Runs the grid and writes the CSV. With `resume`, rows already present in
/// the output are kept and only missing replications are computed and appended.
/// Returns the number of rows written in this call.
pub fn write_bench(spec: &BenchSpec, resume: bool) -> Result<usize> {
    spec.validate()?;
    let existing: BTreeSet<(u8, usize, usize, usize, usize)> = if resume && spec.output.exists() {
        read_rows(&spec.output)?.iter().map(row_key).collect()
    } else {
        BTreeSet::new()
    };
    let jobs: Vec<(u8, usize, usize, usize)> = spec
        .cells()
        .into_iter()
        .flat_map(|(d, n, t)| (0..spec.replications).map(move |m| (d, n, t, m)))
        .filter(|&(d, n, t, m)| spec.k.iter().any(|&k| !existing.contains(&(d, n, t, m, k))))
        .collect();
    let rows: Vec<Vec<BenchRow>> = jobs
        .par_iter()
        .map(|&(d, n, t, m)| run_replication(spec, d, n, t, m))
        .collect::<Result<_>>()?;
    let new_rows: Vec<BenchRow> =
        rows.into_iter().flatten().filter(|r| !existing.contains(&row_key(r))).collect();

    let mut out = String::new();
    if existing.is_empty() {
        out.push_str(&spec.manifest().csv_comment());
        out.push_str(CSV_HEADER);
        out.push('\n');
    }
    for r in &new_rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    let mut file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!existing.is_empty())
        .truncate(existing.is_empty())
        .open(&spec.output)?;
    file.write_all(out.as_bytes())?;
    Ok(new_rows.len())
}

/// Selection table CSV with a manifest line.
pub fn selection_csv(spec: &BenchSpec, rows: &[SelectionRow]) -> String {
    let mut out = spec.manifest().csv_comment();
    out.push_str(SELECTION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.dgp, r.n, r.t, r.replication, r.r_hat));
    }
    out
}
