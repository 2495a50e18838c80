//! File formats: panels, fits, selection traces, forecasts and run manifests.
//!
//! All JSON outputs carry a `manifest` object (command, parameters, seeds and
//! crate version). CSV outputs start with a `# manifest: {...}` comment line.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimate::FactorFit;
use crate::panel::{Panel, SpaceKind, SpaceSpec};
use crate::select::SelectionTrace;
use crate::simulate::GroundTruth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Flags and seeds that determine the output.
    pub params: BTreeMap<String, Value>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.params.insert(key.to_string(), serde_json::to_value(value).expect("serializable parameter"));
        self
    }

    /// `# manifest: {...}` line for CSV files.
    pub fn csv_comment(&self) -> String {
        format!("# manifest: {}\n", serde_json::to_string(self).expect("manifest serializes"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceFile {
    pub kind: SpaceKind,
    pub dim: usize,
    /// Omitted means the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gram: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelFile {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub spaces: Vec<SpaceFile>,
    /// `coeffs[i][t]` is the coefficient vector of series `i` at time `t`.
    pub coeffs: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<Manifest>,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::ShapeMismatch(format!("expected rows of length {ncols}")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn is_identity(m: &DMatrix<f64>) -> bool {
    m == &DMatrix::identity(m.nrows(), m.ncols())
}

impl PanelFile {
    pub fn from_panel(panel: &Panel, manifest: Option<Manifest>) -> Self {
        let spaces = panel
            .spaces()
            .iter()
            .map(|s| SpaceFile {
                kind: s.kind(),
                dim: s.dim(),
                gram: (!is_identity(s.gram())).then(|| matrix_rows(s.gram())),
            })
            .collect();
        let coeffs = panel
            .all_series()
            .iter()
            .map(|x| x.column_iter().map(|c| c.iter().copied().collect()).collect())
            .collect();
        PanelFile { n: panel.n(), t: panel.t(), spaces, coeffs, manifest }
    }

    pub fn to_panel(&self) -> Result<Panel> {
        if self.spaces.len() != self.n || self.coeffs.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "N={} but {} spaces and {} coefficient series",
                self.n,
                self.spaces.len(),
                self.coeffs.len()
            )));
        }
        let spaces = self
            .spaces
            .iter()
            .map(|s| {
                let gram = match &s.gram {
                    Some(rows) if rows.len() == s.dim => matrix_from_rows(rows, s.dim)?,
                    Some(rows) => {
                        return Err(Error::ShapeMismatch(format!("gram has {} rows, dim is {}", rows.len(), s.dim)))
                    }
                    None => DMatrix::identity(s.dim, s.dim),
                };
                SpaceSpec::with_kind(s.kind, gram)
            })
            .collect::<Result<Vec<_>>>()?;
        let series = self
            .coeffs
            .iter()
            .zip(&spaces)
            .map(|(cols, sp)| {
                if cols.len() != self.t {
                    return Err(Error::ShapeMismatch(format!("series has {} time points, T={}", cols.len(), self.t)));
                }
                Ok(matrix_from_rows(cols, sp.dim())?.transpose())
            })
            .collect::<Result<Vec<_>>>()?;
        Panel::new(spaces, series)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_panel(path: &Path, panel: &Panel, manifest: Option<Manifest>) -> Result<()> {
    write_json(path, &PanelFile::from_panel(panel, manifest))
}

/// Reads a panel from JSON, or from CSV (all-scalar, `N` rows × `T` columns)
/// when the file name ends in `.csv`.
pub fn read_panel(path: &Path) -> Result<Panel> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_scalar_csv(fs::File::open(path)?)
    } else {
        read_json::<PanelFile>(path)?.to_panel()
    }
}

/// All-scalar panel from headerless CSV: one row per series, one column per time point.
pub fn read_scalar_csv<R: Read>(reader: R) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::InvalidInput(format!("not a number: {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let t = rows.first().map_or(0, |r| r.len());
    Panel::scalar(&matrix_from_rows(&rows, t)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitFile {
    pub k: usize,
    pub lambda_hat: Vec<f64>,
    pub lambda_tilde: Vec<f64>,
    /// `V(k)`.
    pub goodness_of_fit: f64,
    /// `k` rows of length `T`.
    pub factors: Vec<Vec<f64>>,
    /// Per series, `dim × k` coefficient block of `ê` (row-major).
    pub e_hat: BTreeMap<String, Vec<Vec<f64>>>,
    pub manifest: Manifest,
}

impl FitFile {
    pub fn from_fit(fit: &FactorFit, goodness_of_fit: f64, manifest: Manifest) -> Self {
        FitFile {
            k: fit.k,
            lambda_hat: fit.lambda_hat.clone(),
            lambda_tilde: fit.lambda_tilde(),
            goodness_of_fit,
            factors: matrix_rows(&fit.factors),
            e_hat: fit.e_hat.blocks().iter().enumerate().map(|(i, b)| (i.to_string(), matrix_rows(b))).collect(),
            manifest,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub a: Vec<f64>,
    /// `r` rows of length `T`.
    pub u: Vec<Vec<f64>>,
    /// `N` rows of length `r`.
    pub b_tilde: Vec<Vec<f64>>,
    pub manifest: Manifest,
}

impl TruthFile {
    pub fn from_truth(truth: &GroundTruth, manifest: Manifest) -> Self {
        TruthFile { a: truth.a.clone(), u: matrix_rows(&truth.u), b_tilde: matrix_rows(&truth.b_tilde), manifest }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceFile {
    pub r_hat: usize,
    pub trace: SelectionTrace,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesForecast {
    pub series: usize,
    pub coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastFile {
    pub method: String,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_hat: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub forecasts: Vec<SeriesForecast>,
    pub manifest: Manifest,
}

impl ForecastFile {
    pub fn coefficients(&self) -> Vec<DVector<f64>> {
        self.forecasts.iter().map(|f| DVector::from_vec(f.coefficients.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::testutil::random_panel;

    #[test]
    fn panel_round_trip() {
        let p = random_panel(3, 7, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        write_panel(&path, &p, Some(Manifest::new("test").with("seed", 3))).unwrap();
        let q = read_panel(&path).unwrap();
        assert_eq!(p.all_series(), q.all_series());
        for (a, b) in p.spaces().iter().zip(q.spaces()) {
            assert_eq!(a.gram(), b.gram());
            assert_eq!(a.kind(), b.kind());
        }
        let file: PanelFile = read_json(&path).unwrap();
        assert_eq!(file.manifest.unwrap().params["seed"], 3);
    }

    #[test]
    fn identity_gram_is_omitted() {
        let p = Panel::new(vec![SpaceSpec::orthonormal(2).unwrap()], vec![DMatrix::zeros(2, 3)]).unwrap();
        let v = serde_json::to_value(PanelFile::from_panel(&p, None)).unwrap();
        assert!(v["spaces"][0].get("gram").is_none());
        assert_eq!(v["N"], 1);
        assert_eq!(v["coeffs"][0].as_array().unwrap().len(), 3);
    }

    #[test]
    fn scalar_csv() {
        let p = read_scalar_csv("# comment\n1,2,3\n4,5,6\n".as_bytes()).unwrap();
        assert_eq!((p.n(), p.t()), (2, 3));
        assert_eq!(p.coeff(1, 2), vec![6.0]);
        assert!(read_scalar_csv("1,2\n3\n".as_bytes()).is_err());
        assert!(read_scalar_csv("1,x\n".as_bytes()).is_err());
    }

    #[test]
    fn malformed_panel_file() {
        let bad = r#"{"N":2,"T":2,"spaces":[{"kind":"scalar","dim":1}],"coeffs":[[[1],[2]]]}"#;
        let f: PanelFile = serde_json::from_str(bad).unwrap();
        assert!(matches!(f.to_panel(), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn manifest_comment() {
        let m = Manifest::new("bench").with("seeds", [1, 2]);
        let line = m.csv_comment();
        assert!(line.starts_with("# manifest: {"));
        assert!(line.contains("\"seeds\":[1,2]"));
    }
}
