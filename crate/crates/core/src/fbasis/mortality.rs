//! Mortality-rate tables to log-curve coefficient panels.
//!
//! Input rows carry `prefecture_id, year, sex, age, rate` with ages `0..=110`
//! (the last may be written `110+`) and an empty rate for a missing value.
//! Each (prefecture, year, sex) curve is grouped to ages `0..=95` where 95
//! stands for the mean of all available rates at ages 95 and above, missing
//! values are filled from the previous age, logs are taken and the result is
//! projected onto a B-spline basis on `[0, 95]`.

use std::collections::BTreeMap;
use std::io::Read;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Deserialize;

use super::{BSplineBasis, Projector};
use crate::error::{Error, Result};
use crate::panel::Panel;

pub const MAX_AGE: u32 = 110;
pub const GROUPED_AGE: usize = 95;
/// Ages used when scoring forecasts.
pub const EVAL_AGES: usize = 90;

#[derive(Debug, Clone, PartialEq)]
pub struct MortalityRecord {
    pub prefecture: String,
    pub year: i32,
    pub sex: String,
    pub age: u32,
    pub rate: Option<f64>,
}

#[derive(Deserialize)]
struct RawRow {
    prefecture_id: String,
    year: i32,
    sex: String,
    age: String,
    rate: Option<f64>,
}

/// Parses the CSV layout described in the module docs.
pub fn read_mortality_csv<R: Read>(reader: R) -> Result<Vec<MortalityRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<RawRow>() {
        let row = row?;
        let age_str = row.age.trim_end_matches('+');
        let age: u32 = age_str
            .parse()
            .map_err(|_| Error::Mortality(format!("unparseable age {:?}", row.age)))?;
        if age > MAX_AGE {
            return Err(Error::Mortality(format!("age {age} exceeds {MAX_AGE}")));
        }
        out.push(MortalityRecord { prefecture: row.prefecture_id, year: row.year, sex: row.sex, age, rate: row.rate });
    }
    Ok(out)
}

/// Groups, fills and log-transforms one curve given rates indexed by age `0..=110`.
pub fn preprocess_curve(rates: &[Option<f64>]) -> Result<Vec<f64>> {
    if let Some(bad) = rates.iter().flatten().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Mortality(format!("rate {bad} is not a positive finite number")));
    }
    let mut grouped: Vec<Option<f64>> = (0..GROUPED_AGE).map(|a| rates.get(a).copied().flatten()).collect();
    let tail: Vec<f64> = rates.iter().skip(GROUPED_AGE).flatten().copied().collect();
    grouped.push(if tail.is_empty() { None } else { Some(tail.iter().sum::<f64>() / tail.len() as f64) });

    let mut last = None;
    let mut out = Vec::with_capacity(grouped.len());
    for (age, v) in grouped.into_iter().enumerate() {
        let v = v.or(last).ok_or_else(|| Error::Mortality(format!("missing rate at age {age} cannot be filled")))?;
        last = Some(v);
        out.push(v.ln());
    }
    Ok(out)
}

/// One sex: `N` prefectures by `T` years.
#[derive(Debug, Clone)]
pub struct MortalityPanel {
    pub sex: String,
    pub prefectures: Vec<String>,
    pub years: Vec<i32>,
    pub panel: Panel,
    /// `log_curves[i][t]` holds the 96 preprocessed log rates.
    pub log_curves: Vec<Vec<Vec<f64>>>,
}

impl MortalityPanel {
    /// Preprocessed log rates at ages `0..EVAL_AGES` for series `i`, year index `t`.
    pub fn eval_values(&self, i: usize, t: usize) -> Vec<f64> {
        self.log_curves[i][t][..EVAL_AGES].to_vec()
    }
}

fn prefecture_key(p: &str) -> (Option<i64>, String) {
    (p.parse().ok(), p.to_string())
}

/// Builds one coefficient panel per sex. Every (prefecture, year) pair must be
/// present for every sex.
pub fn ingest_mortality(records: &[MortalityRecord], basis: &BSplineBasis) -> Result<Vec<MortalityPanel>> {
    if records.is_empty() {
        return Err(Error::Mortality("no records".into()));
    }
    if basis.domain() != (0.0, GROUPED_AGE as f64) {
        return Err(Error::Mortality(format!("basis domain must be [0, {GROUPED_AGE}]")));
    }
    type Curves = BTreeMap<((Option<i64>, String), i32), Vec<Option<f64>>>;
    let mut by_sex: BTreeMap<String, Curves> = BTreeMap::new();
    for r in records {
        let curve = by_sex
            .entry(r.sex.clone())
            .or_default()
            .entry((prefecture_key(&r.prefecture), r.year))
            .or_insert_with(|| vec![None; MAX_AGE as usize + 1]);
        let slot = &mut curve[r.age as usize];
        if slot.is_some() {
            return Err(Error::Mortality(format!(
                "duplicate rate for prefecture {} year {} sex {} age {}",
                r.prefecture, r.year, r.sex, r.age
            )));
        }
        *slot = r.rate;
    }

    let grid: Vec<f64> = (0..=GROUPED_AGE).map(|a| a as f64).collect();
    let projector = Projector::new(basis, &grid)?;
    let space = basis.space()?;

    by_sex
        .into_iter()
        .map(|(sex, curves)| {
            let mut prefectures: Vec<(Option<i64>, String)> = curves.keys().map(|(p, _)| p.clone()).collect();
            prefectures.dedup();
            let mut years: Vec<i32> = curves.keys().map(|(_, y)| *y).collect();
            years.sort_unstable();
            years.dedup();
            let log_curves: Vec<Vec<Vec<f64>>> = prefectures
                .par_iter()
                .map(|p| {
                    years
                        .iter()
                        .map(|&y| {
                            let c = curves.get(&(p.clone(), y)).ok_or_else(|| {
                                Error::Mortality(format!("sex {sex}: prefecture {} lacks year {y}", p.1))
                            })?;
                            preprocess_curve(c)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            let series = log_curves
                .iter()
                .map(|rows| {
                    let mut m = DMatrix::zeros(basis.dim(), years.len());
                    for (t, curve) in rows.iter().enumerate() {
                        m.set_column(t, &projector.project(curve)?);
                    }
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?;
            let panel = Panel::new(vec![space.clone(); prefectures.len()], series)?;
            Ok(MortalityPanel {
                sex,
                prefectures: prefectures.into_iter().map(|p| p.1).collect(),
                years,
                panel,
                log_curves,
            })
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod testdata {
    use super::*;

    /// Gompertz-like synthetic table with a small prefecture/year effect.
    pub fn synthetic_records(n_pref: usize, n_years: usize) -> Vec<MortalityRecord> {
        let mut out = Vec::new();
        for sex in ["F", "M"] {
            let shift = if sex == "M" { 0.3 } else { 0.0 };
            for p in 0..n_pref {
                for y in 0..n_years {
                    for age in 0..=MAX_AGE {
                        let level = -9.0 + shift + 0.09 * age as f64 - 0.01 * y as f64
                            + 0.05 * ((p as f64) + 0.3 * y as f64).sin();
                        out.push(MortalityRecord {
                            prefecture: (p + 1).to_string(),
                            year: 1975 + y as i32,
                            sex: sex.to_string(),
                            age,
                            rate: Some(level.exp().min(0.9)),
                        });
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::testdata::synthetic_records;
    use super::*;
    use crate::fbasis::build_bspline;

    fn basis() -> BSplineBasis {
        build_bspline((0.0, 95.0), 9, 4).unwrap()
    }

    #[test]
    fn fully_observed_shape() {
        let recs = synthetic_records(5, 12);
        let panels = ingest_mortality(&recs, &basis()).unwrap();
        assert_eq!(panels.len(), 2);
        for mp in &panels {
            assert_eq!((mp.panel.n(), mp.panel.t()), (5, 12));
            assert_eq!(mp.years.first(), Some(&1975));
            assert_eq!(mp.log_curves[0][0].len(), 96);
            assert_eq!(mp.eval_values(0, 0).len(), 90);
        }
        assert_eq!(panels[0].sex, "F");
    }

    #[test]
    fn missing_value_filled_from_previous_age() {
        let mut rates: Vec<Option<f64>> = (0..=110).map(|a| Some(0.001 * (a + 1) as f64)).collect();
        rates[40] = None;
        let c = preprocess_curve(&rates).unwrap();
        assert_eq!(c[40], (0.001f64 * 40.0).ln());
        rates[41] = None;
        assert_eq!(preprocess_curve(&rates).unwrap()[41], (0.04f64).ln());
    }

    #[test]
    fn grouped_tail_is_mean() {
        let mut rates: Vec<Option<f64>> = vec![Some(0.01); 111];
        for r in rates.iter_mut().skip(95) {
            *r = Some(0.3);
        }
        assert!((preprocess_curve(&rates).unwrap()[95] - 0.3f64.ln()).abs() < 1e-15);
        rates[100] = None;
        rates[96] = Some(0.6);
        let tail = (0.3 * 14.0 + 0.6) / 15.0;
        assert!((preprocess_curve(&rates).unwrap()[95] - f64::ln(tail)).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let mut rates: Vec<Option<f64>> = vec![Some(0.01); 111];
        rates[0] = None;
        assert!(matches!(preprocess_curve(&rates), Err(Error::Mortality(_))));
        rates[0] = Some(0.0);
        assert!(matches!(preprocess_curve(&rates), Err(Error::Mortality(_))));

        let mut recs = synthetic_records(2, 10);
        recs.retain(|r| !(r.prefecture == "2" && r.year == 1980));
        assert!(ingest_mortality(&recs, &basis()).is_err());
        assert!(ingest_mortality(&[], &basis()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let text = "prefecture_id,year,sex,age,rate\n1,2000,F,0,0.002\n1,2000,F,1,\n1,2000,F,110+,0.5\n";
        let recs = read_mortality_csv(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].rate, None);
        assert_eq!(recs[2].age, 110);
        assert!(read_mortality_csv("prefecture_id,year,sex,age,rate\n1,2000,F,abc,0.1\n".as_bytes()).is_err());
    }

    #[test]
    fn projection_tracks_log_curve() {
        let recs = synthetic_records(3, 10);
        let mp = &ingest_mortality(&recs, &basis()).unwrap()[0];
        let b = basis();
        let coeffs = mp.panel.coeff(1, 4);
        let worst = (0..90)
            .map(|a| (b.evaluate(&coeffs, a as f64) - mp.log_curves[1][4][a]).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "{worst}");
    }
}
