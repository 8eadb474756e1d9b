//! Per-trial records, their CSV form, and summaries.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a summary
//! recomputed from the CSV sees exactly the values the run saw. Infinite
//! intrinsic errors are written as `inf`, failed estimates as `NaN`.

use std::io::{Read, Write};

use serde::ser::{Serialize, SerializeMap, Serializer};

use crate::error::BenchError;

pub const CSV_HEADER: [&str; 8] =
    ["trial", "budget", "estimator", "se_frobenius", "se_intrinsic", "min_eig", "mahalanobis", "wall_ms"];

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub budget: f64,
    pub estimator: String,
    pub se_frobenius: f64,
    /// `+∞` when the estimate is not positive definite.
    pub se_intrinsic: f64,
    pub min_eig: f64,
    /// MRMF only.
    pub mahalanobis: Option<f64>,
    pub wall_ms: f64,
}

impl TrialRecord {
    /// Record of an estimate that could not be computed.
    pub fn failed(trial: usize, budget: f64, estimator: &str) -> Self {
        TrialRecord {
            trial,
            budget,
            estimator: estimator.to_string(),
            se_frobenius: f64::NAN,
            se_intrinsic: f64::NAN,
            min_eig: f64::NAN,
            mahalanobis: None,
            wall_ms: 0.0,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.se_frobenius.is_nan()
    }
}

fn fmt(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

fn parse(field: &str, line: usize, name: &str) -> Result<f64, BenchError> {
    field
        .parse::<f64>()
        .map_err(|_| BenchError::Runtime(format!("row {line}: column {name} has non-numeric value {field:?}")))
}

pub fn write_csv<W: Write>(records: &[TrialRecord], w: W) -> Result<(), BenchError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in records {
        out.write_record([
            r.trial.to_string(),
            fmt(r.budget),
            r.estimator.clone(),
            fmt(r.se_frobenius),
            fmt(r.se_intrinsic),
            fmt(r.min_eig),
            r.mahalanobis.map(fmt).unwrap_or_default(),
            fmt(r.wall_ms),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<TrialRecord>, BenchError> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(BenchError::Runtime(format!("unexpected CSV header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let trial =
            row[0].parse().map_err(|_| BenchError::Runtime(format!("row {line}: bad trial index {:?}", &row[0])))?;
        out.push(TrialRecord {
            trial,
            budget: parse(&row[1], line, "budget")?,
            estimator: row[2].to_string(),
            se_frobenius: parse(&row[3], line, "se_frobenius")?,
            se_intrinsic: parse(&row[4], line, "se_intrinsic")?,
            min_eig: parse(&row[5], line, "min_eig")?,
            mahalanobis: if row[6].is_empty() { None } else { Some(parse(&row[6], line, "mahalanobis")?) },
            wall_ms: parse(&row[7], line, "wall_ms")?,
        });
    }
    Ok(out)
}

/// Mean relative error of one learned metric; `+∞` when no metric exists.
#[derive(Clone, Debug, PartialEq)]
pub struct MreRecord {
    pub trial: usize,
    pub budget: f64,
    pub estimator: String,
    pub mre: f64,
}

pub fn write_mre_csv<W: Write>(records: &[MreRecord], w: W) -> Result<(), BenchError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["trial", "budget", "estimator", "mre"])?;
    for r in records {
        out.write_record([r.trial.to_string(), fmt(r.budget), r.estimator.clone(), fmt(r.mre)])?;
    }
    out.flush()?;
    Ok(())
}

/// A float that serializes to the string `"inf"`/`"-inf"`/`"nan"` when not
/// finite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            x if x.is_finite() => s.serialize_f64(x),
            x if x.is_nan() => s.serialize_str("nan"),
            x if x > 0.0 => s.serialize_str("inf"),
            _ => s.serialize_str("-inf"),
        }
    }
}

/// Median with `+∞` ordered last; the mean of the two central values for an
/// even count.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub trials: usize,
    pub failed: usize,
    pub median_se_frobenius: f64,
    pub mean_se_frobenius: f64,
    pub median_se_intrinsic: f64,
    pub mean_se_intrinsic: f64,
    /// Fraction of successful trials with `min_eig ≤ 0`.
    pub indefinite_fraction: f64,
    pub mean_mahalanobis: Option<f64>,
}

impl Serialize for EstimatorSummary {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(9))?;
        m.serialize_entry("estimator", &self.estimator)?;
        m.serialize_entry("trials", &self.trials)?;
        m.serialize_entry("failed", &self.failed)?;
        m.serialize_entry("median_se_frobenius", &Num(self.median_se_frobenius))?;
        m.serialize_entry("mean_se_frobenius", &Num(self.mean_se_frobenius))?;
        m.serialize_entry("median_se_intrinsic", &Num(self.median_se_intrinsic))?;
        m.serialize_entry("mean_se_intrinsic", &Num(self.mean_se_intrinsic))?;
        m.serialize_entry("indefinite_fraction", &Num(self.indefinite_fraction))?;
        m.serialize_entry("mean_mahalanobis", &self.mean_mahalanobis.map(Num))?;
        m.end()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetSummary {
    pub budget: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl Serialize for BudgetSummary {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(2))?;
        m.serialize_entry("budget", &Num(self.budget))?;
        m.serialize_entry("estimators", &self.estimators)?;
        m.end()
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct Summary {
    pub budgets: Vec<BudgetSummary>,
}

impl Summary {
    pub fn get(&self, budget: f64, estimator: &str) -> Option<&EstimatorSummary> {
        self.budgets.iter().find(|b| b.budget == budget)?.estimators.iter().find(|e| e.estimator == estimator)
    }
}

fn summarize_group(estimator: &str, rows: &[&TrialRecord]) -> EstimatorSummary {
    let ok: Vec<&TrialRecord> = rows.iter().copied().filter(|r| !r.is_failed()).collect();
    let frob: Vec<f64> = ok.iter().map(|r| r.se_frobenius).collect();
    let intr: Vec<f64> = ok.iter().map(|r| r.se_intrinsic).collect();
    let indefinite = ok.iter().filter(|r| !(r.min_eig > 0.0)).count();
    let maha: Vec<f64> = ok.iter().filter_map(|r| r.mahalanobis).collect();
    EstimatorSummary {
        estimator: estimator.to_string(),
        trials: rows.len(),
        failed: rows.len() - ok.len(),
        median_se_frobenius: median(&frob),
        mean_se_frobenius: mean(&frob),
        median_se_intrinsic: median(&intr),
        mean_se_intrinsic: mean(&intr),
        indefinite_fraction: if ok.is_empty() { f64::NAN } else { indefinite as f64 / ok.len() as f64 },
        mean_mahalanobis: (!maha.is_empty()).then(|| mean(&maha)),
    }
}

/// Group by budget (ascending) and estimator (first appearance).
pub fn summarize(records: &[TrialRecord]) -> Result<Summary, BenchError> {
    if records.is_empty() {
        return Err(BenchError::Runtime("no trial records to summarize".into()));
    }
    let mut budgets: Vec<f64> = Vec::new();
    for r in records {
        if !budgets.contains(&r.budget) {
            budgets.push(r.budget);
        }
    }
    budgets.sort_by(f64::total_cmp);
    let summaries = budgets
        .into_iter()
        .map(|b| {
            let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.budget == b).collect();
            let mut names: Vec<&str> = Vec::new();
            for r in &rows {
                if !names.contains(&r.estimator.as_str()) {
                    names.push(&r.estimator);
                }
            }
            let estimators = names
                .into_iter()
                .map(|name| {
                    let group: Vec<&TrialRecord> = rows.iter().copied().filter(|r| r.estimator == name).collect();
                    summarize_group(name, &group)
                })
                .collect();
            BudgetSummary { budget: b, estimators }
        })
        .collect();
    Ok(Summary { budgets: summaries })
}

/// Values of a numeric CSV column. Missing Mahalanobis values are skipped.
pub fn column(records: &[TrialRecord], name: &str) -> Result<Vec<f64>, BenchError> {
    let pick: fn(&TrialRecord) -> Option<f64> = match name {
        "budget" => |r| Some(r.budget),
        "se_frobenius" => |r| Some(r.se_frobenius),
        "se_intrinsic" => |r| Some(r.se_intrinsic),
        "min_eig" => |r| Some(r.min_eig),
        "mahalanobis" => |r| r.mahalanobis,
        "wall_ms" => |r| Some(r.wall_ms),
        other => return Err(BenchError::Config(format!("no numeric column named {other:?}"))),
    };
    Ok(records.iter().filter_map(pick).collect())
}

/// Median and mean MRE of one estimator at one budget, over the trials in
/// which a metric exists.
#[derive(Clone, Debug, PartialEq)]
pub struct MreSummary {
    pub budget: f64,
    pub estimator: String,
    pub trials: usize,
    pub undefined: usize,
    pub median: f64,
    pub mean: f64,
}

impl Serialize for MreSummary {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(6))?;
        m.serialize_entry("budget", &Num(self.budget))?;
        m.serialize_entry("estimator", &self.estimator)?;
        m.serialize_entry("trials", &self.trials)?;
        m.serialize_entry("undefined", &self.undefined)?;
        m.serialize_entry("median_mre", &Num(self.median))?;
        m.serialize_entry("mean_mre", &Num(self.mean))?;
        m.end()
    }
}

pub fn summarize_mre(records: &[MreRecord]) -> Vec<MreSummary> {
    let mut keys: Vec<(f64, &str)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.budget, r.estimator.as_str())) {
            keys.push((r.budget, &r.estimator));
        }
    }
    keys.sort_by(|a, b| a.0.total_cmp(&b.0));
    keys.into_iter()
        .map(|(budget, name)| {
            let all: Vec<f64> =
                records.iter().filter(|r| r.budget == budget && r.estimator == name).map(|r| r.mre).collect();
            let ok: Vec<f64> = all.iter().copied().filter(|x| x.is_finite()).collect();
            MreSummary {
                budget,
                estimator: name.to_string(),
                trials: all.len(),
                undefined: all.len() - ok.len(),
                median: median(&ok),
                mean: mean(&ok),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    /// Values that were not finite and so fell in no bin.
    pub non_finite: usize,
}

/// Equal-width counts of the finite values over their range. With
/// `log_scale` the bins are equal in `log10` and nonpositive values count as
/// non-finite.
pub fn histogram(values: &[f64], bins: usize, log_scale: bool) -> Histogram {
    let map = |x: f64| {
        if log_scale {
            if x > 0.0 {
                x.log10()
            } else {
                f64::NAN
            }
        } else {
            x
        }
    };
    let finite: Vec<f64> = values.iter().map(|&x| map(x)).filter(|x| x.is_finite()).collect();
    let non_finite = values.len() - finite.len();
    let bins = bins.max(1);
    if finite.is_empty() {
        return Histogram { lo: f64::NAN, hi: f64::NAN, counts: vec![0; bins], non_finite };
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for x in finite {
        let k = if width > 0.0 { (((x - lo) / width) as usize).min(bins - 1) } else { 0 };
        counts[k] += 1;
    }
    Histogram { lo, hi, counts, non_finite }
}
