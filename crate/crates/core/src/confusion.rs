//! Confusion matrices over class labels, the precision/recall metrics derived
//! from them, and the `CM(p, r)` family parameterized by precision and recall.
//!
//! Entries are indexed `entries[predicted][true]`, so every column is the
//! prediction distribution of one true class.

use std::fmt;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance applied to column sums and weight sums.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfusionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("column {column} ({label}) sums to {sum}, expected 1")]
    ColumnNotStochastic {
        column: usize,
        label: String,
        sum: f64,
    },
    #[error("entry ({row}, {column}) = {value} is outside [0, 1]")]
    NegativeEntry { row: usize, column: usize, value: f64 },
    #[error("class index {index} out of range for {n} classes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("unknown class label `{0}`")]
    UnknownLabel(String),
    #[error("duplicate class label `{0}`")]
    DuplicateLabel(String),
    #[error("all off-class partitions are empty for class {0}")]
    EmptyOffClassPartition(usize),
    #[error("class sizes must be positive, got {0}")]
    NonPositiveSize(f64),
    #[error("class weights sum to {0}, expected 1")]
    WeightsNotNormalized(f64),
    #[error("infeasible precision/recall pair p={p}, r={r}: false-positive mass {fp} exceeds 2")]
    InfeasiblePair { p: f64, r: f64, fp: f64 },
    #[error("precision/recall out of range: p={p}, r={r}")]
    OutOfRange { p: f64, r: f64 },
    #[error("malformed entry `{0}`")]
    MalformedEntry(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassLabel {
    pub name: String,
    pub index: usize,
}

/// One matrix cell as supplied by the user: an exact rational or a float.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Entry {
    Exact(Rational64),
    Float(f64),
}

impl Entry {
    pub fn value(&self) -> f64 {
        match *self {
            Entry::Exact(q) => *q.numer() as f64 / *q.denom() as f64,
            Entry::Float(x) => x,
        }
    }

    /// Parses `"10/15"`, `"0.25"` or `"1"`.
    pub fn parse(text: &str) -> Result<Self, ConfusionError> {
        let text = text.trim();
        let bad = || ConfusionError::MalformedEntry(text.to_string());
        if let Some((n, d)) = text.split_once('/') {
            let n: i64 = n.trim().parse().map_err(|_| bad())?;
            let d: i64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(bad());
            }
            return Ok(Entry::Exact(Rational64::new(n, d)));
        }
        if let Ok(n) = text.parse::<i64>() {
            return Ok(Entry::Exact(Rational64::from_integer(n)));
        }
        text.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(Entry::Float)
            .ok_or_else(bad)
    }
}

impl From<f64> for Entry {
    fn from(x: f64) -> Self {
        Entry::Float(x)
    }
}

impl From<Rational64> for Entry {
    fn from(q: Rational64) -> Self {
        Entry::Exact(q)
    }
}

/// A validated, column-stochastic confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    labels: Vec<ClassLabel>,
    entries: Vec<Vec<f64>>,
    exact: Option<Vec<Vec<Rational64>>>,
}

impl ConfusionMatrix {
    /// Validates raw `entries[predicted][true]` values against `labels`.
    pub fn validate<E: Into<Entry> + Copy>(
        raw: &[Vec<E>],
        labels: &[&str],
    ) -> Result<Self, ConfusionError> {
        let n = labels.len();
        if n < 2 {
            return Err(ConfusionError::DimensionMismatch(format!(
                "need at least 2 classes, got {n}"
            )));
        }
        if raw.len() != n {
            return Err(ConfusionError::DimensionMismatch(format!(
                "{} rows for {n} labels",
                raw.len()
            )));
        }
        for (i, row) in raw.iter().enumerate() {
            if row.len() != n {
                return Err(ConfusionError::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for l in labels {
            if !seen.insert(*l) {
                return Err(ConfusionError::DuplicateLabel(l.to_string()));
            }
        }

        let cells: Vec<Vec<Entry>> = raw
            .iter()
            .map(|row| row.iter().map(|&e| e.into()).collect())
            .collect();
        let entries: Vec<Vec<f64>> = cells
            .iter()
            .map(|row| row.iter().map(Entry::value).collect())
            .collect();
        for (i, row) in entries.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) || v.is_nan() {
                    return Err(ConfusionError::NegativeEntry {
                        row: i,
                        column: j,
                        value: v,
                    });
                }
            }
        }
        for j in 0..n {
            let sum: f64 = entries.iter().map(|row| row[j]).sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(ConfusionError::ColumnNotStochastic {
                    column: j,
                    label: labels[j].to_string(),
                    sum,
                });
            }
        }
        let exact = cells
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| match e {
                        Entry::Exact(q) => Some(*q),
                        Entry::Float(_) => None,
                    })
                    .collect::<Option<Vec<_>>>()
            })
            .collect::<Option<Vec<_>>>();

        Ok(Self {
            labels: labels
                .iter()
                .enumerate()
                .map(|(index, name)| ClassLabel {
                    name: name.to_string(),
                    index,
                })
                .collect(),
            entries,
            exact,
        })
    }

    pub fn identity(labels: &[&str]) -> Self {
        let n = labels.len();
        let raw: Vec<Vec<Rational64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| Rational64::from_integer((i == j) as i64))
                    .collect()
            })
            .collect();
        Self::validate(&raw, labels).expect("identity is column-stochastic")
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn label_names(&self) -> Vec<&str> {
        self.labels.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize, ConfusionError> {
        self.labels
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| ConfusionError::UnknownLabel(name.to_string()))
    }

    /// `P(predicted = c_predicted | true = c_truth)`.
    pub fn get(&self, predicted: usize, truth: usize) -> f64 {
        self.entries[predicted][truth]
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// Exact rational entries, present when every input cell was rational.
    pub fn exact(&self) -> Option<&[Vec<Rational64>]> {
        self.exact.as_deref()
    }

    pub fn column(&self, truth: usize) -> Vec<f64> {
        self.entries.iter().map(|row| row[truth]).collect()
    }

    fn check_index(&self, i: usize) -> Result<(), ConfusionError> {
        if i < self.n() {
            Ok(())
        } else {
            Err(ConfusionError::IndexOutOfRange {
                index: i,
                n: self.n(),
            })
        }
    }

    /// Recall of class `i`: true positives over the whole true-class column.
    pub fn recall(&self, i: usize) -> Result<f64, ConfusionError> {
        self.check_index(i)?;
        let tp = self.entries[i][i];
        let fn_rate: f64 = (0..self.n())
            .filter(|&j| j != i)
            .map(|j| self.entries[j][i])
            .sum();
        Ok(tp / (tp + fn_rate))
    }

    pub fn recall_exact(&self, i: usize) -> Result<Option<Rational64>, ConfusionError> {
        self.check_index(i)?;
        Ok(self.exact.as_ref().map(|e| {
            let col: Rational64 = (0..self.n()).map(|j| e[j][i]).sum();
            e[i][i] / col
        }))
    }

    /// Precision with the off-class false-positive rates averaged by class size.
    pub fn precision_paper(&self, i: usize, sizes: &ClassSizes) -> Result<f64, ConfusionError> {
        self.check_index(i)?;
        if sizes.len() != self.n() {
            return Err(ConfusionError::DimensionMismatch(format!(
                "{} class sizes for {} classes",
                sizes.len(),
                self.n()
            )));
        }
        let (weighted, total) = (0..self.n())
            .filter(|&j| j != i)
            .fold((0.0, 0.0), |(w, t), j| {
                (w + self.entries[i][j] * sizes.get(j), t + sizes.get(j))
            });
        if total <= 0.0 {
            return Err(ConfusionError::EmptyOffClassPartition(i));
        }
        let tp = self.entries[i][i];
        Ok(tp / (tp + weighted / total))
    }

    /// Standard `TP / (TP + FP)` precision under class priors `weights`
    /// (uniform when `None`).
    pub fn precision_standard(
        &self,
        i: usize,
        weights: Option<&[f64]>,
    ) -> Result<f64, ConfusionError> {
        self.check_index(i)?;
        let uniform = vec![1.0 / self.n() as f64; self.n()];
        let w = weights.unwrap_or(&uniform);
        if w.len() != self.n() {
            return Err(ConfusionError::DimensionMismatch(format!(
                "{} weights for {} classes",
                w.len(),
                self.n()
            )));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL || w.iter().any(|&x| x < 0.0) {
            return Err(ConfusionError::WeightsNotNormalized(total));
        }
        let predicted: f64 = (0..self.n()).map(|j| w[j] * self.entries[i][j]).sum();
        Ok(w[i] * self.entries[i][i] / predicted)
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>10}", "pred\\true")?;
        for l in &self.labels {
            write!(f, " {:>10}", l.name)?;
        }
        writeln!(f)?;
        for (i, l) in self.labels.iter().enumerate() {
            write!(f, "{:>10}", l.name)?;
            for j in 0..self.n() {
                match &self.exact {
                    Some(e) => write!(f, " {:>10}", e[i][j].to_string())?,
                    None => write!(f, " {:>10.6}", self.entries[i][j])?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Per-class datapoint counts `|D_j|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSizes(Vec<f64>);

impl ClassSizes {
    pub fn new(sizes: Vec<f64>) -> Result<Self, ConfusionError> {
        if let Some(&bad) = sizes.iter().find(|&&s| !(s > 0.0)) {
            return Err(ConfusionError::NonPositiveSize(bad));
        }
        Ok(Self(sizes))
    }

    pub fn equal(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> f64 {
        self.0[j]
    }
}

/// Class order used by the car/sidewalk scenario.
pub const SCENARIO_LABELS: [&str; 3] = ["ped", "obj", "empty"];

/// The fixed matrix with rational entries over fifteenths.
pub fn cm1() -> ConfusionMatrix {
    let q = |n| Rational64::new(n, 15);
    let raw = vec![
        vec![q(10), q(2), q(3)],
        vec![q(2), q(11), q(2)],
        vec![q(3), q(2), q(10)],
    ];
    ConfusionMatrix::validate(&raw, &SCENARIO_LABELS).expect("cm1 is column-stochastic")
}

/// Builds the 3-class matrix whose `ped` class has recall `r` and
/// (uniform-prior) precision `p`.
///
/// With `TP = r`, `FP = r(1/p - 1)`, `TN = 2 - FP` and `FN = 1 - r`:
///
/// ```text
///          ped     obj       empty
/// ped      TP      FP/2      FP/2
/// obj      FN/2    4TN/10    TN/10
/// empty    FN/2    TN/10     4TN/10
/// ```
pub fn from_precision_recall(p: f64, r: f64) -> Result<ConfusionMatrix, ConfusionError> {
    if !(p > 0.0 && p <= 1.0 && r > 0.0 && r <= 1.0) {
        return Err(ConfusionError::OutOfRange { p, r });
    }
    let tp = r;
    let fp = tp * (1.0 / p - 1.0);
    if fp > 2.0 {
        return Err(ConfusionError::InfeasiblePair { p, r, fp });
    }
    let tn = 2.0 - fp;
    let fn_ = 1.0 - tp;
    let raw = vec![
        vec![tp, fp / 2.0, fp / 2.0],
        vec![fn_ / 2.0, 4.0 * tn / 10.0, tn / 10.0],
        vec![fn_ / 2.0, tn / 10.0, 4.0 * tn / 10.0],
    ];
    ConfusionMatrix::validate(&raw, &SCENARIO_LABELS)
}

/// JSON form: `{"labels": [...], "columns_are_true_class": true, "entries": [[...]]}`
/// where each entry is a number or a string such as `"10/15"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionFile {
    pub labels: Vec<String>,
    #[serde(default = "default_true")]
    pub columns_are_true_class: bool,
    pub entries: Vec<Vec<serde_json::Value>>,
}

fn default_true() -> bool {
    true
}

impl ConfusionFile {
    pub fn into_matrix(self) -> Result<ConfusionMatrix, ConfusionError> {
        let mut cells = self
            .entries
            .iter()
            .map(|row| {
                row.iter()
                    .map(|v| match v {
                        serde_json::Value::String(s) => Entry::parse(s),
                        serde_json::Value::Number(n) => match n.as_i64() {
                            Some(i) => Ok(Entry::Exact(Rational64::from_integer(i))),
                            None => Ok(Entry::Float(n.as_f64().unwrap_or(f64::NAN))),
                        },
                        other => Err(ConfusionError::MalformedEntry(other.to_string())),
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        if !self.columns_are_true_class {
            let n = cells.len();
            if cells.iter().any(|row| row.len() != n) {
                return Err(ConfusionError::DimensionMismatch(
                    "non-square matrix cannot be transposed".into(),
                ));
            }
            cells = (0..n).map(|i| (0..n).map(|j| cells[j][i]).collect()).collect();
        }
        let labels: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        ConfusionMatrix::validate(&cells, &labels)
    }

    pub fn from_matrix(cm: &ConfusionMatrix) -> Self {
        let entries = match cm.exact() {
            Some(e) => e
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|q| serde_json::Value::String(format!("{}/{}", q.numer(), q.denom())))
                        .collect()
                })
                .collect(),
            None => cm
                .entries()
                .iter()
                .map(|row| row.iter().map(|&x| serde_json::json!(x)).collect())
                .collect(),
        };
        Self {
            labels: cm.label_names().iter().map(|s| s.to_string()).collect(),
            columns_are_true_class: true,
            entries,
        }
    }
}
