//! Single-query ranking datasets: libsvm ingestion, splitting and robust
//! feature scaling.
//!
//! Each libsvm line is one item of the (single) query:
//!
//! ```text
//! <grade> qid:<q> <idx>:<val> ... # group=<g>
//! ```
//!
//! Feature indices are 1-based. Missing indices are read as `0.0`. The group
//! label rides in the trailing comment since libsvm has no group channel.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{format_sig, Group};

pub const DEFAULT_GRADE_MAX: u8 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: grade {grade} outside [0, {grade_max}]")]
    GradeOutOfRange { line: usize, grade: i64, grade_max: u8 },
    #[error("dataset is empty")]
    Empty,
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions((f64, f64, f64)),
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Validation,
    Test,
    #[default]
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: usize,
    pub features: Vec<f64>,
    pub grade: u8,
    pub group: Group,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub items: Vec<Item>,
    pub dim: usize,
    pub grade_max: u8,
    pub split: SplitLabel,
}

impl Dataset {
    /// Builds a dataset after checking ids, dimensions, grades and groups.
    pub fn new(items: Vec<Item>, dim: usize, grade_max: u8) -> Result<Self, DataError> {
        let ds = Dataset {
            items,
            dim,
            grade_max,
            split: SplitLabel::All,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut ids: Vec<usize> = self.items.iter().map(|it| it.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(DataError::Invalid("duplicate item ids".into()));
        }
        for it in &self.items {
            if it.features.len() != self.dim {
                return Err(DataError::DimensionMismatch {
                    expected: self.dim,
                    found: it.features.len(),
                });
            }
            if it.grade > self.grade_max {
                return Err(DataError::Invalid(format!(
                    "item {} has grade {} > {}",
                    it.id, it.grade, self.grade_max
                )));
            }
            if it.group > 1 {
                return Err(DataError::Invalid(format!(
                    "item {} has non-binary group {}",
                    it.id, it.group
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn grades(&self) -> Vec<u8> {
        self.items.iter().map(|it| it.grade).collect()
    }

    pub fn groups(&self) -> Vec<Group> {
        self.items.iter().map(|it| it.group).collect()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.id).collect()
    }

    /// Row-major feature matrix, one row per item.
    pub fn feature_rows(&self) -> Vec<f64> {
        self.items
            .iter()
            .flat_map(|it| it.features.iter().copied())
            .collect()
    }

    fn with_items(&self, items: Vec<Item>, split: SplitLabel) -> Dataset {
        Dataset {
            items,
            dim: self.dim,
            grade_max: self.grade_max,
            split,
        }
    }
}

/// Parses a single-query libsvm document.
///
/// Blank lines and lines starting with `#` are skipped. Item ids are assigned
/// in line order starting at 0. The dimension is the largest index seen.
pub fn parse_libsvm(text: &str, grade_max: u8) -> Result<Dataset, DataError> {
    struct Row {
        grade: u8,
        group: Group,
        feats: Vec<(usize, f64)>,
    }

    let mut rows = Vec::new();
    let mut dim = 0usize;
    let mut qid: Option<String> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |msg: String| DataError::Parse { line, msg };

        let (body, comment) = match trimmed.split_once('#') {
            Some((b, c)) => (b, Some(c)),
            None => (trimmed, None),
        };
        let mut tokens = body.split_whitespace();
        let grade_tok = tokens.next().ok_or_else(|| err("missing grade".into()))?;
        let grade: i64 = grade_tok
            .parse()
            .map_err(|_| err(format!("non-numeric grade {grade_tok:?}")))?;
        if grade < 0 || grade > grade_max as i64 {
            return Err(DataError::GradeOutOfRange {
                line,
                grade,
                grade_max,
            });
        }

        let mut feats = Vec::new();
        let mut last_idx = 0usize;
        for tok in tokens {
            let (key, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("malformed token {tok:?}")))?;
            if key == "qid" {
                match &qid {
                    None => qid = Some(val.to_string()),
                    Some(q) if q == val => {}
                    Some(q) => {
                        return Err(err(format!(
                            "multiple queries are not supported (qid {q} then {val})"
                        )))
                    }
                }
                continue;
            }
            let idx: usize = key
                .parse()
                .map_err(|_| err(format!("malformed feature index {key:?}")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            if idx <= last_idx {
                return Err(err(format!("feature index {idx} not ascending")));
            }
            last_idx = idx;
            let v: f64 = val
                .parse()
                .map_err(|_| err(format!("malformed feature value {val:?}")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite feature value {val:?}")));
            }
            feats.push((idx, v));
            dim = dim.max(idx);
        }

        let group = match comment.and_then(parse_group_comment) {
            Some(Ok(g)) => g,
            Some(Err(msg)) => return Err(err(msg)),
            None => return Err(err("missing `# group=<g>` comment".into())),
        };
        rows.push(Row {
            grade: grade as u8,
            group,
            feats,
        });
    }

    let items = rows
        .into_iter()
        .enumerate()
        .map(|(id, row)| {
            let mut features = vec![0.0; dim];
            for (idx, v) in row.feats {
                features[idx - 1] = v;
            }
            Item {
                id,
                features,
                grade: row.grade,
                group: row.group,
            }
        })
        .collect();
    Dataset::new(items, dim, grade_max)
}

fn parse_group_comment(comment: &str) -> Option<Result<Group, String>> {
    comment.split_whitespace().find_map(|tok| {
        let v = tok.strip_prefix("group=")?;
        Some(match v.parse::<u8>() {
            Ok(g) if g <= 1 => Ok(g),
            _ => Err(format!("group label must be 0 or 1, got {v:?}")),
        })
    })
}

/// Canonical libsvm writer: every feature in ascending index order, values
/// at 6 significant digits, items in dataset order.
pub fn write_libsvm(ds: &Dataset) -> String {
    let mut out = String::with_capacity(ds.len() * (16 + 12 * ds.dim));
    for it in &ds.items {
        write!(out, "{} qid:1", it.grade).unwrap();
        for (j, v) in it.features.iter().enumerate() {
            write!(out, " {}:{}", j + 1, format_sig(*v, 6)).unwrap();
        }
        writeln!(out, " # group={}", it.group).unwrap();
    }
    out
}

/// Splits `ds` into (train, validation, test) by shuffled ids.
///
/// Validation and test receive `floor(n * f)` items; the remainder goes to
/// train. Items keep ascending id order within each split.
pub fn split(
    ds: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let (ftr, fva, fte) = fractions;
    if [ftr, fva, fte].iter().any(|f| !(0.0..=1.0).contains(f))
        || (ftr + fva + fte - 1.0).abs() > 1e-9
    {
        return Err(DataError::BadFractions(fractions));
    }
    if ds.is_empty() {
        return Err(DataError::Empty);
    }
    let n = ds.len();
    let n_val = (n as f64 * fva + 1e-9).floor() as usize;
    let n_test = (n as f64 * fte + 1e-9).floor() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let pick = |idx: &[usize], label| {
        let mut chosen: Vec<usize> = idx.to_vec();
        chosen.sort_unstable_by_key(|&i| ds.items[i].id);
        ds.with_items(
            chosen.into_iter().map(|i| ds.items[i].clone()).collect(),
            label,
        )
    };
    let val = pick(&order[..n_val], SplitLabel::Validation);
    let test = pick(&order[n_val..n_val + n_test], SplitLabel::Test);
    let train = pick(&order[n_val + n_test..], SplitLabel::Train);
    Ok((train, val, test))
}

/// Per-feature median / interquartile-range scaler fit on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub median: Vec<f64>,
    pub iqr: Vec<f64>,
}

/// Quantile by linear interpolation between order statistics (inclusive
/// method, `h = (n - 1) q`). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn robust_scale_fit(train: &Dataset) -> Result<Scaler, DataError> {
    if train.is_empty() {
        return Err(DataError::Empty);
    }
    let mut median = Vec::with_capacity(train.dim);
    let mut iqr = Vec::with_capacity(train.dim);
    for j in 0..train.dim {
        let mut col: Vec<f64> = train.items.iter().map(|it| it.features[j]).collect();
        col.sort_by(f64::total_cmp);
        median.push(quantile_sorted(&col, 0.5));
        let spread = quantile_sorted(&col, 0.75) - quantile_sorted(&col, 0.25);
        iqr.push(if spread == 0.0 { 1.0 } else { spread });
    }
    Ok(Scaler { median, iqr })
}

pub fn robust_scale_apply(scaler: &Scaler, ds: &Dataset) -> Result<Dataset, DataError> {
    if scaler.median.len() != ds.dim {
        return Err(DataError::DimensionMismatch {
            expected: scaler.median.len(),
            found: ds.dim,
        });
    }
    let items = ds
        .items
        .iter()
        .map(|it| Item {
            features: it
                .features
                .iter()
                .zip(scaler.median.iter().zip(&scaler.iqr))
                .map(|(x, (m, s))| (x - m) / s)
                .collect(),
            ..it.clone()
        })
        .collect();
    Ok(ds.with_items(items, ds.split))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: usize, features: Vec<f64>, grade: u8, group: Group) -> Item {
        Item {
            id,
            features,
            grade,
            group,
        }
    }

    fn toy(n: usize) -> Dataset {
        let items = (0..n)
            .map(|i| item(i, vec![i as f64, (i % 3) as f64], (i % 5) as u8, (i % 2) as u8))
            .collect();
        Dataset::new(items, 2, 4).unwrap()
    }

    #[test]
    fn parses_dense_line() {
        let ds = parse_libsvm("2 qid:1 1:0.5 2:-1.0 # group=0", 4).unwrap();
        assert_eq!(ds.items, vec![item(0, vec![0.5, -1.0], 2, 0)]);
        assert_eq!(ds.dim, 2);
    }

    #[test]
    fn fills_missing_features_with_zero() {
        let ds = parse_libsvm("0 qid:1 2:3.0 # group=1", 4).unwrap();
        assert_eq!(ds.items, vec![item(0, vec![0.0, 3.0], 0, 1)]);
    }

    #[test]
    fn rejects_non_numeric_grade() {
        let err = parse_libsvm("x qid:1 1:0.5", 4).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn rejects_grade_out_of_range() {
        let err = parse_libsvm("1 qid:1 1:0 # group=0\n5 qid:1 1:0 # group=1", 4).unwrap_err();
        assert_eq!(
            err,
            DataError::GradeOutOfRange {
                line: 2,
                grade: 5,
                grade_max: 4
            }
        );
    }

    #[test]
    fn rejects_malformed_feature_and_missing_group() {
        assert!(matches!(
            parse_libsvm("1 qid:1 1:abc # group=0", 4),
            Err(DataError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_libsvm("1 qid:1 1:0.1", 4),
            Err(DataError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_libsvm("1 qid:1 1:0.1 # group=2", 4),
            Err(DataError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_libsvm("1 qid:1 1:0.1 # group=0\n1 qid:2 1:0.1 # group=0", 4),
            Err(DataError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn dimension_is_max_index_seen() {
        let ds = parse_libsvm("1 qid:1 1:1 # group=0\n2 qid:1 3:1 # group=1\n", 4).unwrap();
        assert_eq!(ds.dim, 3);
        assert_eq!(ds.items[0].features, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let (tr, va, te) = split(&toy(10), (0.7, 0.1, 0.2), 7).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (7, 1, 2));
        let (tr, va, te) = split(&toy(50_000), (0.7, 0.1, 0.2), 1).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (35_000, 5_000, 10_000));
        let (tr, va, te) = split(&toy(11), (0.7, 0.1, 0.2), 1).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (8, 1, 2));
    }

    #[test]
    fn split_is_deterministic_and_labels_parts() {
        let ds = toy(100);
        let a = split(&ds, (0.7, 0.1, 0.2), 3).unwrap();
        let b = split(&ds, (0.7, 0.1, 0.2), 3).unwrap();
        assert_eq!(a, b);
        let c = split(&ds, (0.7, 0.1, 0.2), 4).unwrap();
        assert_ne!(a.0.ids(), c.0.ids());
        assert_eq!(a.0.split, SplitLabel::Train);
        assert_eq!(a.1.split, SplitLabel::Validation);
        assert_eq!(a.2.split, SplitLabel::Test);
    }

    #[test]
    fn split_errors() {
        let empty = Dataset::new(vec![], 2, 4).unwrap();
        assert_eq!(
            split(&empty, (0.7, 0.1, 0.2), 0).unwrap_err(),
            DataError::Empty
        );
        assert!(matches!(
            split(&toy(5), (0.7, 0.2, 0.2), 0),
            Err(DataError::BadFractions(_))
        ));
    }

    #[test]
    fn robust_scaling_matches_hand_values() {
        let items = (1..=5)
            .map(|v| item(v, vec![v as f64, 2.0], 0, 0))
            .collect();
        let ds = Dataset::new(items, 2, 4).unwrap();
        let sc = robust_scale_fit(&ds).unwrap();
        assert_eq!(sc.median, vec![3.0, 2.0]);
        assert_eq!(sc.iqr, vec![2.0, 1.0]);
        let out = robust_scale_apply(&sc, &ds).unwrap();
        assert_eq!(out.items[4].features, vec![1.0, 0.0]);
        assert!(out.items.iter().all(|it| it.features[1] == 0.0));
    }

    #[test]
    fn scaler_uses_train_statistics_only() {
        let train = Dataset::new(
            (0..5).map(|v| item(v, vec![v as f64], 0, 0)).collect(),
            1,
            4,
        )
        .unwrap();
        let test = Dataset::new(
            (0..3).map(|v| item(v, vec![10.0 + v as f64], 0, 0)).collect(),
            1,
            4,
        )
        .unwrap();
        let sc = robust_scale_fit(&train).unwrap();
        let scaled = robust_scale_apply(&sc, &test).unwrap();
        let mut col: Vec<f64> = scaled.items.iter().map(|it| it.features[0]).collect();
        col.sort_by(f64::total_cmp);
        assert!(quantile_sorted(&col, 0.5) > 1.0);
    }

    #[test]
    fn scaler_dimension_mismatch() {
        let sc = Scaler {
            median: vec![0.0],
            iqr: vec![1.0],
        };
        assert!(matches!(
            robust_scale_apply(&sc, &toy(3)),
            Err(DataError::DimensionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn inclusive_quantiles() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert_eq!(quantile_sorted(&xs, 0.25), 1.75);
        assert_eq!(quantile_sorted(&xs, 0.75), 3.25);
    }

    #[test]
    fn writer_output_parses_back() {
        let ds = toy(7);
        let text = write_libsvm(&ds);
        assert!(text.starts_with("0 qid:1 1:0 2:0 # group=0\n"));
        assert_eq!(parse_libsvm(&text, 4).unwrap(), ds);
    }
}
