//! Dataset ingestion, PU label-mechanism simulation, imbalance subsampling,
//! and fold splitting.
//!
//! All randomized operations are pure functions of `(inputs, seed)`: draws
//! are keyed per row, so results do not depend on evaluation order.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::models::{one_variable_oracle, three_variable_oracle, PropensityModel, PropensitySelector};
use crate::optimizer::FeatureMatrix;
use crate::rng;

pub mod synthetic;

/// A dataset with PU labels `s` and, when available, ground-truth classes `y`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub s: Vec<u8>,
    pub y: Option<Vec<u8>>,
    pub column_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: FeatureMatrix,
        s: Vec<u8>,
        y: Option<Vec<u8>>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        if s.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                got: s.len(),
                context: "label vector".into(),
            });
        }
        if column_names.len() != features.cols() {
            return Err(Error::DimensionMismatch {
                expected: features.cols(),
                got: column_names.len(),
                context: "column names".into(),
            });
        }
        if let Some(y) = &y {
            if y.len() != features.rows() {
                return Err(Error::DimensionMismatch {
                    expected: features.rows(),
                    got: y.len(),
                    context: "truth vector".into(),
                });
            }
            for i in 0..s.len() {
                if s[i] == 1 && y[i] == 0 {
                    return Err(Error::Schema(format!(
                        "row {i} is labeled (s=1) but negative (y=0); only positives can be labeled"
                    )));
                }
            }
        }
        Ok(Self {
            features,
            s,
            y,
            column_names,
        })
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    /// Same features and truth, new PU labels.
    pub fn relabeled(&self, s: Vec<u8>) -> Result<Self> {
        Dataset::new(
            self.features.clone(),
            s,
            self.y.clone(),
            self.column_names.clone(),
        )
    }

    /// Restrict to a subset of rows, preserving order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        Dataset::new(
            self.features.select_rows(indices)?,
            indices.iter().map(|&i| self.s[i]).collect(),
            self.y
                .as_ref()
                .map(|y| indices.iter().map(|&i| y[i]).collect()),
            self.column_names.clone(),
        )
    }
}

/// How PU labels are generated from ground truth.
#[derive(Debug, Clone)]
pub enum LabelMechanism {
    /// Constant label frequency.
    Scar { c: f64 },
    /// One binary attribute: `c_bar + delta_c/2` when set, `c_bar - delta_c/2`
    /// otherwise.
    OneVarSar {
        attribute: usize,
        c_bar: f64,
        delta_c: f64,
    },
    /// Three binary attributes contributing independently.
    ThreeVarSar {
        attributes: [usize; 3],
        p_on: f64,
        p_off: f64,
    },
    /// Any explicit propensity model.
    CustomOracle { model: PropensityModel },
}

impl LabelMechanism {
    pub fn three_var(attributes: [usize; 3]) -> Self {
        LabelMechanism::ThreeVarSar {
            attributes,
            p_on: 0.9,
            p_off: 0.5,
        }
    }

    fn validate(&self, x: &FeatureMatrix) -> Result<()> {
        match self {
            LabelMechanism::Scar { c } => {
                if !(0.0..=1.0).contains(c) {
                    return Err(Error::Mechanism(format!("label frequency {c} not in [0,1]")));
                }
            }
            LabelMechanism::OneVarSar {
                attribute,
                c_bar,
                delta_c,
            } => {
                if *attribute >= x.cols() {
                    return Err(Error::Mechanism(format!(
                        "attribute {attribute} out of range"
                    )));
                }
                let lo = c_bar - delta_c / 2.0;
                let hi = c_bar + delta_c / 2.0;
                if !(lo > 0.0 && hi < 1.0) {
                    return Err(Error::Mechanism(format!(
                        "propensity range [{lo}, {hi}] not inside (0,1)"
                    )));
                }
                require_binary_column(x, *attribute)?;
            }
            LabelMechanism::ThreeVarSar {
                attributes,
                p_on,
                p_off,
            } => {
                for &a in attributes {
                    if a >= x.cols() {
                        return Err(Error::Mechanism(format!("attribute {a} out of range")));
                    }
                    require_binary_column(x, a)?;
                }
                if !(*p_on > 0.0 && *p_on <= 1.0 && *p_off > 0.0 && *p_off <= 1.0) {
                    return Err(Error::Mechanism("factors must be in (0,1]".into()));
                }
            }
            LabelMechanism::CustomOracle { model } => {
                model.selector().validate_for(x)?;
            }
        }
        Ok(())
    }

    /// The propensity attributes this mechanism reads.
    pub fn selector(&self) -> PropensitySelector {
        match self {
            LabelMechanism::Scar { .. } => PropensitySelector::scar(),
            LabelMechanism::OneVarSar { attribute, .. } => {
                PropensitySelector::new(vec![*attribute]).expect("single index")
            }
            LabelMechanism::ThreeVarSar { attributes, .. } => {
                PropensitySelector::new(attributes.to_vec()).expect("validated indices")
            }
            LabelMechanism::CustomOracle { model } => model.selector(),
        }
    }

    /// The exact propensity model behind the mechanism, for use as a known
    /// propensity score. Errors for `Scar { c: 0 }`, which labels nothing.
    pub fn oracle_model(&self) -> Result<PropensityModel> {
        match self {
            LabelMechanism::Scar { c } => PropensityModel::constant(*c),
            LabelMechanism::OneVarSar {
                attribute,
                c_bar,
                delta_c,
            } => Ok(PropensityModel::Oracle {
                function: one_variable_oracle(*c_bar, *delta_c)?,
                selector: PropensitySelector::new(vec![*attribute])?,
            }),
            LabelMechanism::ThreeVarSar {
                attributes,
                p_on,
                p_off,
            } => Ok(PropensityModel::Oracle {
                function: three_variable_oracle(*p_on, *p_off)?,
                selector: PropensitySelector::new(attributes.to_vec())?,
            }),
            LabelMechanism::CustomOracle { model } => Ok(model.clone()),
        }
    }

    /// Warnings for propensity attributes outside the 30-70% frequency band.
    pub fn screening_warnings(&self, x: &FeatureMatrix) -> Vec<String> {
        let mut out = Vec::new();
        for &a in self.selector().indices() {
            if a >= x.cols() {
                continue;
            }
            let freq =
                (0..x.rows()).map(|i| x.value(i, a)).sum::<f64>() / x.rows() as f64;
            if !(0.3..=0.7).contains(&freq) {
                out.push(format!(
                    "propensity attribute {a} has frequency {freq:.3}, outside [0.3, 0.7]"
                ));
            }
        }
        out
    }
}

fn require_binary_column(x: &FeatureMatrix, col: usize) -> Result<()> {
    for i in 0..x.rows() {
        let v = x.value(i, col);
        if (v - 0.0).abs() >= 1e-9 && (v - 1.0).abs() >= 1e-9 {
            return Err(Error::Mechanism(format!(
                "attribute {col} is not binary (value {v} at row {i})"
            )));
        }
    }
    Ok(())
}

/// The exact oracle propensity per row.
pub fn propensity_truth(mech: &LabelMechanism, x: &FeatureMatrix) -> Result<Vec<f64>> {
    mech.validate(x)?;
    match mech {
        LabelMechanism::Scar { c } => Ok(vec![*c; x.rows()]),
        _ => mech.oracle_model()?.scores(x),
    }
}

/// Draw PU labels: each positive row is labeled independently with its
/// propensity; negatives are never labeled.
pub fn apply_mechanism(
    y: &[u8],
    x: &FeatureMatrix,
    mech: &LabelMechanism,
    seed: u64,
) -> Result<Vec<u8>> {
    if y.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            got: y.len(),
            context: "truth vector".into(),
        });
    }
    let e = propensity_truth(mech, x)?;
    Ok(y.iter()
        .enumerate()
        .map(|(i, &yi)| {
            u8::from(yi == 1 && rng::unit_uniform(seed, "label", i as u64) < e[i])
        })
        .collect())
}

/// Assignment of each row to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn complement_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }
}

/// Uniform random fold assignment with sizes within one of each other.
pub fn make_folds(n_rows: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid("fold count must be at least 2"));
    }
    if n_rows < k {
        return Err(Error::invalid(format!(
            "cannot split {n_rows} rows into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut rng::stream(seed, "folds", 0));
    let mut assignment = vec![0usize; n_rows];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }
    Ok(FoldPlan {
        k,
        assignment,
        seed,
    })
}

/// Retain a uniform random `fraction` of the chosen class and all of the
/// other class.
pub fn subsample_for_imbalance(
    ds: &Dataset,
    which_class: u8,
    fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} not in (0,1]")));
    }
    let y = ds
        .y
        .as_ref()
        .ok_or_else(|| Error::MissingTruth("subsampling needs ground truth".into()))?;
    let class_rows: Vec<usize> = (0..ds.rows()).filter(|&i| y[i] == which_class).collect();
    if class_rows.is_empty() {
        return Err(Error::invalid(format!("class {which_class} is empty")));
    }
    let keep_n = ((class_rows.len() as f64) * fraction).round() as usize;
    let mut shuffled = class_rows.clone();
    shuffled.shuffle(&mut rng::stream(seed, "subsample", u64::from(which_class)));
    let kept: std::collections::BTreeSet<usize> =
        shuffled.into_iter().take(keep_n).collect();
    let retained: Vec<usize> = (0..ds.rows())
        .filter(|&i| y[i] != which_class || kept.contains(&i))
        .collect();
    ds.select_rows(&retained)
}

/// Fraction of positive ground-truth rows.
pub fn class_prior(ds: &Dataset) -> Result<f64> {
    let y = ds
        .y
        .as_ref()
        .ok_or_else(|| Error::MissingTruth("class prior needs ground truth".into()))?;
    Ok(y.iter().map(|&v| f64::from(v)).sum::<f64>() / y.len() as f64)
}

/// The class prior implied by a label rate and a label frequency:
/// `alpha = Pr(s=1) / c`, clipped to `[0,1]`.
pub fn implied_prior(label_rate: f64, c: f64) -> Result<f64> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::invalid(format!("label frequency {c} not in (0,1]")));
    }
    Ok((label_rate / c).clamp(0.0, 1.0))
}

/// Binary columns whose frequency of ones lies within `[lo, hi]`; candidates
/// for propensity attributes.
pub fn eligible_propensity_columns(x: &FeatureMatrix, lo: f64, hi: f64) -> Vec<usize> {
    (0..x.cols())
        .filter(|&j| {
            let mut ones = 0usize;
            for i in 0..x.rows() {
                let v = x.value(i, j);
                if (v - 1.0).abs() < 1e-9 {
                    ones += 1;
                } else if v.abs() >= 1e-9 {
                    return false;
                }
            }
            let freq = ones as f64 / x.rows() as f64;
            (lo..=hi).contains(&freq)
        })
        .collect()
}

/// Load a dataset from CSV. The header row names the columns; the label
/// column must be binary; any other non-truth column becomes a feature.
/// Values outside `[0,1]` are accepted with a warning unless `rescale` is
/// set, which min-max scales each feature column.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    truth_column: Option<&str>,
    rescale: bool,
) -> Result<(Dataset, Vec<String>)> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Schema(format!("label column `{label_column}` not found")))?;
    let truth_idx = match truth_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("truth column `{name}` not found")))?,
        ),
        None => None,
    };

    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| j != label_idx && Some(j) != truth_idx)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Schema("no feature columns left".into()));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut s = Vec::new();
    let mut y = truth_idx.map(|_| Vec::new());
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |j: usize| -> Result<f64> {
            record
                .get(j)
                .ok_or_else(|| Error::Parse {
                    row: r + 2,
                    col: headers[j].clone(),
                    message: "missing cell".into(),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse {
                    row: r + 2,
                    col: headers[j].clone(),
                    message: e.to_string(),
                })
        };
        let parse_binary = |j: usize| -> Result<u8> {
            let v = parse(j)?;
            if v == 0.0 {
                Ok(0)
            } else if v == 1.0 {
                Ok(1)
            } else {
                Err(Error::Parse {
                    row: r + 2,
                    col: headers[j].clone(),
                    message: format!("expected binary label, got {v}"),
                })
            }
        };
        rows.push(feature_cols.iter().map(|&j| parse(j)).collect::<Result<_>>()?);
        s.push(parse_binary(label_idx)?);
        if let (Some(y), Some(j)) = (&mut y, truth_idx) {
            y.push(parse_binary(j)?);
        }
    }
    if rows.is_empty() {
        return Err(Error::Schema("file contains no data rows".into()));
    }

    let mut warnings = Vec::new();
    if rescale {
        let cols = rows[0].len();
        for j in 0..cols {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for row in &rows {
                lo = lo.min(row[j]);
                hi = hi.max(row[j]);
            }
            let span = hi - lo;
            for row in &mut rows {
                row[j] = if span > 0.0 { (row[j] - lo) / span } else { 0.0 };
            }
        }
    } else {
        'scan: for (j, &col) in feature_cols.iter().enumerate() {
            for row in &rows {
                if !(0.0..=1.0).contains(&row[j]) {
                    warnings.push(format!(
                        "column `{}` has values outside [0,1]; consider --rescale",
                        headers[col]
                    ));
                    continue 'scan;
                }
            }
        }
    }

    let features = FeatureMatrix::from_rows(&rows)?;
    let column_names = feature_cols
        .iter()
        .map(|&j| headers[j].clone())
        .collect();
    let ds = Dataset::new(features, s, y, column_names)?;
    Ok((ds, warnings))
}

/// Peek at a CSV header to check which columns exist.
pub fn csv_headers(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    Ok(reader.headers()?.iter().map(str::to_owned).collect())
}

/// Serialize a dataset in the same schema `load_csv` reads.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = ds.column_names.clone();
    header.push("s".into());
    if ds.y.is_some() {
        header.push("y".into());
    }
    writer.write_record(&header)?;
    for i in 0..ds.rows() {
        let mut record: Vec<String> = (0..ds.features.cols())
            .map(|j| format!("{}", ds.features.value(i, j)))
            .collect();
        record.push(ds.s[i].to_string());
        if let Some(y) = &ds.y {
            record.push(y[i].to_string());
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
