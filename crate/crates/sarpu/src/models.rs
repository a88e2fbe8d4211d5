//! Classifier and propensity-model abstractions.
//!
//! The propensity score `e(x_e) = Pr(s=1 | y=1, x_e)` depends only on a known
//! subset of the attributes, designated by column index. An empty subset is
//! the SCAR case: the propensity reduces to the constant label frequency `c`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{self, FeatureMatrix, LogisticModel};

/// Ordered set of feature column indices the propensity score may depend on.
/// Empty means SCAR.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PropensitySelector {
    indices: Vec<usize>,
}

impl PropensitySelector {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for &i in &indices {
            if !seen.insert(i) {
                return Err(Error::invalid(format!("duplicate propensity column {i}")));
            }
        }
        Ok(Self { indices })
    }

    /// The SCAR selector: no propensity attributes.
    pub fn scar() -> Self {
        Self::default()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn validate_for(&self, x: &FeatureMatrix) -> Result<()> {
        for &i in &self.indices {
            if i >= x.cols() {
                return Err(Error::invalid(format!(
                    "propensity column {i} out of range (dataset has {} columns)",
                    x.cols()
                )));
            }
        }
        Ok(())
    }

    /// The propensity-attribute view of `x` (possibly zero columns).
    pub fn select(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.validate_for(x)?;
        if self.indices.is_empty() {
            Ok(crate::optimizer::FeatureMatrix::empty_cols(x.rows()))
        } else {
            x.select_columns(&self.indices)
        }
    }
}

/// Turn one row of propensity-attribute values into a binary assignment key.
pub(crate) fn binary_assignment(values: &[f64]) -> Result<Vec<u8>> {
    values
        .iter()
        .map(|&v| {
            if (v - 0.0).abs() < 1e-9 {
                Ok(0u8)
            } else if (v - 1.0).abs() < 1e-9 {
                Ok(1u8)
            } else {
                Err(Error::Mechanism(format!(
                    "propensity attribute value {v} is not binary"
                )))
            }
        })
        .collect()
}

/// Explicit propensity function over binary propensity-attribute assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFunction {
    map: BTreeMap<Vec<u8>, f64>,
    /// Value used for assignments absent from the map; `None` makes such an
    /// evaluation an error.
    default: Option<f64>,
}

impl OracleFunction {
    pub fn new(map: BTreeMap<Vec<u8>, f64>) -> Result<Self> {
        for (k, &v) in &map {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!(
                    "oracle propensity {v} for assignment {k:?} must be in (0,1]"
                )));
            }
        }
        Ok(Self { map, default: None })
    }

    pub fn with_default(mut self, value: f64) -> Result<Self> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::invalid("oracle default must be in (0,1]"));
        }
        self.default = Some(value);
        Ok(self)
    }

    pub fn evaluate(&self, assignment: &[u8]) -> Result<f64> {
        match self.map.get(assignment) {
            Some(&v) => Ok(v),
            None => self
                .default
                .ok_or_else(|| Error::MissingAssignment(assignment.to_vec())),
        }
    }

    pub fn assignments(&self) -> impl Iterator<Item = (&Vec<u8>, f64)> {
        self.map.iter().map(|(k, &v)| (k, v))
    }
}

/// One-variable propensity family: `c_bar + dc/2` when the attribute is 1,
/// `c_bar - dc/2` when it is 0.
pub fn one_variable_oracle(c_bar: f64, delta_c: f64) -> Result<OracleFunction> {
    let lo = c_bar - delta_c / 2.0;
    let hi = c_bar + delta_c / 2.0;
    if !(lo > 0.0 && hi < 1.0) {
        return Err(Error::invalid(format!(
            "one-variable propensity out of range: c_bar={c_bar}, delta_c={delta_c}"
        )));
    }
    let mut map = BTreeMap::new();
    map.insert(vec![0u8], lo);
    map.insert(vec![1u8], hi);
    OracleFunction::new(map)
}

/// Three-variable propensity family with independent attribute contributions:
/// `p_on^k * p_off^(3-k)` where `k` is the count of active attributes.
pub fn three_variable_oracle(p_on: f64, p_off: f64) -> Result<OracleFunction> {
    if !(p_on > 0.0 && p_on <= 1.0 && p_off > 0.0 && p_off <= 1.0) {
        return Err(Error::invalid("three-variable factors must be in (0,1]"));
    }
    let mut map = BTreeMap::new();
    for bits in 0u8..8 {
        let key = vec![bits & 1, (bits >> 1) & 1, (bits >> 2) & 1];
        let k = key.iter().filter(|&&b| b == 1).count() as i32;
        map.insert(key, p_on.powi(k) * p_off.powi(3 - k));
    }
    OracleFunction::new(map)
}

/// A propensity score model: constant (SCAR), a fitted logistic model over
/// the propensity attributes, or an explicit oracle function.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensityModel {
    Constant { c: f64 },
    Fitted {
        model: LogisticModel,
        selector: PropensitySelector,
    },
    Oracle {
        function: OracleFunction,
        selector: PropensitySelector,
    },
}

impl PropensityModel {
    pub fn constant(c: f64) -> Result<Self> {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::invalid(format!("label frequency {c} must be in (0,1]")));
        }
        Ok(PropensityModel::Constant { c })
    }

    pub fn selector(&self) -> PropensitySelector {
        match self {
            PropensityModel::Constant { .. } => PropensitySelector::scar(),
            PropensityModel::Fitted { selector, .. } => selector.clone(),
            PropensityModel::Oracle { selector, .. } => selector.clone(),
        }
    }

    /// Per-row propensity scores on the full feature matrix; the selector
    /// picks out the propensity attributes.
    pub fn scores(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            PropensityModel::Constant { c } => Ok(vec![*c; x.rows()]),
            PropensityModel::Fitted { model, selector } => {
                let xe = selector.select(x)?;
                optimizer::predict_proba(model, &xe)
            }
            PropensityModel::Oracle { function, selector } => {
                let xe = selector.select(x)?;
                (0..xe.rows())
                    .map(|i| function.evaluate(&binary_assignment(&xe.row_values(i))?))
                    .collect()
            }
        }
    }
}

/// Free-function form of [`PropensityModel::scores`].
pub fn propensity_scores(pm: &PropensityModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    pm.scores(x)
}

/// The classification model `f(x) = Pr(y=1 | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub model: LogisticModel,
}

impl Classifier {
    pub fn posterior(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        optimizer::predict_proba(&self.model, x)
    }
}

/// Free-function form of [`Classifier::posterior`].
pub fn class_posterior(clf: &Classifier, x: &FeatureMatrix) -> Result<Vec<f64>> {
    clf.posterior(x)
}

/// SCAR posterior scaling: `Pr(y=1|x) = min(1, Pr(s=1|x) / c)`.
pub fn scale_posterior_scar(label_probs: &[f64], c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::invalid(format!("label frequency {c} must be in (0,1]")));
    }
    Ok(label_probs.iter().map(|&p| (p / c).min(1.0)).collect())
}
