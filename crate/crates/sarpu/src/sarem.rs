//! The EM engine for PU learning under the selected-at-random assumption.
//!
//! Alternates an expectation step, which computes expected class values for
//! the unlabeled rows from the current classifier and (decayed) propensity
//! scores, with a maximization step that refits both models on the weighted
//! expected data. Initialization estimates the label frequency under SCAR
//! via the max-prediction rule and trains the propensity model to return it
//! everywhere.
//!
//! Special cases: an empty propensity selector yields SCAR with label
//! frequency estimation; a supplied propensity model (oracle or constant) is
//! held fixed throughout; multi-SCAR fits an independent SCAR model per
//! propensity-attribute stratum.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    binary_assignment, Classifier, OracleFunction, PropensityModel, PropensitySelector,
};
use crate::optimizer::{self, FeatureMatrix, LogisticModel, OptimizerConfig, CLIP_LO};

/// EM hyperparameters. Defaults: decay 0.9, convergence window 10 with
/// slope threshold 1e-4, at most 500 iterations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    /// Multiplies predicted propensity scores inside the E-step only; biases
    /// learning toward local certainty.
    pub decay: f64,
    /// Number of recent iterations the convergence slope is taken over.
    pub window: usize,
    /// Mean absolute slope of per-row propensity predictions below which the
    /// run is converged.
    pub slope_threshold: f64,
    pub max_iterations: usize,
    /// Warm-start each maximization refit from the previous iteration's
    /// parameters instead of zeros.
    pub warm_start: bool,
    pub optimizer: OptimizerConfig,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            decay: 0.9,
            window: 10,
            slope_threshold: 1e-4,
            max_iterations: 500,
            warm_start: false,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid(format!("decay {} must be in (0,1]", self.decay)));
        }
        if self.window < 2 {
            return Err(Error::invalid("window must be at least 2"));
        }
        if !(self.slope_threshold > 0.0) {
            return Err(Error::invalid("slope threshold must be positive"));
        }
        Ok(())
    }
}

/// Which learner to run.
#[derive(Debug, Clone)]
pub enum EmVariant {
    /// Full SAR-EM with an estimated propensity model over the selector.
    Sar { selector: PropensitySelector },
    /// SCAR with label frequency estimation; identical to `Sar` with an
    /// empty selector.
    Scar,
    /// SAR-EM with a known propensity model, held fixed.
    SarKnownE { propensity: PropensityModel },
    /// SCAR with a known label frequency, held fixed.
    ScarKnownC { c: f64 },
    /// Independent SCAR models per propensity-attribute stratum.
    MultiScar { selector: PropensitySelector },
}

/// One EM iteration's record: undecayed propensity predictions on the
/// unlabeled rows (input order) and the penalized EM lower bound of the
/// refitted models (expected complete-data log-likelihood plus the entropy
/// of the expectations, minus the L2 penalties). The lower bound, unlike
/// the expected log-likelihood alone, is non-decreasing when `decay` is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub propensity_predictions: Vec<f64>,
    pub expected_loglik: f64,
}

/// Trained classifier, either a single model or a per-stratum dispatch
/// (multi-SCAR).
#[derive(Debug, Clone, PartialEq)]
pub enum FittedClassifier {
    Single(Classifier),
    Stratified {
        selector: PropensitySelector,
        strata: BTreeMap<Vec<u8>, Classifier>,
        fallback: Classifier,
    },
}

impl FittedClassifier {
    pub fn posterior(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            FittedClassifier::Single(clf) => clf.posterior(x),
            FittedClassifier::Stratified {
                selector,
                strata,
                fallback,
            } => {
                let xe = selector.select(x)?;
                let mut out = vec![0.0; x.rows()];
                let mut groups: BTreeMap<Option<Vec<u8>>, Vec<usize>> = BTreeMap::new();
                for i in 0..x.rows() {
                    let key = binary_assignment(&xe.row_values(i))
                        .ok()
                        .filter(|k| strata.contains_key(k));
                    groups.entry(key).or_default().push(i);
                }
                for (key, rows) in groups {
                    let clf = match &key {
                        Some(k) => &strata[k],
                        None => fallback,
                    };
                    let sub = x.select_rows(&rows)?;
                    let p = clf.posterior(&sub)?;
                    for (j, &i) in rows.iter().enumerate() {
                        out[i] = p[j];
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Output of an EM run.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub classifier: FittedClassifier,
    pub propensity: PropensityModel,
    pub iterations_run: usize,
    pub converged: bool,
    pub trace: Vec<TraceRecord>,
}

fn split_labels(s: &[u8]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for (i, &v) in s.iter().enumerate() {
        match v {
            1 => labeled.push(i),
            0 => unlabeled.push(i),
            other => {
                return Err(Error::invalid(format!(
                    "label {other} at row {i} must be 0 or 1"
                )))
            }
        }
    }
    Ok((labeled, unlabeled))
}

/// The Elkan-style initial expected-positive weight: `((1-c)/c) * s / (1-s)`,
/// clipped to `[0,1]`.
pub fn initial_expected_positive(s_hat: f64, c: f64) -> f64 {
    (((1.0 - c) / c) * (s_hat / (1.0 - s_hat))).clamp(0.0, 1.0)
}

/// Classifier M-step fit. Labeled rows enter as target 1 with weight 1;
/// each unlabeled row enters as a weighted 1/0 pair with weights
/// `(y_hat, 1 - y_hat)`, which is objective-identical to a single soft
/// target `y_hat`.
fn fit_classifier(
    x: &FeatureMatrix,
    labeled: &[usize],
    unlabeled: &[usize],
    y_hat: &[f64],
    opt: &OptimizerConfig,
    start: Option<&LogisticModel>,
) -> Result<Classifier> {
    let mut targets = vec![1.0; x.rows()];
    for (k, &i) in unlabeled.iter().enumerate() {
        targets[i] = y_hat[k];
    }
    debug_assert!(labeled.iter().all(|&i| targets[i] == 1.0));
    let weights = vec![1.0; x.rows()];
    let model = optimizer::fit_from(x, &targets, &weights, opt, start)?;
    Ok(Classifier { model })
}

/// Propensity M-step fit on the propensity attributes only: labeled rows as
/// target 1 weight 1, unlabeled rows as target 0 weight `y_hat`.
fn fit_propensity(
    x_e: &FeatureMatrix,
    labeled: &[usize],
    unlabeled: &[usize],
    y_hat: &[f64],
    opt: &OptimizerConfig,
    start: Option<&LogisticModel>,
) -> Result<LogisticModel> {
    let mut targets = vec![0.0; x_e.rows()];
    let mut weights = vec![0.0; x_e.rows()];
    for &i in labeled {
        targets[i] = 1.0;
        weights[i] = 1.0;
    }
    for (k, &i) in unlabeled.iter().enumerate() {
        weights[i] = y_hat[k];
    }
    if weights.iter().all(|&w| w == 0.0) {
        // No positives at all cannot happen (callers require labeled rows),
        // but all-zero y_hat with no labels would.
        return Err(Error::DegenerateData("propensity fit has zero total weight".into()));
    }
    optimizer::fit_from(x_e, &targets, &weights, opt, start)
}

/// Algorithm-level initialization: estimate the label frequency under SCAR
/// with the max-prediction rule, refit the classifier with the implied
/// expected positives, and train the propensity model to return `c`
/// everywhere.
pub fn initialize_models(
    x: &FeatureMatrix,
    s: &[u8],
    selector: &PropensitySelector,
    opt: &OptimizerConfig,
) -> Result<(Classifier, PropensityModel)> {
    let init = initialize(x, s, selector, opt, true)?;
    let propensity = init
        .propensity
        .expect("propensity initialization was requested");
    Ok((init.classifier, propensity))
}

struct Initialized {
    classifier: Classifier,
    propensity: Option<PropensityModel>,
}

fn initialize(
    x: &FeatureMatrix,
    s: &[u8],
    selector: &PropensitySelector,
    opt: &OptimizerConfig,
    fit_propensity_model: bool,
) -> Result<Initialized> {
    if s.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            got: s.len(),
            context: "labels".into(),
        });
    }
    let (labeled, unlabeled) = split_labels(s)?;
    if labeled.is_empty() {
        return Err(Error::CannotInitialize("no labeled examples".into()));
    }
    if unlabeled.is_empty() {
        return Err(Error::DegenerateData("every example is labeled".into()));
    }

    // Nontraditional classifier: predict s from x.
    let s_targets: Vec<f64> = s.iter().map(|&v| f64::from(v)).collect();
    let ones = vec![1.0; x.rows()];
    let g = optimizer::fit(x, &s_targets, &ones, opt)?;

    let x_unl = x.select_rows(&unlabeled)?;
    let s_hat = optimizer::predict_proba(&g, &x_unl)?;

    // Max-prediction label frequency estimate.
    let c = s_hat
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .clamp(0.01, 1.0);

    let y_hat: Vec<f64> = s_hat
        .iter()
        .map(|&sh| initial_expected_positive(sh, c))
        .collect();

    let classifier = fit_classifier(x, &labeled, &unlabeled, &y_hat, opt, None)?;

    let propensity = if fit_propensity_model {
        // Every row once as target 1 with weight c and once as target 0 with
        // weight 1-c; collapses to a soft target of c on every row.
        let x_e = selector.select(x)?;
        let targets = vec![c; x_e.rows()];
        let weights = vec![1.0; x_e.rows()];
        let model = optimizer::fit(&x_e, &targets, &weights, opt)?;
        Some(PropensityModel::Fitted {
            model,
            selector: selector.clone(),
        })
    } else {
        None
    };

    Ok(Initialized {
        classifier,
        propensity,
    })
}

/// E-step: expected class values for the unlabeled rows. The decayed
/// propensity `s_hat = d * e` feeds
/// `y_hat = y_f (1 - s_hat) / (y_f (1 - s_hat) + (1 - y_f))`.
/// Labeled rows are handled outside this operation (their expectation is 1).
pub fn expectation_step(y_f: &[f64], e_vals: &[f64], d: f64) -> Result<Vec<f64>> {
    if y_f.len() != e_vals.len() {
        return Err(Error::DimensionMismatch {
            expected: y_f.len(),
            got: e_vals.len(),
            context: "expectation_step".into(),
        });
    }
    for &v in y_f.iter().chain(e_vals.iter()) {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("value {v} outside [0,1]")));
        }
    }
    Ok(y_f
        .iter()
        .zip(e_vals)
        .map(|(&yf, &e)| {
            let s_hat = d * e;
            let num = yf * (1.0 - s_hat);
            let den = num + (1.0 - yf);
            if den <= 0.0 {
                // Both terms vanish only when yf = 1 and s_hat = 1; the row
                // is then a certain positive.
                1.0
            } else {
                (num / den).clamp(0.0, 1.0)
            }
        })
        .collect())
}

/// M-step on explicit matrices: refit classifier and propensity model from
/// the expected class values. `y_hat` is indexed by unlabeled row in input
/// order.
pub fn maximization_step(
    x: &FeatureMatrix,
    x_e: &FeatureMatrix,
    s: &[u8],
    y_hat: &[f64],
    opt: &OptimizerConfig,
) -> Result<(Classifier, PropensityModel)> {
    let (labeled, unlabeled) = split_labels(s)?;
    if y_hat.len() != unlabeled.len() {
        return Err(Error::DimensionMismatch {
            expected: unlabeled.len(),
            got: y_hat.len(),
            context: "y_hat".into(),
        });
    }
    let classifier = fit_classifier(x, &labeled, &unlabeled, y_hat, opt, None)?;
    let model = fit_propensity(x_e, &labeled, &unlabeled, y_hat, opt, None)?;
    let selector = PropensitySelector::new((0..x_e.cols()).collect())?;
    Ok((
        classifier,
        PropensityModel::Fitted { model, selector },
    ))
}

/// Least-squares slope of the `n` values ending at index `t` (0-based),
/// against iteration indices `0..n`.
pub fn slope(values: &[f64], t: usize, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("slope window must be at least 2"));
    }
    if t >= values.len() || t + 1 < n {
        return Err(Error::invalid(format!(
            "slope window [{}..={}] out of range for {} values",
            t as i64 + 1 - n as i64,
            t,
            values.len()
        )));
    }
    let window = &values[t + 1 - n..=t];
    let nf = n as f64;
    let sum_i = (nf - 1.0) * nf / 2.0;
    let sum_i2 = (nf - 1.0) * nf * (2.0 * nf - 1.0) / 6.0;
    let sum_w: f64 = window.iter().sum();
    let sum_iw: f64 = window.iter().enumerate().map(|(i, &w)| i as f64 * w).sum();
    Ok((nf * sum_iw - sum_i * sum_w) / (nf * sum_i2 - sum_i * sum_i))
}

/// Convergence test: mean absolute per-row slope of the propensity
/// predictions over the last `n` iterations is below `epsilon`.
/// `histories[i]` holds iteration `i+1`'s predictions; `t` is the 1-based
/// current iteration.
pub fn has_converged(histories: &[Vec<f64>], t: usize, n: usize, epsilon: f64) -> Result<bool> {
    if t < n || t > histories.len() {
        return Err(Error::invalid(format!(
            "convergence test needs {n} iterations, have {t}"
        )));
    }
    let n_rows = histories[t - 1].len();
    if n_rows == 0 {
        return Ok(true);
    }
    let mut total = 0.0;
    let mut series = vec![0.0; n];
    for r in 0..n_rows {
        for (k, it) in (t - n..t).enumerate() {
            series[k] = histories[it][r];
        }
        total += slope(&series, n - 1, n)?.abs();
    }
    Ok(total / (n_rows as f64) < epsilon)
}

fn clip_unit(p: f64) -> f64 {
    p.clamp(CLIP_LO, 1.0 - CLIP_LO)
}

/// Penalized EM lower bound at the current expected class values:
/// the expected complete-data log-likelihood
/// `sum_labeled [ln f + ln e] +
/// sum_unlabeled [y_hat (ln f + ln(1-e)) + (1-y_hat) ln(1-f)]`
/// plus the entropy of `y_hat`, minus the L2 penalties paid by the fits.
fn penalized_lower_bound(
    f_lab: &[f64],
    e_lab: &[f64],
    f_unl: &[f64],
    e_unl: &[f64],
    y_hat: &[f64],
    penalty: f64,
) -> f64 {
    let mut q = 0.0;
    for i in 0..f_lab.len() {
        q += clip_unit(f_lab[i]).ln() + clip_unit(e_lab[i]).ln();
    }
    for i in 0..f_unl.len() {
        let f = clip_unit(f_unl[i]);
        let e = clip_unit(e_unl[i]);
        q += y_hat[i] * (f.ln() + (1.0 - e).ln()) + (1.0 - y_hat[i]) * (1.0 - f).ln();
        let y = clip_unit(y_hat[i]);
        q -= y * y.ln() + (1.0 - y) * (1.0 - y).ln();
    }
    q - penalty
}

/// Run the EM learner described by `variant`.
pub fn fit_sar_em(
    x: &FeatureMatrix,
    s: &[u8],
    variant: &EmVariant,
    config: &EmConfig,
) -> Result<FitResult> {
    config.validate()?;
    let (selector, known) = match variant {
        EmVariant::Sar { selector } => (selector.clone(), None),
        EmVariant::Scar => (PropensitySelector::scar(), None),
        EmVariant::SarKnownE { propensity } => (propensity.selector(), Some(propensity.clone())),
        EmVariant::ScarKnownC { c } => (
            PropensitySelector::scar(),
            Some(PropensityModel::constant(*c)?),
        ),
        EmVariant::MultiScar { selector } => return fit_multi_scar(x, s, selector, config),
    };
    selector.validate_for(x)?;

    let (labeled, unlabeled) = split_labels(s)?;
    let init = initialize(x, s, &selector, &config.optimizer, known.is_none())?;
    let mut classifier = init.classifier;
    let mut propensity = match known {
        Some(pm) => pm,
        None => init.propensity.expect("fitted during initialization"),
    };
    let hold_propensity = matches!(
        variant,
        EmVariant::SarKnownE { .. } | EmVariant::ScarKnownC { .. }
    );

    let x_unl = x.select_rows(&unlabeled)?;
    let x_lab = x.select_rows(&labeled)?;
    let x_e = selector.select(x)?;

    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut histories: Vec<Vec<f64>> = Vec::new();
    let mut converged = false;

    for t in 1..=config.max_iterations {
        // Expectation
        let y_f = classifier.posterior(&x_unl)?;
        let e_unl = propensity.scores(&x_unl)?;
        let y_hat = expectation_step(&y_f, &e_unl, config.decay)?;

        // Maximization
        let clf_start = config.warm_start.then_some(&classifier.model);
        classifier = fit_classifier(x, &labeled, &unlabeled, &y_hat, &config.optimizer, clf_start)?;
        if !hold_propensity {
            let prev = match (&propensity, config.warm_start) {
                (PropensityModel::Fitted { model, .. }, true) => Some(model.clone()),
                _ => None,
            };
            let model = fit_propensity(
                &x_e,
                &labeled,
                &unlabeled,
                &y_hat,
                &config.optimizer,
                prev.as_ref(),
            )?;
            propensity = PropensityModel::Fitted {
                model,
                selector: selector.clone(),
            };
        }

        // Record the refitted models' propensity predictions and objective.
        let e_after = propensity.scores(&x_unl)?;
        let f_unl = classifier.posterior(&x_unl)?;
        let f_lab = classifier.posterior(&x_lab)?;
        let e_lab = propensity.scores(&x_lab)?;
        let mut penalty = config.optimizer.lambda * classifier.model.coefficients.norm_squared();
        if let PropensityModel::Fitted { model, .. } = &propensity {
            penalty += config.optimizer.lambda * model.coefficients.norm_squared();
        }
        let q = penalized_lower_bound(&f_lab, &e_lab, &f_unl, &e_after, &y_hat, penalty);
        // A held-fixed propensity model never changes its predictions, which
        // would trivially satisfy the slope test at the window minimum; track
        // the classifier's posteriors instead in that case.
        histories.push(if hold_propensity { f_unl } else { e_after.clone() });
        trace.push(TraceRecord {
            propensity_predictions: e_after,
            expected_loglik: q,
        });

        if t >= config.window
            && has_converged(&histories, t, config.window, config.slope_threshold)?
        {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        classifier: FittedClassifier::Single(classifier),
        propensity,
        iterations_run: trace.len(),
        converged,
        trace,
    })
}

/// The constant a propensity model evaluates to everywhere, when it is
/// input-independent.
fn constant_of(pm: &PropensityModel) -> Option<f64> {
    match pm {
        PropensityModel::Constant { c } => Some(*c),
        PropensityModel::Fitted { model, .. } if model.n_features() == 0 => {
            Some(clip_unit(1.0 / (1.0 + (-model.intercept).exp())))
        }
        _ => None,
    }
}

/// Multi-SCAR: one independent SCAR-EM model per distinct assignment of the
/// (binary) propensity attributes. Strata with fewer than 10 rows or without
/// both label values fall back to a single global SCAR model, whose trace is
/// the one reported.
pub fn fit_multi_scar(
    x: &FeatureMatrix,
    s: &[u8],
    selector: &PropensitySelector,
    config: &EmConfig,
) -> Result<FitResult> {
    if selector.is_empty() {
        return Err(Error::invalid("multi-SCAR requires a non-empty selector"));
    }
    selector.validate_for(x)?;
    let global = fit_sar_em(x, s, &EmVariant::Scar, config)?;
    let global_clf = match &global.classifier {
        FittedClassifier::Single(clf) => clf.clone(),
        FittedClassifier::Stratified { .. } => unreachable!("SCAR fit is single"),
    };
    let global_c =
        constant_of(&global.propensity).expect("SCAR propensity is input-independent");

    let xe = selector.select(x)?;
    let mut groups: BTreeMap<Vec<u8>, Vec<usize>> = BTreeMap::new();
    for i in 0..x.rows() {
        let key = binary_assignment(&xe.row_values(i))?;
        groups.entry(key).or_default().push(i);
    }

    let mut strata = BTreeMap::new();
    let mut oracle_map = BTreeMap::new();
    let mut iterations = global.iterations_run;
    let mut converged = global.converged;
    for (key, rows) in groups {
        let sub_s: Vec<u8> = rows.iter().map(|&i| s[i]).collect();
        let viable = rows.len() >= 10
            && sub_s.iter().any(|&v| v == 1)
            && sub_s.iter().any(|&v| v == 0);
        if viable {
            let sub_x = x.select_rows(&rows)?;
            let r = fit_sar_em(&sub_x, &sub_s, &EmVariant::Scar, config)?;
            let c = constant_of(&r.propensity).expect("SCAR propensity is input-independent");
            if let FittedClassifier::Single(clf) = r.classifier {
                strata.insert(key.clone(), clf);
            }
            oracle_map.insert(key, c);
            iterations = iterations.max(r.iterations_run);
            converged &= r.converged;
        } else {
            oracle_map.insert(key, global_c);
        }
    }

    let function = OracleFunction::new(oracle_map)?.with_default(global_c)?;
    Ok(FitResult {
        classifier: FittedClassifier::Stratified {
            selector: selector.clone(),
            strata,
            fallback: global_clf,
        },
        propensity: PropensityModel::Oracle {
            function,
            selector: selector.clone(),
        },
        iterations_run: iterations,
        converged,
        trace: global.trace,
    })
}
