//! Metrics and cross-validation aggregation: F1, absolute class-prior
//! error, propensity-score error, and the 5-seed x 5-fold protocol.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::PropensityModel;
use crate::optimizer;
use crate::pu_data::{
    apply_mechanism, class_prior, make_folds, propensity_truth, Dataset, LabelMechanism,
};
use crate::rng;
use crate::sarem::{fit_sar_em, EmConfig, EmVariant, FittedClassifier};

/// The compared learners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Logistic regression on the true class labels.
    Supervised,
    Sar,
    /// SAR-EM with the true propensity score held fixed.
    SarE,
    Scar,
    /// SCAR with the true label frequency held fixed.
    ScarC,
    MultiScar,
}

impl Method {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "supervised" => Ok(Method::Supervised),
            "sar" => Ok(Method::Sar),
            "sar-e" => Ok(Method::SarE),
            "scar" => Ok(Method::Scar),
            "scar-c" => Ok(Method::ScarC),
            "multi-scar" => Ok(Method::MultiScar),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Supervised => "supervised",
            Method::Sar => "sar",
            Method::SarE => "sar-e",
            Method::Scar => "scar",
            Method::ScarC => "scar-c",
            Method::MultiScar => "multi-scar",
        }
    }

    pub fn has_propensity_model(self) -> bool {
        self != Method::Supervised
    }
}

/// F1 of binary predictions; 0 when precision and recall are both undefined.
pub fn f1_score(y_true: &[u8], y_pred: &[u8]) -> f64 {
    debug_assert_eq!(y_true.len(), y_pred.len());
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// `|alpha_hat - alpha|`.
pub fn abs_prior_error(alpha_hat: f64, alpha: f64) -> f64 {
    (alpha_hat - alpha).abs()
}

/// Mean absolute and mean squared error between predicted and true
/// propensity scores.
pub fn propensity_error(e_hat: &[f64], e_true: &[f64]) -> Result<(f64, f64)> {
    if e_hat.len() != e_true.len() {
        return Err(Error::DimensionMismatch {
            expected: e_true.len(),
            got: e_hat.len(),
            context: "propensity_error".into(),
        });
    }
    let n = e_hat.len() as f64;
    let mut mae = 0.0;
    let mut mse = 0.0;
    for (&a, &b) in e_hat.iter().zip(e_true) {
        let d = (a - b).abs();
        mae += d;
        mse += d * d;
    }
    Ok((mae / n, mse / n))
}

/// Two-pass mean and (population-corrected) standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One (fold seed, held-out fold) evaluation cell.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub fold_seed: u64,
    pub fold: usize,
    pub f1: f64,
    /// Class-prior estimate: mean posterior over training rows.
    pub alpha_hat: f64,
    /// Label-rate estimate `Pr(s=1)/c_hat`, available when the fitted
    /// propensity is a constant.
    pub alpha_hat_from_c: Option<f64>,
    pub abs_prior_error: f64,
    pub propensity_mae: Option<f64>,
    pub propensity_mse: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Per-iteration (mean propensity prediction, penalized lower bound);
    /// empty for the supervised baseline.
    pub trace: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

fn summarize(values: impl Iterator<Item = f64>) -> Option<Summary> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    let (mean, sd) = mean_sd(&v);
    Some(Summary { mean, sd })
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub method: Method,
    pub per_fold: Vec<RunMetrics>,
    pub f1: Summary,
    pub abs_prior_error: Summary,
    pub propensity_mae: Option<Summary>,
    pub propensity_mse: Option<Summary>,
}

fn constant_of(pm: &PropensityModel) -> Option<f64> {
    match pm {
        PropensityModel::Constant { c } => Some(*c),
        PropensityModel::Fitted { model, .. } if model.n_features() == 0 => {
            Some(1.0 / (1.0 + (-model.intercept).exp()))
        }
        _ => None,
    }
}

/// Mean oracle propensity over the positive training rows: the effective
/// label frequency of a SAR mechanism.
fn true_label_frequency(mech: &LabelMechanism, train: &Dataset) -> Result<f64> {
    let y = train
        .y
        .as_ref()
        .ok_or_else(|| Error::MissingTruth("label frequency needs ground truth".into()))?;
    let truth = propensity_truth(mech, &train.features)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..train.rows() {
        if y[i] == 1 {
            sum += truth[i];
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::DegenerateData("no positive training rows".into()));
    }
    Ok(sum / n as f64)
}

struct CellOutput {
    posterior_train: Vec<f64>,
    posterior_test: Vec<f64>,
    propensity_test: Option<Vec<f64>>,
    c_hat: Option<f64>,
    iterations: usize,
    converged: bool,
    trace: Vec<(f64, f64)>,
}

fn run_cell(
    method: Method,
    train: &Dataset,
    test: &Dataset,
    s_train: &[u8],
    mech: &LabelMechanism,
    config: &EmConfig,
) -> Result<CellOutput> {
    match method {
        Method::Supervised => {
            let y = train.y.as_ref().expect("checked by caller");
            let targets: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
            let weights = vec![1.0; train.rows()];
            let model =
                optimizer::fit(&train.features, &targets, &weights, &config.optimizer)?;
            Ok(CellOutput {
                posterior_train: optimizer::predict_proba(&model, &train.features)?,
                posterior_test: optimizer::predict_proba(&model, &test.features)?,
                propensity_test: None,
                c_hat: None,
                iterations: 0,
                converged: true,
                trace: Vec::new(),
            })
        }
        _ => {
            let variant = match method {
                Method::Sar => EmVariant::Sar {
                    selector: mech.selector(),
                },
                Method::Scar => EmVariant::Scar,
                Method::SarE => EmVariant::SarKnownE {
                    propensity: mech.oracle_model()?,
                },
                Method::ScarC => EmVariant::ScarKnownC {
                    c: true_label_frequency(mech, train)?,
                },
                Method::MultiScar => EmVariant::MultiScar {
                    selector: mech.selector(),
                },
                Method::Supervised => unreachable!(),
            };
            let r = fit_sar_em(&train.features, s_train, &variant, config)?;
            let trace = r
                .trace
                .iter()
                .map(|rec| {
                    let n = rec.propensity_predictions.len().max(1) as f64;
                    let mean_e = rec.propensity_predictions.iter().sum::<f64>() / n;
                    (mean_e, rec.expected_loglik)
                })
                .collect();
            Ok(CellOutput {
                posterior_train: r.classifier.posterior(&train.features)?,
                posterior_test: r.classifier.posterior(&test.features)?,
                propensity_test: Some(r.propensity.scores(&test.features)?),
                c_hat: constant_of(&r.propensity),
                iterations: r.iterations_run,
                converged: r.converged,
                trace,
            })
        }
    }
}

/// Run the full protocol: for every fold seed, split into `k` folds, and for
/// every held-out fold relabel the training portion through the mechanism,
/// fit, and evaluate on held-out ground truth.
pub fn cross_validate(
    ds: &Dataset,
    mech: &LabelMechanism,
    method: Method,
    config: &EmConfig,
    fold_seeds: &[u64],
    k: usize,
) -> Result<MetricReport> {
    ds.y.as_ref()
        .ok_or_else(|| Error::MissingTruth("cross-validation needs ground truth".into()))?;
    if fold_seeds.is_empty() {
        return Err(Error::invalid("at least one fold seed is required"));
    }

    let cells: Vec<(u64, usize)> = fold_seeds
        .iter()
        .flat_map(|&seed| (0..k).map(move |fold| (seed, fold)))
        .collect();

    let results: Result<Vec<RunMetrics>> = cells
        .par_iter()
        .map(|&(fold_seed, fold)| {
            let plan = make_folds(ds.rows(), k, fold_seed)?;
            let train_rows = plan.complement_rows(fold);
            let test_rows = plan.fold_rows(fold);
            let train = ds.select_rows(&train_rows)?;
            let test = ds.select_rows(&test_rows)?;
            let y_train = train.y.as_ref().expect("truth present");

            let label_seed = rng::derive_seed(fold_seed, "label", fold as u64);
            let s_train = apply_mechanism(y_train, &train.features, mech, label_seed)?;

            let out = run_cell(method, &train, &test, &s_train, mech, config)?;

            let y_test = test.y.as_ref().expect("truth present");
            let y_pred: Vec<u8> = out
                .posterior_test
                .iter()
                .map(|&p| u8::from(p >= 0.5))
                .collect();
            let f1 = f1_score(y_test, &y_pred);

            let alpha = class_prior(&train)?;
            let alpha_hat = out.posterior_train.iter().sum::<f64>()
                / out.posterior_train.len() as f64;
            let label_rate =
                s_train.iter().map(|&v| f64::from(v)).sum::<f64>() / s_train.len() as f64;
            let alpha_hat_from_c = out
                .c_hat
                .map(|c| (label_rate / c).clamp(0.0, 1.0));

            let (propensity_mae, propensity_mse) = match &out.propensity_test {
                Some(e_hat) => {
                    let e_true = propensity_truth(mech, &test.features)?;
                    let (mae, mse) = propensity_error(e_hat, &e_true)?;
                    (Some(mae), Some(mse))
                }
                None => (None, None),
            };

            Ok(RunMetrics {
                fold_seed,
                fold,
                f1,
                alpha_hat,
                alpha_hat_from_c,
                abs_prior_error: abs_prior_error(alpha_hat, alpha),
                propensity_mae,
                propensity_mse,
                iterations: out.iterations,
                converged: out.converged,
                trace: out.trace,
            })
        })
        .collect();
    let per_fold = results?;

    let f1 = summarize(per_fold.iter().map(|r| r.f1)).expect("non-empty");
    let prior = summarize(per_fold.iter().map(|r| r.abs_prior_error)).expect("non-empty");
    let mae = summarize(per_fold.iter().filter_map(|r| r.propensity_mae));
    let mse = summarize(per_fold.iter().filter_map(|r| r.propensity_mse));
    Ok(MetricReport {
        method,
        per_fold,
        f1,
        abs_prior_error: prior,
        propensity_mae: mae,
        propensity_mse: mse,
    })
}

/// Posterior of a fitted classifier thresholded at 0.5.
pub fn predictions_at_half(clf: &FittedClassifier, ds: &Dataset) -> Result<Vec<u8>> {
    Ok(clf
        .posterior(&ds.features)?
        .iter()
        .map(|&p| u8::from(p >= 0.5))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pu_data::synthetic::{generate, SyntheticConfig};
    use crate::rng;

    #[test]
    fn f1_trivial_cases() {
        assert_eq!(f1_score(&[1, 0, 1, 0], &[1, 0, 1, 0]), 1.0);
        assert_eq!(f1_score(&[1, 1, 0], &[0, 0, 0]), 0.0);
        // TP=2, FP=1, FN=1
        let t = [1, 1, 1, 0, 0];
        let p = [1, 1, 0, 1, 0];
        assert!((f1_score(&t, &p) - 2.0 / 3.0).abs() < 1e-12);
    }

    // brute-force confusion matrix oracle
    fn f1_reference(y_true: &[u8], y_pred: &[u8]) -> f64 {
        let tp = y_true
            .iter()
            .zip(y_pred)
            .filter(|&(&t, &p)| t == 1 && p == 1)
            .count() as f64;
        let pred_pos = y_pred.iter().filter(|&&p| p == 1).count() as f64;
        let actual_pos = y_true.iter().filter(|&&t| t == 1).count() as f64;
        if tp == 0.0 {
            return 0.0;
        }
        let precision = tp / pred_pos;
        let recall = tp / actual_pos;
        2.0 * precision * recall / (precision + recall)
    }

    #[test]
    fn f1_matches_brute_force_on_random_vectors() {
        for trial in 0..300 {
            let len = 1 + (rng::unit_uniform(7, "len", trial) * 19.0) as usize;
            let t: Vec<u8> = (0..len)
                .map(|i| u8::from(rng::unit_uniform(7, "t", trial * 100 + i as u64) < 0.5))
                .collect();
            let p: Vec<u8> = (0..len)
                .map(|i| u8::from(rng::unit_uniform(7, "p", trial * 100 + i as u64) < 0.5))
                .collect();
            assert_eq!(f1_score(&t, &p), f1_reference(&t, &p));
        }
    }

    #[test]
    fn prior_error_basics() {
        assert_eq!(abs_prior_error(0.4, 0.4), 0.0);
        assert!((abs_prior_error(0.58, 0.5) - 0.08).abs() < 1e-15);
        assert_eq!(abs_prior_error(0.2, 0.7), abs_prior_error(0.7, 0.2));
    }

    #[test]
    fn propensity_error_cases() {
        let v = vec![0.3, 0.6, 0.9];
        assert_eq!(propensity_error(&v, &v).unwrap(), (0.0, 0.0));

        let (mae, mse) = propensity_error(&vec![0.5; 4], &vec![0.3; 4]).unwrap();
        assert!((mae - 0.2).abs() < 1e-12 && (mse - 0.04).abs() < 1e-12);

        let (mae, mse) = propensity_error(&[0.1, 0.9], &[0.2, 0.6]).unwrap();
        assert!((mae - 0.2).abs() < 1e-12 && (mse - 0.05).abs() < 1e-12);

        assert!(propensity_error(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn mse_at_most_mae_for_unit_errors() {
        for trial in 0..100 {
            let e_hat: Vec<f64> = (0..10)
                .map(|i| rng::unit_uniform(11, "a", trial * 10 + i))
                .collect();
            let e_true: Vec<f64> = (0..10)
                .map(|i| rng::unit_uniform(11, "b", trial * 10 + i))
                .collect();
            let (mae, mse) = propensity_error(&e_hat, &e_true).unwrap();
            assert!(mse <= mae + 1e-15);
        }
    }

    #[test]
    fn mean_sd_matches_reference() {
        let vals: Vec<f64> = (0..50).map(|i| rng::unit_uniform(13, "v", i)).collect();
        let (mean, sd) = mean_sd(&vals);
        let ref_mean = vals.iter().sum::<f64>() / 50.0;
        let ref_var = vals.iter().map(|v| (v - ref_mean).powi(2)).sum::<f64>() / 49.0;
        assert!((mean - ref_mean).abs() < 1e-12);
        assert!((sd - ref_var.sqrt()).abs() < 1e-12);
    }

    fn small_dataset() -> Dataset {
        generate(&SyntheticConfig {
            rows: 300,
            features: 6,
            seed: 21,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn cross_validate_shape_and_determinism() {
        let ds = small_dataset();
        let mech = LabelMechanism::Scar { c: 0.5 };
        let config = EmConfig {
            max_iterations: 15,
            ..Default::default()
        };
        let seeds = [1, 2, 3, 4, 5];
        let a = cross_validate(&ds, &mech, Method::Scar, &config, &seeds, 5).unwrap();
        assert_eq!(a.per_fold.len(), 25);
        let b = cross_validate(&ds, &mech, Method::Scar, &config, &seeds, 5).unwrap();
        assert_eq!(a.f1.mean, b.f1.mean);
        for (x, y) in a.per_fold.iter().zip(&b.per_fold) {
            assert_eq!(x.f1, y.f1);
            assert_eq!(x.propensity_mae, y.propensity_mae);
        }
    }

    #[test]
    fn supervised_emits_no_propensity_metrics() {
        let ds = small_dataset();
        let mech = LabelMechanism::Scar { c: 0.5 };
        let config = EmConfig::default();
        let r = cross_validate(&ds, &mech, Method::Supervised, &config, &[1], 5).unwrap();
        assert!(r.propensity_mae.is_none());
        assert!(r.per_fold.iter().all(|m| m.propensity_mae.is_none()));
        assert!(r.f1.mean > 0.5);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::Supervised,
            Method::Sar,
            Method::SarE,
            Method::Scar,
            Method::ScarC,
            Method::MultiScar,
        ] {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("bogus").is_err());
    }
}
