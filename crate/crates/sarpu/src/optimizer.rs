//! Weighted binary logistic regression, the single model family used for both
//! the classifier and the propensity score model.
//!
//! Fitting maximizes the weighted, L2-penalized log-likelihood
//! `sum_i w_i [t_i log p_i + (1 - t_i) log(1 - p_i)] - lambda * ||coef||^2`
//! by full-batch Newton ascent (IRLS) with step halving. The intercept is
//! always included and never penalized. Targets may be soft (in `[0,1]`),
//! which is objective-identical to duplicating a row as a weighted 1/0 pair.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clip applied to every emitted probability; keeps ratios like
/// `p/(1-p)` finite everywhere downstream.
pub const CLIP_LO: f64 = 1e-12;

/// Dense row-major feature matrix with values expected in `[0,1]` after
/// preprocessing (not enforced; only finiteness is).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
}

impl FeatureMatrix {
    /// Build from rows. Requires at least one row and one column and all
    /// values finite.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("feature matrix needs at least one row"));
        }
        let cols = rows[0].len();
        if cols == 0 {
            return Err(Error::invalid("feature matrix needs at least one column"));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                    context: format!("row {i}"),
                });
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite feature value at row {i}, col {j}"
                )));
            }
        }
        let data = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
        Ok(Self { data })
    }

    /// An all-intercept design: zero feature columns. Used internally for
    /// constant (SCAR) propensity fits; not constructible via `from_rows`.
    pub(crate) fn empty_cols(rows: usize) -> Self {
        Self {
            data: DMatrix::zeros(rows, 0),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.data[(row, col)]
    }

    pub fn row_values(&self, row: usize) -> Vec<f64> {
        (0..self.cols()).map(|j| self.data[(row, j)]).collect()
    }

    pub(crate) fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Restrict to a subset of columns (possibly empty), preserving order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        for &j in indices {
            if j >= self.cols() {
                return Err(Error::invalid(format!(
                    "column index {j} out of range (cols = {})",
                    self.cols()
                )));
            }
        }
        let data = DMatrix::from_fn(self.rows(), indices.len(), |i, k| {
            self.data[(i, indices[k])]
        });
        Ok(Self { data })
    }

    /// Restrict to a subset of rows, preserving order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("row selection must be non-empty"));
        }
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::invalid(format!(
                    "row index {i} out of range (rows = {})",
                    self.rows()
                )));
            }
        }
        let data = DMatrix::from_fn(indices.len(), self.cols(), |k, j| {
            self.data[(indices[k], j)]
        });
        Ok(Self { data })
    }

    /// Stack matrices vertically. All inputs must share the column count.
    pub fn vstack(parts: &[&FeatureMatrix]) -> Result<Self> {
        let cols = parts
            .first()
            .ok_or_else(|| Error::invalid("vstack needs at least one part"))?
            .cols();
        let rows: usize = parts.iter().map(|p| p.rows()).sum();
        for p in parts {
            if p.cols() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: p.cols(),
                    context: "vstack column count".into(),
                });
            }
        }
        let mut data = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            data.rows_mut(at, p.rows()).copy_from(&p.data);
            at += p.rows();
        }
        Ok(Self { data })
    }
}

/// Configuration for the IRLS solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// L2 penalty on the coefficients (never the intercept).
    pub lambda: f64,
    /// Convergence: infinity norm of the penalized gradient.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            gradient_tolerance: 1e-8,
            max_iterations: 1000,
        }
    }
}

/// Fitted logistic model: coefficient per feature column plus an intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub coefficients: DVector<f64>,
    pub intercept: f64,
    /// False when the solver hit `max_iterations` before meeting the
    /// gradient tolerance; the model is still the best iterate found.
    pub converged: bool,
}

impl LogisticModel {
    pub fn zeros(n_features: usize) -> Self {
        Self {
            coefficients: DVector::zeros(n_features),
            intercept: 0.0,
            converged: true,
        }
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clip(p: f64) -> f64 {
    p.clamp(CLIP_LO, 1.0 - CLIP_LO)
}

fn check_training_input(x: &FeatureMatrix, targets: &[f64], weights: &[f64]) -> Result<()> {
    if targets.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            got: targets.len(),
            context: "targets".into(),
        });
    }
    if weights.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            got: weights.len(),
            context: "weights".into(),
        });
    }
    for (i, &t) in targets.iter().enumerate() {
        if !t.is_finite() || !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("target {t} at row {i} not in [0,1]")));
        }
    }
    let mut any_positive = false;
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::invalid(format!(
                "weight {w} at row {i} must be finite and nonnegative"
            )));
        }
        if w > 0.0 {
            any_positive = true;
        }
    }
    if !any_positive {
        return Err(Error::DegenerateData("all weights are zero".into()));
    }
    Ok(())
}

/// Unclipped linear predictor probabilities for internal solver use.
fn raw_probs(x: &DMatrix<f64>, coef: &DVector<f64>, intercept: f64) -> DVector<f64> {
    let mut eta = if coef.len() == 0 {
        DVector::from_element(x.nrows(), 0.0)
    } else {
        x * coef
    };
    eta.add_scalar_mut(intercept);
    eta.apply(|z| *z = sigmoid(*z));
    eta
}

/// Penalized objective at given parameters.
fn objective(
    x: &DMatrix<f64>,
    targets: &[f64],
    weights: &[f64],
    coef: &DVector<f64>,
    intercept: f64,
    lambda: f64,
) -> f64 {
    let p = raw_probs(x, coef, intercept);
    let mut ll = 0.0;
    for i in 0..targets.len() {
        if weights[i] == 0.0 {
            continue;
        }
        let pi = clip(p[i]);
        ll += weights[i] * (targets[i] * pi.ln() + (1.0 - targets[i]) * (1.0 - pi).ln());
    }
    ll - lambda * coef.norm_squared()
}

/// Analytic gradient of the penalized objective, intercept last.
pub fn penalized_gradient(
    x: &FeatureMatrix,
    targets: &[f64],
    weights: &[f64],
    model: &LogisticModel,
    lambda: f64,
) -> Result<DVector<f64>> {
    check_training_input(x, targets, weights)?;
    if model.n_features() != x.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            got: model.n_features(),
            context: "model coefficients".into(),
        });
    }
    let p = raw_probs(x.matrix(), &model.coefficients, model.intercept);
    let n = x.rows();
    let mut resid = DVector::zeros(n);
    for i in 0..n {
        resid[i] = weights[i] * (targets[i] - p[i]);
    }
    let mut g = DVector::zeros(x.cols() + 1);
    if x.cols() > 0 {
        let gc = x.matrix().transpose() * &resid;
        for j in 0..x.cols() {
            g[j] = gc[j] - 2.0 * lambda * model.coefficients[j];
        }
    }
    g[x.cols()] = resid.sum();
    Ok(g)
}

/// Fit a weighted logistic regression, optionally warm-starting from a
/// previous model. `fit` starts from all-zero parameters.
pub fn fit_from(
    x: &FeatureMatrix,
    targets: &[f64],
    weights: &[f64],
    config: &OptimizerConfig,
    start: Option<&LogisticModel>,
) -> Result<LogisticModel> {
    check_training_input(x, targets, weights)?;
    let d = x.cols();
    let (mut coef, mut intercept) = match start {
        Some(m) => {
            if m.n_features() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: m.n_features(),
                    context: "warm start".into(),
                });
            }
            (m.coefficients.clone(), m.intercept)
        }
        None => (DVector::zeros(d), 0.0),
    };

    let xm = x.matrix();
    let n = x.rows();
    let mut obj = objective(xm, targets, weights, &coef, intercept, config.lambda);
    let mut converged = false;

    for _ in 0..config.max_iterations {
        let p = raw_probs(xm, &coef, intercept);

        // Gradient, intercept last.
        let mut resid = DVector::zeros(n);
        let mut hw = DVector::zeros(n);
        for i in 0..n {
            resid[i] = weights[i] * (targets[i] - p[i]);
            hw[i] = (weights[i] * p[i] * (1.0 - p[i])).max(0.0);
        }
        let mut grad = DVector::zeros(d + 1);
        if d > 0 {
            let gc = xm.transpose() * &resid;
            for j in 0..d {
                grad[j] = gc[j] - 2.0 * config.lambda * coef[j];
            }
        }
        grad[d] = resid.sum();

        if grad.amax() <= config.gradient_tolerance {
            converged = true;
            break;
        }

        // Negative Hessian of the penalized objective on the augmented
        // design [X | 1].
        let mut h = DMatrix::zeros(d + 1, d + 1);
        if d > 0 {
            let mut xw = xm.clone();
            for i in 0..n {
                let w = hw[i];
                for j in 0..d {
                    xw[(i, j)] *= w;
                }
            }
            let gram = xm.transpose() * &xw;
            h.view_mut((0, 0), (d, d)).copy_from(&gram);
            let cross = xw.row_sum_tr();
            for j in 0..d {
                h[(j, d)] = cross[j];
                h[(d, j)] = cross[j];
                h[(j, j)] += 2.0 * config.lambda;
            }
        }
        h[(d, d)] = hw.sum();

        // Solve H * delta = grad, adding jitter if the weights collapsed.
        let mut jitter = 0.0;
        let delta = loop {
            let mut hj = h.clone();
            if jitter > 0.0 {
                for j in 0..=d {
                    hj[(j, j)] += jitter;
                }
            }
            match hj.cholesky() {
                Some(ch) => break ch.solve(&grad),
                None => {
                    jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
                    if jitter > 1.0 {
                        // fall back to a scaled gradient step
                        break grad.clone() * (1.0 / (1.0 + h[(d, d)]));
                    }
                }
            }
        };

        // Step halving on the penalized objective. Near the optimum the true
        // gain of a Newton step falls below the float resolution of the
        // objective, so tiny apparent decreases are accepted as noise.
        let noise = 1e-12 * obj.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand_coef = if d > 0 {
                &coef + delta.rows(0, d) * step
            } else {
                coef.clone()
            };
            let cand_int = intercept + step * delta[d];
            let cand_obj = objective(xm, targets, weights, &cand_coef, cand_int, config.lambda);
            if cand_obj > obj - noise {
                let moved = cand_int != intercept || (d > 0 && cand_coef != coef);
                coef = cand_coef;
                intercept = cand_int;
                obj = obj.max(cand_obj);
                accepted = moved;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No representable ascent step left; treat as converged to
            // machine precision.
            converged = grad.amax() <= config.gradient_tolerance.max(1e-6);
            break;
        }
    }

    if !coef.iter().all(|v| v.is_finite()) || !intercept.is_finite() {
        return Err(Error::DegenerateData(
            "solver produced non-finite parameters".into(),
        ));
    }
    Ok(LogisticModel {
        coefficients: coef,
        intercept,
        converged,
    })
}

/// Fit starting from all-zero parameters.
pub fn fit(
    x: &FeatureMatrix,
    targets: &[f64],
    weights: &[f64],
    config: &OptimizerConfig,
) -> Result<LogisticModel> {
    fit_from(x, targets, weights, config, None)
}

/// Clipped sigmoid probabilities for each row of `x`.
pub fn predict_proba(model: &LogisticModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    if model.n_features() != x.cols() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            got: x.cols(),
            context: "predict_proba feature count".into(),
        });
    }
    let p = raw_probs(x.matrix(), &model.coefficients, model.intercept);
    Ok(p.iter().map(|&v| clip(v)).collect())
}

/// Weighted log-likelihood of `targets` under the model, using clipped
/// probabilities so the result is always finite.
pub fn weighted_log_likelihood(
    model: &LogisticModel,
    x: &FeatureMatrix,
    targets: &[f64],
    weights: &[f64],
) -> Result<f64> {
    if targets.len() != x.rows() || weights.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            got: targets.len().min(weights.len()),
            context: "weighted_log_likelihood".into(),
        });
    }
    let p = predict_proba(model, x)?;
    let mut ll = 0.0;
    for i in 0..x.rows() {
        if weights[i] == 0.0 {
            continue;
        }
        ll += weights[i] * (targets[i] * p[i].ln() + (1.0 - targets[i]) * (1.0 - p[i]).ln());
    }
    Ok(ll)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(vals: &[f64]) -> FeatureMatrix {
        FeatureMatrix::from_rows(&vals.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn sigmoid_midpoint_and_saturation() {
        let m = LogisticModel::zeros(1);
        let x = col(&[0.0, 1.0, -3.0]);
        let p = predict_proba(&m, &x).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));

        let hot = LogisticModel {
            coefficients: DVector::zeros(1),
            intercept: 50.0,
            converged: true,
        };
        let p = predict_proba(&hot, &x).unwrap();
        assert!(p.iter().all(|&v| (v - (1.0 - CLIP_LO)).abs() < 1e-15));
    }

    #[test]
    fn sigmoid_of_one() {
        let m = LogisticModel {
            coefficients: DVector::from_vec(vec![1.0]),
            intercept: 0.0,
            converged: true,
        };
        let x = col(&[0.0, 1.0]);
        let p = predict_proba(&m, &x).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_basics() {
        let m = LogisticModel::zeros(1);
        let x = col(&[0.3]);
        let ll = weighted_log_likelihood(&m, &x, &[1.0], &[1.0]).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-12);

        let ll0 = weighted_log_likelihood(&m, &x, &[1.0], &[0.0]).unwrap();
        assert_eq!(ll0, 0.0);
    }

    #[test]
    fn log_likelihood_additive() {
        let m = LogisticModel {
            coefficients: DVector::from_vec(vec![0.7]),
            intercept: -0.2,
            converged: true,
        };
        let x = col(&[0.1, 0.9]);
        let both = weighted_log_likelihood(&m, &x, &[1.0, 0.0], &[1.0, 2.0]).unwrap();
        let a = weighted_log_likelihood(&m, &col(&[0.1]), &[1.0], &[1.0]).unwrap();
        let b = weighted_log_likelihood(&m, &col(&[0.9]), &[0.0], &[2.0]).unwrap();
        assert!((both - (a + b)).abs() < 1e-12);
    }

    #[test]
    fn separated_data_stays_finite() {
        let x = col(&[0.0, 0.0, 1.0, 1.0]);
        let t = [0.0, 0.0, 1.0, 1.0];
        let w = [1.0; 4];
        let m = fit(&x, &t, &w, &OptimizerConfig::default()).unwrap();
        assert!(m.coefficients[0].is_finite());
        assert!(m.coefficients[0] > 0.0);
    }

    #[test]
    fn duplicated_half_weight_equals_single_full_weight() {
        let x1 = col(&[0.0, 0.2, 0.8, 1.0]);
        let t1 = [0.0, 0.0, 1.0, 1.0];
        let m1 = fit(&x1, &t1, &[1.0; 4], &OptimizerConfig::default()).unwrap();

        let x2 = col(&[0.0, 0.2, 0.8, 1.0, 0.0, 0.2, 0.8, 1.0]);
        let t2 = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0];
        let m2 = fit(&x2, &t2, &[0.5; 8], &OptimizerConfig::default()).unwrap();

        assert!((m1.coefficients[0] - m2.coefficients[0]).abs() < 1e-6);
        assert!((m1.intercept - m2.intercept).abs() < 1e-6);
    }

    #[test]
    fn two_point_fit_matches_grid_search() {
        // Independent oracle: dense grid over (coefficient, intercept).
        let x = col(&[0.0, 1.0]);
        let t = [0.0, 1.0];
        let w = [1.0, 1.0];
        let lambda = 1e-4;
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        let mut v = -30.0;
        while v <= 30.0 {
            let mut b = -30.0;
            while b <= 30.0 {
                let p0 = clip(sigmoid(b));
                let p1 = clip(sigmoid(v + b));
                let obj = (1.0 - p0).ln() + p1.ln() - lambda * v * v;
                if obj > best.0 {
                    best = (obj, v, b);
                }
                b += 0.05;
            }
            v += 0.05;
        }
        let cfg = OptimizerConfig {
            lambda,
            ..Default::default()
        };
        let m = fit(&x, &t, &w, &cfg).unwrap();
        let p = predict_proba(&m, &x).unwrap();
        assert!(p[0] < 0.5 && p[1] > 0.5);
        // grid resolution bounds the agreement
        assert!((m.coefficients[0] - best.1).abs() < 0.1);
        assert!((m.intercept - best.2).abs() < 0.1);
    }

    #[test]
    fn soft_targets_equal_duplicated_binary_rows() {
        let x = col(&[0.1, 0.5, 0.9]);
        let yhat = [0.3, 0.8, 0.5];
        let soft = fit(&x, &yhat, &[1.0; 3], &OptimizerConfig::default()).unwrap();

        let xd = col(&[0.1, 0.5, 0.9, 0.1, 0.5, 0.9]);
        let td = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let wd = [0.3, 0.8, 0.5, 0.7, 0.2, 0.5];
        let dup = fit(&xd, &td, &wd, &OptimizerConfig::default()).unwrap();

        assert!((soft.coefficients[0] - dup.coefficients[0]).abs() < 1e-8);
        assert!((soft.intercept - dup.intercept).abs() < 1e-8);
    }

    #[test]
    fn all_zero_weights_rejected() {
        let x = col(&[0.0, 1.0]);
        let err = fit(&x, &[0.0, 1.0], &[0.0, 0.0], &OptimizerConfig::default());
        assert!(matches!(err, Err(Error::DegenerateData(_))));
    }

    #[test]
    fn non_finite_input_rejected() {
        let err = FeatureMatrix::from_rows(&[vec![f64::NAN]]);
        assert!(err.is_err());
        let x = col(&[0.0, 1.0]);
        let err = fit(&x, &[0.0, 1.0], &[1.0, f64::INFINITY], &OptimizerConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn intercept_only_fit_recovers_mean() {
        let x = FeatureMatrix::empty_cols(4);
        let t = [1.0, 1.0, 1.0, 0.0];
        let m = fit(&x, &t, &[1.0; 4], &OptimizerConfig::default()).unwrap();
        assert!((sigmoid(m.intercept) - 0.75).abs() < 1e-8);
    }

    #[test]
    fn determinism_bit_identical() {
        let x = col(&[0.05, 0.3, 0.55, 0.7, 0.95]);
        let t = [0.0, 0.0, 1.0, 1.0, 1.0];
        let w = [1.0, 0.5, 2.0, 1.0, 0.25];
        let a = fit(&x, &t, &w, &OptimizerConfig::default()).unwrap();
        let b = fit(&x, &t, &w, &OptimizerConfig::default()).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
        assert!(a.intercept.to_bits() == b.intercept.to_bits());
    }

    #[test]
    fn gradient_near_zero_at_solution() {
        let x = col(&[0.0, 0.25, 0.5, 0.75, 1.0]);
        let t = [0.0, 0.0, 1.0, 1.0, 1.0];
        let w = [1.0; 5];
        let cfg = OptimizerConfig::default();
        let m = fit(&x, &t, &w, &cfg).unwrap();
        assert!(m.converged);
        let g = penalized_gradient(&x, &t, &w, &m, cfg.lambda).unwrap();
        assert!(g.amax() <= cfg.gradient_tolerance * 10.0);
    }

    #[test]
    fn weight_scaling_leaves_argmax_unchanged() {
        // With lambda scaled alongside the weights the optimum is identical.
        let x = col(&[0.0, 0.25, 0.5, 0.75, 1.0]);
        let t = [0.0, 1.0, 0.0, 1.0, 1.0];
        let w: Vec<f64> = vec![1.0, 2.0, 1.0, 0.5, 1.0];
        let w3: Vec<f64> = w.iter().map(|v| v * 3.0).collect();
        let cfg1 = OptimizerConfig {
            lambda: 1e-6,
            ..Default::default()
        };
        let cfg3 = OptimizerConfig {
            lambda: 3e-6,
            ..Default::default()
        };
        let m1 = fit(&x, &t, &w, &cfg1).unwrap();
        let m3 = fit(&x, &t, &w3, &cfg3).unwrap();
        assert!((m1.coefficients[0] - m3.coefficients[0]).abs() < 1e-5);
        assert!((m1.intercept - m3.intercept).abs() < 1e-5);
    }

    #[test]
    fn monotone_in_feature_with_positive_coefficient() {
        let x = col(&[0.0, 0.3, 0.6, 1.0]);
        let t = [0.0, 0.0, 1.0, 1.0];
        let m = fit(&x, &t, &[1.0; 4], &OptimizerConfig::default()).unwrap();
        assert!(m.coefficients[0] > 0.0);
        let grid = col(&[0.0, 0.1, 0.2, 0.5, 0.9, 1.0]);
        let p = predict_proba(&m, &grid).unwrap();
        assert!(p.windows(2).all(|w| w[0] <= w[1]));
    }
}
