//! Finite-difference check of the optimizer's analytic gradient.

use nalgebra::DVector;
use sarpu::optimizer::{penalized_gradient, weighted_log_likelihood, FeatureMatrix, LogisticModel};
use sarpu::rng::unit_uniform;

fn penalized_objective(
    x: &FeatureMatrix,
    targets: &[f64],
    weights: &[f64],
    model: &LogisticModel,
    lambda: f64,
) -> f64 {
    weighted_log_likelihood(model, x, targets, weights).unwrap()
        - lambda * model.coefficients.norm_squared()
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let n = 40;
    let d = 4;
    let lambda = 1e-4;
    let step = 1e-5;

    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..d).map(|j| unit_uniform(1, "x", (i * d + j) as u64)).collect())
        .collect();
    let x = FeatureMatrix::from_rows(&rows).unwrap();
    let targets: Vec<f64> = (0..n)
        .map(|i| f64::from(unit_uniform(1, "t", i as u64) < 0.5))
        .collect();
    let weights: Vec<f64> = (0..n).map(|i| 0.25 + unit_uniform(1, "w", i as u64)).collect();

    let mut checked = 0;
    for point in 0..100u64 {
        // random parameter point in [-2, 2]^(d+1)
        let coefficients = DVector::from_fn(d, |j, _| {
            4.0 * unit_uniform(2, "coef", point * 10 + j as u64) - 2.0
        });
        let intercept = 4.0 * unit_uniform(2, "int", point) - 2.0;
        let model = LogisticModel {
            coefficients,
            intercept,
            converged: true,
        };

        let analytic = penalized_gradient(&x, &targets, &weights, &model, lambda).unwrap();

        for k in 0..=d {
            let mut plus = model.clone();
            let mut minus = model.clone();
            if k < d {
                plus.coefficients[k] += step;
                minus.coefficients[k] -= step;
            } else {
                plus.intercept += step;
                minus.intercept -= step;
            }
            let numeric = (penalized_objective(&x, &targets, &weights, &plus, lambda)
                - penalized_objective(&x, &targets, &weights, &minus, lambda))
                / (2.0 * step);
            let denom = numeric.abs().max(analytic[k].abs()).max(1e-8);
            let rel = (numeric - analytic[k]).abs() / denom;
            assert!(
                rel <= 1e-4,
                "point {point}, component {k}: analytic {} vs numeric {numeric}",
                analytic[k]
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 100 * (d + 1));
}
