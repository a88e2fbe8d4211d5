//! Seeded synthetic datasets with binary features and a logistic ground
//! truth, used for experiments and tests.

use crate::error::Result;
use crate::optimizer::FeatureMatrix;
use crate::rng;

use super::Dataset;

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub rows: usize,
    pub features: usize,
    /// Standard deviation of the ground-truth logistic weights.
    pub weight_scale: f64,
    pub intercept: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            rows: 5000,
            features: 20,
            weight_scale: 1.5,
            intercept: 0.0,
            seed: 0,
        }
    }
}

fn gaussian(seed: u64, tag: &str, index: u64) -> f64 {
    let u1 = rng::unit_uniform(seed, tag, 2 * index).max(1e-12);
    let u2 = rng::unit_uniform(seed, tag, 2 * index + 1);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Bernoulli(0.5) binary features, class drawn from a logistic model with
/// seeded gaussian weights. PU labels start out all zero; apply a label
/// mechanism to obtain them.
pub fn generate(config: &SyntheticConfig) -> Result<Dataset> {
    let weights: Vec<f64> = (0..config.features)
        .map(|j| config.weight_scale * gaussian(config.seed, "weight", j as u64))
        .collect();
    let mut rows = Vec::with_capacity(config.rows);
    let mut y = Vec::with_capacity(config.rows);
    for i in 0..config.rows {
        let row: Vec<f64> = (0..config.features)
            .map(|j| {
                f64::from(
                    rng::unit_uniform(config.seed, "feature", (i * config.features + j) as u64)
                        < 0.5,
                )
            })
            .collect();
        // centered features so the class prior stays near 0.5 regardless of
        // the drawn weights
        let z: f64 = config.intercept
            + row.iter().zip(&weights).map(|(x, w)| (x - 0.5) * w).sum::<f64>();
        let p = 1.0 / (1.0 + (-z).exp());
        y.push(u8::from(rng::unit_uniform(config.seed, "class", i as u64) < p));
        rows.push(row);
    }
    let names = (0..config.features).map(|j| format!("f{j}")).collect();
    Dataset::new(
        FeatureMatrix::from_rows(&rows)?,
        vec![0; config.rows],
        Some(y),
        names,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generates_requested_shape_and_is_deterministic() {
        let cfg = SyntheticConfig {
            rows: 200,
            features: 5,
            seed: 3,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.rows(), 200);
        assert_eq!(a.features.cols(), 5);
        assert_eq!(a.y, b.y);
        assert_eq!(a.features, b.features);

        // features are binary with roughly balanced frequency
        for j in 0..5 {
            let freq: f64 = (0..200).map(|i| a.features.value(i, j)).sum::<f64>() / 200.0;
            assert!((0.3..=0.7).contains(&freq), "feature {j} frequency {freq}");
        }
        // both classes present
        let y = a.y.unwrap();
        assert!(y.iter().any(|&v| v == 0) && y.iter().any(|&v| v == 1));
    }
}
