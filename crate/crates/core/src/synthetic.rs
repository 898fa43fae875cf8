//! Synthetic workloads whose match proportion follows a logistic curve in
//! the metric, with adjustable steepness and per-subset noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InstancePair, Label, Workload};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    pub subset_size: usize,
    /// Steepness of the logistic curve.
    pub tau: f64,
    /// Scale of the per-subset deviation from the curve.
    pub sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau {} must be positive", self.tau)));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma {} must be non-negative", self.sigma)));
        }
        if self.subset_size == 0 || self.n_pairs < self.subset_size {
            return Err(Error::Config(format!(
                "need at least one subset: {} pairs, subset size {}",
                self.n_pairs, self.subset_size
            )));
        }
        Ok(())
    }
}

/// `0.95 / (1 + exp(-tau (v - 0.55)))`.
pub fn logistic_proportion(v: f64, tau: f64) -> f64 {
    0.95 / (1.0 + (-tau * (v - 0.55)).exp())
}

/// Draws uniform metrics, cuts the sorted pairs into subsets and gives each
/// subset a match proportion `p(mean metric) + e`, clamped to `[0, 1]`, with
/// `e ~ N(0, sigma^2 p (1 - p))`. Each pair is then a match with that
/// probability.
pub fn generate(spec: &SyntheticSpec) -> Result<Workload> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut metrics: Vec<f64> = (0..spec.n_pairs).map(|_| rng.random::<f64>()).collect();
    metrics.sort_by(f64::total_cmp);
    let width = spec.n_pairs.to_string().len();
    let mut pairs = Vec::with_capacity(spec.n_pairs);
    for chunk in metrics.chunks(spec.subset_size) {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        let p = logistic_proportion(mean, spec.tau);
        let sd = spec.sigma * (p * (1.0 - p)).sqrt();
        let noise = Normal::new(0.0, sd)
            .map_err(|e| Error::Config(format!("noise distribution: {e}")))?
            .sample(&mut rng);
        let r = (p + noise).clamp(0.0, 1.0);
        for &metric in chunk {
            let id = format!("s{:0width$}", pairs.len());
            let truth = Label::from_bool(rng.random_bool(r));
            pairs.push(InstancePair::new(id, metric, Some(truth)));
        }
    }
    Workload::new(pairs, spec.subset_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_workload;
    use approx::assert_abs_diff_eq;

    fn spec(n_pairs: usize, tau: f64, sigma: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_pairs,
            subset_size: 200,
            tau,
            sigma,
            seed,
        }
    }

    #[test]
    fn logistic_values() {
        for tau in [1.0, 8.0, 18.0] {
            assert_abs_diff_eq!(logistic_proportion(0.55, tau), 0.475, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(logistic_proportion(1.0, 18.0), 0.95 / (1.0 + (-8.1f64).exp()), epsilon = 1e-15);
        assert_abs_diff_eq!(logistic_proportion(1.0, 18.0), 0.94971, epsilon = 1e-5);
        assert_abs_diff_eq!(logistic_proportion(0.0, 1e-9), 0.475, epsilon = 1e-9);
    }

    #[test]
    fn deterministic_under_seed() {
        let csv = |seed| {
            let mut buf = Vec::new();
            write_workload(&generate(&spec(5_000, 14.0, 0.1, seed)).unwrap(), &mut buf).unwrap();
            buf
        };
        assert_eq!(csv(7), csv(7));
        assert_ne!(csv(7), csv(8));
    }

    #[test]
    fn counts_and_ranges() {
        let w = generate(&spec(10_050, 8.0, 0.3, 1)).unwrap();
        assert_eq!(w.len(), 10_050);
        assert_eq!(w.subset_count(), 51);
        assert!(w.has_truth());
        assert!(w.pairs().iter().all(|p| (0.0..=1.0).contains(&p.metric)));
        assert!(spec(100, 0.0, 0.1, 1).validate().is_err());
        assert!(spec(100, 1.0, -0.1, 1).validate().is_err());
        assert!(spec(100, 1.0, 0.1, 1).validate().is_err());
    }

    /// Standardized squared deviation of each subset's match fraction from
    /// the curve, under the model's own variance (curve noise plus Bernoulli).
    fn mean_standardized_deviation(w: &Workload, tau: f64, sigma: f64) -> f64 {
        let m = w.subset_count();
        let mut total = 0.0;
        for i in 0..m {
            let range = w.subset(i);
            let n = range.len() as f64;
            let p = logistic_proportion(w.subset_mean_metric(i), tau);
            let observed = w.true_matches(range).unwrap() as f64 / n;
            let var = sigma * sigma * p * (1.0 - p) + p * (1.0 - p) / n;
            total += (observed - p).powi(2) / var;
        }
        total / m as f64
    }

    #[test]
    fn noiseless_curve() {
        let w = generate(&spec(100_000, 14.0, 0.0, 3)).unwrap();
        let z = mean_standardized_deviation(&w, 14.0, 0.0);
        assert!((z - 1.0).abs() < 0.2, "{z}");
    }

    #[test]
    fn noise_matches_model() {
        let w = generate(&spec(100_000, 14.0, 0.1, 5)).unwrap();
        let z = mean_standardized_deviation(&w, 14.0, 0.1);
        assert!((z - 1.0).abs() < 0.2, "{z}");
        // Ignoring the curve noise would overstate the deviation markedly.
        assert!(mean_standardized_deviation(&w, 14.0, 0.0) > 2.0);
    }
}
