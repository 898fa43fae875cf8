//! Stratified sampling of subsets and confidence intervals on match counts.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::model::Workload;
use crate::oracle::{LabelSource, Phase};

/// Pairs sampled per subset unless configured otherwise.
pub const DEFAULT_SAMPLE_SIZE: usize = 20;

/// Confidence levels above this are treated as this.
pub const MAX_CONFIDENCE: f64 = 0.9999;

/// Labeled sample of one subset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumSample {
    pub subset: usize,
    /// Pairs in the subset.
    pub population: usize,
    /// Pairs sampled.
    pub size: usize,
    pub matches: usize,
}

impl StratumSample {
    pub fn new(subset: usize, population: usize, size: usize, matches: usize) -> Result<Self> {
        if matches > size || size > population || size == 0 {
            return Err(Error::Config(format!(
                "stratum {subset}: need 0 <= matches ({matches}) <= k ({size}) <= n ({population}), k >= 1"
            )));
        }
        Ok(Self {
            subset,
            population,
            size,
            matches,
        })
    }

    pub fn proportion(&self) -> f64 {
        self.matches as f64 / self.size as f64
    }

    pub fn is_census(&self) -> bool {
        self.size == self.population
    }

    /// Contribution `n_i^2 (1 - k_i/n_i) s_i^2 / k_i` to the variance of the
    /// estimated match count; zero for a census.
    pub fn count_variance(&self) -> Result<f64> {
        if self.is_census() {
            return Ok(0.0);
        }
        if self.size < 2 {
            return Err(Error::Config(format!(
                "stratum {} has a sample of {}, need at least 2",
                self.subset, self.size
            )));
        }
        let (n, k, r) = (self.population as f64, self.size as f64, self.proportion());
        let s2 = r * (1.0 - r) * k / (k - 1.0);
        Ok(n * n * (1.0 - k / n) * s2 / k)
    }
}

/// Sample size used for a subset of `population` pairs.
pub fn sample_size(population: usize, requested: usize) -> usize {
    requested.min(population)
}

/// Labels `k` pairs of `subset` drawn uniformly without replacement.
///
/// The draw depends only on `seed` and the subset index.
pub fn draw_sample(
    workload: &Workload,
    subset: usize,
    k: usize,
    seed: u64,
    source: &LabelSource,
) -> Result<StratumSample> {
    let span = workload.subset(subset);
    let n = span.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "cannot sample {k} pairs from subset {subset} of {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subset as u64);
    let mut picks: Vec<usize> = index::sample(&mut rng, n, k).into_vec();
    picks.sort_unstable();
    let pairs: Vec<_> = picks.iter().map(|&i| workload.pair(span.start + i)).collect();
    let labels = source.ask_batch(&pairs, Phase::Sampling)?;
    let matches = labels.iter().filter(|l| l.is_match()).count();
    StratumSample::new(subset, n, k, matches)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    /// Estimated match proportion of the union.
    pub mean: f64,
    /// Standard deviation of `mean`.
    pub std: f64,
    pub population: usize,
    pub dof: usize,
}

/// Stratified mean and standard deviation with finite-population correction.
pub fn stratified_mean_std(samples: &[StratumSample]) -> Result<Estimate> {
    let population: usize = samples.iter().map(|s| s.population).sum();
    if population == 0 {
        return Err(Error::Config("no strata to estimate over".into()));
    }
    let n = population as f64;
    let mut mean = 0.0;
    let mut count_var = 0.0;
    for s in samples {
        mean += s.population as f64 / n * s.proportion();
        count_var += s.count_variance()?;
    }
    Ok(Estimate {
        mean,
        std: count_var.sqrt() / n,
        population,
        dof: degrees_of_freedom(samples.iter().map(|s| s.size).sum(), samples.len()),
    })
}

/// Total sample size minus strata, at least 1.
pub fn degrees_of_freedom(total_sampled: usize, strata: usize) -> usize {
    total_sampled.saturating_sub(strata).max(1)
}

/// Two-sided Student's t critical value: `P(-t < T < t) = theta`.
/// `dof = None` gives the normal limit.
pub fn t_quantile(theta: f64, dof: Option<usize>) -> f64 {
    let theta = theta.clamp(0.0, MAX_CONFIDENCE);
    let p = 0.5 + theta / 2.0;
    match dof {
        Some(d) => StudentsT::new(0.0, 1.0, d.max(1) as f64)
            .expect("valid t distribution")
            .inverse_cdf(p),
        None => z_quantile(theta),
    }
}

/// Two-sided standard normal critical value for confidence `theta`.
pub fn z_quantile(theta: f64) -> f64 {
    let theta = theta.clamp(0.0, MAX_CONFIDENCE);
    Normal::standard().inverse_cdf(1.0 - (1.0 - theta) / 2.0)
}

/// Confidence used for each of two bounds that must hold jointly with `theta`.
pub fn split_confidence(theta: f64) -> f64 {
    theta.min(1.0).sqrt()
}

/// Interval on a count of matches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountInterval {
    pub lower: f64,
    pub upper: f64,
    pub confidence: f64,
}

impl CountInterval {
    /// `center ± half_width`, clamped to `[0, population]`.
    pub fn clamped(center: f64, half_width: f64, population: f64, confidence: f64) -> Self {
        Self {
            lower: (center - half_width).clamp(0.0, population),
            upper: (center + half_width).clamp(0.0, population),
            confidence,
        }
    }

    pub fn exact(count: f64) -> Self {
        Self {
            lower: count,
            upper: count,
            confidence: 1.0,
        }
    }
}

/// `n (mean ± t sigma)` over the union of the sampled strata.
pub fn count_interval(samples: &[StratumSample], theta: f64) -> Result<CountInterval> {
    let est = stratified_mean_std(samples)?;
    let n = est.population as f64;
    let t = t_quantile(theta, Some(est.dof));
    Ok(CountInterval::clamped(n * est.mean, n * t * est.std, n, theta))
}

/// Memoized t values for one confidence level, indexed by degrees of freedom.
#[derive(Clone, Debug)]
pub struct TTable {
    theta: f64,
    values: Vec<f64>,
}

impl TTable {
    pub fn new(theta: f64) -> Self {
        Self {
            theta,
            values: Vec::new(),
        }
    }

    pub fn get(&mut self, dof: usize) -> f64 {
        let dof = dof.max(1);
        while self.values.len() < dof {
            let d = self.values.len() + 1;
            self.values.push(t_quantile(self.theta, Some(d)));
        }
        self.values[dof - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InstancePair, Label};
    use approx::assert_abs_diff_eq;

    fn workload(truth: &[bool], subset_size: usize) -> Workload {
        let n = truth.len() as f64;
        let pairs = truth
            .iter()
            .enumerate()
            .map(|(i, &t)| InstancePair::new(format!("p{i:05}"), i as f64 / n, Some(Label::from_bool(t))))
            .collect();
        Workload::new(pairs, subset_size).unwrap()
    }

    #[test]
    fn census_recovers_exact_proportion() {
        let truth: Vec<bool> = (0..50).map(|i| i % 5 == 0).collect();
        let w = workload(&truth, 50);
        let src = LabelSource::ground_truth(w.len());
        let s = draw_sample(&w, 0, 50, 7, &src).unwrap();
        assert_eq!(s.matches, 10);
        assert_eq!(s.proportion(), 0.2);
        let est = stratified_mean_std(&[s]).unwrap();
        assert_eq!(est.std, 0.0);
        let ci = count_interval(&[s], 0.9).unwrap();
        assert_eq!((ci.lower, ci.upper), (10.0, 10.0));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let truth: Vec<bool> = (0..400).map(|i| (i * 7919) % 3 == 0).collect();
        let w = workload(&truth, 200);
        let run = |seed| {
            let src = LabelSource::ground_truth(w.len());
            let s = draw_sample(&w, 1, 20, seed, &src).unwrap();
            (s, src.asked_ids())
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3).1, run(4).1);
        assert!(run(3).1.iter().all(|id| w.subset_of(w.position(id).unwrap()) == 1));
    }

    #[test]
    fn all_match_stratum() {
        let w = workload(&[true; 100], 100);
        let src = LabelSource::ground_truth(w.len());
        for k in [2, 10, 100] {
            assert_eq!(draw_sample(&w, 0, k, 1, &src).unwrap().proportion(), 1.0);
        }
        assert!(draw_sample(&w, 0, 101, 1, &src).is_err());
    }

    #[test]
    fn zero_proportions() {
        let s = [
            StratumSample::new(0, 100, 10, 0).unwrap(),
            StratumSample::new(1, 100, 10, 0).unwrap(),
        ];
        let est = stratified_mean_std(&s).unwrap();
        assert_eq!((est.mean, est.std), (0.0, 0.0));
    }

    #[test]
    fn two_strata_example() {
        let s = [
            StratumSample::new(0, 100, 10, 2).unwrap(),
            StratumSample::new(1, 100, 10, 4).unwrap(),
        ];
        let est = stratified_mean_std(&s).unwrap();
        // Independent evaluation of the estimator term by term.
        let term = |r: f64| 0.5f64.powi(2) * (1.0 - 10.0 / 100.0) * (r * (1.0 - r) * 10.0 / 9.0) / 10.0;
        let sigma = (term(0.2) + term(0.4)).sqrt();
        assert_abs_diff_eq!(est.mean, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(est.std, sigma, epsilon = 1e-12);
        assert_abs_diff_eq!(est.std, 0.1, epsilon = 1e-12);
        assert_eq!(est.dof, 18);

        let ci = count_interval(&s, 0.9).unwrap();
        let t = t_quantile(0.9, Some(18));
        assert_abs_diff_eq!(ci.lower, 200.0 * (0.3 - t * sigma), epsilon = 1e-9);
        assert_abs_diff_eq!(ci.upper, 200.0 * (0.3 + t * sigma), epsilon = 1e-9);
    }

    #[test]
    fn small_samples_rejected() {
        let s = [StratumSample::new(0, 100, 1, 0).unwrap()];
        assert!(stratified_mean_std(&s).is_err());
        // A one-pair census is exact, so it is fine.
        let s = [StratumSample::new(0, 1, 1, 1).unwrap()];
        assert_eq!(count_interval(&s, 0.9).unwrap().lower, 1.0);
        assert!(StratumSample::new(0, 10, 5, 6).is_err());
    }

    #[test]
    fn quantiles() {
        assert_abs_diff_eq!(t_quantile(0.9, None), 1.6449, epsilon = 1e-4);
        assert_abs_diff_eq!(t_quantile(0.95, Some(10)), 2.2281, epsilon = 1e-4);
        assert_abs_diff_eq!(t_quantile(0.9, Some(100_000)), 1.6449, epsilon = 1e-3);
        assert!(t_quantile(1.0, Some(5)).is_finite());
        assert_eq!(t_quantile(1.0, Some(5)), t_quantile(MAX_CONFIDENCE, Some(5)));
        let mut table = TTable::new(0.95);
        assert_eq!(table.get(10), t_quantile(0.95, Some(10)));
        assert_eq!(table.get(0), table.get(1));
    }

    #[test]
    fn split_confidence_values() {
        assert_abs_diff_eq!(split_confidence(0.81), 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(split_confidence(0.9), 0.94868, epsilon = 1e-5);
        assert_eq!(split_confidence(1.0), 1.0);
    }

    #[test]
    fn clamps_at_zero() {
        let s = [
            StratumSample::new(0, 200, 5, 0).unwrap(),
            StratumSample::new(1, 200, 5, 1).unwrap(),
        ];
        let ci = count_interval(&s, 0.95).unwrap();
        assert_eq!(ci.lower, 0.0);
        assert!(ci.upper > 0.0 && ci.upper <= 400.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn interval_contains_estimate(
                strata in prop::collection::vec((2usize..300, 2usize..40, 0.0f64..=1.0), 1..6),
                theta in 0.5f64..0.999,
            ) {
                let samples: Vec<StratumSample> = strata.iter().enumerate().map(|(i, &(n, k, f))| {
                    let k = k.min(n);
                    StratumSample::new(i, n, k, (k as f64 * f).floor() as usize).unwrap()
                }).collect();
                let est = stratified_mean_std(&samples).unwrap();
                let ci = count_interval(&samples, theta).unwrap();
                let n = est.population as f64;
                prop_assert!(ci.lower <= ci.upper);
                prop_assert!(ci.lower >= 0.0 && ci.upper <= n);
                prop_assert!(ci.lower <= n * est.mean + 1e-9 && n * est.mean <= ci.upper + 1e-9);
                let wider = count_interval(&samples, (theta + 0.0005).min(0.9999)).unwrap();
                prop_assert!(wider.lower <= ci.lower + 1e-9 && wider.upper + 1e-9 >= ci.upper);
            }
        }
    }
}
