use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gp::{fit_proportion_function, GpModel, RangeSums, SamplingPlan, TrainedProportion};
use crate::model::{BoundEstimates, BoundSource, Partition, QualityRequirement, Solution, SolverKind, Workload};
use crate::oracle::LabelSource;
use crate::stratified::{
    degrees_of_freedom, draw_sample, sample_size, split_confidence, z_quantile, CountInterval, StratumSample, TTable,
};

use super::{check_inputs, finish, precision_met, recall_met, SolverConfig};

/// Confidence intervals on the match count of any contiguous subset range.
pub trait CountBounds {
    fn interval(&mut self, a: usize, b: usize) -> CountInterval;
}

/// Stratified intervals from one sample per subset.
#[derive(Clone, Debug)]
pub struct StratifiedBounds {
    counts: Vec<f64>,
    variances: Vec<f64>,
    sampled: Vec<usize>,
    sizes: Vec<f64>,
    strata: Vec<usize>,
    table: TTable,
    confidence: f64,
}

impl StratifiedBounds {
    /// `samples[i]` must be the sample of subset `i`.
    pub fn new(samples: &[StratumSample], confidence: f64) -> Result<Self> {
        let m = samples.len();
        let mut counts = vec![0.0; m + 1];
        let mut variances = vec![0.0; m + 1];
        let mut sampled = vec![0; m + 1];
        let mut sizes = vec![0.0; m + 1];
        let mut strata = vec![0; m + 1];
        for (i, s) in samples.iter().enumerate() {
            if s.subset != i {
                return Err(Error::Config(format!("sample {i} belongs to subset {}", s.subset)));
            }
            let (estimate, variance) = if s.size == 0 {
                (0.0, 0.0)
            } else if s.is_census() {
                (s.matches as f64, 0.0)
            } else {
                (s.population as f64 * s.proportion(), s.count_variance()?)
            };
            counts[i + 1] = counts[i] + estimate;
            variances[i + 1] = variances[i] + variance;
            sampled[i + 1] = sampled[i] + s.size;
            strata[i + 1] = strata[i] + usize::from(s.size > 0);
            sizes[i + 1] = sizes[i] + s.population as f64;
        }
        Ok(Self {
            counts,
            variances,
            sampled,
            sizes,
            strata,
            table: TTable::new(confidence),
            confidence,
        })
    }

    /// Estimated count, its variance, and (pairs sampled, strata) over `a..b`.
    fn moments(&self, a: usize, b: usize) -> (f64, f64, (usize, usize)) {
        (
            self.counts[b] - self.counts[a],
            (self.variances[b] - self.variances[a]).max(0.0),
            (self.sampled[b] - self.sampled[a], self.strata[b] - self.strata[a]),
        )
    }
}

impl CountBounds for StratifiedBounds {
    fn interval(&mut self, a: usize, b: usize) -> CountInterval {
        if a >= b {
            return CountInterval::exact(0.0);
        }
        let (mean, var, (sampled, strata)) = self.moments(a, b);
        let t = self.table.get(degrees_of_freedom(sampled, strata));
        CountInterval::clamped(mean, t * var.sqrt(), self.sizes[b] - self.sizes[a], self.confidence)
    }
}

/// Intervals combining sampled subsets' own stratified estimates with the
/// joint predictive posterior of the proportion function over the rest.
#[derive(Clone, Debug)]
pub struct GpBounds {
    sampled: StratifiedBounds,
    /// Posterior sums with sampled subsets weighted 0.
    unsampled: RangeSums,
    /// Prefix counts of unsampled subsets.
    unsampled_count: Vec<usize>,
    sizes: Vec<f64>,
    z: f64,
    confidence: f64,
}

impl GpBounds {
    pub fn new(
        model: &GpModel,
        workload: &Workload,
        samples: &BTreeMap<usize, StratumSample>,
        confidence: f64,
    ) -> Result<Self> {
        let m = workload.subset_count();
        let queries: Vec<f64> = (0..m).map(|i| workload.subset_mean_metric(i)).collect();
        let post = model.predictive(&queries);
        let weights: Vec<usize> = (0..m)
            .map(|i| if samples.contains_key(&i) { 0 } else { workload.subset_len(i) })
            .collect();
        // Unsampled subsets enter the stratified sums as empty strata.
        let padded: Vec<StratumSample> = (0..m)
            .map(|i| samples.get(&i).copied().unwrap_or(StratumSample { subset: i, population: 0, size: 0, matches: 0 }))
            .collect();
        let mut unsampled_count = vec![0; m + 1];
        let mut sizes = vec![0.0; m + 1];
        for i in 0..m {
            unsampled_count[i + 1] = unsampled_count[i] + usize::from(!samples.contains_key(&i));
            sizes[i + 1] = sizes[i] + workload.subset_len(i) as f64;
        }
        Ok(Self {
            sampled: StratifiedBounds::new(&padded, confidence)?,
            unsampled: RangeSums::new(&post, &weights),
            unsampled_count,
            sizes,
            z: z_quantile(confidence),
            confidence,
        })
    }
}

impl CountBounds for GpBounds {
    fn interval(&mut self, a: usize, b: usize) -> CountInterval {
        if a >= b {
            return CountInterval::exact(0.0);
        }
        let (mean_s, var_s, strata) = self.sampled.moments(a, b);
        let population = self.sizes[b] - self.sizes[a];
        if self.unsampled_count[b] == self.unsampled_count[a] {
            let t = self.sampled.table.get(degrees_of_freedom(strata.0, strata.1));
            return CountInterval::clamped(mean_s, t * var_s.sqrt(), population, self.confidence);
        }
        let (mean_u, var_u) = self.unsampled.moments(a, b);
        CountInterval::clamped(
            mean_s + mean_u,
            self.z * (var_s + var_u).max(0.0).sqrt(),
            population,
            self.confidence,
        )
    }
}

/// Finds the partition with the fewest human pairs whose estimated recall
/// and precision meet the requirement.
///
/// The lower bound scans up from 0 while recall holds; for each admissible
/// lower bound the upper bound scans down from `m` while precision holds.
/// Ties in size go to the larger lower bound.
pub fn search_bounds(workload: &Workload, req: &QualityRequirement, est: &mut dyn CountBounds) -> Partition {
    let m = workload.subset_count();
    let pairs = |a: usize, b: usize| workload.span(a..b).len();

    let mut recall_ok = |lo: usize| {
        let captured = est.interval(lo, m).lower;
        let missed = est.interval(0, lo).upper;
        recall_met(captured, missed, req.beta)
    };
    let mut max_lower = 0;
    while max_lower < m && recall_ok(max_lower + 1) {
        max_lower += 1;
    }

    let mut best = (0, m);
    for lo in 0..=max_lower {
        let mut hi = m;
        while hi > lo {
            let human_lb = est.interval(lo, hi - 1).lower;
            let plus_lb = est.interval(hi - 1, m).lower;
            if !precision_met(human_lb, plus_lb, pairs(hi - 1, m) as f64, req.alpha) {
                break;
            }
            hi -= 1;
        }
        if pairs(lo, hi) <= pairs(best.0, best.1) {
            best = (lo, hi);
        }
    }
    Partition::new(best.0, best.1, m).expect("search keeps 0 <= lower <= upper <= m")
}

fn region_estimates(est: &mut dyn CountBounds, partition: &Partition) -> BoundEstimates {
    let plus = partition.plus_subsets();
    let minus = partition.minus_subsets();
    let source = |r: &std::ops::Range<usize>| {
        if r.is_empty() {
            BoundSource::Exact
        } else {
            BoundSource::SamplingGp
        }
    };
    BoundEstimates {
        matches_plus_lb: est.interval(plus.start, plus.end).lower,
        plus_source: source(&plus),
        matches_minus_ub: est.interval(minus.start, minus.end).upper,
        minus_source: source(&minus),
        matches_human: 0.0,
    }
}

fn sample_all(workload: &Workload, config: &SolverConfig, source: &LabelSource) -> Result<Vec<StratumSample>> {
    (0..workload.subset_count())
        .map(|i| {
            let k = sample_size(workload.subset_len(i), config.sample_size);
            draw_sample(workload, i, k, config.seed, source)
        })
        .collect()
}

fn stratified_region(workload: &Workload, config: &SolverConfig, source: &LabelSource) -> Result<SampledRegion> {
    let samples = sample_all(workload, config, source)?;
    let mut estimator = Estimator::Stratified(StratifiedBounds::new(
        &samples,
        split_confidence(config.requirement.theta),
    )?);
    let partition = search_bounds(workload, &config.requirement, &mut estimator);
    Ok(SampledRegion {
        partition,
        estimator,
        trained: None,
    })
}

/// Samples every subset, then bounds the human region with stratified
/// intervals at confidence `sqrt(theta)` per bound.
pub fn all_sampling_search(workload: &Workload, config: &SolverConfig, source: &LabelSource) -> Result<Solution> {
    check_inputs(workload, config)?;
    let mut region = stratified_region(workload, config, source)?;
    let estimates = region_estimates(&mut region.estimator, &region.partition);
    finish(workload, SolverKind::AllSampling, region.partition, source, Some(estimates))
}

pub(crate) enum Estimator {
    Stratified(StratifiedBounds),
    Gp(GpBounds),
}

impl CountBounds for Estimator {
    fn interval(&mut self, a: usize, b: usize) -> CountInterval {
        match self {
            Estimator::Stratified(s) => s.interval(a, b),
            Estimator::Gp(g) => g.interval(a, b),
        }
    }
}

/// Bounds found by sampling, before the human region is labeled.
pub struct SampledRegion {
    pub partition: Partition,
    pub(crate) estimator: Estimator,
    /// The fitted proportion function; absent after falling back to sampling every subset.
    pub trained: Option<TrainedProportion>,
}

impl SampledRegion {
    pub fn interval(&mut self, a: usize, b: usize) -> CountInterval {
        self.estimator.interval(a, b)
    }
}

/// Runs the adaptive sampling loop and the bound search without labeling
/// the human region. Falls back to sampling every subset when the model
/// cannot be fitted.
pub fn partial_sampling_bounds(workload: &Workload, config: &SolverConfig, source: &LabelSource) -> Result<SampledRegion> {
    check_inputs(workload, config)?;
    let plan = SamplingPlan {
        p_lower: config.p_lower,
        p_upper: config.p_upper,
        epsilon: config.epsilon,
        sample_size: config.sample_size,
        seed: config.seed,
        policy: config.hyper_policy.clone(),
    };
    let trained = match fit_proportion_function(workload, &plan, source) {
        Ok(t) => t,
        Err(Error::Numerical(msg)) => {
            log::warn!("proportion model failed ({msg}); sampling every subset instead");
            return stratified_region(workload, config, source);
        }
        Err(e) => return Err(e),
    };
    let mut estimator = Estimator::Gp(GpBounds::new(
        &trained.model,
        workload,
        &trained.samples,
        split_confidence(config.requirement.theta),
    )?);
    let partition = search_bounds(workload, &config.requirement, &mut estimator);
    Ok(SampledRegion {
        partition,
        estimator,
        trained: Some(trained),
    })
}

/// Samples a few subsets chosen adaptively, bounds every region through the
/// fitted proportion function, then labels the human region.
pub fn partial_sampling_search(workload: &Workload, config: &SolverConfig, source: &LabelSource) -> Result<Solution> {
    let mut region = partial_sampling_bounds(workload, config, source)?;
    let estimates = region_estimates(&mut region.estimator, &region.partition);
    finish(workload, SolverKind::PartialSampling, region.partition, source, Some(estimates))
}
