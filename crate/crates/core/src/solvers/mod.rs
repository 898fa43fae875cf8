//! Searches for the human region `D_H` meeting a quality requirement.
//!
//! - [`base_search`] grows `D_H` from a start subset and relies on
//!   monotonicity of the match proportion for its bounds.
//! - [`all_sampling_search`] samples every subset and certifies bounds with
//!   stratified confidence intervals.
//! - [`partial_sampling_search`] samples a few subsets and bounds the rest
//!   through a Gaussian-process model of the proportion function.
//! - [`hybrid_search`] starts from the partial-sampling region and shrinks
//!   it using whichever of the two kinds of bound is tighter.

mod base;
mod hybrid;
mod sampling;

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{HyperPolicy, DEFAULT_EPSILON};
use crate::model::{
    BoundEstimates, InstancePair, Label, LabelAssignment, Partition, Provenance, QualityRequirement,
    Solution, SolverKind, Workload,
};
use crate::oracle::{HumanCost, LabelSource, Phase};
use crate::stratified::DEFAULT_SAMPLE_SIZE;

pub use base::{base_precision_threshold, base_recall_threshold, base_search, Threshold};
pub use hybrid::hybrid_search;
pub use sampling::{
    all_sampling_search, partial_sampling_bounds, partial_sampling_search, search_bounds,
    CountBounds, GpBounds, SampledRegion, StratifiedBounds,
};

pub const DEFAULT_BASE_WINDOW: usize = 5;
pub const DEFAULT_P_LOWER: f64 = 0.01;
pub const DEFAULT_P_UPPER: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub requirement: QualityRequirement,
    /// Subset where BASE starts; the median pair's subset when unset.
    pub initial_subset: Option<usize>,
    /// Subsets averaged by the monotonicity estimates, 3 to 10.
    pub base_window: usize,
    pub p_lower: f64,
    pub p_upper: f64,
    pub epsilon: f64,
    /// Pairs sampled per subset.
    pub sample_size: usize,
    pub seed: u64,
    pub hyper_policy: HyperPolicy,
}

impl SolverConfig {
    pub fn new(requirement: QualityRequirement) -> Self {
        Self {
            requirement,
            initial_subset: None,
            base_window: DEFAULT_BASE_WINDOW,
            p_lower: DEFAULT_P_LOWER,
            p_upper: DEFAULT_P_UPPER,
            epsilon: DEFAULT_EPSILON,
            sample_size: DEFAULT_SAMPLE_SIZE,
            seed: 0,
            hyper_policy: HyperPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.requirement;
        QualityRequirement::new(r.alpha, r.beta, r.theta)?;
        if !(3..=10).contains(&self.base_window) {
            return Err(Error::Config(format!(
                "base window {} outside 3..=10",
                self.base_window
            )));
        }
        if !(self.p_lower > 0.0 && self.p_lower <= self.p_upper && self.p_upper <= 1.0) {
            return Err(Error::Config(format!(
                "sampling range [{}, {}] must satisfy 0 < p_l <= p_u <= 1",
                self.p_lower, self.p_upper
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.sample_size < 2 {
            return Err(Error::Config("sample size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Runs the named solver.
pub fn solve(kind: SolverKind, workload: &Workload, config: &SolverConfig, source: &LabelSource) -> Result<Solution> {
    match kind {
        SolverKind::Base => base_search(workload, config, source),
        SolverKind::AllSampling => all_sampling_search(workload, config, source),
        SolverKind::PartialSampling => partial_sampling_search(workload, config, source),
        SolverKind::Hybrid => hybrid_search(workload, config, source),
    }
}

fn check_inputs(workload: &Workload, config: &SolverConfig) -> Result<()> {
    config.validate()?;
    if workload.is_empty() {
        return Err(Error::Config("workload is empty".into()));
    }
    Ok(())
}

/// `numerator / denominator >= target`, an empty denominator counting as met.
fn ratio_meets(numerator: f64, denominator: f64, target: f64) -> bool {
    denominator <= 0.0 || numerator / denominator >= target
}

/// Lower bound on precision when the human region is labeled exactly and
/// the machine-match region holds at least `plus_lb` matches.
fn precision_met(human_matches: f64, plus_lb: f64, n_plus: f64, alpha: f64) -> bool {
    ratio_meets(human_matches + plus_lb, human_matches + n_plus, alpha)
}

fn recall_met(captured_lb: f64, minus_ub: f64, beta: f64) -> bool {
    ratio_meets(captured_lb, captured_lb + minus_ub, beta)
}

/// Labels one subset through the source and returns its match count.
fn label_subset(workload: &Workload, subset: usize, source: &LabelSource) -> Result<usize> {
    let pairs: Vec<&InstancePair> = workload.pairs()[workload.subset(subset)].iter().collect();
    let labels = source.ask_batch(&pairs, Phase::Verification)?;
    Ok(labels.iter().filter(|l| l.is_match()).count())
}

/// Labels the human region and applies the partition rule elsewhere.
fn finish(
    workload: &Workload,
    solver: SolverKind,
    partition: Partition,
    source: &LabelSource,
    estimates: Option<BoundEstimates>,
) -> Result<Solution> {
    source.set_bounds(partition.human_subsets().start, partition.human_subsets().end);
    let human = partition.human(workload);
    let pairs: Vec<&InstancePair> = workload.pairs()[human.clone()].iter().collect();
    let human_labels = source.ask_batch(&pairs, Phase::Verification)?;
    let mut labels = LabelAssignment::new(workload.len());
    for position in partition.minus(workload) {
        labels.set(position, Label::Unmatch, Provenance::Machine);
    }
    for (position, label) in human.clone().zip(&human_labels) {
        labels.set(position, *label, Provenance::Human);
    }
    for position in partition.plus(workload) {
        labels.set(position, Label::Match, Provenance::Machine);
    }
    let estimates = estimates.map(|mut e| {
        e.matches_human = human_labels.iter().filter(|l| l.is_match()).count() as f64;
        e
    });
    Ok(Solution {
        solver,
        partition,
        labels,
        human_labeled: source.asked_ids().into_iter().collect::<BTreeSet<String>>(),
        exhausted: partition.is_full(),
        estimates,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionBounds {
    /// Half-open subset range of the human region.
    pub lower: usize,
    pub upper: usize,
    pub subset_count: usize,
    /// Half-open pair-position range of the human region.
    pub human_pairs: (usize, usize),
    /// Metric range `[min, max]` of the human region, absent when empty.
    pub metric_range: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LabelRow {
    pub pair_id: String,
    pub metric: f64,
    pub label: Label,
    pub source: Provenance,
}

/// JSON-ready record of a solution and the configuration that produced it.
#[derive(Clone, Debug, Serialize)]
pub struct SolutionExport {
    pub solver: SolverKind,
    pub bounds: RegionBounds,
    pub human_cost: HumanCost,
    pub exhausted: bool,
    pub seed: u64,
    pub config: SolverConfig,
    pub estimates: Option<BoundEstimates>,
    pub labels: Vec<LabelRow>,
}

pub fn export(solution: &Solution, workload: &Workload, config: &SolverConfig) -> SolutionExport {
    let human = solution.partition.human(workload);
    let metric_range = (!human.is_empty())
        .then(|| (workload.pair(human.start).metric, workload.pair(human.end - 1).metric));
    let labels = solution
        .labels
        .iter()
        .filter_map(|(position, slot)| {
            let (label, source) = slot?;
            let pair = workload.pair(position);
            Some(LabelRow {
                pair_id: pair.id.clone(),
                metric: pair.metric,
                label,
                source,
            })
        })
        .collect();
    SolutionExport {
        solver: solution.solver,
        bounds: RegionBounds {
            lower: solution.partition.human_subsets().start,
            upper: solution.partition.human_subsets().end,
            subset_count: solution.partition.subset_count(),
            human_pairs: (human.start, human.end),
            metric_range,
        },
        human_cost: HumanCost {
            count: solution.human_cost(),
            fraction: solution.human_cost_fraction(),
        },
        exhausted: solution.exhausted,
        seed: config.seed,
        config: config.clone(),
        estimates: solution.estimates,
        labels,
    }
}

/// Writes `pair_id,metric,label,source` rows for every labeled pair.
pub fn write_labels_csv<W: Write>(solution: &Solution, workload: &Workload, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["pair_id", "metric", "label", "source"])?;
    for (position, slot) in solution.labels.iter() {
        if let Some((label, source)) = slot {
            let pair = workload.pair(position);
            let source = match source {
                Provenance::Human => "human",
                Provenance::Machine => "machine",
            };
            w.write_record([pair.id.as_str(), &pair.metric.to_string(), &label.to_string(), source])?;
        }
    }
    w.flush()?;
    Ok(())
}
