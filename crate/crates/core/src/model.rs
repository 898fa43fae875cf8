//! Workload representation, quality requirements, partitions and solutions.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of pairs per unit subset.
pub const DEFAULT_SUBSET_SIZE: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Match,
    Unmatch,
}

impl Label {
    pub fn is_match(self) -> bool {
        matches!(self, Label::Match)
    }

    pub fn from_bool(is_match: bool) -> Self {
        if is_match {
            Label::Match
        } else {
            Label::Unmatch
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Match => "match",
            Label::Unmatch => "unmatch",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "match" | "m" | "true" => Ok(Label::Match),
            "0" | "unmatch" | "u" | "false" => Ok(Label::Unmatch),
            other => Err(Error::Config(format!("unknown label `{other}`"))),
        }
    }
}

/// One candidate record pair together with its machine metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstancePair {
    pub id: String,
    pub metric: f64,
    pub truth: Option<Label>,
}

impl InstancePair {
    pub fn new(id: impl Into<String>, metric: f64, truth: Option<Label>) -> Self {
        Self {
            id: id.into(),
            metric,
            truth,
        }
    }
}

/// Metric-sorted pairs cut into contiguous unit subsets of equal size.
///
/// The last subset holds the remainder when the pair count is not a multiple
/// of the subset size. Ties in metric are ordered by id.
#[derive(Clone, Debug)]
pub struct Workload {
    pairs: Vec<InstancePair>,
    subset_size: usize,
    positions: HashMap<String, usize>,
}

impl Workload {
    pub fn new(mut pairs: Vec<InstancePair>, subset_size: usize) -> Result<Self> {
        if subset_size == 0 {
            return Err(Error::Config("subset size must be positive".into()));
        }
        for pair in &pairs {
            if !(0.0..=1.0).contains(&pair.metric) {
                return Err(Error::contract(
                    &pair.id,
                    format!("metric {} outside [0, 1]", pair.metric),
                ));
            }
        }
        pairs.sort_by(|a, b| a.metric.total_cmp(&b.metric).then_with(|| a.id.cmp(&b.id)));
        let mut positions = HashMap::with_capacity(pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            if positions.insert(pair.id.clone(), i).is_some() {
                return Err(Error::contract(&pair.id, "duplicate pair id"));
            }
        }
        Ok(Self {
            pairs,
            subset_size,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[InstancePair] {
        &self.pairs
    }

    pub fn pair(&self, position: usize) -> &InstancePair {
        &self.pairs[position]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn subset_size(&self) -> usize {
        self.subset_size
    }

    pub fn subset_count(&self) -> usize {
        self.pairs.len().div_ceil(self.subset_size)
    }

    /// Pair positions covered by one subset.
    pub fn subset(&self, index: usize) -> Range<usize> {
        let start = (index * self.subset_size).min(self.pairs.len());
        let end = ((index + 1) * self.subset_size).min(self.pairs.len());
        start..end
    }

    /// Pair positions covered by the subsets `subsets.start..subsets.end`.
    pub fn span(&self, subsets: Range<usize>) -> Range<usize> {
        if subsets.start >= subsets.end {
            let at = (subsets.start * self.subset_size).min(self.pairs.len());
            return at..at;
        }
        self.subset(subsets.start).start..self.subset(subsets.end - 1).end
    }

    pub fn subset_len(&self, index: usize) -> usize {
        self.subset(index).len()
    }

    /// Sizes of every subset, in order.
    pub fn subset_sizes(&self) -> Vec<usize> {
        (0..self.subset_count()).map(|s| self.subset_len(s)).collect()
    }

    pub fn subset_mean_metric(&self, index: usize) -> f64 {
        let range = self.subset(index);
        let n = range.len() as f64;
        self.pairs[range].iter().map(|p| p.metric).sum::<f64>() / n
    }

    pub fn subset_of(&self, position: usize) -> usize {
        position / self.subset_size
    }

    /// Subset holding the median pair.
    pub fn median_subset(&self) -> usize {
        if self.pairs.is_empty() {
            return 0;
        }
        self.subset_of((self.pairs.len() - 1) / 2)
    }

    pub fn has_truth(&self) -> bool {
        self.pairs.iter().all(|p| p.truth.is_some())
    }

    /// Ground-truth matches in a pair-position range; `None` when any truth is missing.
    pub fn true_matches(&self, positions: Range<usize>) -> Option<usize> {
        self.pairs[positions].iter().try_fold(0usize, |acc, p| {
            p.truth.map(|t| acc + usize::from(t.is_match()))
        })
    }
}

/// Precision target `alpha`, recall target `beta`, confidence `theta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityRequirement {
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
}

impl QualityRequirement {
    pub fn new(alpha: f64, beta: f64, theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("precision target {alpha} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Config(format!("recall target {beta} outside [0, 1]")));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::Config(format!("confidence {theta} outside (0, 1)")));
        }
        Ok(Self { alpha, beta, theta })
    }

    pub fn is_met(&self, precision: f64, recall: f64) -> bool {
        precision >= self.alpha && recall >= self.beta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Machine,
    Human,
}

/// Labels assigned to workload pairs, indexed by sorted position.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelAssignment {
    slots: Vec<Option<(Label, Provenance)>>,
}

impl LabelAssignment {
    pub fn new(len: usize) -> Self {
        Self {
            slots: vec![None; len],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn set(&mut self, position: usize, label: Label, provenance: Provenance) {
        self.slots[position] = Some((label, provenance));
    }

    pub fn get(&self, position: usize) -> Option<(Label, Provenance)> {
        self.slots.get(position).copied().flatten()
    }

    pub fn label(&self, position: usize) -> Option<Label> {
        self.get(position).map(|(l, _)| l)
    }

    pub fn labeled_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Option<(Label, Provenance)>)> + '_ {
        self.slots.iter().copied().enumerate()
    }
}

/// Three-way split of the subsets: `[0, lower)` is machine-unmatch,
/// `[lower, upper)` goes to the human, `[upper, m)` is machine-match.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    lower: usize,
    upper: usize,
    subsets: usize,
}

impl Partition {
    pub fn new(lower: usize, upper: usize, subsets: usize) -> Result<Self> {
        if lower > upper || upper > subsets {
            return Err(Error::Config(format!(
                "invalid partition [{lower}, {upper}) over {subsets} subsets"
            )));
        }
        Ok(Self {
            lower,
            upper,
            subsets,
        })
    }

    /// Every subset goes to the human.
    pub fn full(subsets: usize) -> Self {
        Self {
            lower: 0,
            upper: subsets,
            subsets,
        }
    }

    pub fn human_subsets(&self) -> Range<usize> {
        self.lower..self.upper
    }

    pub fn minus_subsets(&self) -> Range<usize> {
        0..self.lower
    }

    pub fn plus_subsets(&self) -> Range<usize> {
        self.upper..self.subsets
    }

    /// First subset of the human region, if it is non-empty.
    pub fn lower_subset(&self) -> Option<usize> {
        (self.lower < self.upper).then_some(self.lower)
    }

    /// Last subset of the human region, if it is non-empty.
    pub fn upper_subset(&self) -> Option<usize> {
        (self.lower < self.upper).then(|| self.upper - 1)
    }

    pub fn subset_count(&self) -> usize {
        self.subsets
    }

    pub fn is_full(&self) -> bool {
        self.lower == 0 && self.upper == self.subsets
    }

    pub fn minus(&self, workload: &Workload) -> Range<usize> {
        workload.span(self.minus_subsets())
    }

    pub fn human(&self, workload: &Workload) -> Range<usize> {
        workload.span(self.human_subsets())
    }

    pub fn plus(&self, workload: &Workload) -> Range<usize> {
        workload.span(self.plus_subsets())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Base,
    AllSampling,
    PartialSampling,
    Hybrid,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Base => "base",
            SolverKind::AllSampling => "all_sampling",
            SolverKind::PartialSampling => "partial_sampling",
            SolverKind::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" | "baseline" => Ok(SolverKind::Base),
            "all" | "all_sampling" | "all-sampling" => Ok(SolverKind::AllSampling),
            "samp" | "partial" | "partial_sampling" | "partial-sampling" => {
                Ok(SolverKind::PartialSampling)
            }
            "hybr" | "hybrid" => Ok(SolverKind::Hybrid),
            other => Err(Error::Config(format!("unknown solver `{other}`"))),
        }
    }
}

/// Where a bound on a region's match count came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSource {
    /// Labels of the human region, extrapolated by monotonicity.
    Monotonicity,
    /// Stratified sampling or the fitted proportion function.
    SamplingGp,
    /// The region is empty.
    Exact,
}

/// Match-count bounds that certified the returned partition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimates {
    pub matches_plus_lb: f64,
    pub plus_source: BoundSource,
    pub matches_minus_ub: f64,
    pub minus_source: BoundSource,
    /// Exact once the human region is labeled.
    pub matches_human: f64,
}

/// A partition together with the labels it induces and the human effort spent.
#[derive(Clone, Debug)]
pub struct Solution {
    pub solver: SolverKind,
    pub partition: Partition,
    /// Final labels: human labels on the human region, machine labels elsewhere.
    pub labels: LabelAssignment,
    /// Every pair the human inspected, sampled pairs included.
    pub human_labeled: BTreeSet<String>,
    /// Set when no certificate was found short of sending everything to the human.
    pub exhausted: bool,
    pub estimates: Option<BoundEstimates>,
}

impl Solution {
    pub fn human_cost(&self) -> usize {
        self.human_labeled.len()
    }

    pub fn human_cost_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            0.0
        } else {
            self.human_cost() as f64 / self.labels.len() as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn workload(metrics: &[f64], subset_size: usize) -> Workload {
        let pairs = metrics
            .iter()
            .enumerate()
            .map(|(i, &m)| InstancePair::new(format!("p{i:03}"), m, Some(Label::Unmatch)))
            .collect();
        Workload::new(pairs, subset_size).unwrap()
    }

    #[test]
    fn sorts_by_metric_then_id() {
        let pairs = vec![
            InstancePair::new("b", 0.5, None),
            InstancePair::new("a", 0.5, None),
            InstancePair::new("c", 0.1, None),
        ];
        let w = Workload::new(pairs, 2).unwrap();
        let ids: Vec<_> = w.pairs().iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(w.position("b"), Some(2));
    }

    #[test]
    fn rejects_bad_metric_and_duplicates() {
        let bad = vec![InstancePair::new("x", 1.5, None)];
        assert!(matches!(Workload::new(bad, 2), Err(Error::Contract { .. })));
        let dup = vec![InstancePair::new("x", 0.1, None), InstancePair::new("x", 0.2, None)];
        assert!(matches!(Workload::new(dup, 2), Err(Error::Contract { .. })));
        assert!(Workload::new(vec![], 0).is_err());
    }

    #[test]
    fn last_subset_takes_remainder() {
        let metrics: Vec<f64> = (0..7).map(|i| i as f64 / 10.0).collect();
        let w = workload(&metrics, 3);
        assert_eq!(w.subset_count(), 3);
        assert_eq!(w.subset(0), 0..3);
        assert_eq!(w.subset(2), 6..7);
        assert_eq!(w.span(1..3), 3..7);
        assert_eq!(w.span(2..2), 6..6);
        assert_eq!(w.median_subset(), 1);
    }

    #[test]
    fn requirement_ranges() {
        assert!(QualityRequirement::new(0.9, 0.9, 0.9).is_ok());
        assert!(QualityRequirement::new(1.1, 0.9, 0.9).is_err());
        assert!(QualityRequirement::new(0.9, -0.1, 0.9).is_err());
        assert!(QualityRequirement::new(0.9, 0.9, 1.0).is_err());
        assert!(QualityRequirement::new(0.9, 0.9, 0.0).is_err());
    }

    #[test]
    fn partition_accessors() {
        let p = Partition::new(2, 5, 8).unwrap();
        assert_eq!(p.lower_subset(), Some(2));
        assert_eq!(p.upper_subset(), Some(4));
        let empty = Partition::new(3, 3, 8).unwrap();
        assert_eq!(empty.lower_subset(), None);
        assert!(Partition::new(4, 3, 8).is_err());
        assert!(Partition::full(8).is_full());
    }

    #[test]
    fn labels_parse() {
        assert_eq!("1".parse::<Label>().unwrap(), Label::Match);
        assert_eq!("unmatch".parse::<Label>().unwrap(), Label::Unmatch);
        assert!("maybe".parse::<Label>().is_err());
        assert_eq!("hybr".parse::<SolverKind>().unwrap(), SolverKind::Hybrid);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partition_covers_workload(
                metrics in prop::collection::vec(0.0f64..=1.0, 1..300),
                size in 1usize..40,
                a in 0usize..100,
                b in 0usize..100,
            ) {
                let w = workload(&metrics, size);
                let m = w.subset_count();
                let (lo, hi) = (a.min(b) % (m + 1), a.max(b) % (m + 1));
                let (lo, hi) = (lo.min(hi), lo.max(hi));
                let p = Partition::new(lo, hi, m).unwrap();
                let (minus, human, plus) = (p.minus(&w), p.human(&w), p.plus(&w));
                prop_assert_eq!(minus.len() + human.len() + plus.len(), w.len());
                prop_assert_eq!(minus.end, human.start);
                prop_assert_eq!(human.end, plus.start);
                let max_of = |r: &Range<usize>| w.pairs()[r.clone()].iter().map(|p| p.metric).fold(f64::MIN, f64::max);
                let min_of = |r: &Range<usize>| w.pairs()[r.clone()].iter().map(|p| p.metric).fold(f64::MAX, f64::min);
                if !minus.is_empty() && !human.is_empty() {
                    prop_assert!(max_of(&minus) <= min_of(&human));
                }
                if !human.is_empty() && !plus.is_empty() {
                    prop_assert!(max_of(&human) <= min_of(&plus));
                }
                if !minus.is_empty() && !plus.is_empty() {
                    prop_assert!(max_of(&minus) <= min_of(&plus));
                }
            }
        }
    }
}
