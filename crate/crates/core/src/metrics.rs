//! Exact and bounded quality measures of a labeling.

use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{LabelAssignment, Workload};

/// A ratio together with a flag telling whether its denominator was empty,
/// in which case the value is the conventional 1.0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ratio {
    pub value: f64,
    pub degenerate: bool,
}

impl Ratio {
    fn of(numerator: f64, denominator: f64) -> Self {
        if denominator <= 0.0 {
            Ratio {
                value: 1.0,
                degenerate: true,
            }
        } else {
            Ratio {
                value: numerator / denominator,
                degenerate: false,
            }
        }
    }
}

/// True positive, false positive and false negative counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn confusion(workload: &Workload, labels: &LabelAssignment) -> Result<Confusion> {
    if labels.len() != workload.len() {
        return Err(Error::Config(format!(
            "label assignment covers {} pairs, workload has {}",
            labels.len(),
            workload.len()
        )));
    }
    let mut c = Confusion::default();
    for (position, pair) in workload.pairs().iter().enumerate() {
        let truth = pair
            .truth
            .ok_or_else(|| Error::contract(&pair.id, "missing ground truth"))?;
        let label = labels
            .label(position)
            .ok_or_else(|| Error::contract(&pair.id, "missing label"))?;
        match (truth.is_match(), label.is_match()) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

pub fn precision(workload: &Workload, labels: &LabelAssignment) -> Result<Ratio> {
    let c = confusion(workload, labels)?;
    Ok(Ratio::of(c.tp as f64, (c.tp + c.fp) as f64))
}

pub fn recall(workload: &Workload, labels: &LabelAssignment) -> Result<Ratio> {
    let c = confusion(workload, labels)?;
    Ok(Ratio::of(c.tp as f64, (c.tp + c.fn_) as f64))
}

/// Lower bound on precision from the machine-match region size and lower
/// bound on its matches, plus the human region's size and exact matches.
pub fn precision_lower_bound(n_plus: f64, n_human: f64, matches_plus_lb: f64, matches_human: f64) -> Ratio {
    Ratio::of(matches_plus_lb + matches_human, n_plus + n_human)
}

/// Lower bound on recall given an upper bound on matches left in the
/// machine-unmatch region.
pub fn recall_lower_bound(matches_plus_lb: f64, matches_human: f64, matches_minus_ub: f64) -> Ratio {
    let captured = matches_plus_lb + matches_human;
    Ratio::of(captured, captured + matches_minus_ub)
}

/// Fraction of match labels among the pairs of the given subsets.
pub fn observed_proportion(
    workload: &Workload,
    labels: &LabelAssignment,
    subsets: Range<usize>,
) -> Result<f64> {
    let positions = workload.span(subsets);
    if positions.is_empty() {
        return Err(Error::Config("empty subset range".into()));
    }
    let n = positions.len();
    let mut matches = 0usize;
    for position in positions {
        let label = labels
            .label(position)
            .ok_or_else(|| Error::contract(&workload.pair(position).id, "pair not labeled"))?;
        matches += usize::from(label.is_match());
    }
    Ok(matches as f64 / n as f64)
}
