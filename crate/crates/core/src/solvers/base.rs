use crate::error::{Error, Result};
use crate::model::{BoundEstimates, BoundSource, Partition, Solution, SolverKind, Workload};
use crate::oracle::LabelSource;

use super::{check_inputs, finish, label_subset, SolverConfig};

/// Right-hand side of a monotonicity condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    /// The machine region on this side is empty, so its quality term is exact.
    RegionEmpty,
    /// The requirement places no constraint.
    Unconstrained,
    /// Required bound on the windowed match proportion. Values at or below 0
    /// (precision) are always met; values above 1 cannot be met yet.
    Value(f64),
}

/// Minimum match proportion the machine-match region needs for precision
/// `alpha`, given the human region's size and match proportion.
pub fn base_precision_threshold(alpha: f64, n_plus: f64, n_human: f64, r_human: f64) -> Threshold {
    if n_plus <= 0.0 {
        return Threshold::RegionEmpty;
    }
    Threshold::Value((alpha * n_plus - (1.0 - alpha) * r_human * n_human) / n_plus)
}

/// Maximum match proportion the machine-unmatch region may have for recall
/// `beta`, given the matches credited to the human and machine-match regions.
pub fn base_recall_threshold(
    beta: f64,
    n_minus: f64,
    n_human: f64,
    r_human: f64,
    n_plus: f64,
    r_plus: f64,
) -> Threshold {
    if n_minus <= 0.0 {
        return Threshold::RegionEmpty;
    }
    if beta <= 0.0 {
        return Threshold::Unconstrained;
    }
    Threshold::Value((1.0 - beta) * (n_human * r_human + n_plus * r_plus) / (beta * n_minus))
}

struct Explored<'a> {
    workload: &'a Workload,
    matches: Vec<usize>,
}

impl Explored<'_> {
    fn pairs(&self, a: usize, b: usize) -> f64 {
        self.workload.span(a..b).len() as f64
    }

    /// Match proportion over labeled subsets `a..b`; 0 when empty.
    fn proportion(&self, a: usize, b: usize) -> f64 {
        let n = self.pairs(a, b);
        if n == 0.0 {
            return 0.0;
        }
        self.matches[a..b].iter().sum::<usize>() as f64 / n
    }
}

/// Grows the human region one subset at a time on alternating sides, upper
/// first, freezing each side once the monotonicity estimate from its most
/// recent `base_window` subsets certifies the requirement.
pub fn base_search(workload: &Workload, config: &SolverConfig, source: &LabelSource) -> Result<Solution> {
    check_inputs(workload, config)?;
    let m = workload.subset_count();
    let start = config.initial_subset.unwrap_or_else(|| workload.median_subset());
    if start >= m {
        return Err(Error::Config(format!("start subset {start} outside 0..{m}")));
    }
    let req = config.requirement;
    let w = config.base_window;
    let mut ex = Explored {
        workload,
        matches: vec![0; m],
    };
    let (mut lower, mut upper) = (start, start);
    let (mut lower_frozen, mut upper_frozen) = (false, false);
    let upper_window = |upper: usize| upper.saturating_sub(w).max(start)..upper;

    while !(lower_frozen && upper_frozen) {
        if !upper_frozen {
            if upper == m {
                upper_frozen = true;
            } else {
                ex.matches[upper] = label_subset(workload, upper, source)?;
                upper += 1;
                source.set_bounds(lower, upper);
                let win = upper_window(upper);
                let n_human = ex.pairs(lower, upper);
                upper_frozen = match base_precision_threshold(
                    req.alpha,
                    ex.pairs(upper, m),
                    n_human,
                    ex.proportion(lower, upper),
                ) {
                    Threshold::Value(t) => ex.proportion(win.start, win.end) >= t,
                    _ => true,
                };
            }
        }
        if !lower_frozen {
            if lower == 0 {
                lower_frozen = true;
            } else {
                lower -= 1;
                ex.matches[lower] = label_subset(workload, lower, source)?;
                source.set_bounds(lower, upper);
                let win = upper_window(upper);
                lower_frozen = match base_recall_threshold(
                    req.beta,
                    ex.pairs(0, lower),
                    ex.pairs(lower, upper),
                    ex.proportion(lower, upper),
                    ex.pairs(upper, m),
                    ex.proportion(win.start, win.end),
                ) {
                    Threshold::Value(t) => ex.proportion(lower, (lower + w).min(start)) <= t,
                    _ => true,
                };
            }
        }
    }

    let n_plus = ex.pairs(upper, m);
    let n_minus = ex.pairs(0, lower);
    let win = upper_window(upper);
    let estimates = BoundEstimates {
        matches_plus_lb: n_plus * ex.proportion(win.start, win.end),
        plus_source: if n_plus > 0.0 { BoundSource::Monotonicity } else { BoundSource::Exact },
        matches_minus_ub: n_minus * ex.proportion(lower, (lower + w).min(start)),
        minus_source: if n_minus > 0.0 { BoundSource::Monotonicity } else { BoundSource::Exact },
        matches_human: 0.0,
    };
    finish(
        workload,
        SolverKind::Base,
        Partition::new(lower, upper, m)?,
        source,
        Some(estimates),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InstancePair, Label, QualityRequirement};
    use approx::assert_abs_diff_eq;

    #[test]
    fn precision_threshold_examples() {
        assert_eq!(base_precision_threshold(1.0, 300.0, 100.0, 0.37), Threshold::Value(1.0));
        assert_eq!(base_precision_threshold(0.9, 1000.0, 500.0, 0.5), Threshold::Value(0.875));
        match base_precision_threshold(0.0, 100.0, 50.0, 0.2) {
            Threshold::Value(t) => assert!(t <= 0.0),
            other => panic!("{other:?}"),
        }
        assert_eq!(base_precision_threshold(0.9, 0.0, 10.0, 0.5), Threshold::RegionEmpty);
    }

    #[test]
    fn recall_threshold_examples() {
        assert_eq!(base_recall_threshold(1.0, 100.0, 50.0, 0.4, 70.0, 0.9), Threshold::Value(0.0));
        match base_recall_threshold(0.9, 1000.0, 500.0, 0.5, 1000.0, 0.9) {
            Threshold::Value(t) => assert_abs_diff_eq!(t, 0.1 * (250.0 + 900.0) / 900.0, epsilon = 1e-12),
            other => panic!("{other:?}"),
        }
        assert_eq!(base_recall_threshold(0.9, 100.0, 0.0, 0.0, 0.0, 0.0), Threshold::Value(0.0));
        assert_eq!(base_recall_threshold(0.9, 0.0, 1.0, 1.0, 1.0, 1.0), Threshold::RegionEmpty);
        assert_eq!(base_recall_threshold(0.0, 10.0, 1.0, 1.0, 1.0, 1.0), Threshold::Unconstrained);
    }

    /// Subsets of 10 pairs whose match counts are given.
    fn workload(counts: &[usize]) -> Workload {
        let m = counts.len();
        let mut pairs = Vec::new();
        for (s, &c) in counts.iter().enumerate() {
            for j in 0..10 {
                let metric = (s * 10 + j) as f64 / (m * 10) as f64;
                pairs.push(InstancePair::new(format!("{s:03}-{j}"), metric, Some(Label::from_bool(j < c))));
            }
        }
        Workload::new(pairs, 10).unwrap()
    }

    fn config(alpha: f64, beta: f64) -> SolverConfig {
        SolverConfig::new(QualityRequirement::new(alpha, beta, 0.9).unwrap())
    }

    #[test]
    fn zero_requirements_stop_at_first_check() {
        let w = workload(&[0, 1, 2, 3, 5, 6, 7, 8, 9, 10]);
        let src = LabelSource::ground_truth(w.len());
        let s = base_search(&w, &config(0.0, 0.0), &src).unwrap();
        // Median pair is in subset 4; one step on each side.
        assert_eq!(s.partition.human_subsets(), 3..5);
        assert_eq!(src.asked_count(), 20);
    }

    #[test]
    fn separable_workload_freezes_immediately() {
        let w = workload(&[0, 0, 0, 0, 0, 10, 10, 10, 10, 10]);
        let src = LabelSource::ground_truth(w.len());
        let s = base_search(
            &w,
            &SolverConfig {
                initial_subset: Some(5),
                ..config(0.9, 0.9)
            },
            &src,
        )
        .unwrap();
        assert_eq!(s.partition.human_subsets(), 4..6);
        assert!(!s.exhausted);
    }

    #[test]
    fn all_unmatch_workload() {
        let w = workload(&[0; 10]);
        let src = LabelSource::ground_truth(w.len());
        let s = base_search(&w, &config(0.9, 0.9), &src).unwrap();
        // Recall is vacuous below the start; precision needs an empty D_+.
        assert_eq!(s.partition.human_subsets(), 3..10);
        assert!(s.labels.iter().all(|(_, l)| l.unwrap().0 == Label::Unmatch));
    }

    #[test]
    fn unmet_requirement_exhausts() {
        // Decreasing proportions: neither condition certifies before its edge.
        let w = workload(&[10, 9, 8, 7, 6, 5, 4, 3, 2, 1]);
        let src = LabelSource::ground_truth(w.len());
        let s = base_search(&w, &config(0.95, 0.95), &src).unwrap();
        assert!(s.exhausted);
        assert!(s.partition.is_full());
        assert_eq!(s.human_cost(), w.len());
    }
}
