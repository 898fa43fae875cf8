use crate::error::Result;
use crate::model::{BoundEstimates, BoundSource, Partition, Solution, SolverKind, Workload};
use crate::oracle::LabelSource;

use super::sampling::{partial_sampling_bounds, SampledRegion};
use super::{finish, label_subset, precision_met, recall_met, SolverConfig};

/// Starts from the partial-sampling region, restarts the human region at its
/// median subset and grows it on alternating sides, upper first, within the
/// partial-sampling bounds. Each side freezes once the better of the
/// monotonicity and sampling bounds certifies its requirement.
pub fn hybrid_search(workload: &Workload, config: &SolverConfig, source: &LabelSource) -> Result<Solution> {
    let mut region = partial_sampling_bounds(workload, config, source)?;
    let cap = region.partition.human_subsets();
    let m = workload.subset_count();
    if cap.is_empty() {
        let estimates = BoundEstimates {
            matches_plus_lb: region.interval(cap.end, m).lower,
            plus_source: BoundSource::SamplingGp,
            matches_minus_ub: region.interval(0, cap.start).upper,
            minus_source: BoundSource::SamplingGp,
            matches_human: 0.0,
        };
        return finish(workload, SolverKind::Hybrid, region.partition, source, Some(estimates));
    }
    let req = config.requirement;
    let w = config.base_window;
    let center = (cap.start + cap.end - 1) / 2;
    let pairs = |a: usize, b: usize| workload.span(a..b).len() as f64;

    let mut matches = vec![0usize; m];
    let proportion = |matches: &[usize], a: usize, b: usize| {
        let n = pairs(a, b);
        if n == 0.0 {
            0.0
        } else {
            matches[a..b].iter().sum::<usize>() as f64 / n
        }
    };
    matches[center] = label_subset(workload, center, source)?;
    let (mut lower, mut upper) = (center, center + 1);
    source.set_bounds(lower, upper);

    // Better lower bound on matches above `upper`.
    let plus_bound = |region: &mut SampledRegion, matches: &[usize], upper: usize| -> (f64, BoundSource) {
        let n_plus = pairs(upper, m);
        if n_plus == 0.0 {
            return (0.0, BoundSource::Exact);
        }
        let win = upper.saturating_sub(w).max(center)..upper;
        let mono = proportion(matches, win.start, win.end) * n_plus;
        let sampled = region.interval(upper, m).lower;
        if mono >= sampled {
            (mono, BoundSource::Monotonicity)
        } else {
            (sampled, BoundSource::SamplingGp)
        }
    };

    let (mut lower_frozen, mut upper_frozen) = (false, false);
    let (mut plus_lb, mut plus_source) = plus_bound(&mut region, &matches, upper);
    let (mut minus_ub, mut minus_source) = (0.0, BoundSource::Exact);
    while !(lower_frozen && upper_frozen) {
        if !upper_frozen {
            if upper == cap.end {
                upper_frozen = true;
            } else {
                matches[upper] = label_subset(workload, upper, source)?;
                upper += 1;
                source.set_bounds(lower, upper);
                (plus_lb, plus_source) = plus_bound(&mut region, &matches, upper);
                let human: usize = matches[lower..upper].iter().sum();
                upper_frozen = precision_met(human as f64, plus_lb, pairs(upper, m), req.alpha);
            }
        }
        if !lower_frozen {
            if lower == cap.start {
                lower_frozen = true;
            } else {
                lower -= 1;
                matches[lower] = label_subset(workload, lower, source)?;
                source.set_bounds(lower, upper);
                let n_minus = pairs(0, lower);
                (minus_ub, minus_source) = if n_minus == 0.0 {
                    (0.0, BoundSource::Exact)
                } else {
                    let mono = proportion(&matches, lower, (lower + w).min(center)) * n_minus;
                    let sampled = region.interval(0, lower).upper;
                    if mono <= sampled {
                        (mono, BoundSource::Monotonicity)
                    } else {
                        (sampled, BoundSource::SamplingGp)
                    }
                };
                let human: usize = matches[lower..upper].iter().sum();
                lower_frozen = recall_met(human as f64 + plus_lb, minus_ub, req.beta);
            }
        }
    }
    if lower == cap.start && lower > 0 {
        // The lower side stopped at the cap; report the sampling bound that certified it.
        (minus_ub, minus_source) = (region.interval(0, lower).upper, BoundSource::SamplingGp);
    }

    let estimates = BoundEstimates {
        matches_plus_lb: plus_lb,
        plus_source,
        matches_minus_ub: minus_ub,
        minus_source,
        matches_human: 0.0,
    };
    finish(
        workload,
        SolverKind::Hybrid,
        Partition::new(lower, upper, m)?,
        source,
        Some(estimates),
    )
}
