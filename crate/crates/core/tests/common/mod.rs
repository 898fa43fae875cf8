//! Independent reference computations shared by the integration tests and
//! the acceptance run.
#![allow(dead_code)]

use erq_core::model::{InstancePair, Label, QualityRequirement, Workload};
use erq_core::stratified::{count_interval, StratumSample};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// GP posterior mean and covariance from an explicit matrix inverse.
pub fn dense_posterior(
    inputs: &[f64],
    targets: &[f64],
    queries: &[f64],
    signal_variance: f64,
    length_scale: f64,
    noise: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let k = |a: f64, b: f64| signal_variance * (-(a - b).powi(2) / (2.0 * length_scale * length_scale)).exp();
    let t = inputs.len();
    let q = queries.len();
    let kxx = DMatrix::from_fn(t, t, |i, j| k(inputs[i], inputs[j]) + if i == j { noise } else { 0.0 });
    let kxq = DMatrix::from_fn(t, q, |i, j| k(inputs[i], queries[j]));
    let kqq = DMatrix::from_fn(q, q, |i, j| k(queries[i], queries[j]));
    let inv = kxx.try_inverse().expect("invertible training covariance");
    let y = DVector::from_column_slice(targets);
    let mean = kxq.transpose() * &inv * y;
    let cov = kqq - kxq.transpose() * &inv * &kxq;
    (mean, cov)
}

/// Pairs `s{subset}-{j}` whose truth is drawn per subset with the given
/// match probability, metrics increasing with position.
pub fn workload_from_probabilities(probs: &[f64], subset_size: usize, last_len: usize, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = subset_size * (probs.len() - 1) + last_len;
    let mut pairs = Vec::with_capacity(total);
    for (s, &p) in probs.iter().enumerate() {
        let len = if s + 1 == probs.len() { last_len } else { subset_size };
        for j in 0..len {
            let metric = pairs.len() as f64 / total as f64;
            let truth = Label::from_bool(rng.random_bool(p));
            pairs.push(InstancePair::new(format!("s{s:03}-{j:03}"), metric, Some(truth)));
        }
    }
    Workload::new(pairs, subset_size).unwrap()
}

/// Smallest human region `[i, j)` over all subset pairs whose labeling meets
/// the requirement exactly; ties go to the larger `i`.
pub fn brute_force_region(workload: &Workload, req: &QualityRequirement) -> (usize, usize) {
    let m = workload.subset_count();
    let truth: Vec<bool> = workload.pairs().iter().map(|p| p.truth.unwrap().is_match()).collect();
    let mut best: Option<(usize, usize, usize)> = None;
    for i in 0..=m {
        for j in i..=m {
            let human = workload.span(i..j);
            let plus = workload.span(j..m);
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for (pos, &t) in truth.iter().enumerate() {
                let predicted = if pos < human.start {
                    false
                } else if pos < human.end {
                    t
                } else {
                    debug_assert!(plus.contains(&pos));
                    true
                };
                match (t, predicted) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
            let ok = |num: usize, den: usize, target: f64| den == 0 || num as f64 / den as f64 >= target;
            if ok(tp, tp + fp, req.alpha) && ok(tp, tp + fn_, req.beta) {
                let cost = human.len();
                let better = match best {
                    None => true,
                    Some((bc, bi, _)) => cost < bc || (cost == bc && i > bi),
                };
                if better {
                    best = Some((cost, i, j));
                }
            }
        }
    }
    let (_, i, j) = best.expect("the all-human region always qualifies");
    (i, j)
}

/// Fraction of `replicates` stratified samples whose count interval at
/// `theta` contains the true count of a fixed population.
pub fn stratified_coverage(theta: f64, replicates: usize, seed: u64) -> f64 {
    let proportions = [0.03, 0.1, 0.2, 0.35, 0.5, 0.6, 0.75, 0.85, 0.92, 0.98];
    let (population, k) = (200usize, 20usize);
    let matches: Vec<usize> = proportions.iter().map(|p| (p * population as f64).round() as usize).collect();
    let truth: usize = matches.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covered = 0;
    for _ in 0..replicates {
        let samples: Vec<StratumSample> = matches
            .iter()
            .enumerate()
            .map(|(s, &c)| {
                // Positions below `c` are the matches.
                let hits = sample(&mut rng, population, k).iter().filter(|&i| i < c).count();
                StratumSample::new(s, population, k, hits).unwrap()
            })
            .collect();
        let iv = count_interval(&samples, theta).unwrap();
        if iv.lower <= truth as f64 && truth as f64 <= iv.upper {
            covered += 1;
        }
    }
    covered as f64 / replicates as f64
}

/// Random requirement targets away from round values, so exact ties between
/// a ratio and its target do not hinge on floating-point rounding.
pub fn random_target(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi) + 1e-7
}
