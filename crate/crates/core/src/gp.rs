//! Gaussian-process regression of the match proportion as a function of the
//! metric, and the adaptive sampling loop that trains it.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Workload;
use crate::oracle::LabelSource;
use crate::stratified::{draw_sample, sample_size, z_quantile, CountInterval, StratumSample};

pub const DEFAULT_SIGNAL_VARIANCE: f64 = 0.25;
pub const DEFAULT_LENGTH_SCALE: f64 = 0.1;
/// Lower limit on the noise variance estimated from sampling error.
pub const NOISE_FLOOR: f64 = 1e-4;
pub const DEFAULT_EPSILON: f64 = 0.05;

const MAX_JITTER: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
}

impl Hyper {
    /// Squared-exponential covariance of the latent function.
    pub fn kernel(&self, a: f64, b: f64) -> f64 {
        let d = (a - b) / self.length_scale;
        self.signal_variance * (-0.5 * d * d).exp()
    }
}

/// How signal variance and length scale are chosen during a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperPolicy {
    Fixed {
        signal_variance: f64,
        length_scale: f64,
    },
    /// Maximize the log marginal likelihood over the grid.
    Grid {
        signal_variances: Vec<f64>,
        length_scales: Vec<f64>,
    },
}

impl Default for HyperPolicy {
    fn default() -> Self {
        HyperPolicy::Fixed {
            signal_variance: DEFAULT_SIGNAL_VARIANCE,
            length_scale: DEFAULT_LENGTH_SCALE,
        }
    }
}

impl HyperPolicy {
    pub fn default_grid() -> Self {
        HyperPolicy::Grid {
            signal_variances: vec![0.05, 0.1, 0.25, 0.5, 1.0],
            length_scales: vec![0.02, 0.05, 0.1, 0.2, 0.4],
        }
    }
}

/// A fitted regression with cached Cholesky factor of `K(V,V) + noise I`.
#[derive(Clone, Debug)]
pub struct GpModel {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    hyper: Hyper,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    weights: DVector<f64>,
}

/// Serializable record of a fit, enough to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpDump {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub hyper: Hyper,
    pub jitter: f64,
}

fn factor(inputs: &[f64], hyper: &Hyper) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = inputs.len();
    let k = DMatrix::from_fn(n, n, |i, j| hyper.kernel(inputs[i], inputs[j]));
    let mut jitter = 0.0;
    loop {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += hyper.noise_variance + jitter;
        }
        if let Some(chol) = m.cholesky() {
            // Rounding can let a singular matrix through with a vanishing pivot.
            let floor = 1e-12 * (hyper.signal_variance + hyper.noise_variance);
            if chol.l_dirty().diagonal().iter().all(|d| d * d > floor) {
                return Ok((chol, jitter));
            }
        }
        jitter = if jitter == 0.0 {
            1e-10 * hyper.signal_variance.max(1e-12)
        } else {
            jitter * 10.0
        };
        if jitter > MAX_JITTER {
            let eig = k.symmetric_eigenvalues();
            let (lo, hi) = eig.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &e| (lo.min(e), hi.max(e)));
            return Err(Error::Numerical(format!(
                "covariance of {n} points not positive definite after jitter {MAX_JITTER}; \
                 eigenvalues in [{lo:e}, {hi:e}], condition number ~{:e}",
                hi / lo.abs().max(f64::MIN_POSITIVE)
            )));
        }
    }
}

impl GpModel {
    /// Fits with explicit noise variance; hyperparameters per `policy`.
    pub fn fit(inputs: &[f64], targets: &[f64], noise_variance: f64, policy: &HyperPolicy) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Config(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if inputs.len() < 2 {
            return Err(Error::Config("a fit needs at least two points".into()));
        }
        if !(noise_variance >= 0.0) {
            return Err(Error::Config(format!("noise variance {noise_variance} is negative")));
        }
        match policy {
            HyperPolicy::Fixed {
                signal_variance,
                length_scale,
            } => Self::with_hyper(
                inputs,
                targets,
                Hyper {
                    signal_variance: *signal_variance,
                    length_scale: *length_scale,
                    noise_variance,
                },
            ),
            HyperPolicy::Grid {
                signal_variances,
                length_scales,
            } => {
                let mut best: Option<(f64, GpModel)> = None;
                for &signal_variance in signal_variances {
                    for &length_scale in length_scales {
                        let hyper = Hyper {
                            signal_variance,
                            length_scale,
                            noise_variance,
                        };
                        let Ok(model) = Self::with_hyper(inputs, targets, hyper) else {
                            continue;
                        };
                        let lml = model.log_marginal_likelihood();
                        if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                            best = Some((lml, model));
                        }
                    }
                }
                best.map(|(_, m)| m)
                    .ok_or_else(|| Error::Numerical("no grid point produced a valid fit".into()))
            }
        }
    }

    pub fn with_hyper(inputs: &[f64], targets: &[f64], hyper: Hyper) -> Result<Self> {
        if !(hyper.signal_variance > 0.0 && hyper.length_scale > 0.0) {
            return Err(Error::Config(format!("invalid hyperparameters {hyper:?}")));
        }
        let (chol, jitter) = factor(inputs, &hyper)?;
        let weights = chol.solve(&DVector::from_column_slice(targets));
        Ok(Self {
            inputs: inputs.to_vec(),
            targets: targets.to_vec(),
            hyper,
            jitter,
            chol,
            weights,
        })
    }

    pub fn from_dump(dump: &GpDump) -> Result<Self> {
        Self::with_hyper(&dump.inputs, &dump.targets, dump.hyper)
    }

    pub fn dump(&self) -> GpDump {
        GpDump {
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
            hyper: self.hyper,
            jitter: self.jitter,
        }
    }

    pub fn hyper(&self) -> Hyper {
        self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let y = DVector::from_column_slice(&self.targets);
        let log_det: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        let n = self.targets.len() as f64;
        -0.5 * y.dot(&self.weights) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Posterior mean of the latent proportion at one point.
    pub fn predict_mean(&self, x: f64) -> f64 {
        self.inputs
            .iter()
            .zip(self.weights.iter())
            .map(|(&v, w)| self.hyper.kernel(x, v) * w)
            .sum()
    }

    /// Posterior of the latent function at `queries`.
    pub fn posterior(&self, queries: &[f64]) -> ProportionPosterior {
        let t = self.inputs.len();
        let q = queries.len();
        let cross = DMatrix::from_fn(t, q, |i, j| self.hyper.kernel(self.inputs[i], queries[j]));
        let mean = cross.tr_mul(&self.weights);
        let w = self
            .chol
            .l()
            .solve_lower_triangular(&cross)
            .expect("Cholesky factor has a positive diagonal");
        let mut covariance = DMatrix::from_fn(q, q, |i, j| self.hyper.kernel(queries[i], queries[j]));
        covariance.gemm_tr(-1.0, &w, &w, 1.0);
        covariance = (&covariance + covariance.transpose()) * 0.5;
        for i in 0..q {
            if covariance[(i, i)] < 0.0 {
                covariance[(i, i)] = 0.0;
            }
        }
        ProportionPosterior {
            inputs: queries.to_vec(),
            mean,
            covariance,
        }
    }

    /// Posterior of a noisy observation at each query: the latent posterior
    /// plus the noise variance on the diagonal.
    pub fn predictive(&self, queries: &[f64]) -> ProportionPosterior {
        let mut post = self.posterior(queries);
        for i in 0..queries.len() {
            post.covariance[(i, i)] += self.hyper.noise_variance;
        }
        post
    }
}

/// Joint Gaussian over the proportions at a list of query points.
#[derive(Clone, Debug)]
pub struct ProportionPosterior {
    pub inputs: Vec<f64>,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl ProportionPosterior {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.covariance[(i, i)]
    }
}

/// Interval on `sum_i n_i X_i` for the joint posterior `X`.
pub fn aggregate_count_interval(post: &ProportionPosterior, sizes: &[usize], theta: f64) -> Result<CountInterval> {
    if sizes.len() != post.len() {
        return Err(Error::Config(format!(
            "{} subset sizes for a posterior over {} points",
            sizes.len(),
            post.len()
        )));
    }
    let n = DVector::from_iterator(sizes.len(), sizes.iter().map(|&s| s as f64));
    let mean = n.dot(&post.mean);
    let var = (&post.covariance * &n).dot(&n);
    Ok(CountInterval::clamped(
        mean,
        z_quantile(theta) * clamp_variance(var),
        n.sum(),
        theta,
    ))
}

fn clamp_variance(var: f64) -> f64 {
    if var < 0.0 {
        log::warn!("aggregate variance {var:e} negative from rounding, using 0");
        0.0
    } else {
        var.sqrt()
    }
}

/// Prefix sums of a posterior over every subset, answering count intervals
/// for contiguous subset ranges in constant time.
#[derive(Clone, Debug)]
pub struct RangeSums {
    /// `mean[i]` = sum over subsets below `i` of `n_k mu_k`.
    mean: Vec<f64>,
    /// `cov[x * (m + 1) + y]` = sum over `k < x`, `l < y` of `n_k n_l C_kl`.
    cov: Vec<f64>,
    sizes: Vec<f64>,
    m: usize,
}

impl RangeSums {
    pub fn new(post: &ProportionPosterior, sizes: &[usize]) -> Self {
        let m = post.len();
        assert_eq!(sizes.len(), m, "one size per posterior point");
        let stride = m + 1;
        let mut mean = vec![0.0; stride];
        let mut cov = vec![0.0; stride * stride];
        let mut cum_sizes = vec![0.0; stride];
        for k in 0..m {
            let nk = sizes[k] as f64;
            mean[k + 1] = mean[k] + nk * post.mean[k];
            cum_sizes[k + 1] = cum_sizes[k] + nk;
            let mut row = 0.0;
            for l in 0..m {
                row += nk * sizes[l] as f64 * post.covariance[(k, l)];
                cov[(k + 1) * stride + l + 1] = cov[k * stride + l + 1] + row;
            }
        }
        Self {
            mean,
            cov,
            sizes: cum_sizes,
            m,
        }
    }

    pub fn subset_count(&self) -> usize {
        self.m
    }

    fn s(&self, x: usize, y: usize) -> f64 {
        self.cov[x * (self.m + 1) + y]
    }

    /// Mean and variance of the match count over subsets `a..b`.
    pub fn moments(&self, a: usize, b: usize) -> (f64, f64) {
        if a >= b {
            return (0.0, 0.0);
        }
        let mean = self.mean[b] - self.mean[a];
        let var = self.s(b, b) - self.s(a, b) - self.s(b, a) + self.s(a, a);
        (mean, var)
    }

    pub fn interval(&self, a: usize, b: usize, z: f64) -> CountInterval {
        if a >= b {
            return CountInterval::exact(0.0);
        }
        let (mean, var) = self.moments(a, b);
        let population = self.sizes[b] - self.sizes[a];
        CountInterval::clamped(mean, z * var.max(0.0).sqrt(), population, f64::NAN)
    }
}

/// Settings of the adaptive sampling loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Minimum fraction of subsets sampled.
    pub p_lower: f64,
    /// Maximum fraction of subsets sampled.
    pub p_upper: f64,
    pub epsilon: f64,
    pub sample_size: usize,
    pub seed: u64,
    pub policy: HyperPolicy,
}

/// Result of the adaptive sampling loop.
#[derive(Clone, Debug)]
pub struct TrainedProportion {
    pub model: GpModel,
    /// Samples by subset index.
    pub samples: BTreeMap<usize, StratumSample>,
    /// Subsets in the order they were sampled.
    pub order: Vec<usize>,
}

/// Count `m * p` rounded up, tolerant of floating-point error in the product.
fn ceil_fraction(m: usize, p: f64) -> usize {
    (m as f64 * p - 1e-9).ceil().max(0.0) as usize
}

/// Noise variance estimated from the samples' binomial error.
pub fn sampling_noise<'a>(samples: impl IntoIterator<Item = &'a StratumSample>) -> f64 {
    let (sum, count) = samples.into_iter().fold((0.0, 0usize), |(s, c), x| {
        let r = x.proportion();
        (s + r * (1.0 - r) / x.size as f64, c + 1)
    });
    if count == 0 {
        NOISE_FLOOR
    } else {
        (sum / count as f64).max(NOISE_FLOOR)
    }
}

fn fit_samples(workload: &Workload, samples: &BTreeMap<usize, StratumSample>, policy: &HyperPolicy) -> Result<GpModel> {
    let inputs: Vec<f64> = samples.keys().map(|&i| workload.subset_mean_metric(i)).collect();
    let targets: Vec<f64> = samples.values().map(StratumSample::proportion).collect();
    GpModel::fit(&inputs, &targets, sampling_noise(samples.values()), policy)
}

/// Samples equidistant subsets, then bisects between neighbours wherever the
/// model mispredicts a freshly sampled midpoint by `epsilon` or more, until
/// the sampling budget is spent or no gaps remain.
pub fn fit_proportion_function(workload: &Workload, plan: &SamplingPlan, source: &LabelSource) -> Result<TrainedProportion> {
    if !(plan.p_lower > 0.0 && plan.p_lower <= plan.p_upper && plan.p_upper <= 1.0) {
        return Err(Error::Config(format!(
            "sampling range [{}, {}] must satisfy 0 < p_l <= p_u <= 1",
            plan.p_lower, plan.p_upper
        )));
    }
    if !(plan.epsilon > 0.0) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    if plan.sample_size == 0 {
        return Err(Error::Config("sample size must be positive".into()));
    }
    let m = workload.subset_count();
    if (m as f64) * plan.p_lower < 2.0 - 1e-9 {
        return Err(Error::Config(format!(
            "{m} subsets at p_l = {} give fewer than two initial samples",
            plan.p_lower
        )));
    }
    let initial = ceil_fraction(m, plan.p_lower).min(m);
    let budget = ceil_fraction(m, plan.p_upper).min(m);

    let mut anchors: Vec<usize> = (0..initial)
        .map(|k| ((k * (m - 1)) as f64 / (initial - 1) as f64).round() as usize)
        .collect();
    anchors.dedup();

    let mut samples = BTreeMap::new();
    let mut order = Vec::new();
    let sample = |subset: usize| {
        let k = sample_size(workload.subset_len(subset), plan.sample_size);
        draw_sample(workload, subset, k, plan.seed, source)
    };
    for &i in &anchors {
        samples.insert(i, sample(i)?);
        order.push(i);
    }
    let mut model = fit_samples(workload, &samples, &plan.policy)?;

    let mut queue: VecDeque<(usize, usize)> = anchors.windows(2).map(|w| (w[0], w[1])).collect();
    while samples.len() < budget {
        let Some((a, b)) = queue.pop_front() else {
            break;
        };
        if b - a < 2 {
            continue;
        }
        let x = (a + b) / 2;
        let predicted = model.predict_mean(workload.subset_mean_metric(x));
        let s = sample(x)?;
        let miss = (predicted - s.proportion()).abs();
        samples.insert(x, s);
        order.push(x);
        model = fit_samples(workload, &samples, &plan.policy)?;
        if miss >= plan.epsilon {
            queue.push_back((a, x));
            queue.push_back((x, b));
        }
    }
    log::debug!("trained on {} of {m} subsets", samples.len());
    Ok(TrainedProportion { model, samples, order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InstancePair, Label};
    use approx::assert_abs_diff_eq;

    fn fixed(sv: f64, ls: f64) -> HyperPolicy {
        HyperPolicy::Fixed {
            signal_variance: sv,
            length_scale: ls,
        }
    }

    #[test]
    fn interpolates_without_noise() {
        let m = GpModel::fit(&[0.2, 0.6], &[0.1, 0.7], 0.0, &fixed(0.25, 0.1)).unwrap();
        let p = m.posterior(&[0.2, 0.6]);
        assert_abs_diff_eq!(p.mean[0], 0.1, epsilon = 1e-8);
        assert_abs_diff_eq!(p.mean[1], 0.7, epsilon = 1e-8);
        assert_abs_diff_eq!(p.variance(0), 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(p.variance(1), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let m = GpModel::fit(&[0.2, 0.3], &[0.1, 0.7], 0.0, &fixed(0.25, 0.1)).unwrap();
        let p = m.posterior(&[1.3]);
        assert_abs_diff_eq!(p.mean[0], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(p.variance(0), 0.25, epsilon = 1e-6);
    }

    #[test]
    fn two_point_hand_solve() {
        let (sv, ls, noise) = (0.25, 0.1, 0.01);
        let (x1, x2, y1, y2, q) = (0.3, 0.45, 0.2, 0.5, 0.4);
        let k = |a: f64, b: f64| sv * (-0.5 * ((a - b) / ls).powi(2)).exp();
        // Hand inverse of the 2x2 matrix [[a, b], [b, d]].
        let (a, b, d) = (k(x1, x1) + noise, k(x1, x2), k(x2, x2) + noise);
        let det = a * d - b * b;
        let inv = [[d / det, -b / det], [-b / det, a / det]];
        let ks = [k(q, x1), k(q, x2)];
        let w = [inv[0][0] * y1 + inv[0][1] * y2, inv[1][0] * y1 + inv[1][1] * y2];
        let mean = ks[0] * w[0] + ks[1] * w[1];
        let quad = ks[0] * (inv[0][0] * ks[0] + inv[0][1] * ks[1]) + ks[1] * (inv[1][0] * ks[0] + inv[1][1] * ks[1]);
        let var = k(q, q) - quad;

        let m = GpModel::fit(&[x1, x2], &[y1, y2], noise, &fixed(sv, ls)).unwrap();
        let p = m.posterior(&[q]);
        assert_abs_diff_eq!(p.mean[0], mean, epsilon = 1e-10);
        assert_abs_diff_eq!(p.variance(0), var, epsilon = 1e-10);
        assert_abs_diff_eq!(m.predict_mean(q), mean, epsilon = 1e-10);
        assert_abs_diff_eq!(m.predictive(&[q]).variance(0), var + noise, epsilon = 1e-10);
    }

    #[test]
    fn duplicate_inputs_get_jitter() {
        let dedup = GpModel::fit(&[0.1, 0.5, 0.9], &[0.0, 0.4, 0.9], 0.0, &fixed(0.25, 0.1)).unwrap();
        let dup = GpModel::fit(&[0.1, 0.5, 0.5, 0.9], &[0.0, 0.4, 0.4, 0.9], 0.0, &fixed(0.25, 0.1)).unwrap();
        assert!(dup.jitter() > 0.0);
        for q in [0.0, 0.3, 0.5, 0.7, 1.0] {
            assert!((dup.predict_mean(q) - dedup.predict_mean(q)).abs() < 1e-3);
        }
    }

    #[test]
    fn grid_picks_best_likelihood() {
        let xs: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.95 / (1.0 + (-14.0 * (x - 0.55)).exp())).collect();
        let policy = HyperPolicy::default_grid();
        let m = GpModel::fit(&xs, &ys, 1e-4, &policy).unwrap();
        let HyperPolicy::Grid {
            signal_variances,
            length_scales,
        } = &policy
        else {
            unreachable!()
        };
        let mut best = f64::MIN;
        for &sv in signal_variances {
            for &ls in length_scales {
                let lml = GpModel::fit(&xs, &ys, 1e-4, &fixed(sv, ls)).unwrap().log_marginal_likelihood();
                best = best.max(lml);
            }
        }
        assert_eq!(m.log_marginal_likelihood(), best);
        let ls = m.hyper().length_scale;
        assert!(length_scales.contains(&ls));
    }

    #[test]
    fn aggregate_single_subset() {
        let post = ProportionPosterior {
            inputs: vec![0.5],
            mean: DVector::from_element(1, 0.4),
            covariance: DMatrix::from_element(1, 1, 0.01),
        };
        let ci = aggregate_count_interval(&post, &[200], 0.9).unwrap();
        let z = 1.6448536269514722;
        assert_abs_diff_eq!(ci.lower, 200.0 * (0.4 - z * 0.1), epsilon = 1e-6);
        assert_abs_diff_eq!(ci.upper, 200.0 * (0.4 + z * 0.1), epsilon = 1e-6);
        assert_abs_diff_eq!(ci.lower, 47.1, epsilon = 0.1);
        assert_abs_diff_eq!(ci.upper, 112.9, epsilon = 0.1);

        let flat = ProportionPosterior {
            covariance: DMatrix::zeros(1, 1),
            ..post.clone()
        };
        let ci = aggregate_count_interval(&flat, &[200], 0.9).unwrap();
        assert_eq!((ci.lower, ci.upper), (80.0, 80.0));

        let low = ProportionPosterior {
            mean: DVector::from_element(1, 0.01),
            covariance: DMatrix::from_element(1, 1, 0.04),
            ..post
        };
        assert_eq!(aggregate_count_interval(&low, &[200], 0.9).unwrap().lower, 0.0);
    }

    #[test]
    fn range_sums_match_direct_aggregation() {
        let m = GpModel::fit(&[0.1, 0.4, 0.8], &[0.0, 0.3, 0.9], 0.01, &HyperPolicy::default()).unwrap();
        let queries: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
        let sizes = vec![200, 200, 200, 200, 200, 200, 200, 200, 50];
        let post = m.predictive(&queries);
        let sums = RangeSums::new(&post, &sizes);
        let z = z_quantile(0.9);
        for a in 0..9 {
            for b in a + 1..=9 {
                let sub = ProportionPosterior {
                    inputs: queries[a..b].to_vec(),
                    mean: post.mean.rows(a, b - a).into_owned(),
                    covariance: post.covariance.view((a, a), (b - a, b - a)).into_owned(),
                };
                let direct = aggregate_count_interval(&sub, &sizes[a..b], 0.9).unwrap();
                let fast = sums.interval(a, b, z);
                assert_abs_diff_eq!(direct.lower, fast.lower, epsilon = 1e-6);
                assert_abs_diff_eq!(direct.upper, fast.upper, epsilon = 1e-6);
            }
        }
        assert_eq!(sums.interval(3, 3, z).upper, 0.0);
    }

    #[test]
    fn dump_round_trip() {
        let m = GpModel::fit(&[0.1, 0.5, 0.9], &[0.0, 0.4, 0.9], 0.02, &HyperPolicy::default()).unwrap();
        let json = serde_json::to_string(&m.dump()).unwrap();
        let back = GpModel::from_dump(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.predict_mean(0.33), m.predict_mean(0.33));
    }

    fn proportion_workload(m: usize, f: impl Fn(f64) -> f64) -> Workload {
        let size = 20;
        let mut pairs = Vec::new();
        for s in 0..m {
            let v = (s as f64 + 0.5) / m as f64;
            let matches = (f(v) * size as f64).round() as usize;
            for j in 0..size {
                let metric = (s * size + j) as f64 / (m * size) as f64;
                pairs.push(InstancePair::new(format!("s{s:03}p{j:02}"), metric, Some(Label::from_bool(j < matches))));
            }
        }
        Workload::new(pairs, size).unwrap()
    }

    fn plan(p_lower: f64, p_upper: f64) -> SamplingPlan {
        SamplingPlan {
            p_lower,
            p_upper,
            epsilon: 0.05,
            sample_size: 20,
            seed: 1,
            policy: HyperPolicy::default(),
        }
    }

    #[test]
    fn equal_budget_stops_after_initial_samples() {
        let w = proportion_workload(100, |v| v);
        let src = LabelSource::ground_truth(w.len());
        let t = fit_proportion_function(&w, &plan(0.05, 0.05), &src).unwrap();
        assert_eq!(t.order, vec![0, 25, 50, 74, 99]);
        assert_eq!(src.asked_count(), 5 * 20);
    }

    #[test]
    fn alternating_proportions_hit_budget() {
        // Every subset differs from both neighbours, so every midpoint is mispredicted.
        let w = proportion_workload(100, |v| ((v * 100.0) as usize % 2) as f64);
        let src = LabelSource::ground_truth(w.len());
        let t = fit_proportion_function(&w, &plan(0.03, 0.2), &src).unwrap();
        assert_eq!(t.samples.len(), 20);
    }

    #[test]
    fn linear_proportions_need_no_refinement() {
        let w = proportion_workload(100, |v| v);
        let src = LabelSource::ground_truth(w.len());
        let plan = SamplingPlan {
            policy: HyperPolicy::default_grid(),
            ..plan(0.05, 0.5)
        };
        let t = fit_proportion_function(&w, &plan, &src).unwrap();
        // Five anchors plus the four midpoints between them.
        assert_eq!(t.samples.len(), 9);
    }

    #[test]
    fn rejects_too_few_initial_samples() {
        let w = proportion_workload(100, |v| v);
        let src = LabelSource::ground_truth(w.len());
        assert!(fit_proportion_function(&w, &plan(0.01, 0.05), &src).is_err());
        assert!(fit_proportion_function(&w, &plan(0.1, 0.05), &src).is_err());
        assert_eq!(src.asked_count(), 0);
    }
}
