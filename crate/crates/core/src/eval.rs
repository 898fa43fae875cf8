//! Repeated seeded trials, requirement sweeps and their CSV reports.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{precision, recall};
use crate::model::{QualityRequirement, Solution, SolverKind, Workload};
use crate::oracle::LabelSource;
use crate::solvers::{solve, SolverConfig};
use crate::synthetic::{generate, SyntheticSpec};

/// Where each trial's workload comes from.
#[derive(Clone, Debug)]
pub enum TrialData {
    /// The same workload for every trial; only the solver seed varies.
    Fixed(Arc<Workload>),
    /// A fresh synthetic workload per trial, seeded by the trial seed.
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub solver: SolverKind,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    /// Fraction of the workload labeled by the human.
    pub human_cost: f64,
    pub success: bool,
    /// Solver time, excluding time spent waiting for labels.
    pub runtime_secs: f64,
    pub exhausted: bool,
    pub lower: usize,
    pub upper: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    /// Trials that produced a solution; means are over these.
    pub completed: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_cost: f64,
    /// Successful trials over all trials; failed trials count as unsuccessful.
    pub success_rate: f64,
    pub mean_runtime_secs: f64,
}

/// Seed of trial `index` under `master` (SplitMix64 step).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Achieved precision and recall of a solution against ground truth.
pub fn achieved_quality(workload: &Workload, solution: &Solution) -> Result<(f64, f64)> {
    Ok((
        precision(workload, &solution.labels)?.value,
        recall(workload, &solution.labels)?.value,
    ))
}

/// One solver run against the ground-truth oracle.
pub fn run_trial(workload: &Workload, solver: SolverKind, config: &SolverConfig) -> TrialReport {
    let source = LabelSource::ground_truth(workload.len());
    let started = Instant::now();
    let outcome = solve(solver, workload, config, &source);
    let runtime = started.elapsed().saturating_sub(source.waiting_time());
    let mut report = TrialReport {
        solver,
        seed: config.seed,
        precision: 0.0,
        recall: 0.0,
        human_cost: source.human_cost().fraction,
        success: false,
        runtime_secs: runtime.as_secs_f64(),
        exhausted: false,
        lower: 0,
        upper: 0,
        error: None,
    };
    let quality = outcome.and_then(|s| achieved_quality(workload, &s).map(|q| (s, q)));
    match quality {
        Ok((solution, (p, r))) => {
            report.precision = p;
            report.recall = r;
            report.human_cost = solution.human_cost_fraction();
            report.success = config.requirement.is_met(p, r);
            report.exhausted = solution.exhausted;
            report.lower = solution.partition.human_subsets().start;
            report.upper = solution.partition.human_subsets().end;
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    report
}

/// Exact means over the completed trials.
pub fn aggregate(reports: &[TrialReport]) -> Aggregate {
    let done: Vec<&TrialReport> = reports.iter().filter(|r| r.error.is_none()).collect();
    let mean = |f: fn(&TrialReport) -> f64| {
        if done.is_empty() {
            0.0
        } else {
            done.iter().map(|r| f(r)).sum::<f64>() / done.len() as f64
        }
    };
    Aggregate {
        runs: reports.len(),
        completed: done.len(),
        mean_precision: mean(|r| r.precision),
        mean_recall: mean(|r| r.recall),
        mean_cost: mean(|r| r.human_cost),
        success_rate: if reports.is_empty() {
            0.0
        } else {
            reports.iter().filter(|r| r.success).count() as f64 / reports.len() as f64
        },
        mean_runtime_secs: mean(|r| r.runtime_secs),
    }
}

/// Runs `n_runs` independent trials in parallel, reported in seed order.
///
/// Trial `i` uses seed `derive_seed(master_seed, i)` for both the solver and,
/// for synthetic data, the generator, so different solvers given the same
/// master seed see the same workloads.
pub fn run_trials(
    data: &TrialData,
    solver: SolverKind,
    config: &SolverConfig,
    n_runs: usize,
    master_seed: u64,
) -> Result<(Vec<TrialReport>, Aggregate)> {
    if n_runs == 0 {
        return Err(Error::Config("need at least one run".into()));
    }
    config.validate()?;
    let reports: Vec<TrialReport> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(master_seed, i);
            let config = SolverConfig {
                seed,
                ..config.clone()
            };
            match data {
                TrialData::Fixed(w) => run_trial(w, solver, &config),
                TrialData::Synthetic(spec) => match generate(&SyntheticSpec { seed, ..*spec }) {
                    Ok(w) => run_trial(&w, solver, &config),
                    Err(e) => failed_trial(solver, seed, e),
                },
            }
        })
        .collect();
    let agg = aggregate(&reports);
    Ok((reports, agg))
}

fn failed_trial(solver: SolverKind, seed: u64, e: Error) -> TrialReport {
    TrialReport {
        solver,
        seed,
        precision: 0.0,
        recall: 0.0,
        human_cost: 0.0,
        success: false,
        runtime_secs: 0.0,
        exhausted: false,
        lower: 0,
        upper: 0,
        error: Some(e.to_string()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Precision and recall targets together.
    AlphaBeta,
    Theta,
    Tau,
    Sigma,
    Size,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::AlphaBeta => "alpha_beta",
            Axis::Theta => "theta",
            Axis::Tau => "tau",
            Axis::Sigma => "sigma",
            Axis::Size => "size",
        }
    }

    /// Conventional output file name; `dataset` labels the requirement sweeps.
    pub fn file_name(self, dataset: &str) -> String {
        match self {
            Axis::AlphaBeta => format!("fig5_{dataset}.csv"),
            Axis::Theta => format!("fig6_{dataset}.csv"),
            Axis::Tau => "fig7_tau.csv".into(),
            Axis::Sigma => "fig8_sigma.csv".into(),
            Axis::Size => "fig10_size.csv".into(),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "alpha_beta" | "quality" | "requirement" => Ok(Axis::AlphaBeta),
            "theta" | "confidence" => Ok(Axis::Theta),
            "tau" => Ok(Axis::Tau),
            "sigma" => Ok(Axis::Sigma),
            "size" | "n" => Ok(Axis::Size),
            other => Err(Error::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepPlan {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub solvers: Vec<SolverKind>,
    pub data: TrialData,
    pub config: SolverConfig,
    pub runs: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: f64,
    pub solver: SolverKind,
    pub aggregate: Aggregate,
}

/// Every (value, solver) cell of the sweep, value-major.
pub fn sweep(plan: &SweepPlan) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &value in &plan.values {
        let (data, config) = sweep_cell(plan, value)?;
        for &solver in &plan.solvers {
            let (_, aggregate) = run_trials(&data, solver, &config, plan.runs, plan.master_seed)?;
            rows.push(SweepRow {
                axis: plan.axis,
                value,
                solver,
                aggregate,
            });
        }
    }
    Ok(rows)
}

fn sweep_cell(plan: &SweepPlan, value: f64) -> Result<(TrialData, SolverConfig)> {
    let mut config = plan.config.clone();
    let req = config.requirement;
    let synthetic = |f: &dyn Fn(&mut SyntheticSpec)| match &plan.data {
        TrialData::Synthetic(spec) => {
            let mut spec = *spec;
            f(&mut spec);
            Ok(TrialData::Synthetic(spec))
        }
        TrialData::Fixed(_) => Err(Error::Config(format!(
            "sweeping {} needs synthetic data",
            plan.axis
        ))),
    };
    let data = match plan.axis {
        Axis::AlphaBeta => {
            config.requirement = QualityRequirement::new(value, value, req.theta)?;
            plan.data.clone()
        }
        Axis::Theta => {
            config.requirement = QualityRequirement::new(req.alpha, req.beta, value)?;
            plan.data.clone()
        }
        Axis::Tau => synthetic(&|s| s.tau = value)?,
        Axis::Sigma => synthetic(&|s| s.sigma = value)?,
        Axis::Size => synthetic(&|s| s.n_pairs = value as usize)?,
    };
    Ok((data, config))
}

const AGGREGATE_COLUMNS: [&str; 7] = [
    "runs",
    "completed",
    "success_rate",
    "mean_precision",
    "mean_recall",
    "mean_cost",
    "mean_runtime_secs",
];

fn aggregate_fields(a: &Aggregate) -> [String; 7] {
    [
        a.runs.to_string(),
        a.completed.to_string(),
        a.success_rate.to_string(),
        a.mean_precision.to_string(),
        a.mean_recall.to_string(),
        a.mean_cost.to_string(),
        a.mean_runtime_secs.to_string(),
    ]
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["axis", "value", "solver"];
    header.extend(AGGREGATE_COLUMNS);
    w.write_record(&header)?;
    for row in rows {
        let mut record = vec![row.axis.to_string(), row.value.to_string(), row.solver.to_string()];
        record.extend(aggregate_fields(&row.aggregate));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trials_csv<W: Write>(reports: &[TrialReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials_csv<R: std::io::Read>(reader: R) -> Result<Vec<TrialReport>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// One row per solver.
pub fn write_aggregates_csv<W: Write>(rows: &[(SolverKind, Aggregate)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["solver"];
    header.extend(AGGREGATE_COLUMNS);
    w.write_record(&header)?;
    for (solver, agg) in rows {
        let mut record = vec![solver.to_string()];
        record.extend(aggregate_fields(agg));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
