use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use erq_core::eval::{
    achieved_quality, run_trials, sweep, write_aggregates_csv, write_sweep_csv, write_trials_csv, Axis, SweepPlan,
    TrialData,
};
use erq_core::gp::HyperPolicy;
use erq_core::io::write_workload_file;
use erq_core::oracle::{read_journal, LabelSource};
use erq_core::solvers::{
    export, solve, write_labels_csv, SolverConfig, DEFAULT_BASE_WINDOW, DEFAULT_P_LOWER, DEFAULT_P_UPPER,
};
use erq_core::stratified::DEFAULT_SAMPLE_SIZE;
use erq_core::synthetic::{generate, SyntheticSpec};
use erq_core::{QualityRequirement, Solution, SolverKind, Workload, DEFAULT_SUBSET_SIZE};
use serde::Serialize;
use serde_json::json;

use crate::inputs::{load, InputArgs};
use crate::server::{router, Session, SessionOptions, Status, DEFAULT_BATCH};

pub const EXIT_EXHAUSTED: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HyperChoice {
    Fixed,
    Grid,
}

#[derive(Args, Clone, Debug)]
pub struct SolverArgs {
    /// base, all, samp or hybr.
    #[arg(long, default_value = "hybrid", value_parser = parse_solver)]
    pub solver: SolverKind,
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.9)]
    pub theta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Subset where BASE starts; defaults to the median pair's subset.
    #[arg(long)]
    pub initial_subset: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_BASE_WINDOW)]
    pub base_window: usize,
    #[arg(long, default_value_t = DEFAULT_P_LOWER)]
    pub p_lower: f64,
    #[arg(long, default_value_t = DEFAULT_P_UPPER)]
    pub p_upper: f64,
    #[arg(long, default_value_t = erq_core::gp::DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Pairs sampled per sampled subset.
    #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
    pub sample_size: usize,
    /// Kernel hyperparameters: fixed defaults or a likelihood grid search.
    #[arg(long, value_enum, default_value_t = HyperChoice::Fixed)]
    pub hyper: HyperChoice,
}

fn parse_solver(s: &str) -> Result<SolverKind, String> {
    s.parse().map_err(|e: erq_core::Error| e.to_string())
}

impl SolverArgs {
    pub fn config(&self) -> Result<SolverConfig> {
        let config = SolverConfig {
            initial_subset: self.initial_subset,
            base_window: self.base_window,
            p_lower: self.p_lower,
            p_upper: self.p_upper,
            epsilon: self.epsilon,
            sample_size: self.sample_size,
            seed: self.seed,
            hyper_policy: match self.hyper {
                HyperChoice::Fixed => HyperPolicy::default(),
                HyperChoice::Grid => HyperPolicy::default_grid(),
            },
            ..SolverConfig::new(QualityRequirement::new(self.alpha, self.beta, self.theta)?)
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OracleChoice {
    /// Answer from the workload's truth column.
    GroundTruth,
    /// Answer from a transcript file of `pair_id,label` lines.
    Scripted,
}

#[derive(Args, Debug)]
pub struct ResolveArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = OracleChoice::GroundTruth)]
    pub oracle: OracleChoice,
    /// Transcript for `--oracle scripted`.
    #[arg(long, required_if_eq("oracle", "scripted"))]
    pub answers: Option<PathBuf>,
    /// Label journal to restore from and append to.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub solver: SolverKind,
    pub lower: usize,
    pub upper: usize,
    pub human_pairs: usize,
    pub human_cost: usize,
    pub human_cost_fraction: f64,
    pub exhausted: bool,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub success: Option<bool>,
}

pub fn summarize(solution: &Solution, workload: &Workload, config: &SolverConfig) -> Result<Summary> {
    let quality = workload
        .has_truth()
        .then(|| achieved_quality(workload, solution))
        .transpose()?;
    let human = solution.partition.human_subsets();
    Ok(Summary {
        solver: solution.solver,
        lower: human.start,
        upper: human.end,
        human_pairs: solution.partition.human(workload).len(),
        human_cost: solution.human_cost(),
        human_cost_fraction: solution.human_cost_fraction(),
        exhausted: solution.exhausted,
        precision: quality.map(|q| q.0),
        recall: quality.map(|q| q.1),
        success: quality.map(|(p, r)| config.requirement.is_met(p, r)),
    })
}

/// Writes `solution.json`, `labels.csv` and `summary.json` into `out`.
pub fn write_outputs(out: &Path, solution: &Solution, workload: &Workload, config: &SolverConfig) -> Result<Summary> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let exported = export(solution, workload, config);
    serde_json::to_writer_pretty(BufWriter::new(File::create(out.join("solution.json"))?), &exported)?;
    write_labels_csv(solution, workload, BufWriter::new(File::create(out.join("labels.csv"))?))?;
    let summary = summarize(solution, workload, config)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(out.join("summary.json"))?), &summary)?;
    Ok(summary)
}

fn print_summary(summary: &Summary) {
    println!(
        "{}: human region [{}, {}) with {} pairs; human cost {} ({:.2}%){}",
        summary.solver,
        summary.lower,
        summary.upper,
        summary.human_pairs,
        summary.human_cost,
        summary.human_cost_fraction * 100.0,
        if summary.exhausted { "; requirement not certified below a full human pass" } else { "" }
    );
    if let (Some(p), Some(r), Some(ok)) = (summary.precision, summary.recall, summary.success) {
        println!("achieved precision {p:.4}, recall {r:.4}: {}", if ok { "met" } else { "NOT met" });
    }
}

/// Returns the process exit code: 0, or 2 when the solver fell back to
/// labeling everything.
pub fn resolve(args: &ResolveArgs) -> Result<u8> {
    let config = args.solver.config()?;
    let input = load(&args.input)?;
    let workload = &input.workload;
    let mut source = match args.oracle {
        OracleChoice::GroundTruth => {
            if !workload.has_truth() {
                bail!("the workload has no truth column; use --oracle scripted or `erq serve`");
            }
            LabelSource::ground_truth(workload.len())
        }
        OracleChoice::Scripted => {
            let path = args.answers.as_deref().context("--oracle scripted needs --answers")?;
            let transcript = read_journal(path).with_context(|| format!("reading {}", path.display()))?;
            LabelSource::scripted(transcript, workload.len())
        }
    };
    if let Some(journal) = &args.journal {
        source = source.with_journal(journal)?;
    }
    let solution = solve(args.solver.solver, workload, &config, &source)?;
    let summary = write_outputs(&args.out, &solution, workload, &config)?;
    print_summary(&summary);
    Ok(if solution.exhausted { EXIT_EXHAUSTED } else { 0 })
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 14.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_SUBSET_SIZE)]
    pub subset_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn generate_cmd(args: &GenerateArgs) -> Result<()> {
    let workload = generate(&SyntheticSpec {
        n_pairs: args.n,
        subset_size: args.subset_size,
        tau: args.tau,
        sigma: args.sigma,
        seed: args.seed,
    })?;
    write_workload_file(&workload, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} pairs to {}", workload.len(), args.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct BlockArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn block_cmd(args: &BlockArgs) -> Result<()> {
    if args.input.workload.is_some() {
        bail!("block reads record tables, not a workload");
    }
    let input = load(&args.input)?;
    write_workload_file(&input.workload, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let matches = input.workload.true_matches(0..input.workload.len());
    println!(
        "wrote {} pairs{} to {}",
        input.workload.len(),
        matches.map(|m| format!(" ({m} matching)")).unwrap_or_default(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Fixed workload for every trial; otherwise a synthetic one per trial.
    #[arg(long)]
    pub workload: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    #[arg(long, default_value_t = 14.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = DEFAULT_SUBSET_SIZE)]
    pub subset_size: usize,
    #[arg(long, value_delimiter = ',', default_value = "base,samp,hybr", value_parser = parse_solver)]
    pub solvers: Vec<SolverKind>,
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Axis to sweep: alpha_beta, theta, tau, sigma or size.
    #[arg(long, value_parser = parse_axis)]
    pub sweep: Option<Axis>,
    /// Values of the swept parameter; defaults depend on the axis.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
    /// Name used in requirement-sweep file names; defaults to the workload
    /// file stem or `synthetic`.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    s.parse().map_err(|e: erq_core::Error| e.to_string())
}

pub fn default_values(axis: Axis) -> Vec<f64> {
    match axis {
        Axis::AlphaBeta => vec![0.7, 0.75, 0.8, 0.85, 0.9, 0.95],
        Axis::Theta => vec![0.8, 0.85, 0.9, 0.95],
        Axis::Tau => vec![8.0, 10.0, 12.0, 14.0, 16.0, 18.0],
        Axis::Sigma => vec![0.1, 0.2, 0.3, 0.4, 0.5],
        Axis::Size => vec![50_000.0, 100_000.0, 200_000.0, 400_000.0],
    }
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let config = args.solver.config()?;
    let (data, dataset) = match &args.workload {
        Some(path) => {
            let w = erq_core::io::read_workload_file(path, args.subset_size)
                .with_context(|| format!("reading {}", path.display()))?;
            if !w.has_truth() {
                bail!("evaluation needs a workload with a truth column");
            }
            let stem = path.file_stem().map(|s| s.to_string_lossy().to_lowercase());
            (TrialData::Fixed(Arc::new(w)), stem.unwrap_or_else(|| "workload".into()))
        }
        None => {
            let spec = SyntheticSpec {
                n_pairs: args.n,
                subset_size: args.subset_size,
                tau: args.tau,
                sigma: args.sigma,
                seed: 0,
            };
            spec.validate()?;
            (TrialData::Synthetic(spec), "synthetic".to_string())
        }
    };
    let dataset = args.dataset.clone().unwrap_or(dataset);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    if let Some(axis) = args.sweep {
        let values = if args.values.is_empty() { default_values(axis) } else { args.values.clone() };
        let plan = SweepPlan {
            axis,
            values,
            solvers: args.solvers.clone(),
            data,
            config,
            runs: args.runs,
            master_seed: args.solver.seed,
        };
        let rows = sweep(&plan)?;
        let path = args.out.join(axis.file_name(&dataset));
        write_sweep_csv(&rows, BufWriter::new(File::create(&path)?))?;
        serde_json::to_writer_pretty(BufWriter::new(File::create(path.with_extension("json"))?), &rows)?;
        for r in &rows {
            println!(
                "{}={} {}: cost {:.2}%, precision {:.4}, recall {:.4}, success {:.2}",
                axis,
                r.value,
                r.solver,
                r.aggregate.mean_cost * 100.0,
                r.aggregate.mean_precision,
                r.aggregate.mean_recall,
                r.aggregate.success_rate
            );
        }
        println!("wrote {}", path.display());
        return Ok(());
    }

    let mut report = serde_json::Map::new();
    let mut aggregate_rows = Vec::new();
    for &kind in &args.solvers {
        let (trials, agg) = run_trials(&data, kind, &config, args.runs, args.solver.seed)?;
        write_trials_csv(&trials, BufWriter::new(File::create(args.out.join(format!("trials_{kind}.csv")))?))?;
        aggregate_rows.push((kind, agg.clone()));
        println!(
            "{kind}: cost {:.2}%, precision {:.4}, recall {:.4}, success {:.2} over {} runs",
            agg.mean_cost * 100.0,
            agg.mean_precision,
            agg.mean_recall,
            agg.success_rate,
            agg.runs
        );
        report.insert(kind.to_string(), json!({ "aggregate": agg, "trials": trials }));
    }
    write_aggregates_csv(&aggregate_rows, BufWriter::new(File::create(args.out.join("aggregate.csv"))?))?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(args.out.join("report.json"))?), &report)?;
    println!("wrote reports to {}", args.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, env = "ERQ_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Built labeler UI to serve at `/`.
    #[arg(long, default_value = "labeler-ui/dist")]
    pub ui_dir: PathBuf,
    /// Label journal; restarting with the same journal resumes the session.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Requests returned by one `GET /api/tasks/next`.
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    pub batch: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub async fn serve(args: ServeArgs) -> Result<()> {
    let config = args.solver.config()?;
    let input = load(&args.input)?;
    let viewer = input.viewer();
    let workload = Arc::new(input.workload);
    let out = args.out.clone();
    let (w, c) = (workload.clone(), config.clone());
    let on_done: crate::server::OnDone = Box::new(move |status: &Status| match status {
        Status::Done(done) => match write_outputs(&out, &done.0, &w, &c) {
            Ok(summary) => {
                print_summary(&summary);
                println!("solution written to {}", out.display());
            }
            Err(e) => log::error!("writing the solution failed: {e:#}"),
        },
        Status::Failed(e) => log::error!("session failed: {e}"),
        Status::Running => {}
    });
    let options = SessionOptions {
        journal: args.journal.clone(),
        viewer,
        batch_size: args.batch,
        on_done: Some(on_done),
        ..SessionOptions::new(args.solver.solver, config)
    };
    let session = Session::start(workload, options)?;
    let ui = args.ui_dir.is_dir().then(|| args.ui_dir.clone());
    if ui.is_none() {
        log::warn!("no UI bundle at {}; serving the API only", args.ui_dir.display());
    }
    let app = router(session.clone(), ui);
    let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
        .await
        .with_context(|| format!("binding {}:{}", args.host, args.port))?;
    println!("labeling service on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    tokio::task::spawn_blocking(move || session.shutdown("service stopped")).await?;
    Ok(())
}
