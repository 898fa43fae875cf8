//! Loading a workload from a workload CSV or from two record tables.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::Args;
use erq_core::blocking::{
    block, derive_weights, read_gold_file, split_pair_id, AttributeRule, Measure, RecordTable, SimilarityConfig,
};
use erq_core::io::read_workload_file;
use erq_core::oracle::{Field, PairViewer};
use erq_core::{InstancePair, Workload, DEFAULT_SUBSET_SIZE};

#[derive(Args, Clone, Debug, Default)]
pub struct InputArgs {
    /// Workload CSV with columns `id,metric[,truth]`.
    #[arg(long, conflicts_with_all = ["table_a", "table_b"])]
    pub workload: Option<PathBuf>,
    /// First record table, `id,attr1,attr2,...`.
    #[arg(long, requires = "table_b")]
    pub table_a: Option<PathBuf>,
    #[arg(long, requires = "table_a")]
    pub table_b: Option<PathBuf>,
    /// Gold mapping `id_a,id_b` of true matches, attached as ground truth.
    #[arg(long, requires = "table_a")]
    pub gold: Option<PathBuf>,
    /// Attribute rule `name:measure[:weight]`, measure `jaccard` or
    /// `jaro-winkler`; repeatable. Weights default to distinct-value counts.
    #[arg(long = "attr", value_name = "RULE")]
    pub attrs: Vec<String>,
    /// Similarity configuration as JSON, instead of `--attr`/`--threshold`.
    #[arg(long, conflicts_with = "attrs")]
    pub similarity_config: Option<PathBuf>,
    /// Minimum aggregate similarity kept by blocking.
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
    /// Skip pairs sharing no token on any Jaccard attribute.
    #[arg(long)]
    pub token_prefilter: bool,
    #[arg(long, default_value_t = DEFAULT_SUBSET_SIZE)]
    pub subset_size: usize,
}

pub struct LoadedInput {
    pub workload: Workload,
    /// Present when the workload was blocked from record tables.
    pub tables: Option<(Arc<RecordTable>, Arc<RecordTable>)>,
}

impl LoadedInput {
    pub fn viewer(&self) -> Option<Arc<dyn PairViewer>> {
        self.tables
            .as_ref()
            .map(|(a, b)| Arc::new(RecordViewer { a: a.clone(), b: b.clone() }) as Arc<dyn PairViewer>)
    }
}

/// Shows the two records behind a blocked pair.
pub struct RecordViewer {
    a: Arc<RecordTable>,
    b: Arc<RecordTable>,
}

impl PairViewer for RecordViewer {
    fn view(&self, pair: &InstancePair) -> (Vec<Field>, Vec<Field>) {
        let fields = |table: &RecordTable, id: &str| {
            table
                .fields(id)
                .unwrap_or_default()
                .into_iter()
                .map(|(name, value)| Field { name, value })
                .collect()
        };
        match split_pair_id(&pair.id) {
            Some((a, b)) => (fields(&self.a, a), fields(&self.b, b)),
            None => (Vec::new(), Vec::new()),
        }
    }
}

fn parse_measure(s: &str) -> Result<Measure> {
    Ok(match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
        "jaccard" | "jaccard-tokens" | "tokens" => Measure::JaccardTokens,
        "jaro-winkler" | "jw" | "jarowinkler" => Measure::JaroWinkler,
        other => bail!("unknown measure `{other}` (expected jaccard or jaro-winkler)"),
    })
}

fn similarity_config(args: &InputArgs, a: &RecordTable, b: &RecordTable) -> Result<SimilarityConfig> {
    if let Some(path) = &args.similarity_config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: SimilarityConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // Normalizes weights and validates the threshold.
        let mut normalized = SimilarityConfig::new(config.attributes, config.blocking_threshold)?;
        normalized.token_prefilter = config.token_prefilter || args.token_prefilter;
        return Ok(normalized);
    }
    if args.attrs.is_empty() {
        bail!("blocking needs at least one --attr or a --similarity-config");
    }
    let mut names = Vec::new();
    let mut measures = Vec::new();
    let mut weights = Vec::new();
    for rule in &args.attrs {
        let parts: Vec<&str> = rule.split(':').collect();
        match parts.as_slice() {
            [name, measure] => {
                names.push(name.to_string());
                measures.push(parse_measure(measure)?);
                weights.push(None);
            }
            [name, measure, weight] => {
                names.push(name.to_string());
                measures.push(parse_measure(measure)?);
                weights.push(Some(weight.parse::<f64>().with_context(|| format!("weight in `{rule}`"))?));
            }
            _ => bail!("attribute rule `{rule}` is not `name:measure[:weight]`"),
        }
    }
    let weights: Vec<f64> = if weights.iter().all(Option::is_none) {
        derive_weights(a, b, &names)?
    } else if weights.iter().all(Option::is_some) {
        weights.into_iter().flatten().collect()
    } else {
        bail!("give a weight for every --attr or for none");
    };
    let rules = names
        .into_iter()
        .zip(measures)
        .zip(weights)
        .map(|((name, measure), weight)| AttributeRule { name, measure, weight })
        .collect();
    let mut config = SimilarityConfig::new(rules, args.threshold)?;
    config.token_prefilter = args.token_prefilter;
    Ok(config)
}

fn read_table(path: &Path) -> Result<RecordTable> {
    RecordTable::from_csv_file(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load(args: &InputArgs) -> Result<LoadedInput> {
    if let Some(path) = &args.workload {
        let workload =
            read_workload_file(path, args.subset_size).with_context(|| format!("reading {}", path.display()))?;
        return Ok(LoadedInput { workload, tables: None });
    }
    let (Some(pa), Some(pb)) = (&args.table_a, &args.table_b) else {
        bail!("give --workload, or --table-a and --table-b");
    };
    let (a, b) = (read_table(pa)?, read_table(pb)?);
    let config = similarity_config(args, &a, &b)?;
    let gold = args
        .gold
        .as_deref()
        .map(|p| read_gold_file(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let workload = block(&a, &b, &config, gold.as_ref(), args.subset_size)?;
    log::info!(
        "blocked {} x {} records into {} pairs at threshold {}",
        a.len(),
        b.len(),
        workload.len(),
        config.blocking_threshold
    );
    Ok(LoadedInput {
        workload,
        tables: Some((Arc::new(a), Arc::new(b))),
    })
}
