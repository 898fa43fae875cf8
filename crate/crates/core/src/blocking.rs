//! Record tables, weighted attribute similarity and threshold blocking.

use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InstancePair, Label, Workload};
use crate::similarity::{jaccard_sorted, jaro_winkler, jaro_winkler_chars, tokens};

/// One entity record: an id and one text value per schema attribute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub values: Vec<String>,
}

/// A collection of records sharing one attribute schema.
#[derive(Clone, Debug)]
pub struct RecordTable {
    schema: Vec<String>,
    records: Vec<Record>,
    by_id: HashMap<String, usize>,
}

impl RecordTable {
    pub fn new(schema: Vec<String>, records: Vec<Record>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.values.len() != schema.len() {
                return Err(Error::contract(
                    &r.id,
                    format!("record has {} values, schema has {}", r.values.len(), schema.len()),
                ));
            }
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(Error::contract(&r.id, "duplicate record id"));
            }
        }
        Ok(Self {
            schema,
            records,
            by_id,
        })
    }

    /// Reads `id,attr1,attr2,...`. Invalid UTF-8 is replaced rather than rejected,
    /// since public benchmark corpora are often Latin-1.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let headers = rdr.byte_headers()?.clone();
        if headers.is_empty() {
            return Err(Error::Parse {
                line: 1,
                reason: "empty header".into(),
            });
        }
        let schema: Vec<String> = headers
            .iter()
            .skip(1)
            .map(|h| String::from_utf8_lossy(h).trim().to_string())
            .collect();
        let mut records = Vec::new();
        for (row, rec) in rdr.byte_records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                line: row + 2,
                reason: e.to_string(),
            })?;
            let field = |i: usize| rec.get(i).map(|b| String::from_utf8_lossy(b).trim().to_string());
            let id = field(0).unwrap_or_default();
            if id.is_empty() {
                return Err(Error::Parse {
                    line: row + 2,
                    reason: "empty record id".into(),
                });
            }
            let values = (1..=schema.len()).map(|i| field(i).unwrap_or_default()).collect();
            records.push(Record { id, values });
        }
        Self::new(schema, records)
    }

    pub fn from_csv_file(path: &Path) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|s| s.eq_ignore_ascii_case(name))
    }

    /// Attribute name/value pairs of one record, for display.
    pub fn fields(&self, id: &str) -> Option<Vec<(String, String)>> {
        self.get(id)
            .map(|r| self.schema.iter().cloned().zip(r.values.iter().cloned()).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    JaccardTokens,
    JaroWinkler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeRule {
    pub name: String,
    pub measure: Measure,
    pub weight: f64,
}

/// Per-attribute measures and weights plus the blocking threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub attributes: Vec<AttributeRule>,
    pub blocking_threshold: f64,
    /// Skip pairs sharing no token on any Jaccard attribute. Only used when
    /// that cannot change the output.
    #[serde(default)]
    pub token_prefilter: bool,
}

impl SimilarityConfig {
    pub fn new(attributes: Vec<AttributeRule>, blocking_threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&blocking_threshold) {
            return Err(Error::Config(format!(
                "blocking threshold {blocking_threshold} outside [0, 1]"
            )));
        }
        if attributes.is_empty() {
            return Err(Error::Config("no attributes configured".into()));
        }
        if attributes.iter().any(|a| !(a.weight >= 0.0)) {
            return Err(Error::Config("attribute weights must be non-negative".into()));
        }
        let total: f64 = attributes.iter().map(|a| a.weight).sum();
        if total <= 0.0 {
            return Err(Error::Config("attribute weights sum to zero".into()));
        }
        let attributes = attributes
            .into_iter()
            .map(|a| AttributeRule {
                weight: a.weight / total,
                ..a
            })
            .collect();
        Ok(Self {
            attributes,
            blocking_threshold,
            token_prefilter: false,
        })
    }
}

fn resolve(table: &RecordTable, rule: &AttributeRule) -> Result<usize> {
    table
        .attribute_index(&rule.name)
        .ok_or_else(|| Error::Config(format!("unknown attribute `{}`", rule.name)))
}

fn attribute_similarity(measure: Measure, a: &str, b: &str) -> f64 {
    match measure {
        Measure::JaccardTokens => crate::similarity::jaccard_tokens(a, b),
        Measure::JaroWinkler => jaro_winkler(a, b),
    }
}

/// Weighted sum of attribute similarities between a record of each table.
pub fn aggregate_similarity(
    table_a: &RecordTable,
    record_a: &Record,
    table_b: &RecordTable,
    record_b: &Record,
    config: &SimilarityConfig,
) -> Result<f64> {
    let mut sum = 0.0;
    for rule in &config.attributes {
        let (ia, ib) = (resolve(table_a, rule)?, resolve(table_b, rule)?);
        sum += rule.weight * attribute_similarity(rule.measure, &record_a.values[ia], &record_b.values[ib]);
    }
    Ok(sum.clamp(0.0, 1.0))
}

/// Weights proportional to each attribute's distinct non-empty values across
/// both tables, normalized to sum to one. Attributes without values get 0.
pub fn derive_weights(table_a: &RecordTable, table_b: &RecordTable, attributes: &[String]) -> Result<Vec<f64>> {
    if attributes.is_empty() {
        return Err(Error::Config("no attributes given".into()));
    }
    let mut counts = Vec::with_capacity(attributes.len());
    for name in attributes {
        let (ia, ib) = match (table_a.attribute_index(name), table_b.attribute_index(name)) {
            (Some(ia), Some(ib)) => (ia, ib),
            _ => return Err(Error::Config(format!("unknown attribute `{name}`"))),
        };
        let distinct: HashSet<&str> = table_a
            .records()
            .iter()
            .map(|r| r.values[ia].as_str())
            .chain(table_b.records().iter().map(|r| r.values[ib].as_str()))
            .filter(|v| !v.is_empty())
            .collect();
        if distinct.is_empty() {
            log::warn!("attribute `{name}` has no values; excluded from weighting");
        }
        counts.push(distinct.len() as f64);
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::Config("no attribute has any value".into()));
    }
    Ok(counts.into_iter().map(|c| c / total).collect())
}

/// Prepared per-record attribute data so each pair costs only the comparisons.
enum Prepared {
    Tokens(Vec<Vec<u32>>),
    Text(Vec<Vec<char>>),
}

struct PreparedRule {
    weight: f64,
    a: Prepared,
    b: Prepared,
}

fn prepare(
    table_a: &RecordTable,
    table_b: &RecordTable,
    config: &SimilarityConfig,
) -> Result<Vec<PreparedRule>> {
    let mut vocabulary: HashMap<String, u32> = HashMap::new();
    let mut token_ids = |text: &str| -> Vec<u32> {
        let mut ids: Vec<u32> = tokens(text)
            .into_iter()
            .map(|t| {
                let next = vocabulary.len() as u32;
                *vocabulary.entry(t).or_insert(next)
            })
            .collect();
        ids.sort_unstable();
        ids
    };
    let mut rules = Vec::new();
    for rule in &config.attributes {
        let (ia, ib) = (resolve(table_a, rule)?, resolve(table_b, rule)?);
        let (a, b) = match rule.measure {
            Measure::JaccardTokens => (
                Prepared::Tokens(table_a.records().iter().map(|r| token_ids(&r.values[ia])).collect()),
                Prepared::Tokens(table_b.records().iter().map(|r| token_ids(&r.values[ib])).collect()),
            ),
            Measure::JaroWinkler => (
                Prepared::Text(table_a.records().iter().map(|r| r.values[ia].chars().collect()).collect()),
                Prepared::Text(table_b.records().iter().map(|r| r.values[ib].chars().collect()).collect()),
            ),
        };
        rules.push(PreparedRule {
            weight: rule.weight,
            a,
            b,
        });
    }
    Ok(rules)
}

fn prepared_similarity(rules: &[PreparedRule], i: usize, j: usize) -> f64 {
    let mut sum = 0.0;
    for rule in rules {
        let s = match (&rule.a, &rule.b) {
            (Prepared::Tokens(a), Prepared::Tokens(b)) => jaccard_sorted(&a[i], &b[j]),
            (Prepared::Text(a), Prepared::Text(b)) => jaro_winkler_chars(&a[i], &b[j]),
            _ => unreachable!("rule sides prepared with the same measure"),
        };
        sum += rule.weight * s;
    }
    sum.clamp(0.0, 1.0)
}

/// Identifier of the pair formed by a record of each table.
pub fn pair_id(id_a: &str, id_b: &str) -> String {
    format!("{id_a}|{id_b}")
}

/// Splits a pair id produced by [`pair_id`].
pub fn split_pair_id(id: &str) -> Option<(&str, &str)> {
    id.split_once('|')
}

/// Keeps every cross-table pair whose aggregate similarity reaches the
/// threshold. With a gold mapping, pairs carry ground truth.
pub fn block(
    table_a: &RecordTable,
    table_b: &RecordTable,
    config: &SimilarityConfig,
    gold: Option<&HashSet<(String, String)>>,
    subset_size: usize,
) -> Result<Workload> {
    let rules = prepare(table_a, table_b, config)?;
    let threshold = config.blocking_threshold;

    let text_weight: f64 = rules
        .iter()
        .filter(|r| matches!(r.a, Prepared::Text(_)))
        .map(|r| r.weight)
        .sum();
    let prefilter = config.token_prefilter && text_weight < threshold;
    if config.token_prefilter && !prefilter {
        log::warn!("token prefilter disabled: non-token attributes alone can reach the threshold");
    }
    let postings: HashMap<u32, Vec<usize>> = if prefilter {
        let mut postings: HashMap<u32, Vec<usize>> = HashMap::new();
        for rule in &rules {
            if let Prepared::Tokens(b) = &rule.b {
                for (j, toks) in b.iter().enumerate() {
                    for &t in toks {
                        postings.entry(t).or_default().push(j);
                    }
                }
            }
        }
        postings
    } else {
        HashMap::new()
    };

    let kept: Vec<(usize, usize, f64)> = (0..table_a.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let candidates: Vec<usize> = if prefilter {
                let mut c: Vec<usize> = rules
                    .iter()
                    .filter_map(|r| match &r.a {
                        Prepared::Tokens(a) => Some(&a[i]),
                        Prepared::Text(_) => None,
                    })
                    .flat_map(|toks| toks.iter().flat_map(|t| postings.get(t).into_iter().flatten().copied()))
                    .collect();
                c.sort_unstable();
                c.dedup();
                c
            } else {
                (0..table_b.len()).collect()
            };
            let rules = &rules;
            candidates.into_iter().filter_map(move |j| {
                let s = prepared_similarity(rules, i, j);
                (s >= threshold).then_some((i, j, s))
            })
        })
        .collect();

    let pairs = kept
        .into_iter()
        .map(|(i, j, s)| {
            let (ra, rb) = (&table_a.records()[i], &table_b.records()[j]);
            let truth = gold.map(|g| Label::from_bool(g.contains(&(ra.id.clone(), rb.id.clone()))));
            InstancePair::new(pair_id(&ra.id, &rb.id), s, truth)
        })
        .collect();
    Workload::new(pairs, subset_size)
}

/// Reads a gold mapping CSV `id_a,id_b` listing the true matches.
pub fn read_gold<R: Read>(reader: R) -> Result<HashSet<(String, String)>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let mut gold = HashSet::new();
    for (row, rec) in rdr.byte_records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: row + 2,
            reason: e.to_string(),
        })?;
        let field = |i| rec.get(i).map(|b| String::from_utf8_lossy(b).trim().to_string());
        match (field(0), field(1)) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                gold.insert((a, b));
            }
            _ => {
                return Err(Error::Parse {
                    line: row + 2,
                    reason: "expected `id_a,id_b`".into(),
                })
            }
        }
    }
    Ok(gold)
}

pub fn read_gold_file(path: &Path) -> Result<HashSet<(String, String)>> {
    read_gold(std::fs::File::open(path)?)
}
