//! Scoring and run artifacts.
//!
//! A run directory holds `summary.json`, `per_query.jsonl` and (written by the
//! caller) `config.json`. The summary is a pure function of the per-query
//! records, so it can always be recomputed from them.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{self, EmbeddingIndex};
use crate::gateway::{CallCost, Gateway};
use crate::par::Pool;
use crate::registry::{QueryCase, Registry};
use crate::search::Searcher;

pub const SUMMARY_FILE: &str = "summary.json";
pub const PER_QUERY_FILE: &str = "per_query.jsonl";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("query {0} has an empty ground-truth set")]
    EmptyTruth(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run {run}: {message}")]
    Schema { run: String, message: String },
    #[error("no runs to compare")]
    NoRuns,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub hit: u8,
    pub recall: f64,
    pub precision: f64,
}

/// Hit, recall and precision of one returned list against its truth set.
pub fn score_query(returned: &[String], truth: &BTreeSet<String>) -> Option<Score> {
    if truth.is_empty() {
        return None;
    }
    let unique: BTreeSet<&String> = returned.iter().collect();
    let inter = unique.iter().filter(|s| truth.contains(**s)).count();
    Some(Score {
        hit: u8::from(inter > 0),
        recall: inter as f64 / truth.len() as f64,
        precision: if unique.is_empty() {
            0.0
        } else {
            inter as f64 / unique.len() as f64
        },
    })
}

/// What any retriever hands back for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub service_ids: Vec<String>,
    pub cost: CallCost,
    pub trace: Value,
}

pub trait Retriever: Sync {
    fn method(&self) -> String;
    /// Mode or K, whatever distinguishes runs of the same method.
    fn setting(&self) -> String;
    fn retrieve(&self, query: &str) -> Result<Retrieved, String>;
}

impl Retriever for Searcher<'_> {
    fn method(&self) -> String {
        "taxonomy".into()
    }

    fn setting(&self) -> String {
        self.config().mode.to_string()
    }

    fn retrieve(&self, query: &str) -> Result<Retrieved, String> {
        let r = Searcher::retrieve(self, query).map_err(|e| e.to_string())?;
        Ok(Retrieved {
            service_ids: r.service_ids.clone(),
            cost: r.cost(),
            trace: serde_json::to_value(&r).expect("result serializes"),
        })
    }
}

fn baseline_value(r: baselines::BaselineResult) -> Retrieved {
    Retrieved {
        service_ids: r.service_ids.clone(),
        cost: r.cost,
        trace: serde_json::to_value(&r).expect("result serializes"),
    }
}

pub struct PureLlmRetriever<'a> {
    pub gateway: &'a Gateway,
    pub registry: &'a Registry,
}

impl Retriever for PureLlmRetriever<'_> {
    fn method(&self) -> String {
        "pure-llm".into()
    }

    fn setting(&self) -> String {
        "full-context".into()
    }

    fn retrieve(&self, query: &str) -> Result<Retrieved, String> {
        baselines::pure_llm_retrieve(self.gateway, self.registry, query)
            .map(baseline_value)
            .map_err(|e| e.to_string())
    }
}

pub struct TopKRetriever<'a> {
    pub gateway: &'a Gateway,
    pub index: &'a EmbeddingIndex,
    pub k: usize,
}

impl Retriever for TopKRetriever<'_> {
    fn method(&self) -> String {
        "embed".into()
    }

    fn setting(&self) -> String {
        format!("k={}", self.k)
    }

    fn retrieve(&self, query: &str) -> Result<Retrieved, String> {
        baselines::topk_retrieve(self.gateway, self.index, query, self.k)
            .map(baseline_value)
            .map_err(|e| e.to_string())
    }
}

pub struct RewriteRetriever<'a> {
    pub gateway: &'a Gateway,
    pub index: &'a EmbeddingIndex,
    pub k: usize,
}

impl Retriever for RewriteRetriever<'_> {
    fn method(&self) -> String {
        "rewrite".into()
    }

    fn setting(&self) -> String {
        format!("k={}", self.k)
    }

    fn retrieve(&self, query: &str) -> Result<Retrieved, String> {
        baselines::rewrite_retrieve(self.gateway, self.index, query, self.k)
            .map(baseline_value)
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerQueryRecord {
    pub query_id: String,
    pub query: String,
    pub returned: Vec<String>,
    pub ground_truth: Vec<String>,
    pub hit: u8,
    pub recall: f64,
    pub precision: f64,
    pub calls: u64,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub trace: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub dataset: String,
    pub setting: String,
    pub queries: usize,
    pub hit_rate: f64,
    pub recall: f64,
    /// Secondary: ground truth lists are incomplete, so precision under-reports.
    pub precision: f64,
    pub precision_role: String,
    pub mean_tokens: f64,
    pub mean_prompt_tokens: f64,
    pub mean_output_tokens: f64,
    pub mean_calls: f64,
    pub failures: usize,
}

/// Order-independent mean: values are summed in sorted order.
fn mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values.into_iter().sum::<f64>() / n
}

fn mean_u64(values: impl Iterator<Item = u64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        values.sum::<u64>() as f64 / n as f64
    }
}

pub fn summarize(records: &[PerQueryRecord], method: &str, dataset: &str, setting: &str) -> Summary {
    let n = records.len();
    Summary {
        method: method.to_owned(),
        dataset: dataset.to_owned(),
        setting: setting.to_owned(),
        queries: n,
        hit_rate: mean_u64(records.iter().map(|r| r.hit as u64), n),
        recall: mean(records.iter().map(|r| r.recall).collect()),
        precision: mean(records.iter().map(|r| r.precision).collect()),
        precision_role: "secondary".into(),
        mean_tokens: mean_u64(records.iter().map(|r| r.prompt_tokens + r.output_tokens), n),
        mean_prompt_tokens: mean_u64(records.iter().map(|r| r.prompt_tokens), n),
        mean_output_tokens: mean_u64(records.iter().map(|r| r.output_tokens), n),
        mean_calls: mean_u64(records.iter().map(|r| r.calls), n),
        failures: records.iter().filter(|r| r.error.is_some()).count(),
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub dataset: String,
    pub workers: usize,
    /// Keep per-query traces in the records.
    pub keep_traces: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            dataset: "dataset".into(),
            workers: 20,
            keep_traces: true,
        }
    }
}

/// Runs `retriever` over `queries`; records come back in query order and a
/// failing query yields an empty, flagged record instead of an error.
pub fn evaluate(retriever: &dyn Retriever, queries: &[QueryCase], opts: &EvalOptions) -> Result<(Summary, Vec<PerQueryRecord>), EvalError> {
    if let Some(q) = queries.iter().find(|q| q.ground_truth.is_empty()) {
        return Err(EvalError::EmptyTruth(q.id.clone()));
    }
    let pool = Pool::new(opts.workers);
    let outcomes = pool.map(queries, |q| retriever.retrieve(&q.text));
    let records: Vec<PerQueryRecord> = queries
        .iter()
        .zip(outcomes)
        .map(|(q, outcome)| {
            let (retrieved, error) = match outcome {
                Ok(r) => (r, None),
                Err(e) => {
                    log::warn!("query {} failed: {e}", q.id);
                    (
                        Retrieved {
                            service_ids: Vec::new(),
                            cost: CallCost::default(),
                            trace: Value::Null,
                        },
                        Some(e),
                    )
                }
            };
            let score = score_query(&retrieved.service_ids, &q.ground_truth).expect("checked non-empty");
            PerQueryRecord {
                query_id: q.id.clone(),
                query: q.text.clone(),
                returned: retrieved.service_ids,
                ground_truth: q.ground_truth.iter().cloned().collect(),
                hit: score.hit,
                recall: score.recall,
                precision: score.precision,
                calls: retrieved.cost.calls,
                prompt_tokens: retrieved.cost.prompt_tokens,
                output_tokens: retrieved.cost.output_tokens,
                error,
                trace: if opts.keep_traces { retrieved.trace } else { Value::Null },
            }
        })
        .collect();
    let summary = summarize(&records, &retriever.method(), &opts.dataset, &retriever.setting());
    Ok((summary, records))
}

pub fn summary_json(summary: &Summary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

pub fn write_run(dir: impl AsRef<Path>, summary: &Summary, records: &[PerQueryRecord]) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, summary_json(summary)).map_err(io_err(&path))?;
    let path = dir.join(PER_QUERY_FILE);
    let mut out = std::io::BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(out, "{line}").map_err(io_err(&path))?;
    }
    out.flush().map_err(io_err(&path))?;
    Ok(())
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

pub fn read_records(dir: impl AsRef<Path>) -> Result<Vec<PerQueryRecord>, EvalError> {
    let dir = dir.as_ref();
    let path = dir.join(PER_QUERY_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Schema {
                run: run_name(dir),
                message: format!("{PER_QUERY_FILE} line {}: {e}", i + 1),
            })
        })
        .collect()
}

pub fn read_summary(dir: impl AsRef<Path>) -> Result<Summary, EvalError> {
    let dir = dir.as_ref();
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| EvalError::Schema {
        run: run_name(dir),
        message: format!("{SUMMARY_FILE}: {e}"),
    })
}

/// Recomputes a run's summary from its per-query records.
pub fn recompute_summary(dir: impl AsRef<Path>) -> Result<Summary, EvalError> {
    let dir = dir.as_ref();
    let stored = read_summary(dir)?;
    let records = read_records(dir)?;
    Ok(summarize(&records, &stored.method, &stored.dataset, &stored.setting))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub run: String,
    pub summary: Summary,
}

/// Loads every run's summary, sorted by hit rate (descending), then run name.
pub fn compare(run_dirs: &[PathBuf]) -> Result<Vec<ComparisonRow>, EvalError> {
    if run_dirs.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let mut rows = run_dirs
        .iter()
        .map(|d| {
            Ok(ComparisonRow {
                run: run_name(d),
                summary: read_summary(d)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    rows.sort_by(|a, b| {
        b.summary
            .hit_rate
            .total_cmp(&a.summary.hit_rate)
            .then_with(|| a.run.cmp(&b.run))
    });
    Ok(rows)
}

const COLUMNS: [&str; 10] = [
    "run", "method", "dataset", "setting", "queries", "HR", "Recall", "Precision*", "Tok/q", "Calls/q",
];

fn cells(r: &ComparisonRow) -> [String; 10] {
    let s = &r.summary;
    [
        r.run.clone(),
        s.method.clone(),
        s.dataset.clone(),
        s.setting.clone(),
        s.queries.to_string(),
        format!("{:.1}", s.hit_rate * 100.0),
        format!("{:.1}", s.recall * 100.0),
        format!("{:.1}", s.precision * 100.0),
        format!("{:.0}", s.mean_tokens),
        format!("{:.2}", s.mean_calls),
    ]
}

/// Aligned plain-text table; precision is marked secondary.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let body: Vec<[String; 10]> = rows.iter().map(cells).collect();
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|c| body.iter().map(|r| r[c].len()).chain([COLUMNS[c].len()]).max().unwrap())
        .collect();
    let fmt = |cols: Vec<&str>| {
        cols.iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (v, w))| if i < 4 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_owned()
    };
    let mut out = vec![fmt(COLUMNS.to_vec())];
    out.extend(body.iter().map(|r| fmt(r.iter().map(String::as_str).collect())));
    out.push("* precision is secondary: ground-truth sets are incomplete".into());
    out.join("\n") + "\n"
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_owned()
    }
}

pub fn render_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("run,method,dataset,setting,queries,hit_rate,recall,precision_secondary,mean_tokens,mean_calls\n");
    for r in rows {
        let s = &r.summary;
        let fields = [
            csv_field(&r.run),
            csv_field(&s.method),
            csv_field(&s.dataset),
            csv_field(&s.setting),
            s.queries.to_string(),
            s.hit_rate.to_string(),
            s.recall.to_string(),
            s.precision.to_string(),
            s.mean_tokens.to_string(),
            s.mean_calls.to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn v(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn scores() {
        let s = score_query(&v(&["a", "b"]), &set(&["b", "c"])).unwrap();
        assert_eq!((s.hit, s.recall, s.precision), (1, 0.5, 0.5));
        let s = score_query(&[], &set(&["b"])).unwrap();
        assert_eq!((s.hit, s.recall, s.precision), (0, 0.0, 0.0));
        let s = score_query(&v(&["b", "c"]), &set(&["b", "c"])).unwrap();
        assert_eq!((s.hit, s.recall, s.precision), (1, 1.0, 1.0));
        assert!(score_query(&v(&["a"]), &BTreeSet::new()).is_none());
    }

    #[test]
    fn csv_quotes() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
