//! Subcommand bodies. Each run writes `config.json` before anything else.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;
use taxoseek::baselines::build_embedding_index;
use taxoseek::builder::{build, build_oneshot, BuildReport};
use taxoseek::eval::{
    compare, evaluate, render_csv, render_table, summary_json, write_run, EvalOptions, PureLlmRetriever, Retriever,
    RewriteRetriever, TopKRetriever, CONFIG_FILE,
};
use taxoseek::gateway::http::{HttpConfig, OpenAiChat, OpenAiEmbedder};
use taxoseek::gateway::mock::MockScript;
use taxoseek::gateway::Gateway;
use taxoseek::registry::{
    load_queries_with, load_registry_with, mean_ground_truth, registry_stats, FileFormat, QueryCase, Registry,
};
use taxoseek::search::Searcher;
use taxoseek::taxonomy::Taxonomy;

use crate::config::{BackendKind, BaselineMethod, RunConfig, API_KEY_VAR};
use crate::failure::{Category, Failure};

pub const BUILD_REPORT_FILE: &str = "build_report.json";
pub const USAGE_FILE: &str = "usage.json";
pub const SEARCH_FILE: &str = "results.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TableFormat {
    Table,
    Csv,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("cannot write {}", path.display()))
}

/// Creates the run directory and persists the resolved config into it.
fn start_run(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_json()).with_context(|| format!("cannot write config into {}", dir.display()))?;
    log::info!("run directory {}", dir.display());
    Ok(dir)
}

fn gateway(cfg: &RunConfig) -> Result<Gateway> {
    let b = &cfg.backend;
    match b.kind {
        BackendKind::Mock => {
            let script = b
                .script
                .as_ref()
                .ok_or_else(|| Failure::new(Category::Usage, "the mock backend needs --script"))?;
            let script = MockScript::load(script).with_context(|| format!("mock script {}", script.display()))?;
            Ok(Gateway::new(Arc::new(script.chat_backend()?), cfg.gateway.clone())
                .with_embedder(Arc::new(script.embed_backend())))
        }
        BackendKind::Http => {
            let http = |base_url: &str| HttpConfig {
                base_url: base_url.to_owned(),
                api_key: std::env::var(API_KEY_VAR).ok(),
                timeout: Duration::from_secs(b.timeout_secs),
            };
            let backend = |e| Failure::new(Category::Backend, format!("cannot create HTTP client: {e}"));
            let chat = OpenAiChat::new(http(&b.base_url)).map_err(backend)?;
            let embed_url = b.embed_base_url.as_deref().unwrap_or(&b.base_url);
            let embedder = OpenAiEmbedder::new(http(embed_url), b.embed_model.clone()).map_err(backend)?;
            Ok(Gateway::new(Arc::new(chat), cfg.gateway.clone()).with_embedder(Arc::new(embedder)))
        }
    }
}

fn registry(cfg: &RunConfig) -> Result<Registry> {
    let path = cfg.registry_path()?;
    let format = cfg.data.registry_format.unwrap_or_else(|| FileFormat::from_path(path));
    Ok(load_registry_with(path, format, &cfg.data.fields)?)
}

fn queries(cfg: &RunConfig, registry: &Registry) -> Result<Vec<QueryCase>> {
    let path = cfg.queries_path()?;
    Ok(load_queries_with(path, FileFormat::from_path(path), &cfg.data.query_fields, registry)?)
}

fn finish_build(dir: &Path, gateway: &Gateway, tax: &Taxonomy, report: &BuildReport) -> Result<()> {
    tax.save(dir)?;
    write_json(&dir.join(BUILD_REPORT_FILE), report)?;
    write_json(&dir.join(USAGE_FILE), &gateway.meter().snapshot())?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    log::info!(
        "{} categories, {} leaves, {} calls",
        report.stats.total_categories,
        report.stats.leaf_categories,
        report.total.calls
    );
    println!("{}", dir.display());
    Ok(())
}

pub fn run_build(cfg: &RunConfig) -> Result<()> {
    let dir = start_run(cfg)?;
    let reg = registry(cfg)?;
    let g = gateway(cfg)?;
    let (tax, report) = build(&reg, &g, &cfg.build)?;
    finish_build(&dir, &g, &tax, &report)
}

pub fn run_build_oneshot(cfg: &RunConfig) -> Result<()> {
    let dir = start_run(cfg)?;
    let reg = registry(cfg)?;
    let g = gateway(cfg)?;
    let (tax, report) = build_oneshot(&reg, &g, &cfg.build, cfg.oneshot_variant)?;
    finish_build(&dir, &g, &tax, &report)
}

pub fn run_search(cfg: &RunConfig) -> Result<()> {
    let dir = start_run(cfg)?;
    let reg = registry(cfg)?;
    let tax = Taxonomy::load(cfg.taxonomy_dir()?)?;
    let mut texts = cfg.data.query_texts.clone();
    if cfg.data.queries.is_some() {
        texts.extend(queries(cfg, &reg)?.into_iter().map(|q| q.text));
    }
    if texts.is_empty() {
        return Err(Failure::new(Category::Usage, "give at least one --query or a --queries file").into());
    }
    let g = gateway(cfg)?;
    let searcher = Searcher::new(&tax, &reg, &g, cfg.search.clone())?;
    let path = dir.join(SEARCH_FILE);
    let mut out = std::io::BufWriter::new(fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?);
    let stdout = std::io::stdout();
    for text in texts {
        let result = searcher.retrieve(&text)?;
        let line = serde_json::to_string(&json!({ "query": text, "result": result }))?;
        writeln!(out, "{line}")?;
        writeln!(stdout.lock(), "{line}")?;
    }
    out.flush()?;
    write_json(&dir.join(USAGE_FILE), &g.meter().snapshot())
}

fn run_eval_with(cfg: &RunConfig, dir: &Path, g: &Gateway, retriever: &dyn Retriever, queries: &[QueryCase]) -> Result<()> {
    let opts = EvalOptions {
        dataset: cfg.data.dataset.clone().unwrap_or_else(|| "dataset".into()),
        workers: cfg.eval.workers,
        keep_traces: cfg.eval.keep_traces,
    };
    let (summary, records) = evaluate(retriever, queries, &opts)?;
    write_run(dir, &summary, &records)?;
    write_json(&dir.join(USAGE_FILE), &g.meter().snapshot())?;
    if summary.failures > 0 {
        log::warn!("{} of {} queries failed", summary.failures, summary.queries);
    }
    print!("{}", summary_json(&summary));
    Ok(())
}

pub fn run_eval(cfg: &RunConfig) -> Result<()> {
    let dir = start_run(cfg)?;
    let reg = registry(cfg)?;
    let qs = queries(cfg, &reg)?;
    let tax = Taxonomy::load(cfg.taxonomy_dir()?)?;
    let g = gateway(cfg)?;
    let searcher = Searcher::new(&tax, &reg, &g, cfg.search.clone())?;
    run_eval_with(cfg, &dir, &g, &searcher, &qs)
}

pub fn run_baseline(cfg: &RunConfig) -> Result<()> {
    let dir = start_run(cfg)?;
    let reg = registry(cfg)?;
    let qs = queries(cfg, &reg)?;
    let g = gateway(cfg)?;
    let k = cfg.baseline.k.unwrap_or_else(|| cfg.baseline.shape.default_k());
    match cfg.baseline.method {
        BaselineMethod::PureLlm => run_eval_with(
            cfg,
            &dir,
            &g,
            &PureLlmRetriever {
                gateway: &g,
                registry: &reg,
            },
            &qs,
        ),
        BaselineMethod::Embed => {
            let index = build_embedding_index(&g, &reg)?;
            run_eval_with(cfg, &dir, &g, &TopKRetriever { gateway: &g, index: &index, k }, &qs)
        }
        BaselineMethod::Rewrite => {
            let index = build_embedding_index(&g, &reg)?;
            run_eval_with(cfg, &dir, &g, &RewriteRetriever { gateway: &g, index: &index, k }, &qs)
        }
    }
}

/// Read-only; no run directory is created.
pub fn run_stats(cfg: &RunConfig) -> Result<()> {
    let reg = registry(cfg)?;
    let mut out = json!({ "registry": registry_stats(&reg) });
    if cfg.data.queries.is_some() {
        let qs = queries(cfg, &reg)?;
        out["queries"] = json!({ "count": qs.len(), "mean_ground_truth": mean_ground_truth(&qs) });
    }
    if let Some(dir) = &cfg.data.taxonomy_dir {
        let tax = Taxonomy::load(dir)?;
        out["taxonomy"] = json!({
            "stats": tax.stats(),
            "validation": tax.validate(&reg, cfg.build.max_depth),
        });
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

pub fn run_compare(runs: &[PathBuf], format: TableFormat, out: Option<&Path>) -> Result<()> {
    let rows = compare(runs)?;
    let text = match format {
        TableFormat::Table => render_table(&rows),
        TableFormat::Csv => render_csv(&rows),
    };
    match out {
        Some(p) => fs::write(p, &text).with_context(|| format!("cannot write {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}
