//! `taxoseek`: build taxonomies, search them, and evaluate retrieval runs.
//!
//! Exit codes: 0 success, 1 other, 2 usage, 3 data, 4 backend, 5 config.
//! Failures print a single `error[<category>]: <message>` line on stderr.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use taxoseek::baselines::DatasetShape;
use taxoseek::builder::OneShotVariant;
use taxoseek::search::Mode;

use commands::TableFormat;
use config::{resolve, set, BackendKind, BaselineMethod, RunConfig};
use failure::{categorize, Category};

#[derive(Parser)]
#[command(name = "taxoseek", version, about = "Category-tree service discovery for LLM agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a taxonomy over a service registry.
    Build {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        build: BuildArgs,
    },
    /// Build a taxonomy with a single design call plus one call per service.
    BuildOneshot {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        build: BuildArgs,
        /// base, freq, refine or axis
        #[arg(long)]
        variant: Option<OneShotVariant>,
    },
    /// Answer free-text queries against a built taxonomy.
    Search {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        taxonomy_dir: Option<PathBuf>,
        /// Repeatable.
        #[arg(long = "query")]
        queries: Vec<String>,
        #[arg(long)]
        queries_file: Option<PathBuf>,
    },
    /// Score taxonomy search on a labelled query set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        taxonomy_dir: Option<PathBuf>,
    },
    /// Score a baseline retriever on a labelled query set.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_enum)]
        method: Option<BaselineMethod>,
        #[arg(long)]
        k: Option<usize>,
        /// toolret or public-mcp; picks the default K.
        #[arg(long)]
        shape: Option<DatasetShape>,
        #[arg(long)]
        embed_model: Option<String>,
    },
    /// Print registry, query-set and taxonomy statistics.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        taxonomy_dir: Option<PathBuf>,
    },
    /// Tabulate finished runs, best hit rate first.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: TableFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config; environment and flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    results_dir: Option<PathBuf>,
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Mock backend script.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    chat_model: Option<String>,
    /// Worker threads for every parallel phase.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    retries: Option<u32>,
    #[arg(long)]
    embed_cache_dir: Option<PathBuf>,
    /// env_logger filter, e.g. `info` or `taxoseek=debug`.
    #[arg(long)]
    log_level: Option<String>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    theta_kw: Option<usize>,
    #[arg(long)]
    theta_leaf: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    generic_ratio: Option<f64>,
    #[arg(long)]
    max_categories: Option<usize>,
    #[arg(long)]
    max_refine: Option<usize>,
    #[arg(long)]
    keyword_batch: Option<usize>,
    #[arg(long)]
    tiny_threshold: Option<usize>,
    #[arg(long)]
    no_validate_root: bool,
    #[arg(long)]
    no_cross_domain: bool,
}

#[derive(Args)]
struct SearchArgs {
    /// get_all, get_important or get_one
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    theta_merge: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Label for summaries; defaults to the queries file stem.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    no_traces: bool,
}

fn put<T: Serialize>(patch: &mut Value, path: &str, value: Option<T>) {
    if let Some(v) = value {
        set(patch, path, serde_json::to_value(v).expect("flag value serializes"));
    }
}

impl Common {
    fn patch(&self, p: &mut Value) {
        put(p, "run_id", self.run_id.as_ref());
        put(p, "results_dir", self.results_dir.as_ref());
        put(p, "log_level", self.log_level.as_ref());
        put(p, "data/registry", self.registry.as_ref());
        put(p, "backend/kind", self.backend);
        put(p, "backend/script", self.script.as_ref());
        put(p, "backend/base_url", self.base_url.as_ref());
        put(p, "gateway/chat_model", self.chat_model.as_ref());
        put(p, "gateway/retries", self.retries);
        put(p, "gateway/embed_cache_dir", self.embed_cache_dir.as_ref());
        for path in ["build/workers", "search/workers", "eval/workers"] {
            put(p, path, self.workers);
        }
    }
}

impl BuildArgs {
    fn patch(&self, p: &mut Value) {
        put(p, "build/theta_kw", self.theta_kw);
        put(p, "build/theta_leaf", self.theta_leaf);
        put(p, "build/max_depth", self.max_depth);
        put(p, "build/generic_ratio", self.generic_ratio);
        put(p, "build/max_categories_size", self.max_categories);
        put(p, "build/max_refine_iterations", self.max_refine);
        put(p, "build/keyword_batch_size", self.keyword_batch);
        put(p, "build/tiny_merge_threshold", self.tiny_threshold);
        put(p, "build/validate_root", self.no_validate_root.then_some(false));
        put(p, "build/cross_domain", self.no_cross_domain.then_some(false));
    }
}

impl SearchArgs {
    fn patch(&self, p: &mut Value) {
        put(p, "search/mode", self.mode);
        put(p, "search/theta_merge", self.theta_merge);
    }
}

impl EvalArgs {
    fn patch(&self, p: &mut Value) {
        put(p, "data/queries", self.queries.as_ref());
        put(p, "data/dataset", self.dataset.as_ref());
        put(p, "eval/keep_traces", self.no_traces.then_some(false));
    }
}

fn configure(name: &str, common: &Common, patch: Value) -> Result<RunConfig> {
    let mut flags = patch;
    common.patch(&mut flags);
    let cfg = resolve(name, common.config.as_deref(), flags, &|k| std::env::var(k).ok())?;
    // A second init (in tests) is harmless.
    let _ = env_logger::Builder::new()
        .parse_filters(&cfg.log_level)
        .target(env_logger::Target::Stderr)
        .try_init();
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut p = Value::Object(Default::default());
    match cli.command {
        Command::Build { common, build } => {
            build.patch(&mut p);
            commands::run_build(&configure("build", &common, p)?)
        }
        Command::BuildOneshot { common, build, variant } => {
            build.patch(&mut p);
            put(&mut p, "oneshot_variant", variant);
            commands::run_build_oneshot(&configure("build-oneshot", &common, p)?)
        }
        Command::Search {
            common,
            search,
            taxonomy_dir,
            queries,
            queries_file,
        } => {
            search.patch(&mut p);
            put(&mut p, "data/taxonomy_dir", taxonomy_dir);
            put(&mut p, "data/queries", queries_file);
            put(&mut p, "data/query_texts", (!queries.is_empty()).then_some(queries));
            commands::run_search(&configure("search", &common, p)?)
        }
        Command::Eval {
            common,
            search,
            eval,
            taxonomy_dir,
        } => {
            search.patch(&mut p);
            eval.patch(&mut p);
            put(&mut p, "data/taxonomy_dir", taxonomy_dir);
            commands::run_eval(&configure("eval", &common, p)?)
        }
        Command::Baseline {
            common,
            eval,
            method,
            k,
            shape,
            embed_model,
        } => {
            eval.patch(&mut p);
            put(&mut p, "baseline/method", method);
            put(&mut p, "baseline/k", k);
            put(&mut p, "baseline/shape", shape);
            put(&mut p, "backend/embed_model", embed_model);
            commands::run_baseline(&configure("baseline", &common, p)?)
        }
        Command::Stats {
            common,
            queries,
            taxonomy_dir,
        } => {
            put(&mut p, "data/queries", queries);
            put(&mut p, "data/taxonomy_dir", taxonomy_dir);
            commands::run_stats(&configure("stats", &common, p)?)
        }
        Command::Compare { runs, format, out } => commands::run_compare(&runs, format, out.as_deref()),
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", one_line(first.trim_start_matches("error: ")));
            eprint!("{}", rendered.split_once('\n').map_or("", |(_, rest)| rest));
            std::process::exit(Category::Usage.exit_code());
        }
    };
    if let Err(err) = run(cli) {
        let category = categorize(&err);
        eprintln!("error[{}]: {}", category.as_str(), one_line(&format!("{err:#}")));
        std::process::exit(category.exit_code());
    }
}
