//! The `ragway` command line: ingest, serve, query, eval.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use config::{AppConfig, Overrides, ENV_CONFIG};

#[derive(Debug, Parser)]
#[command(
    name = "ragway",
    version,
    about = "Hybrid-retrieval question answering over Markdown docs, served as MCP tools"
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Use deterministic offline model backends.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Index snapshot path.
    #[arg(long, global = true)]
    pub index: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Transport {
    Stdio,
    Http,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split, embed and index every Markdown file under a directory.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        partition: Option<String>,
    },
    /// Expose rag_chat and rag_search over JSON-RPC.
    Serve {
        #[arg(long, value_enum, default_value_t = Transport::Stdio)]
        transport: Transport,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Ask one question (or run one search) and print the result.
    Query {
        #[arg(long)]
        text: String,
        #[arg(long)]
        search_only: bool,
        #[arg(long)]
        no_cache: bool,
        #[arg(long)]
        partition: Option<String>,
        #[arg(long)]
        top_k: Option<usize>,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Run a line-delimited JSON QA dataset and report metrics.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        no_cache: bool,
        /// Where to write line records; the summary goes next to it.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

impl Cli {
    fn flag_overrides(&self) -> Overrides {
        let (partition, bind) = match &self.command {
            Command::Ingest { partition, .. } | Command::Query { partition, .. } => {
                (partition.clone(), None)
            }
            Command::Serve { bind, .. } => (None, bind.clone()),
            Command::Eval { .. } => (None, None),
        };
        Overrides {
            index_path: self.index.clone(),
            partition,
            bind,
            mock: self.mock.then_some(true),
            prompt_catalog: None,
        }
    }

    pub fn resolve_config(&self, env: impl Fn(&str) -> Option<String>) -> Result<AppConfig> {
        let file = self
            .config
            .clone()
            .or_else(|| env(ENV_CONFIG).map(PathBuf::from));
        let env_over = Overrides::from_env(env)?;
        AppConfig::resolve(file.as_deref(), &env_over, &self.flag_overrides())
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve_config(|k| std::env::var(k).ok())?;
    match &cli.command {
        Command::Ingest { input, .. } => {
            let gateway = commands::build_gateway(&cfg)?;
            let s = commands::ingest(&cfg, &gateway, input, &cfg.pipeline.partition_key)?;
            println!(
                "ingested docs={} chunks={} skipped={} index={}",
                s.docs,
                s.chunks,
                s.skipped,
                s.index_path.display()
            );
        }
        Command::Serve { transport, .. } => match transport {
            Transport::Stdio => commands::serve_stdio_cmd(&cfg)?,
            Transport::Http => commands::serve_http_cmd(&cfg)?,
        },
        Command::Query {
            text,
            search_only,
            no_cache,
            top_k,
            json,
            ..
        } => {
            let out = commands::query(
                &cfg,
                &commands::QueryArgs {
                    text,
                    search_only: *search_only,
                    no_cache: *no_cache,
                    top_k: *top_k,
                    json: *json,
                },
            )?;
            print!("{out}");
        }
        Command::Eval {
            dataset,
            no_cache,
            report,
        } => {
            let path = report
                .clone()
                .unwrap_or_else(|| commands::default_report_path(dataset));
            let r = commands::eval(&cfg, dataset, *no_cache, &path)?;
            print!("{}", r.summary_table());
            println!("report: {}", path.display());
        }
    }
    Ok(())
}
