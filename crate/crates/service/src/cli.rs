use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use topicview_core::metrics::{format_table, write_reports_csv};

use crate::api::router;
use crate::config::Config;
use crate::error::ServiceError;
use crate::pipeline;
use crate::state::AppState;

#[derive(Debug, Parser)]
#[command(name = "topicview", version, about = "Per-turn topic analytics for dialogue transcripts")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Data directory; overrides `server.data_dir`.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a JSONL transcript file and add it to the data directory.
    Ingest { file: PathBuf },
    /// Build the vocabulary and train word embeddings.
    TrainEmbeddings,
    /// Train the topic model.
    TrainEtm,
    /// Write the per-turn topic scores of one session as CSV.
    Score {
        session_id: String,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Topic coherence and diversity per condition.
    Eval {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the top words of every topic.
    Topics {
        /// Print the same JSON the `/api/topics` endpoint returns.
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
}

impl Cli {
    pub fn resolve_config(&self) -> Result<Config, ServiceError> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(dir) = &self.data_dir {
            config.server.data_dir = dir.clone();
        }
        Ok(config)
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, ServiceError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| ServiceError::io(p, e))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn io_err(path: Option<&Path>) -> impl Fn(std::io::Error) -> ServiceError + '_ {
    move |e| ServiceError::io(path.unwrap_or(Path::new("<stdout>")), e)
}

pub fn run(cli: Cli) -> Result<(), ServiceError> {
    let config = cli.resolve_config()?;
    match cli.command {
        Command::Ingest { file } => {
            let s = pipeline::ingest(&config.layout(), &file)?;
            println!(
                "ingested {} sessions ({} turns) into {}",
                s.sessions,
                s.turns,
                s.stored_as.display()
            );
        }
        Command::TrainEmbeddings => {
            let s = pipeline::train_embeddings(&config)?;
            println!(
                "vocabulary {} tokens from {} documents; embeddings {}x{}; epoch loss {:.4} -> {:.4}{}",
                s.vocab_size,
                s.documents,
                s.vocab_size,
                s.dim,
                s.epoch_losses.first().copied().unwrap_or(f64::NAN),
                s.epoch_losses.last().copied().unwrap_or(f64::NAN),
                if s.deterministic { "" } else { " (nondeterministic mode)" }
            );
        }
        Command::TrainEtm => {
            let s = pipeline::train_topics(&config)?;
            println!(
                "trained {} topics on {} documents; final mean ELBO {:.4}",
                s.topics, s.documents, s.final_elbo
            );
            for tag in &s.condition_models {
                println!("trained condition model {tag}");
            }
            if s.embeddings_updated {
                println!("word embeddings updated");
            }
        }
        Command::Score { session_id, out } => {
            let state = AppState::load(config)?;
            let series = state.scores(&session_id)?;
            let mut w = output(out.as_deref())?;
            series.write_csv(&mut w).map_err(io_err(out.as_deref()))?;
        }
        Command::Eval { out } => {
            let reports = pipeline::evaluate(&config)?;
            if let Some(path) = &out {
                let mut w = output(Some(path))?;
                write_reports_csv(&reports, &mut w).map_err(io_err(Some(path)))?;
            }
            print!("{}", format_table(&reports));
        }
        Command::Topics { json } => {
            let state = AppState::load(config)?;
            let topics = state.topics();
            if json {
                println!("{}", serde_json::to_string_pretty(&topics).expect("topics serialize"));
            } else {
                for t in topics {
                    let words: Vec<&str> = t.words.iter().map(|w| w.word.as_str()).collect();
                    println!("topic {}: {}", t.index, words.join(" "));
                }
            }
        }
        Command::Serve { port } => {
            let port = port.unwrap_or(config.server.port);
            let host = config.server.host.clone();
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| ServiceError::Config(format!("cannot start runtime: {e}")))?;
            runtime.block_on(serve(config, &host, port))?;
        }
    }
    Ok(())
}

async fn serve(config: Config, host: &str, port: u16) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::load(config)?);
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| ServiceError::Config(format!("bad listen address {host}:{port}: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Config(format!("cannot bind {addr}: {e}")))?;
    let local = listener
        .local_addr()
        .map_err(|e| ServiceError::Config(e.to_string()))?;
    tracing::info!(
        topics = state.model().num_topics(),
        vocabulary = state.vocabulary().len(),
        "serving {} on http://{local}",
        state.layout().root().display()
    );
    println!("listening on http://{local}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Config(format!("server error: {e}")))
}
