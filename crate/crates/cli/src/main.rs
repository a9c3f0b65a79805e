mod batch;
mod remote;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use truegrade_core::metrics::KappaWeighting;
use truegrade_core::PipelineMode;

#[derive(Debug, Parser)]
#[command(name = "truegrade", version, about = "Retrieval-augmented exam grading")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate corpus files and optionally copy them into a corpus directory.
    Ingest {
        #[arg(long)]
        references: PathBuf,
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        questions: Option<PathBuf>,
        /// Directory to write normalized copies under the standard file names.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with ground-truth scores.
    Gen {
        /// JSON synthetic spec; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grade a responses file in order.
    Grade {
        #[arg(long)]
        responses: PathBuf,
        /// Corpus directory; defaults to the directory holding the responses.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        mode: Option<PipelineMode>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Embedding seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Grades JSONL. The audit log and head digest are written beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlation with ground truth per pipeline mode, averaged over seeds.
    Ablate {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write every seed's curve, with a leading seed column.
        #[arg(long)]
        per_seed: Option<PathBuf>,
    },
    /// Agreement between a grades file and human scores.
    Metrics {
        #[arg(long)]
        grades: PathBuf,
        #[arg(long)]
        human: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        confusion: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Weighting::Unweighted)]
        weighting: Weighting,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Reference human scores for the agreement endpoint.
        #[arg(long)]
        human: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<PipelineMode>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Talk to a running service.
    Client {
        #[arg(long, env = "TRUEGRADE_URL", default_value = "http://127.0.0.1:8080")]
        url: String,
        #[command(subcommand)]
        command: remote::ClientCommand,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Weighting {
    Unweighted,
    Linear,
    Quadratic,
}

impl From<Weighting> for KappaWeighting {
    fn from(w: Weighting) -> Self {
        match w {
            Weighting::Unweighted => KappaWeighting::Unweighted,
            Weighting::Linear => KappaWeighting::Linear,
            Weighting::Quadratic => KappaWeighting::Quadratic,
        }
    }
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest {
            references,
            facts,
            questions,
            out,
        } => batch::ingest(&references, &facts, questions.as_deref(), out.as_deref()),
        Command::Gen { spec, seed, out } => batch::gen(spec.as_deref(), seed, &out),
        Command::Grade {
            responses,
            corpus,
            mode,
            threshold,
            seed,
            config,
            out,
        } => {
            let overrides = batch::Overrides { mode, threshold, seed };
            // Remote providers block on the runtime, so grading runs off the async workers.
            tokio::task::spawn_blocking(move || {
                batch::grade(&responses, corpus.as_deref(), config.as_deref(), overrides, &out)
            })
            .await?
        }
        Command::Ablate {
            spec,
            seeds,
            config,
            out,
            per_seed,
        } => batch::ablate(spec.as_deref(), seeds, config.as_deref(), &out, per_seed.as_deref()),
        Command::Metrics {
            grades,
            human,
            out,
            confusion,
            weighting,
            config,
        } => batch::metrics(
            &grades,
            &human,
            &out,
            confusion.as_deref(),
            weighting.into(),
            config.as_deref(),
        ),
        Command::Serve {
            port,
            host,
            corpus,
            audit,
            human,
            config,
            mode,
            threshold,
        } => {
            let overrides = batch::Overrides {
                mode,
                threshold,
                seed: None,
            };
            remote::serve(
                &host,
                port,
                &corpus,
                audit,
                human.as_deref(),
                config.as_deref(),
                overrides,
            )
            .await
        }
        Command::Client { url, command } => remote::client(&url, command).await,
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
