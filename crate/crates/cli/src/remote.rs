use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Subcommand;
use serde::Serialize;
use truegrade_client::Client;
use truegrade_core::api::{AppealRequest, OverrideRequest, ResolveAppealRequest, SubmitRequest};
use truegrade_core::corpus::{read_jsonl, Corpus};
use truegrade_server::{AppState, ProviderConfig, ServiceConfig};

use crate::batch::{load_config, Overrides};

pub async fn serve(
    host: &str,
    port: u16,
    corpus: &Path,
    audit: Option<PathBuf>,
    human: Option<&Path>,
    config: Option<&Path>,
    overrides: Overrides,
) -> anyhow::Result<()> {
    let engine = load_config(config, overrides)?;
    let service = ServiceConfig {
        corpus: Corpus::load_dir(corpus).with_context(|| format!("loading corpus from {}", corpus.display()))?,
        pipeline: engine.pipeline,
        cache: engine.cache,
        embedder: engine.embedder,
        weights: engine.weights,
        providers: ProviderConfig::from_env().map_err(anyhow::Error::msg)?,
        audit_path: audit,
        human_scores: human.map(read_jsonl).transpose()?.unwrap_or_default(),
    };
    let state = tokio::task::spawn_blocking(move || AppState::build(service)).await??;
    let listener = truegrade_server::bind(&format!("{host}:{port}")).await?;
    // Scripts started with port 0 read the bound address from this line.
    println!("listening on http://{}", listener.local_addr()?);
    truegrade_server::serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}

#[derive(Debug, Subcommand)]
pub enum ClientCommand {
    /// Submit a response, as text or as a file for the transcription provider.
    Submit {
        #[arg(long)]
        question: String,
        #[arg(long)]
        pseudonym: String,
        #[arg(long, conflicts_with = "blob", required_unless_present = "blob")]
        transcript: Option<String>,
        #[arg(long)]
        blob: Option<PathBuf>,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        confidence: Option<f64>,
    },
    Grade {
        response_id: String,
    },
    Queue,
    Override {
        response_id: String,
        #[arg(long)]
        score: f64,
        #[arg(long)]
        reason: String,
        #[arg(long)]
        reviewer: String,
    },
    Appeal {
        response_id: String,
        #[arg(long)]
        reason: Option<String>,
        #[arg(long)]
        by: Option<String>,
    },
    Resolve {
        response_id: String,
        #[arg(long)]
        reviewer: String,
        #[arg(long)]
        resolution: Option<String>,
    },
    Verify,
    Records {
        #[arg(long)]
        response_id: Option<String>,
    },
    Agreement,
    Evidence {
        id: String,
    },
}

fn print(value: &impl Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub async fn client(url: &str, command: ClientCommand) -> anyhow::Result<()> {
    let c = Client::new(url)?;
    match command {
        ClientCommand::Submit {
            question,
            pseudonym,
            transcript,
            blob,
            id,
            confidence,
        } => {
            let blob = blob
                .map(|p| std::fs::read(&p).with_context(|| format!("reading {}", p.display())))
                .transpose()?;
            let req = SubmitRequest {
                response_id: id,
                pseudonym,
                question_id: question,
                transcript,
                blob,
                transcript_confidence: confidence,
            };
            print(&c.submit(&req).await?)
        }
        ClientCommand::Grade { response_id } => print(&c.grade(&response_id).await?),
        ClientCommand::Queue => print(&c.review_queue().await?),
        ClientCommand::Override {
            response_id,
            score,
            reason,
            reviewer,
        } => {
            let req = OverrideRequest {
                score,
                reason,
                reviewer_id: reviewer,
            };
            print(&c.override_grade(&response_id, &req).await?)
        }
        ClientCommand::Appeal {
            response_id,
            reason,
            by,
        } => {
            let req = AppealRequest { reason, opened_by: by };
            print(&c.open_appeal(&response_id, &req).await?)
        }
        ClientCommand::Resolve {
            response_id,
            reviewer,
            resolution,
        } => {
            let req = ResolveAppealRequest {
                reviewer_id: reviewer,
                resolution,
            };
            print(&c.resolve_appeal(&response_id, &req).await?)
        }
        ClientCommand::Verify => print(&c.verify_audit().await?),
        ClientCommand::Records { response_id } => print(&c.audit_records(response_id.as_deref()).await?),
        ClientCommand::Agreement => print(&c.agreement().await?),
        ClientCommand::Evidence { id } => print(&c.evidence(&id).await?),
    }
}
