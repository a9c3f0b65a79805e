//! HTTP/JSON front end for the grading engine: submissions, grades, the
//! review queue, overrides, appeals, audit verification and agreement
//! metrics. Every state-changing request appends exactly one audit record.

mod error;
pub mod providers;
mod routes;
mod state;

use std::future::Future;

use tokio::net::TcpListener;

pub use error::ApiError;
pub use providers::{ProviderConfig, Providers};
pub use routes::router;
pub use state::{AppState, ServiceConfig, StartupError};

pub async fn bind(addr: &str) -> Result<TcpListener, StartupError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| StartupError::BindFailure {
            addr: addr.to_string(),
            source,
        })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "grading service listening");
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
