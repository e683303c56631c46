//! HTTP JSON API for building landmark models, fitting, editing and
//! training the parameter-to-latent adaptor.
//!
//! All routes live under `/api/v1`. Errors carry a stable code:
//! `{"error": {"code": "no_model", "message": "..."}}`.

mod api;
mod error;
mod jobs;
mod state;

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;

pub use api::{router, ModelSummary};
pub use error::{ApiError, ApiResult};
pub use jobs::JobStatus;
pub use state::{ArtifactProblem, Service, Session};
use tokio::net::TcpListener;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    pub state_dir: PathBuf,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            state_dir: PathBuf::from("lpmm-state"),
        }
    }
}

/// Serves `service` on `listener` until `shutdown` resolves. In-flight
/// requests complete; a running training job is cancelled.
pub async fn serve(listener: TcpListener, service: Service, shutdown: impl Future<Output = ()> + Send + 'static) -> io::Result<()> {
    let app = router(service.clone());
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    tokio::task::spawn_blocking(move || service.cancel_training()).await.map_err(io::Error::other)?;
    Ok(())
}

/// Binds `host:port`, restores the state dir and serves until Ctrl-C.
pub async fn run_server(config: ServerConfig) -> io::Result<()> {
    let service = Service::open(&config.state_dir)?;
    let listener = TcpListener::bind((config.host.as_str(), config.port)).await?;
    let addr: SocketAddr = listener.local_addr()?;
    log::info!("listening on http://{addr}/api/v1 (state dir {})", config.state_dir.display());
    serve(listener, service, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
