//! HTTP/JSON gateway over a running fogchain deployment.
//!
//! Writes submit ledger transactions and return at once with a pending
//! transaction id. Reads are served from confirmed ledger state, the CAS and
//! the TSDB, and never wait for block production.

pub mod http;
pub mod metrics;
pub mod service;

pub use http::{router, router_with};
pub use metrics::{MetricsSnapshot, ReadEndpoint};
pub use service::{ApiError, ApiService, ReadEnvelope, TxView, WriteAck};

/// Binds `addr` and serves until the process exits.
pub async fn serve(service: std::sync::Arc<ApiService>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}
