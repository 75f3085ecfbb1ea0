//! Case management service: zones, cases, annotations, exchange-request
//! log and zone-scoped views of case clusters.

pub mod api;
pub mod snapshot;
pub mod store;

pub use api::{router, ApiError, AppState};
pub use snapshot::{ChainContext, ClusterCard, ClusterView, Snapshot};
pub use store::{
    CaseAnnotation, CaseStore, ExchangeRequest, Principal, SqliteStore, StoreError, StoredCase,
    Zone,
};

/// Serves `state` on `listener` until the process stops.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: std::sync::Arc<AppState>,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
