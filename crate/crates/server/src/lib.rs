//! Network surfaces for the governance service.
//!
//! One listener serves both the REST-style routes under `/v1` and the JSON-RPC tool-call
//! endpoint at `/mcp`. Both surfaces dispatch through [`tools::call`], so they share
//! authorization, validation and result shapes.

pub mod auth;
pub mod config;
pub mod error;
pub mod http;
pub mod rpc;
pub mod tools;

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::http::{header, HeaderMap};
use axum::routing::{get, post, put};
use axum::Router;
use govloop_core::{GovernanceService, QueueEvent};
use tokio::net::TcpListener;
use tokio::sync::broadcast;

pub use auth::{AuthConfig, Caller, Credentials, Role};
pub use config::{ServiceConfig, StartupError};
pub use error::ApiError;

/// How often pending escalations past their deadline are expired.
const EXPIRY_SWEEP: Duration = Duration::from_secs(30);

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<GovernanceService>,
    pub credentials: Arc<Credentials>,
    pub events: broadcast::Sender<QueueEvent>,
}

impl AppState {
    /// Wraps a service and starts forwarding its queue events to SSE subscribers.
    pub fn new(service: Arc<GovernanceService>, credentials: Credentials) -> Self {
        let (events, _) = broadcast::channel(256);
        let rx = service.subscribe();
        let tx = events.clone();
        std::thread::Builder::new()
            .name("govloop-events".into())
            .spawn(move || {
                // Ends once the queue drops its side of the channel.
                while let Ok(ev) = rx.recv() {
                    let _ = tx.send(ev);
                }
            })
            .expect("spawn event bridge");
        Self {
            service,
            credentials: Arc::new(credentials),
            events,
        }
    }
}

pub(crate) fn caller_from(state: &AppState, headers: &HeaderMap) -> Option<Caller> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok();
    state.credentials.authenticate(value)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(http::health))
        .route("/mcp", post(rpc::endpoint))
        .route("/v1/intents/evaluate", post(http::evaluate))
        .route("/v1/rules", get(http::get_rules).put(http::put_rules))
        .route("/v1/rules/applicable", get(http::applicable))
        .route("/v1/rules/validate", post(http::validate_rules))
        .route("/v1/rules/lint", post(http::lint_rules))
        .route("/v1/context", get(http::get_context))
        .route(
            "/v1/context/signals/{key}",
            put(http::set_signal).delete(http::remove_signal),
        )
        .route("/v1/context/registries/{name}", put(http::update_registry))
        .route("/v1/traces", get(http::query_traces))
        .route("/v1/traces/verify", get(http::verify_chain))
        .route("/v1/traces/export", get(http::export_traces))
        .route("/v1/escalations", get(http::list_escalations))
        .route("/v1/escalations/{id}", get(http::get_escalation))
        .route("/v1/escalations/{id}/resolve", post(http::resolve_escalation))
        .route("/v1/events", get(http::events))
        .with_state(state)
}

/// Loads everything the config names and binds its listen address.
pub async fn bind(config: &ServiceConfig) -> Result<(TcpListener, AppState), StartupError> {
    let credentials = config.credentials()?;
    let cfg = config.clone();
    // Building may probe a completion endpoint with a blocking client.
    let service = tokio::task::spawn_blocking(move || cfg.build_service())
        .await
        .expect("service build task")?;
    let listener = TcpListener::bind(&config.listen)
        .await
        .map_err(|source| StartupError::Bind {
            addr: config.listen.clone(),
            source,
        })?;
    Ok((listener, AppState::new(Arc::new(service), credentials)))
}

/// Serves until `shutdown` resolves, sweeping expired escalations in the background.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let service = state.service.clone();
    let sweeper = tokio::spawn(async move {
        let mut tick = tokio::time::interval(EXPIRY_SWEEP);
        loop {
            tick.tick().await;
            let svc = service.clone();
            match tokio::task::spawn_blocking(move || svc.queue().expire_stale()).await {
                Ok(Ok(0)) => {}
                Ok(Ok(n)) => tracing::info!(expired = n, "expired stale escalations"),
                Ok(Err(e)) => tracing::error!(%e, "escalation expiry failed"),
                Err(e) => tracing::error!(%e, "escalation expiry task panicked"),
            }
        }
    });
    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await;
    sweeper.abort();
    result
}
