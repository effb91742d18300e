//! HTTP/JSON service over a persistent replica of the dose ledger.
//!
//! A CENTRAL node holds every record. A LOCAL node holds the records of
//! the patients it has seen, pushes its own records upstream in the
//! background and stages a patient's history from CENTRAL on first
//! contact. The endpoint table is served at `GET /api`.

pub mod api;
pub mod auth;
pub mod client;
pub mod config;
pub mod node;
pub mod upstream;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use radsafe_core::dose::{DoseEngine, KFactorTable, LimitPolicy};
use radsafe_core::pki::{Identity, TrustBundle, TrustStore};
use serde::de::DeserializeOwned;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{Mutex, Notify};

pub use client::{Client, ClientError};
pub use config::{NodeRole, ServiceConfig};
pub use node::{HistoryPage, Node, NodeError, PullPage};
pub use upstream::{UpstreamReport, UpstreamStatus};

/// Machine-readable API description, also served at `GET /api`.
pub const API_DESCRIPTION: &str = include_str!("../../../docs/api.json");

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub struct AppState {
    pub config: ServiceConfig,
    pub node: RwLock<Node>,
    pub identity: Identity,
    pub upstream: Option<Client>,
    pub upstream_status: std::sync::Mutex<UpstreamStatus>,
    /// Serializes sync sessions with the upstream.
    pub sync_session: Mutex<()>,
    pub sync_wakeup: Notify,
    pub started_at: DateTime<Utc>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ServiceError> {
    let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
}

pub fn load_trust(path: &Path) -> Result<TrustStore, ServiceError> {
    TrustStore::from_bundle(read_json::<TrustBundle>(path)?).map_err(|e| ServiceError::Config(e.to_string()))
}

pub fn load_engine(k_factors: Option<&Path>) -> Result<DoseEngine, ServiceError> {
    let engine = DoseEngine::builtin();
    Ok(match k_factors {
        Some(p) => engine.with_k_factors(KFactorTable::load(p).map_err(|e| ServiceError::Config(e.to_string()))?),
        None => engine,
    })
}

pub fn load_policy(path: Option<&Path>) -> Result<LimitPolicy, ServiceError> {
    let Some(path) = path else { return Ok(LimitPolicy::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("cannot read {}: {e}", path.display())))?;
    let policy: LimitPolicy = toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
    policy.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
    Ok(policy)
}

/// Opens the node described by `config` without serving it.
pub fn open_node(config: &ServiceConfig) -> Result<Node, ServiceError> {
    let trust = load_trust(&config.trust_bundle)?;
    let engine = load_engine(config.k_factors.as_deref())?;
    let policy = load_policy(config.limit_policy.as_deref())?;
    Ok(Node::open(&config.data_dir, config.role, &config.node_id, trust, engine, policy)?)
}

/// A bound, not yet running service.
pub struct Service {
    state: Arc<AppState>,
    listener: TcpListener,
}

impl Service {
    /// Loads keys and tables, opens the data directory and binds the
    /// listen address.
    pub async fn start(config: ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        if config.tls_cert.is_some() {
            return Err(ServiceError::Config(
                "built-in TLS is not available; terminate TLS in front of the service and leave tls_cert unset".into(),
            ));
        }
        let identity: Identity = read_json(&config.identity)?;
        identity.signer().map_err(|e| ServiceError::Config(format!("identity: {e}")))?;
        let node = open_node(&config)?;
        let upstream = config.upstream.as_ref().map(|url| Client::new(url, identity.clone()));
        let listener = TcpListener::bind(config.listen).await?;
        let state = Arc::new(AppState {
            config,
            node: RwLock::new(node),
            identity,
            upstream,
            upstream_status: Default::default(),
            sync_session: Mutex::new(()),
            sync_wakeup: Notify::new(),
            started_at: Utc::now(),
        });
        Ok(Self { state, listener })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, ServiceError> {
        Ok(self.listener.local_addr()?)
    }

    pub fn state(&self) -> Arc<AppState> {
        self.state.clone()
    }

    /// Serves until `shutdown` resolves. LOCAL nodes also run the upstream
    /// sync loop.
    pub async fn run(self, shutdown: impl std::future::Future<Output = ()> + Send + 'static) -> Result<(), ServiceError> {
        let sync_task = (self.state.config.role == NodeRole::Local).then(|| tokio::spawn(upstream::sync_loop(self.state.clone())));
        let app = api::router(self.state.clone());
        tracing::info!(addr = %self.listener.local_addr()?, role = %self.state.config.role, node = %self.state.config.node_id, "listening");
        axum::serve(self.listener, app).with_graceful_shutdown(shutdown).await?;
        if let Some(t) = sync_task {
            t.abort();
        }
        Ok(())
    }
}

/// JSON log lines on stderr, filtered by `RUST_LOG` (default `info`).
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt().json().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}
