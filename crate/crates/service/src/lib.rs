//! Annotation workflow service: accounts with one-time-code verification,
//! two-annotator labeling with live agreement, model annotation, developer
//! feedback and CSV exports, all under `/api/v1`.

pub mod api;
pub mod auth;
pub mod config;
pub mod error;
pub mod mail;
pub mod store;

use std::sync::Arc;

use crate::config::{MailProvider, ServiceConfig};
use crate::mail::{ConsoleMailer, Mailer, MemoryMailer, SpoolMailer};
use crate::store::{Clock, FileLocks, Store, SystemClock};

#[derive(Clone)]
pub struct AppState {
    pub store: Store,
    pub mailer: Arc<dyn Mailer>,
    pub clock: Arc<dyn Clock>,
    pub config: Arc<ServiceConfig>,
    pub locks: Arc<FileLocks>,
}

impl AppState {
    pub fn new(config: ServiceConfig, mailer: Arc<dyn Mailer>, clock: Arc<dyn Clock>) -> rusqlite::Result<Self> {
        Ok(AppState {
            store: Store::open(&config.store_path)?,
            mailer,
            clock,
            config: Arc::new(config),
            locks: Arc::default(),
        })
    }

    /// State with the mail provider named in the config and the system clock.
    pub fn from_config(config: ServiceConfig) -> rusqlite::Result<Self> {
        let mailer = mailer_for(&config);
        Self::new(config, mailer, Arc::new(SystemClock))
    }
}

pub fn mailer_for(config: &ServiceConfig) -> Arc<dyn Mailer> {
    match config.mail {
        MailProvider::Console => Arc::new(ConsoleMailer),
        MailProvider::Memory => Arc::new(MemoryMailer::default()),
        MailProvider::Spool => Arc::new(SpoolMailer {
            dir: config.mail_spool_dir.clone(),
        }),
    }
}

pub fn app(state: AppState) -> axum::Router {
    api::router(state)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("store: {0}")]
    Store(#[from] rusqlite::Error),
    #[error("listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

/// Binds the configured address and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), ServeError> {
    let listener = bind(&config.listen).await?;
    serve_on(listener, config, std::future::pending()).await
}

pub async fn bind(addr: &str) -> Result<tokio::net::TcpListener, ServeError> {
    tokio::net::TcpListener::bind(addr).await.map_err(|source| ServeError::Bind {
        addr: addr.to_string(),
        source,
    })
}

/// Serves on an already bound listener until Ctrl-C or `shutdown` resolves.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    config: ServiceConfig,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let state = AppState::from_config(config)?;
    tracing::info!(address = %listener.local_addr()?, "listening");
    axum::serve(listener, app(state))
        .with_graceful_shutdown(async {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = shutdown => {}
            }
        })
        .await?;
    Ok(())
}
