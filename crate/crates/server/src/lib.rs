//! HTTP service for storyloom: stories, generation jobs, playback sessions
//! and a live NDJSON event channel, all on one port.

pub mod config;
pub mod demo;
pub mod error;
pub mod live;
pub mod routes;
pub mod state;

use std::future::Future;
use std::net::SocketAddr;

use tokio::net::TcpListener;

pub use config::ServerConfig;
pub use error::{ApiError, ServerError};
pub use state::App;

/// A service bound to its port but not yet accepting requests.
pub struct Server {
    app: App,
    listener: TcpListener,
}

impl Server {
    pub async fn bind(config: &ServerConfig) -> Result<Self, ServerError> {
        let addr = config.addr()?;
        let app = App::open(config)?;
        let listener = TcpListener::bind(addr).await.map_err(|source| ServerError::Bind {
            addr: addr.to_string(),
            source,
        })?;
        Ok(Self { app, listener })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn app(&self) -> &App {
        &self.app
    }

    /// Serves until `shutdown` completes.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
        let app = self.app.clone();
        axum::serve(self.listener, routes::router(self.app))
            .with_graceful_shutdown(async move {
                shutdown.await;
                app.close_streams();
            })
            .await
    }
}

/// Binds and serves until Ctrl-C.
pub async fn serve(config: &ServerConfig) -> Result<(), ServerError> {
    let server = Server::bind(config).await?;
    log::info!("listening on {}", server.local_addr());
    server
        .run(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServerError::Serve)
}
