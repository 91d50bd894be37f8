//! REST front door for one escrow instance, plus a blocking client for it.

pub mod api;
pub mod client;
pub mod error;
pub mod session;
pub mod wire;

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use escrow_core::runtime::SharingProgram;
use escrow_core::{Escrow, EscrowConfig, EscrowError};
use escrow_scenarios::ads::{self, AdsOptions};
use escrow_scenarios::fraud::{self, FraudOptions};
use escrow_scenarios::{health, patterns};
use tokio::sync::oneshot;

pub use api::{App, router};

/// Programs this build can load, by name.
pub const PROGRAMS: [&str; 4] = ["fraud", "health", "ads", "patterns"];

pub fn load_program(name: &str) -> Result<SharingProgram, String> {
    let p = match name {
        "fraud" => fraud::program(FraudOptions::default()).map(|s| s.program),
        "health" => health::program(Arc::new(health::LinearAdjustment)).map(|s| s.program),
        "ads" => ads::program(AdsOptions::default()).map(|s| s.program),
        "patterns" => patterns::program(),
        other => return Err(format!("unknown program {other:?}; known: {}", PROGRAMS.join(", "))),
    };
    p.map_err(|e| format!("loading {name}: {e}"))
}

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub token_ttl: Duration,
    /// Largest accepted request body, in bytes.
    pub max_upload: usize,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions { token_ttl: Duration::from_secs(3600), max_upload: 1 << 30 }
    }
}

/// Opens the escrow (running log recovery) and wraps it for serving.
pub fn open(config: EscrowConfig, program: SharingProgram, opts: &ServerOptions) -> Result<Arc<App>, EscrowError> {
    let escrow = Escrow::open(config, program)?;
    Ok(Arc::new(App { escrow, sessions: session::Sessions::new(opts.token_ttl), max_upload: opts.max_upload }))
}

/// A server on its own runtime thread. Dropping it stops the server and
/// releases the data directory.
pub struct Background {
    pub addr: SocketAddr,
    pub app: Arc<App>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Background {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for Background {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Serves `app` on an ephemeral loopback port.
pub fn spawn(app: Arc<App>) -> std::io::Result<Background> {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel();
    let routes = router(app.clone());
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let stop = async {
                let _ = rx.await;
            };
            if let Err(e) = axum::serve(listener, routes).with_graceful_shutdown(stop).await {
                log::error!("server stopped: {e}");
            }
        });
    });
    Ok(Background { addr, app, stop: Some(tx), thread: Some(thread) })
}
