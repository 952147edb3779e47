//! HTTP transport: `POST /api`, `GET /api/metrics`, `GET /api/sites`.
//!
//! The service runs on its own runtime thread and never blocks the guest;
//! every handler only takes engine snapshots or short per-site locks.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};
use fluxvm::patch::Engine;
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tower_http::cors::CorsLayer;

use crate::protocol::{handle_request, Response};

pub const DEFAULT_BIND: &str = "127.0.0.1";

async fn api(State(engine): State<Arc<Engine>>, body: String) -> Json<Response> {
    Json(handle_request(&engine, &body))
}

async fn metrics(State(engine): State<Arc<Engine>>) -> Json<Value> {
    Json(json!(engine.metrics()))
}

async fn sites(State(engine): State<Arc<Engine>>) -> Json<Value> {
    Json(json!(engine.list_call_sites()))
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/api", post(api))
        .route("/api/metrics", get(metrics))
        .route("/api/sites", get(sites))
        .layer(CorsLayer::permissive())
        .with_state(engine)
}

/// A running service. Dropping it shuts the service down.
pub struct Server {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves `engine` until the
/// returned [`Server`] is shut down.
pub fn serve(engine: Arc<Engine>, addr: SocketAddr) -> io::Result<Server> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .thread_name("fluxvm-mgmt")
        .enable_io()
        .build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let local = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(engine);
    let thread = std::thread::Builder::new().name("fluxvm-mgmt-main".into()).spawn(move || {
        runtime.block_on(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    })?;
    Ok(Server {
        addr: local,
        stop: Some(tx),
        thread: Some(thread),
    })
}
