//! HTTP service for versioned exam sets, server-side scored submissions,
//! the leaderboard, and the expert hard-case queue.
//!
//! Answer keys stay on the server: every response shape in [`views`] omits
//! them.

mod api;
pub mod config;
pub mod error;
pub mod scoring;
pub mod store;
pub mod views;

use std::future::Future;
use std::net::{IpAddr, SocketAddr};
use std::num::NonZeroU32;
use std::sync::Arc;
use std::thread::JoinHandle;

use chrono::{DateTime, Utc};
use governor::{DefaultKeyedRateLimiter, Quota, RateLimiter};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use cotloop_core::engine::HardCaseQueue;

pub use api::router;
pub use config::{Secrets, ServiceConfig};
pub use store::{Store, StoreError};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub struct Inner {
    pub store: Store,
    pub queue: Option<HardCaseQueue>,
    pub secrets: Secrets,
    pub config: ServiceConfig,
    limiter: Option<DefaultKeyedRateLimiter<IpAddr>>,
    clock: Clock,
}

#[derive(Clone)]
pub struct AppState(pub Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig, secrets: Secrets) -> Result<AppState, StoreError> {
        AppState::with_clock(config, secrets, Arc::new(Utc::now))
    }

    /// Like [`AppState::new`] with a custom time source for submission
    /// and release timestamps.
    pub fn with_clock(config: ServiceConfig, secrets: Secrets, clock: Clock) -> Result<AppState, StoreError> {
        let store = Store::open(&config.data_dir)?;
        let queue = config.hardcase_queue.as_ref().map(HardCaseQueue::open);
        let limiter = NonZeroU32::new(config.submissions_per_minute).map(|n| RateLimiter::keyed(Quota::per_minute(n)));
        Ok(AppState(Arc::new(Inner { store, queue, secrets, config, limiter, clock })))
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(listener: TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    let app = router(state).into_make_service_with_connect_info::<SocketAddr>();
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// A server on its own runtime thread; stops when dropped.
pub struct Running {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl Running {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `bind` (port 0 picks a free port) and serves in the background.
pub fn spawn(state: AppState, bind: &str) -> std::io::Result<Running> {
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let listener = runtime.block_on(TcpListener::bind(bind))?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(serve(listener, state, async {
            let _ = stopped.await;
        }))
    });
    Ok(Running { addr, stop: Some(stop), thread: Some(thread) })
}
