//! Network front of a context spaces desk: one HTTP listener for `/dav`
//! (WebDAV) and `/api` (sidebar JSON plus the `/api/events` stream), one
//! plain-text IMAP listener, and a periodic tidy-up.
//!
//! All handlers share one `Arc<RwLock<Desk>>`; writes serialize on the lock
//! and run on the blocking pool.

mod http;
mod imap;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::RwLock;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use cspaces_core::clock::{wall_clock, Timestamp};
use cspaces_core::config::Config;
use cspaces_core::forgetting::tidy_up;
use cspaces_core::par::Exec;
use cspaces_core::Desk;

pub use http::router;
pub use imap::serve_imap;

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    pub desk: Arc<RwLock<Desk>>,
    pub user: Arc<str>,
    pub password: Arc<str>,
    pub clock: Clock,
}

impl AppState {
    pub fn new(desk: Desk, user: &str, password: &str) -> AppState {
        AppState {
            desk: Arc::new(RwLock::new(desk)),
            user: user.into(),
            password: password.into(),
            clock: Arc::new(wall_clock),
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> AppState {
        self.clock = clock;
        self
    }

    pub fn now(&self) -> Timestamp {
        (self.clock)()
    }
}

/// Listeners started by [`start`]; dropping it leaves them running.
pub struct Running {
    pub http: SocketAddr,
    pub imap: SocketAddr,
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl Running {
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

pub async fn start(
    state: AppState,
    http_addr: &str,
    imap_addr: &str,
    tidy_every: Option<Duration>,
) -> std::io::Result<Running> {
    let (stop, stopped) = watch::channel(false);
    let http_listener = TcpListener::bind(http_addr).await?;
    let imap_listener = TcpListener::bind(imap_addr).await?;
    let (http, imap) = (http_listener.local_addr()?, imap_listener.local_addr()?);
    let mut tasks = Vec::new();

    let app = router(state.clone());
    let mut rx = stopped.clone();
    tasks.push(tokio::spawn(async move {
        let graceful = async move {
            let _ = rx.wait_for(|s| *s).await;
        };
        if let Err(e) = axum::serve(http_listener, app).with_graceful_shutdown(graceful).await {
            tracing::error!("http listener failed: {e}");
        }
    }));
    tasks.push(tokio::spawn(serve_imap(imap_listener, state.clone(), stopped.clone())));
    if let Some(every) = tidy_every.filter(|d| !d.is_zero()) {
        tasks.push(tokio::spawn(scheduler(state, every, stopped)));
    }
    tracing::info!(%http, %imap, "listening");
    Ok(Running { http, imap, stop, tasks })
}

async fn scheduler(state: AppState, every: Duration, mut stopped: watch::Receiver<bool>) {
    let mut tick = tokio::time::interval(every);
    tick.tick().await;
    loop {
        tokio::select! {
            _ = tick.tick() => {}
            _ = stopped.wait_for(|s| *s) => return,
        }
        let st = state.clone();
        let run = tokio::task::spawn_blocking(move || tidy_up(&*st.desk, st.now(), Exec::default(), false)).await;
        match run {
            Ok(Ok(report)) => tracing::info!(actions = report.actions.len(), failures = report.failures.len(), "scheduled tidy-up"),
            Ok(Err(e)) => tracing::warn!("scheduled tidy-up failed: {e}"),
            Err(e) => tracing::error!("tidy-up task panicked: {e}"),
        }
    }
}

/// Runs the daemon from `config` until interrupted, then snapshots the desk.
pub async fn serve(config: Config) -> cspaces_core::Result<()> {
    std::fs::create_dir_all(&config.data_dir)?;
    let desk = Desk::open(&config.data_dir, config.desk_config())?;
    let state = AppState::new(desk, &config.user, &config.password);
    let every = (config.tidyup_interval_hours > 0.0).then(|| Duration::from_secs_f64(config.tidyup_interval_hours * 3600.0));
    let running = start(
        state.clone(),
        &format!("{}:{}", config.bind, config.http_port),
        &format!("{}:{}", config.bind, config.imap_port),
        every,
    )
    .await?;
    tokio::signal::ctrl_c().await?;
    tracing::info!("shutting down");
    running.shutdown().await;
    state.desk.write().snapshot()?;
    Ok(())
}
