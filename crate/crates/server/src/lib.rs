//! HTTP service for the brewtask platform: Kitchen endpoints for requestors,
//! Cafe endpoints for workers, and a few operator endpoints.

pub mod api;
pub mod config;
pub mod error;
pub mod template;

use std::sync::Arc;
use std::time::Duration;

use brewtask_core::clock::SystemClock;
use brewtask_core::ingestion::{FeedRegistry, FixtureFeedAdapter};
use brewtask_core::routing::ReservationPolicy;
use brewtask_core::storage::Store;
use brewtask_core::{Platform, PlatformConfig};

pub use api::{router, AppState};
pub use config::ServerConfig;

/// Feed source name under which the configured fixture is registered.
pub const FIXTURE_FEED: &str = "fixture";

pub fn feed_registry(cfg: &ServerConfig) -> FeedRegistry {
    let mut feeds = FeedRegistry::new();
    if let Some(path) = &cfg.feed_fixture {
        feeds.register(FIXTURE_FEED, FixtureFeedAdapter::new(path));
    }
    feeds
}

pub fn platform_config(cfg: &ServerConfig) -> brewtask_core::Result<PlatformConfig> {
    let mut pc = PlatformConfig {
        reservation: ReservationPolicy::new(cfg.reservation_ttl_secs)?,
        session_ttl: chrono::Duration::seconds(cfg.session_ttl_secs as i64),
        ..PlatformConfig::default()
    };
    if let Some(seed) = cfg.rng_seed {
        pc.rng_seed = seed;
    }
    Ok(pc)
}

/// Opens storage and builds the platform on the system clock.
pub fn build_platform(cfg: &ServerConfig) -> brewtask_core::Result<Platform> {
    let store = match &cfg.data_dir {
        Some(dir) => Store::open(dir)?,
        None => Store::in_memory(),
    };
    Ok(Platform::new(store, Arc::new(SystemClock), platform_config(cfg)?, feed_registry(cfg)))
}

pub fn app_state(platform: Arc<Platform>, cfg: &ServerConfig) -> AppState {
    AppState {
        platform,
        templates: Arc::new(template::Templates::new(cfg.template_dir.clone())),
    }
}

/// Periodically returns expired reservations to the pool.
pub fn spawn_expiry_task(platform: Arc<Platform>, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tick.tick().await;
            let p = platform.clone();
            match tokio::task::spawn_blocking(move || p.expire_reservations(p.clock().now())).await {
                Ok(Ok(0)) => {}
                Ok(Ok(n)) => tracing::info!(expired = n, "reservations expired"),
                Ok(Err(e)) => tracing::warn!(error = %e, "expiry sweep failed"),
                Err(e) => tracing::warn!(error = %e, "expiry sweep panicked"),
            }
        }
    })
}
