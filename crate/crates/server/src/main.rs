use std::sync::Arc;

use brewtask_server::{app_state, build_platform, router, spawn_expiry_task, ServerConfig};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();

    let cfg = ServerConfig::from_env()?;
    let platform = Arc::new(build_platform(&cfg)?);
    spawn_expiry_task(platform.clone(), cfg.expiry_interval);

    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, persistent = platform.store().is_persistent(), "listening");
    axum::serve(listener, router(app_state(platform, &cfg)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
