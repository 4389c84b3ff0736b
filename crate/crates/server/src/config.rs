use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use brewtask_core::routing::DEFAULT_RESERVATION_TTL_SECS;

/// Service settings, read from `BREWTASK_*` environment variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// In-memory storage when unset.
    pub data_dir: Option<PathBuf>,
    /// JSON feed fixture registered as the `fixture` feed source.
    pub feed_fixture: Option<PathBuf>,
    /// Directory holding named `*.html` UI templates.
    pub template_dir: Option<PathBuf>,
    pub reservation_ttl_secs: u32,
    pub session_ttl_secs: u32,
    pub rng_seed: Option<u64>,
    pub expiry_interval: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: None,
            feed_fixture: None,
            template_dir: None,
            reservation_ttl_secs: DEFAULT_RESERVATION_TTL_SECS,
            session_ttl_secs: 12 * 3600,
            rng_seed: None,
            expiry_interval: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub var: &'static str,
    pub detail: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.var, self.detail)
    }
}

impl std::error::Error for ConfigError {}

impl ServerConfig {
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        fn parse<T: std::str::FromStr>(var: &'static str, raw: String) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            raw.trim().parse().map_err(|e: T::Err| ConfigError {
                var,
                detail: format!("{raw:?}: {e}"),
            })
        }

        let mut cfg = Self::default();
        if let Some(v) = get("BREWTASK_BIND") {
            cfg.bind = parse("BREWTASK_BIND", v)?;
        }
        cfg.data_dir = get("BREWTASK_DATA_DIR").filter(|s| !s.is_empty()).map(PathBuf::from);
        cfg.feed_fixture = get("BREWTASK_FEED_FIXTURE").filter(|s| !s.is_empty()).map(PathBuf::from);
        cfg.template_dir = get("BREWTASK_TEMPLATE_DIR").filter(|s| !s.is_empty()).map(PathBuf::from);
        if let Some(v) = get("BREWTASK_RESERVATION_TTL_SECS") {
            cfg.reservation_ttl_secs = parse("BREWTASK_RESERVATION_TTL_SECS", v)?;
            if cfg.reservation_ttl_secs == 0 {
                return Err(ConfigError {
                    var: "BREWTASK_RESERVATION_TTL_SECS",
                    detail: "must be positive".into(),
                });
            }
        }
        if let Some(v) = get("BREWTASK_SESSION_TTL_SECS") {
            cfg.session_ttl_secs = parse("BREWTASK_SESSION_TTL_SECS", v)?;
        }
        if let Some(v) = get("BREWTASK_RNG_SEED") {
            cfg.rng_seed = Some(parse("BREWTASK_RNG_SEED", v)?);
        }
        if let Some(v) = get("BREWTASK_EXPIRY_INTERVAL_SECS") {
            let secs: u64 = parse("BREWTASK_EXPIRY_INTERVAL_SECS", v)?;
            cfg.expiry_interval = Duration::from_secs(secs.max(1));
        }
        Ok(cfg)
    }
}
