//! The platform façade: storage, clock and configuration shared by the
//! kitchen, routing, ledger and account operations.

use std::sync::Arc;

use chrono::Duration;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::clock::{Clock, SystemClock};
use crate::error::Result;
use crate::ingestion::FeedRegistry;
use crate::model::{Job, JobId, UserId};
use crate::routing::ReservationPolicy;
use crate::storage::{Store, Txn};

/// Collection names and key layouts.
///
/// Ids never contain `:` except as the separators introduced here, so a key
/// prefix ending in `:` selects exactly one parent.
pub(crate) mod keys {
    pub const JOBS: &str = "jobs";
    /// `{job}:u{index:06}`
    pub const UNITS: &str = "units";
    /// `{job}:{worker}:{n:04}`
    pub const INSTANCES: &str = "instances";
    /// `{unit}:{worker}`
    pub const JUDGMENTS: &str = "judgments";
    /// `{job}:{worker}`
    pub const QUALITY: &str = "quality";
    /// `{worker}:{job}`
    pub const PARTICIPATION: &str = "participation";
    /// `{worker}:{transaction id}`
    pub const TRANSACTIONS: &str = "transactions";
    pub const REWARDS: &str = "rewards";
    /// `{worker}:{coupon id}`
    pub const COUPONS: &str = "coupons";
    pub const USERS: &str = "users";
    pub const SESSIONS: &str = "sessions";
    /// `{principal}:{scope}:{key}`
    pub const IDEMPOTENCY: &str = "idempotency";
    pub const META: &str = "meta";

    pub fn prefix(parent: impl std::fmt::Display) -> String {
        format!("{parent}:")
    }

    pub fn pair(a: impl std::fmt::Display, b: impl std::fmt::Display) -> String {
        format!("{a}:{b}")
    }
}

#[derive(Debug, Clone)]
pub struct PlatformConfig {
    pub reservation: ReservationPolicy,
    pub session_ttl: Duration,
    /// Seed for gold-injection draws. Each claim derives its own generator
    /// from this seed and the new instance id.
    pub rng_seed: u64,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            reservation: ReservationPolicy::default(),
            session_ttl: Duration::hours(12),
            rng_seed: rand::random(),
        }
    }
}

pub struct Platform {
    pub(crate) store: Store,
    pub(crate) clock: Arc<dyn Clock>,
    pub(crate) config: PlatformConfig,
    pub(crate) feeds: FeedRegistry,
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform")
            .field("store", &self.store)
            .field("config", &self.config)
            .field("feeds", &self.feeds)
            .finish()
    }
}

impl Platform {
    pub fn new(store: Store, clock: Arc<dyn Clock>, config: PlatformConfig, feeds: FeedRegistry) -> Self {
        Self {
            store,
            clock,
            config,
            feeds,
        }
    }

    /// In-memory platform on the system clock with no feed adapters.
    pub fn in_memory() -> Self {
        Self::new(
            Store::in_memory(),
            Arc::new(SystemClock),
            PlatformConfig::default(),
            FeedRegistry::new(),
        )
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn feeds(&self) -> &FeedRegistry {
        &self.feeds
    }

    pub(crate) fn rng_for(&self, salt: &str) -> ChaCha8Rng {
        let digest = Sha256::new()
            .chain_update(self.config.rng_seed.to_le_bytes())
            .chain_update(salt.as_bytes())
            .finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        ChaCha8Rng::from_seed(seed)
    }

    pub fn job(&self, id: &JobId) -> Result<Job> {
        self.store
            .get(keys::JOBS, id.as_str())?
            .ok_or_else(|| crate::Error::NotFound(format!("job {id}")))
    }

    pub fn jobs(&self) -> Result<Vec<Job>> {
        Ok(self
            .store
            .list_by_prefix::<Job>(keys::JOBS, "")?
            .into_iter()
            .map(|(_, j)| j)
            .collect())
    }
}

/// Runs `op` at most once per `(principal, scope, key)`; a repeat returns the
/// stored result of the first success. Without a key `op` always runs.
pub(crate) fn idempotent<R, F>(
    txn: &mut Txn<'_>,
    principal: &UserId,
    scope: &str,
    key: Option<&str>,
    op: F,
) -> Result<R>
where
    R: Serialize + DeserializeOwned,
    F: FnOnce(&mut Txn<'_>) -> Result<R>,
{
    let Some(key) = key else {
        return op(txn);
    };
    let record_key = format!("{principal}:{scope}:{key}");
    if let Some(prev) = txn.get::<R>(keys::IDEMPOTENCY, &record_key)? {
        return Ok(prev);
    }
    let out = op(txn)?;
    txn.put(keys::IDEMPOTENCY, &record_key, &out)?;
    Ok(out)
}
