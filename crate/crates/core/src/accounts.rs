//! Operator-seeded users, API-key login and session tokens.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ledger::balance_in;
use crate::model::{validate_user_id, Role, Timestamp, User, UserId, Worker};
use crate::platform::{keys, Platform};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSeed {
    pub id: String,
    #[serde(default)]
    pub display_name: Option<String>,
    pub role: Role,
    pub api_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub user_id: UserId,
    pub role: Role,
    pub expires_at: Timestamp,
}

/// The authenticated caller of an operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub user_id: UserId,
    pub role: Role,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionRecord {
    user_id: UserId,
    role: Role,
    expires_at: Timestamp,
}

pub fn hash_secret(secret: &str) -> String {
    hex::encode(Sha256::digest(secret.as_bytes()))
}

impl Platform {
    /// Creates the user or updates name, role and key. Ban records survive.
    /// Returns whether the user was new.
    pub fn upsert_user(&self, seed: &UserSeed) -> Result<bool> {
        let id = validate_user_id(&seed.id)?;
        if seed.api_key.is_empty() {
            return Err(Error::Config(format!("user {id} has an empty api key")));
        }
        let key_hash = hash_secret(&seed.api_key);
        self.store.transact(|t| {
            let existing: Option<User> = t.get(keys::USERS, id.as_str())?;
            let created = existing.is_none();
            let mut user = existing.unwrap_or_else(|| User {
                id: id.clone(),
                display_name: String::new(),
                role: seed.role,
                api_key_sha256: String::new(),
                banned_jobs: Default::default(),
            });
            let display_name = seed.display_name.clone().unwrap_or_else(|| id.to_string());
            if !created && user.display_name == display_name && user.role == seed.role && user.api_key_sha256 == key_hash {
                return Ok(false);
            }
            user.display_name = display_name;
            user.role = seed.role;
            user.api_key_sha256 = key_hash.clone();
            t.put(keys::USERS, id.as_str(), &user)?;
            Ok(created)
        })
    }

    pub fn user(&self, id: &UserId) -> Result<User> {
        self.store
            .get(keys::USERS, id.as_str())?
            .ok_or_else(|| Error::NotFound(format!("user {id}")))
    }

    pub fn users(&self) -> Result<Vec<User>> {
        Ok(self
            .store
            .list_by_prefix::<User>(keys::USERS, "")?
            .into_iter()
            .map(|(_, u)| u)
            .collect())
    }

    /// Exchanges an API key for a session token with 128 random bits.
    pub fn login(&self, user_id: &str, api_key: &str) -> Result<Session> {
        let now = self.clock.now();
        let user = match self.store.get::<User>(keys::USERS, user_id)? {
            Some(u) if u.api_key_sha256 == hash_secret(api_key) => u,
            _ => return Err(Error::InvalidCredentials),
        };
        let mut raw = [0u8; 16];
        rand::rng().fill_bytes(&mut raw);
        let token = hex::encode(raw);
        let record = SessionRecord {
            user_id: user.id.clone(),
            role: user.role,
            expires_at: now + self.config.session_ttl,
        };
        self.store.transact(|t| {
            t.put(keys::SESSIONS, &hash_secret(&token), &record)?;
            Ok::<_, Error>(())
        })?;
        Ok(Session {
            token,
            user_id: record.user_id,
            role: record.role,
            expires_at: record.expires_at,
        })
    }

    pub fn authenticate(&self, token: &str) -> Result<Principal> {
        let now = self.clock.now();
        match self.store.get::<SessionRecord>(keys::SESSIONS, &hash_secret(token))? {
            Some(s) if now <= s.expires_at => Ok(Principal {
                user_id: s.user_id,
                role: s.role,
            }),
            _ => Err(Error::Unauthenticated),
        }
    }

    pub fn logout(&self, token: &str) -> Result<()> {
        self.store.transact(|t| {
            t.delete(keys::SESSIONS, &hash_secret(token));
            Ok(())
        })
    }

    pub fn worker_summary(&self, worker: &UserId) -> Result<Worker> {
        self.store.transact(|t| {
            let user: User = t
                .get(keys::USERS, worker.as_str())?
                .ok_or_else(|| Error::NotFound(format!("user {worker}")))?;
            Ok(Worker {
                balance: balance_in(t, worker)?,
                id: user.id,
                display_name: user.display_name,
                banned_jobs: user.banned_jobs,
            })
        })
    }
}
