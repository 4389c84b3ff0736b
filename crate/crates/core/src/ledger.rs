//! Earnings, spendings, reward catalog and coupon issuance.
//!
//! The transaction log is append-only and balances are always derived from
//! it. Coupon codes are operator-supplied and each is handed out at most once.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CouponId, InstanceId, InstanceState, Job, JobId, Money, RewardId, TaskInstance, Timestamp, WorkerId};
use crate::platform::{idempotent, keys, Platform};
use crate::routing::quality_state;
use crate::storage::Txn;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TransactionKind {
    JudgmentCredit { job_id: JobId, instance_id: InstanceId },
    CouponPurchase { coupon_id: CouponId },
    ManualAdjustment { note: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: String,
    pub worker_id: WorkerId,
    /// Positive for earnings, negative for spendings.
    pub amount: Money,
    pub kind: TransactionKind,
    pub created_at: Timestamp,
}

/// A purchasable reward and its pool of unissued codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardItem {
    pub id: RewardId,
    pub title: String,
    pub price: Money,
    pub venue: String,
    /// Unissued codes, handed out front to back.
    pub codes: Vec<String>,
    #[serde(default)]
    pub issued: Vec<String>,
}

impl RewardItem {
    pub fn remaining(&self) -> usize {
        self.codes.len()
    }

    fn knows(&self, code: &str) -> bool {
        self.codes.iter().chain(&self.issued).any(|c| c == code)
    }
}

/// Catalog entry as shown to workers; codes stay hidden.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardView {
    pub id: RewardId,
    pub title: String,
    pub price: Money,
    pub venue: String,
    pub remaining: usize,
}

impl From<&RewardItem> for RewardView {
    fn from(r: &RewardItem) -> Self {
        Self {
            id: r.id.clone(),
            title: r.title.clone(),
            price: r.price,
            venue: r.venue.clone(),
            remaining: r.remaining(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coupon {
    pub id: CouponId,
    pub worker_id: WorkerId,
    pub reward_item_id: RewardId,
    pub code: String,
    pub issued_at: Timestamp,
}

/// Reward metadata supplied by the operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardSeed {
    pub id: RewardId,
    pub title: String,
    pub price: Money,
    pub venue: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardUpsert {
    pub created: bool,
    pub codes_added: usize,
    pub codes_skipped: usize,
    pub remaining: usize,
}

pub(crate) fn balance_in(t: &mut Txn<'_>, worker: &WorkerId) -> Result<Money> {
    Ok(t.scan::<Transaction>(keys::TRANSACTIONS, &keys::prefix(worker))?
        .into_iter()
        .map(|(_, tx)| tx.amount)
        .sum())
}

fn append(t: &mut Txn<'_>, tx: &Transaction) -> Result<()> {
    t.put(keys::TRANSACTIONS, &keys::pair(&tx.worker_id, &tx.id), tx)?;
    Ok(())
}

/// Appends the per-instance reward for `instance`, once.
pub(crate) fn credit_in(
    t: &mut Txn<'_>,
    worker: &WorkerId,
    job: &Job,
    instance: &InstanceId,
    now: Timestamp,
) -> Result<Transaction> {
    let tx = Transaction {
        id: format!("credit:{instance}"),
        worker_id: worker.clone(),
        amount: job.spec.reward,
        kind: TransactionKind::JudgmentCredit {
            job_id: job.id.clone(),
            instance_id: instance.clone(),
        },
        created_at: now,
    };
    if t.exists(keys::TRANSACTIONS, &keys::pair(worker, &tx.id))? {
        return Err(Error::AlreadyCredited);
    }
    append(t, &tx)?;
    Ok(tx)
}

impl Platform {
    /// Credits the job reward for a submitted instance. Submission already
    /// does this, so a second credit fails with `AlreadyCredited`.
    pub fn credit_judgment(&self, worker: &WorkerId, job: &JobId, instance: &InstanceId) -> Result<Transaction> {
        let now = self.clock.now();
        self.store.transact(|t| {
            let inst: TaskInstance = t
                .get(keys::INSTANCES, instance.as_str())?
                .ok_or(Error::UnknownInstance)?;
            if &inst.job_id != job {
                return Err(Error::UnknownInstance);
            }
            if &inst.worker_id != worker || inst.state != InstanceState::Submitted {
                return Err(Error::NotSubmitted);
            }
            let job: Job = t
                .get(keys::JOBS, job.as_str())?
                .ok_or_else(|| Error::NotFound(format!("job {job}")))?;
            if t.exists(keys::TRANSACTIONS, &keys::pair(worker, format!("credit:{instance}")))? {
                return Err(Error::AlreadyCredited);
            }
            if quality_state(t, &job.id, worker)?.banned {
                return Err(Error::NotEligible);
            }
            credit_in(t, worker, &job, instance, now)
        })
    }

    /// Sum of the worker's transaction log.
    pub fn balance(&self, worker: &WorkerId) -> Result<Money> {
        self.store.transact(|t| balance_in(t, worker))
    }

    /// The worker's transactions, oldest first.
    pub fn transactions(&self, worker: &WorkerId) -> Result<Vec<Transaction>> {
        Ok(self
            .store
            .list_by_prefix::<Transaction>(keys::TRANSACTIONS, &keys::prefix(worker))?
            .into_iter()
            .map(|(_, tx)| tx)
            .collect())
    }

    pub fn coupons(&self, worker: &WorkerId) -> Result<Vec<Coupon>> {
        Ok(self
            .store
            .list_by_prefix::<Coupon>(keys::COUPONS, &keys::prefix(worker))?
            .into_iter()
            .map(|(_, c)| c)
            .collect())
    }

    /// Every issued coupon, across workers.
    pub fn all_coupons(&self) -> Result<Vec<Coupon>> {
        Ok(self
            .store
            .list_by_prefix::<Coupon>(keys::COUPONS, "")?
            .into_iter()
            .map(|(_, c)| c)
            .collect())
    }

    pub fn rewards(&self) -> Result<Vec<RewardView>> {
        Ok(self
            .store
            .list_by_prefix::<RewardItem>(keys::REWARDS, "")?
            .iter()
            .map(|(_, r)| RewardView::from(r))
            .collect())
    }

    pub fn reward(&self, id: &RewardId) -> Result<RewardItem> {
        self.store
            .get(keys::REWARDS, id.as_str())?
            .ok_or_else(|| Error::NotFound(format!("reward {id}")))
    }

    /// Creates or updates a reward and adds any codes it has never seen.
    /// Re-running with the same input changes nothing.
    pub fn upsert_reward(&self, seed: &RewardSeed, codes: &[String]) -> Result<RewardUpsert> {
        if seed.price.is_negative() {
            return Err(Error::Config(format!("reward {} has a negative price", seed.id)));
        }
        self.store.transact(|t| {
            let existing: Option<RewardItem> = t.get(keys::REWARDS, seed.id.as_str())?;
            let created = existing.is_none();
            let mut item = existing.unwrap_or_else(|| RewardItem {
                id: seed.id.clone(),
                title: String::new(),
                price: Money::ZERO,
                venue: String::new(),
                codes: Vec::new(),
                issued: Vec::new(),
            });
            item.title = seed.title.clone();
            item.price = seed.price;
            item.venue = seed.venue.clone();
            let mut added = 0;
            let mut seen = HashSet::new();
            for code in codes {
                if !seen.insert(code.as_str()) || item.knows(code) {
                    continue;
                }
                item.codes.push(code.clone());
                added += 1;
            }
            t.put(keys::REWARDS, seed.id.as_str(), &item)?;
            Ok(RewardUpsert {
                created,
                codes_added: added,
                codes_skipped: codes.len() - added,
                remaining: item.remaining(),
            })
        })
    }

    /// Buys one coupon: debits the price and hands out the next code, in one
    /// transaction.
    pub fn purchase_coupon(&self, worker: &WorkerId, reward: &RewardId, idempotency_key: Option<&str>) -> Result<Coupon> {
        let now = self.clock.now();
        let scope = format!("purchase:{reward}");
        self.store.transact(|t| {
            idempotent(t, worker, &scope, idempotency_key, |t| {
                let mut item: RewardItem = t
                    .get(keys::REWARDS, reward.as_str())?
                    .ok_or_else(|| Error::NotFound(format!("reward {reward}")))?;
                if item.codes.is_empty() {
                    return Err(Error::SoldOut);
                }
                let balance = balance_in(t, worker)?;
                if balance < item.price {
                    return Err(Error::InsufficientFunds {
                        balance,
                        price: item.price,
                    });
                }
                let code = item.codes.remove(0);
                item.issued.push(code.clone());
                let coupon = Coupon {
                    id: CouponId(format!("{reward}-{:05}", item.issued.len())),
                    worker_id: worker.clone(),
                    reward_item_id: reward.clone(),
                    code,
                    issued_at: now,
                };
                append(
                    t,
                    &Transaction {
                        id: format!("coupon:{}", coupon.id),
                        worker_id: worker.clone(),
                        amount: -item.price,
                        kind: TransactionKind::CouponPurchase {
                            coupon_id: coupon.id.clone(),
                        },
                        created_at: now,
                    },
                )?;
                t.put(keys::REWARDS, reward.as_str(), &item)?;
                t.put(keys::COUPONS, &keys::pair(worker, &coupon.id), &coupon)?;
                Ok(coupon)
            })
        })
    }

    /// Operator correction. Refuses to take a balance below zero.
    pub fn adjust_balance(&self, worker: &WorkerId, amount: Money, note: &str) -> Result<Transaction> {
        let now = self.clock.now();
        self.store.transact(|t| {
            let balance = balance_in(t, worker)?;
            if (balance + amount).is_negative() {
                return Err(Error::InsufficientFunds {
                    balance,
                    price: -amount,
                });
            }
            let n = t.scan::<Transaction>(keys::TRANSACTIONS, &keys::prefix(worker))?.len();
            let tx = Transaction {
                id: format!("adjust:{n:06}"),
                worker_id: worker.clone(),
                amount,
                kind: TransactionKind::ManualAdjustment { note: note.to_owned() },
                created_at: now,
            };
            append(t, &tx)?;
            Ok(tx)
        })
    }
}
