//! Discrete-event worker simulator.
//!
//! Synthetic workers claim and submit instances through the HTTP API of an
//! in-process service. Simulated time lives on a [`ManualClock`]; each worker
//! always has exactly one pending event. Events are processed in
//! `(time, sequence)` order, up to `parallelism` at a time. With
//! `parallelism == 1` a run is a pure function of the seed and the store.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use axum::http::{Method, StatusCode};
use brewtask_core::accounts::UserSeed;
use brewtask_core::clock::{Clock, ManualClock};
use brewtask_core::model::{AnswerField, Category, Context, JobId, Role, Timestamp, Value, ValueKind};
use brewtask_core::Platform;
use brewtask_server::{app_state, router, ServerConfig};
use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};
use tokio::task::JoinSet;

use crate::client::{ApiClient, ClientError};

pub const SIM_ADMIN: &str = "sim-admin";

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("no published jobs")]
    NoPublishedJobs,
    #[error("job {0} is not published")]
    JobNotPublished(String),
    #[error("simulation did not settle within {0} events")]
    Stalled(usize),
    #[error("unexpected reply: {0}")]
    Unexpected(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Platform(#[from] brewtask_core::Error),
}

/// How synthetic workers behave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    /// Probability that a unit's answer matches the truth (gold or the
    /// synthetic reference answer).
    pub accuracy: f64,
    /// Mean seconds per instance; the job category's nominal duration when unset.
    pub mean_duration_secs: Option<f64>,
    /// Durations are uniform in `mean * (1 ± jitter)`.
    pub jitter: f64,
    /// Probability of walking away from a claimed instance.
    pub abandon_rate: f64,
    /// Pause between submitting and claiming again.
    pub think_secs: f64,
}

impl Default for Profile {
    fn default() -> Self {
        Self {
            accuracy: 0.95,
            mean_duration_secs: None,
            jitter: 0.5,
            abandon_rate: 0.0,
            think_secs: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub workers: usize,
    pub profile: Profile,
    pub seed: u64,
    pub parallelism: usize,
    /// Target job; the first published job when unset.
    pub job: Option<JobId>,
    /// Wait before a worker that found nothing to do asks again.
    pub retry_secs: f64,
    pub max_events: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            workers: 10,
            profile: Profile::default(),
            seed: 1,
            parallelism: 1,
            job: None,
            retry_secs: 30.0,
            max_events: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub worker_id: String,
    pub instances_submitted: usize,
    pub instances_abandoned: usize,
    pub judgments: usize,
    pub gold_judgments: usize,
    pub banned: bool,
    pub balance_cents: i64,
    /// Sum of the worker's transaction log.
    pub ledger_sum_cents: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub job_id: String,
    pub seed: u64,
    pub workers: usize,
    pub accuracy: f64,
    pub parallelism: usize,
    pub started_at: Timestamp,
    pub finished_at: Timestamp,
    pub events: usize,
    pub instances_submitted: usize,
    pub instances_abandoned: usize,
    pub judgments: usize,
    pub gold_judgments: usize,
    pub non_gold_judgments: usize,
    pub units: usize,
    pub gold_units: usize,
    pub units_finalized: usize,
    pub units_no_agreement: usize,
    pub units_pending: usize,
    /// Fewest judgments on any non-gold unit.
    pub min_judgments_per_unit: usize,
    pub duplicate_judgments: usize,
    pub bans: usize,
    pub total_payout_cents: i64,
    /// Every balance equals the sum of its transaction log.
    pub ledger_conserved: bool,
    pub worker_reports: Vec<WorkerReport>,
    /// SHA-256 of this report serialized with an empty hash.
    pub report_hash: String,
}

impl CampaignReport {
    pub fn compute_hash(&self) -> String {
        let mut copy = self.clone();
        copy.report_hash.clear();
        hex::encode(Sha256::digest(serde_json::to_vec(&copy).expect("report serializes")))
    }
}

/// Everything a worker step needs that does not change during a run.
struct Shared {
    client: ApiClient,
    job_id: String,
    fields: Vec<AnswerField>,
    gold: HashMap<String, BTreeMap<String, Json>>,
    profile: Profile,
    mean_secs: f64,
    ttl_secs: f64,
}

struct SimWorker {
    id: String,
    token: String,
    rng: ChaCha8Rng,
    current: Option<Json>,
    submitted: usize,
    abandoned: usize,
    banned: bool,
}

enum Outcome {
    /// Holding an instance that will be submitted after `secs`.
    Working { secs: f64 },
    /// Claimed and walked away; the reservation lapses at `expires_ms`.
    Abandoned { secs: f64, expires_ms: i64 },
    Submitted { banned: bool },
    Unavailable,
    Finished,
}

fn hash64(s: &str) -> u64 {
    let d = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// The reference answer for a non-gold unit, derived from its id.
pub fn reference_answer(unit_id: &str, field: &AnswerField) -> Value {
    let h = hash64(&format!("{unit_id}/{}", field.name));
    match field.kind {
        ValueKind::Text if !field.options.is_empty() => {
            Value::Text(field.options[(h % field.options.len() as u64) as usize].clone())
        }
        ValueKind::Text => Value::Text(format!("answer-{}", h % 97)),
        ValueKind::Number => Value::Number((h % 100) as f64),
        ValueKind::List => Value::List((0..3).map(|i| format!("tag{}", (h >> (i * 8)) % 40)).collect()),
    }
}

fn wrong_answer(truth: &Value, field: &AnswerField, rng: &mut ChaCha8Rng) -> Value {
    match truth {
        Value::Text(t) if field.options.len() > 1 => {
            let at = field.options.iter().position(|o| o == t).unwrap_or(0);
            let shift = rng.random_range(1..field.options.len());
            Value::Text(field.options[(at + shift) % field.options.len()].clone())
        }
        Value::Text(t) => Value::Text(format!("{t}~{}", rng.random_range(0..1000u32))),
        Value::Number(n) => Value::Number(n + 1.0 + rng.random_range(0..10u32) as f64),
        Value::List(_) => Value::List((0..3).map(|i| format!("noise{i}-{}", rng.random_range(0..1000u32))).collect()),
    }
}

fn answers_for(units: &[Json], shared: &Shared, rng: &mut ChaCha8Rng) -> Result<Json, SimError> {
    let mut answers = serde_json::Map::new();
    for u in units {
        let unit_id = u["unit_id"]
            .as_str()
            .ok_or_else(|| SimError::Unexpected(format!("claimed unit without id: {u}")))?;
        let correct = rng.random_bool(shared.profile.accuracy.clamp(0.0, 1.0));
        let mut values = serde_json::Map::new();
        for field in &shared.fields {
            let truth = match shared.gold.get(unit_id).and_then(|g| g.get(&field.name)) {
                Some(v) => serde_json::from_value(v.clone()).map_err(|e| SimError::Unexpected(e.to_string()))?,
                None => reference_answer(unit_id, field),
            };
            let v = if correct { truth } else { wrong_answer(&truth, field, rng) };
            values.insert(field.name.clone(), serde_json::to_value(v).expect("value serializes"));
        }
        answers.insert(unit_id.to_owned(), Json::Object(values));
    }
    Ok(Json::Object(answers))
}

fn hold_secs(shared: &Shared, rng: &mut ChaCha8Rng) -> f64 {
    let j = shared.profile.jitter.clamp(0.0, 1.0);
    let d = shared.mean_secs * (1.0 + j * (2.0 * rng.random::<f64>() - 1.0));
    // stay inside the reservation window
    d.clamp(1.0, (shared.ttl_secs - 1.0).max(1.0))
}

fn millis(secs: f64) -> i64 {
    (secs * 1000.0).round() as i64
}

async fn step(shared: Arc<Shared>, mut w: SimWorker, now_ms: i64) -> (SimWorker, Result<Outcome, SimError>) {
    let out = step_inner(&shared, &mut w, now_ms).await;
    (w, out)
}

async fn step_inner(shared: &Shared, w: &mut SimWorker, now_ms: i64) -> Result<Outcome, SimError> {
    let c = &shared.client;
    if let Some(claim) = w.current.take() {
        let inst = claim["instance_id"].as_str().unwrap_or_default().to_owned();
        let units = claim["units"].as_array().cloned().unwrap_or_default();
        let answers = answers_for(&units, shared, &mut w.rng)?;
        let ctx = Context::ALL[w.rng.random_range(0..Context::ALL.len())];
        let body = json!({"answers": answers, "context": ctx});
        let key = format!("sim-submit-{inst}");
        let r = c
            .send(Method::POST, &format!("/cafe/instances/{inst}/submit"), Some(&w.token), Some(&body), Some(&key))
            .await?;
        return match r.status {
            StatusCode::OK => {
                w.submitted += 1;
                let banned = r.body["banned"].as_bool().unwrap_or(false);
                w.banned |= banned;
                Ok(Outcome::Submitted { banned })
            }
            StatusCode::GONE => {
                w.abandoned += 1;
                Ok(Outcome::Unavailable)
            }
            s => Err(SimError::Unexpected(format!("submit {inst}: {s} {}", r.body))),
        };
    }

    let r = c
        .send(Method::POST, &format!("/cafe/jobs/{}/claim", shared.job_id), Some(&w.token), None, None)
        .await?;
    match (r.status, r.error_code()) {
        (StatusCode::CREATED, _) => {
            let secs = hold_secs(shared, &mut w.rng);
            if w.rng.random_bool(shared.profile.abandon_rate.clamp(0.0, 1.0)) {
                w.abandoned += 1;
                let expires_ms = now_ms + millis(shared.ttl_secs);
                Ok(Outcome::Abandoned { secs, expires_ms })
            } else {
                w.current = Some(r.body);
                Ok(Outcome::Working { secs })
            }
        }
        (_, Some("nothing_available")) => Ok(Outcome::Unavailable),
        (_, Some("not_eligible" | "job_not_open")) => Ok(Outcome::Finished),
        (s, _) => Err(SimError::Unexpected(format!("claim: {s} {}", r.body))),
    }
}

/// Creates the simulator's admin and worker accounts.
fn ensure_accounts(platform: &Platform, cfg: &SimConfig) -> Result<Vec<(String, String)>, SimError> {
    platform.upsert_user(&UserSeed {
        id: SIM_ADMIN.into(),
        display_name: Some("Simulator".into()),
        role: Role::Admin,
        api_key: format!("sim-admin-key-{}", cfg.seed),
    })?;
    let mut out = Vec::with_capacity(cfg.workers);
    for i in 0..cfg.workers {
        let id = format!("sim-w{:03}", i + 1);
        let key = format!("sim-key-{}-{i}", cfg.seed);
        platform.upsert_user(&UserSeed {
            id: id.clone(),
            display_name: None,
            role: Role::Worker,
            api_key: key.clone(),
        })?;
        out.push((id, key));
    }
    Ok(out)
}

async fn pick_job(c: &ApiClient, admin: &str, wanted: Option<&JobId>) -> Result<Json, SimError> {
    let jobs = c.all_pages("/kitchen/jobs", admin).await?;
    match wanted {
        Some(id) => {
            let job = jobs
                .into_iter()
                .find(|j| j["id"] == id.as_str())
                .ok_or_else(|| SimError::JobNotPublished(id.to_string()))?;
            if job["status"] != "published" {
                return Err(SimError::JobNotPublished(id.to_string()));
            }
            Ok(job)
        }
        None => jobs
            .into_iter()
            .filter(|j| j["status"] == "published")
            .min_by(|a, b| a["id"].as_str().cmp(&b["id"].as_str()))
            .ok_or(SimError::NoPublishedJobs),
    }
}

fn cents(v: &Json) -> i64 {
    v["cents"].as_i64().unwrap_or(0)
}

/// Runs a campaign against `platform`, whose clock must be `clock`.
pub async fn simulate(platform: Arc<Platform>, clock: Arc<ManualClock>, cfg: &SimConfig) -> Result<CampaignReport, SimError> {
    let accounts = ensure_accounts(&platform, cfg)?;
    let ttl_secs = platform.config().reservation.ttl_secs() as f64;
    let client = ApiClient::new(router(app_state(platform.clone(), &ServerConfig::default())));
    let admin = client.login(SIM_ADMIN, &format!("sim-admin-key-{}", cfg.seed)).await?;

    let job = pick_job(&client, &admin, cfg.job.as_ref()).await?;
    let job_id = job["id"].as_str().unwrap_or_default().to_owned();
    let results = client
        .expect(Method::GET, &format!("/kitchen/jobs/{job_id}/results"), Some(&admin), None)
        .await?;
    let fields: Vec<AnswerField> =
        serde_json::from_value(results["job"]["fields"].clone()).map_err(|e| SimError::Unexpected(e.to_string()))?;
    let category: Category =
        serde_json::from_value(results["job"]["category"].clone()).map_err(|e| SimError::Unexpected(e.to_string()))?;
    let gold = results["units"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|u| {
            let answer = u.get("gold_answer")?.as_object()?;
            Some((
                u["unit_id"].as_str()?.to_owned(),
                answer.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            ))
        })
        .collect();

    let shared = Arc::new(Shared {
        client: client.clone(),
        job_id: job_id.clone(),
        fields,
        gold,
        mean_secs: cfg
            .profile
            .mean_duration_secs
            .unwrap_or(category.nominal_duration_secs() as f64),
        profile: cfg.profile.clone(),
        ttl_secs,
    });

    let started_at = clock.now();
    let mut workers: Vec<Option<SimWorker>> = Vec::with_capacity(accounts.len());
    let mut queue: BinaryHeap<Reverse<(i64, u64, usize)>> = BinaryHeap::new();
    let mut seq = 0u64;
    for (i, (id, key)) in accounts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let start = rng.random_range(0..60_000i64);
        workers.push(Some(SimWorker {
            id: id.clone(),
            token: client.login(id, key).await?,
            rng,
            current: None,
            submitted: 0,
            abandoned: 0,
            banned: false,
        }));
        queue.push(Reverse((start, seq, i)));
        seq += 1;
    }

    let mut events = 0usize;
    let mut working: HashSet<usize> = HashSet::new();
    let mut lapsing: Vec<i64> = Vec::new();
    let mut now_ms = 0i64;
    let parallelism = cfg.parallelism.max(1);
    while !queue.is_empty() {
        let mut batch = Vec::with_capacity(parallelism);
        while batch.len() < parallelism {
            match queue.pop() {
                Some(Reverse(ev)) => batch.push(ev),
                None => break,
            }
        }
        events += batch.len();
        if events > cfg.max_events {
            return Err(SimError::Stalled(cfg.max_events));
        }
        now_ms = now_ms.max(batch.iter().map(|e| e.0).max().unwrap_or(now_ms));
        clock.advance_to(started_at + Duration::milliseconds(now_ms));

        if lapsing.iter().any(|&t| t < now_ms) {
            client.expect(Method::POST, "/admin/expire", Some(&admin), None).await?;
            lapsing.retain(|&t| t >= now_ms);
        }

        let mut set = JoinSet::new();
        for &(_, _, i) in &batch {
            let w = workers[i].take().expect("worker has one pending event");
            let shared = shared.clone();
            set.spawn(async move { (i, step(shared, w, now_ms).await) });
        }
        let mut done = Vec::with_capacity(batch.len());
        while let Some(joined) = set.join_next().await {
            done.push(joined.map_err(|e| SimError::Unexpected(e.to_string()))?);
        }
        done.sort_by_key(|(i, _)| *i);

        let mut idle = Vec::new();
        for (i, (w, outcome)) in done {
            workers[i] = Some(w);
            match outcome? {
                Outcome::Working { secs } => {
                    working.insert(i);
                    queue.push(Reverse((now_ms + millis(secs), seq, i)));
                }
                Outcome::Abandoned { secs, expires_ms } => {
                    lapsing.push(expires_ms);
                    // one live reservation per job, so come back once it lapsed
                    queue.push(Reverse(((now_ms + millis(secs)).max(expires_ms + 1), seq, i)));
                }
                Outcome::Submitted { banned } => {
                    working.remove(&i);
                    if !banned {
                        queue.push(Reverse((now_ms + millis(cfg.profile.think_secs), seq, i)));
                    }
                }
                Outcome::Unavailable => {
                    working.remove(&i);
                    idle.push(i);
                }
                Outcome::Finished => {
                    working.remove(&i);
                }
            }
            seq += 1;
        }
        // A worker that found nothing waits only while someone else could
        // still free or finish units.
        for i in idle {
            if !working.is_empty() || !lapsing.is_empty() {
                let mut at = now_ms + millis(cfg.retry_secs);
                if working.is_empty() {
                    if let Some(&first) = lapsing.iter().min() {
                        at = at.max(first + 1);
                    }
                }
                queue.push(Reverse((at, seq, i)));
                seq += 1;
            }
        }
    }

    let finished_at = clock.now();
    let workers: Vec<SimWorker> = workers.into_iter().flatten().collect();
    build_report(&client, &admin, &job_id, cfg, &workers, started_at, finished_at, events).await
}

#[allow(clippy::too_many_arguments)]
async fn build_report(
    c: &ApiClient,
    admin: &str,
    job_id: &str,
    cfg: &SimConfig,
    workers: &[SimWorker],
    started_at: Timestamp,
    finished_at: Timestamp,
    events: usize,
) -> Result<CampaignReport, SimError> {
    let results = c
        .expect(Method::GET, &format!("/kitchen/jobs/{job_id}/results"), Some(admin), None)
        .await?;
    let units = results["units"].as_array().cloned().unwrap_or_default();

    let mut pairs = HashSet::new();
    let mut duplicates = 0usize;
    let mut per_worker: HashMap<String, (usize, usize)> = HashMap::new();
    let (mut judgments, mut gold_judgments) = (0usize, 0usize);
    let mut min_per_unit: Option<usize> = None;
    let (mut finalized, mut no_agreement, mut pending, mut gold_units) = (0, 0, 0, 0);
    for u in &units {
        let is_gold = u["gold"].as_bool().unwrap_or(false);
        let js = u["judgments"].as_array().cloned().unwrap_or_default();
        for j in &js {
            let worker = j["worker_id"].as_str().unwrap_or_default().to_owned();
            if !pairs.insert((worker.clone(), u["unit_id"].as_str().unwrap_or_default().to_owned())) {
                duplicates += 1;
            }
            let e = per_worker.entry(worker).or_default();
            e.0 += 1;
            if is_gold {
                e.1 += 1;
            }
        }
        judgments += js.len();
        if is_gold {
            gold_units += 1;
            gold_judgments += js.len();
        } else {
            min_per_unit = Some(min_per_unit.map_or(js.len(), |m| m.min(js.len())));
        }
        match u["status"].as_str() {
            Some("finalized") => finalized += 1,
            Some("no_agreement") => no_agreement += 1,
            _ => pending += 1,
        }
    }

    let mut reports = Vec::with_capacity(workers.len());
    for w in workers {
        let me = c.expect(Method::GET, "/me", Some(&w.token), None).await?;
        let log = c.all_pages("/cafe/transactions", &w.token).await?;
        let (j, g) = per_worker.get(&w.id).copied().unwrap_or_default();
        reports.push(WorkerReport {
            worker_id: w.id.clone(),
            instances_submitted: w.submitted,
            instances_abandoned: w.abandoned,
            judgments: j,
            gold_judgments: g,
            banned: w.banned
                || me["banned_jobs"]
                    .as_array()
                    .is_some_and(|b| b.iter().any(|x| x == job_id)),
            balance_cents: cents(&me["balance"]),
            ledger_sum_cents: log.iter().map(|t| cents(&t["amount"])).sum(),
        });
    }

    let mut report = CampaignReport {
        job_id: job_id.to_owned(),
        seed: cfg.seed,
        workers: workers.len(),
        accuracy: cfg.profile.accuracy,
        parallelism: cfg.parallelism.max(1),
        started_at,
        finished_at,
        events,
        instances_submitted: workers.iter().map(|w| w.submitted).sum(),
        instances_abandoned: workers.iter().map(|w| w.abandoned).sum(),
        judgments,
        gold_judgments,
        non_gold_judgments: judgments - gold_judgments,
        units: units.len(),
        gold_units,
        units_finalized: finalized,
        units_no_agreement: no_agreement,
        units_pending: pending,
        min_judgments_per_unit: min_per_unit.unwrap_or(0),
        duplicate_judgments: duplicates,
        bans: reports.iter().filter(|r| r.banned).count(),
        total_payout_cents: reports.iter().map(|r| r.ledger_sum_cents).sum(),
        ledger_conserved: reports.iter().all(|r| r.balance_cents == r.ledger_sum_cents),
        worker_reports: reports,
        report_hash: String::new(),
    };
    report.report_hash = report.compute_hash();
    Ok(report)
}
