//! Job visibility, task-instance reservation with gold injection, and
//! submission processing.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::Duration;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger;
use crate::model::{
    Category, Context, InstanceId, InstanceState, Job, JobId, JobStatus, Judgment, Money,
    Payload, Role, RuleKind, TaskInstance, Timestamp, Unit, UnitId, UnitStatus, User, Value,
    Values, WorkerId, AnswerField,
};
use crate::platform::{idempotent, keys, Platform};
use crate::quality::{
    aggregate_unit, apply_mistake_limit, evaluate_gold, gold_injection_probability,
    AggregationResult, WorkerQualityState,
};
use crate::storage::Txn;

pub const DEFAULT_RESERVATION_TTL_SECS: u32 = 600;

/// Reservation lifetime. A worker holds at most one live reservation per job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReservationPolicy {
    ttl_secs: u32,
}

impl ReservationPolicy {
    pub fn new(ttl_secs: u32) -> Result<Self> {
        if ttl_secs == 0 {
            return Err(Error::Config("reservation ttl must be positive".into()));
        }
        Ok(Self { ttl_secs })
    }

    pub fn ttl(&self) -> Duration {
        Duration::seconds(self.ttl_secs as i64)
    }

    pub fn ttl_secs(&self) -> u32 {
        self.ttl_secs
    }
}

impl Default for ReservationPolicy {
    fn default() -> Self {
        Self {
            ttl_secs: DEFAULT_RESERVATION_TTL_SECS,
        }
    }
}

/// Whether `job` is visible to `worker` given the set of jobs the worker has
/// judged in. Rules combine by conjunction.
pub fn eligible(worker: &User, job: &Job, history: &BTreeSet<JobId>) -> bool {
    !worker.banned_jobs.contains(&job.id)
        && job.spec.preselection.iter().all(|rule| {
            let worked = history.contains(&rule.job_id);
            match rule.kind {
                RuleKind::WorkedOn => worked,
                RuleKind::DidNotWorkOn => !worked,
            }
        })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstancePlan {
    pub unit_ids: Vec<UnitId>,
    pub gold_unit: Option<UnitId>,
}

/// Picks the first `batch_size` of the already-ordered `candidates`; then,
/// with probability `p` and if the gold pool is non-empty, swaps one
/// uniformly chosen slot for a uniformly chosen gold unit.
pub fn compose_instance<R: Rng + ?Sized>(
    candidates: &[UnitId],
    gold_pool: &[UnitId],
    p: f64,
    batch_size: usize,
    rng: &mut R,
) -> InstancePlan {
    let mut unit_ids: Vec<UnitId> = candidates.iter().take(batch_size).cloned().collect();
    if unit_ids.is_empty() || gold_pool.is_empty() {
        return InstancePlan {
            unit_ids,
            gold_unit: None,
        };
    }
    let inject = rng.random_bool(p.clamp(0.0, 1.0));
    let gold_unit = inject.then(|| {
        let slot = rng.random_range(0..unit_ids.len());
        let gold = gold_pool[rng.random_range(0..gold_pool.len())].clone();
        unit_ids[slot] = gold.clone();
        gold
    });
    InstancePlan {
        unit_ids,
        gold_unit,
    }
}

/// Worker-facing job description. Leaves out quality settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSummary {
    pub id: JobId,
    pub title: String,
    pub instructions: String,
    pub category: Category,
    pub reward: Money,
    pub batch_size: u32,
    pub fields: Vec<AnswerField>,
}

impl From<&Job> for JobSummary {
    fn from(job: &Job) -> Self {
        Self {
            id: job.id.clone(),
            title: job.spec.title.clone(),
            instructions: job.spec.instructions.clone(),
            category: job.spec.category,
            reward: job.spec.reward,
            batch_size: job.spec.batch_size,
            fields: job.spec.fields.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailableJob {
    pub job: JobSummary,
    /// Instances the worker could still claim.
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub category: Category,
    pub nominal_duration_secs: u32,
    pub available_jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimedUnit {
    pub unit_id: UnitId,
    pub payload: Payload,
}

/// A reserved instance as shown to its worker. Gold units are not marked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimedInstance {
    pub instance_id: InstanceId,
    pub job: JobSummary,
    pub units: Vec<ClaimedUnit>,
    pub reserved_at: Timestamp,
    pub expires_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitAck {
    pub unit_id: UnitId,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub instance_id: InstanceId,
    pub units: Vec<UnitAck>,
    pub credited: Money,
    pub balance: Money,
    /// Set when this submission pushed the worker over the job's mistake limit.
    pub banned: bool,
}

/// Units of `job` the worker has judged, kept alongside the quality counters
/// so claims can check it with a single read.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct JudgedUnits {
    units: BTreeSet<UnitId>,
}

const JUDGED: &str = "judged_units";

/// The parts of a stored judgment that load balancing reads.
#[derive(Deserialize)]
struct JudgmentRef {
    unit_id: UnitId,
}

/// The parts of a stored instance that load balancing reads.
#[derive(Deserialize)]
struct ReservationRef {
    worker_id: WorkerId,
    unit_ids: Vec<UnitId>,
    expires_at: Timestamp,
    state: InstanceState,
}

pub(crate) fn history(t: &mut Txn<'_>, worker: &WorkerId) -> Result<BTreeSet<JobId>> {
    Ok(t.scan::<JobId>(keys::PARTICIPATION, &keys::prefix(worker))?
        .into_iter()
        .map(|(_, job)| job)
        .collect())
}

pub(crate) fn quality_state(t: &mut Txn<'_>, job: &JobId, worker: &WorkerId) -> Result<WorkerQualityState> {
    Ok(t.get(keys::QUALITY, &keys::pair(job, worker))?
        .unwrap_or_else(|| WorkerQualityState::new(worker.clone(), job.clone())))
}

fn load_worker(t: &mut Txn<'_>, worker: &WorkerId) -> Result<User> {
    let user: User = t
        .get(keys::USERS, worker.as_str())?
        .ok_or_else(|| Error::NotFound(format!("worker {worker}")))?;
    if user.role != Role::Worker {
        return Err(Error::Forbidden);
    }
    Ok(user)
}

fn load_job(t: &mut Txn<'_>, job: &JobId) -> Result<Job> {
    t.get(keys::JOBS, job.as_str())?
        .ok_or_else(|| Error::NotFound(format!("job {job}")))
}

/// Checks one unit's answers against the job's form fields.
pub fn validate_answers(job: &Job, unit: &UnitId, values: &Values) -> Result<()> {
    let invalid = |field: &str, reason: String| Error::InvalidAnswer {
        unit: unit.clone(),
        field: field.to_owned(),
        reason,
    };
    for name in values.keys() {
        if job.field(name).is_none() {
            return Err(invalid(name, "not a field of this job".into()));
        }
    }
    for field in &job.spec.fields {
        let value = values.get(&field.name);
        let blank = match value {
            None => true,
            Some(Value::Text(s)) => s.trim().is_empty(),
            Some(Value::List(items)) => items.is_empty(),
            Some(Value::Number(_)) => false,
        };
        if blank {
            if field.required {
                return Err(Error::MissingAnswerField {
                    unit: unit.clone(),
                    field: field.name.clone(),
                });
            }
            continue;
        }
        let value = value.expect("not blank");
        if value.kind() != field.kind {
            return Err(invalid(&field.name, format!("expected a {} value", field.kind)));
        }
        match value {
            Value::Number(n) if !n.is_finite() => {
                return Err(invalid(&field.name, "number must be finite".into()))
            }
            Value::Text(s) if !field.options.is_empty() && !field.options.contains(s) => {
                return Err(invalid(&field.name, format!("{s:?} is not an allowed option")))
            }
            Value::List(items) if !field.options.is_empty() => {
                if let Some(bad) = items.iter().find(|i| !field.options.contains(i)) {
                    return Err(invalid(&field.name, format!("{bad:?} is not an allowed option")));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

impl Platform {
    /// Categories with the number of jobs the worker can currently work on.
    pub fn categories(&self, worker: &WorkerId) -> Result<Vec<CategoryCount>> {
        let available = self.list_available(worker, None)?;
        Ok(Category::ALL
            .into_iter()
            .map(|category| CategoryCount {
                category,
                nominal_duration_secs: category.nominal_duration_secs(),
                available_jobs: available.iter().filter(|a| a.job.category == category).count(),
            })
            .collect())
    }

    /// Published jobs (optionally of one category) the worker is eligible for
    /// and could still claim from, with the number of claimable instances.
    pub fn list_available(&self, worker: &WorkerId, category: Option<Category>) -> Result<Vec<AvailableJob>> {
        self.store.transact(|t| {
            let user = load_worker(t, worker)?;
            let history = history(t, worker)?;
            let mut out = Vec::new();
            for (_, job) in t.scan::<Job>(keys::JOBS, "")? {
                if job.status != JobStatus::Published
                    || category.is_some_and(|c| c != job.spec.category)
                    || !eligible(&user, &job, &history)
                {
                    continue;
                }
                let judged: JudgedUnits = t.get(JUDGED, &keys::pair(&job.id, worker))?.unwrap_or_default();
                let open = t
                    .peek::<Unit>(keys::UNITS, &keys::prefix(&job.id))?
                    .into_iter()
                    .filter(|(_, u)| u.status.is_open() && !u.is_gold() && !judged.units.contains(&u.id))
                    .count();
                let remaining = open.div_ceil(job.spec.batch_size as usize);
                if remaining > 0 {
                    out.push(AvailableJob {
                        job: JobSummary::from(&job),
                        remaining,
                    });
                }
            }
            Ok(out)
        })
    }

    /// Reserves the next instance of `job` for `worker`.
    ///
    /// Units the worker has not judged are ordered by current load (judgments
    /// plus other workers' live reservations), then by dataset position. The
    /// gold-injection draw uses a generator seeded from the platform seed and
    /// the new instance id, so identical state and seed give an identical
    /// instance.
    pub fn claim_next(&self, worker: &WorkerId, job: &JobId, idempotency_key: Option<&str>) -> Result<TaskInstance> {
        let now = self.clock.now();
        let scope = format!("claim:{job}");
        self.store.transact(|t| {
            idempotent(t, worker, &scope, idempotency_key, |t| self.claim_in(t, worker, job, now))
        })
    }

    fn claim_in(&self, t: &mut Txn<'_>, worker: &WorkerId, job_id: &JobId, now: Timestamp) -> Result<TaskInstance> {
        let job = load_job(t, job_id)?;
        if job.status != JobStatus::Published {
            return Err(Error::JobNotOpen(job_id.clone()));
        }
        let user = load_worker(t, worker)?;
        let history = history(t, worker)?;
        if !eligible(&user, &job, &history) {
            return Err(Error::NotEligible);
        }

        let mine = t.scan::<TaskInstance>(keys::INSTANCES, &keys::prefix(keys::pair(job_id, worker)))?;
        for (key, inst) in &mine {
            if inst.state == InstanceState::Reserved {
                if inst.is_live(now) {
                    return Err(Error::AlreadyReserved);
                }
                let mut expired = inst.clone();
                expired.state = InstanceState::Expired;
                t.put(keys::INSTANCES, key, &expired)?;
            }
        }
        let instance_id = InstanceId(format!("{job_id}:{worker}:{:04}", mine.len() + 1));

        let judged: JudgedUnits = t.get(JUDGED, &keys::pair(job_id, worker))?.unwrap_or_default();
        let units = t.scan::<Unit>(keys::UNITS, &keys::prefix(job_id))?;

        let mut load: HashMap<UnitId, usize> = HashMap::new();
        for (_, j) in t.peek::<JudgmentRef>(keys::JUDGMENTS, &keys::prefix(job_id))? {
            *load.entry(j.unit_id).or_default() += 1;
        }
        for (_, inst) in t.peek::<ReservationRef>(keys::INSTANCES, &keys::prefix(job_id))? {
            if &inst.worker_id != worker && inst.state == InstanceState::Reserved && now <= inst.expires_at {
                for u in inst.unit_ids {
                    *load.entry(u).or_default() += 1;
                }
            }
        }

        let mut regular: Vec<(usize, u32, UnitId)> = Vec::new();
        let mut gold_pool: Vec<UnitId> = Vec::new();
        for (_, unit) in units {
            if judged.units.contains(&unit.id) {
                continue;
            }
            if unit.is_gold() {
                gold_pool.push(unit.id);
            } else if unit.status.is_open() {
                regular.push((load.get(&unit.id).copied().unwrap_or(0), unit.index, unit.id));
            }
        }
        regular.sort();
        let candidates: Vec<UnitId> = regular.into_iter().map(|(_, _, id)| id).collect();

        let quality = quality_state(t, job_id, worker)?;
        let p = gold_injection_probability(&quality);
        let mut rng = self.rng_for(instance_id.as_str());
        let plan = compose_instance(&candidates, &gold_pool, p, job.spec.batch_size as usize, &mut rng);
        if plan.unit_ids.is_empty() {
            return Err(Error::NothingAvailable);
        }

        let instance = TaskInstance {
            id: instance_id.clone(),
            job_id: job_id.clone(),
            worker_id: worker.clone(),
            unit_ids: plan.unit_ids,
            gold_unit: plan.gold_unit,
            reserved_at: now,
            expires_at: now + self.config.reservation.ttl(),
            state: InstanceState::Reserved,
            submitted_at: None,
        };
        t.put(keys::INSTANCES, instance_id.as_str(), &instance)?;
        tracing::debug!(instance = %instance_id, gold = instance.gold_unit.is_some(), "claimed");
        Ok(instance)
    }

    /// The worker's view of an instance they hold.
    pub fn claimed_view(&self, worker: &WorkerId, instance: &InstanceId) -> Result<ClaimedInstance> {
        self.store.transact(|t| {
            let inst: TaskInstance = t
                .get(keys::INSTANCES, instance.as_str())?
                .ok_or(Error::UnknownInstance)?;
            if &inst.worker_id != worker {
                return Err(Error::NotReserver);
            }
            let job = load_job(t, &inst.job_id)?;
            let mut units = Vec::with_capacity(inst.unit_ids.len());
            for id in &inst.unit_ids {
                let unit: Unit = t
                    .get(keys::UNITS, id.as_str())?
                    .ok_or_else(|| Error::NotFound(format!("unit {id}")))?;
                units.push(ClaimedUnit {
                    unit_id: unit.id,
                    payload: unit.payload,
                });
            }
            Ok(ClaimedInstance {
                instance_id: inst.id,
                job: JobSummary::from(&job),
                units,
                reserved_at: inst.reserved_at,
                expires_at: inst.expires_at,
            })
        })
    }

    /// Records the worker's answers for a reserved instance in one
    /// transaction: judgments, gold grading, mistake limit, unit aggregation,
    /// ledger credit. Nothing is recorded if any required answer is missing.
    pub fn submit_instance(
        &self,
        worker: &WorkerId,
        instance: &InstanceId,
        answers: &BTreeMap<UnitId, Values>,
        context: Context,
        idempotency_key: Option<&str>,
    ) -> Result<SubmitAck> {
        let now = self.clock.now();
        let scope = format!("submit:{instance}");
        self.store.transact(|t| {
            idempotent(t, worker, &scope, idempotency_key, |t| {
                self.submit_in(t, worker, instance, answers, context, now)
            })
        })
    }

    fn submit_in(
        &self,
        t: &mut Txn<'_>,
        worker: &WorkerId,
        instance_id: &InstanceId,
        answers: &BTreeMap<UnitId, Values>,
        context: Context,
        now: Timestamp,
    ) -> Result<SubmitAck> {
        let mut inst: TaskInstance = t
            .get(keys::INSTANCES, instance_id.as_str())?
            .ok_or(Error::UnknownInstance)?;
        if &inst.worker_id != worker {
            return Err(Error::NotReserver);
        }
        match inst.state {
            InstanceState::Submitted => return Err(Error::AlreadySubmitted),
            InstanceState::Expired => return Err(Error::ReservationExpired),
            InstanceState::Reserved if now > inst.expires_at => return Err(Error::ReservationExpired),
            InstanceState::Reserved => {}
        }
        let job = load_job(t, &inst.job_id)?;

        if let Some(extra) = answers.keys().find(|u| !inst.unit_ids.contains(u)) {
            return Err(Error::UnexpectedUnit(extra.clone()));
        }
        let empty = Values::new();
        for unit in &inst.unit_ids {
            validate_answers(&job, unit, answers.get(unit).unwrap_or(&empty))?;
        }

        let mut user = load_worker(t, worker)?;
        let mut quality = quality_state(t, &job.id, worker)?;
        let before = quality.clone();
        let judged_key = keys::pair(&job.id, worker);
        let mut judged: JudgedUnits = t.get(JUDGED, &judged_key)?.unwrap_or_default();

        let mut regular_units = Vec::new();
        for unit_id in &inst.unit_ids {
            let unit: Unit = t
                .get(keys::UNITS, unit_id.as_str())?
                .ok_or_else(|| Error::NotFound(format!("unit {unit_id}")))?;
            let jkey = keys::pair(unit_id, worker);
            if judged.units.contains(unit_id) || t.exists(keys::JUDGMENTS, &jkey)? {
                return Err(Error::DuplicateJudgment(unit_id.clone()));
            }
            let mut judgment = Judgment {
                id: Judgment::id_for(unit_id, worker),
                job_id: job.id.clone(),
                unit_id: unit_id.clone(),
                worker_id: worker.clone(),
                instance_id: inst.id.clone(),
                values: answers.get(unit_id).cloned().unwrap_or_default(),
                context,
                started_at: inst.reserved_at,
                submitted_at: now,
                gold_outcome: None,
            };
            match &unit.gold {
                Some(gold) => {
                    evaluate_gold(&mut judgment, gold, &job.spec.similarity, &mut quality)?;
                }
                None => regular_units.push(unit),
            }
            t.put(keys::JUDGMENTS, &jkey, &judgment)?;
            judged.units.insert(unit_id.clone());
        }
        t.put(JUDGED, &judged_key, &judged)?;

        apply_mistake_limit(&mut quality, job.spec.mistake_limit);
        let banned_now = quality.banned && !before.banned;
        if quality != before {
            t.put(keys::QUALITY, &judged_key, &quality)?;
        }
        if banned_now {
            user.banned_jobs.insert(job.id.clone());
            t.put(keys::USERS, worker.as_str(), &user)?;
            tracing::info!(worker = %worker, job = %job.id, "worker banned for job");
        }

        let participation = keys::pair(worker, &job.id);
        if !t.exists(keys::PARTICIPATION, &participation)? {
            t.put(keys::PARTICIPATION, &participation, &job.id)?;
        }

        if !job.is_survey() {
            for mut unit in regular_units {
                if !unit.status.is_open() {
                    continue;
                }
                let mut counted = Vec::new();
                for (_, j) in t.scan::<Judgment>(keys::JUDGMENTS, &keys::prefix(&unit.id))? {
                    let banned = if &j.worker_id == worker {
                        quality.banned
                    } else {
                        quality_state(t, &job.id, &j.worker_id)?.banned
                    };
                    if !banned {
                        counted.push(j);
                    }
                }
                let status = match aggregate_unit(&counted, &job.spec.similarity, job.spec.min_judgments)? {
                    AggregationResult::Pending { .. } => continue,
                    AggregationResult::Agreed { values, .. } => UnitStatus::Finalized { values },
                    AggregationResult::NoAgreement { .. } => UnitStatus::NoAgreement,
                };
                unit.status = status;
                t.put(keys::UNITS, unit.id.as_str(), &unit)?;
            }
        }

        let credited = if quality.banned {
            Money::ZERO
        } else {
            ledger::credit_in(t, worker, &job, &inst.id, now)?.amount
        };

        inst.state = InstanceState::Submitted;
        inst.submitted_at = Some(now);
        t.put(keys::INSTANCES, inst.id.as_str(), &inst)?;

        Ok(SubmitAck {
            instance_id: inst.id.clone(),
            units: inst
                .unit_ids
                .iter()
                .map(|u| UnitAck {
                    unit_id: u.clone(),
                    accepted: true,
                })
                .collect(),
            credited,
            balance: ledger::balance_in(t, worker)?,
            banned: banned_now,
        })
    }

    /// Marks every reservation whose deadline passed before `now` as expired,
    /// returning its units to the pool. Idempotent.
    pub fn expire_reservations(&self, now: Timestamp) -> Result<usize> {
        self.store.transact(|t| {
            let mut n = 0;
            for (key, mut inst) in t.scan::<TaskInstance>(keys::INSTANCES, "")? {
                if inst.state == InstanceState::Reserved && inst.expires_at < now {
                    inst.state = InstanceState::Expired;
                    t.put(keys::INSTANCES, &key, &inst)?;
                    n += 1;
                }
            }
            Ok(n)
        })
    }

    pub fn instance(&self, id: &InstanceId) -> Result<TaskInstance> {
        self.store
            .get(keys::INSTANCES, id.as_str())?
            .ok_or(Error::UnknownInstance)
    }

    pub fn worker_history(&self, worker: &WorkerId) -> Result<BTreeSet<JobId>> {
        self.store.transact(|t| history(t, worker))
    }

    pub fn quality(&self, job: &JobId, worker: &WorkerId) -> Result<WorkerQualityState> {
        self.store.transact(|t| quality_state(t, job, worker))
    }

    /// Ids of units the worker has judged in `job`.
    pub fn judged_units(&self, job: &JobId, worker: &WorkerId) -> Result<HashSet<UnitId>> {
        let judged: JudgedUnits = self
            .store
            .get(JUDGED, &keys::pair(job, worker))?
            .unwrap_or_default();
        Ok(judged.units.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PreselectionRule, RuleKind, ValueKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<UnitId> {
        (0..n).map(|i| UnitId(format!("job-0001:u{i:06}"))).collect()
    }

    #[test]
    fn certain_injection_for_fresh_worker() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gold = vec![UnitId::from("job-0001:u000900")];
        for _ in 0..100 {
            let plan = compose_instance(&ids(10), &gold, 1.0, 3, &mut rng);
            assert_eq!(plan.unit_ids.len(), 3);
            assert_eq!(plan.unit_ids.iter().filter(|u| gold.contains(u)).count(), 1);
            assert_eq!(plan.gold_unit.as_ref(), Some(&gold[0]));
        }
    }

    #[test]
    fn no_gold_pool_means_full_regular_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = compose_instance(&ids(10), &[], 1.0, 3, &mut rng);
        assert_eq!(plan.unit_ids, ids(3));
        assert_eq!(plan.gold_unit, None);
        let plan = compose_instance(&[], &ids(2), 1.0, 3, &mut rng);
        assert!(plan.unit_ids.is_empty());
    }

    #[test]
    fn composition_is_seed_deterministic() {
        let gold = ids(5);
        let a = compose_instance(&ids(20), &gold, 0.5, 3, &mut ChaCha8Rng::seed_from_u64(9));
        let b = compose_instance(&ids(20), &gold, 0.5, 3, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    fn user(banned: &[&str]) -> User {
        User {
            id: "w".into(),
            display_name: "W".into(),
            role: Role::Worker,
            api_key_sha256: String::new(),
            banned_jobs: banned.iter().map(|j| JobId::from(*j)).collect(),
        }
    }

    fn job_with(rules: Vec<PreselectionRule>) -> Job {
        let draft = crate::model::JobDraft {
            title: Some("Survey".into()),
            instructions: Some("Tell us".into()),
            category: Some("Cappuccino".into()),
            batch_size: Some(1),
            reward: Some(Money::from_cents(33)),
            ui_template_ref: Some("<p>survey</p>".into()),
            fields: vec![AnswerField {
                name: "opinion".into(),
                kind: ValueKind::Text,
                required: true,
                options: vec![],
            }],
            preselection: rules,
            ..Default::default()
        };
        Job {
            id: "job-0003".into(),
            owner: "req".into(),
            spec: crate::model::validate_job(&draft, |_| true).unwrap().into_spec(),
            status: JobStatus::Published,
            input: Some(crate::model::InputKind::Survey),
            created_at: chrono::Utc::now(),
        }
    }

    #[test]
    fn preselection_examples() {
        let both = job_with(vec![
            PreselectionRule { kind: RuleKind::WorkedOn, job_id: "task1".into() },
            PreselectionRule { kind: RuleKind::WorkedOn, job_id: "task2".into() },
        ]);
        let hist: BTreeSet<JobId> = ["task1".into(), "task2".into()].into();
        assert!(eligible(&user(&[]), &both, &hist));
        let only_one: BTreeSet<JobId> = ["task1".into()].into();
        assert!(!eligible(&user(&[]), &both, &only_one));

        let open = job_with(vec![]);
        assert!(eligible(&user(&[]), &open, &BTreeSet::new()));
        assert!(!eligible(&user(&["job-0003"]), &open, &BTreeSet::new()));

        let fresh_only = job_with(vec![PreselectionRule {
            kind: RuleKind::DidNotWorkOn,
            job_id: "skilltest".into(),
        }]);
        let did: BTreeSet<JobId> = ["skilltest".into()].into();
        assert!(!eligible(&user(&[]), &fresh_only, &did));
        assert!(eligible(&user(&[]), &fresh_only, &BTreeSet::new()));
    }

    #[test]
    fn answer_validation() {
        let job = job_with(vec![]);
        let unit = UnitId::from("job-0003:u000000");
        let ok: Values = [("opinion".to_owned(), Value::from("great"))].into();
        assert!(validate_answers(&job, &unit, &ok).is_ok());
        assert!(matches!(
            validate_answers(&job, &unit, &Values::new()),
            Err(Error::MissingAnswerField { .. })
        ));
        let blank: Values = [("opinion".to_owned(), Value::from("  "))].into();
        assert!(matches!(
            validate_answers(&job, &unit, &blank),
            Err(Error::MissingAnswerField { .. })
        ));
        let wrong_kind: Values = [("opinion".to_owned(), Value::Number(3.0))].into();
        assert!(matches!(
            validate_answers(&job, &unit, &wrong_kind),
            Err(Error::InvalidAnswer { .. })
        ));
        let extra: Values = [
            ("opinion".to_owned(), Value::from("ok")),
            ("is_gold".to_owned(), Value::from("?")),
        ]
        .into();
        assert!(matches!(
            validate_answers(&job, &unit, &extra),
            Err(Error::InvalidAnswer { .. })
        ));
    }
}
