//! Requestor operations: job creation, input data, gold answers, publishing,
//! results and reports.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::analytics::{
    compliance_rate, context_distribution, execution_stats, fleiss_kappa, ratings_for_field,
    ContextDistribution, ExecutionStats, KappaResult,
};
use crate::error::{Error, Result};
use crate::ingestion::{batch_units, fetch_feed, parse_csv, write_csv, FeedQuery};
use crate::model::{
    duration_secs, validate_job, Context, GoldOutcome, InputKind, InstanceState, Job, JobDraft, JobId,
    JobStatus, Judgment, Payload, Role, TaskInstance, Timestamp, Unit, UnitId, UnitStatus, User, UserId,
    ValueKind, Values,
};
use crate::platform::{keys, Platform};
use crate::routing::validate_answers;
use crate::storage::Txn;

/// Minimum list length counted as compliant in stats reports.
pub const DEFAULT_COMPLIANCE_MIN_ITEMS: usize = 3;

/// Where a job's units come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        #[serde(with = "bytes_as_text")]
        bytes: Vec<u8>,
    },
    Feed(FeedQuery),
    /// A single unit with an empty payload.
    Survey,
}

mod bytes_as_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&String::from_utf8_lossy(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(String::deserialize(d)?.into_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSummary {
    pub units: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub unit_id: UnitId,
    pub values: Values,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRow {
    pub judgment_id: String,
    pub worker_id: UserId,
    pub instance_id: String,
    pub values: Values,
    pub context: Context,
    pub submitted_at: Timestamp,
    pub duration_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_outcome: Option<GoldOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitResultStatus {
    Pending,
    Finalized,
    NoAgreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitResult {
    pub unit_id: UnitId,
    pub index: u32,
    pub gold: bool,
    /// The requestor's own gold answer, for gold units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<Values>,
    pub payload: Payload,
    pub status: UnitResultStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreed: Option<Values>,
    pub judgments: Vec<JudgmentRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResults {
    pub job: Job,
    pub units: Vec<UnitResult>,
}

impl JobResults {
    /// One row per unit: id, position, gold flag, status, judgment count,
    /// payload columns, then the agreed value of each answer field.
    pub fn to_csv(&self) -> Vec<u8> {
        let payload_cols: BTreeSet<&String> = self.units.iter().flat_map(|u| u.payload.keys()).collect();
        let mut columns: Vec<String> = ["unit_id", "index", "gold", "status", "judgments"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        columns.extend(payload_cols.iter().map(|c| c.to_string()));
        columns.extend(self.job.spec.fields.iter().map(|f| format!("agreed_{}", f.name)));

        let rows: Vec<Payload> = self
            .units
            .iter()
            .map(|u| {
                let mut row = Payload::new();
                row.insert("unit_id".into(), u.unit_id.to_string());
                row.insert("index".into(), u.index.to_string());
                row.insert("gold".into(), u.gold.to_string());
                let status = match u.status {
                    UnitResultStatus::Pending => "pending",
                    UnitResultStatus::Finalized => "finalized",
                    UnitResultStatus::NoAgreement => "no_agreement",
                };
                row.insert("status".into(), status.into());
                row.insert("judgments".into(), u.judgments.len().to_string());
                for (k, v) in &u.payload {
                    row.insert(k.clone(), v.clone());
                }
                if let Some(agreed) = &u.agreed {
                    for (k, v) in agreed {
                        row.insert(format!("agreed_{k}"), v.canonical());
                    }
                }
                row
            })
            .collect();
        write_csv(&columns, &rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldKappa {
    pub field: String,
    pub categories: Vec<String>,
    pub subjects: usize,
    pub skipped_units: usize,
    /// Absent when no unit had enough judgments.
    pub kappa: Option<KappaResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub job_id: JobId,
    pub raters: u32,
    pub fields: Vec<FieldKappa>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub job_id: JobId,
    /// Seconds from reservation to submission, one per submitted instance.
    pub instance_durations: ExecutionStats,
    pub judgments: usize,
    pub contexts: ContextDistribution,
    /// Share of judgments whose list field has enough items, per list field.
    pub compliance: BTreeMap<String, f64>,
    pub compliance_min_items: usize,
}

fn load_user(t: &mut Txn<'_>, id: &UserId) -> Result<User> {
    t.get(keys::USERS, id.as_str())?
        .ok_or_else(|| Error::NotFound(format!("user {id}")))
}

fn require_requestor(t: &mut Txn<'_>, principal: &UserId) -> Result<User> {
    let user = load_user(t, principal)?;
    match user.role {
        Role::Requestor | Role::Admin => Ok(user),
        Role::Worker => Err(Error::Forbidden),
    }
}

/// Loads a job the principal may manage: its owner or any admin.
fn load_owned(t: &mut Txn<'_>, principal: &UserId, job: &JobId) -> Result<Job> {
    let user = require_requestor(t, principal)?;
    let job: Job = t
        .get(keys::JOBS, job.as_str())?
        .ok_or_else(|| Error::NotFound(format!("job {job}")))?;
    if user.role != Role::Admin && job.owner != user.id {
        return Err(Error::Forbidden);
    }
    Ok(job)
}

const JOB_COUNTER: &str = "job_counter";

impl Platform {
    /// Validates the draft and stores it as a new `Draft` job.
    pub fn create_job(&self, owner: &UserId, draft: &JobDraft) -> Result<Job> {
        let now = self.clock.now();
        self.store.transact(|t| {
            require_requestor(t, owner)?;
            let mut known = BTreeSet::new();
            for rule in &draft.preselection {
                if t.exists(keys::JOBS, rule.job_id.as_str())? {
                    known.insert(rule.job_id.clone());
                }
            }
            let spec = validate_job(draft, |id| known.contains(id))?.into_spec();
            let n: u64 = t.get(keys::META, JOB_COUNTER)?.unwrap_or(0) + 1;
            t.put(keys::META, JOB_COUNTER, &n)?;
            let job = Job {
                id: JobId(format!("job-{n:04}")),
                owner: owner.clone(),
                spec,
                status: JobStatus::Draft,
                input: None,
                created_at: now,
            };
            t.put(keys::JOBS, job.id.as_str(), &job)?;
            Ok(job)
        })
    }

    /// Jobs the principal may manage.
    pub fn jobs_for(&self, principal: &UserId) -> Result<Vec<Job>> {
        self.store.transact(|t| {
            let user = require_requestor(t, principal)?;
            Ok(t.scan::<Job>(keys::JOBS, "")?
                .into_iter()
                .map(|(_, j)| j)
                .filter(|j| user.role == Role::Admin || j.owner == user.id)
                .collect())
        })
    }

    pub fn owned_job(&self, principal: &UserId, job: &JobId) -> Result<Job> {
        self.store.transact(|t| load_owned(t, principal, job))
    }

    /// Creates the job's units from `source`. Parsing and feed fetching
    /// happen before the transaction.
    pub fn attach_data(&self, principal: &UserId, job_id: &JobId, source: &DataSource) -> Result<DataSummary> {
        self.store.transact(|t| {
            let job = load_owned(t, principal, job_id)?;
            if job.status != JobStatus::Draft {
                return Err(Error::NotDraft(job_id.clone()));
            }
            if job.input.is_some() {
                return Err(Error::AlreadyHasData(job_id.clone()));
            }
            Ok(())
        })?;

        let (kind, payloads) = match source {
            DataSource::Csv { bytes } => (InputKind::Csv, parse_csv(bytes)?),
            DataSource::Feed(query) => (InputKind::Feed, fetch_feed(&self.feeds, query)?),
            DataSource::Survey => (InputKind::Survey, vec![Payload::new()]),
        };

        self.store.transact(|t| {
            let mut job = load_owned(t, principal, job_id)?;
            if job.status != JobStatus::Draft {
                return Err(Error::NotDraft(job_id.clone()));
            }
            if job.input.is_some() {
                return Err(Error::AlreadyHasData(job_id.clone()));
            }
            for (i, payload) in payloads.iter().enumerate() {
                let index = i as u32;
                let unit = Unit {
                    id: Unit::id_for(job_id, index),
                    job_id: job_id.clone(),
                    index,
                    payload: payload.clone(),
                    gold: None,
                    status: UnitStatus::Open,
                };
                t.put(keys::UNITS, unit.id.as_str(), &unit)?;
            }
            job.input = Some(kind);
            t.put(keys::JOBS, job_id.as_str(), &job)?;
            Ok(DataSummary {
                units: payloads.len(),
                instances: batch_units(payloads.len(), job.spec.batch_size as usize).instances,
            })
        })
    }

    /// Marks units as gold with their correct answers. All-or-nothing.
    pub fn set_gold(&self, principal: &UserId, job_id: &JobId, answers: &[GoldAnswer]) -> Result<usize> {
        self.store.transact(|t| {
            let job = load_owned(t, principal, job_id)?;
            if job.status != JobStatus::Draft {
                return Err(Error::NotDraft(job_id.clone()));
            }
            if job.input.is_none() {
                return Err(Error::NoData(job_id.clone()));
            }
            if job.is_survey() {
                return Err(Error::InvalidGold("survey jobs take no gold".into()));
            }
            let mut seen = BTreeSet::new();
            for answer in answers {
                if !seen.insert(&answer.unit_id) {
                    return Err(Error::InvalidGold(format!("unit {} listed twice", answer.unit_id)));
                }
                let mut unit: Unit = match t.get::<Unit>(keys::UNITS, answer.unit_id.as_str())? {
                    Some(u) if &u.job_id == job_id => u,
                    _ => return Err(Error::UnknownUnit(answer.unit_id.clone())),
                };
                validate_answers(&job, &unit.id, &answer.values)
                    .map_err(|e| Error::InvalidGold(e.to_string()))?;
                unit.gold = Some(answer.values.clone());
                t.put(keys::UNITS, unit.id.as_str(), &unit)?;
            }
            Ok(answers.len())
        })
    }

    pub fn publish(&self, principal: &UserId, job_id: &JobId) -> Result<Job> {
        self.store.transact(|t| {
            let mut job = load_owned(t, principal, job_id)?;
            match job.status {
                JobStatus::Draft => {}
                _ => return Err(Error::AlreadyPublished(job_id.clone())),
            }
            if job.input.is_none() {
                return Err(Error::NoData(job_id.clone()));
            }
            job.status = JobStatus::Published;
            t.put(keys::JOBS, job_id.as_str(), &job)?;
            Ok(job)
        })
    }

    /// Stops new reservations. Live reservations can still be submitted
    /// until they expire.
    pub fn close(&self, principal: &UserId, job_id: &JobId) -> Result<Job> {
        self.store.transact(|t| {
            let mut job = load_owned(t, principal, job_id)?;
            if job.status != JobStatus::Published {
                return Err(Error::JobNotOpen(job_id.clone()));
            }
            job.status = JobStatus::Closed;
            t.put(keys::JOBS, job_id.as_str(), &job)?;
            Ok(job)
        })
    }

    /// Every unit with its status, agreed value and raw judgments.
    pub fn results(&self, principal: &UserId, job_id: &JobId) -> Result<JobResults> {
        self.store.transact(|t| {
            let job = load_owned(t, principal, job_id)?;
            let (units, by_unit) = units_with_judgments(t, job_id)?;
            let mut out = Vec::with_capacity(units.len());
            for unit in units {
                let judgments = by_unit.get(&unit.id).cloned().unwrap_or_default();
                let mut rows = Vec::with_capacity(judgments.len());
                for j in judgments {
                    rows.push(JudgmentRow {
                        duration_secs: duration_secs(j.started_at, j.submitted_at)?,
                        judgment_id: j.id.0,
                        worker_id: j.worker_id,
                        instance_id: j.instance_id.0,
                        values: j.values,
                        context: j.context,
                        submitted_at: j.submitted_at,
                        gold_outcome: j.gold_outcome,
                    });
                }
                let (status, agreed) = match unit.status {
                    UnitStatus::Open => (UnitResultStatus::Pending, None),
                    UnitStatus::Finalized { values } => (UnitResultStatus::Finalized, Some(values)),
                    UnitStatus::NoAgreement => (UnitResultStatus::NoAgreement, None),
                };
                out.push(UnitResult {
                    gold: unit.gold.is_some(),
                    gold_answer: unit.gold,
                    unit_id: unit.id,
                    index: unit.index,
                    payload: unit.payload,
                    status,
                    agreed,
                    judgments: rows,
                });
            }
            Ok(JobResults { job, units: out })
        })
    }

    /// Fleiss' kappa per categorical answer field over non-gold units.
    /// `raters` defaults to the job's minimum judgments; units with more
    /// judgments contribute their earliest ones.
    pub fn kappa_report(&self, principal: &UserId, job_id: &JobId, raters: Option<u32>) -> Result<KappaReport> {
        self.store.transact(|t| {
            let job = load_owned(t, principal, job_id)?;
            let raters = raters.unwrap_or(job.spec.min_judgments);
            let (units, mut by_unit) = units_with_judgments(t, job_id)?;
            let subjects: Vec<(UnitId, Vec<Judgment>)> = units
                .into_iter()
                .filter(|u| !u.is_gold())
                .map(|u| {
                    let js = by_unit.remove(&u.id).unwrap_or_default();
                    (u.id, js)
                })
                .collect();
            let mut fields = Vec::new();
            for field in job.spec.fields.iter().filter(|f| f.kind == ValueKind::Text) {
                let ratings = ratings_for_field(&subjects, &field.name, raters)?;
                fields.push(FieldKappa {
                    field: field.name.clone(),
                    subjects: ratings.subjects.len(),
                    skipped_units: ratings.skipped_units,
                    kappa: ratings.matrix.as_ref().map(fleiss_kappa),
                    categories: ratings.categories,
                });
            }
            Ok(KappaReport {
                job_id: job.id,
                raters,
                fields,
            })
        })
    }

    /// Timing, context and compliance figures for a job.
    pub fn stats_report(&self, principal: &UserId, job_id: &JobId, min_items: Option<usize>) -> Result<StatsReport> {
        let min_items = min_items.unwrap_or(DEFAULT_COMPLIANCE_MIN_ITEMS);
        self.store.transact(|t| {
            let job = load_owned(t, principal, job_id)?;
            let mut durations = Vec::new();
            for (_, inst) in t.scan::<TaskInstance>(keys::INSTANCES, &keys::prefix(job_id))? {
                if let (InstanceState::Submitted, Some(done)) = (inst.state, inst.submitted_at) {
                    durations.push(duration_secs(inst.reserved_at, done)?);
                }
            }
            let judgments: Vec<Judgment> = t
                .scan::<Judgment>(keys::JUDGMENTS, &keys::prefix(job_id))?
                .into_iter()
                .map(|(_, j)| j)
                .collect();
            let mut compliance = BTreeMap::new();
            for field in job.spec.fields.iter().filter(|f| f.kind == ValueKind::List) {
                compliance.insert(field.name.clone(), compliance_rate(&judgments, &field.name, min_items)?);
            }
            Ok(StatsReport {
                job_id: job.id,
                instance_durations: execution_stats(&durations)?,
                judgments: judgments.len(),
                contexts: context_distribution(judgments.iter().map(|j| j.context)),
                compliance,
                compliance_min_items: min_items,
            })
        })
    }
}

type UnitJudgments = BTreeMap<UnitId, Vec<Judgment>>;

fn units_with_judgments(t: &mut Txn<'_>, job_id: &JobId) -> Result<(Vec<Unit>, UnitJudgments)> {
    let units: Vec<Unit> = t
        .scan::<Unit>(keys::UNITS, &keys::prefix(job_id))?
        .into_iter()
        .map(|(_, u)| u)
        .collect();
    let mut by_unit: UnitJudgments = BTreeMap::new();
    for (_, j) in t.scan::<Judgment>(keys::JUDGMENTS, &keys::prefix(job_id))? {
        by_unit.entry(j.unit_id.clone()).or_default().push(j);
    }
    for js in by_unit.values_mut() {
        js.sort_by(|a, b| a.submitted_at.cmp(&b.submitted_at).then_with(|| a.id.cmp(&b.id)));
    }
    Ok((units, by_unit))
}
