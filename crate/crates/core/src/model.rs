//! Shared domain vocabulary: jobs, units, task instances, judgments, users and money.
//!
//! Every type here has a canonical JSON form (snake_case fields, RFC 3339 UTC
//! timestamps, money as `{"cents": n, "currency": "EUR"}`). That form is both
//! the HTTP wire format and the file format of admin exports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Timestamp = DateTime<Utc>;

/// Raw input fields of a unit (CSV columns, feed item fields).
pub type Payload = BTreeMap<String, String>;

/// A worker's answers for one unit, keyed by form field name.
pub type Values = BTreeMap<String, Value>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("missing field: {0}")]
    MissingField(String),
    #[error("batch_size must be at least 1")]
    InvalidBatchSize,
    #[error("min_judgments must be at least 1")]
    InvalidMinJudgments,
    #[error("reward must not be negative")]
    InvalidReward,
    #[error("unknown category: {0}")]
    UnknownCategory(String),
    #[error("preselection references unknown job {0}")]
    DanglingPreselectionRef(JobId),
    #[error("invalid answer field definition: {0}")]
    InvalidField(String),
    #[error("similarity rule for {field}: {reason}")]
    InvalidSimilarityRule { field: String, reason: String },
    #[error("unknown context label: {0}")]
    UnknownContext(String),
    #[error("submitted_at is earlier than started_at")]
    NegativeDuration,
    #[error("invalid identifier: {0:?}")]
    InvalidId(String),
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

id_type!(JobId);
id_type!(UnitId);
id_type!(InstanceId);
id_type!(JudgmentId);
id_type!(
    /// Identifier of any seeded account (worker, requestor or admin).
    UserId
);
id_type!(RewardId);
id_type!(CouponId);

pub type WorkerId = UserId;

/// User ids become parts of storage keys and URL paths, so they are limited to
/// a conservative alphabet.
pub fn validate_user_id(id: &str) -> Result<UserId, ModelError> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(UserId::new(id))
    } else {
        Err(ModelError::InvalidId(id.to_owned()))
    }
}

/// Euro amount stored as integer cents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_cents(cents: i64) -> Self {
        Money(cents)
    }

    pub const fn cents(self) -> i64 {
        self.0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }
}

impl std::ops::Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl std::ops::Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(-self.0)
    }
}

impl std::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        Money(iter.map(|m| m.0).sum())
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02} EUR", abs / 100, abs % 100)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MoneyRepr {
    cents: i64,
    currency: String,
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MoneyRepr {
            cents: self.0,
            currency: "EUR".to_owned(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = MoneyRepr::deserialize(d)?;
        if repr.currency != "EUR" {
            return Err(serde::de::Error::custom(format!(
                "unsupported currency {:?}",
                repr.currency
            )));
        }
        Ok(Money(repr.cents))
    }
}

/// Task category by nominal completion time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Espresso,
    Cappuccino,
    Wine,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Espresso, Category::Cappuccino, Category::Wine];

    pub fn label(self) -> &'static str {
        match self {
            Category::Espresso => "Espresso",
            Category::Cappuccino => "Cappuccino",
            Category::Wine => "Wine",
        }
    }

    /// Advisory completion time in seconds. Wine is a lower bound.
    pub fn nominal_duration_secs(self) -> u32 {
        match self {
            Category::Espresso => 10,
            Category::Cappuccino => 120,
            Category::Wine => 300,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Category {
    type Err = ModelError;

    /// Case-insensitive; serialization always uses the capitalized label.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ModelError::UnknownCategory(s.to_owned()))
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where the worker says they are while working.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Context {
    Workplace,
    Outside,
    Bus,
    Home,
    Train,
    Walking,
    #[default]
    Unspecified,
}

impl Context {
    pub const ALL: [Context; 7] = [
        Context::Workplace,
        Context::Outside,
        Context::Bus,
        Context::Home,
        Context::Train,
        Context::Walking,
        Context::Unspecified,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Context::Workplace => "workplace",
            Context::Outside => "outside",
            Context::Bus => "bus",
            Context::Home => "home",
            Context::Train => "train",
            Context::Walking => "walking",
            Context::Unspecified => "unspecified",
        }
    }
}

impl FromStr for Context {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Context::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| ModelError::UnknownContext(s.to_owned()))
    }
}

/// One answer value. Serialized untagged: `"yes"`, `1.5`, `["a", "b"]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Text(String),
    List(Vec<String>),
}

impl Value {
    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Text(_) => ValueKind::Text,
            Value::Number(_) => ValueKind::Number,
            Value::List(_) => ValueKind::List,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[String]> {
        match self {
            Value::List(l) => Some(l),
            _ => None,
        }
    }

    /// Canonical string form used for exact comparison and CSV export.
    pub fn canonical(&self) -> String {
        match self {
            Value::Text(s) => s.clone(),
            Value::Number(n) => format!("{n}"),
            Value::List(items) => {
                let mut sorted: Vec<&str> = items.iter().map(String::as_str).collect();
                sorted.sort_unstable();
                sorted.dedup();
                sorted.join("|")
            }
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Text,
    Number,
    List,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueKind::Text => "text",
            ValueKind::Number => "number",
            ValueKind::List => "list",
        })
    }
}

/// A form field the job's template asks the worker to fill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerField {
    pub name: String,
    pub kind: ValueKind,
    #[serde(default = "default_true")]
    pub required: bool,
    /// Allowed text values; empty means free text.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    WorkedOn,
    DidNotWorkOn,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreselectionRule {
    pub kind: RuleKind,
    pub job_id: JobId,
}

/// How two answers to one field are compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SimilarityRule {
    ExactEquality,
    CaseInsensitiveEquality,
    NumericTolerance {
        epsilon: f64,
    },
    SetJaccard {
        threshold: f64,
        #[serde(default)]
        fold_case: bool,
    },
}

/// Per-field similarity rules. Fields without an entry use exact equality.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilaritySpec {
    pub rules: BTreeMap<String, SimilarityRule>,
}

impl SimilaritySpec {
    pub fn rule_for(&self, field: &str) -> &SimilarityRule {
        const DEFAULT: SimilarityRule = SimilarityRule::ExactEquality;
        self.rules.get(field).unwrap_or(&DEFAULT)
    }

    pub fn with_rule(mut self, field: impl Into<String>, rule: SimilarityRule) -> Self {
        self.rules.insert(field.into(), rule);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Draft,
    Published,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Survey,
    Csv,
    Feed,
}

pub const DEFAULT_MIN_JUDGMENTS: u32 = 3;

/// Job as submitted by a requestor, before validation. Every field is optional
/// so that validation can name what is missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobDraft {
    pub title: Option<String>,
    pub instructions: Option<String>,
    pub category: Option<String>,
    pub batch_size: Option<i64>,
    pub min_judgments: Option<i64>,
    pub reward: Option<Money>,
    pub ui_template_ref: Option<String>,
    pub fields: Vec<AnswerField>,
    pub preselection: Vec<PreselectionRule>,
    pub similarity: SimilaritySpec,
    pub mistake_limit: Option<u32>,
}

/// The requestor-controlled part of a job after validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub title: String,
    pub instructions: String,
    pub category: Category,
    pub batch_size: u32,
    pub min_judgments: u32,
    pub reward: Money,
    pub ui_template_ref: String,
    pub fields: Vec<AnswerField>,
    pub preselection: Vec<PreselectionRule>,
    pub similarity: SimilaritySpec,
    pub mistake_limit: u32,
}

/// Proof that a [`JobSpec`] passed [`validate_job`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedJob(JobSpec);

impl ValidatedJob {
    pub fn spec(&self) -> &JobSpec {
        &self.0
    }

    pub fn into_spec(self) -> JobSpec {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: JobId,
    pub owner: UserId,
    #[serde(flatten)]
    pub spec: JobSpec,
    pub status: JobStatus,
    pub input: Option<InputKind>,
    pub created_at: Timestamp,
}

impl Job {
    pub fn field(&self, name: &str) -> Option<&AnswerField> {
        self.spec.fields.iter().find(|f| f.name == name)
    }

    pub fn is_survey(&self) -> bool {
        self.input == Some(InputKind::Survey)
    }
}

/// Checks a draft against the job invariants. `job_exists` resolves
/// preselection references.
pub fn validate_job(
    draft: &JobDraft,
    job_exists: impl Fn(&JobId) -> bool,
) -> Result<ValidatedJob, ModelError> {
    fn required(value: &Option<String>, name: &str) -> Result<String, ModelError> {
        match value {
            Some(v) if !v.trim().is_empty() => Ok(v.clone()),
            _ => Err(ModelError::MissingField(name.to_owned())),
        }
    }

    let title = required(&draft.title, "title")?;
    let instructions = required(&draft.instructions, "instructions")?;
    let category = match &draft.category {
        None => return Err(ModelError::MissingField("category".into())),
        Some(label) => label.parse::<Category>()?,
    };
    let batch_size = match draft.batch_size {
        None => return Err(ModelError::MissingField("batch_size".into())),
        Some(n) if n >= 1 && n <= u32::MAX as i64 => n as u32,
        Some(_) => return Err(ModelError::InvalidBatchSize),
    };
    let min_judgments = match draft.min_judgments {
        None => DEFAULT_MIN_JUDGMENTS,
        Some(n) if n >= 1 && n <= u32::MAX as i64 => n as u32,
        Some(_) => return Err(ModelError::InvalidMinJudgments),
    };
    let reward = draft
        .reward
        .ok_or_else(|| ModelError::MissingField("reward".into()))?;
    if reward.is_negative() {
        return Err(ModelError::InvalidReward);
    }
    let ui_template_ref = required(&draft.ui_template_ref, "ui_template_ref")?;
    if draft.fields.is_empty() {
        return Err(ModelError::MissingField("fields".into()));
    }

    let mut seen = BTreeSet::new();
    for field in &draft.fields {
        if field.name.trim().is_empty() {
            return Err(ModelError::InvalidField("empty field name".into()));
        }
        if !seen.insert(field.name.as_str()) {
            return Err(ModelError::InvalidField(format!(
                "duplicate field {:?}",
                field.name
            )));
        }
        if !field.options.is_empty() && field.kind == ValueKind::Number {
            return Err(ModelError::InvalidField(format!(
                "numeric field {:?} cannot have options",
                field.name
            )));
        }
    }

    for (name, rule) in &draft.similarity.rules {
        let field = draft
            .fields
            .iter()
            .find(|f| &f.name == name)
            .ok_or_else(|| ModelError::InvalidSimilarityRule {
                field: name.clone(),
                reason: "no such answer field".into(),
            })?;
        check_rule(name, rule, field.kind)?;
    }

    for rule in &draft.preselection {
        if !job_exists(&rule.job_id) {
            return Err(ModelError::DanglingPreselectionRef(rule.job_id.clone()));
        }
    }

    Ok(ValidatedJob(JobSpec {
        title,
        instructions,
        category,
        batch_size,
        min_judgments,
        reward,
        ui_template_ref,
        fields: draft.fields.clone(),
        preselection: draft.preselection.clone(),
        similarity: draft.similarity.clone(),
        mistake_limit: draft.mistake_limit.unwrap_or(0),
    }))
}

fn check_rule(field: &str, rule: &SimilarityRule, kind: ValueKind) -> Result<(), ModelError> {
    let invalid = |reason: &str| ModelError::InvalidSimilarityRule {
        field: field.to_owned(),
        reason: reason.to_owned(),
    };
    match rule {
        SimilarityRule::ExactEquality => Ok(()),
        SimilarityRule::CaseInsensitiveEquality if kind == ValueKind::Number => {
            Err(invalid("case-insensitive equality needs a text or list field"))
        }
        SimilarityRule::CaseInsensitiveEquality => Ok(()),
        SimilarityRule::NumericTolerance { epsilon } => {
            if kind != ValueKind::Number {
                Err(invalid("numeric tolerance needs a number field"))
            } else if !(epsilon.is_finite() && *epsilon >= 0.0) {
                Err(invalid("epsilon must be finite and non-negative"))
            } else {
                Ok(())
            }
        }
        SimilarityRule::SetJaccard { threshold, .. } => {
            if kind != ValueKind::List {
                Err(invalid("set Jaccard needs a list field"))
            } else if !(*threshold > 0.0 && *threshold <= 1.0) {
                Err(invalid("threshold must lie in (0, 1]"))
            } else {
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum UnitStatus {
    Open,
    Finalized { values: Values },
    NoAgreement,
}

impl UnitStatus {
    pub fn is_open(&self) -> bool {
        matches!(self, UnitStatus::Open)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: UnitId,
    pub job_id: JobId,
    /// Position in the uploaded dataset, starting at 0.
    pub index: u32,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Values>,
    pub status: UnitStatus,
}

impl Unit {
    pub fn id_for(job: &JobId, index: u32) -> UnitId {
        UnitId(format!("{job}:u{index:06}"))
    }

    pub fn is_gold(&self) -> bool {
        self.gold.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceState {
    Reserved,
    Submitted,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: InstanceId,
    pub job_id: JobId,
    pub worker_id: WorkerId,
    pub unit_ids: Vec<UnitId>,
    /// The injected gold unit, if any. Never shown to workers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_unit: Option<UnitId>,
    pub reserved_at: Timestamp,
    pub expires_at: Timestamp,
    pub state: InstanceState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submitted_at: Option<Timestamp>,
}

impl TaskInstance {
    pub fn is_live(&self, now: Timestamp) -> bool {
        self.state == InstanceState::Reserved && now <= self.expires_at
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldOutcome {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub id: JudgmentId,
    pub job_id: JobId,
    pub unit_id: UnitId,
    pub worker_id: WorkerId,
    pub instance_id: InstanceId,
    pub values: Values,
    #[serde(default)]
    pub context: Context,
    pub started_at: Timestamp,
    pub submitted_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_outcome: Option<GoldOutcome>,
}

impl Judgment {
    pub fn id_for(unit: &UnitId, worker: &WorkerId) -> JudgmentId {
        JudgmentId(format!("{unit}:{worker}"))
    }
}

/// Elapsed seconds between start and submission.
pub fn judgment_duration(j: &Judgment) -> Result<f64, ModelError> {
    duration_secs(j.started_at, j.submitted_at)
}

pub fn duration_secs(start: Timestamp, end: Timestamp) -> Result<f64, ModelError> {
    let delta = end - start;
    if delta < chrono::Duration::zero() {
        return Err(ModelError::NegativeDuration);
    }
    // whole seconds plus sub-second part, so huge spans don't overflow nanoseconds
    let secs = delta.num_seconds();
    let nanos = (delta - chrono::Duration::seconds(secs))
        .num_nanoseconds()
        .unwrap_or(0);
    Ok(secs as f64 + nanos as f64 / 1e9)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Worker,
    Requestor,
    Admin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    pub display_name: String,
    pub role: Role,
    /// Hex SHA-256 of the account's API key.
    pub api_key_sha256: String,
    #[serde(default)]
    pub banned_jobs: BTreeSet<JobId>,
}

/// Worker-facing account summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Worker {
    pub id: WorkerId,
    pub display_name: String,
    pub balance: Money,
    pub banned_jobs: BTreeSet<JobId>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn espresso_draft() -> JobDraft {
        JobDraft {
            title: Some("Sentence analysis".into()),
            instructions: Some("Is the relation correct?".into()),
            category: Some("Espresso".into()),
            batch_size: Some(3),
            min_judgments: None,
            reward: Some(Money::from_cents(3)),
            ui_template_ref: Some("<p>{{text}}</p>".into()),
            fields: vec![AnswerField {
                name: "relation".into(),
                kind: ValueKind::Text,
                required: true,
                options: vec!["yes".into(), "no".into(), "dont_know".into()],
            }],
            ..JobDraft::default()
        }
    }

    #[test]
    fn valid_espresso_job() {
        let job = validate_job(&espresso_draft(), |_| false).unwrap();
        assert_eq!(job.spec().batch_size, 3);
        assert_eq!(job.spec().category, Category::Espresso);
        assert_eq!(job.spec().reward, Money::from_cents(3));
        assert_eq!(job.spec().min_judgments, 3);
        assert_eq!(job.spec().mistake_limit, 0);
    }

    #[test]
    fn zero_batch_size_rejected() {
        let mut d = espresso_draft();
        d.batch_size = Some(0);
        assert_eq!(validate_job(&d, |_| false), Err(ModelError::InvalidBatchSize));
    }

    #[test]
    fn dangling_preselection_rejected() {
        let mut d = espresso_draft();
        d.preselection.push(PreselectionRule {
            kind: RuleKind::WorkedOn,
            job_id: "job-9999".into(),
        });
        assert_eq!(
            validate_job(&d, |_| false),
            Err(ModelError::DanglingPreselectionRef("job-9999".into()))
        );
        assert!(validate_job(&d, |id| id.as_str() == "job-9999").is_ok());
    }

    #[test]
    fn missing_fields_named() {
        let mut d = espresso_draft();
        d.title = None;
        assert_eq!(
            validate_job(&d, |_| false),
            Err(ModelError::MissingField("title".into()))
        );
        let mut d = espresso_draft();
        d.ui_template_ref = Some("  ".into());
        assert_eq!(
            validate_job(&d, |_| false),
            Err(ModelError::MissingField("ui_template_ref".into()))
        );
        let mut d = espresso_draft();
        d.category = Some("Latte".into());
        assert_eq!(
            validate_job(&d, |_| false),
            Err(ModelError::UnknownCategory("Latte".into()))
        );
        let mut d = espresso_draft();
        d.category = Some("wine".into());
        assert_eq!(validate_job(&d, |_| false).unwrap().spec().category, Category::Wine);
    }

    #[test]
    fn similarity_rules_must_fit_fields() {
        let mut d = espresso_draft();
        d.similarity = SimilaritySpec::default()
            .with_rule("relation", SimilarityRule::NumericTolerance { epsilon: 0.1 });
        assert!(matches!(
            validate_job(&d, |_| false),
            Err(ModelError::InvalidSimilarityRule { .. })
        ));
        let mut d = espresso_draft();
        d.similarity =
            SimilaritySpec::default().with_rule("nope", SimilarityRule::CaseInsensitiveEquality);
        assert!(validate_job(&d, |_| false).is_err());
    }

    fn at(h: u32, m: u32, s: u32, ms: u32) -> Timestamp {
        Utc.with_ymd_and_hms(2014, 5, 6, h, m, s).unwrap()
            + chrono::Duration::milliseconds(ms as i64)
    }

    fn judgment(started: Timestamp, submitted: Timestamp) -> Judgment {
        Judgment {
            id: "j".into(),
            job_id: "job-0001".into(),
            unit_id: "job-0001:u000000".into(),
            worker_id: "w".into(),
            instance_id: "i".into(),
            values: Values::new(),
            context: Context::Bus,
            started_at: started,
            submitted_at: submitted,
            gold_outcome: None,
        }
    }

    #[test]
    fn durations() {
        let j = judgment(at(10, 0, 0, 0), at(10, 1, 27, 0));
        assert_eq!(judgment_duration(&j).unwrap(), 87.0);
        let j = judgment(at(10, 0, 0, 0), at(10, 0, 0, 0));
        assert_eq!(judgment_duration(&j).unwrap(), 0.0);
        let j = judgment(at(10, 0, 5, 500), at(10, 0, 15, 500));
        assert_eq!(judgment_duration(&j).unwrap(), 10.0);
        let j = judgment(at(10, 0, 5, 0), at(10, 0, 4, 0));
        assert_eq!(judgment_duration(&j), Err(ModelError::NegativeDuration));
    }

    #[test]
    fn money_wire_format() {
        let json = serde_json::to_string(&Money::from_cents(60)).unwrap();
        assert_eq!(json, r#"{"cents":60,"currency":"EUR"}"#);
        assert!(serde_json::from_str::<Money>(r#"{"cents":60,"currency":"USD"}"#).is_err());
        assert_eq!(Money::from_cents(3).to_string(), "0.03 EUR");
        assert_eq!(Money::from_cents(-60).to_string(), "-0.60 EUR");
    }

    #[test]
    fn value_wire_format() {
        let v: Values = serde_json::from_str(r#"{"a":"yes","b":2.5,"c":["x","y"]}"#).unwrap();
        assert_eq!(v["a"], Value::Text("yes".into()));
        assert_eq!(v["b"], Value::Number(2.5));
        assert_eq!(v["c"], Value::List(vec!["x".into(), "y".into()]));
    }

    #[test]
    fn context_vocabulary_is_closed() {
        assert_eq!("bus".parse::<Context>().unwrap(), Context::Bus);
        assert!("at the beach".parse::<Context>().is_err());
        assert!(serde_json::from_str::<Context>(r#""library""#).is_err());
    }

    proptest! {
        #[test]
        fn category_parse_accepts_exactly_three(s in ".{0,12}") {
            let parsed = s.parse::<Category>();
            let known = ["Espresso", "Cappuccino", "Wine"].contains(&s.as_str());
            prop_assert_eq!(parsed.is_ok(), known);
        }

        #[test]
        fn duration_never_negative(a in 0i64..10_000_000, d in 0i64..10_000_000) {
            let start = Utc.timestamp_millis_opt(1_400_000_000_000 + a).unwrap();
            let end = start + chrono::Duration::milliseconds(d);
            let secs = judgment_duration(&judgment(start, end)).unwrap();
            prop_assert!(secs >= 0.0);
            prop_assert!((secs - d as f64 / 1000.0).abs() < 1e-9);
        }

        #[test]
        fn judgment_json_round_trip(
            text in "[a-z]{0,8}",
            num in -1e6f64..1e6,
            tags in proptest::collection::vec("[a-z]{1,5}", 0..4),
            ctx in 0usize..7,
            ms in 0i64..100_000,
        ) {
            let start = Utc.timestamp_millis_opt(1_400_000_000_000).unwrap();
            let mut j = judgment(start, start + chrono::Duration::milliseconds(ms));
            j.context = Context::ALL[ctx];
            j.values.insert("t".into(), Value::Text(text));
            j.values.insert("n".into(), Value::Number(num));
            j.values.insert("l".into(), Value::List(tags));
            let back: Judgment = serde_json::from_str(&serde_json::to_string(&j).unwrap()).unwrap();
            prop_assert_eq!(back, j);
        }
    }

    #[test]
    fn job_and_unit_json_round_trip() {
        let spec = validate_job(&espresso_draft(), |_| false).unwrap().into_spec();
        let job = Job {
            id: "job-0001".into(),
            owner: "req".into(),
            spec,
            status: JobStatus::Draft,
            input: Some(InputKind::Csv),
            created_at: at(9, 0, 0, 0),
        };
        let back: Job = serde_json::from_str(&serde_json::to_string(&job).unwrap()).unwrap();
        assert_eq!(back, job);

        let mut gold = Values::new();
        gold.insert("relation".into(), "yes".into());
        let unit = Unit {
            id: Unit::id_for(&job.id, 7),
            job_id: job.id.clone(),
            index: 7,
            payload: [("text".to_owned(), "a sentence".to_owned())].into(),
            gold: Some(gold),
            status: UnitStatus::Finalized {
                values: [("relation".to_owned(), Value::from("no"))].into(),
            },
        };
        let back: Unit = serde_json::from_str(&serde_json::to_string(&unit).unwrap()).unwrap();
        assert_eq!(back, unit);
    }
}
