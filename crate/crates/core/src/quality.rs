//! Quality control: gold injection probability, similarity rules, gold
//! evaluation, mistake limits and agreement-based unit finalization.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GoldOutcome, JobId, Judgment, SimilarityRule, SimilaritySpec, UnitId, Value, ValueKind, Values, WorkerId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QualityError {
    #[error("rule {rule} cannot compare {left} with {right}")]
    KindMismatch {
        rule: &'static str,
        left: ValueKind,
        right: ValueKind,
    },
    #[error("answer is missing field {0:?}")]
    MissingAnswerField(String),
    #[error("judgments reference more than one unit")]
    MixedUnits,
    #[error("worker {0} judged the unit more than once")]
    DuplicateWorker(WorkerId),
}

/// Per-worker, per-job gold counters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerQualityState {
    pub worker_id: WorkerId,
    pub job_id: JobId,
    pub n_incorrect: u64,
    pub n_correct: u64,
    pub banned: bool,
}

impl WorkerQualityState {
    pub fn new(worker_id: WorkerId, job_id: JobId) -> Self {
        Self {
            worker_id,
            job_id,
            n_incorrect: 0,
            n_correct: 0,
            banned: false,
        }
    }

    pub fn gold_judgments(&self) -> u64 {
        self.n_incorrect + self.n_correct
    }
}

/// Probability that the worker's next instance carries a gold unit:
/// `(1 + incorrect) / (1 + incorrect + correct)`.
///
/// Starts at 1 for a fresh worker and falls as correct gold answers pile up.
pub fn gold_injection_probability(state: &WorkerQualityState) -> f64 {
    let num = 1.0 + state.n_incorrect as f64;
    num / (num + state.n_correct as f64)
}

fn rule_name(rule: &SimilarityRule) -> &'static str {
    match rule {
        SimilarityRule::ExactEquality => "exact_equality",
        SimilarityRule::CaseInsensitiveEquality => "case_insensitive_equality",
        SimilarityRule::NumericTolerance { .. } => "numeric_tolerance",
        SimilarityRule::SetJaccard { .. } => "set_jaccard",
    }
}

fn fold(s: &str) -> String {
    s.chars().flat_map(char::to_lowercase).collect()
}

fn as_set<'a>(items: &'a [String], fold_case: bool) -> BTreeSet<std::borrow::Cow<'a, str>> {
    items
        .iter()
        .map(|s| {
            if fold_case {
                std::borrow::Cow::Owned(fold(s))
            } else {
                std::borrow::Cow::Borrowed(s.as_str())
            }
        })
        .collect()
}

/// Compares two answers under one field rule. Symmetric for every rule.
pub fn similar(a: &Value, b: &Value, rule: &SimilarityRule) -> Result<bool, QualityError> {
    let mismatch = || QualityError::KindMismatch {
        rule: rule_name(rule),
        left: a.kind(),
        right: b.kind(),
    };
    match rule {
        SimilarityRule::ExactEquality => match (a, b) {
            (Value::Text(x), Value::Text(y)) => Ok(x == y),
            (Value::Number(x), Value::Number(y)) => Ok(x == y),
            (Value::List(x), Value::List(y)) => Ok(as_set(x, false) == as_set(y, false)),
            _ => Err(mismatch()),
        },
        SimilarityRule::CaseInsensitiveEquality => match (a, b) {
            (Value::Text(x), Value::Text(y)) => Ok(fold(x) == fold(y)),
            (Value::List(x), Value::List(y)) => Ok(as_set(x, true) == as_set(y, true)),
            _ => Err(mismatch()),
        },
        SimilarityRule::NumericTolerance { epsilon } => match (a, b) {
            (Value::Number(x), Value::Number(y)) => Ok((x - y).abs() <= *epsilon),
            _ => Err(mismatch()),
        },
        SimilarityRule::SetJaccard {
            threshold,
            fold_case,
        } => match (a, b) {
            (Value::List(x), Value::List(y)) => {
                let (x, y) = (as_set(x, *fold_case), as_set(y, *fold_case));
                let union = x.union(&y).count();
                if union == 0 {
                    return Ok(true);
                }
                let inter = x.intersection(&y).count();
                Ok(inter as f64 / union as f64 >= *threshold)
            }
            _ => Err(mismatch()),
        },
    }
}

/// True when every field present in either answer is similar in both.
/// Missing fields and kind mismatches count as dissimilar.
pub fn all_fields_similar(a: &Values, b: &Values, spec: &SimilaritySpec) -> bool {
    let fields: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    fields.into_iter().all(|f| match (a.get(f), b.get(f)) {
        (Some(x), Some(y)) => similar(x, y, spec.rule_for(f)).unwrap_or(false),
        _ => false,
    })
}

/// Grades a judgment on a gold unit, records the outcome on the judgment and
/// bumps exactly one of the worker's counters.
pub fn evaluate_gold(
    judgment: &mut Judgment,
    gold: &Values,
    spec: &SimilaritySpec,
    state: &mut WorkerQualityState,
) -> Result<GoldOutcome, QualityError> {
    let mut correct = true;
    for (field, expected) in gold {
        let answer = judgment
            .values
            .get(field)
            .ok_or_else(|| QualityError::MissingAnswerField(field.clone()))?;
        if !similar(answer, expected, spec.rule_for(field))? {
            correct = false;
        }
    }
    let outcome = if correct {
        state.n_correct += 1;
        GoldOutcome::Correct
    } else {
        state.n_incorrect += 1;
        GoldOutcome::Incorrect
    };
    judgment.gold_outcome = Some(outcome);
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BanStatus {
    Active,
    Banned,
}

/// Bans the worker for the job once their incorrect gold answers exceed
/// `limit`. A ban is never lifted.
pub fn apply_mistake_limit(state: &mut WorkerQualityState, limit: u32) -> BanStatus {
    if state.n_incorrect > limit as u64 {
        state.banned = true;
    }
    if state.banned {
        BanStatus::Banned
    } else {
        BanStatus::Active
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum AggregationResult {
    Pending { judgments: usize },
    Agreed { values: Values, support: usize },
    NoAgreement { judgments: usize },
}

/// Clusters one unit's judgments by all-field similarity (single linkage) and
/// returns the strict-majority cluster, if any.
///
/// The agreed value is taken from the earliest-submitted member of the winning
/// cluster, with judgment id as tie-break.
pub fn aggregate_unit(
    judgments: &[Judgment],
    spec: &SimilaritySpec,
    min_judgments: u32,
) -> Result<AggregationResult, QualityError> {
    let count = judgments.len();
    if let Some(first) = judgments.first() {
        let unit: &UnitId = &first.unit_id;
        if judgments.iter().any(|j| &j.unit_id != unit) {
            return Err(QualityError::MixedUnits);
        }
        let mut workers = HashSet::new();
        for j in judgments {
            if !workers.insert(&j.worker_id) {
                return Err(QualityError::DuplicateWorker(j.worker_id.clone()));
            }
        }
    }
    if count < min_judgments as usize {
        return Ok(AggregationResult::Pending { judgments: count });
    }

    let mut parent: Vec<usize> = (0..count).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..count {
        for k in (i + 1)..count {
            if all_fields_similar(&judgments[i].values, &judgments[k].values, spec) {
                let (ri, rk) = (find(&mut parent, i), find(&mut parent, k));
                if ri != rk {
                    parent[ri.max(rk)] = ri.min(rk);
                }
            }
        }
    }

    let mut sizes = vec![0usize; count];
    for i in 0..count {
        let root = find(&mut parent, i);
        sizes[root] += 1;
    }
    let (winner, &support) = sizes
        .iter()
        .enumerate()
        .max_by_key(|(_, s)| **s)
        .expect("count >= min_judgments >= 1");
    if 2 * support <= count {
        return Ok(AggregationResult::NoAgreement { judgments: count });
    }
    let canonical = (0..count)
        .filter(|&i| find(&mut parent, i) == winner)
        .min_by(|&a, &b| {
            let (ja, jb) = (&judgments[a], &judgments[b]);
            ja.submitted_at
                .cmp(&jb.submitted_at)
                .then_with(|| ja.id.cmp(&jb.id))
        })
        .expect("winning cluster is non-empty");
    Ok(AggregationResult::Agreed {
        values: judgments[canonical].values.clone(),
        support,
    })
}
