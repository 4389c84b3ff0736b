//! Agreement and timing statistics over collected judgments.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Context, Judgment, UnitId, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("rating matrix rows do not all sum to the same rater count")]
    RaggedMatrix,
    #[error("Fleiss kappa needs at least two raters per subject")]
    TooFewRaters,
    #[error("Fleiss kappa needs at least two categories")]
    TooFewCategories,
    #[error("rating matrix has no subjects")]
    NoSubjects,
    #[error("durations must not be negative")]
    NegativeDuration,
    #[error("field {0:?} is not a list")]
    FieldNotList(String),
}

/// Subjects × categories tally of ratings, with a constant number of raters
/// per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingMatrix {
    counts: Vec<Vec<u32>>,
    raters: u32,
}

impl RatingMatrix {
    pub fn new(counts: Vec<Vec<u32>>) -> Result<Self, AnalyticsError> {
        let first = counts.first().ok_or(AnalyticsError::NoSubjects)?;
        let n_categories = first.len();
        if counts.iter().any(|row| row.len() != n_categories) {
            return Err(AnalyticsError::RaggedMatrix);
        }
        if n_categories < 2 {
            return Err(AnalyticsError::TooFewCategories);
        }
        let raters: u32 = first.iter().sum();
        if counts.iter().any(|row| row.iter().sum::<u32>() != raters) {
            return Err(AnalyticsError::RaggedMatrix);
        }
        if raters < 2 {
            return Err(AnalyticsError::TooFewRaters);
        }
        Ok(Self { counts, raters })
    }

    pub fn n_subjects(&self) -> usize {
        self.counts.len()
    }

    pub fn n_categories(&self) -> usize {
        self.counts[0].len()
    }

    pub fn raters_per_subject(&self) -> u32 {
        self.raters
    }

    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    /// Large-sample standard error under the no-agreement null; absent when
    /// every rating falls in one category.
    pub standard_error: Option<f64>,
    pub p_bar: f64,
    pub p_e: f64,
    pub ci95: Option<(f64, f64)>,
    pub z: Option<f64>,
    /// Two-sided normal-approximation p-value for kappa = 0.
    pub p_value: Option<f64>,
    pub n_subjects: usize,
    pub n_raters: u32,
    pub n_categories: usize,
}

/// Fleiss' kappa for a fixed number of raters per subject.
pub fn fleiss_kappa(m: &RatingMatrix) -> KappaResult {
    let n_sub = m.n_subjects() as f64;
    let n = m.raters as f64;

    let p_bar = m
        .counts
        .iter()
        .map(|row| {
            let sq: f64 = row.iter().map(|&c| (c as f64) * (c as f64)).sum();
            (sq - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / n_sub;

    let total = n_sub * n;
    let p: Vec<f64> = (0..m.n_categories())
        .map(|j| m.counts.iter().map(|row| row[j] as f64).sum::<f64>() / total)
        .collect();
    let p_e: f64 = p.iter().map(|pj| pj * pj).sum();

    let spread: f64 = p.iter().map(|pj| pj * (1.0 - pj)).sum();
    let degenerate = spread <= f64::EPSILON;

    let kappa = if degenerate {
        // every rating in a single category: observed agreement is perfect
        1.0
    } else {
        (p_bar - p_e) / (1.0 - p_e)
    };

    let standard_error = (!degenerate).then(|| {
        let skew: f64 = p.iter().map(|pj| pj * (1.0 - pj) * ((1.0 - pj) - pj)).sum();
        let inner = (spread * spread - skew).max(0.0);
        std::f64::consts::SQRT_2 / (spread * (n_sub * n * (n - 1.0)).sqrt()) * inner.sqrt()
    });
    let ci95 = standard_error.map(|se| (kappa - 1.96 * se, kappa + 1.96 * se));
    let z = standard_error.filter(|se| *se > 0.0).map(|se| kappa / se);
    let p_value = z.map(|z| statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2));

    KappaResult {
        kappa,
        standard_error,
        p_bar,
        p_e,
        ci95,
        z,
        p_value,
        n_subjects: m.n_subjects(),
        n_raters: m.raters,
        n_categories: m.n_categories(),
    }
}

/// Rating matrix for one categorical field, plus the category labels in column
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRatings {
    pub field: String,
    pub categories: Vec<String>,
    pub subjects: Vec<UnitId>,
    /// Units with fewer than `raters` usable judgments.
    pub skipped_units: usize,
    pub matrix: Option<RatingMatrix>,
}

/// Tallies one field's answers across units. Each unit contributes its
/// `raters` earliest judgments (by submission time, then id); units with
/// fewer are skipped. Answers are compared by canonical form.
pub fn ratings_for_field(
    units: &[(UnitId, Vec<Judgment>)],
    field: &str,
    raters: u32,
) -> Result<FieldRatings, AnalyticsError> {
    let mut rows: Vec<(UnitId, Vec<String>)> = Vec::new();
    let mut skipped = 0;
    for (unit, judgments) in units {
        let mut js: Vec<&Judgment> = judgments
            .iter()
            .filter(|j| j.values.contains_key(field))
            .collect();
        if js.len() < raters as usize {
            skipped += 1;
            continue;
        }
        js.sort_by(|a, b| a.submitted_at.cmp(&b.submitted_at).then_with(|| a.id.cmp(&b.id)));
        let labels = js
            .iter()
            .take(raters as usize)
            .map(|j| j.values[field].canonical())
            .collect();
        rows.push((unit.clone(), labels));
    }

    let categories: Vec<String> = rows
        .iter()
        .flat_map(|(_, labels)| labels.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let counts: Vec<Vec<u32>> = rows
        .iter()
        .map(|(_, labels)| {
            let mut row = vec![0u32; categories.len().max(2)];
            for l in labels {
                row[index[l.as_str()]] += 1;
            }
            row
        })
        .collect();

    let matrix = if counts.is_empty() {
        None
    } else {
        Some(RatingMatrix::new(counts)?)
    };
    Ok(FieldRatings {
        field: field.to_owned(),
        categories,
        subjects: rows.into_iter().map(|(u, _)| u).collect(),
        skipped_units: skipped,
        matrix,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Sample standard deviation (n − 1 denominator).
    pub stddev: Option<f64>,
}

pub fn execution_stats(durations: &[f64]) -> Result<ExecutionStats, AnalyticsError> {
    if durations.iter().any(|d| d.is_nan() || *d < 0.0) {
        return Err(AnalyticsError::NegativeDuration);
    }
    let count = durations.len();
    if count == 0 {
        return Ok(ExecutionStats {
            count,
            mean: None,
            median: None,
            stddev: None,
        });
    }
    let mean = durations.iter().sum::<f64>() / count as f64;

    let mut sorted = durations.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if count % 2 == 1 {
        sorted[count / 2]
    } else {
        (sorted[count / 2 - 1] + sorted[count / 2]) / 2.0
    };

    let stddev = (count > 1).then(|| {
        let ss: f64 = durations.iter().map(|d| (d - mean).powi(2)).sum();
        (ss / (count - 1) as f64).sqrt()
    });
    Ok(ExecutionStats {
        count,
        mean: Some(mean),
        median: Some(median),
        stddev,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextDistribution {
    pub total: usize,
    /// Percentage of all judgments without a context.
    pub unspecified_percent: f64,
    /// Percentages over the judgments that do carry a context.
    pub specified_percent: BTreeMap<String, f64>,
}

pub fn context_distribution<I>(contexts: I) -> ContextDistribution
where
    I: IntoIterator<Item = Context>,
{
    let mut total = 0usize;
    let mut unspecified = 0usize;
    let mut counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    for c in contexts {
        total += 1;
        if c == Context::Unspecified {
            unspecified += 1;
        } else {
            *counts.entry(c.label()).or_default() += 1;
        }
    }
    let specified = total - unspecified;
    let pct = |part: usize, whole: usize| {
        if whole == 0 {
            0.0
        } else {
            100.0 * part as f64 / whole as f64
        }
    };
    ContextDistribution {
        total,
        unspecified_percent: pct(unspecified, total),
        specified_percent: counts
            .into_iter()
            .map(|(k, v)| (k.to_owned(), pct(v, specified)))
            .collect(),
    }
}

/// Fraction of judgments whose list-valued `field` has at least `min_items`
/// entries. A missing field counts as an empty list; an empty input is
/// vacuously compliant.
pub fn compliance_rate(
    judgments: &[Judgment],
    field: &str,
    min_items: usize,
) -> Result<f64, AnalyticsError> {
    if judgments.is_empty() {
        return Ok(1.0);
    }
    let mut passing = 0usize;
    for j in judgments {
        let len = match j.values.get(field) {
            None => 0,
            Some(Value::List(items)) => items.len(),
            Some(_) => return Err(AnalyticsError::FieldNotList(field.to_owned())),
        };
        if len >= min_items {
            passing += 1;
        }
    }
    Ok(passing as f64 / judgments.len() as f64)
}
