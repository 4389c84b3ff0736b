//! Exports of results and reports as JSON, CSV or aligned text.

use brewtask_core::kitchen::{KappaReport, StatsReport};
use brewtask_core::model::JobId;
use brewtask_core::{Error, Platform};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    Results,
    Kappa,
    Stats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("{kind:?} export has no {format:?} form")]
    Unsupported { kind: ExportKind, format: Format },
    #[error(transparent)]
    Platform(#[from] Error),
}

#[derive(Debug, Clone, Default)]
pub struct ExportOptions {
    pub raters: Option<u32>,
    pub min_items: Option<usize>,
}

/// Renders rows as left-aligned columns separated by two spaces.
pub fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (i, cell) in r.iter().enumerate() {
            if i + 1 == r.len() {
                line.push_str(cell);
            } else {
                line.push_str(&format!("{cell:<w$}  ", w = widths[i]));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn num(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.digits$}"))
}

pub fn kappa_text(r: &KappaReport) -> String {
    let mut rows = vec![vec![
        "field".to_owned(),
        "categories".into(),
        "subjects".into(),
        "skipped".into(),
        "raters".into(),
        "kappa".into(),
        "se".into(),
        "ci95_low".into(),
        "ci95_high".into(),
        "p_value".into(),
    ]];
    for f in &r.fields {
        let k = f.kappa.as_ref();
        rows.push(vec![
            f.field.clone(),
            f.categories.len().to_string(),
            f.subjects.to_string(),
            f.skipped_units.to_string(),
            r.raters.to_string(),
            num(k.map(|k| k.kappa), 4),
            num(k.and_then(|k| k.standard_error), 4),
            num(k.and_then(|k| k.ci95).map(|c| c.0), 4),
            num(k.and_then(|k| k.ci95).map(|c| c.1), 4),
            num(k.and_then(|k| k.p_value), 4),
        ]);
    }
    format!("job {}\n{}", r.job_id, align(&rows))
}

pub fn stats_text(r: &StatsReport) -> String {
    let d = &r.instance_durations;
    let mut rows = vec![
        vec!["judgments".to_owned(), r.judgments.to_string()],
        vec!["instances".into(), d.count.to_string()],
        vec!["duration_mean_secs".into(), num(d.mean, 2)],
        vec!["duration_median_secs".into(), num(d.median, 2)],
        vec!["duration_stddev_secs".into(), num(d.stddev, 2)],
        vec!["context_unspecified_pct".into(), format!("{:.2}", r.contexts.unspecified_percent)],
    ];
    for (ctx, pct) in &r.contexts.specified_percent {
        rows.push(vec![format!("context_{ctx}_pct"), format!("{pct:.2}")]);
    }
    for (field, rate) in &r.compliance {
        rows.push(vec![
            format!("compliance_{field}_min{}_pct", r.compliance_min_items),
            format!("{:.2}", rate * 100.0),
        ]);
    }
    format!("job {}\n{}", r.job_id, align(&rows))
}

fn pretty<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("report serializes");
    out.push(b'\n');
    out
}

/// Produces the export bytes, acting as the job's owner.
pub fn export(
    platform: &Platform,
    kind: ExportKind,
    job: &JobId,
    format: Format,
    opts: &ExportOptions,
) -> Result<Vec<u8>, ExportError> {
    let owner = match platform.job(job) {
        Ok(j) => j.owner,
        Err(Error::NotFound(_)) => return Err(ExportError::UnknownJob(job.clone())),
        Err(e) => return Err(e.into()),
    };
    match (kind, format) {
        (ExportKind::Results, Format::Json) => Ok(pretty(&platform.results(&owner, job)?)),
        (ExportKind::Results, Format::Csv) => Ok(platform.results(&owner, job)?.to_csv()),
        (ExportKind::Kappa, Format::Json) => Ok(pretty(&platform.kappa_report(&owner, job, opts.raters)?)),
        (ExportKind::Kappa, Format::Text) => {
            Ok(kappa_text(&platform.kappa_report(&owner, job, opts.raters)?).into_bytes())
        }
        (ExportKind::Stats, Format::Json) => Ok(pretty(&platform.stats_report(&owner, job, opts.min_items)?)),
        (ExportKind::Stats, Format::Text) => {
            Ok(stats_text(&platform.stats_report(&owner, job, opts.min_items)?).into_bytes())
        }
        (kind, format) => Err(ExportError::Unsupported { kind, format }),
    }
}
