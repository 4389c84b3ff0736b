//! Turning requestor input into unit payloads and batches.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Payload;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("input is not valid UTF-8")]
    NotUtf8,
    #[error("CSV header is missing or has an empty column name")]
    EmptyHeader,
    #[error("duplicate CSV column {0:?}")]
    DuplicateColumn(String),
    #[error("row on line {0} has the wrong number of fields")]
    RaggedRow(u64),
    #[error("malformed CSV: {0}")]
    Malformed(String),
    #[error("hashtag must not be empty")]
    EmptyHashtag,
    #[error("feed limit must be at least 1")]
    InvalidLimit,
    #[error("no feed adapter named {0:?}")]
    UnknownAdapter(String),
    #[error("feed adapter failed: {0}")]
    AdapterFailure(String),
}

/// Parses comma-separated, double-quoted CSV with a header row into one
/// payload per data row.
pub fn parse_csv(bytes: &[u8]) -> Result<Vec<Payload>, IngestError> {
    let text = std::str::from_utf8(bytes).map_err(|_| IngestError::NotUtf8)?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();

    let header = match records.next() {
        None => return Err(IngestError::EmptyHeader),
        Some(rec) => rec.map_err(|e| IngestError::Malformed(e.to_string()))?,
    };
    let mut columns = Vec::with_capacity(header.len());
    let mut seen = HashSet::new();
    for name in header.iter() {
        let name = name.trim();
        if name.is_empty() {
            return Err(IngestError::EmptyHeader);
        }
        if !seen.insert(name.to_owned()) {
            return Err(IngestError::DuplicateColumn(name.to_owned()));
        }
        columns.push(name.to_owned());
    }

    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| IngestError::Malformed(e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        // a blank line reads as one empty field
        if rec.len() == 1 && rec[0].is_empty() && columns.len() > 1 {
            continue;
        }
        if rec.len() != columns.len() {
            return Err(IngestError::RaggedRow(line));
        }
        rows.push(
            columns
                .iter()
                .cloned()
                .zip(rec.iter().map(str::to_owned))
                .collect(),
        );
    }
    Ok(rows)
}

/// Writes payloads back to CSV using the given column order.
pub fn write_csv(columns: &[String], rows: &[Payload]) -> Vec<u8> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(columns).expect("write to Vec");
    for row in rows {
        writer
            .write_record(columns.iter().map(|c| row.get(c).map(String::as_str).unwrap_or("")))
            .expect("write to Vec");
    }
    writer.into_inner().expect("flush to Vec")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedQuery {
    pub source: String,
    pub hashtag: String,
    pub limit: u32,
}

impl FeedQuery {
    /// Builds a query; a leading `#` on the hashtag is dropped.
    pub fn new(
        source: impl Into<String>,
        hashtag: &str,
        limit: u32,
    ) -> Result<Self, IngestError> {
        let q = FeedQuery {
            source: source.into(),
            hashtag: hashtag.trim().trim_start_matches('#').to_owned(),
            limit,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.hashtag.trim_start_matches('#').is_empty() {
            return Err(IngestError::EmptyHashtag);
        }
        if self.limit == 0 {
            return Err(IngestError::InvalidLimit);
        }
        Ok(())
    }

    fn tag(&self) -> &str {
        self.hashtag.trim_start_matches('#')
    }
}

/// A source of social-feed items.
pub trait FeedAdapter: Send + Sync {
    fn fetch(&self, query: &FeedQuery) -> Result<Vec<Payload>, IngestError>;
}

/// Reads feed items from a local JSON file: an array of objects with
/// `media_url` and/or `text` plus arbitrary extra string fields.
///
/// An item matches a query when it has no `hashtag` field, when its `hashtag`
/// field equals the query tag (case-insensitively), or when its `text` contains
/// `#tag`.
#[derive(Debug, Clone)]
pub struct FixtureFeedAdapter {
    path: PathBuf,
}

impl FixtureFeedAdapter {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn load(&self) -> Result<Vec<Payload>, IngestError> {
        let raw = std::fs::read(&self.path).map_err(|e| {
            IngestError::AdapterFailure(format!("{}: {e}", self.path.display()))
        })?;
        let items: Vec<BTreeMap<String, serde_json::Value>> = serde_json::from_slice(&raw)
            .map_err(|e| IngestError::AdapterFailure(format!("{}: {e}", self.path.display())))?;
        items
            .into_iter()
            .enumerate()
            .map(|(i, item)| {
                item.into_iter()
                    .map(|(k, v)| match v {
                        serde_json::Value::String(s) => Ok((k, s)),
                        serde_json::Value::Number(n) => Ok((k, n.to_string())),
                        serde_json::Value::Bool(b) => Ok((k, b.to_string())),
                        other => Err(IngestError::AdapterFailure(format!(
                            "item {i}: field {k:?} is not a scalar: {other}"
                        ))),
                    })
                    .collect()
            })
            .collect()
    }
}

impl FeedAdapter for FixtureFeedAdapter {
    fn fetch(&self, query: &FeedQuery) -> Result<Vec<Payload>, IngestError> {
        let tag = query.tag().to_lowercase();
        let needle = format!("#{tag}");
        Ok(self
            .load()?
            .into_iter()
            .filter(|item| match item.get("hashtag") {
                Some(h) => h.trim_start_matches('#').to_lowercase() == tag,
                None => item
                    .get("text")
                    .map(|t| !t.contains('#') || t.to_lowercase().contains(&needle))
                    .unwrap_or(true),
            })
            .collect())
    }
}

/// Named feed adapters available to the platform.
#[derive(Default)]
pub struct FeedRegistry {
    adapters: HashMap<String, Box<dyn FeedAdapter>>,
}

impl FeedRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, adapter: impl FeedAdapter + 'static) {
        self.adapters.insert(name.into(), Box::new(adapter));
    }

    pub fn get(&self, name: &str) -> Option<&dyn FeedAdapter> {
        self.adapters.get(name).map(|a| a.as_ref())
    }
}

impl std::fmt::Debug for FeedRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut names: Vec<_> = self.adapters.keys().collect();
        names.sort();
        f.debug_struct("FeedRegistry").field("adapters", &names).finish()
    }
}

/// Fetches up to `query.limit` items from the adapter registered under
/// `query.source`.
pub fn fetch_feed(registry: &FeedRegistry, query: &FeedQuery) -> Result<Vec<Payload>, IngestError> {
    query.validate()?;
    let adapter = registry
        .get(&query.source)
        .ok_or_else(|| IngestError::UnknownAdapter(query.source.clone()))?;
    let mut items = adapter.fetch(query)?;
    items.truncate(query.limit as usize);
    if let Some(i) = items
        .iter()
        .position(|p| !p.contains_key("media_url") && !p.contains_key("text"))
    {
        return Err(IngestError::AdapterFailure(format!(
            "item {i} has neither media_url nor text"
        )));
    }
    Ok(items)
}

/// How `n` units split into instances of at most `batch_size`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub instances: usize,
    pub sizes: Vec<usize>,
}

impl BatchPlan {
    /// Index ranges of each batch, in unit order.
    pub fn ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.sizes.iter().scan(0usize, |start, &len| {
            let r = *start..*start + len;
            *start += len;
            Some(r)
        })
    }
}

/// Splits `n_units` into full batches plus one short remainder batch.
///
/// Panics if `batch_size` is zero; job validation rules that out.
pub fn batch_units(n_units: usize, batch_size: usize) -> BatchPlan {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let full = n_units / batch_size;
    let rest = n_units % batch_size;
    let mut sizes = vec![batch_size; full];
    if rest > 0 {
        sizes.push(rest);
    }
    BatchPlan {
        instances: sizes.len(),
        sizes,
    }
}
