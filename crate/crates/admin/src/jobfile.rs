//! Job files: the Kitchen job JSON plus an owner, a data source pointer,
//! gold answers by row and an optional publish flag.
//!
//! ```json
//! {
//!   "owner": "req",
//!   "title": "Tag the photo", "instructions": "...", "category": "cappuccino",
//!   "batch_size": 3, "reward": {"cents": 3, "currency": "EUR"},
//!   "ui_template_ref": "tag.html",
//!   "fields": [{"name": "tags", "kind": "list"}],
//!   "data": {"source": "feed", "hashtag": "trento", "limit": 1000},
//!   "gold": [{"row": 0, "values": {"tags": ["duomo"]}}],
//!   "publish": true
//! }
//! ```

use std::path::{Path, PathBuf};

use brewtask_core::ingestion::FeedQuery;
use brewtask_core::kitchen::{DataSource, GoldAnswer};
use brewtask_core::model::{JobDraft, JobId, Unit, UserId, Values};
use brewtask_core::Platform;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum JobFileError {
    #[error("{file}:{line}:{column}: {message}")]
    Parse {
        file: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Platform(#[from] brewtask_core::Error),
}

fn default_adapter() -> String {
    brewtask_server::FIXTURE_FEED.to_owned()
}

fn default_limit() -> u32 {
    10_000
}

/// Data source pointer. Paths are relative to the job file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataRef {
    Csv {
        path: PathBuf,
    },
    Feed {
        #[serde(default = "default_adapter")]
        adapter: String,
        hashtag: String,
        #[serde(default = "default_limit")]
        limit: u32,
    },
    Survey,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRow {
    /// Zero-based row in the loaded data.
    pub row: u32,
    pub values: Values,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobFile {
    pub owner: String,
    #[serde(flatten)]
    pub draft: JobDraft,
    #[serde(default = "no_data")]
    pub data: DataRef,
    #[serde(default)]
    pub gold: Vec<GoldRow>,
    #[serde(default)]
    pub publish: bool,
}

fn no_data() -> DataRef {
    DataRef::None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadSummary {
    pub job_id: JobId,
    pub units: usize,
    pub instances: usize,
    pub gold: usize,
    pub status: String,
}

pub fn parse(src: &str, path: &Path) -> Result<JobFile, JobFileError> {
    serde_json::from_str(src).map_err(|e| JobFileError::Parse {
        file: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Creates the job and runs the Kitchen steps the file asks for.
pub fn load(platform: &Platform, file: &JobFile, base: &Path) -> Result<LoadSummary, JobFileError> {
    let owner = UserId::new(file.owner.clone());
    let job = platform.create_job(&owner, &file.draft)?;
    let source = match &file.data {
        DataRef::Csv { path } => {
            let p = base.join(path);
            let bytes = std::fs::read(&p).map_err(|source| JobFileError::Io {
                file: p.display().to_string(),
                source,
            })?;
            Some(DataSource::Csv { bytes })
        }
        DataRef::Feed {
            adapter,
            hashtag,
            limit,
        } => Some(DataSource::Feed(
            FeedQuery::new(adapter.clone(), hashtag, *limit).map_err(brewtask_core::Error::from)?,
        )),
        DataRef::Survey => Some(DataSource::Survey),
        DataRef::None => None,
    };
    let (units, instances) = match source {
        Some(s) => {
            let d = platform.attach_data(&owner, &job.id, &s)?;
            (d.units, d.instances)
        }
        None => (0, 0),
    };
    let gold = if file.gold.is_empty() {
        0
    } else {
        let answers: Vec<GoldAnswer> = file
            .gold
            .iter()
            .map(|g| GoldAnswer {
                unit_id: Unit::id_for(&job.id, g.row),
                values: g.values.clone(),
            })
            .collect();
        platform.set_gold(&owner, &job.id, &answers)?
    };
    let job = if file.publish {
        platform.publish(&owner, &job.id)?
    } else {
        job
    };
    Ok(LoadSummary {
        job_id: job.id,
        units,
        instances,
        gold,
        status: serde_json::to_value(job.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default(),
    })
}

pub fn load_file(platform: &Platform, path: &Path) -> Result<LoadSummary, JobFileError> {
    let src = std::fs::read_to_string(path).map_err(|source| JobFileError::Io {
        file: path.display().to_string(),
        source,
    })?;
    let file = parse(&src, path)?;
    load(platform, &file, path.parent().unwrap_or_else(|| Path::new(".")))
}
