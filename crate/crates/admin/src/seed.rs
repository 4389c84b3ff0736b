//! Seed files: users, reward items and their coupon code pools.
//!
//! ```toml
//! [[users]]
//! id = "req"
//! role = "requestor"
//! api_key = "secret"
//!
//! [[rewards]]
//! id = "coffee"
//! title = "Coffee at the campus bar"
//! price_cents = 60
//! venue = "Campus bar"
//! codes = ["C-001", "C-002"]
//! codes_file = "codes.csv"   # column "code", relative to this file
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use brewtask_core::accounts::UserSeed;
use brewtask_core::ledger::{RewardSeed, RewardUpsert};
use brewtask_core::model::{Money, RewardId};
use brewtask_core::Platform;
use serde::{Deserialize, Serialize};
use toml::Spanned;

#[derive(Debug, thiserror::Error)]
pub enum SeedError {
    #[error("{file}:{line}:{column}: {message}")]
    Parse {
        file: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{file}:{line}: duplicate code {code:?} (first seen at {first})")]
    DuplicateCode {
        file: String,
        line: usize,
        code: String,
        first: String,
    },
    #[error("{file}:{line}: empty code")]
    EmptyCode { file: String, line: usize },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Platform(#[from] brewtask_core::Error),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedFile {
    #[serde(default)]
    users: Vec<UserSeed>,
    #[serde(default)]
    rewards: Vec<RewardEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardEntry {
    id: String,
    title: String,
    price_cents: i64,
    #[serde(default)]
    venue: String,
    #[serde(default)]
    codes: Vec<Spanned<String>>,
    codes_file: Option<PathBuf>,
}

/// A code together with where it was read from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourcedCode {
    pub code: String,
    pub file: String,
    pub line: usize,
}

/// A parsed and checked seed file, ready to apply.
#[derive(Debug, Clone)]
pub struct SeedPlan {
    pub users: Vec<UserSeed>,
    pub rewards: Vec<(RewardSeed, Vec<SourcedCode>)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RewardSummary {
    pub id: String,
    #[serde(flatten)]
    pub upsert: RewardUpsert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeedSummary {
    pub users_created: usize,
    pub users_updated: usize,
    pub rewards: Vec<RewardSummary>,
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Reads a code pool CSV with a `code` column. Line numbers count the header
/// as line 1.
pub fn read_codes_csv(bytes: &[u8], file: &str) -> Result<Vec<SourcedCode>, SeedError> {
    let parse_err = |line: usize, message: String| SeedError::Parse {
        file: file.to_owned(),
        line,
        column: 1,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let col = headers
        .iter()
        .position(|h| h == "code")
        .ok_or_else(|| parse_err(1, "missing \"code\" column".into()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push(SourcedCode {
            code: rec.get(col).unwrap_or_default().to_owned(),
            file: file.to_owned(),
            line,
        });
    }
    Ok(out)
}

/// Parses `src` (the contents of `path`) and checks codes for blanks and
/// duplicates across all rewards. Nothing is written.
pub fn plan(src: &str, path: &Path) -> Result<SeedPlan, SeedError> {
    let file = path.display().to_string();
    let parsed: SeedFile = toml::from_str(src).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(src, s.start));
        SeedError::Parse {
            file: file.clone(),
            line,
            column,
            message: e.message().to_owned(),
        }
    })?;

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen: HashMap<String, String> = HashMap::new();
    let mut rewards = Vec::with_capacity(parsed.rewards.len());
    for entry in parsed.rewards {
        let mut codes: Vec<SourcedCode> = entry
            .codes
            .iter()
            .map(|c| SourcedCode {
                code: c.get_ref().trim().to_owned(),
                file: file.clone(),
                line: line_col(src, c.span().start).0,
            })
            .collect();
        if let Some(rel) = &entry.codes_file {
            let p = base.join(rel);
            let name = p.display().to_string();
            let bytes = std::fs::read(&p).map_err(|source| SeedError::Io {
                file: name.clone(),
                source,
            })?;
            codes.extend(read_codes_csv(&bytes, &name)?);
        }
        for c in &codes {
            if c.code.is_empty() {
                return Err(SeedError::EmptyCode {
                    file: c.file.clone(),
                    line: c.line,
                });
            }
            let here = format!("{}:{}", c.file, c.line);
            if let Some(first) = seen.insert(c.code.clone(), here.clone()) {
                return Err(SeedError::DuplicateCode {
                    file: c.file.clone(),
                    line: c.line,
                    code: c.code.clone(),
                    first,
                });
            }
        }
        rewards.push((
            RewardSeed {
                id: RewardId::new(entry.id),
                title: entry.title,
                price: Money::from_cents(entry.price_cents),
                venue: entry.venue,
            },
            codes,
        ));
    }
    Ok(SeedPlan {
        users: parsed.users,
        rewards,
    })
}

/// Upserts everything in the plan. Re-applying the same plan changes nothing.
pub fn apply(platform: &Platform, plan: &SeedPlan) -> Result<SeedSummary, SeedError> {
    let mut summary = SeedSummary {
        users_created: 0,
        users_updated: 0,
        rewards: Vec::new(),
    };
    for u in &plan.users {
        if platform.upsert_user(u)? {
            summary.users_created += 1;
        } else {
            summary.users_updated += 1;
        }
    }
    for (seed, codes) in &plan.rewards {
        let codes: Vec<String> = codes.iter().map(|c| c.code.clone()).collect();
        let upsert = platform.upsert_reward(seed, &codes)?;
        summary.rewards.push(RewardSummary {
            id: seed.id.to_string(),
            upsert,
        });
    }
    Ok(summary)
}

pub fn seed_file(platform: &Platform, path: &Path) -> Result<SeedSummary, SeedError> {
    let src = std::fs::read_to_string(path).map_err(|source| SeedError::Io {
        file: path.display().to_string(),
        source,
    })?;
    apply(platform, &plan(&src, path)?)
}
