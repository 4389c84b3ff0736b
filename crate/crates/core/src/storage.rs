//! Embedded record store with optimistic, serializable transactions.
//!
//! Records are JSON values addressed by `(collection, key)`. A transaction
//! buffers its writes and remembers every key and key prefix it read; commit
//! validates that none of them changed since the transaction began and then
//! applies the writes atomically. On-disk stores append each commit as a
//! single line to a write-ahead log, which is replayed on open. A torn final
//! line (crash mid-append) is discarded.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::ops::Bound;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

const WAL_FILE: &str = "store.wal";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("transaction conflict")]
    Conflict,
    #[error("transaction retries exhausted after {0} attempts")]
    RetriesExhausted(u32),
    #[error("storage unavailable: {0}")]
    Unavailable(#[from] std::io::Error),
    #[error("corrupt record {collection}/{key}: {detail}")]
    Corrupt {
        collection: String,
        key: String,
        detail: String,
    },
    #[error("corrupt log at line {line}: {detail}")]
    CorruptLog { line: usize, detail: String },
    #[error("import requires an empty store")]
    NotEmpty,
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    /// `fsync` the log after every commit.
    pub sync: bool,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub backoff_cap: Duration,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            sync: true,
            max_attempts: 256,
            backoff_base: Duration::from_micros(20),
            backoff_cap: Duration::from_millis(5),
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    version: u64,
    /// Insertion order, fixed at first write.
    seq: u64,
    value: Option<Arc<Json>>,
}

#[derive(Debug, Default)]
struct State {
    version: u64,
    next_seq: u64,
    collections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl State {
    fn apply(&mut self, version: u64, writes: &[WriteOp]) {
        for w in writes {
            let coll = self.collections.entry(w.collection.clone()).or_default();
            match coll.get_mut(&w.key) {
                Some(entry) => {
                    entry.version = version;
                    entry.value = w.value.clone().map(Arc::new);
                }
                None => {
                    let seq = self.next_seq;
                    self.next_seq += 1;
                    coll.insert(
                        w.key.clone(),
                        Entry {
                            version,
                            seq,
                            value: w.value.clone().map(Arc::new),
                        },
                    );
                }
            }
        }
        self.version = version;
    }

    fn live_in_prefix<'a>(
        &'a self,
        collection: &str,
        prefix: &'a str,
    ) -> impl Iterator<Item = (&'a String, &'a Entry)> + 'a {
        self.collections
            .get(collection)
            .into_iter()
            .flat_map(move |c| {
                c.range::<str, _>((Bound::Included(prefix), Bound::Unbounded))
                    .take_while(move |(k, _)| k.starts_with(prefix))
            })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WriteOp {
    #[serde(rename = "c")]
    collection: String,
    #[serde(rename = "k")]
    key: String,
    #[serde(rename = "v")]
    value: Option<Json>,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    version: u64,
    writes: Vec<WriteOp>,
}

/// One line of a full export: a live record tagged with its collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpRecord {
    pub collection: String,
    pub key: String,
    pub record: Json,
}

struct Inner {
    state: RwLock<State>,
    wal: Mutex<Option<File>>,
    path: Option<PathBuf>,
    config: StoreConfig,
}

/// Handle to a store. Cheap to clone; clones share state.
#[derive(Clone)]
pub struct Store {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("path", &self.inner.path)
            .field("version", &self.version())
            .finish()
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Self::with_parts(State::default(), None, None, StoreConfig::default())
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(dir, StoreConfig::default())
    }

    /// Opens (or creates) the store in `dir`, replaying its log.
    pub fn open_with(dir: impl AsRef<Path>, config: StoreConfig) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let path = dir.join(WAL_FILE);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let (state, good_len) = replay(&mut file)?;
        let len = file.metadata()?.len();
        if good_len < len {
            tracing::warn!(
                path = %path.display(),
                dropped = len - good_len,
                "discarding torn tail of store log"
            );
            file.set_len(good_len)?;
            file.sync_all()?;
        }
        Ok(Self::with_parts(state, Some(file), Some(path), config))
    }

    fn with_parts(state: State, wal: Option<File>, path: Option<PathBuf>, config: StoreConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                state: RwLock::new(state),
                wal: Mutex::new(wal),
                path,
                config,
            }),
        }
    }

    pub fn is_persistent(&self) -> bool {
        self.inner.path.is_some()
    }

    /// Number of commits applied so far.
    pub fn version(&self) -> u64 {
        self.inner.state.read().expect("store lock").version
    }

    pub fn begin(&self) -> Txn<'_> {
        Txn {
            store: self,
            start: self.version(),
            reads: HashSet::new(),
            prefixes: Vec::new(),
            writes: BTreeMap::new(),
            write_order: 0,
        }
    }

    /// Runs `body` in a transaction, retrying with jittered exponential backoff
    /// while commits conflict.
    ///
    /// An error from `body` is returned as-is only if the reads it was based on
    /// are still current; otherwise the body is retried.
    pub fn transact<R, E, F>(&self, mut body: F) -> Result<R, E>
    where
        F: FnMut(&mut Txn<'_>) -> Result<R, E>,
        E: From<StoreError>,
    {
        let cfg = &self.inner.config;
        for attempt in 0..cfg.max_attempts {
            let mut txn = self.begin();
            match body(&mut txn) {
                Ok(out) => match txn.commit() {
                    Ok(()) => return Ok(out),
                    Err(StoreError::Conflict) => {}
                    Err(e) => return Err(e.into()),
                },
                Err(e) => {
                    if txn.still_valid() {
                        return Err(e);
                    }
                }
            }
            self.backoff(attempt);
        }
        Err(StoreError::RetriesExhausted(cfg.max_attempts).into())
    }

    fn backoff(&self, attempt: u32) {
        let cfg = &self.inner.config;
        let exp = cfg
            .backoff_base
            .saturating_mul(1u32 << attempt.min(16))
            .min(cfg.backoff_cap);
        let jitter = rand::rng().random_range(0..=exp.as_micros() as u64);
        std::thread::sleep(Duration::from_micros(jitter));
    }

    /// Live records under `prefix`, in insertion order, from one consistent
    /// snapshot.
    pub fn list_by_prefix<T: DeserializeOwned>(
        &self,
        collection: &str,
        prefix: &str,
    ) -> Result<Vec<(String, T)>, StoreError> {
        let state = self.inner.state.read().expect("store lock");
        let mut rows: Vec<(u64, &String, Arc<Json>)> = state
            .live_in_prefix(collection, prefix)
            .filter_map(|(k, e)| e.value.clone().map(|v| (e.seq, k, v)))
            .collect();
        rows.sort_by_key(|(seq, _, _)| *seq);
        rows.into_iter()
            .map(|(_, k, v)| Ok((k.clone(), decode(collection, k, &v)?)))
            .collect()
    }

    pub fn get<T: DeserializeOwned>(&self, collection: &str, key: &str) -> Result<Option<T>, StoreError> {
        let state = self.inner.state.read().expect("store lock");
        match state
            .collections
            .get(collection)
            .and_then(|c| c.get(key))
            .and_then(|e| e.value.clone())
        {
            Some(v) => Ok(Some(decode(collection, key, &v)?)),
            None => Ok(None),
        }
    }

    /// Every live record, collection by collection, in insertion order.
    pub fn export(&self) -> Vec<DumpRecord> {
        let state = self.inner.state.read().expect("store lock");
        let mut rows: Vec<(u64, DumpRecord)> = Vec::new();
        for (cname, coll) in &state.collections {
            for (key, e) in coll {
                if let Some(v) = &e.value {
                    rows.push((
                        e.seq,
                        DumpRecord {
                            collection: cname.clone(),
                            key: key.clone(),
                            record: (**v).clone(),
                        },
                    ));
                }
            }
        }
        rows.sort_by_key(|(seq, _)| *seq);
        rows.into_iter().map(|(_, r)| r).collect()
    }

    pub fn export_jsonl(&self, mut out: impl Write) -> Result<usize, StoreError> {
        let records = self.export();
        for r in &records {
            serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(records.len())
    }

    /// Loads a JSON-lines dump into an empty store as a single commit.
    pub fn import_jsonl(&self, input: impl BufRead) -> Result<usize, StoreError> {
        if self.version() != 0 {
            return Err(StoreError::NotEmpty);
        }
        let mut txn = self.begin();
        let mut n = 0;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DumpRecord = serde_json::from_str(&line).map_err(|e| StoreError::CorruptLog {
                line: i + 1,
                detail: e.to_string(),
            })?;
            txn.put_json(&rec.collection, &rec.key, rec.record);
            n += 1;
        }
        txn.commit()?;
        Ok(n)
    }

    fn commit_writes(&self, start: u64, reads: &HashSet<(String, String)>, prefixes: &[(String, String)], writes: Vec<WriteOp>) -> Result<(), StoreError> {
        let mut wal = self.inner.wal.lock().expect("wal lock");
        {
            let state = self.inner.state.read().expect("store lock");
            if !validate(&state, start, reads, prefixes) {
                return Err(StoreError::Conflict);
            }
        }
        if writes.is_empty() {
            return Ok(());
        }
        let version = self.version() + 1;
        if let Some(file) = wal.as_mut() {
            let mut line = serde_json::to_vec(&LogLine {
                version,
                writes: writes.clone(),
            })
            .map_err(std::io::Error::other)?;
            line.push(b'\n');
            let before = file.seek(SeekFrom::End(0))?;
            let written = file.write_all(&line).and_then(|_| {
                if self.inner.config.sync {
                    file.sync_data()
                } else {
                    Ok(())
                }
            });
            if let Err(e) = written {
                // leave no partial line behind for the next append
                let _ = file.set_len(before);
                return Err(e.into());
            }
        }
        self.inner
            .state
            .write()
            .expect("store lock")
            .apply(version, &writes);
        Ok(())
    }
}

fn validate(state: &State, start: u64, reads: &HashSet<(String, String)>, prefixes: &[(String, String)]) -> bool {
    if state.version == start {
        return true;
    }
    let key_ok = reads.iter().all(|(c, k)| {
        state
            .collections
            .get(c)
            .and_then(|coll| coll.get(k))
            .is_none_or(|e| e.version <= start)
    });
    key_ok
        && prefixes
            .iter()
            .all(|(c, p)| state.live_in_prefix(c, p).all(|(_, e)| e.version <= start))
}

fn decode<T: DeserializeOwned>(collection: &str, key: &str, v: &Json) -> Result<T, StoreError> {
    T::deserialize(v).map_err(|e| StoreError::Corrupt {
        collection: collection.to_owned(),
        key: key.to_owned(),
        detail: e.to_string(),
    })
}

/// Replays the log, returning the state and the byte length of the valid
/// prefix. Only the final line may be torn; damage earlier is an error.
fn replay(file: &mut File) -> Result<(State, u64), StoreError> {
    file.seek(SeekFrom::Start(0))?;
    let mut reader = BufReader::new(&*file);
    let mut state = State::default();
    let mut good = 0u64;
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.last() == Some(&b'\n');
        let parsed: Result<LogLine, _> = serde_json::from_slice(&buf);
        match parsed {
            Ok(line) if complete && line.version == state.version + 1 => {
                state.apply(line.version, &line.writes);
                good += n as u64;
            }
            Ok(line) if complete => {
                return Err(StoreError::CorruptLog {
                    line: line_no,
                    detail: format!("expected version {}, found {}", state.version + 1, line.version),
                })
            }
            _ => {
                // only acceptable as the last, unterminated line
                let mut rest = Vec::new();
                std::io::Read::read_to_end(&mut reader, &mut rest)?;
                if complete || !rest.is_empty() {
                    return Err(StoreError::CorruptLog {
                        line: line_no,
                        detail: "unparseable record".into(),
                    });
                }
                break;
            }
        }
    }
    Ok((state, good))
}

/// An open transaction. Reads see the latest committed data overlaid with
/// this transaction's own writes.
pub struct Txn<'s> {
    store: &'s Store,
    start: u64,
    reads: HashSet<(String, String)>,
    prefixes: Vec<(String, String)>,
    writes: BTreeMap<(String, String), (u64, Option<Json>)>,
    write_order: u64,
}

impl Txn<'_> {
    pub fn get<T: DeserializeOwned>(&mut self, collection: &str, key: &str) -> Result<Option<T>, StoreError> {
        let id = (collection.to_owned(), key.to_owned());
        if let Some((_, v)) = self.writes.get(&id) {
            return v.as_ref().map(|v| decode(collection, key, v)).transpose();
        }
        self.reads.insert(id);
        self.store.get(collection, key)
    }

    pub fn exists(&mut self, collection: &str, key: &str) -> Result<bool, StoreError> {
        Ok(self.get::<Json>(collection, key)?.is_some())
    }

    pub fn put<T: Serialize>(&mut self, collection: &str, key: &str, value: &T) -> Result<(), StoreError> {
        let json = serde_json::to_value(value).map_err(|e| StoreError::Corrupt {
            collection: collection.to_owned(),
            key: key.to_owned(),
            detail: e.to_string(),
        })?;
        self.put_json(collection, key, json);
        Ok(())
    }

    fn put_json(&mut self, collection: &str, key: &str, json: Json) {
        self.write_order += 1;
        let order = self.write_order;
        self.writes
            .entry((collection.to_owned(), key.to_owned()))
            .and_modify(|(_, v)| *v = Some(json.clone()))
            .or_insert((order, Some(json)));
    }

    pub fn delete(&mut self, collection: &str, key: &str) {
        self.write_order += 1;
        let order = self.write_order;
        self.writes
            .entry((collection.to_owned(), key.to_owned()))
            .and_modify(|(_, v)| *v = None)
            .or_insert((order, None));
    }

    /// Records under `prefix` in insertion order. Any later commit that
    /// inserts, updates or deletes a key under the prefix conflicts with this
    /// transaction.
    pub fn scan<T: DeserializeOwned>(&mut self, collection: &str, prefix: &str) -> Result<Vec<(String, T)>, StoreError> {
        self.prefixes.push((collection.to_owned(), prefix.to_owned()));
        self.scan_inner(collection, prefix)
    }

    /// Like [`Txn::scan`] but not validated at commit. For advisory reads
    /// (e.g. load balancing hints) where staleness is harmless.
    pub fn peek<T: DeserializeOwned>(&mut self, collection: &str, prefix: &str) -> Result<Vec<(String, T)>, StoreError> {
        self.scan_inner(collection, prefix)
    }

    fn scan_inner<T: DeserializeOwned>(&self, collection: &str, prefix: &str) -> Result<Vec<(String, T)>, StoreError> {
        let mut rows: Vec<((u8, u64), String, Arc<Json>)> = {
            let state = self.store.inner.state.read().expect("store lock");
            state
                .live_in_prefix(collection, prefix)
                .map(|(k, e)| ((0, e.seq), k.clone(), e.value.clone()))
                .filter_map(|(o, k, v)| v.map(|v| (o, k, v)))
                .collect()
        };
        let existing: HashSet<String> = rows.iter().map(|(_, k, _)| k.clone()).collect();
        rows.retain(|(_, k, _)| !self.writes.contains_key(&(collection.to_owned(), k.clone())));
        for ((c, k), (order, v)) in &self.writes {
            if c != collection || !k.starts_with(prefix) {
                continue;
            }
            if let Some(v) = v {
                let seq = if existing.contains(k) {
                    let state = self.store.inner.state.read().expect("store lock");
                    (0, state.collections[c][k].seq)
                } else {
                    (1, *order)
                };
                rows.push((seq, k.clone(), Arc::new(v.clone())));
            }
        }
        rows.sort_by_key(|(o, _, _)| *o);
        rows.into_iter()
            .map(|(_, k, v)| Ok((k.clone(), decode(collection, &k, &v)?)))
            .collect()
    }

    fn still_valid(&self) -> bool {
        let state = self.store.inner.state.read().expect("store lock");
        validate(&state, self.start, &self.reads, &self.prefixes)
    }

    pub fn commit(self) -> Result<(), StoreError> {
        let mut ordered: Vec<_> = self.writes.into_iter().collect();
        ordered.sort_by_key(|(_, (order, _))| *order);
        let writes = ordered
            .into_iter()
            .map(|((collection, key), (_, value))| WriteOp {
                collection,
                key,
                value,
            })
            .collect();
        self.store
            .commit_writes(self.start, &self.reads, &self.prefixes, writes)
    }
}
