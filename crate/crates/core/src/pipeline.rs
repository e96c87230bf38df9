//! Producer/consumer fetch pipeline.
//!
//! The producer turns a filtered repository list into [`Job`]s on a bounded
//! FIFO [`JobQueue`]. The consumer runs a pool of worker threads; each
//! worker fetches one repository from a [`RemoteSource`], merges it into the
//! [`RootedStore`] and reports a [`JobResult`]. Transient failures are
//! re-enqueued up to `max_retries` times; permanent ones are recorded and
//! the pipeline moves on.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Condvar, Mutex};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use thiserror::Error;

use crate::object::{validate_ref_name, ObjectStore, Reference, Repository};
use crate::rooted::{canonicalize_remote, object_entry_name, parse_object_entry, MergeReport};
use crate::store::{RootedStore, StoreError};

pub const LIST_HEADER: [&str; 3] = ["url", "stargazers", "main_language"];

/// Marker file flagging a remote as removed for legal reasons.
pub const LEGAL_REMOVAL_MARKER: &str = "451";

pub const DEFAULT_BRANCH_FILE: &str = "meta/default_branch";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoListRow {
    pub url: String,
    pub stargazers: u64,
    pub main_language: String,
}

#[derive(Debug, Error)]
pub enum ListError {
    #[error("repository list header must be {expected:?}, found {found:?}")]
    Header { expected: String, found: String },

    #[error("repository list line {line}: {reason}")]
    Row { line: u64, reason: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads a `url,stargazers,main_language` CSV list.
pub fn read_repository_list<R: Read>(input: R) -> Result<Vec<RepoListRow>, ListError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != LIST_HEADER {
        return Err(ListError::Header {
            expected: LIST_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let url = record[0].trim().to_owned();
        if url.is_empty() {
            return Err(ListError::Row { line, reason: "empty url".into() });
        }
        let stargazers = record[1]
            .trim()
            .parse()
            .map_err(|_| ListError::Row { line, reason: format!("bad stargazers {:?}", &record[1]) })?;
        rows.push(RepoListRow { url, stargazers, main_language: record[2].trim().to_owned() });
    }
    Ok(rows)
}

pub fn write_repository_list<W: Write>(output: W, rows: &[RepoListRow]) -> Result<(), ListError> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(output);
    writer.write_record(LIST_HEADER)?;
    for row in rows {
        writer.write_record([row.url.as_str(), &row.stargazers.to_string(), row.main_language.as_str()])?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterOutcome {
    pub kept: Vec<RepoListRow>,
    /// Rows below the threshold or outside the language set.
    pub dropped: usize,
    /// Repeated urls removed (first occurrence wins).
    pub duplicates: usize,
}

/// Keeps rows with at least `min_stars` stargazers whose main language is in
/// `languages` (compared case-insensitively; an empty set keeps every
/// language). Input order is preserved.
pub fn filter_repository_list(rows: &[RepoListRow], min_stars: u64, languages: &BTreeSet<String>) -> FilterOutcome {
    let languages: HashSet<String> = languages.iter().map(|l| l.to_lowercase()).collect();
    let mut seen = HashSet::new();
    let mut out = FilterOutcome::default();
    for row in rows {
        if !seen.insert(row.url.as_str()) {
            out.duplicates += 1;
            continue;
        }
        let language_ok = languages.is_empty() || languages.contains(&row.main_language.to_lowercase());
        if row.stargazers >= min_stars && language_ok {
            out.kept.push(row.clone());
        } else {
            out.dropped += 1;
        }
    }
    if out.duplicates > 0 {
        warn!("dropped {} duplicate urls", out.duplicates);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Job {
    pub job_id: String,
    pub url: String,
    pub remote_id: String,
    /// Starts at 1.
    pub attempt: u32,
}

/// Bounded FIFO shared by producers and workers.
///
/// `push` blocks while the queue is full. `requeue` bypasses the bound so a
/// worker can never block on its own queue. `pop` returns `None` once the
/// queue is closed, empty and no popped job is still being processed (a job
/// in flight may yet be re-enqueued).
pub struct JobQueue {
    state: Mutex<QueueState>,
    not_empty: Condvar,
    not_full: Condvar,
    capacity: usize,
}

struct QueueState {
    jobs: VecDeque<Job>,
    closed: bool,
    in_flight: usize,
}

impl JobQueue {
    pub fn new(capacity: usize) -> Self {
        JobQueue {
            state: Mutex::new(QueueState { jobs: VecDeque::new(), closed: false, in_flight: 0 }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
            capacity: capacity.max(1),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn push(&self, job: Job) {
        let mut state = self.lock();
        while state.jobs.len() >= self.capacity {
            state = self.not_full.wait(state).unwrap_or_else(|p| p.into_inner());
        }
        state.jobs.push_back(job);
        self.not_empty.notify_one();
    }

    pub fn requeue(&self, job: Job) {
        let mut state = self.lock();
        state.jobs.push_back(job);
        self.not_empty.notify_one();
    }

    /// No more jobs will be pushed by producers.
    pub fn close(&self) {
        self.lock().closed = true;
        self.not_empty.notify_all();
    }

    pub fn pop(&self) -> Option<Job> {
        let mut state = self.lock();
        loop {
            if let Some(job) = state.jobs.pop_front() {
                state.in_flight += 1;
                self.not_full.notify_one();
                return Some(job);
            }
            if state.closed && state.in_flight == 0 {
                return None;
            }
            state = self.not_empty.wait(state).unwrap_or_else(|p| p.into_inner());
        }
    }

    /// Marks a popped job as fully handled.
    pub fn task_done(&self) {
        let mut state = self.lock();
        state.in_flight -= 1;
        if state.in_flight == 0 && state.closed {
            self.not_empty.notify_all();
        }
    }

    pub fn len(&self) -> usize {
        self.lock().jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Enqueues one job per row, in order. Blocks while the queue is full.
pub fn produce(rows: &[RepoListRow], queue: &JobQueue) -> usize {
    for (i, row) in rows.iter().enumerate() {
        let remote_id = canonicalize_remote(&row.url).unwrap_or_else(|_| row.url.trim().to_owned());
        queue.push(Job { job_id: format!("job-{i:06}"), url: row.url.clone(), remote_id, attempt: 1 });
    }
    rows.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ErrorKind {
    None,
    NotFound,
    LegallyRemoved,
    Malformed,
    Io,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::None => "none",
            ErrorKind::NotFound => "not_found",
            ErrorKind::LegallyRemoved => "legally_removed",
            ErrorKind::Malformed => "malformed",
            ErrorKind::Io => "io",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("remote {0} not found")]
    NotFound(String),

    #[error("remote {0} removed for legal reasons")]
    LegallyRemoved(String),

    #[error("remote {remote} is malformed: {reason}")]
    Malformed { remote: String, reason: String },

    #[error("I/O error fetching {remote}: {source}")]
    Io {
        remote: String,
        #[source]
        source: io::Error,
    },
}

impl FetchError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            FetchError::NotFound(_) => ErrorKind::NotFound,
            FetchError::LegallyRemoved(_) => ErrorKind::LegallyRemoved,
            FetchError::Malformed { .. } => ErrorKind::Malformed,
            FetchError::Io { .. } => ErrorKind::Io,
        }
    }
}

/// Where repositories are fetched from.
pub trait RemoteSource: Send + Sync {
    fn fetch(&self, remote_id: &str) -> Result<Repository, FetchError>;
}

pub fn fetch(source: &dyn RemoteSource, remote_id: &str) -> Result<Repository, FetchError> {
    source.fetch(remote_id)
}

/// Remotes stored as directories under a root, one per remote id
/// (`<root>/github.com/owner/name`), each laid out as
/// `objects/xx/yyyy…`, `refs/…` files holding `<id>\n`, and
/// `meta/default_branch`. A file named `451` marks a legally removed remote.
#[derive(Debug, Clone)]
pub struct FsRemoteSource {
    root: PathBuf,
}

impl FsRemoteSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FsRemoteSource { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Directory of `remote_id`, or `None` if the id cannot be a relative path.
    pub fn remote_dir(&self, remote_id: &str) -> Option<PathBuf> {
        let rel = Path::new(remote_id);
        let normal = !remote_id.is_empty() && rel.components().all(|c| matches!(c, Component::Normal(_)));
        normal.then(|| self.root.join(rel))
    }

    /// Writes `repo` as a remote directory, replacing any previous content.
    pub fn write_remote(&self, repo: &Repository) -> io::Result<PathBuf> {
        let dir = self
            .remote_dir(&repo.remote_id)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "remote id is not a relative path"))?;
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        for (id, obj) in repo.objects.iter() {
            write_file(&dir.join(object_entry_name(id)), &obj.serialize())?;
        }
        for r in &repo.references {
            write_file(&dir.join(&r.name), format!("{}\n", r.target).as_bytes())?;
        }
        write_file(&dir.join(DEFAULT_BRANCH_FILE), format!("{}\n", repo.default_branch).as_bytes())?;
        Ok(dir)
    }

    /// Marks `remote_id` as removed for legal reasons.
    pub fn mark_legally_removed(&self, remote_id: &str) -> io::Result<()> {
        let dir = self
            .remote_dir(remote_id)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "remote id is not a relative path"))?;
        write_file(&dir.join(LEGAL_REMOVAL_MARKER), b"")
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)
}

/// Relative `/`-joined paths of every file under `dir`, sorted.
fn list_files(dir: &Path) -> io::Result<Vec<String>> {
    let mut out = Vec::new();
    let mut pending = vec![(dir.to_path_buf(), String::new())];
    while let Some((path, prefix)) = pending.pop() {
        for entry in fs::read_dir(&path)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let rel = if prefix.is_empty() { name } else { format!("{prefix}/{name}") };
            if entry.file_type()?.is_dir() {
                pending.push((entry.path(), rel));
            } else {
                out.push(rel);
            }
        }
    }
    out.sort();
    Ok(out)
}

impl RemoteSource for FsRemoteSource {
    fn fetch(&self, remote_id: &str) -> Result<Repository, FetchError> {
        let malformed = |reason: String| FetchError::Malformed { remote: remote_id.to_owned(), reason };
        let io_err = |source| FetchError::Io { remote: remote_id.to_owned(), source };
        let dir = self.remote_dir(remote_id).ok_or_else(|| malformed("remote id is not a relative path".into()))?;
        if !dir.is_dir() {
            return Err(FetchError::NotFound(remote_id.to_owned()));
        }
        if dir.join(LEGAL_REMOVAL_MARKER).exists() {
            return Err(FetchError::LegallyRemoved(remote_id.to_owned()));
        }
        let default_branch = match fs::read_to_string(dir.join(DEFAULT_BRANCH_FILE)) {
            Ok(s) => s.trim_end_matches('\n').to_owned(),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(malformed(format!("missing {DEFAULT_BRANCH_FILE}")))
            }
            Err(e) => return Err(io_err(e)),
        };
        let mut objects = ObjectStore::new();
        let mut references = Vec::new();
        for rel in list_files(&dir).map_err(io_err)? {
            let bytes = fs::read(dir.join(&rel)).map_err(io_err)?;
            if rel.starts_with("objects/") {
                let (_, obj) = parse_object_entry(&rel, &bytes).map_err(|e| malformed(e.to_string()))?;
                objects.put(obj);
            } else if rel.starts_with("refs/") {
                validate_ref_name(&rel).map_err(|e| malformed(e.to_string()))?;
                let target = std::str::from_utf8(&bytes)
                    .ok()
                    .and_then(|s| s.strip_suffix('\n'))
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| malformed(format!("reference {rel} does not hold an object id")))?;
                references.push(Reference { name: rel, target });
            } else if rel != DEFAULT_BRANCH_FILE {
                debug!("{remote_id}: ignoring {rel}");
            }
        }
        let repo = Repository { remote_id: remote_id.to_owned(), default_branch, objects, references };
        repo.validate().map_err(|e| malformed(e.to_string()))?;
        Ok(repo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum JobStatus {
    Succeeded,
    FailedPermanent,
    FailedRetryable,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Succeeded => "succeeded",
            JobStatus::FailedPermanent => "failed_permanent",
            JobStatus::FailedRetryable => "failed_retryable",
        }
    }
}

/// Final outcome of a job, after any retries.
#[derive(Debug, Clone)]
pub struct JobResult {
    pub job_id: String,
    pub url: String,
    pub remote_id: String,
    pub status: JobStatus,
    pub error_kind: ErrorKind,
    pub error: Option<String>,
    /// Attempt that produced this result.
    pub attempt: u32,
    /// Present exactly when the job succeeded.
    pub merge_report: Option<MergeReport>,
    pub duration: Duration,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub workers: usize,
    pub max_retries: u32,
    pub retry_delay: Duration,
    pub queue_capacity: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { workers: 8, max_retries: 2, retry_delay: Duration::ZERO, queue_capacity: 64 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineReport {
    /// One result per job, sorted by job id.
    pub results: Vec<JobResult>,
    /// Number of re-enqueues.
    pub retries: usize,
}

impl PipelineReport {
    pub fn count(&self, status: JobStatus) -> usize {
        self.results.iter().filter(|r| r.status == status).count()
    }

    pub fn failures_by_kind(&self) -> BTreeMap<ErrorKind, usize> {
        let mut out = BTreeMap::new();
        for r in self.results.iter().filter(|r| r.status != JobStatus::Succeeded) {
            *out.entry(r.error_kind).or_insert(0) += 1;
        }
        out
    }

    pub fn objects_added(&self) -> usize {
        self.results
            .iter()
            .filter_map(|r| r.merge_report.as_ref())
            .map(|m| m.totals().objects_added)
            .sum()
    }

    /// `"<n> ok, <n> failed_permanent"`, plus exhausted retries if any.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} ok, {} failed_permanent",
            self.count(JobStatus::Succeeded),
            self.count(JobStatus::FailedPermanent)
        );
        let exhausted = self.count(JobStatus::FailedRetryable);
        if exhausted > 0 {
            s.push_str(&format!(", {exhausted} failed_retryable"));
        }
        s
    }
}

enum Outcome {
    Done(JobResult),
    Retry(Job),
}

fn process(job: &Job, source: &dyn RemoteSource, store: &RootedStore, config: &PipelineConfig) -> Outcome {
    let started = Instant::now();
    let result = |status, error_kind, error: Option<String>, merge_report| JobResult {
        job_id: job.job_id.clone(),
        url: job.url.clone(),
        remote_id: job.remote_id.clone(),
        status,
        error_kind,
        error,
        attempt: job.attempt,
        merge_report,
        duration: started.elapsed(),
    };
    let outcome = source
        .fetch(&job.remote_id)
        .map_err(|e| (e.kind(), e.to_string()))
        .and_then(|repo| {
            store.merge(&repo).map_err(|e| match e {
                StoreError::Merge(m) => (ErrorKind::Malformed, m.to_string()),
                other => (ErrorKind::Io, other.to_string()),
            })
        });
    match outcome {
        Ok(report) => {
            info!(
                "{} {} ok in {:.3}s: {} objects added",
                job.job_id,
                job.remote_id,
                started.elapsed().as_secs_f64(),
                report.totals().objects_added
            );
            Outcome::Done(result(JobStatus::Succeeded, ErrorKind::None, None, Some(report)))
        }
        Err((ErrorKind::Io, msg)) if job.attempt <= config.max_retries => {
            warn!("{} {} attempt {} failed, retrying: {msg}", job.job_id, job.remote_id, job.attempt);
            Outcome::Retry(Job { attempt: job.attempt + 1, ..job.clone() })
        }
        Err((ErrorKind::Io, msg)) => {
            warn!("{} {} gave up after {} attempts: {msg}", job.job_id, job.remote_id, job.attempt);
            Outcome::Done(result(JobStatus::FailedRetryable, ErrorKind::Io, Some(msg), None))
        }
        Err((kind, msg)) => {
            warn!("{} {} failed: {msg}", job.job_id, job.remote_id);
            Outcome::Done(result(JobStatus::FailedPermanent, kind, Some(msg), None))
        }
    }
}

/// Runs `config.workers` workers until `queue` is closed and drained.
pub fn consume(queue: &JobQueue, source: &dyn RemoteSource, store: &RootedStore, config: &PipelineConfig) -> PipelineReport {
    let retries = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..config.workers.max(1) {
            let tx = tx.clone();
            let retries = &retries;
            scope.spawn(move || {
                while let Some(job) = queue.pop() {
                    match process(&job, source, store, config) {
                        Outcome::Done(result) => {
                            // The receiver outlives every worker.
                            let _ = tx.send(result);
                        }
                        Outcome::Retry(next) => {
                            retries.fetch_add(1, Ordering::Relaxed);
                            if !config.retry_delay.is_zero() {
                                std::thread::sleep(config.retry_delay);
                            }
                            queue.requeue(next);
                        }
                    }
                    queue.task_done();
                }
            });
        }
    });
    drop(tx);
    let mut results: Vec<JobResult> = rx.into_iter().collect();
    results.sort_by(|a, b| a.job_id.cmp(&b.job_id));
    PipelineReport { results, retries: retries.into_inner() }
}

/// Produces `rows` on a background thread and consumes them.
pub fn run_pipeline(
    rows: &[RepoListRow],
    source: &dyn RemoteSource,
    store: &RootedStore,
    config: &PipelineConfig,
) -> PipelineReport {
    let queue = JobQueue::new(config.queue_capacity);
    std::thread::scope(|scope| {
        scope.spawn(|| {
            let n = produce(rows, &queue);
            debug!("produced {n} jobs");
            queue.close();
        });
        consume(&queue, source, store, config)
    })
}
