//! A directory of rooted-repository archives, one `<root>.siva` per root.
//!
//! Updates append a block holding only the entries that changed since the
//! file was last written, so older blocks are never rewritten. Each file is
//! replaced atomically (temp file and rename). Merges lock only the rooted
//! repositories they touch.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use thiserror::Error;

use crate::object::{ObjectId, Repository};
use crate::rooted::{load_rooted, plan_merge, MergeReport, RootedError, RootedRepository, RootedSet};
use crate::siva::{Archive, ArchiveWriter};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Load {
        path: PathBuf,
        #[source]
        source: RootedError,
    },

    /// The repository could not be merged; nothing was changed.
    #[error(transparent)]
    Merge(RootedError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Loads one `<root>.siva` file, checking that its content matches its name.
pub fn load_rooted_file(path: &Path) -> Result<RootedRepository, StoreError> {
    let load_err = |source| StoreError::Load { path: path.to_owned(), source };
    let file = fs::File::open(path).map_err(|source| StoreError::Io { path: path.to_owned(), source })?;
    let mut archive = Archive::open(io::BufReader::new(file)).map_err(|e| load_err(e.into()))?;
    let rooted = load_rooted(&mut archive).map_err(load_err)?;
    let expected = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if rooted.file_name() != expected {
        return Err(load_err(RootedError::Corrupt(format!(
            "file holds rooted repository {}",
            rooted.root
        ))));
    }
    Ok(rooted)
}

/// Archive files in `dir`, sorted by name.
pub fn archive_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "siva"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every readable archive in `dir`, returning the failures separately.
pub fn load_dir_lenient(dir: &Path) -> io::Result<(RootedSet, Vec<StoreError>)> {
    let mut set = RootedSet::new();
    let mut failures = Vec::new();
    for path in archive_files(dir)? {
        match load_rooted_file(&path) {
            Ok(rooted) => set.insert(rooted),
            Err(e) => failures.push(e),
        }
    }
    Ok((set, failures))
}

struct StoredRoot {
    repo: RootedRepository,
    /// Object entry names present on disk.
    persisted_objects: BTreeSet<String>,
    /// Payloads of the other live entries on disk.
    persisted_other: BTreeMap<String, Vec<u8>>,
}

impl StoredRoot {
    fn fresh(root: ObjectId) -> Self {
        StoredRoot {
            repo: RootedRepository::new(root),
            persisted_objects: BTreeSet::new(),
            persisted_other: BTreeMap::new(),
        }
    }

    fn loaded(repo: RootedRepository) -> Self {
        let mut root = StoredRoot::fresh(repo.root);
        root.mark_persisted(repo.layout_entries());
        root.repo = repo;
        root
    }

    fn mark_persisted(&mut self, entries: Vec<(String, Vec<u8>)>) {
        for (name, payload) in entries {
            if name.starts_with("objects/") {
                self.persisted_objects.insert(name);
            } else {
                self.persisted_other.insert(name, payload);
            }
        }
    }

    /// Entries of `repo` not yet on disk in their current form.
    fn delta(&self, repo: &RootedRepository) -> Vec<(String, Vec<u8>)> {
        repo.layout_entries()
            .into_iter()
            .filter(|(name, payload)| {
                if name.starts_with("objects/") {
                    !self.persisted_objects.contains(name)
                } else {
                    self.persisted_other.get(name) != Some(payload)
                }
            })
            .collect()
    }
}

/// Thread-safe rooted store, optionally backed by a directory.
pub struct RootedStore {
    dir: Option<PathBuf>,
    roots: Mutex<BTreeMap<ObjectId, Arc<Mutex<StoredRoot>>>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl RootedStore {
    pub fn in_memory() -> Self {
        RootedStore { dir: None, roots: Mutex::new(BTreeMap::new()) }
    }

    /// Opens (creating if needed) a store directory. Any unreadable archive
    /// in it is an error.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let io_err = |source| StoreError::Io { path: dir.clone(), source };
        fs::create_dir_all(&dir).map_err(io_err)?;
        let mut roots = BTreeMap::new();
        for path in archive_files(&dir).map_err(io_err)? {
            let rooted = load_rooted_file(&path)?;
            roots.insert(rooted.root, Arc::new(Mutex::new(StoredRoot::loaded(rooted))));
        }
        Ok(RootedStore { dir: Some(dir), roots: Mutex::new(roots) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn slot(&self, root: ObjectId) -> Arc<Mutex<StoredRoot>> {
        lock(&self.roots)
            .entry(root)
            .or_insert_with(|| Arc::new(Mutex::new(StoredRoot::fresh(root))))
            .clone()
    }

    /// Merges `repo` and appends the changes to the affected archives.
    ///
    /// Rooted repositories are locked in root order, so concurrent merges
    /// touching overlapping roots cannot deadlock.
    pub fn merge(&self, repo: &Repository) -> Result<MergeReport, StoreError> {
        let plan = plan_merge(repo).map_err(StoreError::Merge)?;
        let slots: Vec<(ObjectId, Arc<Mutex<StoredRoot>>)> =
            plan.groups.keys().map(|root| (*root, self.slot(*root))).collect();
        let mut guards: Vec<_> = slots.iter().map(|(root, slot)| (*root, lock(slot))).collect();

        let mut report = MergeReport { remote_id: plan.remote_id.clone(), per_root: BTreeMap::new() };
        for (root, guard) in guards.iter_mut() {
            let group = &plan.groups[root];
            let mut updated = guard.repo.clone();
            let stats = updated.apply(&plan.remote_id, group, &repo.objects).map_err(StoreError::Merge)?;
            let delta = guard.delta(&updated);
            if !delta.is_empty() {
                self.append_block(&updated, &delta)?;
            }
            guard.mark_persisted(delta);
            guard.repo = updated;
            report.per_root.insert(*root, stats);
        }
        Ok(report)
    }

    fn append_block(&self, repo: &RootedRepository, entries: &[(String, Vec<u8>)]) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let path = dir.join(repo.file_name());
        let io_err = |source| StoreError::Io { path: path.clone(), source };
        let existing = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(e)),
        };
        let mut writer = ArchiveWriter::new(existing);
        for (name, payload) in entries {
            writer
                .write_entry(name, payload)
                .map_err(|e| StoreError::Merge(RootedError::Archive(e)))?;
        }
        let bytes = writer.finish().map_err(|e| StoreError::Merge(RootedError::Archive(e)))?;
        write_atomic(&path, &bytes).map_err(io_err)
    }

    /// A copy of the current in-memory state.
    pub fn snapshot(&self) -> RootedSet {
        let slots: Vec<_> = lock(&self.roots).values().cloned().collect();
        let mut set = RootedSet::new();
        for slot in slots {
            let guard = lock(&slot);
            if !guard.repo.references.is_empty() {
                set.insert(guard.repo.clone());
            }
        }
        set
    }
}
