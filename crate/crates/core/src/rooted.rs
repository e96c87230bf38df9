//! Rooted repositories: every reference whose history starts at the same
//! root commit lives in one physical repository, whichever remote it came
//! from. References are namespaced per remote so that forks sharing branch
//! names never collide, and objects common to several forks are stored once.
//!
//! A rooted repository is stored as archive entries:
//!
//! * `objects/<2 hex>/<38 hex>`: canonical object bytes;
//! * `refs/...`: the stored reference name, payload `<40 hex>\n`;
//! * `meta/remotes`: remote ids, sorted, one per line;
//! * `meta/default_heads`: `<remote_id>\t<stored ref>\n` lines.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Seek, Write};

use thiserror::Error;

use crate::object::{
    compute_roots, hash_object, reachable_closure, walk_ancestors, Object, ObjectError, ObjectId,
    ObjectKind, ObjectStore, Reference, Repository,
};
use crate::siva::{Archive, ArchiveError, ArchiveWriter};

pub const REMOTES_ENTRY: &str = "meta/remotes";
pub const DEFAULT_HEADS_ENTRY: &str = "meta/default_heads";

/// Length of the per-remote suffix appended to stored reference names.
pub const SUFFIX_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum RootedError {
    #[error("invalid remote id {0:?}")]
    InvalidRemote(String),

    #[error("malformed history: {0}")]
    MalformedHistory(String),

    #[error("invalid repository: {0}")]
    Repository(#[source] ObjectError),

    #[error("rooted repository format error: {0}")]
    Format(String),

    #[error("corrupt rooted repository: {0}")]
    Corrupt(String),

    #[error("object stored at {path} hashes to {actual}")]
    Identity { path: String, actual: String },

    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

pub type Result<T, E = RootedError> = std::result::Result<T, E>;

/// Normalizes a repository URL into a remote id: the scheme and any user
/// part are dropped, the host is lowercased and trailing slashes removed.
///
/// `https://GitHub.com/a/b/` and `git@github.com:a/b` both become
/// `github.com/a/b`.
pub fn canonicalize_remote(url: &str) -> Result<String> {
    let url = url.trim();
    let rest = match url.split_once("://") {
        Some((_, rest)) => rest.to_owned(),
        // scp-like `user@host:owner/repo`
        None => match (url.find(':'), url.find('/')) {
            (Some(colon), slash) if slash.is_none_or(|s| colon < s) => {
                format!("{}/{}", &url[..colon], &url[colon + 1..])
            }
            _ => url.to_owned(),
        },
    };
    let (host, path) = rest.split_at(rest.find('/').unwrap_or(rest.len()));
    let host = host.rsplit_once('@').map_or(host, |(_, h)| h);
    let id = format!("{}{}", host.to_ascii_lowercase(), path.trim_end_matches('/'));
    if host.is_empty() || id.contains(['\n', '\t', '\0']) {
        return Err(RootedError::InvalidRemote(url.to_owned()));
    }
    Ok(id)
}

/// First 64 bits of the object digest of `remote_id` (hashed as a blob),
/// as 16 lowercase hex characters.
pub fn remote_suffix(remote_id: &str) -> Result<String> {
    if remote_id.is_empty() {
        return Err(RootedError::InvalidRemote(String::new()));
    }
    let mut hex = hash_object(ObjectKind::Blob, remote_id.as_bytes()).to_hex();
    hex.truncate(SUFFIX_LEN);
    Ok(hex)
}

/// A reference name qualified by the remote it came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StoredRefName {
    pub original: String,
    pub remote_suffix: String,
}

impl StoredRefName {
    pub fn new(original: impl Into<String>, remote_id: &str) -> Result<Self> {
        Ok(StoredRefName { original: original.into(), remote_suffix: remote_suffix(remote_id)? })
    }

    /// Splits a stored name; `None` if it does not end with a suffix.
    pub fn parse(stored: &str) -> Option<Self> {
        let cut = stored.len().checked_sub(SUFFIX_LEN + 1)?;
        let (original, tail) = stored.split_at(cut);
        let suffix = tail.strip_prefix('/')?;
        if original.is_empty() || !suffix.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return None;
        }
        Some(StoredRefName { original: original.to_owned(), remote_suffix: suffix.to_owned() })
    }
}

impl std::fmt::Display for StoredRefName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.original, self.remote_suffix)
    }
}

/// Picks the rooted repository for a reference: the smallest root id.
pub fn assign_reference<'a>(roots: impl IntoIterator<Item = &'a ObjectId>) -> Result<ObjectId> {
    roots
        .into_iter()
        .min()
        .copied()
        .ok_or_else(|| RootedError::MalformedHistory("reference has no root commit".into()))
}

/// Per rooted repository outcome of one merge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RootMergeStats {
    /// Objects copied in because the rooted repository lacked them.
    pub objects_added: usize,
    /// Objects needed by new or moved references that were already present.
    pub objects_shared: usize,
    /// References created or moved.
    pub refs_added: usize,
}

impl RootMergeStats {
    pub fn is_zero(&self) -> bool {
        *self == RootMergeStats::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeReport {
    pub remote_id: String,
    pub per_root: BTreeMap<ObjectId, RootMergeStats>,
}

impl MergeReport {
    pub fn totals(&self) -> RootMergeStats {
        self.per_root.values().fold(RootMergeStats::default(), |acc, s| RootMergeStats {
            objects_added: acc.objects_added + s.objects_added,
            objects_shared: acc.objects_shared + s.objects_shared,
            refs_added: acc.refs_added + s.refs_added,
        })
    }

    pub fn is_zero(&self) -> bool {
        self.per_root.values().all(RootMergeStats::is_zero)
    }
}

/// References of one repository destined for one rooted repository.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlannedGroup {
    /// `(stored name, target)` pairs.
    pub refs: Vec<(String, ObjectId)>,
    /// Stored name of the remote's default branch, if it lands here.
    pub default_head: Option<String>,
}

/// Where each reference of a repository goes. Computing a plan validates
/// the repository, so applying it cannot fail halfway.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergePlan {
    pub remote_id: String,
    pub groups: BTreeMap<ObjectId, PlannedGroup>,
}

pub fn plan_merge(repo: &Repository) -> Result<MergePlan> {
    repo.validate().map_err(|e| match e {
        ObjectError::MalformedHistory(m) => RootedError::MalformedHistory(m),
        other => RootedError::Repository(other),
    })?;
    let mut groups: BTreeMap<ObjectId, PlannedGroup> = BTreeMap::new();
    for reference in &repo.references {
        let roots = compute_roots(&repo.objects, &reference.target).map_err(RootedError::Repository)?;
        let root = assign_reference(&roots)?;
        let stored = StoredRefName::new(reference.name.clone(), &repo.remote_id)?.to_string();
        let group = groups.entry(root).or_default();
        if reference.name == repo.default_branch {
            group.default_head = Some(stored.clone());
        }
        group.refs.push((stored, reference.target));
    }
    Ok(MergePlan { remote_id: repo.remote_id.clone(), groups })
}

/// All references from any remote whose histories share one root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootedRepository {
    pub root: ObjectId,
    pub objects: ObjectStore,
    /// Stored reference name to target commit.
    pub references: BTreeMap<String, ObjectId>,
    pub remotes: BTreeSet<String>,
    /// Remote id to the stored name of its default branch.
    pub default_heads: BTreeMap<String, String>,
}

impl RootedRepository {
    pub fn new(root: ObjectId) -> Self {
        RootedRepository {
            root,
            objects: ObjectStore::new(),
            references: BTreeMap::new(),
            remotes: BTreeSet::new(),
            default_heads: BTreeMap::new(),
        }
    }

    pub fn fork_count(&self) -> usize {
        self.remotes.len()
    }

    /// Archive file name for this rooted repository.
    pub fn file_name(&self) -> String {
        format!("{}.siva", self.root)
    }

    /// Stored references belonging to `remote_id`.
    pub fn refs_for_remote(&self, remote_id: &str) -> Vec<Reference> {
        let Ok(suffix) = remote_suffix(remote_id) else {
            return Vec::new();
        };
        self.references
            .iter()
            .filter(|(name, _)| StoredRefName::parse(name).is_some_and(|s| s.remote_suffix == suffix))
            .map(|(name, target)| Reference { name: name.clone(), target: *target })
            .collect()
    }

    /// Applies one group of a plan. `source` must be the store the plan
    /// was computed from.
    pub fn apply(
        &mut self,
        remote_id: &str,
        group: &PlannedGroup,
        source: &ObjectStore,
    ) -> Result<RootMergeStats> {
        let changed: Vec<&(String, ObjectId)> = group
            .refs
            .iter()
            .filter(|(name, target)| self.references.get(name) != Some(target))
            .collect();
        let needed = reachable_closure(source, changed.iter().map(|(_, t)| t))
            .map_err(RootedError::Repository)?;
        let mut stats = RootMergeStats { refs_added: changed.len(), ..Default::default() };
        for id in &needed {
            if self.objects.contains(id) {
                stats.objects_shared += 1;
            } else {
                stats.objects_added += 1;
            }
        }
        for id in &needed {
            self.objects.copy_from(source, id).map_err(RootedError::Repository)?;
        }
        for (name, target) in changed {
            self.references.insert(name.clone(), *target);
        }
        self.remotes.insert(remote_id.to_owned());
        if let Some(head) = &group.default_head {
            self.default_heads.insert(remote_id.to_owned(), head.clone());
        }
        Ok(stats)
    }

    /// The archive entries of this repository, in write order.
    pub fn layout_entries(&self) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::with_capacity(self.objects.len() + self.references.len() + 2);
        for (id, obj) in self.objects.iter() {
            out.push((object_entry_name(id), obj.serialize()));
        }
        for (name, target) in &self.references {
            out.push((name.clone(), format!("{target}\n").into_bytes()));
        }
        let heads: String = self.default_heads.iter().map(|(r, h)| format!("{r}\t{h}\n")).collect();
        out.push((DEFAULT_HEADS_ENTRY.to_owned(), heads.into_bytes()));
        let remotes: String = self.remotes.iter().map(|r| format!("{r}\n")).collect();
        out.push((REMOTES_ENTRY.to_owned(), remotes.into_bytes()));
        out
    }

    /// Checks the closure, root and naming invariants.
    pub fn validate(&self) -> Result<()> {
        reachable_closure(&self.objects, self.references.values()).map_err(|e| match e {
            ObjectError::ClosureViolation { missing } => {
                RootedError::Corrupt(format!("object {missing} is referenced but missing"))
            }
            other => RootedError::Corrupt(other.to_string()),
        })?;
        let suffixes: BTreeSet<String> =
            self.remotes.iter().map(|r| remote_suffix(r)).collect::<Result<_>>()?;
        for (name, target) in &self.references {
            let stored = StoredRefName::parse(name)
                .ok_or_else(|| RootedError::Corrupt(format!("reference {name:?} has no remote suffix")))?;
            if !suffixes.contains(&stored.remote_suffix) {
                return Err(RootedError::Corrupt(format!("reference {name:?} belongs to no known remote")));
            }
            let roots = compute_roots(&self.objects, target).map_err(|e| RootedError::Corrupt(e.to_string()))?;
            if assign_reference(&roots)? != self.root {
                return Err(RootedError::Corrupt(format!(
                    "reference {name:?} belongs to another rooted repository"
                )));
            }
        }
        for (remote, head) in &self.default_heads {
            if !self.remotes.contains(remote) {
                return Err(RootedError::Corrupt(format!("default head for unknown remote {remote:?}")));
            }
            if !self.references.contains_key(head) {
                return Err(RootedError::Corrupt(format!("dangling default head {head:?}")));
            }
        }
        Ok(())
    }
}

pub fn object_entry_name(id: &ObjectId) -> String {
    let hex = id.to_hex();
    format!("objects/{}/{}", &hex[..2], &hex[2..])
}

/// Writes every entry of `rooted` into the writer's current block and
/// returns the entry names in write order. The caller finishes the block.
pub fn serialize_rooted<W: Write>(rooted: &RootedRepository, writer: &mut ArchiveWriter<W>) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for (name, payload) in rooted.layout_entries() {
        writer.write_entry(&name, &payload)?;
        names.push(name);
    }
    Ok(names)
}

/// Serializes `rooted` as a complete single-block archive.
pub fn rooted_to_archive_bytes(rooted: &RootedRepository) -> Result<Vec<u8>> {
    let mut writer = ArchiveWriter::new(Vec::new());
    serialize_rooted(rooted, &mut writer)?;
    Ok(writer.finish()?)
}

fn utf8(name: &str, bytes: Vec<u8>) -> Result<String> {
    String::from_utf8(bytes).map_err(|_| RootedError::Format(format!("{name} is not UTF-8")))
}

fn parse_target(name: &str, payload: Vec<u8>) -> Result<ObjectId> {
    let text = utf8(name, payload)?;
    text.strip_suffix('\n')
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| RootedError::Format(format!("reference {name:?} does not hold an object id")))
}

/// Parses an `objects/xx/yyyy` entry, checking the content against the path.
pub fn parse_object_entry(name: &str, payload: &[u8]) -> Result<(ObjectId, Object)> {
    let hex: String = name
        .strip_prefix("objects/")
        .and_then(|rest| rest.split_once('/'))
        .filter(|(a, b)| a.len() == 2 && b.len() == 38)
        .map(|(a, b)| format!("{a}{b}"))
        .ok_or_else(|| RootedError::Format(format!("bad object entry name {name:?}")))?;
    let id: ObjectId = hex
        .parse()
        .map_err(|_| RootedError::Format(format!("bad object entry name {name:?}")))?;
    match Object::parse_with_id(&id, payload) {
        Some(Ok(obj)) => Ok((id, obj)),
        Some(Err(e)) => Err(RootedError::Format(format!("{name}: {e}"))),
        None => Err(RootedError::Identity {
            path: name.to_owned(),
            actual: ObjectKind::ALL
                .iter()
                .map(|k| format!("{k}:{}", hash_object(*k, payload)))
                .collect::<Vec<_>>()
                .join(","),
        }),
    }
}

/// Rebuilds a rooted repository from the live entries of an archive.
pub fn load_rooted<R: Read + Seek>(archive: &mut Archive<R>) -> Result<RootedRepository> {
    let records: Vec<_> = archive.resolved().values().cloned().collect();
    let mut objects = ObjectStore::new();
    let mut references = BTreeMap::new();
    let mut remotes = None;
    let mut default_heads = None;
    for record in records {
        let name = record.name.clone();
        let payload = archive.read(&record)?;
        if name.starts_with("objects/") {
            let (id, obj) = parse_object_entry(&name, &payload)?;
            objects.insert_verified(id, obj);
        } else if name.starts_with("refs/") {
            references.insert(name.clone(), parse_target(&name, payload)?);
        } else if name == REMOTES_ENTRY {
            let text = utf8(&name, payload)?;
            remotes = Some(text.lines().map(str::to_owned).collect::<BTreeSet<_>>());
        } else if name == DEFAULT_HEADS_ENTRY {
            let text = utf8(&name, payload)?;
            let mut heads = BTreeMap::new();
            for line in text.lines() {
                let (remote, head) = line
                    .split_once('\t')
                    .ok_or_else(|| RootedError::Format(format!("bad default head line {line:?}")))?;
                heads.insert(remote.to_owned(), head.to_owned());
            }
            default_heads = Some(heads);
        } else {
            return Err(RootedError::Format(format!("unexpected entry {name:?}")));
        }
    }
    let remotes = remotes.ok_or_else(|| RootedError::Format(format!("missing {REMOTES_ENTRY}")))?;
    let default_heads =
        default_heads.ok_or_else(|| RootedError::Format(format!("missing {DEFAULT_HEADS_ENTRY}")))?;

    let mut root = None;
    for (name, target) in &references {
        let roots = match compute_roots(&objects, target) {
            Ok(r) => r,
            Err(ObjectError::ClosureViolation { missing }) => {
                return Err(RootedError::Corrupt(format!("reference {name:?} needs missing object {missing}")))
            }
            Err(e) => return Err(RootedError::Corrupt(e.to_string())),
        };
        let assigned = assign_reference(&roots)?;
        match root {
            None => root = Some(assigned),
            Some(r) if r != assigned => {
                return Err(RootedError::Corrupt("references from different roots".into()))
            }
            Some(_) => {}
        }
    }
    let root = root.ok_or_else(|| RootedError::Format("no references".into()))?;
    let rooted = RootedRepository { root, objects, references, remotes, default_heads };
    rooted.validate()?;
    Ok(rooted)
}

/// In-memory collection of rooted repositories keyed by root.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RootedSet {
    repos: BTreeMap<ObjectId, RootedRepository>,
}

impl RootedSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Merges every reference of `repo` into the rooted repository of its
    /// root. On error nothing is changed.
    pub fn merge_repository(&mut self, repo: &Repository) -> Result<MergeReport> {
        let plan = plan_merge(repo)?;
        let mut report = MergeReport { remote_id: plan.remote_id.clone(), per_root: BTreeMap::new() };
        for (root, group) in &plan.groups {
            let rooted = self.repos.entry(*root).or_insert_with(|| RootedRepository::new(*root));
            let stats = rooted.apply(&plan.remote_id, group, &repo.objects)?;
            report.per_root.insert(*root, stats);
        }
        Ok(report)
    }

    pub fn insert(&mut self, rooted: RootedRepository) {
        self.repos.insert(rooted.root, rooted);
    }

    pub fn get(&self, root: &ObjectId) -> Option<&RootedRepository> {
        self.repos.get(root)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RootedRepository> {
        self.repos.values()
    }

    pub fn len(&self) -> usize {
        self.repos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.repos.is_empty()
    }

    /// Rooted repositories that hold at least one reference of `remote_id`.
    pub fn holding_remote<'a>(&'a self, remote_id: &'a str) -> impl Iterator<Item = &'a RootedRepository> + 'a {
        self.repos.values().filter(move |r| r.remotes.contains(remote_id))
    }

    pub fn total_objects(&self) -> usize {
        self.repos.values().map(|r| r.objects.len()).sum()
    }

    /// Each rooted repository serialized as a fresh single-block archive,
    /// keyed by file name.
    pub fn canonical_archives(&self) -> Result<BTreeMap<String, Vec<u8>>> {
        self.repos
            .values()
            .map(|r| Ok((r.file_name(), rooted_to_archive_bytes(r)?)))
            .collect()
    }

    /// All commits reachable from the given references across every rooted
    /// repository.
    pub fn commits_reachable(&self, remote_id: &str) -> Result<BTreeSet<ObjectId>> {
        let mut all = BTreeSet::new();
        for rooted in self.holding_remote(remote_id) {
            let heads: Vec<_> = rooted.refs_for_remote(remote_id).iter().map(|r| r.target).collect();
            let walk = walk_ancestors(&rooted.objects, &heads).map_err(|e| RootedError::Corrupt(e.to_string()))?;
            all.extend(walk.commits);
        }
        Ok(all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::object::{Blob, Commit, EntryKind, Tree, TreeEntry};
    use std::io::Cursor;

    fn commit_with_files(s: &mut ObjectStore, parents: &[ObjectId], files: &[(&str, &str)], msg: &str) -> ObjectId {
        let entries = files
            .iter()
            .map(|(n, c)| TreeEntry { name: (*n).into(), kind: EntryKind::Blob, id: s.put(Blob::new(*c)) })
            .collect();
        let tree = s.put(Tree::new(entries).unwrap());
        s.put(Commit { tree, parents: parents.to_vec(), author: "dev".into(), timestamp: 1, message: msg.into() })
    }

    /// Origin with three commits on master, each adding a file.
    fn origin() -> Repository {
        let mut s = ObjectStore::new();
        let c0 = commit_with_files(&mut s, &[], &[("a", "1")], "c0");
        let c1 = commit_with_files(&mut s, &[c0], &[("a", "1"), ("b", "2")], "c1");
        let c2 = commit_with_files(&mut s, &[c1], &[("a", "1"), ("b", "2"), ("c", "3")], "c2");
        Repository {
            remote_id: "github.com/o/r".into(),
            default_branch: "refs/heads/master".into(),
            objects: s,
            references: vec![Reference::new("refs/heads/master", c2).unwrap()],
        }
    }

    #[test]
    fn canonical_remotes() {
        assert_eq!(canonicalize_remote("https://GitHub.com/a/b/").unwrap(), "github.com/a/b");
        assert_eq!(canonicalize_remote("git://github.com/a/b").unwrap(), "github.com/a/b");
        assert_eq!(canonicalize_remote("git@github.com:a/b").unwrap(), "github.com/a/b");
        assert_eq!(canonicalize_remote("github.com/a/b").unwrap(), "github.com/a/b");
        assert_eq!(canonicalize_remote("https://user@Host.org:8080/x").unwrap(), "host.org:8080/x");
        assert!(canonicalize_remote("  ").is_err());
    }

    #[test]
    fn suffixes() {
        // sha1("blob 14\0github.com/a/b")[..16], computed with an external digest tool.
        assert_eq!(remote_suffix("github.com/a/b").unwrap(), "06bb14643743b0c8");
        assert_eq!(remote_suffix("github.com/a/b").unwrap(), remote_suffix("github.com/a/b").unwrap());
        assert_ne!(remote_suffix("github.com/a/b").unwrap(), remote_suffix("github.com/a/b2").unwrap());
        assert!(matches!(remote_suffix(""), Err(RootedError::InvalidRemote(_))));
    }

    #[test]
    fn stored_names_round_trip() {
        let n = StoredRefName::new("refs/heads/feature/x", "github.com/a/b").unwrap();
        let s = n.to_string();
        assert_eq!(s, "refs/heads/feature/x/06bb14643743b0c8");
        assert_eq!(StoredRefName::parse(&s), Some(n));
        assert_eq!(StoredRefName::parse("refs/heads/master"), None);
    }

    #[test]
    fn assignment_picks_smallest_root() {
        let lo: ObjectId = format!("0a{}", "0".repeat(38)).parse().unwrap();
        let hi: ObjectId = format!("ff{}", "0".repeat(38)).parse().unwrap();
        assert_eq!(assign_reference(&[hi]).unwrap(), hi);
        assert_eq!(assign_reference(&[lo, hi]).unwrap(), lo);
        assert_eq!(assign_reference(&[hi, lo]).unwrap(), lo);
        assert!(matches!(assign_reference(&[]), Err(RootedError::MalformedHistory(_))));
    }

    #[test]
    fn identical_fork_adds_only_refs() {
        let o = origin();
        let mut fork = o.clone();
        fork.remote_id = "github.com/f/r".into();
        let mut set = RootedSet::new();
        let first = set.merge_repository(&o).unwrap();
        assert_eq!(first.totals().objects_added, o.objects.len());
        let report = set.merge_repository(&fork).unwrap();
        let t = report.totals();
        assert_eq!((t.objects_added, t.refs_added), (0, 1));
        assert_eq!(t.objects_shared, o.objects.len());
        let rooted = set.iter().next().unwrap();
        assert_eq!(rooted.fork_count(), 2);
        assert_eq!(set.merge_repository(&fork).unwrap().totals(), RootMergeStats::default());
        assert_eq!(set.iter().next().unwrap().fork_count(), 2);
    }

    #[test]
    fn fork_with_one_extra_commit() {
        let o = origin();
        let mut fork = o.clone();
        fork.remote_id = "github.com/f/r".into();
        let tip = o.references[0].target;
        let extra = commit_with_files(
            &mut fork.objects,
            &[tip],
            &[("a", "1"), ("b", "2"), ("c", "3"), ("d", "4")],
            "fork",
        );
        fork.references[0].target = extra;
        let mut set = RootedSet::new();
        set.merge_repository(&o).unwrap();
        let t = set.merge_repository(&fork).unwrap().totals();
        // new commit, its tree, and blob "4"
        assert_eq!(t.objects_added, 3);
        assert_eq!(set.total_objects(), o.objects.len() + 3);
        assert!(set.merge_repository(&fork).unwrap().is_zero());
        assert!(set.merge_repository(&o).unwrap().is_zero());
    }

    #[test]
    fn closure_violation_leaves_set_untouched() {
        let mut broken = origin();
        let ghost = hash_object(ObjectKind::Commit, b"ghost");
        let bad = commit_with_files(&mut broken.objects, &[ghost], &[], "bad");
        broken.references.push(Reference::new("refs/heads/bad", bad).unwrap());
        let mut set = RootedSet::new();
        assert!(matches!(set.merge_repository(&broken), Err(RootedError::Repository(_))));
        assert!(set.is_empty());
    }

    #[test]
    fn serialize_counts_and_round_trips() {
        let mut s = ObjectStore::new();
        let c0 = commit_with_files(&mut s, &[], &[("x", "1"), ("y", "2")], "c0");
        assert_eq!(s.len(), 4);
        let repo = Repository {
            remote_id: "github.com/o/r".into(),
            default_branch: "refs/heads/master".into(),
            objects: s,
            references: vec![
                Reference::new("refs/heads/master", c0).unwrap(),
                Reference::new("refs/tags/v1", c0).unwrap(),
            ],
        };
        let mut set = RootedSet::new();
        set.merge_repository(&repo).unwrap();
        let rooted = set.iter().next().unwrap();
        let mut w = ArchiveWriter::new(Vec::new());
        let names = serialize_rooted(rooted, &mut w).unwrap();
        assert_eq!(names.len(), 4 + 2 + 2);
        let bytes = w.finish().unwrap();
        assert_eq!(bytes, rooted_to_archive_bytes(rooted).unwrap());

        let mut archive = Archive::open(Cursor::new(&bytes)).unwrap();
        assert_eq!(load_rooted(&mut archive).unwrap(), *rooted);

        let heads = archive.read_by_name(DEFAULT_HEADS_ENTRY).unwrap().unwrap();
        let suffix = remote_suffix("github.com/o/r").unwrap();
        assert_eq!(
            String::from_utf8(heads).unwrap(),
            format!("github.com/o/r\trefs/heads/master/{suffix}\n")
        );
    }

    fn rewrite(bytes: &[u8], f: impl Fn(&str, Vec<u8>) -> Option<(String, Vec<u8>)>) -> Vec<u8> {
        let mut archive = Archive::open(Cursor::new(bytes)).unwrap();
        let records: Vec<_> = archive.resolved().values().cloned().collect();
        let mut w = ArchiveWriter::new(Vec::new());
        for r in records {
            let payload = archive.read(&r).unwrap();
            if let Some((n, p)) = f(&r.name, payload) {
                w.write_entry(&n, &p).unwrap();
            }
        }
        w.finish().unwrap()
    }

    fn load(bytes: &[u8]) -> Result<RootedRepository> {
        load_rooted(&mut Archive::open(Cursor::new(bytes)).unwrap())
    }

    #[test]
    fn load_rejects_damaged_layouts() {
        let mut set = RootedSet::new();
        set.merge_repository(&origin()).unwrap();
        let good = rooted_to_archive_bytes(set.iter().next().unwrap()).unwrap();

        let no_meta = rewrite(&good, |n, p| (n != REMOTES_ENTRY).then(|| (n.to_owned(), p)));
        assert!(matches!(load(&no_meta), Err(RootedError::Format(_))));

        // Move one blob to a path that does not match its hash.
        let blob_path = object_entry_name(&hash_object(ObjectKind::Blob, b"1"));
        let wrong = object_entry_name(&hash_object(ObjectKind::Blob, b"not it"));
        let renamed = rewrite(&good, |n, p| Some((if n == blob_path { wrong.clone() } else { n.to_owned() }, p)));
        assert!(matches!(load(&renamed), Err(RootedError::Identity { .. })));

        let ghost = hash_object(ObjectKind::Commit, b"ghost");
        let dangling = rewrite(&good, |n, p| {
            Some((n.to_owned(), if n.starts_with("refs/") { format!("{ghost}\n").into_bytes() } else { p }))
        });
        assert!(matches!(load(&dangling), Err(RootedError::Corrupt(_))));
    }

    #[test]
    fn merge_order_does_not_matter_for_disjoint_remotes() {
        let o = origin();
        let mut f1 = o.clone();
        f1.remote_id = "github.com/f1/r".into();
        let mut f2 = o.clone();
        f2.remote_id = "github.com/f2/r".into();
        let extra = commit_with_files(&mut f2.objects, &[o.references[0].target], &[("z", "9")], "f2");
        f2.references.push(Reference::new("refs/pull/1/head", extra).unwrap());

        let mut a = RootedSet::new();
        for r in [&o, &f1, &f2] {
            a.merge_repository(r).unwrap();
        }
        let mut b = RootedSet::new();
        for r in [&f2, &o, &f1] {
            b.merge_repository(r).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(a.canonical_archives().unwrap(), b.canonical_archives().unwrap());
    }
}
