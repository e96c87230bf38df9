//! Content-addressed objects and commit graph traversal.
//!
//! Objects use a small line-oriented canonical encoding:
//!
//! * blob: the raw content;
//! * tree: one `"<kind> <name> <id>\n"` line per entry, sorted by name;
//! * commit: `tree <id>`, one `parent <id>` per parent, `author <name>`,
//!   `time <seconds>`, an empty line, then the message.
//!
//! An object's id is the SHA-1 of `"<kind> <len>\0"` followed by the
//! canonical bytes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use sha1::{Digest, Sha1};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ObjectError {
    #[error("object {0} not found")]
    NotFound(ObjectId),

    #[error("object {missing} is referenced but missing")]
    ClosureViolation { missing: ObjectId },

    #[error("malformed history: {0}")]
    MalformedHistory(String),

    #[error("cannot parse {kind} object: {reason}")]
    Parse { kind: ObjectKind, reason: String },

    #[error("invalid object id {0:?}")]
    InvalidId(String),

    #[error("invalid reference: {0}")]
    InvalidReference(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),
}

pub type Result<T, E = ObjectError> = std::result::Result<T, E>;

/// A 160-bit object digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId([u8; 20]);

impl ObjectId {
    pub const LEN: usize = 20;

    pub fn from_bytes(bytes: [u8; 20]) -> Self {
        ObjectId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ObjectId({})", self.to_hex())
    }
}

impl FromStr for ObjectId {
    type Err = ObjectError;

    /// Only the canonical lowercase form is accepted.
    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 40 || s.bytes().any(|b| !matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(ObjectError::InvalidId(s.to_owned()));
        }
        let mut out = [0u8; 20];
        hex::decode_to_slice(s, &mut out).map_err(|_| ObjectError::InvalidId(s.to_owned()))?;
        Ok(ObjectId(out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObjectKind {
    Blob,
    Tree,
    Commit,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 3] = [ObjectKind::Blob, ObjectKind::Tree, ObjectKind::Commit];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Blob => "blob",
            ObjectKind::Tree => "tree",
            ObjectKind::Commit => "commit",
        }
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Digest of `"<kind> <len>\0" + bytes`.
pub fn hash_object(kind: ObjectKind, bytes: &[u8]) -> ObjectId {
    let mut hasher = Sha1::new();
    hasher.update(format!("{} {}\0", kind.as_str(), bytes.len()).as_bytes());
    hasher.update(bytes);
    ObjectId(hasher.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blob {
    pub content: Vec<u8>,
}

impl Blob {
    pub fn new(content: impl Into<Vec<u8>>) -> Self {
        Blob { content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntryKind {
    Blob,
    Tree,
}

impl EntryKind {
    fn as_str(self) -> &'static str {
        match self {
            EntryKind::Blob => "blob",
            EntryKind::Tree => "tree",
        }
    }

    pub fn object_kind(self) -> ObjectKind {
        match self {
            EntryKind::Blob => ObjectKind::Blob,
            EntryKind::Tree => ObjectKind::Tree,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeEntry {
    pub name: String,
    pub kind: EntryKind,
    pub id: ObjectId,
}

/// A directory listing, kept sorted by name bytes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Tree {
    entries: Vec<TreeEntry>,
}

fn valid_entry_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && !name.contains(['/', '\n', '\0'])
}

impl Tree {
    /// Builds a tree from entries in any order.
    pub fn new(mut entries: Vec<TreeEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.name.as_bytes().cmp(b.name.as_bytes()));
        for e in &entries {
            if !valid_entry_name(&e.name) {
                return Err(ObjectError::InvalidTree(format!("bad entry name {:?}", e.name)));
            }
        }
        if let Some(w) = entries.windows(2).find(|w| w[0].name == w[1].name) {
            return Err(ObjectError::InvalidTree(format!("duplicate entry {:?}", w[0].name)));
        }
        Ok(Tree { entries })
    }

    pub fn entries(&self) -> &[TreeEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&TreeEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Commit {
    pub tree: ObjectId,
    pub parents: Vec<ObjectId>,
    pub author: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Object {
    Blob(Blob),
    Tree(Tree),
    Commit(Commit),
}

impl From<Blob> for Object {
    fn from(b: Blob) -> Self {
        Object::Blob(b)
    }
}

impl From<Tree> for Object {
    fn from(t: Tree) -> Self {
        Object::Tree(t)
    }
}

impl From<Commit> for Object {
    fn from(c: Commit) -> Self {
        Object::Commit(c)
    }
}

impl Object {
    pub fn kind(&self) -> ObjectKind {
        match self {
            Object::Blob(_) => ObjectKind::Blob,
            Object::Tree(_) => ObjectKind::Tree,
            Object::Commit(_) => ObjectKind::Commit,
        }
    }

    pub fn serialize(&self) -> Vec<u8> {
        match self {
            Object::Blob(b) => b.content.clone(),
            Object::Tree(t) => {
                let mut out = String::new();
                for e in &t.entries {
                    out.push_str(&format!("{} {} {}\n", e.kind.as_str(), e.name, e.id));
                }
                out.into_bytes()
            }
            Object::Commit(c) => {
                let mut out = format!("tree {}\n", c.tree);
                for p in &c.parents {
                    out.push_str(&format!("parent {p}\n"));
                }
                out.push_str(&format!("author {}\ntime {}\n\n", c.author, c.timestamp));
                out.push_str(&c.message);
                out.into_bytes()
            }
        }
    }

    pub fn id(&self) -> ObjectId {
        hash_object(self.kind(), &self.serialize())
    }

    /// Parses canonical bytes. Parsing is strict: the result always
    /// re-serializes to exactly `bytes`.
    pub fn parse(kind: ObjectKind, bytes: &[u8]) -> Result<Self> {
        let err = |reason: &str| ObjectError::Parse { kind, reason: reason.to_owned() };
        let obj = match kind {
            ObjectKind::Blob => Object::Blob(Blob::new(bytes)),
            ObjectKind::Tree => {
                let text = std::str::from_utf8(bytes).map_err(|_| err("not UTF-8"))?;
                if !text.is_empty() && !text.ends_with('\n') {
                    return Err(err("missing final newline"));
                }
                let mut entries = Vec::new();
                for line in text.lines() {
                    let (kind_str, rest) = line.split_once(' ').ok_or_else(|| err("bad entry line"))?;
                    let (name, id) = rest.rsplit_once(' ').ok_or_else(|| err("bad entry line"))?;
                    let kind = match kind_str {
                        "blob" => EntryKind::Blob,
                        "tree" => EntryKind::Tree,
                        _ => return Err(err("unknown entry kind")),
                    };
                    entries.push(TreeEntry { name: name.to_owned(), kind, id: id.parse()? });
                }
                if entries.windows(2).any(|w| w[0].name.as_bytes() >= w[1].name.as_bytes()) {
                    return Err(err("entries not strictly sorted"));
                }
                Object::Tree(Tree::new(entries)?)
            }
            ObjectKind::Commit => {
                let text = std::str::from_utf8(bytes).map_err(|_| err("not UTF-8"))?;
                let (header, message) = text.split_once("\n\n").ok_or_else(|| err("missing message separator"))?;
                let mut lines = header.split('\n');
                let tree = lines
                    .next()
                    .and_then(|l| l.strip_prefix("tree "))
                    .ok_or_else(|| err("missing tree line"))?
                    .parse()?;
                let mut parents = Vec::new();
                let mut line = lines.next().ok_or_else(|| err("missing author line"))?;
                while let Some(p) = line.strip_prefix("parent ") {
                    parents.push(p.parse()?);
                    line = lines.next().ok_or_else(|| err("missing author line"))?;
                }
                let author = line.strip_prefix("author ").ok_or_else(|| err("missing author line"))?;
                let timestamp = lines
                    .next()
                    .and_then(|l| l.strip_prefix("time "))
                    .ok_or_else(|| err("missing time line"))?
                    .parse::<i64>()
                    .map_err(|_| err("bad timestamp"))?;
                if lines.next().is_some() {
                    return Err(err("unexpected header line"));
                }
                let commit = Commit {
                    tree,
                    parents,
                    author: author.to_owned(),
                    timestamp,
                    message: message.to_owned(),
                };
                let obj = Object::Commit(commit);
                if obj.serialize() != bytes {
                    return Err(err("not in canonical form"));
                }
                obj
            }
        };
        Ok(obj)
    }

    /// Parses bytes whose kind is unknown but whose id is known, by finding
    /// the kind under which the bytes hash to `id`.
    pub fn parse_with_id(id: &ObjectId, bytes: &[u8]) -> Option<Result<Self>> {
        ObjectKind::ALL
            .into_iter()
            .find(|k| hash_object(*k, bytes) == *id)
            .map(|k| Object::parse(k, bytes))
    }

    pub fn as_commit(&self) -> Option<&Commit> {
        match self {
            Object::Commit(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_tree(&self) -> Option<&Tree> {
        match self {
            Object::Tree(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_blob(&self) -> Option<&Blob> {
        match self {
            Object::Blob(b) => Some(b),
            _ => None,
        }
    }
}

/// A named pointer to a commit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reference {
    pub name: String,
    pub target: ObjectId,
}

/// Checks that `name` starts with `refs/` and has no empty segment.
pub fn validate_ref_name(name: &str) -> Result<()> {
    let ok = name.starts_with("refs/")
        && name.split('/').all(|seg| !seg.is_empty() && seg != "." && seg != "..")
        && !name.contains(['\0', '\n', '\t']);
    if ok {
        Ok(())
    } else {
        Err(ObjectError::InvalidReference(format!("bad reference name {name:?}")))
    }
}

impl Reference {
    pub fn new(name: impl Into<String>, target: ObjectId) -> Result<Self> {
        let name = name.into();
        validate_ref_name(&name)?;
        Ok(Reference { name, target })
    }
}

/// An in-memory content-addressed object set.
///
/// Objects are immutable once stored; the store can be shared between
/// threads for reading.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObjectStore {
    objects: BTreeMap<ObjectId, Object>,
}

impl ObjectStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `object` and returns its id. Storing the same content twice is
    /// a no-op.
    pub fn put(&mut self, object: impl Into<Object>) -> ObjectId {
        let object = object.into();
        let id = object.id();
        self.objects.entry(id).or_insert(object);
        id
    }

    /// Stores an object under an id the caller already verified.
    pub(crate) fn insert_verified(&mut self, id: ObjectId, object: Object) {
        debug_assert_eq!(object.id(), id);
        self.objects.entry(id).or_insert(object);
    }

    pub fn get(&self, id: &ObjectId) -> Result<&Object> {
        self.objects.get(id).ok_or(ObjectError::NotFound(*id))
    }

    pub fn contains(&self, id: &ObjectId) -> bool {
        self.objects.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Objects in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&ObjectId, &Object)> {
        self.objects.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ObjectId> {
        self.objects.keys()
    }

    pub fn commit(&self, id: &ObjectId) -> Result<&Commit> {
        match self.objects.get(id) {
            Some(Object::Commit(c)) => Ok(c),
            Some(other) => Err(ObjectError::MalformedHistory(format!(
                "{id} is a {}, expected a commit",
                other.kind()
            ))),
            None => Err(ObjectError::ClosureViolation { missing: *id }),
        }
    }

    pub fn tree(&self, id: &ObjectId) -> Result<&Tree> {
        match self.objects.get(id) {
            Some(Object::Tree(t)) => Ok(t),
            Some(other) => Err(ObjectError::MalformedHistory(format!(
                "{id} is a {}, expected a tree",
                other.kind()
            ))),
            None => Err(ObjectError::ClosureViolation { missing: *id }),
        }
    }

    /// Copies `id` from `other` into this store.
    pub fn copy_from(&mut self, other: &ObjectStore, id: &ObjectId) -> Result<bool> {
        if self.contains(id) {
            return Ok(false);
        }
        let obj = other.get(id)?.clone();
        self.objects.insert(*id, obj);
        Ok(true)
    }

    /// Test hook: stores an object under an arbitrary id, bypassing
    /// content addressing, so that impossible graphs can be built.
    #[cfg(test)]
    pub(crate) fn insert_unchecked(&mut self, id: ObjectId, object: Object) {
        self.objects.insert(id, object);
    }
}

/// Result of walking the ancestry of a set of commits.
#[derive(Debug, Clone, Default)]
pub struct AncestorWalk {
    /// Every reachable commit.
    pub commits: BTreeSet<ObjectId>,
    /// Reachable commits without parents.
    pub roots: BTreeSet<ObjectId>,
    /// Number of commits expanded; never exceeds `commits.len()`.
    pub visits: usize,
}

/// Walks every ancestor of `heads`, detecting cycles and missing commits.
pub fn walk_ancestors(store: &ObjectStore, heads: &[ObjectId]) -> Result<AncestorWalk> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    let mut marks: HashMap<ObjectId, Mark> = HashMap::new();
    let mut walk = AncestorWalk::default();
    // (commit, index of next parent to look at)
    let mut stack: Vec<(ObjectId, usize)> = Vec::new();
    for head in heads {
        if marks.contains_key(head) {
            continue;
        }
        store.commit(head)?;
        marks.insert(*head, Mark::Active);
        walk.visits += 1;
        stack.push((*head, 0));
        while let Some((id, next)) = stack.last_mut() {
            let commit = store.commit(id)?;
            if *next == 0 {
                walk.commits.insert(*id);
                if commit.parents.is_empty() {
                    walk.roots.insert(*id);
                }
            }
            match commit.parents.get(*next).copied() {
                Some(parent) => {
                    *next += 1;
                    match marks.get(&parent) {
                        Some(Mark::Active) => {
                            return Err(ObjectError::MalformedHistory(format!(
                                "commit {parent} is its own ancestor"
                            )))
                        }
                        Some(Mark::Done) => {}
                        None => {
                            store.commit(&parent)?;
                            marks.insert(parent, Mark::Active);
                            walk.visits += 1;
                            stack.push((parent, 0));
                        }
                    }
                }
                None => {
                    marks.insert(*id, Mark::Done);
                    stack.pop();
                }
            }
        }
    }
    Ok(walk)
}

/// Every parentless commit reachable from `head`.
pub fn compute_roots(store: &ObjectStore, head: &ObjectId) -> Result<BTreeSet<ObjectId>> {
    Ok(walk_ancestors(store, std::slice::from_ref(head))?.roots)
}

/// All objects (commits, trees, blobs) reachable from `targets`.
pub fn reachable_closure<'a>(
    store: &ObjectStore,
    targets: impl IntoIterator<Item = &'a ObjectId>,
) -> Result<BTreeSet<ObjectId>> {
    let mut seen = BTreeSet::new();
    let mut pending: Vec<ObjectId> = targets.into_iter().copied().collect();
    while let Some(id) = pending.pop() {
        if !seen.insert(id) {
            continue;
        }
        let obj = store.objects.get(&id).ok_or(ObjectError::ClosureViolation { missing: id })?;
        match obj {
            Object::Blob(_) => {}
            Object::Tree(t) => {
                for e in &t.entries {
                    if let Some(found) = store.objects.get(&e.id) {
                        if found.kind() != e.kind.object_kind() {
                            return Err(ObjectError::MalformedHistory(format!(
                                "tree {id} lists {} as a {}, found a {}",
                                e.id,
                                e.kind.as_str(),
                                found.kind()
                            )));
                        }
                    }
                    pending.push(e.id);
                }
            }
            Object::Commit(c) => {
                if let Some(found) = store.objects.get(&c.tree) {
                    if found.kind() != ObjectKind::Tree {
                        return Err(ObjectError::MalformedHistory(format!(
                            "commit {id} points at non-tree {}",
                            c.tree
                        )));
                    }
                }
                pending.push(c.tree);
                for p in &c.parents {
                    if let Some(found) = store.objects.get(p) {
                        if found.kind() != ObjectKind::Commit {
                            return Err(ObjectError::MalformedHistory(format!(
                                "commit {id} has non-commit parent {p}"
                            )));
                        }
                    }
                    pending.push(*p);
                }
            }
        }
    }
    Ok(seen)
}

/// Size of the union of the commit ancestries of `refs`.
pub fn count_unique_commits(store: &ObjectStore, refs: &[Reference]) -> Result<usize> {
    let heads: Vec<ObjectId> = refs.iter().map(|r| r.target).collect();
    Ok(walk_ancestors(store, &heads)?.commits.len())
}

/// A fetched repository: one remote's objects and references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repository {
    pub remote_id: String,
    pub default_branch: String,
    pub objects: ObjectStore,
    pub references: Vec<Reference>,
}

impl Repository {
    /// Checks that the default branch exists, that reference names are
    /// valid and unique, and that every reachable object is present.
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for r in &self.references {
            validate_ref_name(&r.name)?;
            if !names.insert(r.name.as_str()) {
                return Err(ObjectError::InvalidReference(format!("duplicate reference {:?}", r.name)));
            }
            self.objects.commit(&r.target)?;
        }
        if !names.contains(self.default_branch.as_str()) {
            return Err(ObjectError::InvalidReference(format!(
                "default branch {:?} is not among the references",
                self.default_branch
            )));
        }
        reachable_closure(&self.objects, self.references.iter().map(|r| &r.target))?;
        walk_ancestors(&self.objects, &self.references.iter().map(|r| r.target).collect::<Vec<_>>())?;
        Ok(())
    }

    pub fn reference(&self, name: &str) -> Option<&Reference> {
        self.references.iter().find(|r| r.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn empty_tree(store: &mut ObjectStore) -> ObjectId {
        store.put(Tree::default())
    }

    fn commit(store: &mut ObjectStore, parents: &[ObjectId], msg: &str) -> ObjectId {
        let tree = empty_tree(store);
        store.put(Commit {
            tree,
            parents: parents.to_vec(),
            author: "a <a@example.com>".into(),
            timestamp: 1_500_000_000,
            message: msg.into(),
        })
    }

    #[test]
    fn empty_blob_id_matches_golden() {
        // sha1("blob 0\0"), computed with an external digest tool.
        assert_eq!(
            hash_object(ObjectKind::Blob, b"").to_hex(),
            "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
        );
    }

    #[test]
    fn ids_are_deterministic_and_content_sensitive() {
        let a = hash_object(ObjectKind::Blob, b"hello");
        assert_eq!(a, hash_object(ObjectKind::Blob, b"hello"));
        assert_ne!(a, hash_object(ObjectKind::Blob, b"hellp"));
        assert_ne!(a, hash_object(ObjectKind::Tree, b"hello"));
    }

    #[test]
    fn put_is_idempotent_and_get_round_trips() {
        let mut store = ObjectStore::new();
        let b = Blob::new("x");
        let id = store.put(b.clone());
        assert_eq!(store.put(b), id);
        assert_eq!(store.len(), 1);
        let tree = Tree::new(vec![TreeEntry { name: "x".into(), kind: EntryKind::Blob, id }]).unwrap();
        let tid = store.put(tree.clone());
        let c = commit(&mut store, &[], "m\nmulti line\n");
        for oid in [id, tid, c] {
            let obj = store.get(&oid).unwrap();
            let bytes = obj.serialize();
            assert_eq!(Object::parse(obj.kind(), &bytes).unwrap(), *obj);
            assert_eq!(Object::parse_with_id(&oid, &bytes).unwrap().unwrap(), *obj);
        }
        let unknown = hash_object(ObjectKind::Blob, b"nope");
        assert_eq!(store.get(&unknown), Err(ObjectError::NotFound(unknown)));
    }

    #[test]
    fn tree_canonical_form() {
        let id = hash_object(ObjectKind::Blob, b"");
        let t = Tree::new(vec![
            TreeEntry { name: "b".into(), kind: EntryKind::Blob, id },
            TreeEntry { name: "a b".into(), kind: EntryKind::Tree, id },
        ])
        .unwrap();
        let text = String::from_utf8(Object::Tree(t).serialize()).unwrap();
        assert_eq!(text, format!("tree a b {id}\nblob b {id}\n"));
        assert!(Tree::new(vec![
            TreeEntry { name: "a".into(), kind: EntryKind::Blob, id },
            TreeEntry { name: "a".into(), kind: EntryKind::Blob, id },
        ])
        .is_err());
        assert!(Tree::new(vec![TreeEntry { name: "a/b".into(), kind: EntryKind::Blob, id }]).is_err());
        // Unsorted input bytes are rejected by the parser.
        let bad = format!("blob b {id}\nblob a {id}\n");
        assert!(Object::parse(ObjectKind::Tree, bad.as_bytes()).is_err());
    }

    #[test]
    fn roots_of_simple_histories() {
        let mut s = ObjectStore::new();
        let c0 = commit(&mut s, &[], "c0");
        assert_eq!(compute_roots(&s, &c0).unwrap(), BTreeSet::from([c0]));
        let c1 = commit(&mut s, &[c0], "c1");
        let c2 = commit(&mut s, &[c1], "c2");
        assert_eq!(compute_roots(&s, &c2).unwrap(), BTreeSet::from([c0]));

        let r1 = commit(&mut s, &[], "r1");
        let a = commit(&mut s, &[r1], "a");
        let r2 = commit(&mut s, &[], "r2");
        let b = commit(&mut s, &[r2], "b");
        let m = commit(&mut s, &[a, b], "merge");
        assert_eq!(compute_roots(&s, &m).unwrap(), BTreeSet::from([r1, r2]));
    }

    #[test]
    fn missing_ancestor_is_a_closure_violation() {
        let mut s = ObjectStore::new();
        let ghost = hash_object(ObjectKind::Commit, b"ghost");
        let c = commit(&mut s, &[ghost], "orphan");
        assert_eq!(compute_roots(&s, &c), Err(ObjectError::ClosureViolation { missing: ghost }));
        assert!(matches!(
            reachable_closure(&s, [&c]),
            Err(ObjectError::ClosureViolation { .. })
        ));
    }

    #[test]
    fn cycles_are_malformed_history() {
        let mut s = ObjectStore::new();
        let tree = empty_tree(&mut s);
        let a = hash_object(ObjectKind::Commit, b"a");
        let b = hash_object(ObjectKind::Commit, b"b");
        let mk = |parent| {
            Object::Commit(Commit {
                tree,
                parents: vec![parent],
                author: "x".into(),
                timestamp: 0,
                message: String::new(),
            })
        };
        s.insert_unchecked(a, mk(b));
        s.insert_unchecked(b, mk(a));
        assert!(matches!(compute_roots(&s, &a), Err(ObjectError::MalformedHistory(_))));
    }

    #[test]
    fn closure_counts() {
        let mut s = ObjectStore::new();
        assert!(reachable_closure(&s, []).unwrap().is_empty());
        let b1 = s.put(Blob::new("one"));
        let b2 = s.put(Blob::new("two"));
        let tree = s
            .put(Tree::new(vec![
                TreeEntry { name: "1".into(), kind: EntryKind::Blob, id: b1 },
                TreeEntry { name: "2".into(), kind: EntryKind::Blob, id: b2 },
            ])
            .unwrap());
        let mk = |msg: &str| Commit {
            tree,
            parents: vec![],
            author: "x".into(),
            timestamp: 0,
            message: msg.into(),
        };
        let c1 = s.put(mk("1"));
        assert_eq!(reachable_closure(&s, [&c1]).unwrap().len(), 4);
        let c2 = s.put(mk("2"));
        assert_eq!(reachable_closure(&s, [&c1, &c2]).unwrap().len(), 5);
    }

    #[test]
    fn unique_commit_counts() {
        let mut s = ObjectStore::new();
        let c0 = commit(&mut s, &[], "0");
        let c1 = commit(&mut s, &[c0], "1");
        let c2 = commit(&mut s, &[c1], "2");
        let tip = Reference::new("refs/heads/master", c2).unwrap();
        assert_eq!(count_unique_commits(&s, std::slice::from_ref(&tip)).unwrap(), 3);
        let dup = Reference::new("refs/heads/other", c2).unwrap();
        assert_eq!(count_unique_commits(&s, &[tip.clone(), dup]).unwrap(), 3);
        // A second branch of length 2 from the same root: 3 + 2 - 1.
        let d1 = commit(&mut s, &[c0], "d1");
        let side = Reference::new("refs/heads/side", d1).unwrap();
        assert_eq!(count_unique_commits(&s, &[tip, side]).unwrap(), 4);
    }

    #[test]
    fn reference_names() {
        let id = hash_object(ObjectKind::Commit, b"");
        assert!(Reference::new("refs/heads/master", id).is_ok());
        assert!(Reference::new("heads/master", id).is_err());
        assert!(Reference::new("refs//master", id).is_err());
        assert!(Reference::new("refs/heads/", id).is_err());
    }

    /// Random DAG in topological order; parents always have smaller indices.
    fn random_dag(seed: u64, n: usize) -> (ObjectStore, Vec<ObjectId>, Vec<Vec<usize>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ObjectStore::new();
        let mut ids = Vec::new();
        let mut parents = Vec::new();
        for i in 0..n {
            let mut ps: Vec<usize> = Vec::new();
            if i > 0 && rng.random_bool(0.85) {
                for _ in 0..rng.random_range(1..=3) {
                    let p = rng.random_range(0..i);
                    if !ps.contains(&p) {
                        ps.push(p);
                    }
                }
            }
            let pids: Vec<_> = ps.iter().map(|&p| ids[p]).collect();
            ids.push(commit(&mut s, &pids, &format!("{seed}-{i}")));
            parents.push(ps);
        }
        (s, ids, parents)
    }

    proptest! {
        #[test]
        fn roots_match_fixpoint_reachability(seed in any::<u64>(), n in 1usize..60) {
            let (s, ids, parents) = random_dag(seed, n);
            let head = n - 1;
            let mut reach = vec![false; n];
            reach[head] = true;
            loop {
                let mut changed = false;
                for i in 0..n {
                    if reach[i] {
                        for &p in &parents[i] {
                            if !reach[p] { reach[p] = true; changed = true; }
                        }
                    }
                }
                if !changed { break; }
            }
            let expected: BTreeSet<_> = (0..n).filter(|&i| reach[i] && parents[i].is_empty()).map(|i| ids[i]).collect();
            let walk = walk_ancestors(&s, &[ids[head]]).unwrap();
            prop_assert_eq!(&walk.roots, &expected);
            prop_assert_eq!(walk.commits.len(), reach.iter().filter(|r| **r).count());
            prop_assert!(walk.visits <= walk.commits.len());
        }

        #[test]
        fn closure_is_monotone(seed in any::<u64>(), n in 2usize..40, split in any::<prop::sample::Index>()) {
            let (s, ids, _) = random_dag(seed, n);
            let k = split.index(n);
            let small: Vec<_> = ids[..k].to_vec();
            let big: Vec<_> = ids.clone();
            let a = reachable_closure(&s, &small).unwrap();
            let b = reachable_closure(&s, &big).unwrap();
            prop_assert!(a.is_subset(&b));
        }
    }
}
