//! Deterministic synthetic repositories for tests, benchmarks and fixtures.

use std::io;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::object::{Blob, Commit, EntryKind, ObjectId, ObjectStore, Reference, Repository, Tree, TreeEntry};
use crate::pipeline::{FsRemoteSource, RepoListRow};

const SNIPPETS: &[(&str, &str)] = &[
    ("rs", "// helper\nfn f(x: u32) -> u32 {\n    /* double */ x * 2\n}\n\n"),
    ("py", "# utility\ndef f(x):\n    return x * 2\n\n"),
    ("c", "/* header\n * block\n */\nint f(int x) { return x * 2; }\n\n"),
    ("go", "package main\n\n// F doubles.\nfunc F(x int) int { return x * 2 }\n"),
    ("js", "// doubles\nfunction f(x) {\n  return x * 2;\n}\n"),
    ("md", "# Title\n\nSome prose.\n<!-- hidden -->\n"),
    ("txt", "plain text\n"),
];

const MIT_TEXT: &str = "MIT License\n\nPermission is hereby granted, free of charge, to any person obtaining a copy\n\
of this software, to deal in the Software without restriction, including the rights to use, copy,\n\
modify, merge, publish, distribute, sublicense, and/or sell copies of the Software,\n\
subject to the following conditions:\n";

pub const FIXTURE_SIZE: usize = 12;

fn file_content(rng: &mut ChaCha8Rng, ext: &str) -> Vec<u8> {
    let snippet = SNIPPETS.iter().find(|(e, _)| *e == ext).map_or("x\n", |(_, s)| s);
    let mut out = Vec::new();
    for i in 0..rng.random_range(1..4) {
        out.extend_from_slice(snippet.as_bytes());
        out.extend_from_slice(format!("// v{}\n", rng.random_range(0..1000) + i).as_bytes());
    }
    out
}

/// A flat working tree: `path -> content`, with at most one directory level.
type Files = std::collections::BTreeMap<String, Vec<u8>>;

fn store_files(store: &mut ObjectStore, files: &Files) -> ObjectId {
    let mut top: Vec<TreeEntry> = Vec::new();
    let mut dirs: std::collections::BTreeMap<&str, Vec<TreeEntry>> = Default::default();
    for (path, content) in files {
        let id = store.put(Blob::new(content.clone()));
        match path.split_once('/') {
            Some((dir, name)) => dirs.entry(dir).or_default().push(TreeEntry { name: name.into(), kind: EntryKind::Blob, id }),
            None => top.push(TreeEntry { name: path.clone(), kind: EntryKind::Blob, id }),
        }
    }
    for (dir, entries) in dirs {
        let id = store.put(Tree::new(entries).expect("generated names are valid"));
        top.push(TreeEntry { name: dir.into(), kind: EntryKind::Tree, id });
    }
    store.put(Tree::new(top).expect("generated names are valid"))
}

fn random_path(rng: &mut ChaCha8Rng) -> String {
    let (ext, _) = SNIPPETS.choose(rng).expect("non-empty");
    let dir = ["", "src/", "lib/", "docs/"].choose(rng).expect("non-empty");
    format!("{dir}file{}.{ext}", rng.random_range(0..12))
}

fn add_commits(
    rng: &mut ChaCha8Rng,
    store: &mut ObjectStore,
    files: &mut Files,
    mut head: Option<ObjectId>,
    count: usize,
    author: &str,
) -> Option<ObjectId> {
    for _ in 0..count {
        let path = random_path(rng);
        let ext = path.rsplit('.').next().unwrap_or("").to_owned();
        files.insert(path.clone(), file_content(rng, &ext));
        let tree = store_files(store, files);
        head = Some(store.put(Commit {
            tree,
            parents: head.into_iter().collect(),
            author: author.into(),
            timestamp: 1_500_000_000 + rng.random_range(0..100_000_000),
            message: format!("update {path}"),
        }));
    }
    head
}

/// A repository with a linear `master` of `commits` commits (at least one),
/// a `dev` branch at an earlier commit and a `v1` tag.
pub fn synth_repository(remote_id: &str, seed: u64, commits: usize) -> Repository {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ObjectStore::new();
    let mut files = Files::new();
    if rng.random_bool(0.5) {
        files.insert("LICENSE".into(), MIT_TEXT.into());
    }
    if rng.random_bool(0.3) {
        files.insert("logo.bin".into(), vec![0x89, b'P', b'N', b'G', 0, 1, 2, 3]);
    }
    let split = rng.random_range(1..=commits.max(1));
    let mid = add_commits(&mut rng, &mut store, &mut files, None, split, remote_id).expect("at least one commit");
    let head = add_commits(&mut rng, &mut store, &mut files, Some(mid), commits.max(1) - split, remote_id)
        .expect("at least one commit");
    Repository {
        remote_id: remote_id.into(),
        default_branch: "refs/heads/master".into(),
        objects: store,
        references: vec![
            Reference::new("refs/heads/master", head).expect("valid name"),
            Reference::new("refs/heads/dev", mid).expect("valid name"),
            Reference::new("refs/tags/v1", mid).expect("valid name"),
        ],
    }
}

/// A fork of `base`: same history plus `extra_commits` new commits on master.
pub fn synth_fork(base: &Repository, remote_id: &str, seed: u64, extra_commits: usize) -> Repository {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fork = base.clone();
    fork.remote_id = remote_id.into();
    let master = fork.reference(&fork.default_branch).expect("base has a default branch").target;
    let commit = fork.objects.commit(&master).expect("default branch is a commit").clone();
    let mut files = Files::new();
    flatten(&fork.objects, &commit.tree, "", &mut files);
    let head = add_commits(&mut rng, &mut fork.objects, &mut files, Some(master), extra_commits, remote_id)
        .expect("has a head");
    for r in &mut fork.references {
        if r.name == fork.default_branch {
            r.target = head;
        }
    }
    fork
}

fn flatten(store: &ObjectStore, tree: &ObjectId, prefix: &str, files: &mut Files) {
    let tree = store.tree(tree).expect("generated trees are complete");
    for e in tree.entries() {
        let path = format!("{prefix}{}", e.name);
        match e.kind {
            EntryKind::Blob => {
                let blob = store.get(&e.id).ok().and_then(|o| o.as_blob()).expect("blob present");
                files.insert(path, blob.content.clone());
            }
            EntryKind::Tree => flatten(store, &e.id, &format!("{path}/"), files),
        }
    }
}

/// A random commit graph of `n` commits sharing one empty tree. Each commit
/// has zero to two parents among earlier commits. Ids come back in creation
/// order.
pub fn random_dag(seed: u64, n: usize) -> (ObjectStore, Vec<ObjectId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ObjectStore::new();
    let tree = store.put(Tree::default());
    let mut ids: Vec<ObjectId> = Vec::with_capacity(n);
    for i in 0..n {
        let max_parents = ids.len().min(2);
        let parent_count = if ids.is_empty() || rng.random_bool(0.1) { 0 } else { rng.random_range(1..=max_parents) };
        let mut parents: Vec<ObjectId> = (0..parent_count).map(|_| ids[rng.random_range(0..ids.len())]).collect();
        parents.dedup();
        ids.push(store.put(Commit {
            tree,
            parents,
            author: "dag".into(),
            timestamp: i as i64,
            message: format!("c{i}"),
        }));
    }
    (store, ids)
}

pub fn fixture_url(i: usize) -> String {
    format!("https://github.com/synth/repo-{i:02}")
}

fn fixture_remote(i: usize) -> String {
    format!("github.com/synth/repo-{i:02}")
}

/// Writes the twelve-repository fetch fixture under `dir` and returns its
/// list. Repositories 0 to 7 are independent, 8 and 9 fork 0 and 1, 10 is
/// missing and 11 is legally removed.
pub fn write_fixture(dir: &Path, seed: u64) -> io::Result<Vec<RepoListRow>> {
    let source = FsRemoteSource::new(dir);
    let mut repos: Vec<Repository> = (0..8)
        .map(|i| synth_repository(&fixture_remote(i), seed.wrapping_add(i as u64), 3 + i % 4))
        .collect();
    for (fork, base) in [(8, 0), (9, 1)] {
        repos.push(synth_fork(&repos[base], &fixture_remote(fork), seed.wrapping_add(fork as u64), 1));
    }
    for repo in &repos {
        source.write_remote(repo)?;
    }
    source.mark_legally_removed(&fixture_remote(11))?;
    Ok((0..FIXTURE_SIZE)
        .map(|i| RepoListRow {
            url: fixture_url(i),
            stargazers: 50 + 10 * i as u64,
            main_language: ["Rust", "Python", "C"][i % 3].into(),
        })
        .collect())
}
