//! The dataset index: one CSV row per repository with language, line,
//! commit, branch and fork statistics plus detected licenses.

use std::collections::BTreeMap;
use std::io::{self, Write};

use thiserror::Error;

use crate::object::{EntryKind, ObjectId, ObjectStore, Tree};
use crate::rooted::{canonicalize_remote, RootedError, RootedSet};

pub const CSV_HEADER: &str = "url,siva_filenames,file_count,langs,langs_byte_count,langs_lines_count,\
langs_files_count,commits_count,branches_count,fork_count,empty_lines_count,code_lines_count,\
comment_lines_count,license";

/// Files whose first bytes contain a NUL are treated as binary.
pub const BINARY_SNIFF_LEN: usize = 8000;

/// Minimum keyword fraction for a license to be reported.
pub const LICENSE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("repository {0} is not in the store")]
    NotFound(String),

    #[error("corrupt rooted repository: {0}")]
    Corrupt(String),

    #[error("language rules line {line}: {reason}")]
    Rules { line: usize, reason: String },

    #[error(transparent)]
    Rooted(#[from] RootedError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageRule {
    pub name: String,
    /// Lowercase, with the leading dot.
    pub extensions: Vec<String>,
    pub line_comment_prefixes: Vec<String>,
    pub block_comment_pairs: Vec<(String, String)>,
}

/// Default rule table, in the same format [`LanguageRules::parse`] reads.
pub const BUILTIN_RULES: &str = "\
# name | extensions | line comment prefixes | block comment open/close pairs
C | .c .h | // | /* */
C++ | .cc .cpp .cxx .hh .hpp .hxx | // | /* */
C# | .cs | // | /* */
CSS | .css | | /* */
Go | .go | // | /* */
HTML | .htm .html | | <!-- -->
Haskell | .hs | -- | {- -}
JSON | .json | |
Java | .java | // | /* */
JavaScript | .cjs .js .jsx .mjs | // | /* */
Markdown | .markdown .md | | <!-- -->
PHP | .php | // # | /* */
Python | .py .pyw | # |
Ruby | .rb | # | =begin =end
Rust | .rs | // | /* */
SQL | .sql | -- | /* */
Shell | .bash .sh .zsh | # |
TypeScript | .ts .tsx | // | /* */
YAML | .yaml .yml | # |
";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageRules {
    rules: Vec<LanguageRule>,
}

impl Default for LanguageRules {
    fn default() -> Self {
        Self::builtin()
    }
}

impl LanguageRules {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_RULES).expect("built-in language rules are valid")
    }

    /// Parses one rule per line: `name | .ext ... | prefix ... | open close ...`.
    /// Blank lines and lines starting with `#` are skipped. Extensions must
    /// be unique across rules.
    pub fn parse(text: &str) -> Result<Self, IndexError> {
        let mut rules: Vec<LanguageRule> = Vec::new();
        let mut owners: BTreeMap<String, String> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let err = |reason: String| IndexError::Rules { line: i + 1, reason };
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('|').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(err(format!("expected 4 '|'-separated fields, found {}", fields.len())));
            }
            let name = fields[0].to_owned();
            if name.is_empty() {
                return Err(err("empty language name".into()));
            }
            let mut extensions = Vec::new();
            for ext in fields[1].split_whitespace() {
                let ext = ext.to_lowercase();
                if !ext.starts_with('.') || ext.len() < 2 {
                    return Err(err(format!("extension {ext:?} must start with '.'")));
                }
                if let Some(owner) = owners.insert(ext.clone(), name.clone()) {
                    return Err(err(format!("extension {ext} already belongs to {owner}")));
                }
                extensions.push(ext);
            }
            let line_comment_prefixes = fields[2].split_whitespace().map(str::to_owned).collect();
            let tokens: Vec<&str> = fields[3].split_whitespace().collect();
            if !tokens.len().is_multiple_of(2) {
                return Err(err("block comment tokens must come in open/close pairs".into()));
            }
            let block_comment_pairs = tokens.chunks(2).map(|p| (p[0].to_owned(), p[1].to_owned())).collect();
            rules.push(LanguageRule { name, extensions, line_comment_prefixes, block_comment_pairs });
        }
        Ok(LanguageRules { rules })
    }

    pub fn rules(&self) -> &[LanguageRule] {
        &self.rules
    }

    pub fn detect(&self, path: &str) -> Option<&LanguageRule> {
        detect_language(path, self)
    }
}

/// Language of `path` by its longest matching extension (case-insensitive).
/// The extension must be a proper suffix of the file name, so `.rs` alone
/// does not match.
pub fn detect_language<'a>(path: &str, rules: &'a LanguageRules) -> Option<&'a LanguageRule> {
    let file = path.rsplit('/').next().unwrap_or(path).to_lowercase();
    rules
        .rules
        .iter()
        .flat_map(|r| r.extensions.iter().map(move |e| (e, r)))
        .filter(|(e, _)| file.len() > e.len() && file.ends_with(e.as_str()))
        .max_by_key(|(e, _)| e.len())
        .map(|(_, r)| r)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LineCounts {
    pub empty: u64,
    pub code: u64,
    pub comment: u64,
}

impl LineCounts {
    pub fn total(&self) -> u64 {
        self.empty + self.code + self.comment
    }

    fn add(&mut self, other: LineCounts) {
        self.empty += other.empty;
        self.code += other.code;
        self.comment += other.comment;
    }
}

pub fn is_binary(content: &[u8]) -> bool {
    content[..content.len().min(BINARY_SNIFF_LEN)].contains(&0)
}

fn next_char_len(s: &str) -> usize {
    s.chars().next().map_or(1, char::len_utf8)
}

/// Counts empty, code and comment lines.
///
/// A trimmed line is empty if nothing is left, code if any character falls
/// outside comments, and comment otherwise. Block comments nest. A block
/// opener after a line-comment prefix is ignored. Binary content has no
/// lines; content that is not UTF-8 is all code.
pub fn classify_lines(content: &[u8], rule: &LanguageRule) -> LineCounts {
    if is_binary(content) {
        return LineCounts::default();
    }
    let Ok(text) = std::str::from_utf8(content) else {
        let lines = content.split(|b| *b == b'\n').count() as u64 - u64::from(content.ends_with(b"\n"));
        return LineCounts { code: if content.is_empty() { 0 } else { lines }, ..Default::default() };
    };
    let pairs = &rule.block_comment_pairs;
    let mut counts = LineCounts::default();
    // Indices into `pairs` of the open block comments, innermost last.
    let mut open: Vec<usize> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            counts.empty += 1;
            continue;
        }
        let mut has_code = false;
        let mut i = 0;
        while i < line.len() {
            let rest = &line[i..];
            if let Some(&k) = open.last() {
                let (opener, closer) = &pairs[k];
                if rest.starts_with(closer.as_str()) {
                    open.pop();
                    i += closer.len();
                } else if rest.starts_with(opener.as_str()) {
                    open.push(k);
                    i += opener.len();
                } else {
                    i += next_char_len(rest);
                }
                continue;
            }
            if rule.line_comment_prefixes.iter().any(|p| rest.starts_with(p.as_str())) {
                break;
            }
            if let Some(k) = pairs.iter().position(|(o, _)| rest.starts_with(o.as_str())) {
                open.push(k);
                i += pairs[k].0.len();
                continue;
            }
            if !rest.starts_with(char::is_whitespace) {
                has_code = true;
            }
            i += next_char_len(rest);
        }
        if has_code {
            counts.code += 1;
        } else {
            counts.comment += 1;
        }
    }
    counts
}

pub struct LicenseRule {
    pub name: &'static str,
    pub keywords: &'static [&'static str],
}

/// Keyword sets, matched case-insensitively with whitespace collapsed.
pub const LICENSE_CATALOG: &[LicenseRule] = &[
    LicenseRule {
        name: "Apache-2.0",
        keywords: &[
            "apache license",
            "version 2.0, january 2004",
            "http://www.apache.org/licenses/",
            "limitations under the license",
        ],
    },
    LicenseRule {
        name: "BSD-3-Clause",
        keywords: &[
            "redistribution and use in source and binary forms",
            "neither the name of",
            "this software is provided by the copyright holders and contributors \"as is\"",
        ],
    },
    LicenseRule {
        name: "GPL-2.0",
        keywords: &[
            "gnu general public license",
            "version 2, june 1991",
            "the licenses for most software are designed to take away your",
        ],
    },
    LicenseRule {
        name: "GPL-3.0",
        keywords: &[
            "gnu general public license",
            "version 3, 29 june 2007",
            "the gnu general public license is a free, copyleft license",
        ],
    },
    LicenseRule {
        name: "MIT",
        keywords: &[
            "permission is hereby granted, free of charge",
            "to deal in the software without restriction",
            "sublicense, and/or sell copies of the software",
            "subject to the following conditions",
        ],
    },
    LicenseRule {
        name: "MPL-2.0",
        keywords: &[
            "mozilla public license",
            "version 2.0",
            "this source code form is subject to the terms of the mozilla public license",
        ],
    },
    LicenseRule {
        name: "Unlicense",
        keywords: &[
            "this is free and unencumbered software released into the public domain",
            "unlicense.org",
        ],
    },
];

fn normalize_text(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Fraction of each catalog entry's keywords found in `text`; entries with
/// no match are omitted.
pub fn score_license_text(text: &str) -> Vec<(String, f64)> {
    let text = normalize_text(text);
    LICENSE_CATALOG
        .iter()
        .filter_map(|rule| {
            let hits = rule.keywords.iter().filter(|k| text.contains(&normalize_text(k))).count();
            (hits > 0).then(|| (rule.name.to_owned(), hits as f64 / rule.keywords.len() as f64))
        })
        .collect()
}

pub fn is_license_file(name: &str) -> bool {
    let stem = name.split('.').next().unwrap_or(name).to_ascii_uppercase();
    matches!(stem.as_str(), "LICENSE" | "LICENCE" | "COPYING")
}

/// Licenses found in the root-level license files of `tree`, best first.
pub fn detect_license(tree: &Tree, store: &ObjectStore) -> Vec<(String, f64)> {
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for entry in tree.entries() {
        if entry.kind != EntryKind::Blob || !is_license_file(&entry.name) {
            continue;
        }
        let Some(blob) = store.get(&entry.id).ok().and_then(|o| o.as_blob()) else {
            continue;
        };
        let text = String::from_utf8_lossy(&blob.content);
        for (name, confidence) in score_license_text(&text) {
            if confidence >= LICENSE_THRESHOLD {
                let slot = best.entry(name).or_insert(0.0);
                *slot = slot.max(confidence);
            }
        }
    }
    let mut out: Vec<(String, f64)> = best.into_iter().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Commit and root tree of the default branch of `url`.
pub fn default_head_tree<'a>(set: &'a RootedSet, url: &str) -> Result<(ObjectId, &'a Tree, &'a ObjectStore), IndexError> {
    let remote = canonicalize_remote(url)?;
    let holders: Vec<_> = set.iter().filter(|r| r.remotes.contains(&remote)).collect();
    if holders.is_empty() {
        return Err(IndexError::NotFound(url.to_owned()));
    }
    for rooted in holders {
        if let Some(head) = rooted.default_heads.get(&remote) {
            let target = rooted
                .references
                .get(head)
                .ok_or_else(|| IndexError::Corrupt(format!("dangling default head {head}")))?;
            let commit = rooted.objects.commit(target).map_err(|e| IndexError::Corrupt(e.to_string()))?;
            let tree = rooted.objects.tree(&commit.tree).map_err(|e| IndexError::Corrupt(e.to_string()))?;
            return Ok((*target, tree, &rooted.objects));
        }
    }
    Err(IndexError::Corrupt(format!("no default head recorded for {remote}")))
}

/// Every blob under `tree` as `(path, content)`, in path order.
pub fn walk_tree<'a>(tree: &'a Tree, store: &'a ObjectStore) -> Result<Vec<(String, &'a [u8])>, IndexError> {
    let mut out = Vec::new();
    let mut pending = vec![(String::new(), tree)];
    while let Some((prefix, tree)) = pending.pop() {
        for entry in tree.entries() {
            let path = if prefix.is_empty() { entry.name.clone() } else { format!("{prefix}/{}", entry.name) };
            match entry.kind {
                EntryKind::Blob => {
                    let blob = store
                        .get(&entry.id)
                        .ok()
                        .and_then(|o| o.as_blob())
                        .ok_or_else(|| IndexError::Corrupt(format!("{path}: blob {} missing", entry.id)))?;
                    out.push((path, blob.content.as_slice()));
                }
                EntryKind::Tree => {
                    let sub = store.tree(&entry.id).map_err(|e| IndexError::Corrupt(format!("{path}: {e}")))?;
                    pending.push((path, sub));
                }
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRow {
    pub url: String,
    pub siva_filenames: Vec<String>,
    pub file_count: u64,
    pub langs: Vec<String>,
    pub langs_byte_count: Vec<u64>,
    pub langs_lines_count: Vec<u64>,
    pub langs_files_count: Vec<u64>,
    pub commits_count: u64,
    pub branches_count: u64,
    pub fork_count: u64,
    pub empty_lines_count: u64,
    pub code_lines_count: u64,
    pub comment_lines_count: u64,
    pub license: Vec<(String, f64)>,
}

#[derive(Default)]
struct LangTotals {
    bytes: u64,
    lines: u64,
    files: u64,
}

/// Builds the index row for `url` from its default head and its stored
/// references.
pub fn collect_stats(set: &RootedSet, url: &str, rules: &LanguageRules) -> Result<IndexRow, IndexError> {
    let remote = canonicalize_remote(url)?;
    let (_, tree, store) = default_head_tree(set, url)?;

    let mut file_count = 0;
    let mut lines = LineCounts::default();
    let mut per_lang: BTreeMap<&str, LangTotals> = BTreeMap::new();
    for (path, content) in walk_tree(tree, store)? {
        file_count += 1;
        let Some(rule) = rules.detect(&path) else {
            continue;
        };
        let counts = classify_lines(content, rule);
        lines.add(counts);
        let t = per_lang.entry(rule.name.as_str()).or_default();
        t.bytes += content.len() as u64;
        t.lines += counts.total();
        t.files += 1;
    }
    let mut langs: Vec<(&str, LangTotals)> = per_lang.into_iter().collect();
    langs.sort_by(|a, b| b.1.bytes.cmp(&a.1.bytes).then_with(|| a.0.cmp(b.0)));

    let mut siva_filenames = Vec::new();
    let mut branches = 0;
    let mut remotes = std::collections::BTreeSet::new();
    for rooted in set.holding_remote(&remote) {
        let refs = rooted.refs_for_remote(&remote);
        if refs.is_empty() {
            continue;
        }
        siva_filenames.push(rooted.file_name());
        branches += refs
            .iter()
            .filter(|r| !r.name.starts_with("refs/tags/"))
            .count() as u64;
        remotes.extend(rooted.remotes.iter().cloned());
    }
    siva_filenames.sort();
    let commits = set.commits_reachable(&remote)?.len() as u64;

    Ok(IndexRow {
        url: url.to_owned(),
        siva_filenames,
        file_count,
        langs: langs.iter().map(|(n, _)| (*n).to_owned()).collect(),
        langs_byte_count: langs.iter().map(|(_, t)| t.bytes).collect(),
        langs_lines_count: langs.iter().map(|(_, t)| t.lines).collect(),
        langs_files_count: langs.iter().map(|(_, t)| t.files).collect(),
        commits_count: commits,
        branches_count: branches,
        fork_count: remotes.len() as u64,
        empty_lines_count: lines.empty,
        code_lines_count: lines.code,
        comment_lines_count: lines.comment,
        license: detect_license(tree, store),
    })
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        quoted(s)
    } else {
        s.to_owned()
    }
}

fn list<T: ToString>(items: &[T]) -> String {
    quoted(&items.iter().map(T::to_string).collect::<Vec<_>>().join(","))
}

/// Formats one row. List-valued columns are always double-quoted.
pub fn format_row(row: &IndexRow) -> String {
    let license: Vec<String> = row.license.iter().map(|(n, c)| format!("{n}:{c:.2}")).collect();
    [
        field(&row.url),
        list(&row.siva_filenames),
        row.file_count.to_string(),
        list(&row.langs),
        list(&row.langs_byte_count),
        list(&row.langs_lines_count),
        list(&row.langs_files_count),
        row.commits_count.to_string(),
        row.branches_count.to_string(),
        row.fork_count.to_string(),
        row.empty_lines_count.to_string(),
        row.code_lines_count.to_string(),
        row.comment_lines_count.to_string(),
        list(&license),
    ]
    .join(",")
}

/// Writes the header and `rows` sorted by url; returns the bytes written.
pub fn emit_csv<W: Write>(rows: &[IndexRow], mut output: W) -> io::Result<usize> {
    let mut sorted: Vec<&IndexRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.url.cmp(&b.url));
    let mut text = format!("{CSV_HEADER}\n");
    for row in sorted {
        text.push_str(&format_row(row));
        text.push('\n');
    }
    output.write_all(text.as_bytes())?;
    output.flush()?;
    Ok(text.len())
}
