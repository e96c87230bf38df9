//! Desk-scale toolkit for building a git repository archive: a concatenable
//! block archive format, fork deduplication into rooted repositories, a
//! fetch pipeline and a CSV dataset index.

pub mod index;
pub mod object;
pub mod pipeline;
pub mod rooted;
pub mod siva;
pub mod store;
pub mod synth;

pub use index::{IndexError, IndexRow, LanguageRule, LanguageRules, LineCounts};
pub use object::{Blob, Commit, EntryKind, Object, ObjectError, ObjectId, ObjectKind, ObjectStore, Reference, Repository, Tree, TreeEntry};
pub use pipeline::{ErrorKind, JobResult, JobStatus, PipelineConfig, PipelineReport, RepoListRow};
pub use rooted::{MergeReport, RootedError, RootedRepository, RootedSet};
pub use siva::{Archive, ArchiveEntryRecord, ArchiveError, ArchiveWriter, IndexEntry};
pub use store::{RootedStore, StoreError};
