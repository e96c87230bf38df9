//! Block-based archive with a trailing index.
//!
//! An archive is a sequence of blocks. Each block is laid out as
//!
//! ```text
//! +-----------------+----------------------+------------------+
//! | payloads ...    | index entries ...    | footer (28 B)    |
//! +-----------------+----------------------+------------------+
//! ```
//!
//! All integers are big-endian. An index entry is
//! `name_len u32 | name | flags u32 | offset u64 | size u64 | crc u32` and the
//! footer is `"PGA1" | entry_count u32 | index_size u64 | block_size u64 |
//! index_crc u32`. Offsets are relative to the start of the block, so two
//! archives concatenated byte-wise form a valid archive. Readers find every
//! entry by walking footers backwards from the end of the file without ever
//! touching payload bytes.
//!
//! Names are resolved last-block-wins; an entry with the deleted flag set
//! hides the name from every earlier block.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Read, Seek, SeekFrom, Write};

use thiserror::Error;

/// Footer magic.
pub const MAGIC: [u8; 4] = *b"PGA1";

/// Size of the serialized footer in bytes.
pub const FOOTER_SIZE: u64 = 28;

/// Flag bit marking a tombstone entry.
pub const FLAG_DELETED: u32 = 1;

/// Fixed part of a serialized index entry (everything but the name bytes).
const ENTRY_FIXED_SIZE: u64 = 4 + 4 + 8 + 8 + 4;

#[derive(Debug, Error)]
pub enum ArchiveError {
    /// The index or footer structure is damaged.
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),

    /// A payload does not match the checksum recorded in the index.
    #[error("corrupt payload for entry {name:?}: expected crc {expected:08x}, got {actual:08x}")]
    CorruptPayload {
        name: String,
        expected: u32,
        actual: u32,
    },

    #[error("invalid entry name {0:?}")]
    InvalidName(String),

    #[error("entry {0:?} already present in the current block")]
    DuplicateName(String),

    #[error("entry {0:?} is deleted")]
    Deleted(String),

    /// A previous write failed; the partially written block cannot be finished.
    #[error("writer is unusable after an earlier I/O failure")]
    Poisoned,

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ArchiveError {
    fn corrupt(msg: impl Into<String>) -> Self {
        ArchiveError::CorruptArchive(msg.into())
    }
}

pub type Result<T, E = ArchiveError> = std::result::Result<T, E>;

/// One entry of a block index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexEntry {
    pub name: String,
    pub flags: u32,
    /// Payload offset from the start of the containing block.
    pub offset: u64,
    pub size: u64,
    /// CRC-32 (IEEE) of the payload.
    pub crc: u32,
}

impl IndexEntry {
    pub fn is_deleted(&self) -> bool {
        self.flags & FLAG_DELETED != 0
    }

    /// Serialized length of this entry.
    pub fn encoded_len(&self) -> u64 {
        ENTRY_FIXED_SIZE + self.name.len() as u64
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.name.len() as u32).to_be_bytes());
        out.extend_from_slice(self.name.as_bytes());
        out.extend_from_slice(&self.flags.to_be_bytes());
        out.extend_from_slice(&self.offset.to_be_bytes());
        out.extend_from_slice(&self.size.to_be_bytes());
        out.extend_from_slice(&self.crc.to_be_bytes());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footer {
    pub entry_count: u32,
    /// Bytes of serialized index entries, footer excluded.
    pub index_size: u64,
    /// Bytes of the whole block: payloads, index and footer.
    pub block_size: u64,
    pub index_crc: u32,
}

impl Footer {
    pub fn encode(&self) -> [u8; FOOTER_SIZE as usize] {
        let mut out = [0u8; FOOTER_SIZE as usize];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..8].copy_from_slice(&self.entry_count.to_be_bytes());
        out[8..16].copy_from_slice(&self.index_size.to_be_bytes());
        out[16..24].copy_from_slice(&self.block_size.to_be_bytes());
        out[24..28].copy_from_slice(&self.index_crc.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8; FOOTER_SIZE as usize]) -> Result<Self> {
        if bytes[0..4] != MAGIC {
            return Err(ArchiveError::corrupt("bad footer magic"));
        }
        let footer = Footer {
            entry_count: u32::from_be_bytes(bytes[4..8].try_into().unwrap()),
            index_size: u64::from_be_bytes(bytes[8..16].try_into().unwrap()),
            block_size: u64::from_be_bytes(bytes[16..24].try_into().unwrap()),
            index_crc: u32::from_be_bytes(bytes[24..28].try_into().unwrap()),
        };
        if footer.index_size.checked_add(FOOTER_SIZE).is_none_or(|min| footer.block_size < min) {
            return Err(ArchiveError::corrupt(format!(
                "block size {} smaller than index ({}) plus footer",
                footer.block_size, footer.index_size
            )));
        }
        Ok(footer)
    }
}

/// An index entry located within a whole archive file.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchiveEntryRecord {
    pub name: String,
    /// Absolute file offset of the block holding this entry.
    pub block_start: u64,
    pub entry: IndexEntry,
}

impl ArchiveEntryRecord {
    /// Absolute file offset of the payload.
    pub fn payload_offset(&self) -> u64 {
        self.block_start + self.entry.offset
    }
}

pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

/// Checks the name rules shared by writers and readers.
pub fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains('\0') || name.len() > u32::MAX as usize {
        return Err(ArchiveError::InvalidName(name.to_owned()));
    }
    Ok(())
}

/// Appends blocks to an underlying byte sink.
///
/// The sink may already hold earlier blocks (for example a file opened in
/// append mode); nothing written here depends on the absolute position.
pub struct ArchiveWriter<W: Write> {
    inner: W,
    /// Bytes written since the current block started.
    block_written: u64,
    pending: Vec<IndexEntry>,
    names: HashSet<String>,
    blocks_finished: usize,
    poisoned: bool,
}

impl<W: Write> ArchiveWriter<W> {
    pub fn new(inner: W) -> Self {
        ArchiveWriter {
            inner,
            block_written: 0,
            pending: Vec::new(),
            names: HashSet::new(),
            blocks_finished: 0,
            poisoned: false,
        }
    }

    fn check_open(&self) -> Result<()> {
        if self.poisoned {
            Err(ArchiveError::Poisoned)
        } else {
            Ok(())
        }
    }

    fn reserve_name(&mut self, name: &str) -> Result<()> {
        validate_name(name)?;
        if self.names.contains(name) {
            return Err(ArchiveError::DuplicateName(name.to_owned()));
        }
        Ok(())
    }

    /// Appends `payload` verbatim and queues its index entry.
    pub fn write_entry(&mut self, name: &str, payload: &[u8]) -> Result<&IndexEntry> {
        self.check_open()?;
        self.reserve_name(name)?;
        if let Err(e) = self.inner.write_all(payload) {
            self.poisoned = true;
            return Err(e.into());
        }
        let entry = IndexEntry {
            name: name.to_owned(),
            flags: 0,
            offset: self.block_written,
            size: payload.len() as u64,
            crc: crc32(payload),
        };
        self.block_written += entry.size;
        self.names.insert(entry.name.clone());
        self.pending.push(entry);
        Ok(self.pending.last().unwrap())
    }

    /// Queues a tombstone for `name`. The name does not need to exist.
    pub fn delete_entry(&mut self, name: &str) -> Result<()> {
        self.check_open()?;
        self.reserve_name(name)?;
        self.names.insert(name.to_owned());
        self.pending.push(IndexEntry {
            name: name.to_owned(),
            flags: FLAG_DELETED,
            offset: 0,
            size: 0,
            crc: 0,
        });
        Ok(())
    }

    /// Number of entries queued for the current block.
    pub fn pending_entries(&self) -> usize {
        self.pending.len()
    }

    pub fn blocks_finished(&self) -> usize {
        self.blocks_finished
    }

    /// Writes the index and footer of the current block.
    ///
    /// Returns the footer, or `None` when nothing was queued, in which case
    /// nothing is written.
    pub fn finish_block(&mut self) -> Result<Option<Footer>> {
        self.check_open()?;
        if self.pending.is_empty() {
            return Ok(None);
        }
        let mut index = Vec::new();
        for entry in &self.pending {
            entry.encode_into(&mut index);
        }
        let footer = Footer {
            entry_count: self.pending.len() as u32,
            index_size: index.len() as u64,
            block_size: self.block_written + index.len() as u64 + FOOTER_SIZE,
            index_crc: crc32(&index),
        };
        let res = self
            .inner
            .write_all(&index)
            .and_then(|_| self.inner.write_all(&footer.encode()))
            .and_then(|_| self.inner.flush());
        if let Err(e) = res {
            self.poisoned = true;
            return Err(e.into());
        }
        self.pending.clear();
        self.names.clear();
        self.block_written = 0;
        self.blocks_finished += 1;
        Ok(Some(footer))
    }

    /// Finishes the pending block, if any, and returns the sink.
    pub fn finish(mut self) -> Result<W> {
        self.finish_block()?;
        Ok(self.inner)
    }
}

fn read_exact_at<R: Read + Seek>(source: &mut R, offset: u64, buf: &mut [u8]) -> Result<()> {
    source.seek(SeekFrom::Start(offset))?;
    source.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ArchiveError::corrupt("truncated archive")
        } else {
            e.into()
        }
    })
}

fn parse_index(bytes: &[u8], footer: &Footer, payload_len: u64) -> Result<Vec<IndexEntry>> {
    fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
        if bytes.len() < n {
            return Err(ArchiveError::corrupt("index entry runs past index end"));
        }
        let (head, tail) = bytes.split_at(n);
        *bytes = tail;
        Ok(head)
    }
    let mut rest = bytes;
    let mut entries = Vec::with_capacity(footer.entry_count.min(1 << 16) as usize);
    let mut names = HashSet::new();
    while !rest.is_empty() {
        let name_len = u32::from_be_bytes(take(&mut rest, 4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut rest, name_len)?)
            .map_err(|_| ArchiveError::corrupt("entry name is not UTF-8"))?
            .to_owned();
        let flags = u32::from_be_bytes(take(&mut rest, 4)?.try_into().unwrap());
        let offset = u64::from_be_bytes(take(&mut rest, 8)?.try_into().unwrap());
        let size = u64::from_be_bytes(take(&mut rest, 8)?.try_into().unwrap());
        let crc = u32::from_be_bytes(take(&mut rest, 4)?.try_into().unwrap());
        validate_name(&name).map_err(|_| ArchiveError::corrupt("invalid entry name in index"))?;
        if flags & !FLAG_DELETED != 0 {
            return Err(ArchiveError::corrupt(format!("unknown flags {flags:#x} on {name:?}")));
        }
        let entry = IndexEntry { name, flags, offset, size, crc };
        if entry.is_deleted() && (size != 0 || offset != 0 || crc != 0) {
            return Err(ArchiveError::corrupt(format!("tombstone {:?} has a payload", entry.name)));
        }
        if offset.checked_add(size).is_none_or(|end| end > payload_len) {
            return Err(ArchiveError::corrupt(format!(
                "payload of {:?} exceeds the block payload region",
                entry.name
            )));
        }
        if !names.insert(entry.name.clone()) {
            return Err(ArchiveError::corrupt(format!("duplicate name {:?} in block", entry.name)));
        }
        entries.push(entry);
    }
    if entries.len() != footer.entry_count as usize {
        return Err(ArchiveError::corrupt(format!(
            "footer announces {} entries, index holds {}",
            footer.entry_count,
            entries.len()
        )));
    }
    if entries.is_empty() {
        return Err(ArchiveError::corrupt("empty block"));
    }
    Ok(entries)
}

/// Reads every index entry of every block, earliest block first.
///
/// Only footers and index bytes are read. An empty source is an empty
/// archive.
pub fn read_index<R: Read + Seek>(source: &mut R) -> Result<Vec<ArchiveEntryRecord>> {
    let len = source.seek(SeekFrom::End(0))?;
    let mut blocks = Vec::new();
    let mut end = len;
    while end > 0 {
        if end < FOOTER_SIZE {
            return Err(ArchiveError::corrupt(format!("{end} trailing bytes before first block")));
        }
        let mut raw = [0u8; FOOTER_SIZE as usize];
        read_exact_at(source, end - FOOTER_SIZE, &mut raw)?;
        let footer = Footer::decode(&raw)?;
        if footer.block_size > end {
            return Err(ArchiveError::corrupt(format!(
                "block size {} points before the start of the file",
                footer.block_size
            )));
        }
        let index_start = end - FOOTER_SIZE - footer.index_size;
        let mut index = vec![0u8; footer.index_size as usize];
        read_exact_at(source, index_start, &mut index)?;
        if crc32(&index) != footer.index_crc {
            return Err(ArchiveError::corrupt("index checksum mismatch"));
        }
        let payload_len = footer.block_size - footer.index_size - FOOTER_SIZE;
        let entries = parse_index(&index, &footer, payload_len)?;
        let block_start = end - footer.block_size;
        blocks.push((block_start, entries));
        end = block_start;
    }
    Ok(blocks
        .into_iter()
        .rev()
        .flat_map(|(block_start, entries)| {
            entries.into_iter().map(move |entry| ArchiveEntryRecord {
                name: entry.name.clone(),
                block_start,
                entry,
            })
        })
        .collect())
}

/// Applies the shadowing rule: the latest block wins and tombstones remove
/// the name. `records` must be in file order.
pub fn resolve(records: &[ArchiveEntryRecord]) -> BTreeMap<String, ArchiveEntryRecord> {
    let mut map = BTreeMap::new();
    for record in records {
        if record.entry.is_deleted() {
            map.remove(&record.name);
        } else {
            map.insert(record.name.clone(), record.clone());
        }
    }
    map
}

/// Reads and verifies the payload of `record`.
pub fn read_entry<R: Read + Seek>(source: &mut R, record: &ArchiveEntryRecord) -> Result<Vec<u8>> {
    if record.entry.is_deleted() {
        return Err(ArchiveError::Deleted(record.name.clone()));
    }
    let size = usize::try_from(record.entry.size)
        .map_err(|_| ArchiveError::corrupt("entry too large for this platform"))?;
    let mut buf = vec![0u8; size];
    read_exact_at(source, record.payload_offset(), &mut buf)?;
    let actual = crc32(&buf);
    if actual != record.entry.crc {
        return Err(ArchiveError::CorruptPayload {
            name: record.name.clone(),
            expected: record.entry.crc,
            actual,
        });
    }
    Ok(buf)
}

/// Resolves the byte concatenation `a ‖ b` and checks it against the
/// resolution of `b` laid over the resolution of `a`.
pub fn concatenate_check(a: &[u8], b: &[u8]) -> Result<BTreeMap<String, ArchiveEntryRecord>> {
    let left = resolve(&read_index(&mut io::Cursor::new(a))?);
    let joined = [a, b].concat();
    let combined_records = read_index(&mut io::Cursor::new(&joined))?;
    let combined = resolve(&combined_records);

    // Every name visible in b is shadowed by b; every other visible name of a
    // survives unless b's blocks hold a tombstone for it.
    let b_records = read_index(&mut io::Cursor::new(b))?;
    let right = resolve(&b_records);
    let b_tombstones: HashSet<&str> = b_records
        .iter()
        .filter(|r| r.entry.is_deleted())
        .map(|r| r.name.as_str())
        .filter(|n| !right.contains_key(*n))
        .collect();
    let mut expected: BTreeMap<String, (u64, IndexEntry)> = left
        .into_iter()
        .filter(|(name, _)| !b_tombstones.contains(name.as_str()))
        .map(|(name, r)| (name, (r.block_start, r.entry)))
        .collect();
    let shift = a.len() as u64;
    for (name, r) in right {
        expected.insert(name, (r.block_start + shift, r.entry));
    }
    let actual: BTreeMap<String, (u64, IndexEntry)> = combined
        .iter()
        .map(|(name, r)| (name.clone(), (r.block_start, r.entry.clone())))
        .collect();
    if actual != expected {
        return Err(ArchiveError::corrupt("concatenation does not resolve to the shadowed union"));
    }
    Ok(combined)
}

/// An opened archive: the index has been read, payloads are fetched on demand.
pub struct Archive<R> {
    source: R,
    records: Vec<ArchiveEntryRecord>,
    resolved: BTreeMap<String, ArchiveEntryRecord>,
}

impl<R: Read + Seek> Archive<R> {
    pub fn open(mut source: R) -> Result<Self> {
        let records = read_index(&mut source)?;
        let resolved = resolve(&records);
        Ok(Archive { source, records, resolved })
    }

    /// All records in file order, shadowed ones and tombstones included.
    pub fn records(&self) -> &[ArchiveEntryRecord] {
        &self.records
    }

    pub fn resolved(&self) -> &BTreeMap<String, ArchiveEntryRecord> {
        &self.resolved
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveEntryRecord> {
        self.resolved.get(name)
    }

    pub fn read(&mut self, record: &ArchiveEntryRecord) -> Result<Vec<u8>> {
        read_entry(&mut self.source, record)
    }

    /// Reads the live entry `name`, `Ok(None)` if it is absent or deleted.
    pub fn read_by_name(&mut self, name: &str) -> Result<Option<Vec<u8>>> {
        match self.resolved.get(name) {
            Some(record) => {
                let record = record.clone();
                self.read(&record).map(Some)
            }
            None => Ok(None),
        }
    }

    pub fn into_inner(self) -> R {
        self.source
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    /// Bit-at-a-time CRC-32 (IEEE, reflected), independent of crc32fast.
    fn crc32_bitwise(bytes: &[u8]) -> u32 {
        let mut crc = 0xFFFF_FFFFu32;
        for &b in bytes {
            crc ^= b as u32;
            for _ in 0..8 {
                let mask = (crc & 1).wrapping_neg();
                crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
            }
        }
        !crc
    }

    /// Walks footers backwards with plain slice arithmetic and returns
    /// `(block_start, entry_count)` per block, earliest first.
    fn walk_blocks(bytes: &[u8]) -> Vec<(usize, u32)> {
        let mut out = Vec::new();
        let mut end = bytes.len();
        while end > 0 {
            let f = &bytes[end - 28..end];
            assert_eq!(&f[..4], b"PGA1");
            let count = u32::from_be_bytes(f[4..8].try_into().unwrap());
            let block = u64::from_be_bytes(f[16..24].try_into().unwrap()) as usize;
            end -= block;
            out.push((end, count));
        }
        out.reverse();
        out
    }

    /// `None` payloads are tombstones.
    type BlockDef<'a> = &'a [(&'a str, Option<&'a [u8]>)];
    type OwnedBlock = Vec<(String, Option<Vec<u8>>)>;

    fn build(blocks: &[BlockDef]) -> Vec<u8> {
        let mut w = ArchiveWriter::new(Vec::new());
        for block in blocks {
            for (name, payload) in *block {
                match payload {
                    Some(p) => {
                        w.write_entry(name, p).unwrap();
                    }
                    None => w.delete_entry(name).unwrap(),
                }
            }
            w.finish_block().unwrap();
        }
        w.finish().unwrap()
    }

    fn resolved_payloads(bytes: &[u8]) -> BTreeMap<String, Vec<u8>> {
        let mut archive = Archive::open(Cursor::new(bytes)).unwrap();
        let records: Vec<_> = archive.resolved().values().cloned().collect();
        records
            .into_iter()
            .map(|r| (r.name.clone(), archive.read(&r).unwrap()))
            .collect()
    }

    #[test]
    fn crc_matches_reference_check_value() {
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32_bitwise(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
    }

    #[test]
    fn write_entry_records_size_and_crc() {
        let payload: Vec<u8> = (0u8..40).map(|i| i.wrapping_mul(37)).collect();
        let mut w = ArchiveWriter::new(Vec::new());
        let entry = w.write_entry("refs/heads/master/abc", &payload).unwrap().clone();
        assert_eq!(entry.size, 40);
        assert_eq!(entry.offset, 0);
        assert_eq!(entry.crc, crc32_bitwise(&payload));
    }

    #[test]
    fn empty_payload_has_zero_crc() {
        let mut w = ArchiveWriter::new(Vec::new());
        let entry = w.write_entry("empty.bin", b"").unwrap();
        assert_eq!((entry.size, entry.crc), (0, 0));
        let bytes = w.finish().unwrap();
        let mut cur = Cursor::new(&bytes);
        let records = read_index(&mut cur).unwrap();
        assert_eq!(read_entry(&mut cur, &records[0]).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn rejects_duplicate_and_invalid_names() {
        let mut w = ArchiveWriter::new(Vec::new());
        w.write_entry("a", b"1").unwrap();
        assert!(matches!(w.write_entry("a", b"2"), Err(ArchiveError::DuplicateName(_))));
        assert!(matches!(w.delete_entry("a"), Err(ArchiveError::DuplicateName(_))));
        assert!(matches!(w.write_entry("", b"x"), Err(ArchiveError::InvalidName(_))));
        assert!(matches!(w.write_entry("a\0b", b"x"), Err(ArchiveError::InvalidName(_))));
        assert!(matches!(w.delete_entry(""), Err(ArchiveError::InvalidName(_))));
        // Same name is fine again in the next block.
        w.finish_block().unwrap();
        w.write_entry("a", b"3").unwrap();
    }

    #[test]
    fn block_size_is_payload_plus_index_plus_footer() {
        let mut w = ArchiveWriter::new(Vec::new());
        let entry = w.write_entry("ten", &[7u8; 10]).unwrap().clone();
        let footer = w.finish_block().unwrap().unwrap();
        assert_eq!(footer.block_size, 10 + entry.encoded_len() + 28);
        assert_eq!(entry.encoded_len(), 28 + 3);
        assert_eq!(w.finish().unwrap().len() as u64, footer.block_size);
    }

    #[test]
    fn finish_block_without_entries_writes_nothing() {
        let mut w = ArchiveWriter::new(Vec::new());
        assert_eq!(w.finish_block().unwrap(), None);
        assert!(w.finish().unwrap().is_empty());
    }

    #[test]
    fn blocks_are_independently_parseable() {
        let bytes = build(&[
            &[("a", Some(b"aaa")), ("b", Some(b"bb")), ("c", Some(b""))],
            &[("d", Some(b"dddd")), ("a", None)],
        ]);
        let blocks = walk_blocks(&bytes);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0], (0, 3));
        assert_eq!(blocks[1].1, 2);
        // The second block alone is a valid archive.
        let tail = &bytes[blocks[1].0..];
        assert_eq!(read_index(&mut Cursor::new(tail)).unwrap().len(), 2);

        let records = read_index(&mut Cursor::new(&bytes)).unwrap();
        assert_eq!(records.len(), 5);
        assert!(records.windows(2).all(|w| w[0].block_start <= w[1].block_start));
        assert_eq!(records[3].block_start, blocks[1].0 as u64);
    }

    #[test]
    fn tombstones_hide_names() {
        let bytes = build(&[&[("old.pack", Some(b"xyz"))], &[("old.pack", None)]]);
        let resolved = resolve(&read_index(&mut Cursor::new(&bytes)).unwrap());
        assert!(!resolved.contains_key("old.pack"));

        let bytes = build(&[&[("never.written", None)]]);
        let records = read_index(&mut Cursor::new(&bytes)).unwrap();
        assert_eq!(records.len(), 1);
        assert!(resolve(&records).is_empty());
        let mut cur = Cursor::new(&bytes);
        assert!(matches!(read_entry(&mut cur, &records[0]), Err(ArchiveError::Deleted(_))));
    }

    #[test]
    fn resolve_rules() {
        assert!(resolve(&[]).is_empty());
        let bytes = build(&[&[("x", Some(b"1"))], &[("x", Some(b"2"))]]);
        assert_eq!(resolved_payloads(&bytes)["x"], b"2");
    }

    #[test]
    fn footer_magic_damage_is_detected() {
        let mut bytes = build(&[&[("a", Some(b"payload"))]]);
        let at = bytes.len() - 28 + 3;
        bytes[at] ^= 0xFF;
        assert!(matches!(read_index(&mut Cursor::new(&bytes)), Err(ArchiveError::CorruptArchive(_))));
    }

    #[test]
    fn block_size_before_file_start_is_detected() {
        let mut bytes = build(&[&[("a", Some(b"payload"))]]);
        let at = bytes.len() - 28 + 16;
        bytes[at..at + 8].copy_from_slice(&u64::MAX.to_be_bytes());
        assert!(matches!(read_index(&mut Cursor::new(&bytes)), Err(ArchiveError::CorruptArchive(_))));
    }

    #[test]
    fn trailing_garbage_is_detected() {
        let mut bytes = build(&[&[("a", Some(b"payload"))]]);
        bytes.insert(0, 0);
        assert!(matches!(read_index(&mut Cursor::new(&bytes)), Err(ArchiveError::CorruptArchive(_))));
    }

    #[test]
    fn payload_damage_is_detected() {
        let mut bytes = build(&[&[("a", Some(b"payload"))]]);
        bytes[2] ^= 1;
        let mut cur = Cursor::new(&bytes);
        let records = read_index(&mut cur).unwrap();
        assert!(matches!(read_entry(&mut cur, &records[0]), Err(ArchiveError::CorruptPayload { .. })));
    }

    #[test]
    fn concatenation_shadows_and_tolerates_empty() {
        let a = build(&[&[("x", Some(b"P1")), ("y", Some(b"Y"))]]);
        let b = build(&[&[("x", Some(b"P2"))]]);
        let joined = [a.as_slice(), b.as_slice()].concat();
        let map = concatenate_check(&a, &b).unwrap();
        assert_eq!(map["x"].block_start, a.len() as u64);
        assert_eq!(resolved_payloads(&joined)["x"], b"P2");
        assert_eq!(resolved_payloads(&joined)["y"], b"Y");

        let same = concatenate_check(&a, &[]).unwrap();
        assert_eq!(same, resolve(&read_index(&mut Cursor::new(&a)).unwrap()));
    }

    struct FailingSink;
    impl Write for FailingSink {
        fn write(&mut self, _: &[u8]) -> io::Result<usize> {
            Err(io::Error::other("disk full"))
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn io_failure_poisons_the_writer() {
        let mut w = ArchiveWriter::new(FailingSink);
        assert!(matches!(w.write_entry("a", b"1"), Err(ArchiveError::Io(_))));
        assert!(matches!(w.write_entry("b", b"1"), Err(ArchiveError::Poisoned)));
        assert!(matches!(w.finish_block(), Err(ArchiveError::Poisoned)));
    }

    fn arb_block() -> impl Strategy<Value = Vec<(String, Option<Vec<u8>>)>> {
        prop::collection::btree_map(
            "[a-d]{1,3}",
            prop::option::weighted(0.8, prop::collection::vec(any::<u8>(), 0..64)),
            1..6,
        )
        .prop_map(|m| m.into_iter().collect())
    }

    fn build_owned(blocks: &[OwnedBlock]) -> Vec<u8> {
        let mut w = ArchiveWriter::new(Vec::new());
        for block in blocks {
            for (name, payload) in block {
                match payload {
                    Some(p) => {
                        w.write_entry(name, p).unwrap();
                    }
                    None => w.delete_entry(name).unwrap(),
                }
            }
            w.finish_block().unwrap();
        }
        w.finish().unwrap()
    }

    /// Last-writer-wins over plain maps.
    fn model(blocks: &[OwnedBlock]) -> BTreeMap<String, Vec<u8>> {
        let mut m = BTreeMap::new();
        for block in blocks {
            for (name, payload) in block {
                match payload {
                    Some(p) => m.insert(name.clone(), p.clone()),
                    None => m.remove(name),
                };
            }
        }
        m
    }

    proptest! {
        #[test]
        fn written_archives_resolve_like_the_model(blocks in prop::collection::vec(arb_block(), 0..5)) {
            let bytes = build_owned(&blocks);
            prop_assert_eq!(resolved_payloads(&bytes), model(&blocks));
            let total: u64 = walk_blocks(&bytes).len() as u64;
            prop_assert_eq!(total, blocks.len() as u64);
        }

        #[test]
        fn concatenation_is_the_shadowed_union(
            a in prop::collection::vec(arb_block(), 0..3),
            b in prop::collection::vec(arb_block(), 0..3),
        ) {
            let (ab, bb) = (build_owned(&a), build_owned(&b));
            concatenate_check(&ab, &bb).unwrap();
            let joined = [ab, bb].concat();
            let all: Vec<_> = a.iter().chain(b.iter()).cloned().collect();
            prop_assert_eq!(resolved_payloads(&joined), model(&all));
        }

        #[test]
        fn any_payload_bit_flip_is_caught(
            payload in prop::collection::vec(any::<u8>(), 1..256),
            pos in any::<prop::sample::Index>(),
            bit in 0u8..8,
        ) {
            let mut bytes = build(&[&[("p", Some(&payload))]]);
            let i = pos.index(payload.len());
            bytes[i] ^= 1 << bit;
            let mut cur = Cursor::new(&bytes);
            let records = read_index(&mut cur).unwrap();
            let is_corrupt = matches!(
                read_entry(&mut cur, &records[0]),
                Err(ArchiveError::CorruptPayload { .. })
            );
            prop_assert!(is_corrupt);
        }
    }
}
