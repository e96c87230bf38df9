//! Inputs shared by the benchmarks.

use pga_core::siva::ArchiveWriter;

/// An archive of `blocks` blocks, each with `per_block` entries of `size` bytes.
pub fn sample_archive(blocks: usize, per_block: usize, size: usize) -> Vec<u8> {
    let payload: Vec<u8> = (0..size).map(|i| (i * 31 % 251) as u8).collect();
    let mut w = ArchiveWriter::new(Vec::new());
    for b in 0..blocks {
        for e in 0..per_block {
            w.write_entry(&format!("b{b}/e{e}"), &payload).expect("in-memory write");
        }
        w.finish_block().expect("in-memory write");
    }
    w.finish().expect("in-memory write")
}

/// C-like source of roughly `lines` lines mixing code, comments and blanks.
pub fn sample_source(lines: usize) -> String {
    let pattern = ["int a = 1; // trailing", "", "/* block", "   still comment */", "return a;", "// line"];
    (0..lines).map(|i| pattern[i % pattern.len()]).collect::<Vec<_>>().join("\n")
}
