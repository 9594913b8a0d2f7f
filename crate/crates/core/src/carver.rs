//! Recovery of log records from unstructured images (unallocated space,
//! memory dumps, pagefiles).
//!
//! The image is streamed in overlapping windows. Each window owns the byte
//! range `[own_start, own_end)` and reports only candidates that start there,
//! so the result does not depend on the chunk size.

use std::io::{self, Read};

use memchr::memmem;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{parse_record_line, scan_fields, LogRecord, ELLIPSIS, MAX_ELAPSED_INT_DIGITS, MAX_RECORD_LEN};

pub const DEFAULT_CHUNK_BYTES: usize = 4 << 20;
pub const DEFAULT_OVERLAP: usize = 1024;
pub const DEFAULT_MIN_SCORE: f64 = 0.8;
/// Lookahead needed past the owned range: the longest elapsed prefix plus a
/// full record and one byte to detect overlong lines.
pub const MIN_OVERLAP: usize = MAX_ELAPSED_INT_DIGITS + 4 + MAX_RECORD_LEN + 1;
pub const SQLITE_MAGIC: &[u8; 16] = b"SQLite format 3\0";

#[derive(Debug, Error)]
pub enum CarveError {
    #[error("invalid scan configuration: {0}")]
    InvalidConfig(String),
    #[error("read failed at byte {offset}: {source}")]
    IoFailure {
        offset: u64,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub chunk_bytes: usize,
    pub overlap: usize,
    pub min_score: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { chunk_bytes: DEFAULT_CHUNK_BYTES, overlap: DEFAULT_OVERLAP, min_score: DEFAULT_MIN_SCORE }
    }
}

impl ScanConfig {
    pub fn with_chunk_bytes(chunk_bytes: usize) -> Self {
        ScanConfig { chunk_bytes, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), CarveError> {
        if self.overlap < MIN_OVERLAP {
            return Err(CarveError::InvalidConfig(format!("overlap must be at least {MIN_OVERLAP} bytes")));
        }
        if self.chunk_bytes <= self.overlap {
            return Err(CarveError::InvalidConfig("chunk size must exceed the overlap".into()));
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(CarveError::InvalidConfig("minimum score must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitKind {
    /// A line that parses as a complete record.
    Record,
    /// A line that matches the layout well enough but does not parse.
    PartialRecord,
    SqliteDatabase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarveHit {
    pub offset: u64,
    pub length: usize,
    pub kind: HitKind,
    pub score: f64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<LogRecord>,
}

const W_ELAPSED: u32 = 3;
const W_THREAD: u32 = 1;
const W_SOURCE: u32 = 2;
const W_LINE: u32 = 2;
const W_LEVEL: u32 = 2;
const W_LENGTH: u32 = 1;
const W_ELLIPSIS: u32 = 1;
const W_TOTAL: u32 = W_ELAPSED + W_THREAD + W_SOURCE + W_LINE + W_LEVEL + W_LENGTH + W_ELLIPSIS;

fn plausible_source(s: &str) -> bool {
    s.contains('.') && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

/// Layout score in `[0, 1]` for a candidate line. `overlong` marks a line
/// that continues past the record length limit.
pub fn score_candidate(text: &str, overlong: bool) -> f64 {
    let scan = scan_fields(text);
    let mut score = 0;
    score += if scan.elapsed.is_some() { W_ELAPSED } else { 0 };
    score += if scan.thread_id.is_some() { W_THREAD } else { 0 };
    score += if scan.source_file.is_some_and(plausible_source) { W_SOURCE } else { 0 };
    score += if scan.line_no.is_some() { W_LINE } else { 0 };
    score += if scan.level.is_some() { W_LEVEL } else { 0 };
    score += if overlong { 0 } else { W_LENGTH };
    let at_limit = text.len() == MAX_RECORD_LEN;
    score += if !at_limit || text.ends_with(ELLIPSIS) { W_ELLIPSIS } else { 0 };
    f64::from(score) / f64::from(W_TOTAL)
}

fn carvable(b: u8) -> bool {
    (0x20..0x7f).contains(&b) || b == b'\t'
}

/// Start of the record anchored at the `.` at `dot`, if the bytes around it
/// read as an elapsed-seconds field.
fn anchor_start(buf: &[u8], dot: usize) -> Option<usize> {
    let frac = buf.get(dot + 1..dot + 5)?;
    if !frac[..3].iter().all(u8::is_ascii_digit) || frac[3] != b' ' {
        return None;
    }
    let digits = buf[..dot].iter().rev().take(MAX_ELAPSED_INT_DIGITS + 1).take_while(|b| b.is_ascii_digit()).count();
    if !(2..=MAX_ELAPSED_INT_DIGITS).contains(&digits) {
        return None;
    }
    Some(dot - digits)
}

/// Classifies the candidate starting at `buf[start]`.
pub fn validate_candidate(buf: &[u8], start: usize, min_score: f64) -> Option<CarveHit> {
    let tail = &buf[start..];
    let len = tail.iter().take(MAX_RECORD_LEN + 1).take_while(|&&b| carvable(b)).count();
    let overlong = len > MAX_RECORD_LEN;
    let len = len.min(MAX_RECORD_LEN);
    // carvable bytes are ASCII
    let text = std::str::from_utf8(&tail[..len]).expect("ascii");
    if !overlong {
        if let Ok(record) = parse_record_line(text) {
            return Some(CarveHit {
                offset: start as u64,
                length: len,
                kind: HitKind::Record,
                score: 1.0,
                text: text.to_owned(),
                record: Some(record),
            });
        }
    }
    let score = score_candidate(text, overlong);
    (score >= min_score).then(|| CarveHit {
        offset: start as u64,
        length: len,
        kind: HitKind::PartialRecord,
        score,
        text: text.to_owned(),
        record: None,
    })
}

/// Offsets of SQLite database headers in `buf`.
pub fn locate_sqlite_signatures(buf: &[u8]) -> Vec<u64> {
    memmem::find_iter(buf, SQLITE_MAGIC).map(|i| i as u64).collect()
}

fn scan_window(buf: &[u8], base: u64, own: std::ops::Range<u64>, min_score: f64, hits: &mut Vec<CarveHit>) {
    let lo = (own.start - base) as usize;
    let hi = (own.end - base) as usize;
    for dot in memchr::memchr_iter(b'.', buf) {
        let Some(start) = anchor_start(buf, dot) else { continue };
        if start < lo {
            continue;
        }
        if start >= hi {
            break;
        }
        if let Some(mut hit) = validate_candidate(buf, start, min_score) {
            hit.offset += base;
            hits.push(hit);
        }
    }
    for at in locate_sqlite_signatures(buf) {
        let at = at as usize;
        if (lo..hi).contains(&at) {
            hits.push(CarveHit {
                offset: base + at as u64,
                length: SQLITE_MAGIC.len(),
                kind: HitKind::SqliteDatabase,
                score: 1.0,
                text: "SQLite format 3".into(),
                record: None,
            });
        }
    }
}

/// Drops candidates that lie inside an earlier complete record.
fn suppress_nested(mut hits: Vec<CarveHit>) -> Vec<CarveHit> {
    hits.sort_by(|a, b| a.offset.cmp(&b.offset).then(a.length.cmp(&b.length)));
    let mut covered_until = 0u64;
    hits.retain(|h| {
        if h.kind != HitKind::SqliteDatabase && h.offset < covered_until {
            return false;
        }
        if h.kind == HitKind::Record {
            covered_until = covered_until.max(h.offset + h.length as u64);
        }
        true
    });
    hits
}

fn fill(reader: &mut impl Read, buf: &mut Vec<u8>, want: usize, base: u64) -> Result<bool, CarveError> {
    let mut chunk = [0u8; 64 * 1024];
    while buf.len() < want {
        let n = (want - buf.len()).min(chunk.len());
        match reader.read(&mut chunk[..n]) {
            Ok(0) => return Ok(true),
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(source) => return Err(CarveError::IoFailure { offset: base + buf.len() as u64, source }),
        }
    }
    Ok(false)
}

/// Streams `reader` and returns every hit ordered by offset.
pub fn scan_image(mut reader: impl Read, config: &ScanConfig) -> Result<Vec<CarveHit>, CarveError> {
    config.validate()?;
    let mut hits = Vec::new();
    let mut buf: Vec<u8> = Vec::with_capacity(config.chunk_bytes + config.overlap + 1);
    let mut base = 0u64;
    let mut own_start = 0u64;
    loop {
        let lead = (own_start - base) as usize;
        let eof = fill(&mut reader, &mut buf, lead + config.chunk_bytes + config.overlap, base)?;
        let end = base + buf.len() as u64;
        let own_end = if eof { end } else { own_start + config.chunk_bytes as u64 };
        scan_window(&buf, base, own_start..own_end, config.min_score, &mut hits);
        if eof {
            break;
        }
        // keep one byte of lookbehind for the next window
        let keep_from = (own_end - 1 - base) as usize;
        buf.drain(..keep_from);
        base = own_end - 1;
        own_start = own_end;
    }
    Ok(suppress_nested(hits))
}

pub fn scan_bytes(image: &[u8], config: &ScanConfig) -> Result<Vec<CarveHit>, CarveError> {
    scan_image(image, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CURRENT_TIME_LINE: &str = "01.102 3328* log.pyo( 532) INFO: Current time: 2015-02-06 11:14:51";

    fn small(chunk: usize) -> ScanConfig {
        ScanConfig { chunk_bytes: chunk, overlap: MIN_OVERLAP, min_score: DEFAULT_MIN_SCORE }
    }

    #[test]
    fn finds_record_in_noise() {
        let mut img = vec![0xffu8; 3000];
        img[1000] = b'\n';
        img[1001..1001 + CURRENT_TIME_LINE.len()].copy_from_slice(CURRENT_TIME_LINE.as_bytes());
        img[1001 + CURRENT_TIME_LINE.len()] = b'\n';
        let hits = scan_bytes(&img, &ScanConfig::default()).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].offset, 1001);
        assert_eq!(hits[0].kind, HitKind::Record);
        assert_eq!(hits[0].record.as_ref().unwrap().message, "Current time: 2015-02-06 11:14:51");
    }

    #[test]
    fn anchor_rules() {
        assert_eq!(anchor_start(b"x01.102 ", 3), Some(1));
        assert_eq!(anchor_start(b"x1.102 ", 2), None);
        assert_eq!(anchor_start(b"01.10 ", 2), None);
        assert_eq!(anchor_start(b"01.1023", 2), None);
        assert_eq!(anchor_start(b"1234567890123.102 ", 13), None);
        assert_eq!(anchor_start(b"123456789012.102 ", 12), Some(0));
    }

    #[test]
    fn partial_record_is_scored() {
        let text = b"\n01.102 3328* log.pyo( 532) NOTICE: odd level\n";
        let hits = scan_bytes(text, &ScanConfig::default()).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].kind, HitKind::PartialRecord);
        assert!((hits[0].score - 10.0 / 12.0).abs() < 1e-9);
        let strict = ScanConfig { min_score: 0.9, ..Default::default() };
        assert!(scan_bytes(text, &strict).unwrap().is_empty());
    }

    #[test]
    fn numbers_in_prose_are_not_records() {
        let text = b"the total was 12.345 dollars and 99.999 cents\n";
        assert!(scan_bytes(text, &ScanConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn nested_anchor_is_suppressed() {
        let line = "05.000 3328* chat.pyo( 10) INFO: price 12.345 INFO here";
        let hits = scan_bytes(format!("\n{line}\n").as_bytes(), &ScanConfig::default()).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].length, line.len());
    }

    #[test]
    fn straddling_record_found_once_at_any_chunking() {
        let mut img = vec![0u8; 8192];
        for at in [1020usize, 1500, 2047, 4090] {
            img[at - 1] = b'\n';
            img[at..at + CURRENT_TIME_LINE.len()].copy_from_slice(CURRENT_TIME_LINE.as_bytes());
        }
        let whole = scan_bytes(&img, &small(1 << 20)).unwrap();
        assert_eq!(whole.len(), 4);
        for chunk in [MIN_OVERLAP + 1, 600, 1024, 2048, 4096] {
            assert_eq!(scan_bytes(&img, &small(chunk)).unwrap(), whole, "chunk {chunk}");
        }
    }

    #[test]
    fn sqlite_magic_across_chunks() {
        let mut img = vec![0u8; 4096];
        img[1020..1036].copy_from_slice(SQLITE_MAGIC);
        let hits = scan_bytes(&img, &small(1024)).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!((hits[0].offset, hits[0].kind), (1020, HitKind::SqliteDatabase));
    }

    #[test]
    fn config_invariants() {
        assert!(ScanConfig::default().validate().is_ok());
        assert!(ScanConfig { overlap: 100, ..Default::default() }.validate().is_err());
        assert!(ScanConfig { chunk_bytes: 1000, overlap: 1024, ..Default::default() }.validate().is_err());
        assert!(ScanConfig { min_score: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn read_error_carries_offset() {
        struct Failing(usize);
        impl Read for Failing {
            fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
                if self.0 == 0 {
                    return Err(io::Error::other("bad sector"));
                }
                let n = buf.len().min(self.0);
                buf[..n].fill(0);
                self.0 -= n;
                Ok(n)
            }
        }
        let err = scan_image(Failing(5000), &small(2048)).unwrap_err();
        assert!(matches!(err, CarveError::IoFailure { offset: 5000, .. }), "{err}");
    }
}
