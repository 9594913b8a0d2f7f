//! The `IMVULog.log` record grammar.
//!
//! A record line has six fields:
//!
//! ```text
//! 01.102 3328*                        log.pyo( 532)     INFO: Current time: 2015-02-06 11:14:51
//! ^      ^     ^                             ^      ^       ^
//! elapsed thread source file (30, right-aligned) line level  message
//! ```
//!
//! Rendering is byte-exact and canonical. Parsing tolerates any run of spaces
//! between fields so that hand-transcribed excerpts are accepted too.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest line the logger ever writes.
pub const MAX_RECORD_LEN: usize = 512;
/// Characters kept from an over-long line before the ellipsis.
pub const TRUNCATED_PREFIX_LEN: usize = 509;
pub const ELLIPSIS: &str = "...";

pub const THREAD_WIDTH: usize = 5;
pub const SOURCE_WIDTH: usize = 30;
pub const LINE_NO_WIDTH: usize = 4;
pub const LEVEL_WIDTH: usize = 7;

pub const MAX_ELAPSED_INT_DIGITS: usize = 12;
const MAX_SOURCE_LEN: usize = 64;
const MAX_LINE_NO_DIGITS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("malformed record: {0}")]
    MalformedRecord(&'static str),
}

/// Seconds since application start, held as whole milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Elapsed(pub u64);

impl Elapsed {
    pub const fn from_millis(ms: u64) -> Self {
        Elapsed(ms)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        Elapsed((secs * 1000.0).round().max(0.0) as u64)
    }

    pub const fn millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Signed difference `self - other` in milliseconds.
    pub fn delta_millis(self, other: Elapsed) -> i64 {
        self.0 as i64 - other.0 as i64
    }
}

impl fmt::Display for Elapsed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}

impl FromStr for Elapsed {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (elapsed, used) = lex_elapsed(s.as_bytes()).ok_or(GrammarError::MalformedRecord("elapsed"))?;
        if used != s.len() {
            return Err(GrammarError::MalformedRecord("elapsed"));
        }
        Ok(elapsed)
    }
}

impl Serialize for Elapsed {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Elapsed {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LogLevel {
    Debug,
    Info,
    Warning,
    Error,
    Critical,
}

impl LogLevel {
    pub const ALL: [LogLevel; 5] = [
        LogLevel::Debug,
        LogLevel::Info,
        LogLevel::Warning,
        LogLevel::Error,
        LogLevel::Critical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LogLevel::Debug => "DEBUG",
            LogLevel::Info => "INFO",
            LogLevel::Warning => "WARNING",
            LogLevel::Error => "ERROR",
            LogLevel::Critical => "CRITICAL",
        }
    }

    /// Only INFO and ERROR messages are ever split over several records.
    pub fn is_multiline(self) -> bool {
        matches!(self, LogLevel::Info | LogLevel::Error)
    }
}

impl fmt::Display for LogLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for LogLevel {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LogLevel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or(GrammarError::MalformedRecord("level"))
    }
}

/// The five header fields shared by every physical line of a multi-line message.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecordHeader {
    pub elapsed: Elapsed,
    pub thread_id: String,
    pub source_file: String,
    pub line_no: u32,
    pub level: LogLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub elapsed: Elapsed,
    pub thread_id: String,
    pub source_file: String,
    pub line_no: u32,
    pub level: LogLevel,
    pub message: String,
    /// The physical line was cut to 509 characters plus `...`.
    pub truncated: bool,
}

impl LogRecord {
    pub fn new(
        elapsed: Elapsed,
        thread_id: impl Into<String>,
        source_file: impl Into<String>,
        line_no: u32,
        level: LogLevel,
        message: impl Into<String>,
    ) -> Self {
        LogRecord {
            elapsed,
            thread_id: thread_id.into(),
            source_file: source_file.into(),
            line_no,
            level,
            message: message.into(),
            truncated: false,
        }
    }

    pub fn header(&self) -> RecordHeader {
        RecordHeader {
            elapsed: self.elapsed,
            thread_id: self.thread_id.clone(),
            source_file: self.source_file.clone(),
            line_no: self.line_no,
            level: self.level,
        }
    }

    fn same_header(&self, other: &LogRecord) -> bool {
        self.elapsed == other.elapsed
            && self.line_no == other.line_no
            && self.level == other.level
            && self.thread_id == other.thread_id
            && self.source_file == other.source_file
    }

    /// Whether the record's fields can be rendered and parsed back unchanged.
    pub fn is_in_grammar(&self) -> bool {
        let token_ok = |s: &str, max: usize| {
            !s.is_empty()
                && s.chars().count() <= max
                && !s.chars().any(|c| c.is_whitespace() || c == '(')
        };
        token_ok(&self.thread_id, THREAD_WIDTH)
            && token_ok(&self.source_file, SOURCE_WIDTH)
            && self.line_no < 10u32.pow(MAX_LINE_NO_DIGITS as u32)
            && !self.message.contains(['\n', '\r'])
            && self.elapsed.millis() / 1000 < 10u64.pow(MAX_ELAPSED_INT_DIGITS as u32)
    }
}

/// Renders the canonical physical line for `record`, applying the 512-character
/// cut. The result never contains a line terminator.
pub fn render_record_line(record: &LogRecord) -> String {
    let mut line = format!(
        "{} {:<tw$} {:>sw$}({:>lw$})  {:>vw$}: {}",
        record.elapsed,
        record.thread_id,
        record.source_file,
        record.line_no,
        record.level,
        record.message,
        tw = THREAD_WIDTH,
        sw = SOURCE_WIDTH,
        lw = LINE_NO_WIDTH,
        vw = LEVEL_WIDTH,
    );
    if line.chars().count() > MAX_RECORD_LEN {
        let cut = line
            .char_indices()
            .nth(TRUNCATED_PREFIX_LEN)
            .map(|(i, _)| i)
            .unwrap_or(line.len());
        line.truncate(cut);
        line.push_str(ELLIPSIS);
    }
    line
}

/// Parses one physical line (without terminator).
pub fn parse_record_line(line: &str) -> Result<LogRecord, GrammarError> {
    let scan = scan_fields(line);
    let elapsed = scan.elapsed.ok_or(GrammarError::MalformedRecord("elapsed"))?;
    let thread_id = scan.thread_id.ok_or(GrammarError::MalformedRecord("thread id"))?;
    let source_file = scan.source_file.ok_or(GrammarError::MalformedRecord("source file"))?;
    let line_no = scan.line_no.ok_or(GrammarError::MalformedRecord("line number"))?;
    let level = scan.level.ok_or(GrammarError::MalformedRecord("level"))?;
    let message = scan.message.ok_or(GrammarError::MalformedRecord("message"))?;
    let truncated = line.chars().count() == MAX_RECORD_LEN && line.ends_with(ELLIPSIS);
    Ok(LogRecord {
        elapsed,
        thread_id: thread_id.to_owned(),
        source_file: source_file.to_owned(),
        line_no,
        level,
        message: message.to_owned(),
        truncated,
    })
}

/// Result of lexing a candidate line field by field. Lexing stops at the first
/// field that does not match; later fields are then `None`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FieldScan<'a> {
    pub elapsed: Option<Elapsed>,
    pub thread_id: Option<&'a str>,
    pub source_file: Option<&'a str>,
    pub line_no: Option<u32>,
    pub level: Option<LogLevel>,
    pub message: Option<&'a str>,
}

impl FieldScan<'_> {
    pub fn is_complete(&self) -> bool {
        self.message.is_some()
    }
}

fn lex_elapsed(b: &[u8]) -> Option<(Elapsed, usize)> {
    let int_len = b.iter().take_while(|c| c.is_ascii_digit()).count();
    if int_len == 0 || int_len > MAX_ELAPSED_INT_DIGITS {
        return None;
    }
    if b.get(int_len) != Some(&b'.') {
        return None;
    }
    let frac = b.get(int_len + 1..int_len + 4)?;
    if !frac.iter().all(u8::is_ascii_digit) {
        return None;
    }
    let secs: u64 = std::str::from_utf8(&b[..int_len]).ok()?.parse().ok()?;
    let millis: u64 = std::str::from_utf8(frac).ok()?.parse().ok()?;
    Some((Elapsed(secs * 1000 + millis), int_len + 4))
}

fn skip_spaces(b: &[u8], mut i: usize) -> usize {
    while b.get(i) == Some(&b' ') {
        i += 1;
    }
    i
}

/// Lexes the six fields of `line`.
pub fn scan_fields(line: &str) -> FieldScan<'_> {
    let b = line.as_bytes();
    let mut scan = FieldScan::default();

    let Some((elapsed, mut i)) = lex_elapsed(b) else {
        return scan;
    };
    if b.get(i) != Some(&b' ') {
        return scan;
    }
    scan.elapsed = Some(elapsed);

    // thread id: opaque token, never interpreted
    i = skip_spaces(b, i);
    let start = i;
    while i < b.len() && b[i] != b' ' && b[i] != b'(' && b[i].is_ascii_graphic() {
        i += 1;
    }
    let len = i - start;
    if len == 0 || len > THREAD_WIDTH || b.get(i) != Some(&b' ') {
        return scan;
    }
    scan.thread_id = Some(&line[start..i]);

    i = skip_spaces(b, i);
    let start = i;
    while i < b.len() && b[i] != b'(' && b[i].is_ascii_graphic() {
        i += 1;
    }
    let len = i - start;
    if len == 0 || len > MAX_SOURCE_LEN || b.get(i) != Some(&b'(') {
        return scan;
    }
    scan.source_file = Some(&line[start..i]);

    i = skip_spaces(b, i + 1);
    let start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let len = i - start;
    if len == 0 || len > MAX_LINE_NO_DIGITS || b.get(i) != Some(&b')') {
        return scan;
    }
    scan.line_no = line[start..i].parse().ok();
    if scan.line_no.is_none() {
        return scan;
    }

    i += 1;
    let before_level = i;
    i = skip_spaces(b, i);
    if i == before_level {
        return scan;
    }
    let start = i;
    while i < b.len() && b[i].is_ascii_uppercase() {
        i += 1;
    }
    if b.get(i) != Some(&b':') {
        return scan;
    }
    let Ok(level) = line[start..i].parse::<LogLevel>() else {
        return scan;
    };
    scan.level = Some(level);

    i += 1;
    if b.get(i) == Some(&b' ') {
        i += 1;
    }
    scan.message = Some(&line[i..]);
    scan
}

/// One message as logged, possibly spread over several physical records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalMessage {
    pub header: RecordHeader,
    pub lines: Vec<String>,
    /// Indices of the constituent records in the source sequence.
    pub record_span: Range<usize>,
    /// At least one constituent line was cut at 512 characters.
    pub truncated: bool,
}

impl LogicalMessage {
    pub fn first_line(&self) -> &str {
        self.lines.first().map(String::as_str).unwrap_or("")
    }

    /// All lines joined with `\n`.
    pub fn text(&self) -> String {
        self.lines.join("\n")
    }

    /// Expands the message back into its physical records.
    pub fn records(&self) -> impl Iterator<Item = LogRecord> + '_ {
        let last = self.lines.len().saturating_sub(1);
        self.lines.iter().enumerate().map(move |(i, line)| LogRecord {
            elapsed: self.header.elapsed,
            thread_id: self.header.thread_id.clone(),
            source_file: self.header.source_file.clone(),
            line_no: self.header.line_no,
            level: self.header.level,
            message: line.clone(),
            truncated: self.truncated && i == last && line.ends_with(ELLIPSIS),
        })
    }
}

/// Groups consecutive INFO/ERROR records with identical headers into one
/// message. Every other record becomes its own message.
pub fn merge_multiline(records: &[LogRecord]) -> Vec<LogicalMessage> {
    let mut out: Vec<LogicalMessage> = Vec::new();
    for (idx, record) in records.iter().enumerate() {
        if record.level.is_multiline() && idx > 0 {
            let prev = &records[idx - 1];
            if let Some(last) = out.last_mut() {
                if last.record_span.end == idx && prev.same_header(record) {
                    last.lines.push(record.message.clone());
                    last.record_span.end = idx + 1;
                    last.truncated |= record.truncated;
                    continue;
                }
            }
        }
        out.push(LogicalMessage {
            header: record.header(),
            lines: vec![record.message.clone()],
            record_span: idx..idx + 1,
            truncated: record.truncated,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(elapsed_ms: u64, file: &str, line: u32, level: LogLevel, msg: &str) -> LogRecord {
        LogRecord::new(Elapsed(elapsed_ms), "3328*", file, line, level, msg)
    }

    #[test]
    fn parses_network_line() {
        let r = parse_record_line("01.129 3328*   network.pyo(  75)  INFO: ProxyEnable is 0, ignoring proxy settings")
            .unwrap();
        assert_eq!(r.elapsed, Elapsed(1129));
        assert_eq!(r.thread_id, "3328*");
        assert_eq!(r.source_file, "network.pyo");
        assert_eq!(r.line_no, 75);
        assert_eq!(r.level, LogLevel::Info);
        assert_eq!(r.message, "ProxyEnable is 0, ignoring proxy settings");
        assert!(!r.truncated);
    }

    #[test]
    fn parses_error_line() {
        let r = parse_record_line("01.213 3328* windows.pyo( 154)  ERROR: Unable to set IMVU protocol handler").unwrap();
        assert_eq!(r.elapsed, Elapsed(1213));
        assert_eq!(r.source_file, "windows.pyo");
        assert_eq!(r.line_no, 154);
        assert_eq!(r.level, LogLevel::Error);
        assert_eq!(r.message, "Unable to set IMVU protocol handler");
    }

    #[test]
    fn rejects_prose() {
        assert!(matches!(parse_record_line("hello world"), Err(GrammarError::MalformedRecord(_))));
        assert!(parse_record_line("").is_err());
    }

    #[test]
    fn rejects_unknown_level() {
        assert!(parse_record_line("01.129 3328* a.pyo( 1)  NOTICE: x").is_err());
        assert!(parse_record_line("01.129 3328* a.pyo( 1)  info: x").is_err());
        assert!(parse_record_line("01.129 3328* a.pyo( 1)  INFOS: x").is_err());
    }

    #[test]
    fn empty_message_is_accepted() {
        let r = parse_record_line("01.101 3328*   log.pyo( 514)  INFO:").unwrap();
        assert_eq!(r.message, "");
    }

    #[test]
    fn full_length_line_with_ellipsis_is_truncated() {
        let head = "01.129 3328*   network.pyo(  75)  INFO: ";
        let mut line = head.to_string();
        line.push_str(&"x".repeat(MAX_RECORD_LEN - head.len() - 3));
        line.push_str("...");
        assert_eq!(line.len(), 512);
        assert!(parse_record_line(&line).unwrap().truncated);
        let short = line.replacen("xxx...", "...", 1);
        assert_eq!(short.len(), 509);
        assert!(!parse_record_line(&short).unwrap().truncated);
    }

    #[test]
    fn elapsed_formatting() {
        assert_eq!(Elapsed(1099).to_string(), "01.099");
        assert_eq!(Elapsed(50).to_string(), "00.050");
        assert_eq!(Elapsed::from_secs_f64(0.05).to_string(), "00.050");
        assert_eq!(Elapsed(123_456_789).to_string(), "123456.789");
        assert_eq!("01.099".parse::<Elapsed>().unwrap(), Elapsed(1099));
        assert!("1.09".parse::<Elapsed>().is_err());
    }

    #[test]
    fn render_canonical_layout() {
        let r = rec(1099, "log.pyo", 509, LogLevel::Info, "-----");
        let line = render_record_line(&r);
        assert!(line.starts_with("01.099 3328* "));
        assert!(line.contains(&format!("{:>30}( 509)", "log.pyo")));
        assert!(line.ends_with("   INFO: -----"));
        assert_eq!(parse_record_line(&line).unwrap(), r);
    }

    #[test]
    fn critical_renders_at_width_eight() {
        let r = rec(10, "a.pyo", 1, LogLevel::Critical, "boom");
        let line = render_record_line(&r);
        assert!(line.contains("(   1)  CRITICAL: boom"));
        assert_eq!(parse_record_line(&line).unwrap(), r);
    }

    #[test]
    fn long_line_is_cut_to_512() {
        let head_len = render_record_line(&rec(1, "a.pyo", 1, LogLevel::Info, "")).len();
        let r = rec(1, "a.pyo", 1, LogLevel::Info, &"m".repeat(600 - head_len));
        let line = render_record_line(&r);
        assert_eq!(line.len(), 512);
        assert!(line.ends_with("..."));
        assert_eq!(&line[..509], &format!("{}{}", &line[..head_len], "m".repeat(509 - head_len)));
        let back = parse_record_line(&line).unwrap();
        assert!(back.truncated);
        assert!(back.message.ends_with("..."));
    }

    #[test]
    fn non_ascii_message_passes_through() {
        let r = rec(1, "a.pyo", 1, LogLevel::Debug, "caf\u{e9} \u{ff}\u{80}");
        assert_eq!(parse_record_line(&render_record_line(&r)).unwrap(), r);
    }

    #[test]
    fn merge_groups_identical_info_headers() {
        let records = vec![
            rec(1101, "log.pyo", 520, LogLevel::Info, "UserDirectory: x"),
            rec(1102, "log.pyo", 532, LogLevel::Info, "Current time: 2015-02-06 11:14:51"),
            rec(1102, "log.pyo", 532, LogLevel::Info, "Looking for logging config file at"),
            rec(1102, "log.pyo", 532, LogLevel::Info, "C:\\logging.cfg"),
            rec(1102, "log.pyo", 532, LogLevel::Info, "No valid logging.cfg found and applied"),
            rec(1102, "clientapp.pyo", 713, LogLevel::Info, "Starting IMVU version 516.0"),
        ];
        let merged = merge_multiline(&records);
        assert_eq!(merged.len(), 3);
        assert_eq!(merged[1].lines.len(), 4);
        assert_eq!(merged[1].record_span, 1..5);
        assert_eq!(merged[2].record_span, 5..6);
    }

    #[test]
    fn merge_edge_cases() {
        assert!(merge_multiline(&[]).is_empty());
        let two = vec![
            rec(5, "a.pyo", 1, LogLevel::Info, "x"),
            rec(5, "a.pyo", 2, LogLevel::Info, "y"),
        ];
        assert_eq!(merge_multiline(&two).len(), 2);
        let debug = vec![
            rec(5, "a.pyo", 1, LogLevel::Debug, "x"),
            rec(5, "a.pyo", 1, LogLevel::Debug, "y"),
        ];
        assert_eq!(merge_multiline(&debug).len(), 2);
        let error = vec![
            rec(5, "a.pyo", 1, LogLevel::Error, "x"),
            rec(5, "a.pyo", 1, LogLevel::Error, "y"),
        ];
        assert_eq!(merge_multiline(&error).len(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn level() -> impl Strategy<Value = LogLevel> {
            prop::sample::select(LogLevel::ALL.to_vec())
        }

        fn record() -> impl Strategy<Value = LogRecord> {
            (
                0u64..10_000_000_000,
                "[0-9A-Za-z*]{1,5}",
                "[a-zA-Z_]{1,20}\\.pyo",
                0u32..100_000,
                level(),
                "[ -~\u{a0}-\u{ff}]{0,700}",
            )
                .prop_map(|(ms, t, f, l, v, m)| LogRecord::new(Elapsed(ms), t, f, l, v, m.trim().to_string()))
        }

        fn stream() -> impl Strategy<Value = Vec<LogRecord>> {
            prop::collection::vec((0u64..4, "[a-c]\\.pyo", 1u32..3, level(), "[a-z ]{0,8}"), 0..40).prop_map(|v| {
                v.into_iter()
                    .map(|(ms, f, l, lv, m)| LogRecord::new(Elapsed(ms), "1*", f, l, lv, m.trim().to_string()))
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn rendered_length_is_bounded(r in record()) {
                let line = render_record_line(&r);
                prop_assert!(line.chars().count() <= MAX_RECORD_LEN);
            }

            #[test]
            fn parse_inverts_render_when_not_cut(r in record()) {
                let line = render_record_line(&r);
                let back = parse_record_line(&line).unwrap();
                let head = render_record_line(&LogRecord { message: String::new(), ..r.clone() }).chars().count();
                if head + r.message.chars().count() <= MAX_RECORD_LEN {
                    let flag = line.chars().count() == MAX_RECORD_LEN && line.ends_with(ELLIPSIS);
                    prop_assert_eq!(back, LogRecord { truncated: flag, ..r });
                } else {
                    prop_assert!(back.truncated);
                    prop_assert_eq!(back.header(), r.header());
                }
            }

            #[test]
            fn every_level_round_trips(l in level()) {
                prop_assert_eq!(l.as_str().parse::<LogLevel>().unwrap(), l);
                let shown = l.to_string();
                prop_assert_eq!(shown.trim(), l.as_str());
            }

            #[test]
            fn level_parse_is_total_over_the_five_names(s in "[A-Z]{0,9}") {
                let known = LogLevel::ALL.iter().any(|l| l.as_str() == s);
                prop_assert_eq!(s.parse::<LogLevel>().is_ok(), known);
            }

            #[test]
            fn merge_partitions_and_is_idempotent(rs in stream()) {
                let merged = merge_multiline(&rs);
                let flat: Vec<LogRecord> = merged.iter().flat_map(|m| m.records()).collect();
                prop_assert_eq!(&flat, &rs);
                let mut next = 0;
                for m in &merged {
                    prop_assert_eq!(m.record_span.start, next);
                    next = m.record_span.end;
                }
                prop_assert_eq!(next, rs.len());
                prop_assert_eq!(merge_multiline(&flat), merged);
            }
        }
    }
}
