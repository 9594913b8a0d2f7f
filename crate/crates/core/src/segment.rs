//! Physical log files and the round-robin rotation chain.
//!
//! The client writes `IMVULog.log` first. Once it grows past the rotation
//! threshold, output moves to `IMVULog.log.1`, then `.2` … `.6`, and after `.6`
//! back to `.1`, destroying the generation that was there. The base file is
//! never overwritten within a session.

use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{merge_multiline, parse_record_line, Elapsed, LogRecord, LogicalMessage};
use crate::text;

/// Size past which the client rotates to the next file.
pub const DEFAULT_ROTATION_THRESHOLD: u64 = 2_097_152;
pub const MAX_EXTENSION: u8 = 6;
pub const BASE_FILE_NAME: &str = "IMVULog.log";
pub const WALL_TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SegmentError {
    #[error("segment {0} contains no parseable records")]
    EmptySegment(SegmentLabel),
    #[error("no wall-clock anchor in session")]
    NoAnchor,
}

/// Position of a file in the rotation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SegmentLabel {
    Base,
    Rotated(u8),
}

impl SegmentLabel {
    /// Recognises `IMVULog.log` and `IMVULog.log.1` … `.6`, ignoring case.
    pub fn from_file_name(name: &str) -> Option<SegmentLabel> {
        let lower = name.to_ascii_lowercase();
        let rest = lower.strip_prefix("imvulog.log")?;
        if rest.is_empty() {
            return Some(SegmentLabel::Base);
        }
        match rest.strip_prefix('.')?.parse::<u8>() {
            Ok(n) if (1..=MAX_EXTENSION).contains(&n) && !rest[1..].starts_with('0') => {
                Some(SegmentLabel::Rotated(n))
            }
            _ => None,
        }
    }

    pub fn file_name(self) -> String {
        match self {
            SegmentLabel::Base => BASE_FILE_NAME.to_string(),
            SegmentLabel::Rotated(n) => format!("{BASE_FILE_NAME}.{n}"),
        }
    }

    /// Label written for post-base generation `generation` (1-based).
    pub fn for_generation(generation: usize) -> SegmentLabel {
        if generation == 0 {
            SegmentLabel::Base
        } else {
            SegmentLabel::Rotated(((generation - 1) % MAX_EXTENSION as usize) as u8 + 1)
        }
    }

    fn successor(self) -> SegmentLabel {
        match self {
            SegmentLabel::Base => SegmentLabel::Rotated(1),
            SegmentLabel::Rotated(n) => SegmentLabel::Rotated(n % MAX_EXTENSION + 1),
        }
    }
}

impl fmt::Display for SegmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentLabel::Base => f.write_str("base"),
            SegmentLabel::Rotated(n) => write!(f, ".{n}"),
        }
    }
}

impl FromStr for SegmentLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "base" {
            return Ok(SegmentLabel::Base);
        }
        s.strip_prefix('.')
            .and_then(|n| n.parse::<u8>().ok())
            .filter(|n| (1..=MAX_EXTENSION).contains(n))
            .map(SegmentLabel::Rotated)
            .ok_or_else(|| format!("invalid segment label {s:?}"))
    }
}

impl Serialize for SegmentLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SegmentLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Session start block: the version line and the `Current time:` line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub version: String,
    pub wall_time: Option<NaiveDateTime>,
    pub wall_elapsed: Option<Elapsed>,
    pub user_directory: Option<String>,
    pub program_directory: Option<String>,
}

/// Maps elapsed seconds onto wall-clock time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub wall_time: NaiveDateTime,
    pub wall_elapsed: Elapsed,
}

impl Anchor {
    pub fn wall(&self, elapsed: Elapsed) -> NaiveDateTime {
        self.wall_time + Duration::milliseconds(elapsed.delta_millis(self.wall_elapsed))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogSegment {
    pub label: SegmentLabel,
    pub records: Vec<LogRecord>,
    pub first_elapsed: Elapsed,
    pub last_elapsed: Elapsed,
    pub session_header: Option<SessionHeader>,
    /// Lines that did not match the record grammar.
    pub malformed_lines: usize,
    pub anomalies: Vec<String>,
}

impl LogSegment {
    pub fn logical_messages(&self) -> Vec<LogicalMessage> {
        merge_multiline(&self.records)
    }
}

/// Parses the full content of one candidate log file.
pub fn load_segment(bytes: &[u8], label: SegmentLabel) -> Result<LogSegment, SegmentError> {
    let mut records = Vec::new();
    let mut malformed_lines = 0;
    for line in text::lines(bytes) {
        match parse_record_line(&text::decode(line)) {
            Ok(r) => records.push(r),
            Err(_) => malformed_lines += 1,
        }
    }
    let (Some(first), Some(last)) = (records.first(), records.last()) else {
        return Err(SegmentError::EmptySegment(label));
    };
    let first_elapsed = first.elapsed;
    let last_elapsed = last.elapsed;

    let mut anomalies = Vec::new();
    for pair in records.windows(2) {
        if pair[1].elapsed < pair[0].elapsed {
            anomalies.push(format!(
                "{label}: elapsed decreases from {} to {}",
                pair[0].elapsed, pair[1].elapsed
            ));
        }
    }
    let session_header = extract_session_header(&records);
    Ok(LogSegment {
        label,
        records,
        first_elapsed,
        last_elapsed,
        session_header,
        malformed_lines,
        anomalies,
    })
}

/// Parses `YYYY-MM-DD HH:MM:SS` at the start of `s`.
pub fn parse_wall_time(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.get(..19)?, WALL_TIME_FORMAT).ok()
}

/// `Key: value` where the value may sit on the following record when the
/// logger split it.
fn keyed_value(records: &[LogRecord], key: &str) -> Option<String> {
    let idx = records.iter().position(|r| r.message.starts_with(key))?;
    let inline = records[idx].message[key.len()..].trim();
    if !inline.is_empty() {
        return Some(inline.to_string());
    }
    records.get(idx + 1).map(|r| r.message.trim().to_string())
}

fn current_time(records: &[LogRecord]) -> Option<(NaiveDateTime, Elapsed)> {
    records.iter().find_map(|r| {
        let rest = r.message.strip_prefix("Current time:")?;
        parse_wall_time(rest.trim()).map(|t| (t, r.elapsed))
    })
}

fn extract_session_header(records: &[LogRecord]) -> Option<SessionHeader> {
    let version = records.iter().find_map(|r| {
        r.message
            .strip_prefix("Starting IMVU version ")
            .map(|v| v.trim().to_string())
    })?;
    let wall = current_time(records);
    Some(SessionHeader {
        version,
        wall_time: wall.map(|w| w.0),
        wall_elapsed: wall.map(|w| w.1),
        user_directory: keyed_value(records, "UserDirectory:"),
        program_directory: keyed_value(records, "ProgramDirectory:"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapKind {
    /// Extension labels skip; the skipped generations were overwritten.
    LabelSkip,
    /// The next segment starts before the previous one ends.
    ElapsedOverlap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationGap {
    /// Index in the ordered segment list after which generations are missing.
    pub after_index: usize,
    pub after: SegmentLabel,
    pub before: SegmentLabel,
    pub missing: usize,
    pub kind: GapKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionStream {
    pub header: Option<SessionHeader>,
    pub segments: Vec<LogSegment>,
    pub gaps: Vec<RotationGap>,
    /// Headerless segment that continues no known session.
    pub orphan: bool,
    pub anomalies: Vec<String>,
}

impl SessionStream {
    pub fn records(&self) -> impl Iterator<Item = &LogRecord> {
        self.segments.iter().flat_map(|s| s.records.iter())
    }

    /// Logical messages over the concatenated records, so a multi-line
    /// message split by rotation is rejoined.
    pub fn logical_messages(&self) -> Vec<LogicalMessage> {
        let records: Vec<LogRecord> = self.records().cloned().collect();
        merge_multiline(&records)
    }

    pub fn labels(&self) -> Vec<SegmentLabel> {
        self.segments.iter().map(|s| s.label).collect()
    }

    pub fn missing_generations(&self) -> usize {
        self.gaps.iter().map(|g| g.missing).sum()
    }

    pub fn first_elapsed(&self) -> Elapsed {
        self.segments.first().map(|s| s.first_elapsed).unwrap_or_default()
    }

    pub fn last_elapsed(&self) -> Elapsed {
        self.segments.last().map(|s| s.last_elapsed).unwrap_or_default()
    }
}

fn canonical_key(s: &LogSegment) -> (Elapsed, SegmentLabel, Elapsed, usize, usize) {
    (s.first_elapsed, s.label, s.last_elapsed, s.records.len(), s.malformed_lines)
}

fn mentions_version(segment: &LogSegment, version: &str) -> bool {
    segment.records.iter().any(|r| r.message.contains(version))
}

/// Groups loaded segments into sessions and orders each session's chain.
/// The result does not depend on the input order.
pub fn order_segments(mut segments: Vec<LogSegment>) -> Vec<SessionStream> {
    segments.sort_by_key(canonical_key);

    let (headed, headless): (Vec<_>, Vec<_>) =
        segments.into_iter().partition(|s| s.session_header.is_some());

    let mut sessions: Vec<Vec<LogSegment>> = headed.into_iter().map(|s| vec![s]).collect();
    let mut orphans = Vec::new();

    for seg in headless {
        let tail = |chain: &Vec<LogSegment>| chain.iter().map(|s| s.last_elapsed).max().unwrap_or_default();
        let best = sessions
            .iter()
            .enumerate()
            .filter(|(_, chain)| tail(chain) <= seg.first_elapsed)
            .map(|(i, chain)| (i, tail(chain)))
            .max_by_key(|&(_, t)| t)
            .map(|(_, t)| t);
        let Some(best) = best else {
            orphans.push(seg);
            continue;
        };
        let candidates: Vec<usize> = sessions
            .iter()
            .enumerate()
            .filter(|(_, chain)| tail(chain) == best)
            .map(|(i, _)| i)
            .collect();
        let chosen = if candidates.len() == 1 {
            Some(candidates[0])
        } else {
            let by_version: Vec<usize> = candidates
                .into_iter()
                .filter(|&i| {
                    let version = &sessions[i][0].session_header.as_ref().unwrap().version;
                    mentions_version(&seg, version)
                })
                .collect();
            (by_version.len() == 1).then(|| by_version[0])
        };
        match chosen {
            Some(i) => sessions[i].push(seg),
            None => orphans.push(seg),
        }
    }

    let mut out: Vec<SessionStream> = sessions.into_iter().map(build_stream).collect();
    out.extend(orphans.into_iter().map(|seg| SessionStream {
        header: None,
        anomalies: vec![format!("orphan segment {} continues no known session", seg.label)],
        segments: vec![seg],
        gaps: Vec::new(),
        orphan: true,
    }));
    out
}

fn build_stream(mut chain: Vec<LogSegment>) -> SessionStream {
    chain.sort_by_key(canonical_key);
    let header = chain[0].session_header.clone();
    let mut anomalies: Vec<String> = chain.iter().flat_map(|s| s.anomalies.iter().cloned()).collect();
    if chain[0].label != SegmentLabel::Base {
        anomalies.push(format!("session header found in rotated segment {}", chain[0].label));
    }
    let gaps = detect_gaps(&chain, &mut anomalies);
    SessionStream { header, segments: chain, gaps, orphan: false, anomalies }
}

/// Number of labels skipped between `prev` and `next`, modulo the cycle.
fn label_skip(prev: SegmentLabel, next: SegmentLabel) -> Option<usize> {
    let SegmentLabel::Rotated(n) = next else {
        return None;
    };
    let SegmentLabel::Rotated(expected) = prev.successor() else {
        unreachable!()
    };
    let cycle = MAX_EXTENSION as usize;
    Some((n as usize + cycle - expected as usize) % cycle)
}

fn detect_gaps(chain: &[LogSegment], anomalies: &mut Vec<String>) -> Vec<RotationGap> {
    // typical elapsed span of one generation, from contiguous rotated pairs
    let mut spans: Vec<u64> = chain
        .windows(2)
        .filter(|w| w[0].label != SegmentLabel::Base && label_skip(w[0].label, w[1].label) == Some(0))
        .map(|w| w[1].first_elapsed.millis().saturating_sub(w[0].first_elapsed.millis()))
        .collect();
    if spans.is_empty() {
        spans = chain
            .iter()
            .filter(|s| s.label != SegmentLabel::Base)
            .map(|s| s.last_elapsed.millis() - s.first_elapsed.millis().min(s.last_elapsed.millis()))
            .collect();
    }
    let period = if spans.is_empty() {
        0.0
    } else {
        spans.iter().sum::<u64>() as f64 / spans.len() as f64
    };

    let mut gaps = Vec::new();
    for (i, w) in chain.windows(2).enumerate() {
        let (prev, next) = (&w[0], &w[1]);
        if next.first_elapsed < prev.last_elapsed {
            gaps.push(RotationGap {
                after_index: i,
                after: prev.label,
                before: next.label,
                missing: label_skip(prev.label, next.label).unwrap_or(0),
                kind: GapKind::ElapsedOverlap,
            });
            continue;
        }
        let Some(skip) = label_skip(prev.label, next.label) else {
            anomalies.push(format!("second base segment follows {}", prev.label));
            continue;
        };
        let cycle = MAX_EXTENSION as usize;
        let missing = if period > 0.0 {
            let gap = next.first_elapsed.millis().saturating_sub(prev.last_elapsed.millis()) as f64;
            let estimate = gap / period;
            let wraps = ((estimate - skip as f64) / cycle as f64).round().max(0.0) as usize;
            skip + wraps * cycle
        } else {
            skip
        };
        if missing == 0 {
            continue;
        }
        gaps.push(RotationGap {
            after_index: i,
            after: prev.label,
            before: next.label,
            missing,
            kind: GapKind::LabelSkip,
        });
    }
    gaps
}

/// Anchor from the session header, else from any `Current time:` record.
pub fn wall_clock_anchor(stream: &SessionStream) -> Result<Anchor, SegmentError> {
    if let Some(SessionHeader { wall_time: Some(wall_time), wall_elapsed: Some(wall_elapsed), .. }) =
        &stream.header
    {
        return Ok(Anchor { wall_time: *wall_time, wall_elapsed: *wall_elapsed });
    }
    let records: Vec<LogRecord> = stream.records().cloned().collect();
    current_time(&records)
        .map(|(wall_time, wall_elapsed)| Anchor { wall_time, wall_elapsed })
        .ok_or(SegmentError::NoAnchor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{render_record_line, LogLevel};

    fn segment(label: SegmentLabel, from_ms: u64, to_ms: u64, header: bool) -> LogSegment {
        let mut lines = Vec::new();
        if header {
            lines.push(LogRecord::new(Elapsed(from_ms), "1", "log.pyo", 532, LogLevel::Info, "Current time: 2015-02-06 11:14:51"));
            lines.push(LogRecord::new(Elapsed(from_ms), "1", "clientapp.pyo", 713, LogLevel::Info, "Starting IMVU version 516.0"));
        }
        lines.push(LogRecord::new(Elapsed(from_ms), "1", "a.pyo", 1, LogLevel::Debug, "first"));
        lines.push(LogRecord::new(Elapsed(to_ms), "1", "a.pyo", 2, LogLevel::Debug, "last"));
        let text: String = lines.iter().map(|r| render_record_line(r) + "\n").collect();
        load_segment(text.as_bytes(), label).unwrap()
    }

    #[test]
    fn recognises_file_family() {
        assert_eq!(SegmentLabel::from_file_name("IMVULog.log"), Some(SegmentLabel::Base));
        assert_eq!(SegmentLabel::from_file_name("imvulog.LOG.3"), Some(SegmentLabel::Rotated(3)));
        assert_eq!(SegmentLabel::from_file_name("IMVULog.log.7"), None);
        assert_eq!(SegmentLabel::from_file_name("IMVULog.log.0"), None);
        assert_eq!(SegmentLabel::from_file_name("IMVULog.log.03"), None);
        assert_eq!(SegmentLabel::from_file_name("cpp.log"), None);
        assert_eq!(SegmentLabel::from_file_name("IMVUQualityAgent.log"), None);
        assert_eq!(SegmentLabel::for_generation(7), SegmentLabel::Rotated(1));
        assert_eq!(SegmentLabel::for_generation(12), SegmentLabel::Rotated(6));
    }

    #[test]
    fn random_text_is_empty_segment() {
        let err = load_segment(b"lorem ipsum\ndolor sit amet\n", SegmentLabel::Base).unwrap_err();
        assert_eq!(err, SegmentError::EmptySegment(SegmentLabel::Base));
        assert!(load_segment(b"", SegmentLabel::Rotated(2)).is_err());
    }

    #[test]
    fn counts_malformed_and_decreasing_elapsed() {
        let text = "02.000 1 a.pyo( 1)  INFO: x\nnoise\n01.000 1 a.pyo( 1)  INFO: y\n";
        let seg = load_segment(text.as_bytes(), SegmentLabel::Base).unwrap();
        assert_eq!(seg.records.len(), 2);
        assert_eq!(seg.malformed_lines, 1);
        assert_eq!(seg.anomalies.len(), 1);
    }

    #[test]
    fn single_headed_segment() {
        let streams = order_segments(vec![segment(SegmentLabel::Base, 1000, 5000, true)]);
        assert_eq!(streams.len(), 1);
        assert_eq!(streams[0].segments.len(), 1);
        assert!(streams[0].gaps.is_empty());
        assert!(!streams[0].orphan);
    }

    #[test]
    fn contiguous_chain_has_no_gaps() {
        let segs = vec![
            segment(SegmentLabel::Rotated(2), 20_000, 29_000, false),
            segment(SegmentLabel::Base, 1000, 9000, true),
            segment(SegmentLabel::Rotated(3), 30_000, 39_000, false),
            segment(SegmentLabel::Rotated(1), 10_000, 19_000, false),
        ];
        let streams = order_segments(segs);
        assert_eq!(streams.len(), 1);
        assert_eq!(
            streams[0].labels(),
            vec![SegmentLabel::Base, SegmentLabel::Rotated(1), SegmentLabel::Rotated(2), SegmentLabel::Rotated(3)]
        );
        assert!(streams[0].gaps.is_empty());
    }

    #[test]
    fn wrapped_chain_reports_overwritten_generations() {
        // base + 8 rotated generations: gens 1 and 2 (.1, .2) were overwritten by gens 7 and 8
        let mut segs = vec![segment(SegmentLabel::Base, 1000, 9000, true)];
        for gen in 3..=8u64 {
            let label = SegmentLabel::for_generation(gen as usize);
            segs.push(segment(label, gen * 10_000, gen * 10_000 + 9000, false));
        }
        let streams = order_segments(segs);
        assert_eq!(streams.len(), 1);
        let labels: Vec<String> = streams[0].labels().iter().map(|l| l.to_string()).collect();
        assert_eq!(labels, ["base", ".3", ".4", ".5", ".6", ".1", ".2"]);
        assert_eq!(streams[0].gaps.len(), 1);
        assert_eq!(streams[0].gaps[0].missing, 2);
        assert_eq!(streams[0].gaps[0].after_index, 0);
    }

    #[test]
    fn many_overwritten_generations_use_elapsed_span() {
        // base + 15 rotated generations: 9 overwritten, label skip alone says 3
        let mut segs = vec![segment(SegmentLabel::Base, 1000, 9000, true)];
        for gen in 10..=15u64 {
            let label = SegmentLabel::for_generation(gen as usize);
            segs.push(segment(label, gen * 10_000, gen * 10_000 + 9000, false));
        }
        let streams = order_segments(segs);
        assert_eq!(streams[0].missing_generations(), 9);
    }

    #[test]
    fn headerless_without_session_is_orphan() {
        let streams = order_segments(vec![segment(SegmentLabel::Rotated(4), 5000, 6000, false)]);
        assert_eq!(streams.len(), 1);
        assert!(streams[0].orphan);
        assert_eq!(wall_clock_anchor(&streams[0]), Err(SegmentError::NoAnchor));
    }

    #[test]
    fn order_is_permutation_invariant() {
        let segs = vec![
            segment(SegmentLabel::Base, 1000, 9000, true),
            segment(SegmentLabel::Rotated(1), 10_000, 19_000, false),
            segment(SegmentLabel::Base, 100, 900, true),
            segment(SegmentLabel::Rotated(5), 40_000, 49_000, false),
        ];
        let expected = order_segments(segs.clone());
        let mut rev = segs.clone();
        rev.reverse();
        assert_eq!(order_segments(rev), expected);
        let mut rot = segs;
        rot.rotate_left(1);
        assert_eq!(order_segments(rot), expected);
    }

    #[test]
    fn anchor_arithmetic() {
        let anchor = Anchor {
            wall_time: parse_wall_time("2015-02-06 11:14:51").unwrap(),
            wall_elapsed: Elapsed(1102),
        };
        assert_eq!(anchor.wall(Elapsed(61_102)), parse_wall_time("2015-02-06 11:15:51").unwrap());
        assert_eq!(anchor.wall(Elapsed(102)), parse_wall_time("2015-02-06 11:14:50").unwrap());
    }
}
