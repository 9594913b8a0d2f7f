//! End-to-end examination: input discovery and hashing, session
//! reconstruction, artifact extraction, and report assembly.

use std::fs::{self, File};
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::carver::{scan_image, CarveError, ScanConfig};
use crate::chat::{
    assign_timestamps, build_transcripts, dedupe_events, dispatcher_anchors, events_from_messages,
    flag_whisper_violations, nearest_anchor, Recipient, DEFAULT_DEDUP_WINDOW,
};
use crate::grammar::Elapsed;
use crate::identity::{
    auth_from_messages, contacts_from_messages, endpoints_from_messages, member_directory, profiles_from_messages,
};
use crate::report::{
    ApplicationInfo, Artifacts, CarveReport, ExaminationReport, InputFile, InputStatus, QualityMetrics,
    SegmentSummary, SessionReport, Timeline, TimelineEntry,
};
use crate::segment::{load_segment, order_segments, wall_clock_anchor, LogSegment, SegmentLabel, SessionStream};

#[derive(Debug, Error)]
pub enum ExamineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Carve(#[from] CarveError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExamineOptions {
    pub case_label: Option<String>,
    pub dedup_window: Elapsed,
}

impl Default for ExamineOptions {
    fn default() -> Self {
        ExamineOptions { case_label: None, dedup_window: DEFAULT_DEDUP_WINDOW }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExamineOutcome {
    pub report: ExaminationReport,
}

impl ExamineOutcome {
    /// Every input parsed and at least one session was reconstructed.
    pub fn is_complete(&self) -> bool {
        !self.report.sessions.is_empty() && self.report.inputs.iter().all(InputFile::parsed)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Log-family files under `root`, sorted by path. A file path is returned
/// as given.
fn discover(root: &Path) -> Result<Vec<PathBuf>, ExamineError> {
    let io_err = |source| ExamineError::Io { path: root.to_path_buf(), source };
    let meta = fs::metadata(root).map_err(io_err)?;
    if !meta.is_dir() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|source| ExamineError::Io { path: dir.clone(), source })?;
        for entry in entries {
            let entry = entry.map_err(|source| ExamineError::Io { path: dir.clone(), source })?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if label_of(&path).is_some() {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn label_of(path: &Path) -> Option<SegmentLabel> {
    path.file_name().and_then(|n| n.to_str()).and_then(SegmentLabel::from_file_name)
}

fn load_input(path: &Path) -> (InputFile, Option<LogSegment>) {
    let shown = path.display().to_string();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            let status = InputStatus::Unreadable { reason: e.to_string() };
            return (InputFile { path: shown, sha256: String::new(), bytes: 0, status }, None);
        }
    };
    let mut input = InputFile {
        path: shown,
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
        status: InputStatus::UnrecognizedName,
    };
    let Some(label) = label_of(path) else { return (input, None) };
    match load_segment(&bytes, label) {
        Ok(seg) => {
            input.status =
                InputStatus::Parsed { label, records: seg.records.len(), malformed_lines: seg.malformed_lines };
            (input, Some(seg))
        }
        Err(_) => {
            input.status = InputStatus::NoRecords;
            (input, None)
        }
    }
}

/// Examines files and directories. A path that cannot be opened at all is an
/// error; a file that cannot be read or parsed is recorded in the report.
pub fn examine_paths(paths: &[PathBuf], opts: &ExamineOptions) -> Result<ExamineOutcome, ExamineError> {
    let mut files = Vec::new();
    for p in paths {
        files.extend(discover(p)?);
    }
    files.dedup();
    let mut inputs = Vec::new();
    let mut segments = Vec::new();
    for f in &files {
        let (input, seg) = load_input(f);
        inputs.push(input);
        segments.extend(seg);
    }
    let sessions = examine_segments(segments, opts);
    Ok(ExamineOutcome { report: ExaminationReport::new(opts.case_label.clone(), inputs, sessions) })
}

pub fn examine_segments(segments: Vec<LogSegment>, opts: &ExamineOptions) -> Vec<SessionReport> {
    order_segments(segments).iter().map(|s| analyze_session(s, opts)).collect()
}

/// Runs every extractor over one reconstructed session.
pub fn analyze_session(stream: &SessionStream, opts: &ExamineOptions) -> SessionReport {
    let messages = stream.logical_messages();
    let raw_events = events_from_messages(&messages);
    let mut events = dedupe_events(&raw_events, opts.dedup_window);
    let members = member_directory(&messages);
    let whisper_anomalies = flag_whisper_violations(&mut events, &members);
    let summary = assign_timestamps(&mut events, stream);
    let transcripts = build_transcripts(&events, summary.method);

    let anchor = wall_clock_anchor(stream).ok();
    let dispatch = dispatcher_anchors(stream);
    let to_wall = |e: Elapsed| {
        anchor.as_ref().or_else(|| nearest_anchor(&dispatch, e)).map(|a| a.wall(e))
    };

    let profiles = profiles_from_messages(&messages);
    let auth = auth_from_messages(&messages);
    let endpoints = endpoints_from_messages(&messages);
    let contacts = contacts_from_messages(&messages);

    let mut entries: Vec<TimelineEntry> = Vec::new();
    for ev in &events {
        let to = match ev.recipient {
            Recipient::Room => String::new(),
            Recipient::Whisper(id) => format!(" to {id}"),
        };
        entries.push(TimelineEntry {
            elapsed: ev.elapsed,
            wall_time: ev.wall_time,
            kind: if ev.recipient == Recipient::Room { "chat" } else { "whisper" }.into(),
            summary: format!("{} in chat {}{to}: {}", ev.user_id, ev.chat_id, ev.text),
        });
    }
    for p in &profiles {
        entries.push(TimelineEntry {
            elapsed: p.elapsed,
            wall_time: to_wall(p.elapsed),
            kind: "profile".into(),
            summary: format!("profile of {}", p.avatar_name),
        });
    }
    for a in &auth {
        entries.push(TimelineEntry {
            elapsed: a.elapsed,
            wall_time: to_wall(a.elapsed),
            kind: "authentication".into(),
            summary: format!("credentials for {} logged by {}", a.avatar_name.as_deref().unwrap_or("-"), a.source_file),
        });
    }
    for e in &endpoints {
        entries.push(TimelineEntry {
            elapsed: e.elapsed,
            wall_time: to_wall(e.elapsed),
            kind: "connection".into(),
            summary: format!("{} -> {}", e.client, e.server),
        });
    }
    if !stream.segments.is_empty() {
        for (elapsed, kind) in [(stream.first_elapsed(), "session_start"), (stream.last_elapsed(), "session_end")] {
            entries.push(TimelineEntry {
                elapsed,
                wall_time: to_wall(elapsed),
                kind: kind.into(),
                summary: format!("client version {}", stream.header.as_ref().map_or("unknown", |h| h.version.as_str())),
            });
        }
    }
    entries.sort_by_key(|e| (e.wall_time, e.elapsed));
    let (anchored, relative) = entries.into_iter().partition(|e| e.wall_time.is_some());

    let mut anomalies = stream.anomalies.clone();
    for seg in &stream.segments {
        anomalies.extend(seg.anomalies.iter().map(|a| format!("{}: {a}", seg.label)));
    }

    SessionReport {
        version: stream.header.as_ref().map(|h| h.version.clone()),
        anchor,
        anchor_method: summary.method,
        segments: stream
            .segments
            .iter()
            .map(|s| SegmentSummary {
                label: s.label,
                first_elapsed: s.first_elapsed,
                last_elapsed: s.last_elapsed,
                records: s.records.len(),
                malformed_lines: s.malformed_lines,
            })
            .collect(),
        gaps: stream.gaps.clone(),
        missing_generations: stream.missing_generations(),
        orphan: stream.orphan,
        anomalies,
        artifacts: Artifacts {
            application: ApplicationInfo {
                version: stream.header.as_ref().map(|h| h.version.clone()),
                user_directory: stream.header.as_ref().and_then(|h| h.user_directory.clone()),
                program_directory: stream.header.as_ref().and_then(|h| h.program_directory.clone()),
            },
            user_profiles: profiles,
            contacts,
            authentication: auth,
            chat: transcripts,
            location: endpoints,
        },
        timeline: Timeline { anchored, relative },
        quality: QualityMetrics {
            max_timestamp_disagreement_secs: summary.max_disagreement_secs,
            chat_records: raw_events.len(),
            duplicate_copies_removed: raw_events.len() - events.len(),
            truncated_events: events.iter().filter(|e| e.truncated).count(),
            whisper_anomalies,
        },
    }
}

struct HashingReader<R> {
    inner: R,
    hasher: Sha256,
    bytes: u64,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        self.bytes += n as u64;
        Ok(n)
    }
}

/// Carves one image file, hashing it in the same pass.
pub fn carve_path(path: &Path, config: &ScanConfig) -> Result<CarveReport, ExamineError> {
    config.validate()?;
    let file = File::open(path).map_err(|source| ExamineError::Io { path: path.to_path_buf(), source })?;
    let mut reader = HashingReader { inner: file, hasher: Sha256::new(), bytes: 0 };
    let hits = scan_image(&mut reader, config)?;
    let image = InputFile {
        path: path.display().to_string(),
        sha256: hex::encode(reader.hasher.finalize()),
        bytes: reader.bytes,
        status: InputStatus::NoRecords,
    };
    Ok(CarveReport::new(image, *config, hits))
}
