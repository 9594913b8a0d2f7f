//! Examination and carving reports.
//!
//! Both serialise to JSON with a `schema_version` and deserialise back to an
//! equal value; [`ExaminationReport::render_text`] gives the human-readable
//! form.

use std::fmt::Write as _;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::carver::{CarveHit, HitKind, ScanConfig};
use crate::chat::{AnchorMethod, Recipient, Transcript};
use crate::grammar::Elapsed;
use crate::identity::{AuthArtifact, ContactEntry, NetworkEndpoint, UserProfile};
use crate::segment::{Anchor, RotationGap, SegmentLabel, WALL_TIME_FORMAT};

pub const SCHEMA_VERSION: u32 = 1;
pub const DIGEST_ALGORITHM: &str = "SHA-256";
pub const TOOL_NAME: &str = "imvulog";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl Default for ToolInfo {
    fn default() -> Self {
        ToolInfo { name: TOOL_NAME.into(), version: env!("CARGO_PKG_VERSION").into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum InputStatus {
    Parsed { label: SegmentLabel, records: usize, malformed_lines: usize },
    /// Readable, but holds no record.
    NoRecords,
    UnrecognizedName,
    Unreadable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    /// Lowercase hex digest of the file content; empty when unreadable.
    pub sha256: String,
    pub bytes: u64,
    pub status: InputStatus,
}

impl InputFile {
    pub fn parsed(&self) -> bool {
        matches!(self.status, InputStatus::Parsed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub label: SegmentLabel,
    pub first_elapsed: Elapsed,
    pub last_elapsed: Elapsed,
    pub records: usize,
    pub malformed_lines: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplicationInfo {
    pub version: Option<String>,
    pub user_directory: Option<String>,
    pub program_directory: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub application: ApplicationInfo,
    pub user_profiles: Vec<UserProfile>,
    pub contacts: Vec<ContactEntry>,
    pub authentication: Vec<AuthArtifact>,
    pub chat: Vec<Transcript>,
    pub location: Vec<NetworkEndpoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub elapsed: Elapsed,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<NaiveDateTime>,
    pub kind: String,
    pub summary: String,
}

/// Entries with an absolute time are kept apart from relative-only ones.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub anchored: Vec<TimelineEntry>,
    pub relative: Vec<TimelineEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    /// Largest gap between the two timestamp methods, when both apply.
    pub max_timestamp_disagreement_secs: Option<f64>,
    pub chat_records: usize,
    pub duplicate_copies_removed: usize,
    pub truncated_events: usize,
    pub whisper_anomalies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub version: Option<String>,
    pub anchor: Option<Anchor>,
    pub anchor_method: AnchorMethod,
    pub segments: Vec<SegmentSummary>,
    pub gaps: Vec<RotationGap>,
    pub missing_generations: usize,
    pub orphan: bool,
    pub anomalies: Vec<String>,
    pub artifacts: Artifacts,
    pub timeline: Timeline,
    pub quality: QualityMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExaminationReport {
    pub schema_version: u32,
    pub tool: ToolInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_label: Option<String>,
    pub digest_algorithm: String,
    pub inputs: Vec<InputFile>,
    pub sessions: Vec<SessionReport>,
}

fn wall(t: &NaiveDateTime) -> String {
    t.format(WALL_TIME_FORMAT).to_string()
}

fn or_dash(s: &Option<String>) -> &str {
    s.as_deref().unwrap_or("-")
}

impl ExaminationReport {
    pub fn new(case_label: Option<String>, inputs: Vec<InputFile>, sessions: Vec<SessionReport>) -> Self {
        ExaminationReport {
            schema_version: SCHEMA_VERSION,
            tool: ToolInfo::default(),
            case_label,
            digest_algorithm: DIGEST_ALGORITHM.into(),
            inputs,
            sessions,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} examination report", self.tool.name, self.tool.version);
        if let Some(label) = &self.case_label {
            let _ = writeln!(out, "Case: {label}");
        }
        let _ = writeln!(out, "\nInputs ({} digests)", self.digest_algorithm);
        for input in &self.inputs {
            let status = match &input.status {
                InputStatus::Parsed { label, records, malformed_lines } => {
                    format!("{label}, {records} records, {malformed_lines} malformed lines")
                }
                InputStatus::NoRecords => "no records".into(),
                InputStatus::UnrecognizedName => "not a log file name".into(),
                InputStatus::Unreadable { reason } => format!("unreadable: {reason}"),
            };
            let _ = writeln!(out, "  {}  {} bytes  {}  [{}]", input.path, input.bytes, input.sha256, status);
        }
        for (i, s) in self.sessions.iter().enumerate() {
            render_session(&mut out, i + 1, s);
        }
        if self.sessions.is_empty() {
            let _ = writeln!(out, "\nNo session found.");
        }
        out
    }
}

fn render_session(out: &mut String, n: usize, s: &SessionReport) {
    let app = &s.artifacts.application;
    let _ = writeln!(out, "\nSession {n}{}", if s.orphan { " (orphan segment)" } else { "" });
    let _ = writeln!(out, "  Client version:    {}", or_dash(&app.version));
    let _ = writeln!(out, "  User directory:    {}", or_dash(&app.user_directory));
    let _ = writeln!(out, "  Program directory: {}", or_dash(&app.program_directory));
    match &s.anchor {
        Some(a) => {
            let _ = writeln!(out, "  Session start:     {} at elapsed {}", wall(&a.wall_time), a.wall_elapsed);
        }
        None => {
            let _ = writeln!(out, "  Session start:     unknown");
        }
    }
    let labels: Vec<String> = s.segments.iter().map(|g| g.label.to_string()).collect();
    let _ = writeln!(out, "  Segments:          {}", labels.join(" "));
    for g in &s.gaps {
        let _ = writeln!(out, "  Gap after {}: {} generation(s) overwritten before {}", g.after, g.missing, g.before);
    }
    for a in &s.anomalies {
        let _ = writeln!(out, "  Anomaly: {a}");
    }

    let _ = writeln!(out, "\n  User profiles");
    for p in &s.artifacts.user_profiles {
        let id = p.member_id.map_or("-".into(), |i| i.to_string());
        let _ = writeln!(
            out,
            "    {} (member {id}, {}) country {} declared {}",
            p.avatar_name,
            if p.is_vip { "VIP" } else { "guest" },
            or_dash(&p.country),
            or_dash(&p.country_code)
        );
    }
    let _ = writeln!(out, "\n  Contacts");
    for c in &s.artifacts.contacts {
        let id = c.member_id.map_or("-".into(), |i| i.to_string());
        let _ = writeln!(out, "    {:?}: {} ({id})", c.relation, or_dash(&c.avatar_name));
    }
    let _ = writeln!(out, "\n  Authentication");
    for a in &s.artifacts.authentication {
        let state = if a.password_masked { "masked" } else { "NOT masked" };
        let _ = writeln!(out, "    {} {} password {state} ({})", a.elapsed, or_dash(&a.avatar_name), a.source_file);
    }
    let _ = writeln!(out, "\n  Network endpoints");
    for e in &s.artifacts.location {
        let _ = writeln!(out, "    {} {} ({:?}) -> {}", e.elapsed, e.client, e.scope, e.server);
    }
    for t in &s.artifacts.chat {
        let ids: Vec<String> = t.participants.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "\n  Chat {} with {}", t.chat_id, ids.join(", "));
        for e in &t.events {
            let at = e.wall_time.as_ref().map_or_else(|| format!("+{}", e.elapsed), wall);
            let to = match e.recipient {
                Recipient::Room => String::new(),
                Recipient::Whisper(id) => format!(" -> {id} (whisper)"),
            };
            let flag = if e.anomalies.is_empty() { "" } else { "  [!]" };
            let _ = writeln!(out, "    {at}  {}{to}: {}{flag}", e.user_id, e.text);
        }
    }
    let q = &s.quality;
    let _ = writeln!(out, "\n  Quality");
    let _ = writeln!(out, "    Timestamp method:      {:?}", s.anchor_method);
    if let Some(d) = q.max_timestamp_disagreement_secs {
        let _ = writeln!(out, "    Method disagreement:   {d:.3} s");
    }
    let _ = writeln!(out, "    Chat records:          {}", q.chat_records);
    let _ = writeln!(out, "    Duplicates removed:    {}", q.duplicate_copies_removed);
    let _ = writeln!(out, "    Truncated events:      {}", q.truncated_events);
    let _ = writeln!(out, "    Whisper anomalies:     {}", q.whisper_anomalies);
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitCounts {
    pub records: usize,
    pub partial_records: usize,
    pub sqlite_databases: usize,
}

impl HitCounts {
    pub fn of(hits: &[CarveHit]) -> Self {
        let count = |k| hits.iter().filter(|h| h.kind == k).count();
        HitCounts {
            records: count(HitKind::Record),
            partial_records: count(HitKind::PartialRecord),
            sqlite_databases: count(HitKind::SqliteDatabase),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarveReport {
    pub schema_version: u32,
    pub tool: ToolInfo,
    pub digest_algorithm: String,
    pub image: InputFile,
    pub config: ScanConfig,
    pub counts: HitCounts,
    pub hits: Vec<CarveHit>,
}

impl CarveReport {
    pub fn new(image: InputFile, config: ScanConfig, hits: Vec<CarveHit>) -> Self {
        CarveReport {
            schema_version: SCHEMA_VERSION,
            tool: ToolInfo::default(),
            digest_algorithm: DIGEST_ALGORITHM.into(),
            image,
            config,
            counts: HitCounts::of(&hits),
            hits,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} carving report", self.tool.name, self.tool.version);
        let _ = writeln!(out, "Image: {}  {} bytes  {}", self.image.path, self.image.bytes, self.image.sha256);
        let c = &self.counts;
        let _ = writeln!(
            out,
            "Hits: {} records, {} partial records, {} SQLite headers",
            c.records, c.partial_records, c.sqlite_databases
        );
        for h in &self.hits {
            let kind = match h.kind {
                HitKind::Record => "record ",
                HitKind::PartialRecord => "partial",
                HitKind::SqliteDatabase => "sqlite ",
            };
            let _ = writeln!(out, "  {:>12}  {kind}  {:.2}  {}", h.offset, h.score, h.text);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_round_trips() {
        let input = InputFile {
            path: "IMVULog.log".into(),
            sha256: "00".repeat(32),
            bytes: 0,
            status: InputStatus::NoRecords,
        };
        let r = ExaminationReport::new(Some("case 7".into()), vec![input], vec![]);
        let back = ExaminationReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.render_text().contains("No session found."));
        assert!(r.to_json().contains("\"schema_version\": 1"));
    }

    #[test]
    fn status_is_tagged() {
        let s = serde_json::to_string(&InputStatus::Unreadable { reason: "denied".into() }).unwrap();
        assert_eq!(s, r#"{"state":"unreadable","reason":"denied"}"#);
    }
}
