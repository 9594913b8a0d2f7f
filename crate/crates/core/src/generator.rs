//! Deterministic synthesis of client log corpora with exact ground truth.
//!
//! [`simulate`] turns a [`SimulationScript`] into the record stream a client
//! would have logged, [`plan_rotation`] / [`render_corpus`] split it into
//! rotated files, and [`plant_in_noise`] hides rendered records in a noise
//! image. Every output is a pure function of the script and seed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::{Recipient, DEFAULT_DEDUP_WINDOW, DISPATCHER_SOURCE};
use crate::grammar::{render_record_line, Elapsed, LogLevel, LogRecord, ELLIPSIS, MAX_RECORD_LEN, TRUNCATED_PREFIX_LEN};
use crate::identity::{avatar_name_problem, is_vip_name, AddressScope, ContactEntry, Relation, PASSWORD_MASK};
use crate::literal::{repr, repr_str, Value};
use crate::segment::{SegmentLabel, DEFAULT_ROTATION_THRESHOLD, MAX_EXTENSION, WALL_TIME_FORMAT};
use crate::text;

/// Elapsed time at which the session start time is logged.
pub const START_ANCHOR_ELAPSED: Elapsed = Elapsed::from_millis(1102);
/// Chat messages may not be scripted earlier than this after session start.
pub const MIN_MESSAGE_OFFSET_SECS: i64 = 2;
pub const DISPATCH_INTERVAL_SECS: i64 = 30;
pub const DEFAULT_DUPLICATION: usize = 2;
pub const MANIFEST_FILE_NAME: &str = "manifest.json";

const SAME_SECOND_STEP_MS: u64 = 20;
const MAX_MESSAGES_PER_SECOND: usize = 40;
const CONTACTS_PER_RECORD: usize = 4;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("records need {needed} bytes but the image holds {available}")]
    Overflow { needed: usize, available: usize },
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("manifest serialisation: {0}")]
    Json(#[from] serde_json::Error),
}

fn invalid(msg: impl Into<String>) -> GeneratorError {
    GeneratorError::InvalidScript(msg.into())
}

mod wall_format {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::segment::WALL_TIME_FORMAT;

    pub fn serialize<S: Serializer>(t: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&t.format(WALL_TIME_FORMAT))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let s = String::deserialize(d)?;
        NaiveDateTime::parse_from_str(&s, WALL_TIME_FORMAT).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub avatar_name: String,
    pub member_id: u64,
    pub vip: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Room {
    pub chat_id: u64,
    pub members: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptMessage {
    pub unix_timestamp: i64,
    pub sender: u64,
    pub chat_id: u64,
    /// `0` for the whole room, otherwise the whisper recipient.
    #[serde(default)]
    pub to: u64,
    pub text: String,
}

impl ScriptMessage {
    pub fn recipient(&self) -> Recipient {
        match self.to {
            0 => Recipient::Room,
            n => Recipient::Whisper(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptContact {
    pub relation: Relation,
    #[serde(default)]
    pub member_id: Option<u64>,
    #[serde(default)]
    pub avatar_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptConnection {
    pub client: SocketAddrV4,
    pub server: SocketAddrV4,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSettings {
    #[serde(default)]
    pub country: Option<String>,
    #[serde(default)]
    pub country_code: Option<String>,
    /// Additional `userInfo_` keys, logged verbatim.
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

fn default_version() -> String {
    "516.0".into()
}

fn default_windows_user() -> String {
    "Examiner".into()
}

fn default_threshold() -> u64 {
    DEFAULT_ROTATION_THRESHOLD
}

/// A scripted session as seen from the examined machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationScript {
    #[serde(with = "wall_format")]
    pub session_start: NaiveDateTime,
    #[serde(default = "default_version")]
    pub version: String,
    #[serde(default = "default_windows_user")]
    pub windows_user: String,
    /// Member id of the account logged in on the examined machine.
    pub local_member: u64,
    pub participants: Vec<Participant>,
    pub rooms: Vec<Room>,
    pub messages: Vec<ScriptMessage>,
    #[serde(default)]
    pub contacts: Vec<ScriptContact>,
    #[serde(default)]
    pub connections: Vec<ScriptConnection>,
    #[serde(default)]
    pub profile: ProfileSettings,
    #[serde(default = "default_threshold")]
    pub rotation_threshold: u64,
    #[serde(default)]
    pub seed: u64,
}

impl SimulationScript {
    /// Parses and validates a JSON script.
    pub fn from_json(text: &str) -> Result<Self, GeneratorError> {
        let script: SimulationScript = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn start_unix(&self) -> i64 {
        self.session_start.and_utc().timestamp()
    }

    pub fn participant(&self, id: u64) -> Option<&Participant> {
        self.participants.iter().find(|p| p.member_id == id)
    }

    /// Checks every script invariant, naming the first violation.
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let mut ids = BTreeSet::new();
        for p in &self.participants {
            if p.member_id == 0 {
                return Err(invalid(format!("participant {} has member id 0", p.avatar_name)));
            }
            if !ids.insert(p.member_id) {
                return Err(invalid(format!("duplicate member id {}", p.member_id)));
            }
            if let Some(problem) = avatar_name_problem(&p.avatar_name) {
                return Err(invalid(problem));
            }
            if p.vip != is_vip_name(&p.avatar_name) {
                return Err(invalid(format!(
                    "participant {}: VIP flag must match the absence of the Guest_ prefix",
                    p.avatar_name
                )));
            }
        }
        if !ids.contains(&self.local_member) {
            return Err(invalid(format!("local member {} is not a participant", self.local_member)));
        }
        let mut rooms = BTreeMap::new();
        for r in &self.rooms {
            if r.members.is_empty() {
                return Err(invalid(format!("room {} has no members", r.chat_id)));
            }
            if let Some(m) = r.members.iter().find(|m| !ids.contains(m)) {
                return Err(invalid(format!("room {} member {m} is not a participant", r.chat_id)));
            }
            if rooms.insert(r.chat_id, r).is_some() {
                return Err(invalid(format!("duplicate chat id {}", r.chat_id)));
            }
        }

        let earliest = self.start_unix() + MIN_MESSAGE_OFFSET_SECS;
        let mut prev_ts = i64::MIN;
        let mut per_second = 0usize;
        let mut last_seen: HashMap<(u64, u64, u64, &str), i64> = HashMap::new();
        let window_secs = (DEFAULT_DEDUP_WINDOW.millis() / 1000) as i64 + 1;
        for (i, m) in self.messages.iter().enumerate() {
            let at = |what: String| invalid(format!("message {i}: {what}"));
            if m.unix_timestamp < prev_ts {
                return Err(at("timestamps must be non-decreasing".into()));
            }
            per_second = if m.unix_timestamp == prev_ts { per_second + 1 } else { 1 };
            if per_second > MAX_MESSAGES_PER_SECOND {
                return Err(at(format!("more than {MAX_MESSAGES_PER_SECOND} messages in one second")));
            }
            prev_ts = m.unix_timestamp;
            if m.unix_timestamp < earliest {
                return Err(at(format!("scripted before session start + {MIN_MESSAGE_OFFSET_SECS} s")));
            }
            let room = rooms.get(&m.chat_id).ok_or_else(|| at(format!("unknown chat id {}", m.chat_id)))?;
            if !room.members.contains(&m.sender) {
                return Err(at(format!("sender {} is not in room {}", m.sender, m.chat_id)));
            }
            if m.text.is_empty() {
                return Err(at("empty text".into()));
            }
            if m.to != 0 {
                if m.to == m.sender {
                    return Err(at("whisper to self".into()));
                }
                if !room.members.contains(&m.to) {
                    return Err(at(format!("whisper recipient {} is not in room {}", m.to, m.chat_id)));
                }
                let vip = |id| self.participant(id).is_some_and(|p| p.vip);
                if !vip(m.sender) && !vip(m.to) {
                    return Err(at(format!(
                        "whisper between non-VIP members {} and {} is not possible",
                        m.sender, m.to
                    )));
                }
            }
            let key = (m.sender, m.chat_id, m.to, m.text.as_str());
            if let Some(prev) = last_seen.insert(key, m.unix_timestamp) {
                if m.unix_timestamp - prev <= window_secs {
                    return Err(at("identical message repeated within the deduplication window".into()));
                }
            }
            let line = chat_line_len(m);
            if line > MAX_RECORD_LEN && repr_str(&m.text).len() != m.text.len() + 2 {
                return Err(at("over-long message text must not need escaping".into()));
            }
        }
        for c in &self.contacts {
            if c.member_id.is_none() && c.avatar_name.is_none() {
                return Err(invalid("contact needs a member id or an avatar name"));
            }
        }
        Ok(())
    }
}

/// What a generated record stands for in the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordTag {
    Chat(usize),
    Profile,
    Auth,
    Contact(usize),
    Connection(usize),
    Dispatcher,
    Other,
}

/// Output of [`simulate`]: the session's records in write order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulatedSession {
    pub records: Vec<LogRecord>,
    pub tags: Vec<RecordTag>,
}

impl SimulatedSession {
    pub fn rendered_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.records.iter().map(render_record_line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedEvent {
    pub sender: u64,
    pub chat_id: u64,
    pub recipient: Recipient,
    pub text: String,
    pub unix_timestamp: i64,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedTranscript {
    pub chat_id: u64,
    pub participants: BTreeSet<u64>,
    pub events: Vec<ExpectedEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedProfile {
    pub avatar_name: String,
    pub member_id: u64,
    pub is_vip: bool,
    pub country: Option<String>,
    pub country_code: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedEndpoint {
    pub client: SocketAddrV4,
    pub server: SocketAddrV4,
    pub scope: AddressScope,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentTruth {
    pub generation: usize,
    pub label: SegmentLabel,
    pub first_elapsed: Elapsed,
    pub last_elapsed: Elapsed,
    pub records: usize,
    pub bytes: u64,
    pub survived: bool,
}

/// Exact expected output of examining a generated corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthManifest {
    pub seed: u64,
    pub version: String,
    #[serde(with = "wall_format")]
    pub session_start: NaiveDateTime,
    pub duplication: usize,
    pub total_records: usize,
    pub chat_records: usize,
    pub scripted_messages: usize,
    pub rotation_threshold: Option<u64>,
    /// Every generation written, oldest first, including overwritten ones.
    pub segments: Vec<SegmentTruth>,
    pub overwritten_generations: usize,
    pub surviving_order: Vec<SegmentLabel>,
    pub transcripts: Vec<ExpectedTranscript>,
    pub profiles: Vec<ExpectedProfile>,
    pub contacts: Vec<ContactEntry>,
    pub endpoints: Vec<ExpectedEndpoint>,
    pub auth_artifacts: usize,
}

impl GroundTruthManifest {
    pub fn expected_event_count(&self) -> usize {
        self.transcripts.iter().map(|t| t.events.len()).sum()
    }
}

struct Builder {
    thread: String,
    entries: Vec<(Elapsed, usize, LogRecord, RecordTag)>,
}

impl Builder {
    fn push(&mut self, elapsed: u64, source: &str, line: u32, level: LogLevel, msg: impl Into<String>, tag: RecordTag) {
        let seq = self.entries.len();
        let record = LogRecord::new(Elapsed(elapsed), self.thread.clone(), source, line, level, msg);
        self.entries.push((Elapsed(elapsed), seq, record, tag));
    }
}

fn chat_payload(m: &ScriptMessage, key_order_flip: bool) -> String {
    let to = (Value::Str("to".into()), Value::Int(m.to as i64));
    let message = (Value::Str("message".into()), Value::Str(m.text.clone()));
    let dict = if key_order_flip && chat_line_len(m) <= MAX_RECORD_LEN {
        Value::Dict(vec![message, to])
    } else {
        // the text goes last so a cut line still carries the recipient
        Value::Dict(vec![to, message])
    };
    repr(&Value::List(vec![Value::Int(m.sender as i64), Value::Int(m.chat_id as i64), dict]))
}

const CHAT_SOURCES: [(&str, u32, &str); 2] = [
    ("chatsession.pyo", 412, "chat message received "),
    ("imvuchat.pyo", 97, "dispatching chatEvent "),
];

/// Longest rendered chat line for `m` among the sources it is logged by.
fn chat_line_len(m: &ScriptMessage) -> usize {
    CHAT_SOURCES
        .iter()
        .map(|(src, line, prefix)| {
            let r = LogRecord::new(Elapsed(0), "00000", *src, *line, LogLevel::Info, "");
            let head = render_record_line(&r).chars().count();
            head + prefix.len() + chat_payload_unchecked_len(m)
        })
        .max()
        .unwrap_or(0)
}

fn chat_payload_unchecked_len(m: &ScriptMessage) -> usize {
    let dict = Value::Dict(vec![
        (Value::Str("to".into()), Value::Int(m.to as i64)),
        (Value::Str("message".into()), Value::Str(m.text.clone())),
    ]);
    repr(&Value::List(vec![Value::Int(m.sender as i64), Value::Int(m.chat_id as i64), dict]))
        .chars()
        .count()
        + 7 // headroom for elapsed growth
}

/// The record as it reads back from disk once the logger has applied the
/// length limit.
pub fn as_written(mut record: LogRecord) -> LogRecord {
    let msg_len = record.message.chars().count();
    let head_len = render_record_line(&LogRecord { message: String::new(), ..record.clone() }).chars().count();
    if head_len + msg_len > MAX_RECORD_LEN {
        let keep = TRUNCATED_PREFIX_LEN.saturating_sub(head_len);
        record.message = record.message.chars().take(keep).collect::<String>() + ELLIPSIS;
    }
    record.truncated = head_len + record.message.chars().count() == MAX_RECORD_LEN && record.message.ends_with(ELLIPSIS);
    record
}

/// Expected chat text for a written chat record.
fn expected_text(record: &LogRecord, m: &ScriptMessage) -> (String, bool) {
    if !record.truncated {
        return (m.text.clone(), m.text.ends_with(ELLIPSIS));
    }
    // plain text only (validated): the surviving characters are a prefix
    let head = format!("[{}, {}, {{'to': {}, 'message': ", m.sender, m.chat_id, m.to);
    let at = record.message.find(&head).expect("payload in record") + head.len() + 1;
    (record.message[at..].to_string(), true)
}

const FILLER: [(&str, u32, LogLevel, &str); 8] = [
    ("avatar.pyo", 220, LogLevel::Debug, "loading product {n} for avatar"),
    ("productloader.pyo", 88, LogLevel::Info, "fetched product {n} from cache"),
    ("scene.pyo", 1201, LogLevel::Debug, "scene node {n} updated"),
    ("hud.pyo", 64, LogLevel::Debug, "hud refresh took {n} ms"),
    ("network.pyo", 311, LogLevel::Info, "http request {n} completed with status 200"),
    ("imqconnection.pyo", 640, LogLevel::Debug, "heartbeat ack {n}"),
    ("gecko.pyo", 45, LogLevel::Warning, "slow script warning in panel {n}"),
    ("sound.pyo", 19, LogLevel::Debug, "sound buffer {n} released"),
];

/// Renders the script into the record stream the client would have written.
pub fn simulate(script: &SimulationScript, seed: u64) -> Result<(SimulatedSession, GroundTruthManifest), GeneratorError> {
    simulate_with(script, seed, DEFAULT_DUPLICATION)
}

pub fn simulate_with(
    script: &SimulationScript,
    seed: u64,
    duplication: usize,
) -> Result<(SimulatedSession, GroundTruthManifest), GeneratorError> {
    script.validate()?;
    if duplication == 0 {
        return Err(invalid("duplication factor must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder { thread: format!("{}*", rng.gen_range(1000..10000)), entries: Vec::new() };
    let user = &script.windows_user;
    let program_dir = format!("C:\\Users\\{user}\\AppData\\Roaming\\IMVUClient");
    let user_dir = format!("C:\\Users\\{user}\\AppData\\Roaming\\IMVU");
    let start = script.session_start.format(WALL_TIME_FORMAT).to_string();
    let o = RecordTag::Other;
    use LogLevel::*;

    // startup block, same sequence as a real client
    b.push(1099, "log.pyo", 509, Info, "-----", o);
    b.push(1100, "log.pyo", 510, Info, "GenerateLogger: cwd is", o);
    b.push(1100, "log.pyo", 511, Info, program_dir.clone(), o);
    b.push(1100, "log.pyo", 512, Info, "disableLogRotationWhileRunning: None", o);
    b.push(1101, "log.pyo", 514, Info, "ProgramDirectory:", o);
    b.push(1101, "log.pyo", 515, Info, program_dir.clone(), o);
    b.push(1101, "log.pyo", 520, Info, format!("UserDirectory: {user_dir}"), o);
    b.push(1102, "log.pyo", 532, Info, format!("Current time: {start}"), o);
    b.push(1102, "log.pyo", 532, Info, "Looking for logging config file at", o);
    b.push(1102, "log.pyo", 532, Info, format!("{program_dir}\\logging.cfg"), o);
    b.push(1102, "log.pyo", 532, Info, "No valid logging.cfg found and applied", o);
    b.push(1102, "clientapp.pyo", 713, Info, format!("Starting IMVU version {}", script.version), o);
    b.push(1129, "network.pyo", 75, Info, "ProxyEnable is 0, ignoring proxy settings", o);
    b.push(1130, "windows.pyo", 103, Info, "IMVUMainThreadSerializerMessage registered as 0xc16d", o);
    b.push(1130, "windows.pyo", 31, Info, "IMVUKillSleepMessage registered as 0xc174", o);
    b.push(1213, "windows.pyo", 154, Error, "Unable to set IMVU protocol handler", o);

    let mut cursor = 1300u64;
    let mut tick = || {
        cursor += 1;
        cursor
    };
    for (i, c) in script.connections.iter().enumerate() {
        b.push(tick(), "imqconnection.pyo", 515, Info, format!("connecting {} -> {}", c.client, c.server), RecordTag::Connection(i));
    }
    let local = script.participant(script.local_member).expect("validated");
    let login = Value::Dict(vec![
        (Value::Str("avatarname".into()), Value::Str(local.avatar_name.clone())),
        (Value::Str("password".into()), Value::Str(PASSWORD_MASK.into())),
    ]);
    b.push(tick(), "loginmanager.pyo", 88, Info, format!("login request {}", repr(&login)), RecordTag::Auth);

    let mut fields: Vec<(String, String)> = vec![
        ("avatarname".into(), local.avatar_name.clone()),
        ("userId".into(), local.member_id.to_string()),
        ("status".into(), "Running".into()),
        ("password".into(), PASSWORD_MASK.into()),
    ];
    if let Some(c) = &script.profile.country {
        fields.push(("country".into(), c.clone()));
    }
    if let Some(c) = &script.profile.country_code {
        fields.push(("country_code".into(), c.clone()));
    }
    fields.extend(script.profile.extra.iter().map(|(k, v)| (k.clone(), v.clone())));
    let at = tick();
    b.push(at, "clientapp.pyo", 902, Info, "self.userInfo_:", RecordTag::Profile);
    for (k, v) in fields {
        b.push(at, "clientapp.pyo", 902, Info, format!("{k}: {v}"), RecordTag::Profile);
    }

    let mut by_relation: BTreeMap<Relation, Vec<(usize, &ScriptContact)>> = BTreeMap::new();
    for (i, c) in script.contacts.iter().enumerate() {
        by_relation.entry(c.relation).or_default().push((i, c));
    }
    for (relation, list) in &by_relation {
        for chunk in list.chunks(CONTACTS_PER_RECORD) {
            let items: Vec<Value> = chunk
                .iter()
                .map(|(_, c)| {
                    let mut d = Vec::new();
                    if let Some(id) = c.member_id {
                        d.push((Value::Str("userId".into()), Value::Int(id as i64)));
                    }
                    if let Some(name) = &c.avatar_name {
                        d.push((Value::Str("avatarname".into()), Value::Str(name.clone())));
                    }
                    Value::Dict(d)
                })
                .collect();
            let msg = format!("{}: {}", relation.list_word(), repr(&Value::List(items)));
            b.push(tick(), "buddystate.pyo", 212, Info, msg, RecordTag::Contact(chunk[0].0));
        }
    }
    for room in &script.rooms {
        for m in &room.members {
            let p = script.participant(*m).expect("validated");
            let d = Value::Dict(vec![
                (Value::Str("chatId".into()), Value::Int(room.chat_id as i64)),
                (Value::Str("userId".into()), Value::Int(p.member_id as i64)),
                (Value::Str("avatarname".into()), Value::Str(p.avatar_name.clone())),
            ]);
            b.push(tick(), "chatsession.pyo", 150, Info, format!("participant joined {}", repr(&d)), o);
        }
    }
    let first_message_ms = START_ANCHOR_ELAPSED.millis() + (MIN_MESSAGE_OFFSET_SECS as u64) * 1000;
    if cursor >= first_message_ms {
        return Err(invalid("too many contacts, connections or room members for the startup block"));
    }

    let start_unix = script.start_unix();
    let to_elapsed = |ts: i64| START_ANCHOR_ELAPSED.millis() + ((ts - start_unix) as u64) * 1000;
    let mut last_ts = start_unix;
    let mut same_second = 0u64;
    let mut prev_ts = i64::MIN;
    let mut chat_records = 0usize;
    for (i, m) in script.messages.iter().enumerate() {
        same_second = if m.unix_timestamp == prev_ts { same_second + 1 } else { 0 };
        prev_ts = m.unix_timestamp;
        last_ts = m.unix_timestamp;
        let e = to_elapsed(m.unix_timestamp) + same_second * SAME_SECOND_STEP_MS;
        // copies of a cut line must be cut at the same character
        let copy_step = if chat_line_len(m) > MAX_RECORD_LEN { 0 } else { 3 };
        for copy in 0..duplication {
            let (src, line, prefix) = CHAT_SOURCES[copy % CHAT_SOURCES.len()];
            let payload = chat_payload(m, rng.gen_bool(0.5));
            b.push(e + copy as u64 * copy_step, src, line, Info, format!("{prefix}{payload}"), RecordTag::Chat(i));
            chat_records += 1;
        }
        for _ in 0..rng.gen_range(0..=3) {
            let (src, line, level, text) = FILLER[rng.gen_range(0..FILLER.len())];
            let msg = text.replace("{n}", &rng.gen_range(1..100_000).to_string());
            b.push(e + rng.gen_range(8..16), src, line, level, msg, o);
        }
        if rng.gen_ratio(1, 50) {
            let at = e + 17;
            b.push(at, "gecko.pyo", 301, Error, "Traceback (most recent call last):", o);
            b.push(at, "gecko.pyo", 301, Error, "  File \"gecko.pyo\", line 301, in dispatch", o);
            b.push(at, "gecko.pyo", 301, Error, "RuntimeError: panel not ready", o);
        }
    }

    // dispatcher records carry whole-second absolute time
    let mut k = 1i64;
    while k * DISPATCH_INTERVAL_SECS <= last_ts - start_unix + DISPATCH_INTERVAL_SECS {
        let frac = rng.gen_range(100..900u64);
        let e = START_ANCHOR_ELAPSED.millis() + (k * DISPATCH_INTERVAL_SECS) as u64 * 1000 + frac;
        let wall = script.session_start + Duration::seconds(k * DISPATCH_INTERVAL_SECS);
        let msg = format!("processing session events, server time {}", wall.format(WALL_TIME_FORMAT));
        b.push(e, DISPATCHER_SOURCE, 226, Info, msg, RecordTag::Dispatcher);
        k += 1;
    }
    let end = b.entries.iter().map(|e| e.0.millis()).max().unwrap_or(0) + 1000;
    b.push(end, "clientapp.pyo", 1520, Info, "Shutting down IMVU client", o);

    b.entries.sort_by_key(|e| (e.0, e.1));
    let (records, tags): (Vec<_>, Vec<_>) = b.entries.into_iter().map(|(_, _, r, t)| (as_written(r), t)).unzip();
    let session = SimulatedSession { records, tags };

    let manifest = GroundTruthManifest {
        seed,
        version: script.version.clone(),
        session_start: script.session_start,
        duplication,
        total_records: session.records.len(),
        chat_records,
        scripted_messages: script.messages.len(),
        rotation_threshold: None,
        segments: Vec::new(),
        overwritten_generations: 0,
        surviving_order: vec![SegmentLabel::Base],
        transcripts: Vec::new(),
        profiles: Vec::new(),
        contacts: Vec::new(),
        endpoints: Vec::new(),
        auth_artifacts: 0,
    };
    let mut manifest = manifest;
    let all = vec![true; session.records.len()];
    fill_expectations(&mut manifest, script, &session, &all);
    Ok((session, manifest))
}

/// Recomputes the expected artifacts from the records that survived.
fn fill_expectations(manifest: &mut GroundTruthManifest, script: &SimulationScript, session: &SimulatedSession, alive: &[bool]) {
    let mut survived_msgs = vec![false; script.messages.len()];
    let mut first_copy: Vec<Option<&LogRecord>> = vec![None; script.messages.len()];
    let mut contact_alive = vec![false; script.contacts.len()];
    let mut conn_alive = vec![false; script.connections.len()];
    let mut profile_alive = false;
    let mut auth = 0;
    let mut in_profile = false;
    for (idx, tag) in session.tags.iter().enumerate() {
        let live = alive[idx];
        match *tag {
            RecordTag::Chat(i) => {
                survived_msgs[i] |= live;
                if live && first_copy[i].is_none() {
                    first_copy[i] = Some(&session.records[idx]);
                }
            }
            RecordTag::Contact(first) => {
                if live {
                    let relation = script.contacts[first].relation;
                    let members: Vec<usize> = script
                        .contacts
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| c.relation == relation)
                        .map(|(i, _)| i)
                        .collect();
                    let pos = members.iter().position(|&i| i == first).unwrap();
                    for &i in members.iter().skip(pos).take(CONTACTS_PER_RECORD) {
                        contact_alive[i] = true;
                    }
                }
            }
            RecordTag::Connection(i) => conn_alive[i] |= live,
            RecordTag::Profile => {
                // the block header record carries the block
                if !in_profile {
                    profile_alive = live;
                    if live {
                        auth += 1;
                    }
                }
            }
            RecordTag::Auth => auth += usize::from(live),
            _ => {}
        }
        in_profile = *tag == RecordTag::Profile;
    }

    let mut transcripts: BTreeMap<u64, ExpectedTranscript> = BTreeMap::new();
    for (i, m) in script.messages.iter().enumerate() {
        if !survived_msgs[i] {
            continue;
        }
        let record = first_copy[i].expect("surviving copy");
        let (text, truncated) = expected_text(record, m);
        let t = transcripts.entry(m.chat_id).or_insert_with(|| ExpectedTranscript {
            chat_id: m.chat_id,
            participants: BTreeSet::new(),
            events: Vec::new(),
        });
        t.participants.insert(m.sender);
        if m.to != 0 {
            t.participants.insert(m.to);
        }
        t.events.push(ExpectedEvent {
            sender: m.sender,
            chat_id: m.chat_id,
            recipient: m.recipient(),
            text,
            unix_timestamp: m.unix_timestamp,
            truncated,
        });
    }
    manifest.transcripts = transcripts.into_values().collect();

    manifest.profiles = Vec::new();
    if profile_alive {
        let local = script.participant(script.local_member).expect("validated");
        manifest.profiles.push(ExpectedProfile {
            avatar_name: local.avatar_name.clone(),
            member_id: local.member_id,
            is_vip: local.vip,
            country: script.profile.country.clone(),
            country_code: script.profile.country_code.clone(),
        });
    }
    let mut seen = BTreeSet::new();
    manifest.contacts = Vec::new();
    let mut by_relation: BTreeMap<Relation, Vec<&ScriptContact>> = BTreeMap::new();
    for (i, c) in script.contacts.iter().enumerate() {
        if contact_alive[i] {
            by_relation.entry(c.relation).or_default().push(c);
        }
    }
    for c in by_relation.into_values().flatten() {
        let entry = ContactEntry { member_id: c.member_id, avatar_name: c.avatar_name.clone(), relation: c.relation };
        if seen.insert((entry.relation, entry.member_id, entry.avatar_name.clone())) {
            manifest.contacts.push(entry);
        }
    }
    manifest.endpoints = script
        .connections
        .iter()
        .zip(&conn_alive)
        .filter(|(_, &live)| live)
        .map(|(c, _)| ExpectedEndpoint { client: c.client, server: c.server, scope: AddressScope::of(&c.client) })
        .collect();
    manifest.auth_artifacts = auth;
}

/// One written generation of the rotation chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub label: SegmentLabel,
    pub records: Range<usize>,
    pub bytes: Vec<u8>,
}

/// Splits the rendered stream into generations. A new file is started when
/// appending the next line would push a non-empty file past `threshold`.
pub fn plan_rotation(session: &SimulatedSession, threshold: u64) -> Vec<Generation> {
    let mut gens: Vec<Generation> = Vec::new();
    let mut current = Generation { label: SegmentLabel::Base, records: 0..0, bytes: Vec::new() };
    for (i, line) in session.rendered_lines().enumerate() {
        let mut bytes = text::encode(&line);
        bytes.push(b'\n');
        if !current.bytes.is_empty() && (current.bytes.len() + bytes.len()) as u64 > threshold {
            let next_label = SegmentLabel::for_generation(gens.len() + 1);
            gens.push(std::mem::replace(
                &mut current,
                Generation { label: next_label, records: i..i, bytes: Vec::new() },
            ));
        }
        current.bytes.extend_from_slice(&bytes);
        current.records.end = i + 1;
    }
    gens.push(current);
    gens
}

/// Indices of the generations still on disk after the run.
pub fn surviving_generations(count: usize) -> Vec<usize> {
    let rotated = count.saturating_sub(1);
    let first = rotated.saturating_sub(MAX_EXTENSION as usize) + 1;
    std::iter::once(0).chain(first..=rotated).filter(|&g| g < count).collect()
}

/// Applies the rotation plan to the manifest.
pub fn apply_rotation(
    manifest: &mut GroundTruthManifest,
    script: &SimulationScript,
    session: &SimulatedSession,
    gens: &[Generation],
    threshold: u64,
) {
    let survivors: BTreeSet<usize> = surviving_generations(gens.len()).into_iter().collect();
    let mut alive = vec![false; session.records.len()];
    manifest.segments = gens
        .iter()
        .enumerate()
        .map(|(g, gen)| {
            let survived = survivors.contains(&g);
            for i in gen.records.clone() {
                alive[i] = survived;
            }
            SegmentTruth {
                generation: g,
                label: gen.label,
                first_elapsed: session.records[gen.records.start].elapsed,
                last_elapsed: session.records[gen.records.end - 1].elapsed,
                records: gen.records.len(),
                bytes: gen.bytes.len() as u64,
                survived,
            }
        })
        .collect();
    manifest.overwritten_generations = gens.len() - survivors.len();
    manifest.surviving_order = survivors.iter().map(|&g| gens[g].label).collect();
    manifest.rotation_threshold = Some(threshold);
    fill_expectations(manifest, script, session, &alive);
}

/// Writes the surviving files of the rotation chain into `out_dir` and
/// updates the manifest. Returns the written paths in write order.
pub fn render_corpus(
    script: &SimulationScript,
    session: &SimulatedSession,
    manifest: &mut GroundTruthManifest,
    out_dir: &Path,
    threshold: u64,
) -> Result<Vec<PathBuf>, GeneratorError> {
    let gens = plan_rotation(session, threshold);
    apply_rotation(manifest, script, session, &gens, threshold);
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for g in surviving_generations(gens.len()) {
        let path = out_dir.join(gens[g].label.file_name());
        fs::write(&path, &gens[g].bytes)?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_manifest(manifest: &GroundTruthManifest, path: &Path) -> Result<(), GeneratorError> {
    fs::write(path, serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Planting {
    pub offset: u64,
    pub line: String,
    pub record: LogRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantingManifest {
    pub seed: u64,
    pub image_size: u64,
    pub plantings: Vec<Planting>,
}

/// Fills an image with seeded noise and writes each rendered record at a
/// random non-overlapping offset, framed by newlines.
pub fn plant_in_noise(records: &[LogRecord], image_size: usize, seed: u64) -> Result<(Vec<u8>, PlantingManifest), GeneratorError> {
    let lines: Vec<Vec<u8>> = records.iter().map(|r| text::encode(&render_record_line(r))).collect();
    let needed: usize = lines.iter().map(|l| l.len() + 2).sum();
    if needed > image_size {
        return Err(GeneratorError::Overflow { needed, available: image_size });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = vec![0u8; image_size];
    rng.fill_bytes(&mut image);

    let free = image_size - needed;
    let mut cuts: Vec<usize> = (0..lines.len()).map(|_| rng.gen_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.shuffle(&mut rng);

    let mut plantings = Vec::with_capacity(lines.len());
    let mut used = 0usize;
    for (slot, &ri) in order.iter().enumerate() {
        let start = cuts[slot] + used;
        let line = &lines[ri];
        image[start] = b'\n';
        image[start + 1..start + 1 + line.len()].copy_from_slice(line);
        image[start + 1 + line.len()] = b'\n';
        used += line.len() + 2;
        plantings.push(Planting {
            offset: (start + 1) as u64,
            line: render_record_line(&records[ri]),
            record: records[ri].clone(),
        });
    }
    Ok((image, PlantingManifest { seed, image_size: image_size as u64, plantings }))
}

/// Parameters for [`random_script`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomScriptParams {
    pub participants: Range<usize>,
    pub messages: Range<usize>,
    pub rotation_threshold: u64,
}

impl Default for RandomScriptParams {
    fn default() -> Self {
        RandomScriptParams { participants: 2..6, messages: 100..2001, rotation_threshold: 65_536 }
    }
}

const WORDS: [&str; 40] = [
    "hi", "hello", "how", "are", "you", "where", "from", "nice", "outfit", "room", "lol", "yes", "no", "maybe",
    "later", "music", "dance", "party", "credits", "shop", "new", "avatar", "cool", "friend", "see", "tomorrow",
    "school", "age", "what", "do", "like", "it's", "\"quoted\"", "caf\u{e9}", "back", "brb", "ok", "sure", "why",
    "today",
];

const NAME_PARTS: [&str; 16] = [
    "Lady", "Inspector", "Missy", "Canary", "Yellow", "Algar", "Small", "Night", "Star", "Blue", "Fox", "Rose",
    "Dark", "Moon", "Sky", "Pixel",
];

fn random_name(rng: &mut ChaCha8Rng, taken: &BTreeSet<String>) -> String {
    loop {
        let mut name = String::new();
        while name.len() < 6 {
            name.push_str(NAME_PARTS[rng.gen_range(0..NAME_PARTS.len())]);
        }
        name.truncate(16);
        name.push_str(&rng.gen_range(1..100).to_string());
        if !taken.contains(&name) {
            return name;
        }
    }
}

fn random_public_ip(rng: &mut ChaCha8Rng) -> Ipv4Addr {
    loop {
        let ip = Ipv4Addr::new(rng.gen_range(1..224), rng.gen(), rng.gen(), rng.gen_range(1..255));
        if !ip.is_private() && !ip.is_loopback() {
            return ip;
        }
    }
}

/// A valid random script: a few participants chatting across one to three
/// rooms, with whispers, commands, contacts and connections.
pub fn random_script(params: &RandomScriptParams, seed: u64) -> SimulationScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    let n = rng.gen_range(params.participants.clone());
    let mut names = BTreeSet::new();
    let mut participants = Vec::new();
    for i in 0..n {
        let mut name = random_name(&mut rng, &names);
        // the examined account is a VIP; others are guests 40% of the time
        if i > 0 && rng.gen_bool(0.4) {
            name = format!("Guest_{name}");
        }
        names.insert(name.clone());
        participants.push(Participant {
            vip: is_vip_name(&name),
            avatar_name: name,
            member_id: 100_000 + rng.gen_range(0..900_000) * 10 + i as u64,
        });
    }
    let ids: Vec<u64> = participants.iter().map(|p| p.member_id).collect();
    let room_count = rng.gen_range(1..=3);
    let mut rooms = vec![Room { chat_id: rng.gen_range(10_000_000..99_999_999), members: ids.clone() }];
    for _ in 1..room_count {
        let mut members = ids.clone();
        members.shuffle(&mut rng);
        members.truncate(rng.gen_range(2..=ids.len()));
        members.sort_unstable();
        let chat_id = rooms[0].chat_id + rng.gen_range(1..1_000_000);
        if rooms.iter().all(|r| r.chat_id != chat_id) {
            rooms.push(Room { chat_id, members });
        }
    }

    let start = DateTime::from_timestamp(1_420_070_400 + rng.gen_range(0..60_000_000), 0)
        .expect("in range")
        .naive_utc();
    let start_unix = start.and_utc().timestamp();
    let vip = |id: u64| participants.iter().any(|p| p.member_id == id && p.vip);
    let count = rng.gen_range(params.messages.clone());
    let mut ts = start_unix + 5;
    let mut messages: Vec<ScriptMessage> = Vec::with_capacity(count);
    let mut last_seen: HashMap<(u64, u64, u64, String), i64> = HashMap::new();
    for _ in 0..count {
        ts += [0, 1, 1, 2, 3, 5, 8, 13][rng.gen_range(0..8)];
        let room = &rooms[rng.gen_range(0..rooms.len())];
        let sender = room.members[rng.gen_range(0..room.members.len())];
        let mut to = 0;
        if rng.gen_bool(0.15) {
            let options: Vec<u64> = room
                .members
                .iter()
                .copied()
                .filter(|&m| m != sender && (vip(sender) || vip(m)))
                .collect();
            if let Some(&m) = options.choose(&mut rng) {
                to = m;
            }
        }
        let words = rng.gen_range(1..=12);
        let mut text: Vec<&str> = (0..words).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
        if rng.gen_ratio(1, 20) {
            text = vec![["*wave", "*dance", "*hug", "*laugh"][rng.gen_range(0..4)]];
        }
        let mut text = text.join(" ");
        let key = (sender, room.chat_id, to, text.clone());
        if last_seen.get(&key).is_some_and(|&prev| ts - prev <= 3) {
            text.push_str(&format!(" {}", rng.gen_range(0..1000)));
        }
        last_seen.insert((sender, room.chat_id, to, text.clone()), ts);
        messages.push(ScriptMessage { unix_timestamp: ts, sender, chat_id: room.chat_id, to, text });
    }
    // keep the per-second cap
    let mut per_second = 0;
    for i in 0..messages.len() {
        per_second = if i > 0 && messages[i].unix_timestamp <= messages[i - 1].unix_timestamp { per_second + 1 } else { 0 };
        if per_second >= MAX_MESSAGES_PER_SECOND {
            let shift = 1;
            for m in &mut messages[i..] {
                m.unix_timestamp += shift;
            }
            per_second = 0;
        }
    }

    let relations = [Relation::Friend, Relation::Buddy, Relation::Fan];
    let mut contacts = Vec::new();
    for p in participants.iter().skip(1) {
        if rng.gen_bool(0.7) {
            contacts.push(ScriptContact {
                relation: relations[rng.gen_range(0..3)],
                member_id: Some(p.member_id),
                avatar_name: Some(p.avatar_name.clone()),
            });
        }
    }
    let client_ip = if rng.gen_bool(0.7) {
        Ipv4Addr::new(192, 168, rng.gen_range(0..255), rng.gen_range(2..255))
    } else {
        random_public_ip(&mut rng)
    };
    let connections = (0..rng.gen_range(1..=2))
        .map(|_| ScriptConnection {
            client: SocketAddrV4::new(client_ip, rng.gen_range(49152..65535)),
            server: SocketAddrV4::new(random_public_ip(&mut rng), [443, 80, 5222][rng.gen_range(0..3)]),
        })
        .collect();
    let countries = [("Netherlands", "NL"), ("Ireland", "IE"), ("United States", "US"), ("Germany", "DE")];
    let (country, _) = countries[rng.gen_range(0..countries.len())];
    let (_, code) = countries[rng.gen_range(0..countries.len())];

    SimulationScript {
        session_start: start,
        version: default_version(),
        windows_user: default_windows_user(),
        local_member: participants[0].member_id,
        participants,
        rooms,
        messages,
        contacts,
        connections,
        profile: ProfileSettings { country: Some(country.into()), country_code: Some(code.into()), extra: BTreeMap::new() },
        rotation_threshold: params.rotation_threshold,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_record_line;

    pub(crate) fn two_party(messages: usize) -> SimulationScript {
        let start = crate::segment::parse_wall_time("2015-02-06 11:14:51").unwrap();
        let t0 = start.and_utc().timestamp();
        SimulationScript {
            session_start: start,
            version: "516.0".into(),
            windows_user: "Robert".into(),
            local_member: 111,
            participants: vec![
                Participant { avatar_name: "InspectorAlgar".into(), member_id: 111, vip: true },
                Participant { avatar_name: "Guest_missycanaryyellow".into(), member_id: 222, vip: false },
            ],
            rooms: vec![Room { chat_id: 555, members: vec![111, 222] }],
            messages: (0..messages)
                .map(|i| ScriptMessage {
                    unix_timestamp: t0 + 10 + i as i64 * 7,
                    sender: if i % 2 == 0 { 111 } else { 222 },
                    chat_id: 555,
                    to: 0,
                    text: format!("message number {i}"),
                })
                .collect(),
            contacts: vec![],
            connections: vec![],
            profile: ProfileSettings::default(),
            rotation_threshold: DEFAULT_ROTATION_THRESHOLD,
            seed: 1,
        }
    }

    #[test]
    fn two_party_counts() {
        let (session, manifest) = simulate(&two_party(10), 7).unwrap();
        assert_eq!(manifest.expected_event_count(), 10);
        assert_eq!(manifest.chat_records, 20);
        let chat_tags = session.tags.iter().filter(|t| matches!(t, RecordTag::Chat(_))).count();
        assert_eq!(chat_tags, 20);
    }

    #[test]
    fn guest_whisper_is_rejected() {
        let mut script = two_party(2);
        script.participants[0] = Participant { avatar_name: "Guest_InspectorAlgar".into(), member_id: 111, vip: false };
        script.messages[0].to = 222;
        let err = simulate(&script, 1).unwrap_err();
        assert!(matches!(err, GeneratorError::InvalidScript(ref m) if m.contains("non-VIP")), "{err}");
    }

    #[test]
    fn other_invalid_scripts() {
        let mut s = two_party(3);
        s.messages.swap(0, 2);
        assert!(s.validate().is_err());
        let mut s = two_party(1);
        s.messages[0].chat_id = 9;
        assert!(s.validate().is_err());
        let mut s = two_party(1);
        s.participants[1].vip = true;
        assert!(s.validate().is_err());
        let mut s = two_party(2);
        s.messages[1] = s.messages[0].clone();
        assert!(s.validate().is_err());
        let mut s = two_party(1);
        s.messages[0].unix_timestamp = s.start_unix();
        assert!(s.validate().is_err());
    }

    #[test]
    fn fixed_seed_is_byte_identical() {
        let script = random_script(&RandomScriptParams { messages: 50..60, ..Default::default() }, 3);
        let (a, ma) = simulate(&script, 3).unwrap();
        let (b, mb) = simulate(&script, 3).unwrap();
        assert_eq!(plan_rotation(&a, 4096), plan_rotation(&b, 4096));
        assert_eq!(ma, mb);
        let (c, _) = simulate(&script, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rendered_lines_are_in_grammar() {
        let script = random_script(&RandomScriptParams { messages: 200..201, ..Default::default() }, 11);
        let (session, _) = simulate(&script, 11).unwrap();
        for (r, line) in session.records.iter().zip(session.rendered_lines()) {
            assert!(line.chars().count() <= MAX_RECORD_LEN);
            assert_eq!(&parse_record_line(&line).unwrap(), r);
        }
        for w in session.records.windows(2) {
            assert!(w[0].elapsed <= w[1].elapsed);
        }
    }

    #[test]
    fn small_stream_stays_in_base() {
        let (session, _) = simulate(&two_party(5), 1).unwrap();
        let gens = plan_rotation(&session, DEFAULT_ROTATION_THRESHOLD);
        assert_eq!(gens.len(), 1);
        assert_eq!(gens[0].label, SegmentLabel::Base);
    }

    #[test]
    fn rotation_respects_threshold() {
        let script = random_script(&RandomScriptParams { messages: 800..801, ..Default::default() }, 5);
        let (session, _) = simulate(&script, 5).unwrap();
        let gens = plan_rotation(&session, 16_384);
        assert!(gens.len() > 7);
        for g in &gens {
            assert!(g.bytes.len() <= 16_384);
        }
        let total: usize = gens.iter().map(|g| g.records.len()).sum();
        assert_eq!(total, session.records.len());
    }

    #[test]
    fn survivor_arithmetic() {
        assert_eq!(surviving_generations(1), vec![0]);
        assert_eq!(surviving_generations(4), vec![0, 1, 2, 3]);
        assert_eq!(surviving_generations(7), vec![0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(surviving_generations(9), vec![0, 3, 4, 5, 6, 7, 8]);
        assert_eq!(surviving_generations(11), vec![0, 5, 6, 7, 8, 9, 10]);
    }

    #[test]
    fn long_message_truncation_is_predicted() {
        let mut script = two_party(2);
        script.messages[1].text = "x".repeat(600);
        let (session, manifest) = simulate(&script, 1).unwrap();
        let ev = &manifest.transcripts[0].events[1];
        assert!(ev.truncated);
        assert!(ev.text.ends_with("..."));
        let x = ev.text.len() - 3;
        assert_eq!(ev.text, format!("{}...", "x".repeat(x)));
        let lines: Vec<String> = session.rendered_lines().filter(|l| l.contains("xxxx")).collect();
        assert_eq!(lines.len(), 2);
        for line in &lines {
            assert_eq!(line.len(), 512);
            assert!(line.ends_with(&ev.text));
            assert_eq!(&parse_record_line(line).unwrap(), session.records.iter().find(|r| r.message.contains("xxxx") && line.contains(&r.source_file)).unwrap());
        }
    }

    #[test]
    fn planting() {
        let (session, _) = simulate(&two_party(5), 1).unwrap();
        let (image, manifest) = plant_in_noise(&session.records, 1 << 16, 9).unwrap();
        assert_eq!(manifest.plantings.len(), session.records.len());
        let mut spans: Vec<(u64, u64)> = manifest.plantings.iter().map(|p| (p.offset, p.offset + p.line.len() as u64)).collect();
        spans.sort_unstable();
        for w in spans.windows(2) {
            assert!(w[0].1 < w[1].0);
        }
        for p in &manifest.plantings {
            let at = p.offset as usize;
            assert_eq!(&image[at..at + p.line.len()], p.line.as_bytes());
        }
        let (again, _) = plant_in_noise(&session.records, 1 << 16, 9).unwrap();
        assert_eq!(image, again);
        assert!(matches!(plant_in_noise(&session.records, 100, 9), Err(GeneratorError::Overflow { .. })));
    }

    #[test]
    fn script_json_round_trip() {
        let script = random_script(&RandomScriptParams { messages: 10..11, ..Default::default() }, 2);
        let json = serde_json::to_string(&script).unwrap();
        let back: SimulationScript = serde_json::from_str(&json).unwrap();
        assert_eq!(back, script);
        back.validate().unwrap();
    }
}
