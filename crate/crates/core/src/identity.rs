//! Profiles, masked credentials, contacts and network endpoints.

use std::collections::{BTreeMap, HashSet};
use std::net::SocketAddrV4;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::grammar::{Elapsed, LogicalMessage};
use crate::literal::{self, Value};
use crate::segment::SessionStream;

pub const GUEST_PREFIX: &str = "Guest_";
pub const PASSWORD_MASK: &str = "********";
pub const USER_INFO_PREFIX: &str = "self.userInfo_";

/// Paid accounts carry no `Guest_` prefix. This is an inference from the
/// name alone.
pub fn is_vip_name(avatar_name: &str) -> bool {
    !avatar_name.starts_with(GUEST_PREFIX)
}

/// Problems with an avatar name, if any: 3 to 20 letters or digits, with the
/// `Guest_` prefix itself exempt.
pub fn avatar_name_problem(avatar_name: &str) -> Option<String> {
    let core = avatar_name.strip_prefix(GUEST_PREFIX).unwrap_or(avatar_name);
    let len = core.chars().count();
    if !(3..=20).contains(&len) {
        return Some(format!("avatar name {avatar_name:?} is {len} characters, expected 3 to 20"));
    }
    if !core.chars().all(|c| c.is_ascii_alphanumeric()) {
        return Some(format!("avatar name {avatar_name:?} contains characters other than letters and digits"));
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub avatar_name: String,
    pub member_id: Option<u64>,
    /// Inferred from the avatar name prefix.
    pub is_vip: bool,
    /// Country the client IP geolocates to.
    pub country: Option<String>,
    /// Country the user declared in their profile settings.
    pub country_code: Option<String>,
    pub raw_fields: BTreeMap<String, String>,
    pub elapsed: Elapsed,
    pub anomalies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthArtifact {
    pub avatar_name: Option<String>,
    pub password_masked: bool,
    pub mask: String,
    pub elapsed: Elapsed,
    pub source_file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressScope {
    Private,
    Public,
}

impl AddressScope {
    pub fn of(addr: &SocketAddrV4) -> AddressScope {
        if addr.ip().is_private() {
            AddressScope::Private
        } else {
            AddressScope::Public
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkEndpoint {
    pub client: SocketAddrV4,
    pub server: SocketAddrV4,
    pub elapsed: Elapsed,
    /// Classification of the client address.
    pub scope: AddressScope,
    pub server_scope: AddressScope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    Friend,
    Buddy,
    Fan,
}

impl Relation {
    fn from_word(word: &str) -> Option<Relation> {
        match word {
            "Friends" => Some(Relation::Friend),
            "Buddies" => Some(Relation::Buddy),
            "Fans" => Some(Relation::Fan),
            _ => None,
        }
    }

    pub fn list_word(self) -> &'static str {
        match self {
            Relation::Friend => "Friends",
            Relation::Buddy => "Buddies",
            Relation::Fan => "Fans",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContactEntry {
    pub member_id: Option<u64>,
    pub avatar_name: Option<String>,
    pub relation: Relation,
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    let s = s.strip_prefix('u').filter(|r| r.starts_with(['\'', '"'])).unwrap_or(s);
    for q in ['\'', '"'] {
        if let Some(inner) = s.strip_prefix(q).and_then(|r| r.strip_suffix(q)) {
            return inner;
        }
    }
    s
}

fn parse_pair(line: &str) -> Option<(String, String)> {
    let line = line.trim().trim_end_matches(',');
    let line = line.trim_start_matches('{').trim_end_matches('}').trim();
    if line.is_empty() {
        return None;
    }
    let (key, value) = line.split_once(':')?;
    let key = unquote(key);
    if key.is_empty() {
        return None;
    }
    Some((key.to_string(), unquote(value).to_string()))
}

fn profile_from_block(msg: &LogicalMessage) -> UserProfile {
    let raw_fields: BTreeMap<String, String> = msg.lines[1..].iter().filter_map(|l| parse_pair(l)).collect();
    let lookup = |keys: &[&str]| keys.iter().find_map(|k| raw_fields.get(*k)).cloned();
    let avatar_name = lookup(&["avatarname", "avatar_name", "avatarName"]).unwrap_or_default();
    let member_id = lookup(&["userId", "user_id", "cid"]).and_then(|v| v.parse().ok());
    let mut anomalies = Vec::new();
    if avatar_name.is_empty() {
        anomalies.push("profile block carries no avatar name".to_string());
    } else if let Some(problem) = avatar_name_problem(&avatar_name) {
        anomalies.push(problem);
    }
    UserProfile {
        is_vip: !avatar_name.is_empty() && is_vip_name(&avatar_name),
        avatar_name,
        member_id,
        country: lookup(&["country"]),
        country_code: lookup(&["country_code"]),
        raw_fields,
        elapsed: msg.header.elapsed,
        anomalies,
    }
}

/// One profile per `self.userInfo_` block.
pub fn extract_user_profiles(stream: &SessionStream) -> Vec<UserProfile> {
    profiles_from_messages(&stream.logical_messages())
}

pub fn profiles_from_messages(messages: &[LogicalMessage]) -> Vec<UserProfile> {
    messages
        .iter()
        .filter(|m| m.first_line().trim_start().starts_with(USER_INFO_PREFIX))
        .map(profile_from_block)
        .collect()
}

fn password_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?i)\bpassword['"]?\s*[:=]\s*u?['"]?(\*+)"#).unwrap())
}

fn avatar_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?i)\bavatar_?name['"]?\s*[:=]\s*u?['"]?([A-Za-z0-9_]+)"#).unwrap())
}

/// Every record carrying a password field masked with exactly eight asterisks.
pub fn extract_auth(stream: &SessionStream) -> Vec<AuthArtifact> {
    auth_from_messages(&stream.logical_messages())
}

pub fn auth_from_messages(messages: &[LogicalMessage]) -> Vec<AuthArtifact> {
    let mut out = Vec::new();
    for msg in messages {
        let text = msg.text();
        let avatar_name = avatar_re().captures(&text).map(|c| c[1].to_string());
        for caps in password_re().captures_iter(&text) {
            if &caps[1] != PASSWORD_MASK {
                continue;
            }
            out.push(AuthArtifact {
                avatar_name: avatar_name.clone(),
                password_masked: true,
                mask: caps[1].to_string(),
                elapsed: msg.header.elapsed,
                source_file: msg.header.source_file.clone(),
            });
        }
    }
    out
}

fn connect_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"connecting\s+(\d{1,3}(?:\.\d{1,3}){3}:\d{1,5})\s*->\s*(\d{1,3}(?:\.\d{1,3}){3}:\d{1,5})").unwrap()
    })
}

/// Parses a `connecting A:p -> B:q` message body.
pub fn parse_connection(text: &str) -> Option<(SocketAddrV4, SocketAddrV4)> {
    let caps = connect_re().captures(text)?;
    Some((caps[1].parse().ok()?, caps[2].parse().ok()?))
}

pub fn extract_endpoints(stream: &SessionStream) -> Vec<NetworkEndpoint> {
    endpoints_from_messages(&stream.logical_messages())
}

pub fn endpoints_from_messages(messages: &[LogicalMessage]) -> Vec<NetworkEndpoint> {
    messages
        .iter()
        .filter(|m| m.header.source_file.to_ascii_lowercase().starts_with("imqconnection"))
        .filter_map(|m| {
            let (client, server) = parse_connection(&m.lines.join(" "))?;
            Some(NetworkEndpoint {
                scope: AddressScope::of(&client),
                server_scope: AddressScope::of(&server),
                client,
                server,
                elapsed: m.header.elapsed,
            })
        })
        .collect()
}

fn relation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(Friends|Buddies|Fans)\b[^\[]*\[").unwrap())
}

fn is_buddy_source(source_file: &str) -> bool {
    // the client ships the module as buddystae.pyo; accept either spelling
    let lower = source_file.to_ascii_lowercase();
    lower == "buddystate.pyo" || lower == "buddystae.pyo"
}

fn contact_from_value(value: &Value, relation: Relation) -> Option<ContactEntry> {
    let (member_id, avatar_name) = match value {
        Value::Int(i) => (u64::try_from(*i).ok(), None),
        Value::Str(s) => (None, Some(s.clone())),
        Value::Dict(_) => (
            value.get("userId").and_then(Value::as_int).and_then(|i| u64::try_from(i).ok()),
            value
                .get("avatarname")
                .or_else(|| value.get("avatar_name"))
                .and_then(Value::as_str)
                .map(str::to_string),
        ),
        _ => return None,
    };
    if member_id.is_none() && avatar_name.is_none() {
        return None;
    }
    Some(ContactEntry { member_id, avatar_name, relation })
}

/// Relation-tagged contact lists logged by the buddy-state module. Duplicates
/// are collapsed, first occurrence wins.
pub fn extract_contacts(stream: &SessionStream) -> Vec<ContactEntry> {
    contacts_from_messages(&stream.logical_messages())
}

pub fn contacts_from_messages(messages: &[LogicalMessage]) -> Vec<ContactEntry> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for msg in messages.iter().filter(|m| is_buddy_source(&m.header.source_file)) {
        for line in &msg.lines {
            for caps in relation_re().captures_iter(line) {
                let relation = Relation::from_word(&caps[1]).expect("regex alternation");
                let list_start = caps.get(0).unwrap().end() - 1;
                let Ok(parsed) = literal::parse_prefix_lenient(&line[list_start..]) else {
                    continue;
                };
                let Value::List(mut items) = parsed.value else { continue };
                if parsed.cut_short {
                    // the last element was cut by truncation
                    items.pop();
                }
                for item in &items {
                    if let Some(entry) = contact_from_value(item, relation) {
                        if seen.insert(entry.clone()) {
                            out.push(entry);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Member id to avatar name, from profile blocks and any logged dict that
/// pairs a `userId` with an `avatarname`.
pub fn member_directory(messages: &[LogicalMessage]) -> BTreeMap<u64, String> {
    let mut dir = BTreeMap::new();
    for p in profiles_from_messages(messages) {
        if let (Some(id), false) = (p.member_id, p.avatar_name.is_empty()) {
            dir.entry(id).or_insert(p.avatar_name);
        }
    }
    for msg in messages {
        for line in &msg.lines {
            for (pos, _) in line.match_indices('{') {
                let Ok(parsed) = literal::parse_prefix(&line[pos..]) else { continue };
                let id = parsed.value.get("userId").and_then(Value::as_int).and_then(|i| u64::try_from(i).ok());
                let name = parsed.value.get("avatarname").and_then(Value::as_str);
                if let (Some(id), Some(name)) = (id, name) {
                    dir.entry(id).or_insert_with(|| name.to_string());
                }
            }
        }
    }
    dir
}
