//! Chat reconstruction: who says what to whom, in which chat, and when.
//!
//! A chat record carries a list `[userId, chatId, {...}]` whose trailing dict
//! holds the text under `message` and the recipient under `to` (`0` for the
//! whole room, a member id for a whisper). The record has no timestamp of its
//! own; wall time comes either from the session anchor or from the nearest
//! `SessionDispatcher.pyo` record that logged an absolute time.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use chrono::NaiveDateTime;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::grammar::{Elapsed, LogicalMessage, ELLIPSIS};
use crate::identity::is_vip_name;
use crate::literal::{self, Value};
use crate::segment::{wall_clock_anchor, Anchor, SessionStream, WALL_TIME_FORMAT};

pub const DISPATCHER_SOURCE: &str = "SessionDispatcher.pyo";
pub const DEFAULT_DEDUP_WINDOW: Elapsed = Elapsed::from_millis(2000);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipient {
    Room,
    Whisper(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatEvent {
    pub user_id: u64,
    pub chat_id: u64,
    pub recipient: Recipient,
    pub text: String,
    pub elapsed: Elapsed,
    pub wall_time: Option<NaiveDateTime>,
    pub is_command: bool,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anomalies: Vec<String>,
}

impl ChatEvent {
    pub fn new(user_id: u64, chat_id: u64, recipient: Recipient, text: impl Into<String>, elapsed: Elapsed) -> Self {
        let text = text.into();
        ChatEvent {
            user_id,
            chat_id,
            recipient,
            is_command: text.starts_with('*'),
            truncated: text.ends_with(ELLIPSIS),
            text,
            elapsed,
            wall_time: None,
            anomalies: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMethod {
    /// Relative times only.
    None,
    /// Session start time plus elapsed seconds.
    ElapsedAnchor,
    /// Nearest dispatcher record with an absolute time.
    DispatcherAnchor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub chat_id: u64,
    pub participants: BTreeSet<u64>,
    pub events: Vec<ChatEvent>,
    pub anchor_method: AnchorMethod,
}

fn as_member_id(v: &Value) -> Option<u64> {
    v.as_int().and_then(|i| u64::try_from(i).ok())
}

fn recipient_of(dict: &Value) -> Option<Recipient> {
    let raw = match dict.get("to") {
        Some(v) => v.as_int()?,
        None => {
            // unnamed recipient key: only a leading 0 value is unambiguous
            let Value::Dict(entries) = dict else { return None };
            match entries.first()?.1 {
                Value::Int(0) => 0,
                _ => return None,
            }
        }
    };
    match raw {
        0 => Some(Recipient::Room),
        n => u64::try_from(n).ok().map(Recipient::Whisper),
    }
}

/// Finds a chat payload in one line of log text.
pub fn parse_chat_payload(line: &str, elapsed: Elapsed, line_truncated: bool) -> Option<ChatEvent> {
    for (pos, _) in line.match_indices('[') {
        let tail = &line[pos..];
        let parsed = if line_truncated {
            literal::parse_prefix_lenient(tail)
        } else {
            literal::parse_prefix(tail)
        };
        let Ok(parsed) = parsed else { continue };
        let Value::List(items) = &parsed.value else { continue };
        if items.len() < 3 {
            continue;
        }
        let (Some(user_id), Some(chat_id)) = (as_member_id(&items[0]), as_member_id(&items[1])) else {
            continue;
        };
        let Some(dict) = items.iter().rev().find(|v| matches!(v, Value::Dict(_))) else {
            continue;
        };
        let Some(text) = dict.get("message").and_then(Value::as_str) else {
            continue;
        };
        let Some(recipient) = recipient_of(dict) else { continue };
        return Some(ChatEvent::new(user_id, chat_id, recipient, text, elapsed));
    }
    None
}

/// Every logical message carrying a chat payload, in stream order.
pub fn extract_chat_events(stream: &SessionStream) -> Vec<ChatEvent> {
    events_from_messages(&stream.logical_messages())
}

pub fn events_from_messages(messages: &[LogicalMessage]) -> Vec<ChatEvent> {
    let mut out = Vec::new();
    for msg in messages {
        let last = msg.lines.len() - 1;
        for (i, line) in msg.lines.iter().enumerate() {
            let cut = msg.truncated && i == last;
            if let Some(ev) = parse_chat_payload(line, msg.header.elapsed, cut) {
                out.push(ev);
            }
        }
    }
    out
}

/// Collapses repeated logging of one message. Events equal in sender, chat,
/// recipient, text and truncation that lie within `window` of an already kept
/// copy are dropped. Order is preserved.
pub fn dedupe_events(events: &[ChatEvent], window: Elapsed) -> Vec<ChatEvent> {
    let mut kept_at: HashMap<(u64, u64, Recipient, &str, bool), Elapsed> = HashMap::new();
    let mut out = Vec::new();
    for ev in events {
        let key = (ev.user_id, ev.chat_id, ev.recipient, ev.text.as_str(), ev.truncated);
        if let Some(prev) = kept_at.get(&key) {
            if ev.elapsed.delta_millis(*prev).unsigned_abs() <= window.millis() {
                continue;
            }
        }
        kept_at.insert(key, ev.elapsed);
        out.push(ev.clone());
    }
    out
}

fn datetime_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2}").unwrap())
}

/// Absolute times logged by the session dispatcher, in stream order.
pub fn dispatcher_anchors(stream: &SessionStream) -> Vec<Anchor> {
    stream
        .records()
        .filter(|r| r.source_file.eq_ignore_ascii_case(DISPATCHER_SOURCE))
        .filter_map(|r| {
            let m = datetime_re().find(&r.message)?;
            let wall_time = NaiveDateTime::parse_from_str(m.as_str(), WALL_TIME_FORMAT).ok()?;
            Some(Anchor { wall_time, wall_elapsed: r.elapsed })
        })
        .collect()
}

/// The anchor closest in elapsed time, earlier one on ties.
pub fn nearest_anchor(anchors: &[Anchor], elapsed: Elapsed) -> Option<&Anchor> {
    anchors
        .iter()
        .min_by_key(|a| (a.wall_elapsed.delta_millis(elapsed).unsigned_abs(), a.wall_elapsed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimestampSummary {
    pub method: AnchorMethod,
    /// Largest disagreement between the two methods, when both apply.
    pub max_disagreement_secs: Option<f64>,
}

/// Sets `wall_time` on every event. The session anchor is preferred; the
/// dispatcher anchors are used when it is missing and otherwise only to
/// measure agreement.
pub fn assign_timestamps(events: &mut [ChatEvent], stream: &SessionStream) -> TimestampSummary {
    let session = wall_clock_anchor(stream).ok();
    let dispatch = dispatcher_anchors(stream);
    assign_with(events, session.as_ref(), &dispatch)
}

pub fn assign_with(events: &mut [ChatEvent], session: Option<&Anchor>, dispatch: &[Anchor]) -> TimestampSummary {
    let method = match (session, dispatch.is_empty()) {
        (Some(_), _) => AnchorMethod::ElapsedAnchor,
        (None, false) => AnchorMethod::DispatcherAnchor,
        (None, true) => AnchorMethod::None,
    };
    let mut max_disagreement: Option<i64> = None;
    for ev in events.iter_mut() {
        let by_session = session.map(|a| a.wall(ev.elapsed));
        let by_dispatch = nearest_anchor(dispatch, ev.elapsed).map(|a| a.wall(ev.elapsed));
        if let (Some(a), Some(b)) = (by_session, by_dispatch) {
            let d = (a - b).num_milliseconds().abs();
            max_disagreement = Some(max_disagreement.map_or(d, |m| m.max(d)));
        }
        ev.wall_time = by_session.or(by_dispatch);
    }
    TimestampSummary {
        method,
        max_disagreement_secs: max_disagreement.map(|ms| ms as f64 / 1000.0),
    }
}

/// Flags whispers where both parties are known non-VIP accounts. Events are
/// never dropped. Returns the number of flagged events.
pub fn flag_whisper_violations(events: &mut [ChatEvent], members: &BTreeMap<u64, String>) -> usize {
    let non_vip = |id: u64| members.get(&id).is_some_and(|name| !is_vip_name(name));
    let mut flagged = 0;
    for ev in events.iter_mut() {
        if let Recipient::Whisper(to) = ev.recipient {
            if non_vip(ev.user_id) && non_vip(to) {
                ev.anomalies.push(format!(
                    "whisper between non-VIP members {} ({}) and {} ({})",
                    ev.user_id, members[&ev.user_id], to, members[&to]
                ));
                flagged += 1;
            }
        }
    }
    flagged
}

/// One transcript per chat id, events ordered by wall time (elapsed when
/// unanchored).
pub fn build_transcripts(events: &[ChatEvent], anchor_method: AnchorMethod) -> Vec<Transcript> {
    let mut by_chat: BTreeMap<u64, Vec<ChatEvent>> = BTreeMap::new();
    for ev in events {
        by_chat.entry(ev.chat_id).or_default().push(ev.clone());
    }
    by_chat
        .into_iter()
        .map(|(chat_id, mut events)| {
            events.sort_by_key(|e| (e.wall_time.is_none(), e.wall_time, e.elapsed));
            let mut participants = BTreeSet::new();
            for e in &events {
                participants.insert(e.user_id);
                if let Recipient::Whisper(to) = e.recipient {
                    participants.insert(to);
                }
            }
            Transcript { chat_id, participants, events, anchor_method }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall(s: &str) -> NaiveDateTime {
        crate::segment::parse_wall_time(s).unwrap()
    }

    fn ev(user: u64, chat: u64, to: Recipient, text: &str, ms: u64) -> ChatEvent {
        ChatEvent::new(user, chat, to, text, Elapsed(ms))
    }

    #[test]
    fn payload_to_room_and_whisper() {
        let e = parse_chat_payload("received [111, 555, {'to': 0, 'message': 'hi'}]", Elapsed(1), false).unwrap();
        assert_eq!((e.user_id, e.chat_id, e.recipient, e.text.as_str()), (111, 555, Recipient::Room, "hi"));
        let e = parse_chat_payload("[111, 555, {'message': u'hey', 'to': 222}]", Elapsed(1), false).unwrap();
        assert_eq!(e.recipient, Recipient::Whisper(222));
        let e = parse_chat_payload("[111, 555, {'message': '*wave', 'to': 0}]", Elapsed(1), false).unwrap();
        assert!(e.is_command);
        assert!(!e.truncated);
    }

    #[test]
    fn payload_unnamed_room_key() {
        let e = parse_chat_payload("[1, 2, {'recipient': 0, 'message': 'x'}]", Elapsed(1), false).unwrap();
        assert_eq!(e.recipient, Recipient::Room);
        assert!(parse_chat_payload("[1, 2, {'message': 'x'}]", Elapsed(1), false).is_none());
    }

    #[test]
    fn payload_ignores_other_lists() {
        assert!(parse_chat_payload("loaded [1, 2, 3]", Elapsed(1), false).is_none());
        assert!(parse_chat_payload("no payload", Elapsed(1), false).is_none());
        let e = parse_chat_payload("a [x] then [5, 6, {'to': 0, 'message': 'ok'}]", Elapsed(1), false).unwrap();
        assert_eq!(e.text, "ok");
    }

    #[test]
    fn truncated_payload_keeps_partial_text() {
        let e = parse_chat_payload("[1, 2, {'to': 0, 'message': 'long text...", Elapsed(1), true).unwrap();
        assert_eq!(e.text, "long text...");
        assert!(e.truncated);
        assert!(parse_chat_payload("[1, 2, {'to': 0, 'message': 'long text...", Elapsed(1), false).is_none());
    }

    #[test]
    fn dedupe_window() {
        let events = vec![
            ev(111, 555, Recipient::Room, "hi", 10_000),
            ev(111, 555, Recipient::Room, "hi", 10_250),
            ev(111, 555, Recipient::Room, "hi", 200_000),
            ev(111, 777, Recipient::Room, "hi", 200_001),
            ev(111, 777, Recipient::Whisper(5), "hi", 200_002),
        ];
        let out = dedupe_events(&events, DEFAULT_DEDUP_WINDOW);
        assert_eq!(out.len(), 4);
        assert_eq!(out[0].elapsed, Elapsed(10_000));
        assert_eq!(dedupe_events(&out, DEFAULT_DEDUP_WINDOW), out);
    }

    #[test]
    fn dedupe_never_merges_truncated_with_full() {
        let events = vec![
            ev(1, 2, Recipient::Room, "abc...", 1000),
            ev(1, 2, Recipient::Room, "abc", 1001),
        ];
        assert_eq!(dedupe_events(&events, DEFAULT_DEDUP_WINDOW).len(), 2);
    }

    #[test]
    fn session_anchor_arithmetic() {
        let anchor = Anchor { wall_time: wall("2015-02-06 11:14:51"), wall_elapsed: Elapsed(1102) };
        let mut events = vec![ev(1, 2, Recipient::Room, "x", 121_102)];
        let s = assign_with(&mut events, Some(&anchor), &[]);
        assert_eq!(s.method, AnchorMethod::ElapsedAnchor);
        assert_eq!(events[0].wall_time, Some(wall("2015-02-06 11:16:51")));
        assert_eq!(s.max_disagreement_secs, None);
    }

    #[test]
    fn dispatcher_only_and_none() {
        let anchors = [
            Anchor { wall_time: wall("2015-02-06 11:15:00"), wall_elapsed: Elapsed(10_000) },
            Anchor { wall_time: wall("2015-02-06 11:16:00"), wall_elapsed: Elapsed(70_500) },
        ];
        let mut events = vec![ev(1, 2, Recipient::Room, "x", 12_000), ev(1, 2, Recipient::Room, "y", 69_000)];
        let s = assign_with(&mut events, None, &anchors);
        assert_eq!(s.method, AnchorMethod::DispatcherAnchor);
        assert_eq!(events[0].wall_time, Some(wall("2015-02-06 11:15:02")));
        assert_eq!(events[1].wall_time, Some(wall("2015-02-06 11:15:58") + chrono::Duration::milliseconds(500)));

        let mut events = vec![ev(1, 2, Recipient::Room, "x", 12_000)];
        let s = assign_with(&mut events, None, &[]);
        assert_eq!(s.method, AnchorMethod::None);
        assert_eq!(events[0].wall_time, None);
    }

    #[test]
    fn method_disagreement_is_measured() {
        let session = Anchor { wall_time: wall("2015-02-06 11:14:51"), wall_elapsed: Elapsed(1102) };
        let dispatch = [Anchor { wall_time: wall("2015-02-06 11:15:20"), wall_elapsed: Elapsed(30_602) }];
        let mut events = vec![ev(1, 2, Recipient::Room, "x", 31_000)];
        let s = assign_with(&mut events, Some(&session), &dispatch);
        assert_eq!(s.max_disagreement_secs, Some(0.5));
    }

    #[test]
    fn transcripts_partition_and_participants() {
        let events = vec![
            ev(111, 555, Recipient::Room, "a", 1),
            ev(111, 777, Recipient::Whisper(222), "b", 2),
            ev(333, 555, Recipient::Room, "c", 3),
        ];
        let ts = build_transcripts(&events, AnchorMethod::None);
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].chat_id, 555);
        assert_eq!(ts[0].participants, BTreeSet::from([111, 333]));
        assert_eq!(ts[1].participants, BTreeSet::from([111, 222]));
    }

    #[test]
    fn whisper_between_guests_is_flagged_not_dropped() {
        let members = BTreeMap::from([
            (1, "Guest_aaa".to_string()),
            (2, "Guest_bbb".to_string()),
            (3, "InspectorAlgar".to_string()),
        ]);
        let mut events = vec![
            ev(1, 9, Recipient::Whisper(2), "psst", 1),
            ev(1, 9, Recipient::Whisper(3), "ok", 2),
            ev(1, 9, Recipient::Whisper(4), "unknown", 3),
        ];
        assert_eq!(flag_whisper_violations(&mut events, &members), 1);
        assert_eq!(events.len(), 3);
        assert_eq!(events[0].anomalies.len(), 1);
        assert!(events[1].anomalies.is_empty());
    }
}
