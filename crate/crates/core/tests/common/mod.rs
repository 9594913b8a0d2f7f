#![allow(dead_code)]

use std::collections::BTreeSet;

use imvulog::generator::GroundTruthManifest;
use imvulog::report::SessionReport;

/// Differences between a session report and the ground truth, one line each.
pub fn mismatches(session: &SessionReport, truth: &GroundTruthManifest, tolerance_secs: i64) -> Vec<String> {
    let mut out = Vec::new();
    let got = &session.artifacts.chat;
    if got.len() != truth.transcripts.len() {
        out.push(format!("{} transcripts, expected {}", got.len(), truth.transcripts.len()));
    }
    for (g, t) in got.iter().zip(&truth.transcripts) {
        if g.chat_id != t.chat_id || g.participants != t.participants {
            out.push(format!("chat {} participants {:?}, expected chat {} {:?}", g.chat_id, g.participants, t.chat_id, t.participants));
        }
        if g.events.len() != t.events.len() {
            out.push(format!("chat {}: {} events, expected {}", t.chat_id, g.events.len(), t.events.len()));
        }
        for (i, (e, x)) in g.events.iter().zip(&t.events).enumerate() {
            let same = e.user_id == x.sender
                && e.chat_id == x.chat_id
                && e.recipient == x.recipient
                && e.text == x.text
                && e.truncated == x.truncated;
            if !same {
                out.push(format!("chat {} event {i}: got {:?} expected {:?}", t.chat_id, e, x));
                continue;
            }
            match e.wall_time {
                Some(w) if (w.and_utc().timestamp() - x.unix_timestamp).abs() <= tolerance_secs => {}
                other => out.push(format!("chat {} event {i}: time {other:?}, expected unix {}", t.chat_id, x.unix_timestamp)),
            }
        }
    }
    let profiles: Vec<_> = session
        .artifacts
        .user_profiles
        .iter()
        .map(|p| (p.avatar_name.clone(), p.member_id, p.is_vip, p.country.clone(), p.country_code.clone()))
        .collect();
    let expected: Vec<_> = truth
        .profiles
        .iter()
        .map(|p| (p.avatar_name.clone(), Some(p.member_id), p.is_vip, p.country.clone(), p.country_code.clone()))
        .collect();
    if profiles != expected {
        out.push(format!("profiles {profiles:?}, expected {expected:?}"));
    }
    let contacts: BTreeSet<_> = session.artifacts.contacts.iter().map(|c| format!("{c:?}")).collect();
    let want: BTreeSet<_> = truth.contacts.iter().map(|c| format!("{c:?}")).collect();
    if contacts != want || session.artifacts.contacts.len() != truth.contacts.len() {
        out.push(format!("contacts {contacts:?}, expected {want:?}"));
    }
    let endpoints: Vec<_> = session.artifacts.location.iter().map(|e| (e.client, e.server, e.scope)).collect();
    let want: Vec<_> = truth.endpoints.iter().map(|e| (e.client, e.server, e.scope)).collect();
    if endpoints != want {
        out.push(format!("endpoints {endpoints:?}, expected {want:?}"));
    }
    out
}
