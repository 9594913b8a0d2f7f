mod common;

use imvulog::examine::{examine_paths, ExamineOptions};
use imvulog::generator::{random_script, render_corpus, simulate, RandomScriptParams};
use imvulog::segment::SegmentLabel;

fn run(seed: u64, messages: std::ops::Range<usize>, threshold: u64) -> usize {
    let params = RandomScriptParams { messages, rotation_threshold: threshold, ..Default::default() };
    let script = random_script(&params, seed);
    let (session, mut truth) = simulate(&script, seed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    render_corpus(&script, &session, &mut truth, dir.path(), threshold).unwrap();
    let out = examine_paths(&[dir.path().to_path_buf()], &ExamineOptions::default()).unwrap();
    assert!(out.is_complete());
    assert_eq!(out.report.sessions.len(), 1);
    let s = &out.report.sessions[0];
    let labels: Vec<SegmentLabel> = s.segments.iter().map(|g| g.label).collect();
    assert_eq!(labels, truth.surviving_order);
    assert_eq!(s.missing_generations, truth.overwritten_generations);
    let diff = common::mismatches(s, &truth, 1);
    assert!(diff.is_empty(), "seed {seed}: {diff:#?}");
    truth.segments.len()
}

#[test]
fn single_file_session_matches_truth() {
    run(1, 100..101, 1 << 30);
}

#[test]
fn rotated_session_matches_truth() {
    run(2, 1500..1501, 65_536);
}

#[test]
fn wrapped_session_matches_truth() {
    let generations = run(3, 600..601, 16_384);
    assert!(generations > 8, "{generations}");
}
