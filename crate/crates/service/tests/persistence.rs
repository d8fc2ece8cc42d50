mod common;

use std::io::Write;
use std::path::Path;

use common::*;
use gsp_core::log::{parse_log, read_log, snapshot_path};
use gsp_core::{replay, CoreError, EventKind, ExperimentConfig};
use gsp_service::{Service, ServiceError};

fn open(config: &ExperimentConfig, path: &Path) -> gsp_service::Result<Service> {
    Service::open(config.clone(), path, cache(), manual_clock().0)
}

/// Answer `n` slider trials with fresh participants.
fn answer(svc: &Service, n: usize) {
    for i in 0..n {
        let who = svc.new_session(true).unwrap();
        let trial = svc.next_trial(&who).unwrap().expect("trial available");
        svc.submit_response(trial.assignment.trial_id, (i * 5) % 32).unwrap();
    }
}

#[test]
fn restart_resumes_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let config = small_config();
    let svc = open(&config, &path).unwrap();
    answer(&svc, 7);
    let before = svc.export().unwrap();
    let state = svc.with_experiment(|e| e.state().clone());
    drop(svc);

    assert_eq!(std::fs::read_to_string(&path).unwrap(), before);
    let svc = open(&config, &path).unwrap();
    assert_eq!(svc.export().unwrap(), before);
    svc.with_experiment(|e| assert_eq!(e.state(), &state));
    answer(&svc, 3);
    let events = read_log(&path).unwrap();
    assert_eq!(replay(&events).unwrap(), svc.with_experiment(|e| e.state().clone()));
}

#[test]
fn snapshots_are_written_and_used() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let mut config = small_config();
    config.service.snapshot_interval = 10;
    let svc = open(&config, &path).unwrap();
    answer(&svc, 6);
    let state = svc.with_experiment(|e| e.state().clone());
    drop(svc);

    let snap: serde_json::Value = serde_json::from_slice(&std::fs::read(snapshot_path(&path)).unwrap()).unwrap();
    let seq = snap["seq"].as_u64().unwrap();
    assert!(seq >= 10 && seq <= state.last_seq, "{seq}");

    let svc = open(&config, &path).unwrap();
    svc.with_experiment(|e| assert_eq!(e.state(), &state));
    drop(svc);

    // an unreadable snapshot falls back to full replay
    std::fs::write(snapshot_path(&path), b"{not json").unwrap();
    let svc = open(&config, &path).unwrap();
    svc.with_experiment(|e| assert_eq!(e.state(), &state));
}

#[test]
fn torn_final_record_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let config = small_config();
    let svc = open(&config, &path).unwrap();
    answer(&svc, 2);
    let state = svc.with_experiment(|e| e.state().clone());
    drop(svc);

    let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(b"{\"seq\":99,\"timestamp\":1,\"type\":\"Sess").unwrap();
    drop(f);

    let svc = open(&config, &path).unwrap();
    svc.with_experiment(|e| assert_eq!(e.state(), &state));
    answer(&svc, 1);
    let events = read_log(&path).unwrap();
    assert_eq!(events.len() as u64, svc.status().unwrap().events);
}

#[test]
fn corrupt_record_names_its_seq() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let config = small_config();
    answer(&open(&config, &path).unwrap(), 2);

    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[3] = lines[3].replacen("\"timestamp\":", "\"timestamp\":9", 1);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();

    match open(&config, &path) {
        Err(ServiceError::Core(CoreError::CorruptLog { seq, .. })) => assert_eq!(seq, 4),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("corrupt log accepted"),
    }
}

#[test]
fn crash_before_aggregation_is_finished_on_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let config = small_config();
    let svc = open(&config, &path).unwrap();
    answer(&svc, 1);
    let live = svc.with_experiment(|e| e.state().clone());
    drop(svc);

    // cut the log right after the response, before its aggregation
    let text = std::fs::read_to_string(&path).unwrap();
    let events = parse_log(&text).unwrap();
    let cut = events
        .iter()
        .position(|e| matches!(e.kind, EventKind::ResponseRecorded { .. }))
        .unwrap()
        + 1;
    let kept: String = text.lines().take(cut).map(|l| format!("{l}\n")).collect();
    std::fs::write(&path, kept).unwrap();
    let partial = replay(&read_log(&path).unwrap()).unwrap();
    assert_eq!(partial.chains.iter().map(|c| c.responses.len()).sum::<usize>(), 1);

    let svc = open(&config, &path).unwrap();
    let events = read_log(&path).unwrap();
    let aggregated = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::IterationAggregated { .. }))
        .count();
    assert_eq!(aggregated, 1);
    svc.with_experiment(|e| {
        assert_eq!(e.state(), &replay(&events).unwrap());
        let chains: Vec<_> = e.state().chains.iter().map(|c| (&c.current_point, c.iteration)).collect();
        let expected: Vec<_> = live.chains.iter().map(|c| (&c.current_point, c.iteration)).collect();
        assert_eq!(chains, expected);
    });
}

#[test]
fn different_settings_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let config = small_config();
    drop(open(&config, &path).unwrap());

    let other = ExperimentConfig {
        n_iterations: 3,
        ..config.clone()
    };
    assert!(matches!(open(&other, &path), Err(ServiceError::Mismatch(_))));

    // the listen address and snapshot interval are free to change
    let mut moved = config.clone();
    moved.service.listen = "0.0.0.0:9999".into();
    moved.service.snapshot_interval = 7;
    assert!(open(&moved, &path).is_ok());
}

#[test]
fn in_memory_and_file_logs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let config = small_config();
    let (clock, _) = manual_clock();
    let mem = Service::in_memory(config.clone(), cache(), clock.clone()).unwrap();
    let file = Service::open(config, &path, cache(), clock).unwrap();
    answer(&mem, 4);
    answer(&file, 4);
    // tokens are random, so compare the event sequence by type
    let kinds = |s: String| -> Vec<&'static str> { parse_log(&s).unwrap().iter().map(|e| e.kind.name()).collect() };
    assert_eq!(kinds(mem.export().unwrap()), kinds(file.export().unwrap()));
    assert_eq!(file.export().unwrap(), std::fs::read_to_string(&path).unwrap());
}
