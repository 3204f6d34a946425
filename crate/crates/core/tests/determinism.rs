mod common;

use std::path::Path;

use schemalign::agent::{Agent, Checkpoint, RunConfig, RunOutcome};
use schemalign::evidence::Ledger;
use schemalign::sim::{build_from_spec, Scenario, ScenarioSpec};
use schemalign::Error;

fn scenario(seed: u64) -> Scenario {
    build_from_spec(&ScenarioSpec::standard(seed)).unwrap()
}

fn config(seed: u64, alpha: u32) -> RunConfig {
    RunConfig {
        alpha,
        seed,
        deterministic: true,
        stop_on_no_conflicts: false,
        ..RunConfig::default()
    }
}

fn run_in(dir: &Path, s: &Scenario, config: RunConfig, with_truth: bool) -> RunOutcome {
    let backend = s.oracle().with_seed(config.seed);
    let provider = s.corpus_provider();
    let mut agent = Agent::new(config, &s.source, &s.target, &backend, &provider)
        .unwrap()
        .with_ledger(Ledger::new(dir.join("ledger.jsonl"), true))
        .with_checkpoint_path(dir.join("checkpoint.json"));
    if with_truth {
        agent = agent.with_truth(&s.truth);
    }
    agent.run().unwrap()
}

fn resume_in(dir: &Path, s: &Scenario, alpha: u32) -> RunOutcome {
    let checkpoint = Checkpoint::load(&dir.join("checkpoint.json")).unwrap();
    let config = RunConfig {
        alpha,
        ..checkpoint.config.clone()
    };
    let backend = s.oracle().with_seed(config.seed);
    let provider = s.corpus_provider();
    Agent::new(config, &s.source, &s.target, &backend, &provider)
        .unwrap()
        .with_ledger(Ledger::new(dir.join("ledger.jsonl"), true))
        .with_checkpoint_path(dir.join("checkpoint.json"))
        .with_truth(&s.truth)
        .resume(checkpoint)
        .unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let s = scenario(5);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_in(a.path(), &s, config(5, 20), true);
    let second = run_in(b.path(), &s, config(5, 20), true);
    assert_eq!(read(&a.path().join("ledger.jsonl")), read(&b.path().join("ledger.jsonl")));
    assert_eq!(first.state, second.state);
}

#[test]
fn truth_never_influences_decisions() {
    let s = scenario(6);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let graded = run_in(a.path(), &s, config(6, 20), true);
    let blind = run_in(b.path(), &s, config(6, 20), false);
    assert_eq!(read(&a.path().join("ledger.jsonl")), read(&b.path().join("ledger.jsonl")));
    assert_eq!(graded.hypothesis(), blind.hypothesis());
}

#[test]
fn parallel_matches_sequential() {
    let s = scenario(7);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let seq = run_in(a.path(), &s, config(7, 15), true);
    let par = run_in(
        b.path(),
        &s,
        RunConfig {
            parallel: true,
            ..config(7, 15)
        },
        true,
    );
    assert_eq!(read(&a.path().join("ledger.jsonl")), read(&b.path().join("ledger.jsonl")));
    assert_eq!(seq.state, par.state);
}

#[test]
fn resume_continues_exactly() {
    let s = scenario(8);
    let (whole, split) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let straight = run_in(whole.path(), &s, config(8, 30), true);
    run_in(split.path(), &s, config(8, 12), true);
    let resumed = resume_in(split.path(), &s, 30);
    assert_eq!(
        read(&whole.path().join("ledger.jsonl")),
        read(&split.path().join("ledger.jsonl"))
    );
    assert_eq!(straight.state, resumed.state);
    assert_eq!(straight.records, resumed.records);
}

#[test]
fn resume_discards_a_half_written_iteration() {
    let s = scenario(9);
    let (whole, split) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_in(whole.path(), &s, config(9, 10), true);
    run_in(split.path(), &s, config(9, 5), true);
    // Simulate a crash after some iteration-6 lines were appended.
    let ledger = split.path().join("ledger.jsonl");
    let mut text = std::fs::read_to_string(&ledger).unwrap();
    text.push_str("{\"iteration\":6,\"incident\":\"partial\",\"detail\":\"\",\"timestamp\":\"x\"}\n");
    std::fs::write(&ledger, text).unwrap();
    resume_in(split.path(), &s, 10);
    assert_eq!(read(&whole.path().join("ledger.jsonl")), read(&ledger));
}

#[test]
fn resume_rejects_other_schemas() {
    let (s, other) = (scenario(10), scenario(11));
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), &s, config(10, 3), false);
    let checkpoint = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
    let backend = other.oracle();
    let provider = other.corpus_provider();
    let err = Agent::new(config(10, 6), &other.source, &other.target, &backend, &provider)
        .unwrap()
        .resume(checkpoint)
        .unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");
}

#[test]
fn corrupt_or_foreign_checkpoints_are_refused() {
    let s = scenario(12);
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), &s, config(12, 2), false);
    let path = dir.path().join("checkpoint.json");
    let text = std::fs::read_to_string(&path).unwrap();

    let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 99", 1);
    assert!(matches!(Checkpoint::from_json_str(&bumped), Err(Error::Checkpoint(_))));
    assert!(matches!(
        Checkpoint::from_json_str(&text[..text.len() / 2]),
        Err(Error::Checkpoint(_))
    ));
    assert!(Checkpoint::from_json_str(&text).is_ok());
}

#[test]
fn resume_of_a_finished_run_is_a_no_op() {
    let s = scenario(13);
    let dir = tempfile::tempdir().unwrap();
    let done = run_in(dir.path(), &s, config(13, 4), true);
    let before = read(&dir.path().join("ledger.jsonl"));
    let again = resume_in(dir.path(), &s, 4);
    assert_eq!(done.records, again.records);
    assert_eq!(before, read(&dir.path().join("ledger.jsonl")));
}
