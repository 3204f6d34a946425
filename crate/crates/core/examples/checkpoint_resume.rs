//! Stop a run part-way, resume from the checkpoint, and compare the ledger
//! with an uninterrupted run.

use std::path::Path;

use schemalign::agent::{Agent, Checkpoint, RunConfig};
use schemalign::evidence::Ledger;
use schemalign::sim::{build_from_spec, Scenario, ScenarioSpec};

fn agent_in<'a>(
    dir: &Path,
    scenario: &'a Scenario,
    config: RunConfig,
    backend: &'a schemalign::sim::OracleBackend,
    provider: &'a schemalign::providers::CorpusProvider,
) -> schemalign::Result<Agent<'a>> {
    Ok(Agent::new(config, &scenario.source, &scenario.target, backend, provider)?
        .with_ledger(Ledger::new(dir.join("ledger.jsonl"), true))
        .with_checkpoint_path(dir.join("checkpoint.json")))
}

fn main() -> schemalign::Result<()> {
    let scenario = build_from_spec(&ScenarioSpec::standard(2))?;
    let backend = scenario.oracle().with_seed(2);
    let provider = scenario.corpus_provider();
    let config = RunConfig {
        alpha: 40,
        seed: 2,
        deterministic: true,
        stop_on_no_conflicts: false,
        ..RunConfig::default()
    };
    let whole = std::env::temp_dir().join("schemalign-example-whole");
    let split = std::env::temp_dir().join("schemalign-example-split");
    for d in [&whole, &split] {
        let _ = std::fs::remove_dir_all(d);
        std::fs::create_dir_all(d).map_err(|e| schemalign::Error::io(d, e))?;
    }

    agent_in(&whole, &scenario, config.clone(), &backend, &provider)?.run()?;

    let first = RunConfig { alpha: 15, ..config.clone() };
    agent_in(&split, &scenario, first, &backend, &provider)?.run()?;
    let checkpoint = Checkpoint::load(&split.join("checkpoint.json"))?;
    println!("checkpoint after iteration {}", checkpoint.state.iteration);
    let resumed = agent_in(&split, &scenario, config, &backend, &provider)?.resume(checkpoint)?;
    println!("resumed to iteration {}", resumed.state.iteration);

    let a = std::fs::read(whole.join("ledger.jsonl")).unwrap_or_default();
    let b = std::fs::read(split.join("ledger.jsonl")).unwrap_or_default();
    println!("ledgers identical: {} ({} bytes)", a == b, a.len());
    Ok(())
}
