//! The expert-review report for a short simulated run.

use schemalign::agent::RunConfig;
use schemalign::evidence::Ledger;
use schemalign::report::build_report;
use schemalign::sim::{build_from_spec, run_scenario, ScenarioSpec};

fn main() -> schemalign::Result<()> {
    let scenario = build_from_spec(&ScenarioSpec::standard(5))?;
    let dir = std::env::temp_dir().join("schemalign-example-report");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).map_err(|e| schemalign::Error::io(&dir, e))?;
    let ledger = Ledger::new(dir.join("ledger.jsonl"), true);
    let config = RunConfig {
        alpha: 8,
        seed: 5,
        deterministic: true,
        ..RunConfig::default()
    };
    let outcome = run_scenario(&scenario, config, false, Some(ledger.clone()))?;
    let report = build_report(outcome.hypothesis(), &outcome.records, &ledger.load()?, 1.0)?;
    print!("{}", report.render_text());
    Ok(())
}
