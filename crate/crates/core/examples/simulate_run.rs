//! A full run against the simulated mapper and planted corpus.

use schemalign::agent::RunConfig;
use schemalign::sim::{build_from_spec, run_scenario, ScenarioSpec};

fn main() -> schemalign::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let scenario = build_from_spec(&ScenarioSpec::standard(seed))?;
    let config = RunConfig {
        alpha: 50,
        seed,
        deterministic: true,
        ..RunConfig::default()
    };
    let outcome = run_scenario(&scenario, config, true, None)?;
    println!("iter  accuracy  confidence  conflicts  kept");
    for r in &outcome.records {
        if r.iteration <= 5 || r.iteration % 10 == 0 {
            println!(
                "{:>4}  {:>7.2}%  {:>10.4}  {:>9}  {:>4}",
                r.iteration,
                r.accuracy.unwrap_or(0.0) * 100.0,
                r.mean_confidence,
                r.conflict_fields.len(),
                r.tuples_accepted
            );
        }
    }
    println!("{}", serde_json::to_string_pretty(&outcome.summary()).unwrap());
    Ok(())
}
