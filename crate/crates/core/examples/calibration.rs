//! Calibration of consistency confidence at several variant counts.

use schemalign::sim::{run_calibration_experiment, ScenarioSpec};

fn main() -> schemalign::Result<()> {
    let seeds: Vec<u64> = (1..=3).collect();
    let (rows, _) = run_calibration_experiment(&ScenarioSpec::standard(1), &[3, 5, 10], 30, &seeds)?;
    println!("n    accuracy  confidence  gap     |gap|");
    for r in rows {
        println!(
            "{:<4} {:>7.2}%  {:>9.2}%  {:>+6.2}  {:>5.2}",
            r.n,
            r.final_accuracy * 100.0,
            r.mean_confidence * 100.0,
            r.calibration_gap * 100.0,
            r.mean_abs_gap * 100.0
        );
    }
    Ok(())
}
