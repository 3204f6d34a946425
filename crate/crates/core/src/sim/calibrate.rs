use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_from_spec, Scenario, ScenarioSpec};
use crate::agent::{Agent, IterationRecord, RunConfig, RunOutcome, SearchKind};
use crate::confidence::{calibration_gap, CALIBRATION_WINDOW};
use crate::error::{Error, Result};
use crate::evidence::Ledger;
use crate::providers::{EvidenceProvider, NullProvider};

/// Runs the agent on a scenario with its oracle and the provider named in
/// `config.search`. Ground truth is attached only when `with_truth` is set.
pub fn run_scenario(
    scenario: &Scenario,
    config: RunConfig,
    with_truth: bool,
    ledger: Option<Ledger>,
) -> Result<RunOutcome> {
    let backend = scenario.oracle().with_seed(config.seed);
    let corpus;
    let provider: &dyn EvidenceProvider = match config.search {
        SearchKind::Corpus => {
            corpus = scenario.corpus_provider();
            &corpus
        }
        SearchKind::Null => &NullProvider,
        SearchKind::Web => return Err(Error::Config("simulated runs use the corpus or null provider".into())),
    };
    let mut agent = Agent::new(config, &scenario.source, &scenario.target, &backend, provider)?;
    if with_truth {
        agent = agent.with_truth(&scenario.truth);
    }
    if let Some(l) = ledger {
        agent = agent.with_ledger(l);
    }
    agent.run()
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub n: usize,
    pub seed: u64,
    pub iterations: u32,
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
    pub final_mean_confidence: f64,
    /// Mean confidence minus mean accuracy over the last iterations.
    pub window_gap: f64,
    pub window_confidence: f64,
    pub window_accuracy: f64,
    pub initial_flagged: usize,
    pub final_flagged: usize,
    pub tuples_accepted: usize,
}

impl RunMetrics {
    /// Needs records carrying accuracy.
    pub fn from_records(n: usize, seed: u64, records: &[IterationRecord]) -> Result<Self> {
        let (Some(first), Some(last)) = (records.first(), records.last()) else {
            return Err(Error::EmptyInput("iteration records"));
        };
        let missing = || Error::Validation("records carry no accuracy".into());
        let gap = calibration_gap(records, CALIBRATION_WINDOW)?;
        Ok(Self {
            n,
            seed,
            iterations: last.iteration,
            initial_accuracy: first.accuracy.ok_or_else(missing)?,
            final_accuracy: last.accuracy.ok_or_else(missing)?,
            final_mean_confidence: last.mean_confidence,
            window_gap: gap.gap,
            window_confidence: gap.mean_confidence,
            window_accuracy: gap.mean_accuracy,
            initial_flagged: first.conflict_fields.len(),
            final_flagged: last.conflict_fields.len(),
            tuples_accepted: records.iter().map(|r| r.tuples_accepted).sum(),
        })
    }

    pub fn flagged_reduction(&self) -> f64 {
        if self.initial_flagged == 0 {
            return 0.0;
        }
        1.0 - self.final_flagged as f64 / self.initial_flagged as f64
    }
}

/// One row of the calibration table: a variant count, aggregated over seeds
/// (or a single seed when only one was run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub n: usize,
    /// Set when the row describes a single run.
    pub seed: Option<u64>,
    pub runs: usize,
    pub final_accuracy: f64,
    pub mean_confidence: f64,
    /// Mean of signed gaps (confidence − accuracy); positive is overconfident.
    pub calibration_gap: f64,
    /// Mean of per-run absolute gaps.
    pub mean_abs_gap: f64,
    pub initial_flagged: f64,
    pub final_flagged: f64,
    pub flagged_reduction: f64,
}

impl CalibrationRow {
    pub fn aggregate(n: usize, runs: &[RunMetrics]) -> Self {
        let k = runs.len().max(1) as f64;
        let mean = |f: &dyn Fn(&RunMetrics) -> f64| runs.iter().map(f).sum::<f64>() / k;
        let initial = mean(&|m| m.initial_flagged as f64);
        let fin = mean(&|m| m.final_flagged as f64);
        Self {
            n,
            seed: if runs.len() == 1 { Some(runs[0].seed) } else { None },
            runs: runs.len(),
            final_accuracy: mean(&|m| m.window_accuracy),
            mean_confidence: mean(&|m| m.window_confidence),
            calibration_gap: mean(&|m| m.window_gap),
            mean_abs_gap: mean(&|m| m.window_gap.abs()),
            initial_flagged: initial,
            final_flagged: fin,
            flagged_reduction: if initial > 0.0 { 1.0 - fin / initial } else { 0.0 },
        }
    }
}

/// Full agent runs for every (n, seed) pair on the scenario rebuilt with
/// that seed; one aggregated row per n.
pub fn run_calibration_experiment(
    spec: &ScenarioSpec,
    n_values: &[usize],
    alpha: u32,
    seeds: &[u64],
) -> Result<(Vec<CalibrationRow>, Vec<RunMetrics>)> {
    if n_values.is_empty() || n_values.iter().any(|&n| n < 2) {
        return Err(Error::Config("every variant count must be at least 2".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &n in n_values {
        let mut runs = Vec::new();
        for &seed in seeds {
            let scenario = build_from_spec(&spec.with_seed(seed))?;
            let config = RunConfig {
                alpha,
                n,
                seed,
                search: SearchKind::Corpus,
                ..RunConfig::default()
            };
            let outcome = run_scenario(&scenario, config, true, None)?;
            let metrics = RunMetrics::from_records(n, seed, &outcome.records)?;
            tracing::info!(n, seed, gap = metrics.window_gap, "calibration run finished");
            runs.push(metrics);
        }
        rows.push(CalibrationRow::aggregate(n, &runs));
        all.extend(runs);
    }
    Ok((rows, all))
}

pub fn write_calibration_csv(rows: &[CalibrationRow], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    for row in rows {
        writer.serialize(row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ClassCounts;

    #[test]
    fn single_seed_single_row() {
        let spec = ScenarioSpec::new(1, ClassCounts { easy: 4, ambiguous: 4, unmapped: 2 }, 4);
        let (rows, runs) = run_calibration_experiment(&spec, &[3], 5, &[1]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(runs.len(), 1);
        assert_eq!(rows[0].seed, Some(1));
        assert_eq!(rows[0].runs, 1);
    }

    #[test]
    fn rejects_bad_n() {
        let spec = ScenarioSpec::standard(1);
        assert!(run_calibration_experiment(&spec, &[1], 5, &[1]).is_err());
        assert!(run_calibration_experiment(&spec, &[], 5, &[1]).is_err());
    }
}
