//! Attack success rate arithmetic.
//!
//! ASR is the percentage of attempts judged successful, reported per
//! scenario and overall, rounded to two decimals. Errored attacks stay in
//! the attempt denominator as non-successes so failures never inflate the
//! rate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::eval::scenario::Scenario;

/// The judged result of one attack attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario: Scenario,
    pub success: bool,
}

/// Attempt/success counts with the derived percentage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioStats {
    pub attempts: usize,
    pub successes: usize,
    pub asr_percent: f64,
}

impl ScenarioStats {
    fn tally(attempts: usize, successes: usize) -> Self {
        let asr_percent = if attempts == 0 {
            0.0
        } else {
            round2(100.0 * successes as f64 / attempts as f64)
        };
        Self {
            attempts,
            successes,
            asr_percent,
        }
    }
}

/// Per-scenario stats (keyed by scenario code) plus the overall aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrSummary {
    pub per_scenario: BTreeMap<String, ScenarioStats>,
    pub overall: ScenarioStats,
}

/// Rounds to two decimals, the report precision.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Aggregates outcomes into per-scenario and overall rates. Order of the
/// input never matters; only counts do.
pub fn compute_asr(outcomes: &[ScenarioOutcome]) -> AsrSummary {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut total = (0usize, 0usize);
    for outcome in outcomes {
        let entry = counts
            .entry(outcome.scenario.code().to_string())
            .or_default();
        entry.0 += 1;
        total.0 += 1;
        if outcome.success {
            entry.1 += 1;
            total.1 += 1;
        }
    }
    AsrSummary {
        per_scenario: counts
            .into_iter()
            .map(|(code, (a, s))| (code, ScenarioStats::tally(a, s)))
            .collect(),
        overall: ScenarioStats::tally(total.0, total.1),
    }
}
