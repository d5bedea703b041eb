//! The standard benchmark: every suite scenario tracked with one or both
//! buffer modes, scored against its ground truth.

use serde::{Deserialize, Serialize};

use crate::domain::ClipLayout;
use crate::error::{Error, Result};
use crate::memory::BufferMode;
use crate::metrics::{evaluate, MatchingSpace, DEFAULT_IOU_GATE};
use crate::pipeline::{process_video, EvalCase, TrackerConfig};
use crate::simulator::{generate, standard_suite};

pub const STANDARD_SUITE: &str = "standard";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub name: String,
    pub id_switches: usize,
    pub aq_proxy: f64,
    pub matching_space: MatchingSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub buffer_mode: BufferMode,
    pub tau: usize,
    pub scenarios: Vec<ScenarioResult>,
    pub mean_aq_proxy: f64,
    pub total_id_switches: usize,
    /// Mean of the per-scenario averages; maximum of the maxima.
    pub matching_space: MatchingSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub suite: String,
    pub modes: Vec<ModeReport>,
}

/// The standard suite cut into clips with `layout`.
pub fn suite_cases(layout: ClipLayout) -> Result<Vec<EvalCase>> {
    standard_suite()
        .into_iter()
        .map(|(name, spec)| {
            let (ground_truth, clips) = generate(&spec, layout)?;
            Ok(EvalCase {
                name,
                ground_truth,
                clips,
            })
        })
        .collect()
}

pub fn run_mode(cases: &[EvalCase], config: &TrackerConfig) -> Result<ModeReport> {
    let mut scenarios = Vec::with_capacity(cases.len());
    for case in cases {
        let output = process_video(&case.clips, config)?;
        let report = evaluate(&output, &case.ground_truth, DEFAULT_IOU_GATE)?;
        scenarios.push(ScenarioResult {
            name: case.name.clone(),
            id_switches: report.id_switches,
            aq_proxy: report.aq_proxy,
            matching_space: report.matching_space,
        });
    }
    let n = scenarios.len().max(1) as f64;
    Ok(ModeReport {
        buffer_mode: config.buffer_mode,
        tau: config.effective_tau(),
        mean_aq_proxy: scenarios.iter().map(|s| s.aq_proxy).sum::<f64>() / n,
        total_id_switches: scenarios.iter().map(|s| s.id_switches).sum(),
        matching_space: MatchingSpace {
            avg: scenarios.iter().map(|s| s.matching_space.avg).sum::<f64>() / n,
            max: scenarios
                .iter()
                .map(|s| s.matching_space.max)
                .max()
                .unwrap_or(0),
        },
        scenarios,
    })
}

/// Runs the named suite once per buffer mode, each with its own default
/// refresh window unless `base.tau` is set.
pub fn run_bench(suite: &str, modes: &[BufferMode], base: &TrackerConfig) -> Result<BenchReport> {
    if suite != STANDARD_SUITE {
        return Err(Error::Config(format!("unknown suite {suite:?}")));
    }
    let cases = suite_cases(base.layout())?;
    let modes = modes
        .iter()
        .map(|&m| run_mode(&cases, &base.clone().with_buffer(m)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        suite: suite.to_string(),
        modes,
    })
}
