//! Hierarchical clip-to-video association.
//!
//! Each processing step takes one clip. In near-online location-aware mode
//! the clip's tubes are first stitched to the previous clip by mask IoU on
//! the overlapping frames; tubes left over are matched against the memory
//! buffer entries that were not stitched; anything still unmatched starts a
//! new track. Online mode (one-frame clips) and the naive buffer skip the
//! stitching stage.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian_max, threshold_filter, SimilarityMatrix, FORBIDDEN};
use crate::domain::{Clip, ClipLayout, Detection, LabeledMask, Tube};
use crate::error::{Error, Result};
use crate::memory::{BufferMode, MemoryBuffer, DEFAULT_ALPHA, DEFAULT_LAMBDA, DEFAULT_TEMPERATURE};
use crate::metrics::{evaluate, DEFAULT_IOU_GATE};
use crate::simulator::GroundTruth;
use crate::stitching::stitch_clips;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessingMode {
    Online,
    NearOnline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub mode: ProcessingMode,
    pub clip_length: usize,
    pub overlap: usize,
    pub lambda: f64,
    pub temperature: f64,
    /// Refresh window; `None` picks the buffer mode's default (10 for the
    /// location-aware buffer, 1 for the naive one).
    pub tau: Option<usize>,
    pub alpha: f64,
    pub alpha_stitch: f64,
    pub buffer_mode: BufferMode,
    /// Echoed into the output summary. Association itself draws no random
    /// numbers.
    pub rng_seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            mode: ProcessingMode::NearOnline,
            clip_length: 2,
            overlap: 1,
            lambda: DEFAULT_LAMBDA,
            temperature: DEFAULT_TEMPERATURE,
            tau: None,
            alpha: DEFAULT_ALPHA,
            alpha_stitch: 0.0,
            buffer_mode: BufferMode::LocationAware,
            rng_seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn online() -> Self {
        Self {
            mode: ProcessingMode::Online,
            clip_length: 1,
            overlap: 0,
            ..Self::default()
        }
    }

    pub fn with_buffer(mut self, mode: BufferMode) -> Self {
        self.buffer_mode = mode;
        self
    }

    pub fn effective_tau(&self) -> usize {
        self.tau.unwrap_or(self.buffer_mode.default_tau())
    }

    pub fn layout(&self) -> ClipLayout {
        ClipLayout {
            clip_length: self.clip_length,
            overlap: self.overlap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            ProcessingMode::Online if self.clip_length != 1 || self.overlap != 0 => {
                return Err(Error::Config(format!(
                    "online mode processes one-frame clips without overlap, got clip_length {} overlap {}",
                    self.clip_length, self.overlap
                )));
            }
            ProcessingMode::NearOnline if self.overlap < 1 || self.clip_length <= self.overlap => {
                return Err(Error::Config(format!(
                    "near-online mode needs overlap >= 1 and clip_length > overlap, got clip_length {} overlap {}",
                    self.clip_length, self.overlap
                )));
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if self.alpha.is_nan() || self.alpha_stitch.is_nan() {
            return Err(Error::Config("thresholds must not be NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTelemetry {
    pub step: usize,
    pub frame: usize,
    /// Memory-stage similarity matrix rows (candidate entries).
    pub memory_rows: usize,
    /// Memory-stage similarity matrix columns (tubes left for memory).
    pub memory_cols: usize,
    pub stitched: usize,
    pub memory_matched: usize,
    pub newborn: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    /// One record per step that ran the memory stage (every step but the first).
    pub steps: Vec<StepTelemetry>,
    pub stitch_invocations: usize,
    pub stitched: usize,
    pub memory_matched: usize,
    pub newborn: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackOutput {
    /// Per frame, tracked masks sorted by id.
    pub frames: Vec<Vec<LabeledMask>>,
    pub telemetry: Telemetry,
}

impl TrackOutput {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

fn check_sequence(clips: &[Clip], config: &TrackerConfig) -> Result<()> {
    let layout = config.layout();
    for (k, clip) in clips.iter().enumerate() {
        clip.validate()?;
        if clip.length > layout.clip_length {
            return Err(Error::ClipSequence(format!(
                "clip {k} has {} frames, configured clip length is {}",
                clip.length, layout.clip_length
            )));
        }
        if k + 1 < clips.len() && clip.length != layout.clip_length {
            return Err(Error::ClipSequence(format!(
                "clip {k} has {} frames; only the last clip may be shorter than {}",
                clip.length, layout.clip_length
            )));
        }
        if k > 0 {
            let expected = clips[k - 1].first_frame + layout.stride();
            if clip.first_frame != expected {
                return Err(Error::ClipSequence(format!(
                    "clip {k} starts at frame {}, expected {expected}",
                    clip.first_frame
                )));
            }
            if clip.length <= layout.overlap {
                return Err(Error::ClipSequence(format!(
                    "clip {k} adds no frames beyond the overlap"
                )));
            }
        }
    }
    Ok(())
}

/// The detection representing a tube at this step: the one in the step's
/// last frame when present, otherwise the tube's latest.
fn step_detection(tube: &Tube, current_frame: usize) -> &Detection {
    tube.detection_at(current_frame)
        .or_else(|| tube.last_detection())
        .expect("validated tubes are nonempty")
}

/// Associates a clip sequence into video-level tracks.
pub fn process_video(clips: &[Clip], config: &TrackerConfig) -> Result<TrackOutput> {
    config.validate()?;
    check_sequence(clips, config)?;

    let mut buffer = MemoryBuffer::new(
        config.buffer_mode,
        config.effective_tau(),
        config.lambda,
        config.temperature,
    );
    let stitching = config.mode == ProcessingMode::NearOnline
        && config.buffer_mode == BufferMode::LocationAware;
    let num_frames = clips.last().map_or(0, |c| c.first_frame + c.length);
    let mut out = TrackOutput {
        frames: vec![Vec::new(); num_frames],
        telemetry: Telemetry::default(),
    };
    let mut next_id: u64 = 1;
    let mut prev_ids: BTreeMap<u32, u64> = BTreeMap::new();
    let mut emitted_until = 0usize;

    for (k, clip) in clips.iter().enumerate() {
        let current_frame = clip.last_frame();
        let mut tubes: Vec<&Tube> = clip.tubes.iter().collect();
        tubes.sort_by_key(|t| t.clip_local_id);
        let mut ids: BTreeMap<u32, u64> = BTreeMap::new();
        let mut step = StepTelemetry {
            step: k,
            frame: current_frame,
            ..Default::default()
        };

        if k > 0 {
            if stitching {
                let stitched = stitch_clips(&clips[k - 1], &prev_ids, clip, config.alpha_stitch)?;
                out.telemetry.stitch_invocations += 1;
                step.stitched = stitched.matched.len();
                ids.extend(stitched.matched);
            }

            let taken: BTreeSet<u64> = ids.values().copied().collect();
            let candidates: Vec<u64> = buffer
                .entries()
                .map(|e| e.global_id)
                .filter(|id| !taken.contains(id))
                .collect();
            let pending: Vec<&Tube> = tubes
                .iter()
                .copied()
                .filter(|t| !ids.contains_key(&t.clip_local_id))
                .collect();
            let queries = pending
                .iter()
                .map(|t| {
                    let d = step_detection(t, current_frame);
                    Ok((d, d.normalized_box()?))
                })
                .collect::<Result<Vec<_>>>()?;
            let matrix = SimilarityMatrix::try_from_fn(
                candidates,
                (0..pending.len()).collect(),
                |&id, &j| {
                    let entry = buffer.get(id).expect("candidate ids come from the buffer");
                    let (det, b) = &queries[j];
                    if entry.class_id != det.class_id {
                        return Ok(FORBIDDEN);
                    }
                    buffer.score(entry, &det.embedding, b)
                },
            )?;
            step.memory_rows = matrix.rows();
            step.memory_cols = matrix.cols();
            let assignment = threshold_filter(hungarian_max(&matrix)?, config.alpha);
            step.memory_matched = assignment.pairs.len();
            for p in assignment.pairs {
                ids.insert(pending[p.col].clip_local_id, p.row);
            }
        }

        for t in &tubes {
            ids.entry(t.clip_local_id).or_insert_with(|| {
                step.newborn += 1;
                let id = next_id;
                next_id += 1;
                id
            });
        }

        let matches: Vec<(u64, &Detection)> = tubes
            .iter()
            .map(|t| (ids[&t.clip_local_id], step_detection(t, current_frame)))
            .collect();
        buffer.upsert_from_matches(&matches, current_frame)?;

        for t in &tubes {
            let id = ids[&t.clip_local_id];
            for d in t
                .detections
                .iter()
                .filter(|d| d.frame_index >= emitted_until)
            {
                out.frames[d.frame_index].push(LabeledMask {
                    id,
                    class_id: t.class_id,
                    mask: d.mask.clone(),
                });
            }
        }
        emitted_until = clip.first_frame + clip.length;

        out.telemetry.stitched += step.stitched;
        out.telemetry.memory_matched += step.memory_matched;
        out.telemetry.newborn += step.newborn;
        if k > 0 {
            out.telemetry.steps.push(step);
        }
        prev_ids = ids;
    }
    for frame in &mut out.frames {
        frame.sort_by_key(|m| m.id);
    }
    Ok(out)
}

/// Average and maximum memory-stage matrix size `M x N` over all steps;
/// `(0.0, 0)` when the memory stage never ran.
pub fn matching_space_stats(output: &TrackOutput) -> (f64, usize) {
    let sizes: Vec<usize> = output
        .telemetry
        .steps
        .iter()
        .map(|s| s.memory_rows * s.memory_cols)
        .collect();
    if sizes.is_empty() {
        return (0.0, 0);
    }
    let avg = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
    (avg, sizes.iter().copied().max().unwrap_or(0))
}

/// A named video with ground truth, already cut into clips.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub name: String,
    pub ground_truth: GroundTruth,
    pub clips: Vec<Clip>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: usize,
    pub alpha: f64,
    /// Association-quality proxy averaged over the cases.
    pub aq_proxy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub mean: f64,
    /// Population standard deviation over the grid.
    pub std: f64,
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean association-quality proxy of `config` over `cases`.
pub fn mean_aq(cases: &[EvalCase], config: &TrackerConfig) -> Result<f64> {
    if cases.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for case in cases {
        let output = process_video(&case.clips, config)?;
        total += evaluate(&output, &case.ground_truth, DEFAULT_IOU_GATE)?.aq_proxy;
    }
    Ok(total / cases.len() as f64)
}

/// Runs every `(tau, alpha)` cell of the grid over all cases. Cells are
/// independent and evaluated on separate threads; row order follows the grid
/// (tau-major).
pub fn hyperparameter_sweep(
    cases: &[EvalCase],
    base: &TrackerConfig,
    tau_grid: &[usize],
    alpha_grid: &[f64],
) -> Result<SweepTable> {
    if tau_grid.is_empty() || alpha_grid.is_empty() {
        return Err(Error::Config("sweep grids must be nonempty".into()));
    }
    let cells: Vec<(usize, f64)> = tau_grid
        .iter()
        .flat_map(|&t| alpha_grid.iter().map(move |&a| (t, a)))
        .collect();
    let results: Vec<Result<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = cells
            .iter()
            .map(|&(tau, alpha)| {
                let config = TrackerConfig {
                    tau: Some(tau),
                    alpha,
                    ..base.clone()
                };
                s.spawn(move || mean_aq(cases, &config))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut rows = Vec::with_capacity(cells.len());
    for (&(tau, alpha), aq) in cells.iter().zip(results) {
        rows.push(SweepRow {
            tau,
            alpha,
            aq_proxy: aq?,
        });
    }
    let (mean, std) = mean_and_std(&rows.iter().map(|r| r.aq_proxy).collect::<Vec<_>>());
    Ok(SweepTable { rows, mean, std })
}
