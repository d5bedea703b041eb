//! File formats. Detections and tracks are line-delimited JSON with keys in
//! a fixed order; configs are TOML; scenarios are TOML or JSON; reports are
//! pretty JSON and sweeps are CSV.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{BinaryMask, Clip, ClipLayout, Detection, LabeledMask, Tube};
use crate::error::{Error, Result};
use crate::pipeline::{SweepTable, Telemetry, TrackOutput, TrackerConfig};
use crate::simulator::{GroundTruth, ScenarioSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRecord {
    pub w: u32,
    pub h: u32,
    pub rle: Vec<u32>,
}

impl From<&BinaryMask> for MaskRecord {
    fn from(m: &BinaryMask) -> Self {
        MaskRecord {
            w: m.width(),
            h: m.height(),
            rle: m.runs().to_vec(),
        }
    }
}

impl MaskRecord {
    fn to_mask(&self, line: usize) -> Result<BinaryMask> {
        BinaryMask::from_runs(self.w, self.h, self.rle.clone()).map_err(|e| match e {
            Error::InvalidRle(msg) => Error::InvalidRle(format!("line {line}: {msg}")),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame: usize,
    pub clip: usize,
    pub tube: u32,
    pub class: u32,
    pub score: f64,
    pub embedding: Vec<f64>,
    pub mask: MaskRecord,
}

/// Optional first line of a detection file. It pins the clip layout and the
/// frame count so clips without any tube survive a round trip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionHeader {
    pub frames: usize,
    pub clip_length: usize,
    pub overlap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub frame: usize,
    pub id: u64,
    pub class: u32,
    pub mask: MaskRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    #[serde(default)]
    pub telemetry: Telemetry,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SummaryLine {
    summary: TrackSummary,
}

fn parse_err(line: usize, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Non-blank lines with their 1-based line numbers.
fn lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String)>>> {
    let reader = BufReader::new(File::open(path)?);
    Ok(reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(Error::from))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty())))
}

pub fn write_detections(
    clips: &[Clip],
    layout: ClipLayout,
    num_frames: usize,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_line(
        &mut w,
        &DetectionHeader {
            frames: num_frames,
            clip_length: layout.clip_length,
            overlap: layout.overlap,
        },
    )?;
    for (k, clip) in clips.iter().enumerate() {
        let mut tubes: Vec<&Tube> = clip.tubes.iter().collect();
        tubes.sort_by_key(|t| t.clip_local_id);
        for t in tubes {
            for d in &t.detections {
                write_line(
                    &mut w,
                    &DetectionRecord {
                        frame: d.frame_index,
                        clip: k,
                        tube: t.clip_local_id,
                        class: d.class_id,
                        score: d.score,
                        embedding: d.embedding.clone(),
                        mask: (&d.mask).into(),
                    },
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a detection file into clips. Clip frame ranges come from the header
/// line when present, otherwise from `layout` with the frame count taken as
/// one past the largest frame index seen.
pub fn read_detections(path: &Path, layout: ClipLayout) -> Result<Vec<Clip>> {
    let mut header: Option<DetectionHeader> = None;
    // clip -> tube -> (source line, detection)
    let mut grouped: BTreeMap<usize, BTreeMap<u32, Vec<(usize, Detection)>>> = BTreeMap::new();
    let mut max_frame: Option<usize> = None;
    let mut first = true;
    for item in lines(path)? {
        let (line, text) = item?;
        if std::mem::take(&mut first) && text.trim_start().starts_with("{\"frames\"") {
            header = Some(serde_json::from_str(&text).map_err(|e| parse_err(line, e))?);
            continue;
        }
        let r: DetectionRecord = serde_json::from_str(&text).map_err(|e| parse_err(line, e))?;
        let mask = r.mask.to_mask(line)?;
        max_frame = Some(max_frame.map_or(r.frame, |m: usize| m.max(r.frame)));
        grouped
            .entry(r.clip)
            .or_default()
            .entry(r.tube)
            .or_default()
            .push((
                line,
                Detection {
                    frame_index: r.frame,
                    class_id: r.class,
                    score: r.score,
                    mask,
                    embedding: r.embedding,
                },
            ));
    }

    let (layout, num_frames) = match header {
        Some(h) => (ClipLayout::new(h.clip_length, h.overlap)?, h.frames),
        None => (layout, max_frame.map_or(0, |m| m + 1)),
    };
    let ranges = layout.clip_ranges(num_frames);
    if let Some((&k, _)) = grouped.range(ranges.len()..).next() {
        return Err(Error::ClipSequence(format!(
            "clip index {k} beyond the {} clips of a {num_frames}-frame video",
            ranges.len()
        )));
    }

    let mut clips = Vec::with_capacity(ranges.len());
    for (k, range) in ranges.into_iter().enumerate() {
        let mut tubes = Vec::new();
        for (id, mut dets) in grouped.remove(&k).unwrap_or_default() {
            dets.sort_by_key(|(_, d)| d.frame_index);
            let first_line = dets[0].0;
            let class_id = dets[0].1.class_id;
            let tube = Tube {
                clip_local_id: id,
                class_id,
                detections: dets.into_iter().map(|(_, d)| d).collect(),
            };
            tube.validate(&range)
                .map_err(|e| parse_err(first_line, format!("clip {k} tube {id}: {e}")))?;
            tubes.push(tube);
        }
        clips.push(Clip {
            first_frame: range.start,
            length: range.len(),
            tubes,
        });
    }
    Ok(clips)
}

fn write_labeled_frames(
    frames: &[Vec<LabeledMask>],
    summary: &TrackSummary,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (f, masks) in frames.iter().enumerate() {
        let mut masks: Vec<&LabeledMask> = masks.iter().collect();
        masks.sort_by_key(|m| m.id);
        for m in masks {
            write_line(
                &mut w,
                &TrackRecord {
                    frame: f,
                    id: m.id,
                    class: m.class_id,
                    mask: (&m.mask).into(),
                },
            )?;
        }
    }
    write_line(
        &mut w,
        &SummaryLine {
            summary: summary.clone(),
        },
    )?;
    w.flush()?;
    Ok(())
}

fn read_labeled_frames(path: &Path) -> Result<(Vec<Vec<LabeledMask>>, TrackSummary)> {
    let mut records = Vec::new();
    let mut summary: Option<TrackSummary> = None;
    for item in lines(path)? {
        let (line, text) = item?;
        if summary.is_some() {
            return Err(parse_err(line, "record after the summary line"));
        }
        if text.trim_start().starts_with("{\"summary\"") {
            let s: SummaryLine = serde_json::from_str(&text).map_err(|e| parse_err(line, e))?;
            summary = Some(s.summary);
            continue;
        }
        let r: TrackRecord = serde_json::from_str(&text).map_err(|e| parse_err(line, e))?;
        let mask = r.mask.to_mask(line)?;
        records.push((
            line,
            r.frame,
            LabeledMask {
                id: r.id,
                class_id: r.class,
                mask,
            },
        ));
    }
    let summary = summary.ok_or_else(|| parse_err(0, "missing summary line"))?;
    let mut frames = vec![Vec::new(); summary.frames];
    for (line, f, m) in records {
        let slot = frames.get_mut(f).ok_or_else(|| {
            parse_err(
                line,
                format!(
                    "frame {f} beyond the {} frames in the summary",
                    summary.frames
                ),
            )
        })?;
        if slot.iter().any(|o: &LabeledMask| o.id == m.id) {
            return Err(parse_err(
                line,
                format!("id {} appears twice in frame {f}", m.id),
            ));
        }
        slot.push(m);
    }
    for slot in &mut frames {
        slot.sort_by_key(|m| m.id);
    }
    Ok((frames, summary))
}

pub fn write_tracks(output: &TrackOutput, rng_seed: Option<u64>, path: &Path) -> Result<()> {
    let summary = TrackSummary {
        frames: output.num_frames(),
        rng_seed,
        telemetry: output.telemetry.clone(),
    };
    write_labeled_frames(&output.frames, &summary, path)
}

pub fn read_tracks(path: &Path) -> Result<TrackOutput> {
    let (frames, summary) = read_labeled_frames(path)?;
    Ok(TrackOutput {
        frames,
        telemetry: summary.telemetry,
    })
}

/// Ground truth shares the track format, with empty telemetry.
pub fn write_ground_truth(gt: &GroundTruth, path: &Path) -> Result<()> {
    let summary = TrackSummary {
        frames: gt.num_frames(),
        rng_seed: None,
        telemetry: Telemetry::default(),
    };
    write_labeled_frames(&gt.frames, &summary, path)
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    Ok(GroundTruth {
        frames: read_labeled_frames(path)?.0,
    })
}

/// Reads a TOML tracker config. Missing keys take their defaults, except
/// that an online config without `clip_length` or `overlap` gets one-frame
/// clips without overlap.
pub fn read_config(path: &Path) -> Result<TrackerConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if table.get("mode").and_then(|v| v.as_str()) == Some("online") {
        table
            .entry("clip_length")
            .or_insert(toml::Value::Integer(1));
        table.entry("overlap").or_insert(toml::Value::Integer(0));
    }
    let config: TrackerConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn read_structured<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    if is_json(path) {
        serde_json::from_str(&text).map_err(|e| parse_err(e.line(), e))
    } else {
        toml::from_str(&text).map_err(|e| {
            let line = e.span().map_or(0, |s| {
                text[..s.start].bytes().filter(|&b| b == b'\n').count() + 1
            });
            parse_err(line, e.message())
        })
    }
}

/// Reads a scenario spec; `.json` files are JSON, anything else TOML.
pub fn read_scenario(path: &Path) -> Result<ScenarioSpec> {
    let spec: ScenarioSpec = read_structured(path)?;
    spec.validate()?;
    Ok(spec)
}

pub fn write_scenario(spec: &ScenarioSpec, path: &Path) -> Result<()> {
    let text = if is_json(path) {
        serde_json::to_string_pretty(spec).map_err(std::io::Error::from)? + "\n"
    } else {
        toml::to_string(spec).map_err(|e| Error::Spec(e.to_string()))?
    };
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_json_report<T: Serialize>(report: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).map_err(std::io::Error::from)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json_report<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(e.line(), e))
}

/// `tau,alpha,aq_proxy` rows in grid order, then `mean` and `std` rows.
pub fn sweep_csv(table: &SweepTable) -> String {
    let mut out = String::from("tau,alpha,aq_proxy\n");
    for r in &table.rows {
        out.push_str(&format!("{},{},{}\n", r.tau, r.alpha, r.aq_proxy));
    }
    out.push_str(&format!("mean,,{}\nstd,,{}\n", table.mean, table.std));
    out
}

pub fn write_sweep_csv(table: &SweepTable, path: &Path) -> Result<()> {
    std::fs::write(path, sweep_csv(table))?;
    Ok(())
}
