//! Location-aware memory buffer.
//!
//! Each tracked object keeps an exponential moving average of its appearance
//! embedding and a short history of normalized boxes. Objects that go
//! unobserved have their box extrapolated with a constant-velocity model, so
//! a reappearing object is compared against where it should be now rather
//! than where it was last seen. Entries unseen for more than `tau` frames are
//! evicted.
//!
//! The naive mode keeps the same bookkeeping but scores candidates on
//! appearance alone.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::domain::{Detection, NormalizedBox};
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.8;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_TAU_LOCATION_AWARE: usize = 10;
pub const DEFAULT_TAU_NAIVE: usize = 1;
pub const DEFAULT_ALPHA: f64 = 0.3;

const HISTORY_LEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferMode {
    LocationAware,
    Naive,
}

impl BufferMode {
    pub fn default_tau(self) -> usize {
        match self {
            BufferMode::LocationAware => DEFAULT_TAU_LOCATION_AWARE,
            BufferMode::Naive => DEFAULT_TAU_NAIVE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub global_id: u64,
    pub class_id: u32,
    pub q_hat: Vec<f64>,
    /// Newest first, at most three boxes.
    pub box_history: VecDeque<NormalizedBox>,
    pub last_seen_frame: usize,
    pub created_frame: usize,
}

impl MemoryEntry {
    pub fn new(global_id: u64, detection: &Detection) -> Result<Self> {
        Ok(Self {
            global_id,
            class_id: detection.class_id,
            q_hat: detection.embedding.clone(),
            box_history: VecDeque::from([detection.normalized_box()?]),
            last_seen_frame: detection.frame_index,
            created_frame: detection.frame_index,
        })
    }

    /// Where the object is expected one step after its newest stored box.
    pub fn predicted_box(&self) -> Result<NormalizedBox> {
        encode_location(self, None)
    }

    fn push_box(&mut self, b: NormalizedBox) {
        self.box_history.push_front(b);
        self.box_history.truncate(HISTORY_LEN);
    }
}

/// Moving-average appearance update.
///
/// Both present: `(1 - lambda) * stored + lambda * current`; otherwise the
/// one that exists.
pub fn encode_appearance(
    stored: Option<&[f64]>,
    current: Option<&[f64]>,
    lambda: f64,
) -> Result<Vec<f64>> {
    match (stored, current) {
        (Some(s), Some(c)) => {
            if s.len() != c.len() {
                return Err(Error::ShapeMismatch(format!(
                    "stored embedding has {} dims, current {}",
                    s.len(),
                    c.len()
                )));
            }
            Ok(s.iter()
                .zip(c)
                .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
                .collect())
        }
        (None, Some(c)) => Ok(c.to_vec()),
        (Some(s), None) => Ok(s.to_vec()),
        (None, None) => Err(Error::NoObservation),
    }
}

/// Box for the current step: the observation when there is one, otherwise a
/// constant-velocity extrapolation from the two newest stored boxes (or the
/// newest box held in place when only one exists).
pub fn encode_location(
    entry: &MemoryEntry,
    current: Option<NormalizedBox>,
) -> Result<NormalizedBox> {
    if let Some(b) = current {
        return Ok(b);
    }
    match (entry.box_history.front(), entry.box_history.get(1)) {
        (Some(&prev), Some(&prev2)) => Ok(prev + (prev - prev2)),
        (Some(&prev), None) => Ok(prev),
        _ => Err(Error::NoObservation),
    }
}

fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} dims",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (squared_norm(a), squared_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    // sqrt(na * nb) keeps cos(q, q) exactly 1.
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// `exp(-|b - b_mem|^2 / temperature) * cos(q, q_mem)`; the location factor
/// is 1 in naive mode.
pub fn similarity(
    q: &[f64],
    b: &NormalizedBox,
    q_mem: &[f64],
    b_mem: &NormalizedBox,
    temperature: f64,
    mode: BufferMode,
) -> Result<f64> {
    let appearance = cosine(q, q_mem)?;
    let location = match mode {
        BufferMode::LocationAware => (-b.squared_distance(b_mem) / temperature).exp(),
        BufferMode::Naive => 1.0,
    };
    Ok(location * appearance)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    entries: BTreeMap<u64, MemoryEntry>,
    pub tau: usize,
    pub lambda: f64,
    pub temperature: f64,
    pub mode: BufferMode,
}

impl MemoryBuffer {
    pub fn new(mode: BufferMode, tau: usize, lambda: f64, temperature: f64) -> Self {
        Self {
            entries: BTreeMap::new(),
            tau,
            lambda,
            temperature,
            mode,
        }
    }

    pub fn with_defaults(mode: BufferMode) -> Self {
        Self::new(
            mode,
            mode.default_tau(),
            DEFAULT_LAMBDA,
            DEFAULT_TEMPERATURE,
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&MemoryEntry> {
        self.entries.get(&id)
    }

    /// Entries in ascending id order.
    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.values()
    }

    pub fn insert(&mut self, entry: MemoryEntry) {
        self.entries.insert(entry.global_id, entry);
    }

    /// Scores a current detection against a stored entry, comparing with the
    /// entry's extrapolated box for this step.
    pub fn score(&self, entry: &MemoryEntry, q: &[f64], b: &NormalizedBox) -> Result<f64> {
        let predicted = entry.predicted_box()?;
        similarity(q, b, &entry.q_hat, &predicted, self.temperature, self.mode)
    }

    /// Evicts entries last seen before `current_frame - tau`.
    pub fn refresh(&mut self, current_frame: usize) -> Vec<u64> {
        let Some(cutoff) = current_frame.checked_sub(self.tau) else {
            return Vec::new();
        };
        let removed: Vec<u64> = self
            .entries
            .values()
            .filter(|e| e.last_seen_frame < cutoff)
            .map(|e| e.global_id)
            .collect();
        for id in &removed {
            self.entries.remove(id);
        }
        removed
    }

    /// Encoding step for one processing step ending at `current_frame`.
    ///
    /// A detection at `current_frame` updates appearance and location. A
    /// matched detection from an earlier frame of the step only refreshes
    /// `last_seen_frame`, and the entry's location is extrapolated like an
    /// unmatched one. Entries without a match are extrapolated, then the
    /// buffer is refreshed. Returns the evicted ids.
    pub fn upsert_from_matches(
        &mut self,
        matches: &[(u64, &Detection)],
        current_frame: usize,
    ) -> Result<Vec<u64>> {
        let mut seen = BTreeSet::new();
        for (id, _) in matches {
            if !seen.insert(*id) {
                return Err(Error::DuplicateMatch(*id));
            }
        }
        for &(id, det) in matches {
            let observed = det.frame_index == current_frame;
            match self.entries.get_mut(&id) {
                None => {
                    self.entries.insert(id, MemoryEntry::new(id, det)?);
                }
                Some(entry) => {
                    let current_box = if observed {
                        entry.q_hat = encode_appearance(
                            Some(&entry.q_hat),
                            Some(&det.embedding),
                            self.lambda,
                        )?;
                        Some(det.normalized_box()?)
                    } else {
                        None
                    };
                    let b = encode_location(entry, current_box)?;
                    entry.push_box(b);
                    entry.last_seen_frame = entry.last_seen_frame.max(det.frame_index);
                }
            }
        }
        for entry in self.entries.values_mut() {
            if !seen.contains(&entry.global_id) {
                let b = encode_location(entry, None)?;
                entry.push_box(b);
            }
        }
        Ok(self.refresh(current_frame))
    }
}
