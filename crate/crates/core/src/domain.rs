//! Masks, boxes and the clip/tube containers shared by every stage.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single-frame binary mask stored as run lengths.
///
/// Runs alternate background/foreground in row-major pixel order and always
/// start with a background run, which may be zero-length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl BinaryMask {
    pub fn from_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Self> {
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        let expected = width as u64 * height as u64;
        if total != expected {
            return Err(Error::InvalidRle(format!(
                "runs sum to {total}, expected {width}x{height} = {expected}"
            )));
        }
        Ok(Self {
            width,
            height,
            runs,
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            runs: vec![width * height],
        }
    }

    /// Encodes a row-major bitmap. The result is canonical: no zero-length
    /// runs except possibly the leading background run.
    pub fn from_bitmap(width: u32, height: u32, bits: &[bool]) -> Result<Self> {
        if bits.len() != (width as usize) * (height as usize) {
            return Err(Error::ShapeMismatch(format!(
                "bitmap has {} pixels, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in bits {
            if b != current {
                runs.push(len);
                current = b;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        Ok(Self {
            width,
            height,
            runs,
        })
    }

    /// Rasterizes the half-open pixel rectangle `[x0, x1) x [y0, y1)`,
    /// clipped to the frame.
    pub fn from_rect(width: u32, height: u32, x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        let cx0 = x0.clamp(0, width as i64) as u32;
        let cx1 = x1.clamp(0, width as i64) as u32;
        let cy0 = y0.clamp(0, height as i64) as u32;
        let cy1 = y1.clamp(0, height as i64) as u32;
        if cx0 >= cx1 || cy0 >= cy1 {
            return Self::empty(width, height);
        }
        let span = cx1 - cx0;
        let mut runs = Vec::with_capacity(2 * (cy1 - cy0) as usize + 1);
        let mut cursor = 0u32;
        for row in cy0..cy1 {
            let start = row * width + cx0;
            runs.push(start - cursor);
            runs.push(span);
            cursor = start + span;
        }
        runs.push(width * height - cursor);
        Self::canonicalize(width, height, runs)
    }

    /// Builds a mask from sorted, non-overlapping foreground intervals of
    /// linear pixel indices.
    pub(crate) fn from_intervals(width: u32, height: u32, intervals: &[(u32, u32)]) -> Self {
        let mut runs = Vec::with_capacity(2 * intervals.len() + 1);
        let mut cursor = 0u32;
        for &(s, e) in intervals {
            runs.push(s - cursor);
            runs.push(e - s);
            cursor = e;
        }
        runs.push(width * height - cursor);
        Self::canonicalize(width, height, runs)
    }

    // Merges zero-length inner runs so equal masks compare equal.
    fn canonicalize(width: u32, height: u32, raw: Vec<u32>) -> Self {
        let mut runs: Vec<u32> = Vec::with_capacity(raw.len());
        for (i, r) in raw.into_iter().enumerate() {
            let is_fg = i % 2 == 1;
            let last_is_fg = runs.len().is_multiple_of(2);
            if runs.is_empty() {
                runs.push(r);
            } else if r == 0 {
                continue;
            } else if is_fg == last_is_fg {
                *runs.last_mut().unwrap() += r;
            } else {
                runs.push(r);
            }
        }
        if runs.len() > 1 && *runs.last().unwrap() == 0 {
            runs.pop();
        }
        Self {
            width,
            height,
            runs,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(self.width as usize * self.height as usize);
        for (i, &r) in self.runs.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
        }
        bits
    }

    /// Foreground intervals `[start, end)` in linear pixel order.
    pub fn intervals(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let mut cursor = 0u32;
        self.runs.iter().enumerate().filter_map(move |(i, &r)| {
            let start = cursor;
            cursor += r;
            (i % 2 == 1 && r > 0).then_some((start, cursor))
        })
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn intersection_area(&self, other: &Self) -> Result<u64> {
        self.check_same_shape(other)?;
        let a: Vec<_> = self.intervals().collect();
        let b: Vec<_> = other.intervals().collect();
        let (mut i, mut j, mut total) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if hi > lo {
                total += (hi - lo) as u64;
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(total)
    }

    /// Pixels of `self` not covered by `other`.
    pub fn subtract(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let b: Vec<_> = other.intervals().collect();
        let mut out = Vec::new();
        let mut j = 0;
        for (mut s, e) in self.intervals() {
            while j < b.len() && b[j].1 <= s {
                j += 1;
            }
            let mut k = j;
            while s < e {
                if k >= b.len() || b[k].0 >= e {
                    out.push((s, e));
                    break;
                }
                if b[k].0 > s {
                    out.push((s, b[k].0));
                }
                s = s.max(b[k].1);
                k += 1;
            }
        }
        Ok(Self::from_intervals(self.width, self.height, &out))
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let mut all: Vec<_> = self.intervals().chain(other.intervals()).collect();
        all.sort_unstable();
        let mut merged: Vec<(u32, u32)> = Vec::with_capacity(all.len());
        for (s, e) in all {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        Ok(Self::from_intervals(self.width, self.height, &merged))
    }

    /// Tight pixel bounds `(min_col, min_row, max_col, max_row)`, inclusive.
    pub fn pixel_bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let w = self.width;
        let mut bounds: Option<(u32, u32, u32, u32)> = None;
        for (s, e) in self.intervals() {
            let (row_s, row_e) = (s / w, (e - 1) / w);
            let (c0, c1) = if row_s == row_e {
                (s % w, (e - 1) % w)
            } else {
                (0, w - 1)
            };
            bounds = Some(match bounds {
                None => (c0, row_s, c1, row_e),
                Some((a, b, c, d)) => (a.min(c0), b.min(row_s), c.max(c1), d.max(row_e)),
            });
        }
        bounds
    }

    pub fn normalized_box(&self) -> Result<NormalizedBox> {
        let (c0, r0, c1, r1) = self.pixel_bounds().ok_or(Error::EmptyMask)?;
        let (w, h) = (self.width as f64, self.height as f64);
        Ok(NormalizedBox::new(
            c0 as f64 / w,
            r0 as f64 / h,
            (c1 + 1) as f64 / w,
            (r1 + 1) as f64 / h,
        ))
    }
}

/// Tight box over the mask's foreground, corners divided by frame width and
/// height with half-open pixel intervals (a full-frame mask maps to `[0,0,1,1]`).
pub fn mask_to_normalized_box(mask: &BinaryMask) -> Result<NormalizedBox> {
    mask.normalized_box()
}

/// Intersection over union; zero when both masks are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Box corners as fractions of frame width/height: `[x_tl, y_tl, x_br, y_br]`.
///
/// Extrapolated boxes may leave `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedBox {
    pub x_tl: f64,
    pub y_tl: f64,
    pub x_br: f64,
    pub y_br: f64,
}

impl NormalizedBox {
    pub fn new(x_tl: f64, y_tl: f64, x_br: f64, y_br: f64) -> Self {
        Self {
            x_tl,
            y_tl,
            x_br,
            y_br,
        }
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_tl, self.y_tl, self.x_br, self.y_br]
    }

    /// Squared Euclidean distance between the two 4-vectors.
    pub fn squared_distance(&self, other: &Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl std::ops::Add for NormalizedBox {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(
            self.x_tl + rhs.x_tl,
            self.y_tl + rhs.y_tl,
            self.x_br + rhs.x_br,
            self.y_br + rhs.y_br,
        )
    }
}

impl std::ops::Sub for NormalizedBox {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(
            self.x_tl - rhs.x_tl,
            self.y_tl - rhs.y_tl,
            self.x_br - rhs.x_br,
            self.y_br - rhs.y_br,
        )
    }
}

/// One object observed in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_index: usize,
    pub class_id: u32,
    pub score: f64,
    pub mask: BinaryMask,
    pub embedding: Vec<f64>,
}

impl Detection {
    pub fn normalized_box(&self) -> Result<NormalizedBox> {
        self.mask.normalized_box()
    }
}

/// One object's detections across the frames of a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Tube {
    pub clip_local_id: u32,
    pub class_id: u32,
    pub detections: Vec<Detection>,
}

impl Tube {
    pub fn detection_at(&self, frame: usize) -> Option<&Detection> {
        self.detections
            .binary_search_by_key(&frame, |d| d.frame_index)
            .ok()
            .map(|i| &self.detections[i])
    }

    pub fn last_detection(&self) -> Option<&Detection> {
        self.detections.last()
    }

    pub fn validate(&self, frames: &Range<usize>) -> Result<()> {
        if self.detections.is_empty() {
            return Err(Error::ClipSequence(format!(
                "tube {} has no detections",
                self.clip_local_id
            )));
        }
        let mut prev: Option<usize> = None;
        for d in &self.detections {
            if d.class_id != self.class_id {
                return Err(Error::ClipSequence(format!(
                    "tube {} mixes classes {} and {}",
                    self.clip_local_id, self.class_id, d.class_id
                )));
            }
            if !frames.contains(&d.frame_index) {
                return Err(Error::ClipSequence(format!(
                    "tube {} has frame {} outside clip frames {:?}",
                    self.clip_local_id, d.frame_index, frames
                )));
            }
            if prev.is_some_and(|p| p >= d.frame_index) {
                return Err(Error::ClipSequence(format!(
                    "tube {} frames are not strictly increasing",
                    self.clip_local_id
                )));
            }
            if d.mask.is_empty() {
                return Err(Error::ClipSequence(format!(
                    "tube {} has an empty mask at frame {}",
                    self.clip_local_id, d.frame_index
                )));
            }
            prev = Some(d.frame_index);
        }
        Ok(())
    }
}

/// `length` consecutive frames starting at `first_frame`, with the tubes
/// predicted for them.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub first_frame: usize,
    pub length: usize,
    pub tubes: Vec<Tube>,
}

impl Clip {
    pub fn frames(&self) -> Range<usize> {
        self.first_frame..self.first_frame + self.length
    }

    pub fn last_frame(&self) -> usize {
        self.first_frame + self.length - 1
    }

    pub fn tube(&self, clip_local_id: u32) -> Option<&Tube> {
        self.tubes.iter().find(|t| t.clip_local_id == clip_local_id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::ClipSequence("clip of length zero".into()));
        }
        let frames = self.frames();
        let mut ids: Vec<u32> = self.tubes.iter().map(|t| t.clip_local_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::ClipSequence(format!(
                "duplicate tube id in clip starting at frame {}",
                self.first_frame
            )));
        }
        self.tubes.iter().try_for_each(|t| t.validate(&frames))
    }
}

/// A mask carrying a track identity, as emitted per frame by the tracker and
/// by the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMask {
    pub id: u64,
    pub class_id: u32,
    pub mask: BinaryMask,
}

/// How a video is cut into clips: `clip_length` frames per clip, consecutive
/// clips sharing `overlap` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipLayout {
    pub clip_length: usize,
    pub overlap: usize,
}

impl ClipLayout {
    pub const ONLINE: ClipLayout = ClipLayout {
        clip_length: 1,
        overlap: 0,
    };

    pub fn new(clip_length: usize, overlap: usize) -> Result<Self> {
        if clip_length == 0 || overlap >= clip_length {
            return Err(Error::Config(format!(
                "clip length {clip_length} with overlap {overlap} has no stride"
            )));
        }
        Ok(Self {
            clip_length,
            overlap,
        })
    }

    pub fn stride(&self) -> usize {
        self.clip_length - self.overlap
    }

    /// Frame ranges of the clips covering `num_frames` frames. The last clip
    /// is truncated at the end of the video; every clip after the first still
    /// contains at least one frame beyond the overlap.
    pub fn clip_ranges(&self, num_frames: usize) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < num_frames {
            let end = (start + self.clip_length).min(num_frames);
            out.push(start..end);
            if end == num_frames {
                break;
            }
            start += self.stride();
        }
        out
    }
}
