//! Identity propagation between consecutive clips by mask IoU on the frames
//! they share.

use std::collections::BTreeMap;

use crate::assignment::{hungarian_max, threshold_filter, SimilarityMatrix, FORBIDDEN};
use crate::domain::{mask_iou, Clip, Tube};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StitchResult {
    /// Current clip-local tube id to inherited global id.
    pub matched: BTreeMap<u32, u64>,
    /// Current tubes that inherited nothing, ascending.
    pub unmatched: Vec<u32>,
    /// Dimensions of the IoU matrix `(prev tubes, curr tubes)`.
    pub matrix_dims: (usize, usize),
}

fn overlap_score(a: &Tube, b: &Tube, frames: std::ops::Range<usize>) -> Result<f64> {
    let mut total = 0.0;
    for f in frames {
        if let (Some(da), Some(db)) = (a.detection_at(f), b.detection_at(f)) {
            total += mask_iou(&da.mask, &db.mask)?;
        }
    }
    Ok(total)
}

/// Matches `curr` tubes to `prev` tubes by the sum of per-frame mask IoU over
/// the overlapping frames. Tubes of different classes never match. Pairs
/// with summed IoU not above `alpha_stitch` are discarded.
///
/// `prev_ids` maps each `prev` tube to its global id; tubes missing from it
/// are ignored.
pub fn stitch_clips(
    prev: &Clip,
    prev_ids: &BTreeMap<u32, u64>,
    curr: &Clip,
    alpha_stitch: f64,
) -> Result<StitchResult> {
    let start = prev.first_frame.max(curr.first_frame);
    let end = (prev.first_frame + prev.length).min(curr.first_frame + curr.length);
    if start >= end {
        return Err(Error::NoOverlap);
    }
    let prev_tubes: Vec<&Tube> = prev
        .tubes
        .iter()
        .filter(|t| prev_ids.contains_key(&t.clip_local_id))
        .collect();
    let mut curr_tubes: Vec<&Tube> = curr.tubes.iter().collect();
    curr_tubes.sort_by_key(|t| t.clip_local_id);

    let matrix = SimilarityMatrix::try_from_fn(
        (0..prev_tubes.len()).collect(),
        (0..curr_tubes.len()).collect(),
        |&i, &j| {
            let (a, b) = (prev_tubes[i], curr_tubes[j]);
            if a.class_id != b.class_id {
                return Ok(FORBIDDEN);
            }
            overlap_score(a, b, start..end)
        },
    )?;
    let assignment = threshold_filter(hungarian_max(&matrix)?, alpha_stitch);

    let mut matched = BTreeMap::new();
    for p in &assignment.pairs {
        matched.insert(
            curr_tubes[p.col].clip_local_id,
            prev_ids[&prev_tubes[p.row].clip_local_id],
        );
    }
    let mut unmatched: Vec<u32> = assignment
        .unmatched_cols
        .iter()
        .map(|&j| curr_tubes[j].clip_local_id)
        .collect();
    unmatched.sort_unstable();
    Ok(StitchResult {
        matched,
        unmatched,
        matrix_dims: (matrix.rows(), matrix.cols()),
    })
}
