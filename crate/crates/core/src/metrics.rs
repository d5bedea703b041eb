//! Association quality against ground truth: identity switches and
//! identity-F1 (IDF1), used as the association-quality proxy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian_max, SimilarityMatrix, FORBIDDEN};
use crate::domain::{mask_iou, LabeledMask};
use crate::error::{Error, Result};
use crate::pipeline::{matching_space_stats, TrackOutput};
use crate::simulator::GroundTruth;

pub const DEFAULT_IOU_GATE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub gt_track_id: u64,
    /// Frames in which the ground-truth track is visible.
    pub frames: usize,
    /// Predicted id assigned to this track by the global identity mapping.
    pub mapped_id: Option<u64>,
    /// Frames where the mapped predicted id covers this track.
    pub id_true_positives: usize,
    pub id_switches: usize,
    /// `2 * IDTP / (frames + frames matched to any predicted id)`.
    pub idf1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingSpace {
    pub avg: f64,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub id_switches: usize,
    pub aq_proxy: f64,
    pub per_track: Vec<TrackReport>,
    pub matching_space: MatchingSpace,
}

fn frame_matches(
    gt: &[LabeledMask],
    pred: &[LabeledMask],
    gate: f64,
) -> Result<Vec<(usize, usize)>> {
    let matrix = SimilarityMatrix::try_from_fn(
        (0..gt.len()).collect(),
        (0..pred.len()).collect(),
        |&g, &p| {
            let iou = mask_iou(&gt[g].mask, &pred[p].mask)?;
            Ok::<_, Error>(if iou >= gate { iou } else { FORBIDDEN })
        },
    )?;
    Ok(hungarian_max(&matrix)?
        .pairs
        .into_iter()
        .map(|p| (p.row, p.col))
        .collect())
}

/// Scores `output` against `gt`. Per frame, predictions are matched to
/// ground truth by maximum IoU at or above `iou_gate`; a switch is counted
/// whenever a ground-truth track is matched to a different predicted id than
/// at its previous match. IDF1 uses the identity mapping that maximizes
/// co-occurrence counts (pairs with IoU at or above the gate).
pub fn evaluate(output: &TrackOutput, gt: &GroundTruth, iou_gate: f64) -> Result<EvalReport> {
    if !(iou_gate > 0.0 && iou_gate <= 1.0) {
        return Err(Error::Config(format!("iou gate {iou_gate} outside (0, 1]")));
    }
    if output.num_frames() != gt.num_frames() {
        return Err(Error::RangeMismatch {
            tracks: output.num_frames(),
            gt: gt.num_frames(),
        });
    }

    let mut gt_len: BTreeMap<u64, usize> = BTreeMap::new();
    let mut pred_len: BTreeMap<u64, usize> = BTreeMap::new();
    let mut matched_len: BTreeMap<u64, usize> = BTreeMap::new();
    let mut overlap: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    let mut last_pred: BTreeMap<u64, u64> = BTreeMap::new();
    let mut switches: BTreeMap<u64, usize> = BTreeMap::new();

    for (gt_frame, pred_frame) in gt.frames.iter().zip(&output.frames) {
        for g in gt_frame {
            *gt_len.entry(g.id).or_default() += 1;
        }
        for p in pred_frame {
            *pred_len.entry(p.id).or_default() += 1;
        }
        for g in gt_frame {
            for p in pred_frame {
                if mask_iou(&g.mask, &p.mask)? >= iou_gate {
                    *overlap.entry((g.id, p.id)).or_default() += 1;
                }
            }
        }
        for (gi, pi) in frame_matches(gt_frame, pred_frame, iou_gate)? {
            let (g, p) = (gt_frame[gi].id, pred_frame[pi].id);
            *matched_len.entry(g).or_default() += 1;
            if let Some(prev) = last_pred.insert(g, p) {
                if prev != p {
                    *switches.entry(g).or_default() += 1;
                }
            }
        }
    }

    let gt_ids: Vec<u64> = gt_len.keys().copied().collect();
    let pred_ids: Vec<u64> = pred_len.keys().copied().collect();
    let identity = SimilarityMatrix::from_fn(gt_ids, pred_ids, |g, p| {
        overlap.get(&(*g, *p)).copied().unwrap_or(0) as f64
    });
    let mapping: BTreeMap<u64, (u64, usize)> = hungarian_max(&identity)?
        .pairs
        .into_iter()
        .filter(|p| p.similarity > 0.0)
        .map(|p| (p.row, (p.col, p.similarity as usize)))
        .collect();

    let idtp: usize = mapping.values().map(|(_, c)| c).sum();
    let total_gt: usize = gt_len.values().sum();
    let total_pred: usize = pred_len.values().sum();
    let aq_proxy = if total_gt + total_pred == 0 {
        1.0
    } else {
        2.0 * idtp as f64 / (total_gt + total_pred) as f64
    };

    let per_track = gt_len
        .iter()
        .map(|(&id, &frames)| {
            let (mapped_id, tp) = match mapping.get(&id) {
                Some(&(p, c)) => (Some(p), c),
                None => (None, 0),
            };
            let matched = matched_len.get(&id).copied().unwrap_or(0);
            TrackReport {
                gt_track_id: id,
                frames,
                mapped_id,
                id_true_positives: tp,
                id_switches: switches.get(&id).copied().unwrap_or(0),
                idf1: 2.0 * tp as f64 / (frames + matched) as f64,
            }
        })
        .collect();

    let (avg, max) = matching_space_stats(output);
    Ok(EvalReport {
        id_switches: switches.values().sum(),
        aq_proxy,
        per_track,
        matching_space: MatchingSpace { avg, max },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BinaryMask;
    use proptest::prelude::*;

    fn lm(id: u64, x: i64) -> LabeledMask {
        LabeledMask {
            id,
            class_id: 0,
            mask: BinaryMask::from_rect(64, 16, x, 0, x + 4, 4),
        }
    }

    fn gt(frames: Vec<Vec<LabeledMask>>) -> GroundTruth {
        GroundTruth { frames }
    }

    fn out(frames: Vec<Vec<LabeledMask>>) -> TrackOutput {
        TrackOutput {
            frames,
            ..Default::default()
        }
    }

    /// Two tracks over `n` frames: track 1 at x=0, track 2 at x=20.
    fn two_tracks(n: usize) -> Vec<Vec<LabeledMask>> {
        (0..n).map(|_| vec![lm(1, 0), lm(2, 20)]).collect()
    }

    #[test]
    fn perfect_output() {
        let g = gt(two_tracks(6));
        let relabeled: Vec<_> = (0..6).map(|_| vec![lm(50, 0), lm(7, 20)]).collect();
        let r = evaluate(&out(relabeled), &g, DEFAULT_IOU_GATE).unwrap();
        assert_eq!(r.id_switches, 0);
        assert_eq!(r.aq_proxy, 1.0);
        assert!(r.per_track.iter().all(|t| t.idf1 == 1.0));
    }

    /// Brute-force IDF1 over every injective gt -> pred mapping.
    fn brute_idf1(g: &[Vec<LabeledMask>], p: &[Vec<LabeledMask>]) -> f64 {
        let gt_ids: Vec<u64> = {
            let mut v: Vec<u64> = g.iter().flatten().map(|m| m.id).collect();
            v.sort();
            v.dedup();
            v
        };
        let pred_ids: Vec<u64> = {
            let mut v: Vec<u64> = p.iter().flatten().map(|m| m.id).collect();
            v.sort();
            v.dedup();
            v
        };
        let co = |a: u64, b: u64| {
            g.iter()
                .zip(p)
                .filter(|(gf, pf)| {
                    gf.iter().any(|x| {
                        x.id == a
                            && pf
                                .iter()
                                .any(|y| y.id == b && mask_iou(&x.mask, &y.mask).unwrap() >= 0.5)
                    })
                })
                .count()
        };
        fn best(
            i: usize,
            gt: &[u64],
            pred: &[u64],
            used: &mut Vec<bool>,
            co: &dyn Fn(u64, u64) -> usize,
        ) -> usize {
            if i == gt.len() {
                return 0;
            }
            let mut b = best(i + 1, gt, pred, used, co);
            for j in 0..pred.len() {
                if !used[j] {
                    used[j] = true;
                    b = b.max(co(gt[i], pred[j]) + best(i + 1, gt, pred, used, co));
                    used[j] = false;
                }
            }
            b
        }
        let idtp = best(0, &gt_ids, &pred_ids, &mut vec![false; pred_ids.len()], &co);
        let total = g.iter().map(Vec::len).sum::<usize>() + p.iter().map(Vec::len).sum::<usize>();
        2.0 * idtp as f64 / total as f64
    }

    #[test]
    fn split_track_halves() {
        let g = two_tracks(8);
        let pred: Vec<_> = (0..8)
            .map(|f| vec![lm(1, 0), lm(if f < 4 { 2 } else { 3 }, 20)])
            .collect();
        let r = evaluate(&out(pred.clone()), &gt(g.clone()), DEFAULT_IOU_GATE).unwrap();
        assert_eq!(r.id_switches, 1);
        let split = r.per_track.iter().find(|t| t.gt_track_id == 2).unwrap();
        assert_eq!(split.idf1, 0.5);
        assert_eq!(split.id_switches, 1);
        let expected = brute_idf1(&g, &pred);
        assert_eq!(expected, 0.75);
        assert_eq!(r.aq_proxy, expected);
    }

    #[test]
    fn fresh_id_every_frame() {
        let f = 7;
        let g: Vec<_> = (0..f).map(|_| vec![lm(1, 0)]).collect();
        let pred: Vec<_> = (0..f).map(|i| vec![lm(100 + i as u64, 0)]).collect();
        let r = evaluate(&out(pred), &gt(g), DEFAULT_IOU_GATE).unwrap();
        assert_eq!(r.id_switches, f - 1);
    }

    #[test]
    fn range_mismatch() {
        let r = evaluate(&out(two_tracks(3)), &gt(two_tracks(4)), 0.5);
        assert!(matches!(r, Err(Error::RangeMismatch { tracks: 3, gt: 4 })));
    }

    #[test]
    fn gaps_do_not_reset_identity() {
        // Occluded in the middle, same id on return: no switch.
        let g: Vec<_> = vec![vec![lm(1, 0)], vec![], vec![lm(1, 4)]];
        let p: Vec<_> = vec![vec![lm(9, 0)], vec![], vec![lm(9, 4)]];
        let r = evaluate(&out(p), &gt(g), 0.5).unwrap();
        assert_eq!((r.id_switches, r.aq_proxy), (0, 1.0));
    }

    fn labels() -> impl Strategy<Value = Vec<Vec<u64>>> {
        proptest::collection::vec(proptest::collection::vec(1u64..5, 3), 1..10)
    }

    fn build(labels: &[Vec<u64>]) -> Vec<Vec<LabeledMask>> {
        labels
            .iter()
            .map(|f| {
                f.iter()
                    .enumerate()
                    .map(|(k, &id)| lm(id * 10 + k as u64, 20 * k as i64))
                    .collect()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn label_permutation_invariance(l in labels(), shift in 1u64..1000) {
            let g = gt(two_tracks(l.len()).into_iter().map(|mut f| { f.push(lm(3, 40)); f }).collect());
            let pred = build(&l);
            let renamed: Vec<Vec<LabeledMask>> = pred
                .iter()
                .map(|f| f.iter().map(|m| LabeledMask { id: m.id * 7 + shift, ..m.clone() }).collect())
                .collect();
            let a = evaluate(&out(pred.clone()), &g, 0.5).unwrap();
            let b = evaluate(&out(renamed), &g, 0.5).unwrap();
            prop_assert_eq!(a.id_switches, b.id_switches);
            prop_assert_eq!(a.aq_proxy, b.aq_proxy);
            prop_assert_eq!(a.aq_proxy, brute_idf1(&g.frames, &pred));
            prop_assert!((0.0..=1.0).contains(&a.aq_proxy));
        }

        #[test]
        fn splits_never_raise_aq(n in 2usize..12, mut cuts in proptest::collection::vec(1usize..12, 0..4)) {
            cuts.sort_unstable();
            cuts.dedup();
            let g = gt(two_tracks(n));
            let perfect = out(two_tracks(n));
            let mut prev = evaluate(&perfect, &g, 0.5).unwrap().aq_proxy;
            let mut frames = two_tracks(n);
            for (k, c) in cuts.iter().enumerate() {
                if *c >= n {
                    continue;
                }
                for f in frames.iter_mut().skip(*c) {
                    f[1].id = 1000 + k as u64;
                }
                let aq = evaluate(&out(frames.clone()), &g, 0.5).unwrap().aq_proxy;
                prop_assert!(aq <= prev);
                prev = aq;
            }
        }
    }
}
