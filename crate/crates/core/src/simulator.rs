//! Deterministic synthetic scenes: rectangles moving through a frame, with
//! scripted occlusions and noisy appearance embeddings, rendered to ground
//! truth and to per-clip detection tubes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{BinaryMask, Clip, ClipLayout, Detection, LabeledMask, Tube};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    /// Pixels per frame.
    ConstantVelocity { velocity: [f64; 2] },
    /// Gaussian step per frame with standard deviation `sigma` pixels.
    RandomWalk { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class_id: u32,
    /// First frame the object exists.
    pub spawn: usize,
    /// One past the last frame the object exists.
    pub despawn: usize,
    /// Top-left corner at `spawn`, in pixels.
    pub start: [f64; 2],
    /// Rectangle width and height in pixels.
    pub size: [f64; 2],
    pub motion: Motion,
    pub appearance: Vec<f64>,
    /// Per-component Gaussian noise added to `appearance` every frame.
    pub appearance_noise: f64,
}

/// Frames `start..=end` during which `object` produces no detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    pub object: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub width: u32,
    pub height: u32,
    pub num_frames: usize,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub occlusions: Vec<Occlusion>,
    pub rng_seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Spec(msg));
        if self.width == 0 || self.height == 0 || self.num_frames == 0 {
            return err("frame size and frame count must be positive".into());
        }
        let dim = self.objects.first().map(|o| o.appearance.len());
        for (i, o) in self.objects.iter().enumerate() {
            if o.spawn >= o.despawn || o.despawn > self.num_frames {
                return err(format!(
                    "object {i}: need spawn < despawn <= {}, got {}..{}",
                    self.num_frames, o.spawn, o.despawn
                ));
            }
            if !(o.size[0] >= 1.0 && o.size[1] >= 1.0) {
                return err(format!("object {i}: size must be at least one pixel"));
            }
            if o.start.iter().any(|v| !v.is_finite()) {
                return err(format!("object {i}: non-finite start"));
            }
            match o.motion {
                Motion::ConstantVelocity { velocity }
                    if velocity.iter().any(|v| !v.is_finite()) =>
                {
                    return err(format!("object {i}: non-finite velocity"));
                }
                Motion::RandomWalk { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                    return err(format!("object {i}: random walk sigma must be >= 0"));
                }
                _ => {}
            }
            if o.appearance.is_empty() || Some(o.appearance.len()) != dim {
                return err(format!(
                    "object {i}: appearance dimension differs from object 0"
                ));
            }
            if o.appearance.iter().all(|&v| v == 0.0) || o.appearance.iter().any(|v| !v.is_finite())
            {
                return err(format!("object {i}: appearance must be finite and nonzero"));
            }
            if !(o.appearance_noise >= 0.0 && o.appearance_noise.is_finite()) {
                return err(format!("object {i}: appearance noise must be >= 0"));
            }
        }
        for occ in &self.occlusions {
            let Some(o) = self.objects.get(occ.object) else {
                return err(format!("occlusion names unknown object {}", occ.object));
            };
            if occ.start > occ.end || occ.start < o.spawn || occ.end >= o.despawn {
                return err(format!(
                    "occlusion {}..={} of object {} outside its lifetime {}..{}",
                    occ.start, occ.end, occ.object, o.spawn, o.despawn
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    /// Per frame, visible objects with `id = object index + 1`.
    pub frames: Vec<Vec<LabeledMask>>,
}

impl GroundTruth {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

/// A rendered scenario before it is cut into clips.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub ground_truth: GroundTruth,
    /// Per frame, `(object index, detection)` in object order.
    pub detections: Vec<Vec<(usize, Detection)>>,
}

impl Rendered {
    pub fn num_frames(&self) -> usize {
        self.detections.len()
    }

    /// Cuts the detection stream into clips. Tube ids are local to each clip
    /// and assigned in object order.
    pub fn clips(&self, layout: ClipLayout) -> Vec<Clip> {
        layout
            .clip_ranges(self.num_frames())
            .into_iter()
            .map(|range| {
                let mut by_object: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
                for f in range.clone() {
                    for (obj, det) in &self.detections[f] {
                        by_object.entry(*obj).or_default().push(det.clone());
                    }
                }
                let tubes = by_object
                    .into_values()
                    .enumerate()
                    .map(|(k, detections)| Tube {
                        clip_local_id: k as u32,
                        class_id: detections[0].class_id,
                        detections,
                    })
                    .collect();
                Clip {
                    first_frame: range.start,
                    length: range.len(),
                    tubes,
                }
            })
            .collect()
    }
}

/// Top-left corner of each object per frame of its lifetime.
pub fn trajectory(spec: &ScenarioSpec, object: usize) -> Vec<[f64; 2]> {
    let o = &spec.objects[object];
    let mut rng = object_rng(spec.rng_seed, object, Stream::Motion);
    let mut pos = o.start;
    let mut out = Vec::with_capacity(o.despawn - o.spawn);
    for step in 0..(o.despawn - o.spawn) {
        match o.motion {
            Motion::ConstantVelocity { velocity } => {
                let t = step as f64;
                out.push([o.start[0] + velocity[0] * t, o.start[1] + velocity[1] * t]);
            }
            Motion::RandomWalk { sigma } => {
                if step > 0 && sigma > 0.0 {
                    let n = Normal::new(0.0, sigma).expect("validated sigma");
                    pos[0] += n.sample(&mut rng);
                    pos[1] += n.sample(&mut rng);
                }
                out.push(pos);
            }
        }
    }
    out
}

enum Stream {
    Motion,
    Appearance,
}

fn object_rng(seed: u64, object: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag = match stream {
        Stream::Motion => 0,
        Stream::Appearance => 1,
    };
    rng.set_stream(2 * object as u64 + tag);
    rng
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Renders the scenario. Later-spawned objects are drawn on top (ties by
/// object index); objects with no visible pixel in a frame are absent from
/// both the ground truth and the detections of that frame.
pub fn render(spec: &ScenarioSpec) -> Result<Rendered> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let n = spec.objects.len();
    let paths: Vec<Vec<[f64; 2]>> = (0..n).map(|i| trajectory(spec, i)).collect();
    let mut depth: Vec<usize> = (0..n).collect();
    depth.sort_by_key(|&i| (spec.objects[i].spawn, i));
    let occluded = |i: usize, f: usize| {
        spec.occlusions
            .iter()
            .any(|o| o.object == i && (o.start..=o.end).contains(&f))
    };

    let mut gt_frames = Vec::with_capacity(spec.num_frames);
    let mut det_frames = Vec::with_capacity(spec.num_frames);
    for f in 0..spec.num_frames {
        // Rectangles of visible objects, back to front.
        let mut layers: Vec<(usize, BinaryMask)> = Vec::new();
        for &i in &depth {
            let o = &spec.objects[i];
            if !(o.spawn..o.despawn).contains(&f) {
                continue;
            }
            if occluded(i, f) {
                continue;
            }
            let [x, y] = paths[i][f - o.spawn];
            let rect = BinaryMask::from_rect(
                w,
                h,
                x.round() as i64,
                y.round() as i64,
                (x + o.size[0]).round() as i64,
                (y + o.size[1]).round() as i64,
            );
            layers.push((i, rect));
        }
        let mut gt = Vec::new();
        let mut dets = Vec::new();
        for (k, (i, rect)) in layers.iter().enumerate() {
            let mut visible = rect.clone();
            for (_, above) in &layers[k + 1..] {
                visible = visible.subtract(above)?;
            }
            if visible.is_empty() {
                continue;
            }
            let o = &spec.objects[*i];
            gt.push(LabeledMask {
                id: *i as u64 + 1,
                class_id: o.class_id,
                mask: visible.clone(),
            });
            dets.push((
                *i,
                Detection {
                    frame_index: f,
                    class_id: o.class_id,
                    score: visible.area() as f64 / rect.area() as f64,
                    mask: visible,
                    embedding: Vec::new(),
                },
            ));
        }
        gt.sort_by_key(|m| m.id);
        dets.sort_by_key(|(i, _)| *i);
        gt_frames.push(gt);
        det_frames.push(dets);
    }

    // Noise is drawn for every lifetime frame, visible or not, so each
    // object's stream does not depend on its occlusions.
    let mut embed_rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| object_rng(spec.rng_seed, i, Stream::Appearance))
        .collect();
    let mut per_object: Vec<BTreeMap<usize, Vec<f64>>> = vec![BTreeMap::new(); n];
    for (i, o) in spec.objects.iter().enumerate() {
        for f in o.spawn..o.despawn {
            per_object[i].insert(f, sample_embedding(o, &mut embed_rngs[i]));
        }
    }
    for dets in &mut det_frames {
        for (i, d) in dets.iter_mut() {
            d.embedding = per_object[*i]
                .remove(&d.frame_index)
                .expect("frame inside lifetime");
        }
    }

    Ok(Rendered {
        ground_truth: GroundTruth { frames: gt_frames },
        detections: det_frames,
    })
}

fn sample_embedding(o: &ObjectSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, o.appearance_noise.max(0.0)).expect("validated noise");
    normalized(
        o.appearance
            .iter()
            .map(|&b| {
                if o.appearance_noise > 0.0 {
                    b + noise.sample(rng)
                } else {
                    b
                }
            })
            .collect(),
    )
}

/// Renders `spec` and cuts it into clips with `layout`.
pub fn generate(spec: &ScenarioSpec, layout: ClipLayout) -> Result<(GroundTruth, Vec<Clip>)> {
    let rendered = render(spec)?;
    let clips = rendered.clips(layout);
    Ok((rendered.ground_truth, clips))
}

/// `count` orthonormal appearance vectors of dimension `dim` drawn from `seed`.
pub fn distinct_appearances(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(count <= dim, "need dim >= count for orthogonal appearances");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

pub const SCENARIO_NAMES: [&str; 6] = [
    "static_pair",
    "linear_occlusion_short",
    "linear_occlusion_long",
    "identical_crowd",
    "random_motion_occlusion",
    "churn_spawn_despawn",
];

/// Scenarios whose association difficulty comes mainly from occlusion gaps.
pub const OCCLUSION_SCENARIOS: [&str; 4] = [
    "linear_occlusion_short",
    "linear_occlusion_long",
    "identical_crowd",
    "random_motion_occlusion",
];

const FRAME_W: u32 = 160;
const FRAME_H: u32 = 120;
const EMBED_DIM: usize = 32;

fn walker(
    class_id: u32,
    span: (usize, usize),
    start: [f64; 2],
    size: [f64; 2],
    motion: Motion,
    appearance: &[f64],
    noise: f64,
) -> ObjectSpec {
    ObjectSpec {
        class_id,
        spawn: span.0,
        despawn: span.1,
        start,
        size,
        motion,
        appearance: appearance.to_vec(),
        appearance_noise: noise,
    }
}

fn cv(vx: f64, vy: f64) -> Motion {
    Motion::ConstantVelocity { velocity: [vx, vy] }
}

/// Looks up one scenario of the standard suite by name.
pub fn scenario(name: &str) -> Option<ScenarioSpec> {
    standard_suite()
        .into_iter()
        .find(|(n, _)| n == name)
        .map(|(_, s)| s)
}

/// The fixed benchmark suite.
pub fn standard_suite() -> Vec<(String, ScenarioSpec)> {
    let looks = distinct_appearances(8, EMBED_DIM, 7);
    let frames = 48;

    let static_pair = ScenarioSpec {
        width: FRAME_W,
        height: FRAME_H,
        num_frames: 24,
        objects: vec![
            walker(
                0,
                (0, 24),
                [20.0, 30.0],
                [24.0, 40.0],
                cv(0.0, 0.0),
                &looks[0],
                0.02,
            ),
            walker(
                1,
                (0, 24),
                [100.0, 50.0],
                [30.0, 30.0],
                cv(0.0, 0.0),
                &looks[1],
                0.02,
            ),
        ],
        occlusions: vec![],
        rng_seed: 11,
    };

    let linear = |gap: (usize, usize), seed: u64| ScenarioSpec {
        width: FRAME_W,
        height: FRAME_H,
        num_frames: frames,
        objects: vec![
            walker(
                0,
                (0, frames),
                [4.0, 10.0],
                [16.0, 20.0],
                cv(2.5, 0.0),
                &looks[0],
                0.05,
            ),
            walker(
                0,
                (0, frames),
                [130.0, 45.0],
                [16.0, 20.0],
                cv(-2.0, 0.5),
                &looks[1],
                0.05,
            ),
            walker(
                1,
                (0, frames),
                [60.0, 85.0],
                [30.0, 16.0],
                cv(1.0, -0.5),
                &looks[2],
                0.05,
            ),
        ],
        occlusions: vec![Occlusion {
            object: 0,
            start: gap.0,
            end: gap.1,
        }],
        rng_seed: seed,
    };
    let linear_occlusion_short = linear((18, 20), 21);
    let linear_occlusion_long = linear((18, 23), 22);

    // Five walkers sharing one look in parallel lanes. Walker 0 is hidden
    // for five frames; on the frame it reappears a newcomer with the same
    // look enters its lane a short way behind it.
    let crowd_look = &looks[3];
    let mut crowd: Vec<ObjectSpec> = (0..5)
        .map(|k| {
            walker(
                0,
                (0, frames),
                [6.0 + 6.0 * k as f64, 4.0 + 22.0 * k as f64],
                [12.0, 16.0],
                cv(2.0, 0.0),
                crowd_look,
                0.12,
            )
        })
        .collect();
    crowd.push(walker(
        0,
        (21, frames),
        [22.0, 4.0],
        [12.0, 16.0],
        cv(2.0, 0.0),
        crowd_look,
        0.12,
    ));
    let identical_crowd = ScenarioSpec {
        width: FRAME_W,
        height: FRAME_H,
        num_frames: frames,
        objects: crowd,
        occlusions: vec![Occlusion {
            object: 0,
            start: 16,
            end: 20,
        }],
        rng_seed: 33,
    };

    let random_motion_occlusion = ScenarioSpec {
        width: FRAME_W,
        height: FRAME_H,
        num_frames: frames,
        objects: vec![
            walker(
                0,
                (0, frames),
                [30.0, 20.0],
                [18.0, 22.0],
                Motion::RandomWalk { sigma: 2.0 },
                &looks[4],
                0.2,
            ),
            walker(
                0,
                (0, frames),
                [110.0, 70.0],
                [18.0, 22.0],
                Motion::RandomWalk { sigma: 2.0 },
                &looks[5],
                0.2,
            ),
            walker(
                1,
                (0, frames),
                [40.0, 80.0],
                [26.0, 14.0],
                cv(1.5, 0.0),
                &looks[6],
                0.2,
            ),
        ],
        occlusions: vec![
            Occlusion {
                object: 0,
                start: 14,
                end: 17,
            },
            Occlusion {
                object: 1,
                start: 30,
                end: 33,
            },
        ],
        rng_seed: 44,
    };

    let churn_spawn_despawn = ScenarioSpec {
        width: FRAME_W,
        height: FRAME_H,
        num_frames: frames,
        objects: vec![
            walker(
                0,
                (0, 20),
                [10.0, 10.0],
                [16.0, 16.0],
                cv(1.5, 0.5),
                &looks[0],
                0.15,
            ),
            walker(
                0,
                (5, 30),
                [120.0, 20.0],
                [16.0, 16.0],
                cv(-1.5, 0.5),
                &looks[1],
                0.15,
            ),
            walker(
                1,
                (10, 40),
                [20.0, 80.0],
                [24.0, 14.0],
                cv(1.0, 0.0),
                &looks[2],
                0.15,
            ),
            walker(
                0,
                (22, 48),
                [60.0, 40.0],
                [16.0, 16.0],
                cv(0.5, 1.0),
                &looks[7],
                0.15,
            ),
            walker(
                1,
                (30, 48),
                [130.0, 90.0],
                [20.0, 14.0],
                cv(-2.0, 0.0),
                &looks[6],
                0.15,
            ),
        ],
        occlusions: vec![],
        rng_seed: 55,
    };

    vec![
        ("static_pair".into(), static_pair),
        ("linear_occlusion_short".into(), linear_occlusion_short),
        ("linear_occlusion_long".into(), linear_occlusion_long),
        ("identical_crowd".into(), identical_crowd),
        ("random_motion_occlusion".into(), random_motion_occlusion),
        ("churn_spawn_despawn".into(), churn_spawn_despawn),
    ]
}
