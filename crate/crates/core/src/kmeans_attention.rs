//! Forward k-means cross-attention over clip features.
//!
//! A clip of `t` frames is treated as one tall image of height `t * h`: the
//! pixel features are flattened to `(t * h * w) x d`, every pixel column of
//! the query-key logits is hard-assigned to its best cluster center, and each
//! center accumulates the value rows of the pixels it won. With `t = 1` this
//! is exactly the single-image update.

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Pixel features of shape `t x h x w x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures {
    values: Array4<f64>,
}

impl ClipFeatures {
    pub fn new(values: Array4<f64>) -> Result<Self> {
        if values.shape().contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "clip features need nonzero dims, got {:?}",
                values.shape()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("clip features"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array4<f64> {
        &self.values
    }

    /// `(t, h, w, d)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.values.dim()
    }

    /// Pixel features as a `(t * h * w) x d` matrix in row-major pixel order.
    fn pixel_matrix(&self) -> ArrayView2<'_, f64> {
        let (t, h, w, d) = self.dims();
        self.values
            .view()
            .into_shape_with_order((t * h * w, d))
            .expect("standard layout")
    }
}

/// Reshapes `t x h x w x d` to `1 x (t*h) x w x d`; frame `f`, row `r` lands on
/// row `f * h + r`.
pub fn flatten_clip(features: &ClipFeatures) -> ClipFeatures {
    let (t, h, w, d) = features.dims();
    let values = features
        .values
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((1, t * h, w, d))
        .expect("element count is preserved");
    ClipFeatures { values }
}

/// Cluster centers (object queries), `n x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCenters {
    values: Array2<f64>,
}

impl ClusterCenters {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::ShapeMismatch(
                "cluster centers need n, d >= 1".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("cluster centers"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }
}

/// Linear maps for center queries and pixel keys/values, each `d x d`
/// and applied on the right (`X * W`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
}

impl ProjectionSet {
    pub fn identity(d: usize) -> Self {
        Self {
            query: Array2::eye(d),
            key: Array2::eye(d),
            value: Array2::eye(d),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        for (name, m) in [
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
        ] {
            if m.dim() != (d, d) {
                return Err(Error::ShapeMismatch(format!(
                    "{name} projection is {:?}, expected ({d}, {d})",
                    m.dim()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput("projection"));
            }
        }
        Ok(())
    }
}

/// Column-wise hard argmax of `n x p` logits as a one-hot `n x p` matrix.
/// Equal logits go to the lowest cluster index.
pub fn hard_assignment(logits: &Array2<f64>) -> Array2<f64> {
    let mut a = Array2::zeros(logits.raw_dim());
    for (p, winner) in cluster_argmax(logits).into_iter().enumerate() {
        a[[winner, p]] = 1.0;
    }
    a
}

fn cluster_argmax(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .axis_iter(Axis(1))
        .map(|col| {
            let mut best = 0;
            for (k, &v) in col.iter().enumerate().skip(1) {
                if v > col[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

struct Step {
    centers: ClusterCenters,
    winners: Vec<usize>,
}

fn attention_step(
    centers: &ClusterCenters,
    features: &ClipFeatures,
    proj: &ProjectionSet,
) -> Result<Step> {
    let d = features.dims().3;
    if centers.d() != d {
        return Err(Error::ShapeMismatch(format!(
            "centers have {} channels, features {}",
            centers.d(),
            d
        )));
    }
    proj.validate(d)?;
    let pixels = features.pixel_matrix();
    let q = centers.values.dot(&proj.query);
    let k = pixels.dot(&proj.key);
    let v = pixels.dot(&proj.value);
    let logits = q.dot(&k.t());
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput("attention logits"));
    }
    let winners = cluster_argmax(&logits);
    let mut updated = centers.values.clone();
    for (p, &c) in winners.iter().enumerate() {
        let mut row = updated.row_mut(c);
        row += &v.row(p);
    }
    Ok(Step {
        centers: ClusterCenters { values: updated },
        winners,
    })
}

/// One k-means cross-attention update: `C + argmax_N(Q K^T) V`.
///
/// The aggregation is an unnormalized sum of the value rows each center wins.
pub fn kmeans_cross_attention(
    centers: &ClusterCenters,
    features: &ClipFeatures,
    proj: &ProjectionSet,
) -> Result<ClusterCenters> {
    Ok(attention_step(centers, features, proj)?.centers)
}

/// Applies the update `iters` times against fixed pixel features. Returns the
/// final centers and the last pixel-to-cluster assignment as `t x h x w`.
pub fn run_decoder_iterations(
    centers: &ClusterCenters,
    features: &ClipFeatures,
    proj: &ProjectionSet,
    iters: usize,
) -> Result<(ClusterCenters, Array3<usize>)> {
    if iters == 0 {
        return Err(Error::ShapeMismatch("iters must be >= 1".into()));
    }
    let (t, h, w, _) = features.dims();
    let mut current = centers.clone();
    let mut winners = Vec::new();
    for _ in 0..iters {
        let step = attention_step(&current, features, proj)?;
        current = step.centers;
        winners = step.winners;
    }
    let map = Array3::from_shape_vec((t, h, w), winners).expect("one winner per pixel");
    Ok((current, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(
        rng: &mut ChaCha8Rng,
        t: usize,
        h: usize,
        w: usize,
        d: usize,
    ) -> ClipFeatures {
        ClipFeatures::new(Array::from_shape_fn((t, h, w, d), |_| {
            rng.random_range(-1.0..1.0)
        }))
        .unwrap()
    }

    #[test]
    fn flatten_index_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_features(&mut rng, 3, 4, 5, 2);
        let flat = flatten_clip(&f);
        assert_eq!(flat.dims(), (1, 12, 5, 2));
        for fr in 0..3 {
            for r in 0..4 {
                for c in 0..5 {
                    for k in 0..2 {
                        assert_eq!(
                            flat.values()[[0, fr * 4 + r, c, k]],
                            f.values()[[fr, r, c, k]]
                        );
                    }
                }
            }
        }
        let tiny = ClipFeatures::new(array![[[[1.5]]], [[[-2.0]]]]).unwrap();
        assert_eq!(flatten_clip(&tiny).values(), &array![[[[1.5]], [[-2.0]]]]);
        let single = random_features(&mut rng, 1, 3, 3, 4);
        assert_eq!(flatten_clip(&single), single);
    }

    #[test]
    fn explicit_logits_example() {
        // Identity projections and one-hot pixels make the logits equal C.
        let centers = ClusterCenters::new(array![[2.0, 0.0, 1.0], [0.0, 3.0, 0.0]]).unwrap();
        let pixels = Array::from_shape_vec(
            (1, 1, 3, 3),
            Array2::<f64>::eye(3).into_raw_vec_and_offset().0,
        )
        .unwrap();
        let features = ClipFeatures::new(pixels).unwrap();
        let proj = ProjectionSet::identity(3);
        let logits = centers.values().dot(&features.pixel_matrix().t());
        assert_eq!(
            hard_assignment(&logits),
            array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
        );
        let out = kmeans_cross_attention(&centers, &features, &proj).unwrap();
        assert_eq!(out.values(), &array![[3.0, 0.0, 2.0], [0.0, 4.0, 0.0]]);
    }

    #[test]
    fn zero_values_keep_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_features(&mut rng, 2, 3, 3, 4);
        let centers = ClusterCenters::new(Array::from_shape_fn((3, 4), |_| {
            rng.random_range(-1.0..1.0)
        }))
        .unwrap();
        let proj = ProjectionSet {
            value: Array2::zeros((4, 4)),
            ..ProjectionSet::identity(4)
        };
        assert_eq!(
            kmeans_cross_attention(&centers, &f, &proj).unwrap(),
            centers
        );
    }

    #[test]
    fn single_cluster_takes_every_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_features(&mut rng, 2, 2, 3, 3);
        let centers = ClusterCenters::new(array![[0.3, -0.2, 0.9]]).unwrap();
        let out = kmeans_cross_attention(&centers, &f, &ProjectionSet::identity(3)).unwrap();
        let sum = f.pixel_matrix().sum_axis(Axis(0));
        let expected = &centers.values().row(0) + &sum;
        assert_eq!(out.values().row(0), expected);
    }

    #[test]
    fn ties_go_to_lowest_cluster() {
        let logits = array![[1.0, 0.0], [1.0, 0.0], [0.5, 0.0]];
        assert_eq!(
            hard_assignment(&logits),
            array![[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]]
        );
    }

    #[test]
    fn shape_and_value_errors() {
        let f = ClipFeatures::new(Array4::zeros((1, 2, 2, 3))).unwrap();
        let c = ClusterCenters::new(Array2::zeros((2, 4))).unwrap();
        assert!(matches!(
            kmeans_cross_attention(&c, &f, &ProjectionSet::identity(3)),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            ClipFeatures::new(Array4::from_elem((1, 1, 1, 1), f64::NAN)),
            Err(Error::NonFiniteInput(_))
        ));
        let c = ClusterCenters::new(Array2::zeros((2, 3))).unwrap();
        assert!(run_decoder_iterations(&c, &f, &ProjectionSet::identity(3), 0).is_err());
    }

    #[test]
    fn one_iteration_equals_single_call() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_features(&mut rng, 2, 3, 4, 5);
        let c = ClusterCenters::new(Array::from_shape_fn((4, 5), |_| {
            rng.random_range(-1.0..1.0)
        }))
        .unwrap();
        let proj = ProjectionSet {
            query: Array::from_shape_fn((5, 5), |_| rng.random_range(-1.0..1.0)),
            key: Array::from_shape_fn((5, 5), |_| rng.random_range(-1.0..1.0)),
            value: Array::from_shape_fn((5, 5), |_| rng.random_range(-1.0..1.0)),
        };
        let (centers, map) = run_decoder_iterations(&c, &f, &proj, 1).unwrap();
        assert_eq!(centers, kmeans_cross_attention(&c, &f, &proj).unwrap());
        assert_eq!(map.dim(), (2, 3, 4));
        assert!(map.iter().all(|&k| k < 4));
    }

    /// Lloyd's k-means with nearest-center assignment and mean update.
    fn lloyd(points: &[[f64; 2]], init: &[[f64; 2]], iters: usize) -> Vec<usize> {
        let mut centers = init.to_vec();
        let mut labels = vec![0; points.len()];
        for _ in 0..iters {
            for (p, l) in points.iter().zip(labels.iter_mut()) {
                let dist = |c: &[f64; 2]| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                *l = (0..centers.len())
                    .min_by(|&a, &b| dist(&centers[a]).total_cmp(&dist(&centers[b])))
                    .unwrap();
            }
            for (k, c) in centers.iter_mut().enumerate() {
                let members: Vec<_> = points
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == k)
                    .collect();
                if !members.is_empty() {
                    let m = members.len() as f64;
                    *c = [
                        members.iter().map(|(p, _)| p[0]).sum::<f64>() / m,
                        members.iter().map(|(p, _)| p[1]).sum::<f64>() / m,
                    ];
                }
            }
        }
        labels
    }

    #[test]
    fn separated_blobs_match_classical_kmeans() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (t, h, w) = (2, 4, 4);
        // Left half of every frame near (4, 1), right half near (1, 4).
        let mut points = Vec::new();
        let feats = Array::from_shape_fn((t, h, w, 2), |(_, _, c, k)| {
            let base = if c < w / 2 { [4.0, 1.0] } else { [1.0, 4.0] };
            base[k] + rng.random_range(-0.3..0.3)
        });
        for px in feats
            .view()
            .into_shape_with_order((t * h * w, 2))
            .unwrap()
            .rows()
        {
            points.push([px[0], px[1]]);
        }
        let init = [[1.0, 0.0], [0.0, 1.0]];
        let centers = ClusterCenters::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let features = ClipFeatures::new(feats).unwrap();
        let (_, map) =
            run_decoder_iterations(&centers, &features, &ProjectionSet::identity(2), 5).unwrap();
        let expected = lloyd(&points, &init, 5);
        assert_eq!(map.iter().copied().collect::<Vec<_>>(), expected);
        assert!(expected.contains(&0) && expected.contains(&1));
    }

    proptest! {
        #[test]
        fn argmax_invariant_to_scale_and_column_shift(
            raw in proptest::collection::vec(-10.0f64..10.0, 12),
            scale in 0.01f64..100.0,
            shifts in proptest::collection::vec(-50.0f64..50.0, 4),
        ) {
            let logits = Array2::from_shape_vec((3, 4), raw).unwrap();
            let a = hard_assignment(&logits);
            let scaled = logits.mapv(|x| x * scale);
            let mut shifted = logits.clone();
            for (mut col, s) in shifted.axis_iter_mut(Axis(1)).zip(&shifts) {
                col += *s;
            }
            for col in a.axis_iter(Axis(1)) {
                prop_assert_eq!(col.sum(), 1.0);
            }
            prop_assert_eq!(hard_assignment(&scaled), a.clone());
            prop_assert_eq!(hard_assignment(&shifted), a);
        }
    }
}
