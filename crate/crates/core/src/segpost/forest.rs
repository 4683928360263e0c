//! Small random forest over pixel neighbourhoods.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hierarchy::tensor::mirror;
use crate::hierarchy::TensorMap;
use crate::mask::{BinaryMask, ProbabilityMask};
use crate::par;

pub const TREE_COUNT: usize = 5;
pub const MAX_DEPTH: usize = 4;
pub const DEFAULT_TAU_RF: f32 = 0.37;
pub const DEFAULT_TAU_BU: f32 = 0.255;

/// `n` neighbours per direction spaced `d` pixels apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighSpec {
    pub n: usize,
    pub d: usize,
}

impl Default for NeighSpec {
    fn default() -> Self {
        Self { n: 1, d: 1 }
    }
}

impl NeighSpec {
    pub fn feature_count(self, channels: usize) -> usize {
        channels * (1 + 4 * self.n)
    }

    /// Pixel offsets in feature order: centre, then per ring i the top,
    /// bottom, left and right neighbours at distance `i * d`.
    pub fn offsets(self) -> Vec<(isize, isize)> {
        let mut offs = vec![(0, 0)];
        for i in 1..=self.n {
            let s = (i * self.d) as isize;
            offs.extend([(-s, 0), (s, 0), (0, -s), (0, s)]);
        }
        offs
    }
}

#[derive(Debug, Clone)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub neigh: NeighSpec,
    /// Bootstrap draws per tree are `min(samples, max_samples)`.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: TREE_COUNT,
            max_depth: MAX_DEPTH,
            neigh: NeighSpec::default(),
            max_samples: 200_000,
            seed: 0,
        }
    }
}

/// Row-major `u8` feature rows for every pixel of `image`, with mirrored
/// borders supplying out-of-range neighbours.
pub fn pixel_features(image: &TensorMap, neigh: NeighSpec) -> Vec<u8> {
    let (c, h, w) = image.shape();
    let offs = neigh.offsets();
    let mut out = Vec::with_capacity(h * w * offs.len() * c);
    let reflect = |i: usize, d: isize, n: usize| {
        let period = (2 * n as isize - 2).max(1);
        mirror((i as isize + d).rem_euclid(period) as usize, n)
    };
    for y in 0..h {
        for x in 0..w {
            for &(dy, dx) in &offs {
                let (yy, xx) = (reflect(y, dy, h), reflect(x, dx, w));
                for ch in 0..c {
                    out.push(image.get(ch, yy, xx).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f32),
    Split {
        feature: usize,
        threshold: u8,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, row: &[u8]) -> f32 {
        match self {
            Node::Leaf(p) => *p,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// Binary classification tree with Gini splits over `u8` thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    root: Node,
}

impl DecisionTree {
    pub fn predict(&self, row: &[u8]) -> f32 {
        self.root.predict(row)
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }
}

struct Trainer<'a> {
    features: &'a [u8],
    labels: &'a [u8],
    width: usize,
    max_depth: usize,
    try_features: usize,
}

fn gini(pos: u64, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

impl Trainer<'_> {
    fn grow(&self, idx: &mut [u32], depth: usize, rng: &mut ChaCha8Rng) -> Node {
        let total = idx.len() as u64;
        let pos: u64 = idx.iter().map(|&i| self.labels[i as usize] as u64).sum();
        let leaf = Node::Leaf(if total == 0 { 0.0 } else { pos as f32 / total as f32 });
        if depth >= self.max_depth || pos == 0 || pos == total {
            return leaf;
        }
        let parent = gini(pos, total);
        let mut best: Option<(f64, usize, u8)> = None;
        for f in sample(rng, self.width, self.try_features).into_iter() {
            let mut hist = [[0u64; 2]; 256];
            for &i in idx.iter() {
                let i = i as usize;
                hist[self.features[i * self.width + f] as usize][self.labels[i] as usize] += 1;
            }
            let (mut lt, mut lp) = (0u64, 0u64);
            for t in 0..255 {
                lt += hist[t][0] + hist[t][1];
                lp += hist[t][1];
                if lt == 0 || lt == total {
                    continue;
                }
                let rt = total - lt;
                let impurity =
                    (lt as f64 * gini(lp, lt) + rt as f64 * gini(pos - lp, rt)) / total as f64;
                if impurity < parent - 1e-12 && best.is_none_or(|(b, _, _)| impurity < b) {
                    best = Some((impurity, f, t as u8));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return leaf;
        };
        let mut split = 0;
        for k in 0..idx.len() {
            if self.features[idx[k] as usize * self.width + feature] <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.grow(l, depth + 1, rng)),
            right: Box::new(self.grow(r, depth + 1, rng)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionForest {
    trees: Vec<DecisionTree>,
    neigh: NeighSpec,
    channels: usize,
}

impl DecisionForest {
    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn neigh(&self) -> NeighSpec {
        self.neigh
    }

    pub fn predict_row(&self, row: &[u8]) -> f32 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f32>() / self.trees.len() as f32
    }

    /// Mean tree probability per pixel.
    pub fn predict(&self, image: &TensorMap) -> Result<ProbabilityMask> {
        if image.channels() != self.channels {
            return Err(Error::Config(format!(
                "forest expects {} channels, image has {}",
                self.channels,
                image.channels()
            )));
        }
        let width = self.neigh.feature_count(self.channels);
        let feats = pixel_features(image, self.neigh);
        let probs = feats.chunks_exact(width).map(|r| self.predict_row(r)).collect();
        ProbabilityMask::new(image.height(), image.width(), probs)
    }
}

/// Fits the forest on every pixel of every (image, mask) pair.
pub fn forest_fit(images: &[TensorMap], masks: &[BinaryMask], config: &ForestConfig) -> Result<DecisionForest> {
    if images.is_empty() || images.len() != masks.len() {
        return Err(Error::Empty("forest training set"));
    }
    let channels = images[0].channels();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (img, m) in images.iter().zip(masks) {
        if img.channels() != channels || (img.height(), img.width()) != m.shape() {
            return Err(Error::Config("training image and mask shapes disagree".into()));
        }
        features.extend(pixel_features(img, config.neigh));
        labels.extend_from_slice(m.data());
    }
    if labels.is_empty() {
        return Err(Error::Empty("forest training set"));
    }
    if config.trees == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    let width = config.neigh.feature_count(channels);
    let trainer = Trainer {
        features: &features,
        labels: &labels,
        width,
        max_depth: config.max_depth,
        try_features: ((width as f64).sqrt().round() as usize).clamp(1, width),
    };
    let draws = labels.len().min(config.max_samples.max(1));
    let trees = par::map_range(config.trees, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(t as u64);
        let mut idx: Vec<u32> = (0..draws).map(|_| rng.gen_range(0..labels.len()) as u32).collect();
        DecisionTree {
            root: trainer.grow(&mut idx, 0, &mut rng),
        }
    });
    Ok(DecisionForest {
        trees,
        neigh: config.neigh,
        channels,
    })
}

/// Unweighted mean of the two maps, then `vote > tau`.
pub fn soft_vote(rf: &ProbabilityMask, bu: &ProbabilityMask, tau: f32) -> Result<BinaryMask> {
    if rf.shape() != bu.shape() {
        return Err(Error::Config("probability maps differ in shape".into()));
    }
    let (h, w) = rf.shape();
    let vote = rf.data().iter().zip(bu.data()).map(|(a, b)| (a + b) / 2.0).collect();
    Ok(ProbabilityMask::new(h, w, vote)?.threshold(tau))
}

pub fn ensemble_predict(
    forest: &DecisionForest,
    image: &TensorMap,
    bu_probs: &ProbabilityMask,
    tau_rf: f32,
) -> Result<BinaryMask> {
    if (image.height(), image.width()) != bu_probs.shape() {
        return Err(Error::Config("image and probability map differ in shape".into()));
    }
    soft_vote(&forest.predict(image)?, bu_probs, tau_rf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_tone(seed: u64) -> (TensorMap, BinaryMask) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = BinaryMask::from_fn(24, 24, |y, _| (8..16).contains(&y));
        let mut img = TensorMap::zeros(3, 24, 24);
        for y in 0..24 {
            for x in 0..24 {
                let base = if mask.get(y, x) { [180.0, 170.0, 160.0] } else { [40.0, 90.0, 60.0] };
                for c in 0..3 {
                    img.set(c, y, x, base[c] + rng.gen_range(-10.0..10.0f32));
                }
            }
        }
        (img, mask)
    }

    #[test]
    fn offsets_follow_the_cross_pattern() {
        assert_eq!(NeighSpec { n: 0, d: 3 }.offsets(), vec![(0, 0)]);
        assert_eq!(NeighSpec { n: 0, d: 3 }.feature_count(3), 3);
        let o = NeighSpec { n: 2, d: 3 }.offsets();
        assert_eq!(o.len(), 9);
        assert_eq!(&o[5..], &[(-6, 0), (6, 0), (0, -6), (0, 6)]);
    }

    #[test]
    fn features_mirror_at_borders() {
        let img = TensorMap::from_u8(1, 1, 4, &[10, 20, 30, 40]).unwrap();
        let f = pixel_features(&img, NeighSpec { n: 1, d: 1 });
        // Pixel 0: centre, top, bottom (reflected rows of a 1-row image), left, right.
        assert_eq!(&f[..5], &[10, 10, 10, 20, 20]);
        assert_eq!(&f[15..], &[40, 40, 40, 30, 30]);
    }

    #[test]
    fn separable_colours_are_learnt_in_one_split() {
        let (img, mask) = two_tone(1);
        let cfg = ForestConfig {
            neigh: NeighSpec { n: 0, d: 1 },
            ..Default::default()
        };
        let forest = forest_fit(std::slice::from_ref(&img), std::slice::from_ref(&mask), &cfg).unwrap();
        assert_eq!(forest.trees().len(), TREE_COUNT);
        assert!(forest.trees().iter().all(|t| t.depth() == 1));
        assert_eq!(forest.predict(&img).unwrap().threshold(0.5), mask);
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let (img, mask) = two_tone(5);
        let cfg = ForestConfig::default();
        let a = forest_fit(std::slice::from_ref(&img), std::slice::from_ref(&mask), &cfg).unwrap();
        let b = forest_fit(&[img], &[mask], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn depth_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = TensorMap::new(3, 20, 20, (0..1200).map(|_| rng.gen_range(0.0..255.0)).collect()).unwrap();
        let mask = BinaryMask::from_fn(20, 20, |y, x| (y * 31 + x * 17) % 5 < 2);
        let forest = forest_fit(&[img], &[mask], &ForestConfig::default()).unwrap();
        assert!(forest.trees().iter().all(|t| t.depth() <= MAX_DEPTH));
    }

    #[test]
    fn vote_arithmetic() {
        let zero = ProbabilityMask::filled(2, 2, 0.0).unwrap();
        let bu = ProbabilityMask::filled(2, 2, 0.8).unwrap();
        assert!(soft_vote(&zero, &bu, DEFAULT_TAU_RF).unwrap().data().iter().all(|&v| v == 1));
        assert_eq!(soft_vote(&zero, &bu, 0.37).unwrap(), soft_vote(&bu, &zero, 0.37).unwrap());
        let one = ProbabilityMask::filled(2, 2, 1.0).unwrap();
        assert_eq!(soft_vote(&one, &one, 0.37).unwrap().count(), 4);
        assert!(soft_vote(&zero, &ProbabilityMask::filled(1, 2, 0.0).unwrap(), 0.37).is_err());
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(matches!(forest_fit(&[], &[], &ForestConfig::default()), Err(Error::Empty(_))));
    }
}
