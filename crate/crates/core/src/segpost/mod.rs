//! Mask post-processing: hole filling, forest ensemble and robustness curves.

pub mod curves;
pub mod fill;
pub mod forest;

pub use curves::{acceptance_curve, AcceptanceCurve};
pub use fill::{estimate_orientation, fill_holes, Orientation};
pub use forest::{ensemble_predict, forest_fit, DecisionForest, ForestConfig, NeighSpec};

use crate::error::{Error, Result};
use crate::hierarchy::TensorMap;
use crate::mask::{BinaryMask, ProbabilityMask};

/// Masks after each stage, plus the first-stage masks of the peers.
#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub orientation: Orientation,
    pub thresholded: BinaryMask,
    pub first_fill: BinaryMask,
    pub ensemble: BinaryMask,
    pub second_fill: BinaryMask,
}

impl SegmentOutcome {
    /// Pixels changed by the first fill, the ensemble and the second fill.
    pub fn change_counts(&self) -> [usize; 3] {
        [
            self.thresholded.difference_count(&self.first_fill),
            self.first_fill.difference_count(&self.ensemble),
            self.ensemble.difference_count(&self.second_fill),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SegmentConfig {
    pub tau_bu: f32,
    pub tau_rf: f32,
    pub forest: ForestConfig,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            tau_bu: forest::DEFAULT_TAU_BU,
            tau_rf: forest::DEFAULT_TAU_RF,
            forest: ForestConfig::default(),
        }
    }
}

/// Threshold then fill a network probability map.
pub fn first_stage(image: &TensorMap, probs: &ProbabilityMask, tau_bu: f32) -> Result<(Orientation, BinaryMask, BinaryMask)> {
    if (image.height(), image.width()) != probs.shape() {
        return Err(Error::Config("image and probability map differ in shape".into()));
    }
    let orientation = estimate_orientation(image);
    let thresholded = probs.threshold(tau_bu);
    let filled = fill_holes(&thresholded, orientation);
    Ok((orientation, thresholded, filled))
}

/// Full chain for one target image. The forest is trained on the target and
/// its peers from the same blade surface, each labelled by its own
/// first-stage mask.
pub fn segment(
    image: &TensorMap,
    probs: &ProbabilityMask,
    peers: &[(TensorMap, ProbabilityMask)],
    config: &SegmentConfig,
) -> Result<SegmentOutcome> {
    let (orientation, thresholded, first_fill) = first_stage(image, probs, config.tau_bu)?;
    let mut images = vec![image.clone()];
    let mut masks = vec![first_fill.clone()];
    for (img, p) in peers {
        let (_, _, m) = first_stage(img, p, config.tau_bu)?;
        images.push(img.clone());
        masks.push(m);
    }
    let forest = forest_fit(&images, &masks, &config.forest)?;
    let ensemble = ensemble_predict(&forest, image, probs, config.tau_rf)?;
    let second_fill = fill_holes(&ensemble, orientation);
    Ok(SegmentOutcome {
        orientation,
        thresholded,
        first_fill,
        ensemble,
        second_fill,
    })
}
