//! Region-of-interest coding: patch layout, mask coding, seed planning and
//! the two-region codec.

pub mod codec;
pub mod layout;
pub mod plan;
pub mod rle;

pub use codec::{
    container_layout, roi_compress, roi_decompress, ModelChoice, ModelRegistry, RoiEncoded, RoiOptions, RoiStats,
};
pub use layout::{build_layout, RoiLayout};
pub use plan::{max_runs, patches_per_run, plan_parallel, plan_with_width, ParallelPlan, Run};
pub use rle::{decode_mask, encode_mask};
