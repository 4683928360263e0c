pub mod bitsback;
pub mod container;
pub mod discretize;
pub mod error;
pub mod hierarchy;
pub mod lossy;
pub mod manifest;
pub mod mask;
pub mod par;
pub mod pnm;
pub mod rans;
pub mod roi;
pub mod segpost;
pub mod weights;

pub use error::{Error, Result};
