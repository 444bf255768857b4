//! GEAN: gaze prediction, gaze-weighted feature pools, a temporal-attention
//! caption decoder, and the evaluation metrics around them.

pub mod data;
pub mod decoder;
pub mod error;
pub mod gaze;
pub mod gradcheck;
pub mod grid;
pub mod metrics;
pub mod pipeline;
pub mod pools;
pub mod rgp;
pub mod vocab;

pub use error::{Error, Result};
pub use grid::Grid;
