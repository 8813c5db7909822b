//! Silhouette ingestion, tensor files and synthetic walkers.

mod images;
mod synthetic;
mod tensor;

use nalgebra::DMatrix;

pub use images::{
    binarize, list_image_files, load_sequence, read_gray, resize_nearest, save_heatmap_pgm,
    save_pgm, subject_from_name,
};
pub use synthetic::{generate_synthetic_dataset, SyntheticSpec};
pub use tensor::{load_tensor, save_tensor, Tensor, MAGIC};

use crate::error::{Error, Result};

/// A square image; silhouettes hold values in `[0, 1]`.
pub type Frame = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteSequence {
    pub frames: Vec<Frame>,
    pub source_id: String,
    pub subject_id: u32,
}

impl SilhouetteSequence {
    pub fn new(frames: Vec<Frame>, source_id: String, subject_id: u32) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::TooFewFrames {
                dir: source_id.into(),
                found: frames.len(),
            });
        }
        let w = frames[0].nrows();
        for f in &frames {
            if f.nrows() != w || f.ncols() != w {
                return Err(Error::ShapeMismatch(format!(
                    "frame {:?} in a sequence of {w}x{w} frames",
                    f.shape()
                )));
            }
            if f.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
                return Err(Error::BadSpec("frame values must lie in [0, 1]".into()));
            }
        }
        Ok(Self {
            frames,
            source_id,
            subject_id,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.frames[0].nrows()
    }
}
