use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma};
use nalgebra::DMatrix;

use super::{Frame, SilhouetteSequence};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &["pgm", "png"];

fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false)
}

/// Image files directly inside `dir`, in lexicographic order.
pub fn list_image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image_file(p))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads a grayscale image normalized to `[0, 1]` (pixel / 255).
pub fn read_gray(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Ok(DMatrix::from_fn(h as usize, w as usize, |r, c| {
        gray.get_pixel(c as u32, r as u32)[0] as f64 / 255.0
    }))
}

/// Nearest-neighbour resampling to `size x size`, sampling at pixel centres.
pub fn resize_nearest(src: &Frame, size: usize) -> Frame {
    let (h, w) = src.shape();
    DMatrix::from_fn(size, size, |r, c| {
        let sr = (((r as f64 + 0.5) * h as f64 / size as f64) as usize).min(h - 1);
        let sc = (((c as f64 + 0.5) * w as f64 / size as f64) as usize).min(w - 1);
        src[(sr, sc)]
    })
}

pub fn binarize(frame: &Frame) -> Frame {
    frame.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

/// Leading decimal digits of a directory name (`001-nm-01-090` -> 1).
pub fn subject_from_name(name: &str) -> Option<u32> {
    let digits: String = name.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

/// Loads a directory of silhouette frames as a binary `w x w` sequence.
pub fn load_sequence(dir: impl AsRef<Path>, w: usize) -> Result<SilhouetteSequence> {
    let dir = dir.as_ref();
    let files = list_image_files(dir)?;
    if files.len() < 2 {
        return Err(Error::TooFewFrames {
            dir: dir.to_path_buf(),
            found: files.len(),
        });
    }
    let frames = files
        .iter()
        .map(|p| read_gray(p).map(|f| binarize(&resize_nearest(&f, w))))
        .collect::<Result<Vec<_>>>()?;
    let source_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let subject_id = subject_from_name(&source_id).unwrap_or(0);
    SilhouetteSequence::new(frames, source_id, subject_id)
}

fn to_gray_image(frame: &Frame) -> GrayImage {
    let (h, w) = frame.shape();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = frame[(y as usize, x as usize)];
        let v = if v.is_finite() {
            v.clamp(0.0, 1.0)
        } else {
            0.0
        };
        Luma([(v * 255.0).round() as u8])
    })
}

/// Writes a frame as a binary PGM, clamping to `[0, 1]` and scaling to 0..=255.
pub fn save_pgm(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    to_gray_image(frame)
        .save_with_format(path, ImageFormat::Pnm)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::UnreadableImage {
                path: path.to_path_buf(),
                reason: other.to_string(),
            },
        })
}

/// Writes a non-negative map as a heatmap PGM with its maximum at 255.
pub fn save_heatmap_pgm(map: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let max = map.iter().cloned().fold(0.0f64, f64::max);
    let scaled = if max > 0.0 { map / max } else { map.clone() };
    save_pgm(&scaled, path)
}
