//! Frame synthesis by powers of `K` in the embedding space, and image quality metrics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coder::CouplingCoder;
use crate::dataio::Frame;
use crate::error::{Error, Result};
use crate::koopman::{advance, fractional_power};

/// `phi^-1(K^m phi(frame))` without clamping.
pub fn generate_future_raw(
    coder: &CouplingCoder,
    k: &DMatrix<f64>,
    frame: &Frame,
    m: usize,
) -> Result<Frame> {
    let x = coder.encode(frame)?;
    coder.decode(&advance(k, &x, m)?)
}

/// [`generate_future_raw`] clamped to `[0, 1]`.
pub fn generate_future(
    coder: &CouplingCoder,
    k: &DMatrix<f64>,
    frame: &Frame,
    m: usize,
) -> Result<Frame> {
    Ok(clamp01(generate_future_raw(coder, k, frame, m)?))
}

/// `phi^-1(K^r phi(frame))` without clamping.
pub fn interpolate_raw(
    coder: &CouplingCoder,
    k: &DMatrix<f64>,
    frame: &Frame,
    r: f64,
) -> Result<Frame> {
    let x = coder.encode(frame)?;
    let kr = fractional_power(k, r)?;
    if kr.ncols() != x.nrows() {
        return Err(Error::DimMismatch(format!(
            "operator {:?} against frame {:?}",
            k.shape(),
            x.shape()
        )));
    }
    coder.decode(&(kr * x))
}

pub fn interpolate(
    coder: &CouplingCoder,
    k: &DMatrix<f64>,
    frame: &Frame,
    r: f64,
) -> Result<Frame> {
    Ok(clamp01(interpolate_raw(coder, k, frame, r)?))
}

pub fn clamp01(frame: Frame) -> Frame {
    frame.map(|v| v.clamp(0.0, 1.0))
}

/// 3x3 median with edge replication.
pub fn median_filter_3x3(frame: &Frame) -> Frame {
    let (h, w) = frame.shape();
    DMatrix::from_fn(h, w, |r, c| {
        let mut win = [0.0; 9];
        let mut n = 0;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let rr = (r as i64 + dr).clamp(0, h as i64 - 1) as usize;
                let cc = (c as i64 + dc).clamp(0, w as i64 - 1) as usize;
                win[n] = frame[(rr, cc)];
                n += 1;
            }
        }
        win.sort_by(|a, b| a.total_cmp(b));
        win[4]
    })
}

pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// `1 - MSE`.
    pub mse_sim: f64,
    /// Peak 1.0, capped at [`PSNR_CAP`] dB.
    pub psnr: f64,
    /// Global universal quality index.
    pub uqi: f64,
}

pub fn image_metrics(a: &Frame, b: &Frame) -> Result<QualityReport> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = a.len() as f64;
    let mse = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    let psnr = if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    };
    let (ma, mb) = (a.mean(), b.mean());
    let va = a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / n;
    let vb = b.iter().map(|y| (y - mb) * (y - mb)).sum::<f64>() / n;
    let cov = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / n;
    let den = (va + vb) * (ma * ma + mb * mb);
    let uqi = if den == 0.0 {
        0.0
    } else {
        4.0 * cov * ma * mb / den
    };
    Ok(QualityReport {
        mse_sim: 1.0 - mse,
        psnr,
        uqi,
    })
}
