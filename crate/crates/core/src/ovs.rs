//! Optimal video segment: cutting a silhouette stream into fixed-length cycles.
//!
//! Every frame is compared with every other by the fraction of mismatched
//! pixels. The row of that table with the largest sample variance becomes the
//! similarity series; its well-separated local maxima mark cycle starts.

use rayon::prelude::*;

use crate::dataio::{Frame, SilhouetteSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySeries {
    pub benchmark_index: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitCycle {
    pub frames: Vec<Frame>,
    pub subject_id: u32,
    pub start_index: usize,
}

impl GaitCycle {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.frames.first().map(|f| f.nrows()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentOptions {
    pub cycle_len: usize,
    /// Cut at minima of the mismatch series instead of maxima.
    pub use_minima: bool,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self {
            cycle_len: 12,
            use_minima: false,
        }
    }
}

fn check_binary(f: &Frame) -> Result<()> {
    match f.iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(&v) => Err(Error::NonBinaryInput(v)),
        None => Ok(()),
    }
}

fn mismatch_fraction(m: &Frame, f: &Frame) -> f64 {
    let count = m.iter().zip(f.iter()).filter(|(a, b)| a != b).count();
    count as f64 / m.len() as f64
}

/// Fraction of pixels where exactly one of the two binary frames is set.
pub fn similarity(m: &Frame, f: &Frame) -> Result<f64> {
    if m.shape() != f.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            m.shape(),
            f.shape()
        )));
    }
    check_binary(m)?;
    check_binary(f)?;
    Ok(mismatch_fraction(m, f))
}

/// Symmetric table of pairwise mismatch fractions.
#[derive(Debug, Clone)]
pub struct SimilarityTable {
    n: usize,
    values: Vec<f64>,
    /// Pixel comparisons performed while filling the table.
    pub pixel_comparisons: u64,
}

impl SimilarityTable {
    pub fn build(frames: &[Frame]) -> Result<Self> {
        let n = frames.len();
        if let Some(first) = frames.first() {
            for f in frames {
                if f.shape() != first.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "{:?} vs {:?}",
                        f.shape(),
                        first.shape()
                    )));
                }
                check_binary(f)?;
            }
        }
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (i + 1..n)
                    .map(|j| mismatch_fraction(&frames[i], &frames[j]))
                    .collect()
            })
            .collect();
        let mut values = vec![0.0; n * n];
        for (i, row) in upper.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                let j = i + 1 + k;
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        let pixels = frames.first().map(|f| f.len() as u64).unwrap_or(0);
        let pairs = (n as u64) * (n as u64).saturating_sub(1) / 2;
        Ok(Self {
            n,
            values,
            pixel_comparisons: pairs * pixels,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Picks the benchmark frame whose similarity series has maximal variance.
pub fn select_benchmark(seq: &SilhouetteSequence, cycle_len: usize) -> Result<SimilaritySeries> {
    let required = 2 * cycle_len;
    if seq.len() < required {
        return Err(Error::SequenceTooShort {
            len: seq.len(),
            required,
        });
    }
    let table = SimilarityTable::build(&seq.frames)?;
    let variances: Vec<f64> = (0..seq.len())
        .into_par_iter()
        .map(|i| sample_variance(table.row(i)))
        .collect();
    let mut best = 0;
    for (i, &v) in variances.iter().enumerate() {
        if v > variances[best] {
            best = i;
        }
    }
    Ok(SimilaritySeries {
        benchmark_index: best,
        values: table.row(best).to_vec(),
    })
}

/// Strict local maxima; a plateau counts once, at its leftmost index.
fn local_maxima(values: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let n = values.len();
    let mut i = 1;
    while i + 1 < n {
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] < values[i] {
                peaks.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

/// Cut positions: local maxima thinned greedily to a minimum gap of `ceil(T/2)`.
pub fn find_segments(
    series: &SimilaritySeries,
    cycle_len: usize,
    use_minima: bool,
) -> Result<Vec<usize>> {
    let required = 2 * cycle_len;
    if series.values.len() < required {
        return Err(Error::SequenceTooShort {
            len: series.values.len(),
            required,
        });
    }
    let values: Vec<f64> = if use_minima {
        series.values.iter().map(|v| -v).collect()
    } else {
        series.values.clone()
    };
    let mut candidates = local_maxima(&values);
    candidates.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let min_gap = cycle_len.div_ceil(2);
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_gap) {
            kept.push(c);
        }
    }
    if kept.len() < 2 {
        return Err(Error::NoPeriodicity { peaks: kept.len() });
    }
    kept.sort_unstable();
    Ok(kept)
}

/// One cycle per cut that fits entirely inside the sequence.
pub fn extract_cycles(
    seq: &SilhouetteSequence,
    cuts: &[usize],
    cycle_len: usize,
) -> Vec<GaitCycle> {
    cuts.iter()
        .filter(|&&c| c + cycle_len <= seq.len())
        .map(|&c| GaitCycle {
            frames: seq.frames[c..c + cycle_len].to_vec(),
            subject_id: seq.subject_id,
            start_index: c,
        })
        .collect()
}

/// Benchmark selection, peak finding and extraction in one call.
pub fn segment(seq: &SilhouetteSequence, opts: SegmentOptions) -> Result<Vec<GaitCycle>> {
    let series = select_benchmark(seq, opts.cycle_len)?;
    let cuts = find_segments(&series, opts.cycle_len, opts.use_minima)?;
    Ok(extract_cycles(seq, &cuts, opts.cycle_len))
}
