use nalgebra::{DMatrix, DVector, Scalar};

use super::Real;
use crate::error::{Error, Result};

/// Parity partition of a `w x w` grid. Both halves list row-major positions:
/// `even` holds `(row + col) % 2 == 0`, `odd` the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkerboard {
    w: usize,
    even: Vec<(usize, usize)>,
    odd: Vec<(usize, usize)>,
}

impl Checkerboard {
    pub fn new(w: usize) -> Result<Self> {
        if w == 0 || !w.is_multiple_of(2) {
            return Err(Error::OddResolution(w));
        }
        let (even, odd) = (0..w)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .partition(|(r, c)| (r + c) % 2 == 0);
        Ok(Self { w, even, odd })
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn half(&self) -> usize {
        self.w * self.w / 2
    }

    fn check<T: Scalar>(&self, m: &DMatrix<T>) -> Result<()> {
        if m.shape() != (self.w, self.w) {
            return Err(Error::DimMismatch(format!(
                "expected {0}x{0} frame, got {1:?}",
                self.w,
                m.shape()
            )));
        }
        Ok(())
    }

    pub fn split<T: Scalar + Copy>(&self, frame: &DMatrix<T>) -> Result<(DVector<T>, DVector<T>)> {
        self.check(frame)?;
        Ok((
            DVector::from_iterator(self.half(), self.even.iter().map(|&p| frame[p])),
            DVector::from_iterator(self.half(), self.odd.iter().map(|&p| frame[p])),
        ))
    }

    pub fn merge<T: Real>(&self, u1: &DVector<T>, u2: &DVector<T>) -> Result<DMatrix<T>> {
        if u1.len() != self.half() || u2.len() != self.half() {
            return Err(Error::DimMismatch(format!(
                "halves of length {} and {}, expected {}",
                u1.len(),
                u2.len(),
                self.half()
            )));
        }
        let mut out = DMatrix::zeros(self.w, self.w);
        for (k, &p) in self.even.iter().enumerate() {
            out[p] = u1[k];
        }
        for (k, &p) in self.odd.iter().enumerate() {
            out[p] = u2[k];
        }
        Ok(out)
    }

    /// Splits frames into two `half x n` matrices, one column per frame.
    pub fn split_batch<T: Real>(&self, frames: &[DMatrix<T>]) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let n = frames.len();
        let mut u1 = DMatrix::zeros(self.half(), n);
        let mut u2 = DMatrix::zeros(self.half(), n);
        for (j, f) in frames.iter().enumerate() {
            self.check(f)?;
            for (k, &p) in self.even.iter().enumerate() {
                u1[(k, j)] = f[p];
            }
            for (k, &p) in self.odd.iter().enumerate() {
                u2[(k, j)] = f[p];
            }
        }
        Ok((u1, u2))
    }

    pub fn merge_batch<T: Real>(&self, u1: &DMatrix<T>, u2: &DMatrix<T>) -> Vec<DMatrix<T>> {
        (0..u1.ncols())
            .map(|j| {
                let mut out = DMatrix::zeros(self.w, self.w);
                for (k, &p) in self.even.iter().enumerate() {
                    out[p] = u1[(k, j)];
                }
                for (k, &p) in self.odd.iter().enumerate() {
                    out[p] = u2[(k, j)];
                }
                out
            })
            .collect()
    }
}
