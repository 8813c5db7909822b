//! Dense f32 tensors and the IKA1 on-disk format.
//!
//! Layout (all integers little-endian):
//! - bytes 0..4: magic `IKA1`
//! - byte 4: `u8` number of dimensions (1 to 3)
//! - `ndim` extents as `u32`
//! - row-major payload of `f32`

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"IKA1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::DimMismatch(format!(
                "tensor must have 1 to 3 dimensions, got {}",
                shape.len()
            )));
        }
        if shape.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
            return Err(Error::DimMismatch(format!("invalid extents {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::DimMismatch(format!(
                "extents {shape:?} need {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn from_vector(values: &[f64]) -> Result<Self> {
        Self::new(
            vec![values.len()],
            values.iter().map(|&v| v as f32).collect(),
        )
    }

    /// Row-major copy of a matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)] as f32);
            }
        }
        Self::new(vec![m.nrows(), m.ncols()], data)
    }

    /// Stacks equally shaped matrices into a `[n, rows, cols]` tensor.
    pub fn from_matrices(ms: &[DMatrix<f64>]) -> Result<Self> {
        let first = ms.first().ok_or(Error::EmptyInput)?;
        let (rows, cols) = first.shape();
        let mut data = Vec::with_capacity(ms.len() * rows * cols);
        for m in ms {
            if m.shape() != (rows, cols) {
                return Err(Error::DimMismatch(format!(
                    "cannot stack {:?} with {:?}",
                    m.shape(),
                    (rows, cols)
                )));
            }
            for r in 0..rows {
                for c in 0..cols {
                    data.push(m[(r, c)] as f32);
                }
            }
        }
        Self::new(vec![ms.len(), rows, cols], data)
    }

    pub fn to_vector(&self) -> Result<Vec<f64>> {
        if self.shape.len() != 1 {
            return Err(Error::DimMismatch(format!(
                "expected a 1-d tensor, got {:?}",
                self.shape
            )));
        }
        Ok(self.data.iter().map(|&v| v as f64).collect())
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.shape[..] {
            [rows, cols] => Ok(DMatrix::from_row_iterator(
                rows,
                cols,
                self.data.iter().map(|&v| v as f64),
            )),
            _ => Err(Error::DimMismatch(format!(
                "expected a 2-d tensor, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn to_matrices(&self) -> Result<Vec<DMatrix<f64>>> {
        match self.shape[..] {
            [n, rows, cols] => Ok(self
                .data
                .chunks_exact(rows * cols)
                .take(n)
                .map(|chunk| {
                    DMatrix::from_row_iterator(rows, cols, chunk.iter().map(|&v| v as f64))
                })
                .collect()),
            _ => Err(Error::DimMismatch(format!(
                "expected a 3-d tensor, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + 4 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 {
            return Err(Error::DimMismatch(format!(
                "file too short for a header ({} bytes)",
                bytes.len()
            )));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
        if &magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let ndim = bytes[4] as usize;
        let header = 5 + 4 * ndim;
        if bytes.len() < header {
            return Err(Error::DimMismatch(format!(
                "header declares {ndim} extents but file has {} bytes",
                bytes.len()
            )));
        }
        let shape: Vec<usize> = bytes[5..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")) as usize)
            .collect();
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::DimMismatch(format!("extents {shape:?} overflow")))?;
        let payload = &bytes[header..];
        if payload.len() != numel * 4 {
            return Err(Error::DimMismatch(format!(
                "extents {shape:?} need {} payload bytes, found {}",
                numel * 4,
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        Self::new(shape, data)
    }
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, t.to_bytes())?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    Tensor::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_file_size() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = t.to_bytes();
        // magic + ndim + 2 extents + 4 floats
        assert_eq!(bytes.len(), 4 + 1 + 2 * 4 + 4 * 4);
        assert_eq!(&bytes[..4], b"IKA1");
        assert_eq!(bytes[4], 2);
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(&bytes[13..17], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[25..29], &4.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 29);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = Tensor::new(vec![1], vec![0.5]).unwrap().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Tensor::from_bytes(&bytes),
            Err(Error::BadMagic(_))
        ));
    }

    #[test]
    fn truncated_payload_is_dim_mismatch() {
        let mut bytes = Tensor::new(vec![3], vec![1.0, 2.0, 3.0])
            .unwrap()
            .to_bytes();
        bytes.pop();
        assert!(matches!(
            Tensor::from_bytes(&bytes),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn rejects_bad_rank() {
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn matrix_layout_is_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = Tensor::from_matrix(&m).unwrap();
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.to_matrix().unwrap(), m);
    }

    #[test]
    fn file_round_trip_of_random_cycle_is_bitwise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..12 * 64 * 64).map(|_| rng.random::<f32>()).collect();
        let t = Tensor::new(vec![12, 64, 64], data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cycle.ika1");
        save_tensor(&t, &path).unwrap();
        let back = load_tensor(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back
            .data()
            .iter()
            .zip(t.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    proptest! {
        #[test]
        fn byte_round_trip_is_bitwise(
            shape in prop::collection::vec(1usize..5, 1..=3),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff)).collect();
            let t = Tensor::new(shape, data).unwrap();
            let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
