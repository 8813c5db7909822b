//! Invertible additive-coupling coder over checkerboard halves of a frame.

mod backward;
mod checkerboard;
mod checkpoint;
mod et;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use backward::{
    batch_losses, coder_backward, BackwardOutput, CoderGradients, EncodeStats, LossValues,
    LossWeights,
};
pub use checkerboard::Checkerboard;
pub use checkpoint::{load_coder, save_coder};
pub use et::{Activation, EtBlock, EtGradients};

use crate::error::{Error, Result};

/// Scalar types the coder can run in.
pub trait Real: nalgebra::RealField + Copy {}
impl<T: nalgebra::RealField + Copy> Real for T {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoderConfig {
    pub w: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    #[serde(default)]
    pub activation: Activation,
}

impl CoderConfig {
    pub fn new(w: usize) -> Self {
        Self {
            w,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
            activation: Activation::None,
        }
    }
}

/// `Y1 = U1 + f(U2)`, `Y2 = U2 + g(Y1)` on the checkerboard halves `U1`, `U2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingCoder<T: Real = f64> {
    pub f: EtBlock<T>,
    pub g: EtBlock<T>,
    board: Checkerboard,
}

impl CouplingCoder<f64> {
    pub fn new_random<R: Rng + ?Sized>(cfg: &CoderConfig, rng: &mut R) -> Result<Self> {
        let board = Checkerboard::new(cfg.w)?;
        let half = board.half();
        let f = EtBlock::glorot(half, cfg.bn_eps, cfg.bn_momentum, cfg.activation, rng);
        let g = EtBlock::glorot(half, cfg.bn_eps, cfg.bn_momentum, cfg.activation, rng);
        Ok(Self { f, g, board })
    }

    /// Both transforms output zero, so the embedding is the split frame itself.
    pub fn identity(w: usize) -> Result<Self> {
        let board = Checkerboard::new(w)?;
        let half = board.half();
        let f = EtBlock::zero(half, 1e-5, 0.9, Activation::None);
        Ok(Self {
            g: f.clone(),
            f,
            board,
        })
    }

    pub fn config(&self) -> CoderConfig {
        CoderConfig {
            w: self.board.w(),
            bn_eps: self.f.bn_eps,
            bn_momentum: self.f.bn_momentum,
            activation: self.f.activation,
        }
    }
}

impl<T: Real> CouplingCoder<T> {
    pub(crate) fn from_parts(f: EtBlock<T>, g: EtBlock<T>, w: usize) -> Result<Self> {
        let board = Checkerboard::new(w)?;
        if f.units() != board.half() || g.units() != board.half() {
            return Err(Error::DimMismatch(format!(
                "ET blocks of width {}/{} for a {w}x{w} board",
                f.units(),
                g.units()
            )));
        }
        Ok(Self { f, g, board })
    }

    pub fn w(&self) -> usize {
        self.board.w()
    }

    pub fn half(&self) -> usize {
        self.board.half()
    }

    pub fn board(&self) -> &Checkerboard {
        &self.board
    }

    pub fn set_training(&mut self, on: bool) {
        self.f.training = on;
        self.g.training = on;
    }

    pub fn is_training(&self) -> bool {
        self.f.training
    }

    /// `2 * (half^2 + 3 * half)`: dense weight and bias plus BN scale and shift, per block.
    pub fn parameter_count(&self) -> usize {
        self.f.parameter_count() + self.g.parameter_count()
    }

    pub fn cast<U: Real>(&self) -> CouplingCoder<U> {
        CouplingCoder {
            f: self.f.cast(),
            g: self.g.cast(),
            board: self.board.clone(),
        }
    }

    /// Coupling forward pass on checkerboard halves, one column per frame.
    pub(crate) fn encode_halves(
        &self,
        u1: DMatrix<T>,
        u2: DMatrix<T>,
    ) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let y1 = u1 + self.f.apply(&u2)?;
        let y2 = u2 + self.g.apply(&y1)?;
        Ok((y1, y2))
    }

    pub(crate) fn decode_halves(
        &self,
        y1: DMatrix<T>,
        y2: DMatrix<T>,
    ) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let u2 = y2 - self.g.apply(&y1)?;
        let u1 = y1 - self.f.apply(&u2)?;
        Ok((u1, u2))
    }

    /// Encodes each frame to a `w x w` embedding frame: `Y1` is written back to
    /// the even-parity positions and `Y2` to the odd ones.
    pub fn encode_batch(&self, frames: &[DMatrix<T>]) -> Result<Vec<DMatrix<T>>> {
        let (u1, u2) = self.board.split_batch(frames)?;
        let (y1, y2) = self.encode_halves(u1, u2)?;
        Ok(self.board.merge_batch(&y1, &y2))
    }

    pub fn decode_batch(&self, embedded: &[DMatrix<T>]) -> Result<Vec<DMatrix<T>>> {
        let (y1, y2) = self.board.split_batch(embedded)?;
        let (u1, u2) = self.decode_halves(y1, y2)?;
        Ok(self.board.merge_batch(&u1, &u2))
    }

    pub fn encode(&self, frame: &DMatrix<T>) -> Result<DMatrix<T>> {
        Ok(self.encode_batch(std::slice::from_ref(frame))?.remove(0))
    }

    pub fn decode(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        Ok(self.decode_batch(std::slice::from_ref(x))?.remove(0))
    }
}
