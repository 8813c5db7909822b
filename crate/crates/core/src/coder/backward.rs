//! Reverse-mode gradients of the weighted cycle losses through the coupling coder and K.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::et::{EtCache, EtGradients};
use super::CouplingCoder;
use crate::error::{Error, Result};
use crate::ovs::GaitCycle;

/// Weights of the reconstruction, linearity and prediction losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub autoencoder: f64,
    pub linear: f64,
    pub prediction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            autoencoder: 0.0,
            linear: 1.0,
            prediction: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.autoencoder, self.linear, self.prediction];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::BadSpec(format!(
                "loss weights {w:?} must be >= 0 with one positive"
            )));
        }
        Ok(())
    }
}

/// Per-cycle means of the three losses over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValues {
    pub loss0: f64,
    pub loss1: f64,
    pub loss2: f64,
}

impl LossValues {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.autoencoder * self.loss0 + w.linear * self.loss1 + w.prediction * self.loss2
    }

    pub fn is_finite(&self) -> bool {
        self.loss0.is_finite() && self.loss1.is_finite() && self.loss2.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoderGradients {
    pub f: EtGradients,
    pub g: EtGradients,
    pub k: DMatrix<f64>,
}

impl CoderGradients {
    pub fn squared_norm(&self) -> f64 {
        self.f.squared_norm() + self.g.squared_norm() + self.k.norm_squared()
    }

    pub fn scale(&mut self, s: f64) {
        self.f.scale(s);
        self.g.scale(s);
        self.k *= s;
    }
}

/// Batch statistics seen by one ET block during the encode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeStats {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardOutput {
    pub losses: LossValues,
    pub grads: CoderGradients,
    pub f_stats: EncodeStats,
    pub g_stats: EncodeStats,
}

struct DecodePass {
    f: EtCache,
    g: EtCache,
    frames: Vec<DMatrix<f64>>,
}

fn check_batch(coder: &CouplingCoder, cycles: &[GaitCycle], k: &DMatrix<f64>) -> Result<usize> {
    let w = coder.w();
    let first = cycles.first().ok_or(Error::EmptyInput)?;
    let t = first.len();
    if t < 2 {
        return Err(Error::DimMismatch(format!("cycle of {t} frames")));
    }
    if k.shape() != (w, w) {
        return Err(Error::DimMismatch(format!(
            "K of shape {:?} for w = {w}",
            k.shape()
        )));
    }
    for c in cycles {
        if c.len() != t {
            return Err(Error::DimMismatch(format!(
                "cycles of length {t} and {}",
                c.len()
            )));
        }
        if c.frames.iter().any(|f| f.shape() != (w, w)) {
            return Err(Error::DimMismatch(format!(
                "frame size differs from coder w = {w}"
            )));
        }
    }
    Ok(t)
}

fn decode_cached(coder: &CouplingCoder, embedded: &[DMatrix<f64>]) -> Result<DecodePass> {
    let board = coder.board();
    let (z1, z2) = board.split_batch(embedded)?;
    let (c, g) = coder.g.forward_cached(&z1)?;
    let v2 = z2 - c;
    let (d, f) = coder.f.forward_cached(&v2)?;
    let v1 = z1 - d;
    Ok(DecodePass {
        f,
        g,
        frames: board.merge_batch(&v1, &v2),
    })
}

/// Pulls a gradient on decoded frames back to the decoder input, accumulating parameter gradients.
fn decode_backward(
    coder: &CouplingCoder,
    pass: &DecodePass,
    d_out: &[DMatrix<f64>],
    grads: &mut CoderGradients,
) -> Result<Vec<DMatrix<f64>>> {
    let board = coder.board();
    let (dv1, mut dv2) = board.split_batch(d_out)?;
    let mut dz1 = dv1.clone();
    let (dx, gf) = coder.f.backward(&pass.f, &(-dv1));
    grads.f.add_assign(&gf);
    dv2 += dx;
    let (dx, gg) = coder.g.backward(&pass.g, &(-&dv2));
    grads.g.add_assign(&gg);
    dz1 += dx;
    Ok(board.merge_batch(&dz1, &dv2))
}

fn run(
    coder: &CouplingCoder,
    cycles: &[GaitCycle],
    k: &DMatrix<f64>,
    weights: &LossWeights,
    want_grads: bool,
) -> Result<BackwardOutput> {
    let t_len = check_batch(coder, cycles, k)?;
    let w = coder.w();
    let half = coder.half();
    let board = coder.board();
    let frames: Vec<DMatrix<f64>> = cycles
        .iter()
        .flat_map(|c| c.frames.iter().cloned())
        .collect();
    let n = frames.len();
    let next = |j: usize| j - j % t_len + (j % t_len + 1) % t_len;

    let (u1, u2) = board.split_batch(&frames)?;
    let (a, fe) = coder.f.forward_cached(&u2)?;
    let y1 = u1 + a;
    let (b, ge) = coder.g.forward_cached(&y1)?;
    let y2 = u2 + b;
    let xs = board.merge_batch(&y1, &y2);

    let mut grads = CoderGradients {
        f: EtGradients::zeros(half),
        g: EtGradients::zeros(half),
        k: DMatrix::zeros(w, w),
    };
    let mut dxs = vec![DMatrix::<f64>::zeros(w, w); if want_grads { n } else { 0 }];
    let mut losses = LossValues::default();

    for j in 0..n {
        let r = k * &xs[j] - &xs[next(j)];
        losses.loss1 += 0.5 * r.norm_squared();
        if want_grads && weights.linear > 0.0 {
            let r = r * weights.linear;
            grads.k += &r * xs[j].transpose();
            dxs[j] += k.tr_mul(&r);
            dxs[next(j)] -= &r;
        }
    }

    let predicted: Vec<DMatrix<f64>> = xs.iter().map(|x| k * x).collect();
    let pass2 = decode_cached(coder, &predicted)?;
    let resid2: Vec<DMatrix<f64>> = (0..n)
        .map(|j| &pass2.frames[j] - &frames[next(j)])
        .collect();
    losses.loss2 = resid2.iter().map(|e| 0.5 * e.norm_squared()).sum();
    if want_grads && weights.prediction > 0.0 {
        let d_out: Vec<_> = resid2.iter().map(|e| e * weights.prediction).collect();
        let dp = decode_backward(coder, &pass2, &d_out, &mut grads)?;
        for j in 0..n {
            grads.k += &dp[j] * xs[j].transpose();
            dxs[j] += k.tr_mul(&dp[j]);
        }
    }

    let pass0 = decode_cached(coder, &xs)?;
    let resid0: Vec<DMatrix<f64>> = (0..n).map(|j| &pass0.frames[j] - &frames[j]).collect();
    losses.loss0 = resid0.iter().map(|e| 0.5 * e.norm_squared()).sum();
    if want_grads && weights.autoencoder > 0.0 {
        let d_out: Vec<_> = resid0.iter().map(|e| e * weights.autoencoder).collect();
        let dz = decode_backward(coder, &pass0, &d_out, &mut grads)?;
        for (acc, d) in dxs.iter_mut().zip(dz) {
            *acc += d;
        }
    }

    let batch = cycles.len() as f64;
    losses.loss0 /= batch;
    losses.loss1 /= batch;
    losses.loss2 /= batch;
    if !losses.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }

    if want_grads {
        let (mut dy1, dy2) = board.split_batch(&dxs)?;
        let (dx, gg) = coder.g.backward(&ge, &dy2);
        grads.g.add_assign(&gg);
        dy1 += dx;
        let (_, gf) = coder.f.backward(&fe, &dy1);
        grads.f.add_assign(&gf);
        grads.scale(1.0 / batch);
    }

    Ok(BackwardOutput {
        losses,
        grads,
        f_stats: EncodeStats {
            mean: fe.batch_mean,
            var: fe.batch_var,
            n,
        },
        g_stats: EncodeStats {
            mean: ge.batch_mean,
            var: ge.batch_var,
            n,
        },
    })
}

/// Losses and exact gradients of `l0 * Loss0 + l1 * Loss1 + l2 * Loss2`,
/// averaged over the cycles of the batch, with `G_{T+1} = G_1`.
///
/// In training mode every ET call normalizes with the statistics of its own
/// input batch; the encode-pass statistics are returned for the running update.
pub fn coder_backward(
    coder: &CouplingCoder,
    cycles: &[GaitCycle],
    k: &DMatrix<f64>,
    weights: &LossWeights,
) -> Result<BackwardOutput> {
    weights.validate()?;
    run(coder, cycles, k, weights, true)
}

/// The forward half of [`coder_backward`].
pub fn batch_losses(
    coder: &CouplingCoder,
    cycles: &[GaitCycle],
    k: &DMatrix<f64>,
) -> Result<LossValues> {
    Ok(run(coder, cycles, k, &LossWeights::default(), false)?.losses)
}
