//! Linear dynamics in the embedding space: a `w x w` operator `K` with
//! `X_{t+1} ~ K X_t`, fitted per cycle either in closed form or by Adam.

mod spectral;

use std::path::Path;

use nalgebra::DMatrix;

use crate::coder::{batch_losses, CouplingCoder, LossValues};
use crate::dataio::{load_tensor, save_tensor, Tensor};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig, Moments};
use crate::ovs::GaitCycle;

pub use spectral::{fractional_power, spectrum, write_spectrum_csv, Spectrum};

#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanOperator {
    matrix: DMatrix<f64>,
}

impl KoopmanOperator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::DimMismatch(format!(
                "operator must be square, got {:?}",
                matrix.shape()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(
                "operator has non-finite entries".into(),
            ));
        }
        Ok(Self { matrix })
    }

    pub fn identity(w: usize) -> Self {
        Self {
            matrix: DMatrix::identity(w, w),
        }
    }

    pub fn w(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Row-major flattening; the classifier and weight maps use the same order.
    pub fn flatten(&self) -> Vec<f64> {
        self.matrix.transpose().as_slice().to_vec()
    }

    pub fn from_flat(w: usize, values: &[f64]) -> Result<Self> {
        if values.len() != w * w {
            return Err(Error::DimMismatch(format!(
                "{} values for a {w}x{w} operator",
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(w, w, values))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_tensor(&Tensor::from_matrix(&self.matrix)?, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(load_tensor(path)?.to_matrix()?)
    }
}

/// Encoded frames `X_1..X_T` of one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCycle {
    frames: Vec<DMatrix<f64>>,
}

impl EmbeddingCycle {
    pub fn new(frames: Vec<DMatrix<f64>>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::SequenceTooShort {
                len: frames.len(),
                required: 2,
            });
        }
        let w = frames[0].nrows();
        if let Some(f) = frames.iter().find(|f| f.shape() != (w, w)) {
            return Err(Error::DimMismatch(format!(
                "embedding frame {:?} in a {w}x{w} cycle",
                f.shape()
            )));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[DMatrix<f64>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn w(&self) -> usize {
        self.frames[0].nrows()
    }

    /// `(X_t, X_{t+1})` with the last frame wrapping to the first.
    pub fn pairs(&self) -> impl Iterator<Item = (&DMatrix<f64>, &DMatrix<f64>)> {
        let t = self.frames.len();
        (0..t).map(move |i| (&self.frames[i], &self.frames[(i + 1) % t]))
    }
}

/// Encodes a cycle with the coder as it is; pass an eval-mode coder.
pub fn encode_cycle(coder: &CouplingCoder, cycle: &GaitCycle) -> Result<EmbeddingCycle> {
    EmbeddingCycle::new(coder.encode_batch(&cycle.frames)?)
}

fn check_dims(k: &DMatrix<f64>, w: usize) -> Result<()> {
    if k.shape() != (w, w) {
        return Err(Error::DimMismatch(format!(
            "operator {:?} for {w}x{w} frames",
            k.shape()
        )));
    }
    Ok(())
}

/// `K^m X`.
pub fn advance(k: &DMatrix<f64>, x: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>> {
    if !k.is_square() || k.ncols() != x.nrows() {
        return Err(Error::DimMismatch(format!(
            "operator {:?} against frame {:?}",
            k.shape(),
            x.shape()
        )));
    }
    let mut out = x.clone();
    for _ in 0..m {
        out = k * out;
    }
    Ok(out)
}

/// Loss0, Loss1 and Loss2 of a single cycle.
pub fn cycle_losses(
    coder: &CouplingCoder,
    k: &DMatrix<f64>,
    cycle: &GaitCycle,
) -> Result<LossValues> {
    batch_losses(coder, std::slice::from_ref(cycle), k)
}

/// `1/2 sum_t |X_{t+1} - K X_t|^2`.
pub fn loss1_embedded(k: &DMatrix<f64>, cycle: &EmbeddingCycle) -> Result<f64> {
    check_dims(k, cycle.w())?;
    Ok(cycle
        .pairs()
        .map(|(x, y)| (y - k * x).norm_squared())
        .sum::<f64>()
        * 0.5)
}

/// `sum_t (K X_t - X_{t+1}) X_t^T`.
pub fn loss1_gradient(k: &DMatrix<f64>, cycle: &EmbeddingCycle) -> Result<DMatrix<f64>> {
    check_dims(k, cycle.w())?;
    let g = snapshot_grams(cycle);
    Ok(k * &g.a - &g.b)
}

/// Second moments of the snapshot pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotGrams {
    /// `sum_t X_t X_t^T`
    pub a: DMatrix<f64>,
    /// `sum_t X_{t+1} X_t^T`
    pub b: DMatrix<f64>,
}

pub fn snapshot_grams(cycle: &EmbeddingCycle) -> SnapshotGrams {
    let w = cycle.w();
    let mut a = DMatrix::zeros(w, w);
    let mut b = DMatrix::zeros(w, w);
    for (x, y) in cycle.pairs() {
        a.gemm(1.0, x, &x.transpose(), 1.0);
        b.gemm(1.0, y, &x.transpose(), 1.0);
    }
    SnapshotGrams { a, b }
}

/// The augmented matrix `S = sum_i A_i` with `A_i = [X_i X_i^T | X_i X_{i+1}^T]`.
///
/// Row `r` of `S` is the normal equation for row `r` of `K^T`, so reducing the
/// left block to the identity leaves `K^T` on the right.
pub fn augmented_system(cycle: &EmbeddingCycle) -> DMatrix<f64> {
    let w = cycle.w();
    let mut s = DMatrix::zeros(w, 2 * w);
    for (x, y) in cycle.pairs() {
        let mut left = s.columns_mut(0, w);
        left.gemm(1.0, x, &x.transpose(), 1.0);
        let mut right = s.columns_mut(w, w);
        right.gemm(1.0, x, &y.transpose(), 1.0);
    }
    s
}

/// Gauss-Jordan elimination with partial pivoting on `[A | B^T]`; returns `K`.
pub fn solve_augmented(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let w = s.nrows();
    if s.ncols() != 2 * w {
        return Err(Error::DimMismatch(format!(
            "augmented system {:?}",
            s.shape()
        )));
    }
    let mut m = s.clone();
    let scale = m.columns(0, w).amax();
    for col in 0..w {
        let (offset, pivot) = m.view((col, col), (w - col, 1)).iter().enumerate().fold(
            (0, 0.0f64),
            |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best },
        );
        if pivot <= f64::EPSILON * scale * w as f64 {
            return Err(Error::NumericalFailure(format!(
                "zero pivot in column {col}"
            )));
        }
        m.swap_rows(col, col + offset);
        let p = m[(col, col)];
        m.row_mut(col).scale_mut(1.0 / p);
        let pivot_row = m.row(col).clone_owned();
        for r in 0..w {
            if r != col {
                let factor = m[(r, col)];
                if factor != 0.0 {
                    let mut row = m.row_mut(r);
                    row -= &pivot_row * factor;
                }
            }
        }
    }
    Ok(m.columns(w, w).transpose())
}

/// Minimum-norm least squares `K = B A^+`, discarding singular values below `1e-10 * sigma_max`.
pub fn solve_pseudo_inverse(grams: &SnapshotGrams) -> Result<DMatrix<f64>> {
    let svd = grams.a.clone().svd(true, true);
    let cutoff = RANK_CUTOFF * svd.singular_values.max();
    let pinv = svd
        .pseudo_inverse(cutoff)
        .map_err(|e| Error::NumericalFailure(e.into()))?;
    Ok(&grams.b * pinv)
}

const RANK_CUTOFF: f64 = 1e-10;

pub fn fit_closed_form(coder: &CouplingCoder, cycle: &GaitCycle) -> Result<KoopmanOperator> {
    fit_closed_form_embedded(&encode_cycle(coder, cycle)?)
}

/// Least-squares `K` for one embedded cycle. Full-rank Gram matrices go through
/// the augmented elimination, rank-deficient ones through the pseudo-inverse.
pub fn fit_closed_form_embedded(cycle: &EmbeddingCycle) -> Result<KoopmanOperator> {
    let grams = snapshot_grams(cycle);
    if grams.a.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateCycle);
    }
    let sv = grams.a.singular_values();
    let k = if sv.min() > RANK_CUTOFF * sv.max() {
        solve_augmented(&augmented_system(cycle)).or_else(|_| solve_pseudo_inverse(&grams))?
    } else {
        solve_pseudo_inverse(&grams)?
    };
    KoopmanOperator::new(k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdOptions {
    pub lr: f64,
    pub epochs: usize,
    pub adam: AdamConfig,
}

impl Default for GdOptions {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 400,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdFit {
    pub operator: KoopmanOperator,
    /// Loss1 before each step, then the loss of the returned operator.
    pub losses: Vec<f64>,
}

pub fn fit_gradient_descent(
    coder: &CouplingCoder,
    cycle: &GaitCycle,
    prototype: &DMatrix<f64>,
    lr: f64,
    epochs: usize,
) -> Result<GdFit> {
    let opts = GdOptions {
        lr,
        epochs,
        ..GdOptions::default()
    };
    fit_gradient_descent_embedded(&encode_cycle(coder, cycle)?, prototype, &opts)
}

/// Full-batch Adam on Loss1 starting from `prototype`.
pub fn fit_gradient_descent_embedded(
    cycle: &EmbeddingCycle,
    prototype: &DMatrix<f64>,
    opts: &GdOptions,
) -> Result<GdFit> {
    check_dims(prototype, cycle.w())?;
    if !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(Error::BadSpec(format!(
            "learning rate {} must be positive",
            opts.lr
        )));
    }
    let grams = snapshot_grams(cycle);
    let w = cycle.w();
    let mut k = prototype.clone();
    let mut adam = Adam::new(opts.lr, opts.adam);
    let mut moments = Moments::new(k.len());
    let mut losses = Vec::with_capacity(opts.epochs + 1);
    for epoch in 0..=opts.epochs {
        let loss = loss1_embedded(&k, cycle)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        losses.push(loss);
        if epoch == opts.epochs {
            break;
        }
        let mut grad = &k * &grams.a - &grams.b;
        // Entries at rounding level are zero: Adam rescales any gradient
        // near its eps to a full step, which would walk off a stationary point.
        let floor = 16.0 * f64::EPSILON * (w as f64 * k.amax() * grams.a.amax() + grams.b.amax());
        grad.apply(|g| {
            if g.abs() <= floor {
                *g = 0.0
            }
        });
        adam.tick();
        adam.update(&mut moments, k.as_mut_slice(), grad.as_slice());
    }
    Ok(GdFit {
        operator: KoopmanOperator::new(k)?,
        losses,
    })
}

pub fn convexity_probe(
    coder: &CouplingCoder,
    cycle: &GaitCycle,
    k_a: &DMatrix<f64>,
    k_b: &DMatrix<f64>,
    n_points: usize,
) -> Result<bool> {
    convexity_probe_embedded(&encode_cycle(coder, cycle)?, k_a, k_b, n_points)
}

/// Checks `L(s K_a + (1-s) K_b) <= s L(K_a) + (1-s) L(K_b)` at `s = i / (n+1)`.
pub fn convexity_probe_embedded(
    cycle: &EmbeddingCycle,
    k_a: &DMatrix<f64>,
    k_b: &DMatrix<f64>,
    n_points: usize,
) -> Result<bool> {
    let la = loss1_embedded(k_a, cycle)?;
    let lb = loss1_embedded(k_b, cycle)?;
    check_dims(k_b, cycle.w())?;
    let slack = 1e-9 * la.abs().max(lb.abs()).max(1.0);
    for i in 1..=n_points {
        let s = i as f64 / (n_points + 1) as f64;
        let mix = k_a * s + k_b * (1.0 - s);
        if loss1_embedded(&mix, cycle)? > s * la + (1.0 - s) * lb + slack {
            return Ok(false);
        }
    }
    Ok(true)
}
