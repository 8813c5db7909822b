//! Two-phase training: the coder and a shared prototype `K` on mini-batches,
//! then one operator per cycle with the coder frozen.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coder::{
    coder_backward, Activation, CoderConfig, CouplingCoder, EtBlock, EtGradients, LossWeights,
};
use crate::error::{Error, Result};
use crate::koopman::{
    encode_cycle, fit_closed_form_embedded, fit_gradient_descent_embedded, GdOptions,
    KoopmanOperator,
};
use crate::optim::{Adam, AdamConfig, Moments};
use crate::ovs::GaitCycle;

/// How the prototype operator is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KInit {
    /// Entries drawn from `N(mean / w, (std / w)^2)`, which keeps `K^T` bounded.
    #[default]
    Scaled,
    /// Entries drawn from `N(mean, std^2)` as written.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub loss_weights: LossWeights,
    pub adam: AdamConfig,
    pub seed: u64,
    pub k_init: KInit,
    pub k_init_mean: f64,
    pub k_init_std: f64,
    /// Global gradient norm cap; `0` disables clipping.
    pub clip_norm: f64,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            lr: 0.001,
            epochs: 2000,
            loss_weights: LossWeights::default(),
            adam: AdamConfig::default(),
            seed: 0,
            k_init: KInit::Scaled,
            k_init_mean: 1.0,
            k_init_std: 2.0,
            clip_norm: 10.0,
            activation: Activation::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::BadSpec(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::BadSpec(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        if !(self.k_init_std >= 0.0) || !self.k_init_mean.is_finite() || !(self.clip_norm >= 0.0) {
            return Err(Error::BadSpec(
                "K init and clip norm must be finite and non-negative".into(),
            ));
        }
        self.loss_weights.validate()
    }

    pub fn initial_k<R: rand::Rng + ?Sized>(&self, w: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let (mean, std) = match self.k_init {
            KInit::Scaled => (self.k_init_mean / w as f64, self.k_init_std / w as f64),
            KInit::Paper => (self.k_init_mean, self.k_init_std),
        };
        let normal = Normal::new(mean, std).map_err(|e| Error::BadSpec(e.to_string()))?;
        Ok(DMatrix::from_fn(w, w, |_, _| normal.sample(rng)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss0: f64,
    pub loss1: f64,
    pub loss2: f64,
    pub total: f64,
    pub seconds: f64,
}

/// Per-epoch means of the training-mode losses, taken before each update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedCoder {
    /// In eval mode, normalising with the running statistics.
    pub coder: CouplingCoder,
    pub prototype: KoopmanOperator,
    pub trace: TrainTrace,
}

struct BlockMoments {
    weight: Moments,
    bias: Moments,
    gamma: Moments,
    beta: Moments,
}

impl BlockMoments {
    fn new(units: usize) -> Self {
        Self {
            weight: Moments::new(units * units),
            bias: Moments::new(units),
            gamma: Moments::new(units),
            beta: Moments::new(units),
        }
    }

    fn step(&mut self, adam: &Adam, block: &mut EtBlock, g: &EtGradients) {
        adam.update(
            &mut self.weight,
            block.weight.as_mut_slice(),
            g.weight.as_slice(),
        );
        adam.update(&mut self.bias, block.bias.as_mut_slice(), g.bias.as_slice());
        adam.update(
            &mut self.gamma,
            block.bn_gamma.as_mut_slice(),
            g.gamma.as_slice(),
        );
        adam.update(
            &mut self.beta,
            block.bn_beta.as_mut_slice(),
            g.beta.as_slice(),
        );
    }
}

fn check_cycles(cycles: &[GaitCycle]) -> Result<(usize, usize)> {
    let first = cycles.first().ok_or(Error::EmptyInput)?;
    let (t, w) = (first.len(), first.resolution());
    for (i, c) in cycles.iter().enumerate() {
        if c.len() != t || c.frames.iter().any(|f| f.shape() != (w, w)) {
            return Err(Error::InconsistentShapes(format!(
                "cycle {i} has {} frames of {:?}, expected {t} of {w}x{w}",
                c.len(),
                c.frames.first().map(|f| f.shape())
            )));
        }
    }
    Ok((t, w))
}

/// Jointly trains the coder and one shared operator. Deterministic for a given seed.
pub fn train_coder(cycles: &[GaitCycle], cfg: &TrainConfig) -> Result<TrainedCoder> {
    cfg.validate()?;
    let (_, w) = check_cycles(cycles)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut coder_cfg = CoderConfig::new(w);
    coder_cfg.activation = cfg.activation;
    let mut coder = CouplingCoder::new_random(&coder_cfg, &mut rng)?;
    let mut k = cfg.initial_k(w, &mut rng)?;
    coder.set_training(true);

    let half = coder.half();
    let mut adam = Adam::new(cfg.lr, cfg.adam);
    let mut f_moments = BlockMoments::new(half);
    let mut g_moments = BlockMoments::new(half);
    let mut k_moments = Moments::new(w * w);
    let mut order: Vec<usize> = (0..cycles.len()).collect();
    let mut trace = TrainTrace::default();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<GaitCycle> = chunk.iter().map(|&i| cycles[i].clone()).collect();
            let mut out =
                coder_backward(&coder, &batch, &k, &cfg.loss_weights).map_err(|e| match e {
                    Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch },
                    other => other,
                })?;
            let l = out.losses;
            let total = l.total(&cfg.loss_weights);
            if !l.is_finite() || !total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let n = batch.len() as f64;
            for (s, v) in sums.iter_mut().zip([l.loss0, l.loss1, l.loss2, total]) {
                *s += v * n;
            }
            let norm = out.grads.squared_norm().sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                out.grads.scale(cfg.clip_norm / norm);
            }
            adam.tick();
            f_moments.step(&adam, &mut coder.f, &out.grads.f);
            g_moments.step(&adam, &mut coder.g, &out.grads.g);
            adam.update(&mut k_moments, k.as_mut_slice(), out.grads.k.as_slice());
            coder
                .f
                .update_running(&out.f_stats.mean, &out.f_stats.var, out.f_stats.n);
            coder
                .g
                .update_running(&out.g_stats.mean, &out.g_stats.var, out.g_stats.n);
        }
        let n = cycles.len() as f64;
        trace.records.push(EpochRecord {
            epoch,
            loss0: sums[0] / n,
            loss1: sums[1] / n,
            loss2: sums[2] / n,
            total: sums[3] / n,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    coder.set_training(false);
    Ok(TrainedCoder {
        coder,
        prototype: KoopmanOperator::new(k)?,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    #[default]
    Gd,
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixConfig {
    pub method: FitMethod,
    pub lr: f64,
    pub epochs: usize,
    pub adam: AdamConfig,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            method: FitMethod::Gd,
            lr: 0.01,
            epochs: 400,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedOperator {
    pub cycle_id: usize,
    pub operator: KoopmanOperator,
    /// Loss1 per Adam step; empty for the analytic path.
    pub losses: Vec<f64>,
}

/// One operator per cycle with the coder frozen, in cycle order.
pub fn fit_all_matrices(
    coder: &CouplingCoder,
    prototype: &KoopmanOperator,
    cycles: &[GaitCycle],
    cfg: &MatrixConfig,
) -> Result<Vec<FittedOperator>> {
    if coder.is_training() {
        return Err(Error::BadSpec(
            "matrix fitting needs a coder in eval mode".into(),
        ));
    }
    let opts = GdOptions {
        lr: cfg.lr,
        epochs: cfg.epochs,
        adam: cfg.adam,
    };
    cycles
        .par_iter()
        .enumerate()
        .map(|(cycle_id, cycle)| {
            let emb = encode_cycle(coder, cycle)?;
            let (operator, losses) = match cfg.method {
                FitMethod::Analytic => (fit_closed_form_embedded(&emb)?, Vec::new()),
                FitMethod::Gd => {
                    let fit = fit_gradient_descent_embedded(&emb, prototype.matrix(), &opts)?;
                    (fit.operator, fit.losses)
                }
            };
            Ok(FittedOperator {
                cycle_id,
                operator,
                losses,
            })
        })
        .collect()
}
