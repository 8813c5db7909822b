#![allow(dead_code)]

use std::f64::consts::PI;

use koopgait::coder::{CoderConfig, CouplingCoder};
use koopgait::ovs::GaitCycle;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn uniform(r: usize, c: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

/// Glorot weights plus random bias, batch-norm affine and running statistics.
pub fn random_coder(w: usize, rng: &mut ChaCha8Rng) -> CouplingCoder {
    let mut c = CouplingCoder::new_random(&CoderConfig::new(w), rng).unwrap();
    for b in [&mut c.f, &mut c.g] {
        let n = b.units();
        b.bias = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        b.bn_gamma = DVector::from_fn(n, |_, _| rng.random_range(0.5..1.5));
        b.bn_beta = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        b.bn_mean = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        b.bn_var = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
    }
    c
}

pub fn rotation(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// `Q R Q^T` with `R` a block rotation by multiples of `2 pi / t`, so `K^t = I`.
pub fn periodic_operator(w: usize, t: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = uniform(w, w, -1.0, 1.0, rng).qr().q();
    let mut r = DMatrix::identity(w, w);
    for b in 0..w / 2 {
        let theta = 2.0 * PI * rng.random_range(1..=t / 2) as f64 / t as f64;
        r.view_mut((2 * b, 2 * b), (2, 2))
            .copy_from(&rotation(theta));
    }
    &q * r * q.transpose()
}

pub fn cycle(frames: Vec<DMatrix<f64>>, subject_id: u32) -> GaitCycle {
    GaitCycle {
        frames,
        subject_id,
        start_index: 0,
    }
}

/// `U diag(s) V^T` with orthogonal `U`, `V` and singular values in `[0.5, 1.5]`.
pub fn well_conditioned(w: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let u = uniform(w, w, -1.0, 1.0, rng).qr().q();
    let v = uniform(w, w, -1.0, 1.0, rng).qr().q();
    let s = DMatrix::from_diagonal(&DVector::from_fn(w, |_, _| rng.random_range(0.5..1.5)));
    u * s * v.transpose()
}
