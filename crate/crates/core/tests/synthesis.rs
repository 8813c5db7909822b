mod common;

use koopgait::coder::CouplingCoder;
use koopgait::dataio::{generate_synthetic_dataset, SyntheticSpec};
use koopgait::koopman::{
    advance, cycle_losses, encode_cycle, fit_closed_form, fit_gradient_descent_embedded,
    loss1_embedded, GdOptions, KoopmanOperator,
};
use koopgait::ovs::{GaitCycle, SegmentOptions};
use koopgait::pipeline::segment_and_split;
use koopgait::synth::{generate_future, generate_future_raw, interpolate, interpolate_raw};
use koopgait::Error;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{cycle, random_coder, rotation, uniform, well_conditioned};

fn walker_cycles() -> Vec<GaitCycle> {
    let seqs = generate_synthetic_dataset(&SyntheticSpec::desk_default(32, 7)).unwrap();
    let (train, _) = segment_and_split(&seqs, SegmentOptions::default(), 0.2).unwrap();
    train.into_iter().take(24).map(|c| c.cycle).collect()
}

fn mean_sq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).map(|v| v * v).mean()
}

#[test]
fn prediction_error_falls_with_matrix_training_loss() {
    let coder = CouplingCoder::identity(32).unwrap();
    let prototype = DMatrix::identity(32, 32);
    // Between nearby checkpoints the error can stall or tick up (epoch 10 -> 25
    // rises ~1%), so the sweep uses well-separated ones.
    let checkpoints = [0, 100, 400];
    let (mut mse, mut loss) = (vec![0.0; checkpoints.len()], vec![0.0; checkpoints.len()]);
    for c in walker_cycles() {
        let emb = encode_cycle(&coder, &c).unwrap();
        for (i, &epochs) in checkpoints.iter().enumerate() {
            let opts = GdOptions {
                epochs,
                ..GdOptions::default()
            };
            let k = fit_gradient_descent_embedded(&emb, &prototype, &opts)
                .unwrap()
                .operator
                .into_matrix();
            loss[i] += loss1_embedded(&k, &emb).unwrap();
            for t in 1..c.len() {
                mse[i] += mean_sq(
                    &generate_future(&coder, &k, &c.frames[0], t).unwrap(),
                    &c.frames[t],
                );
            }
        }
    }
    for i in 1..checkpoints.len() {
        assert!(loss[i] < loss[i - 1], "{loss:?}");
        assert!(
            mse[i] < mse[i - 1],
            "prediction error {mse:?} for Loss1 {loss:?}"
        );
    }
}

#[test]
fn a_full_period_returns_to_the_first_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let coder = random_coder(8, &mut rng);
    let q = uniform(8, 8, -1.0, 1.0, &mut rng).qr().q();
    let mut r = DMatrix::identity(8, 8);
    for b in 0..4 {
        let theta = 2.0 * std::f64::consts::PI * (b + 1) as f64 / 12.0;
        r.view_mut((2 * b, 2 * b), (2, 2))
            .copy_from(&rotation(theta));
    }
    let k_true = &q * r * q.transpose();
    let x0 = well_conditioned(8, &mut rng);
    let frames: Vec<_> = (0..12)
        .map(|t| coder.decode(&advance(&k_true, &x0, t).unwrap()).unwrap())
        .collect();
    let c = cycle(frames, 1);
    let k = fit_closed_form(&coder, &c).unwrap();
    let residual = cycle_losses(&coder, k.matrix(), &c).unwrap().loss2;
    let back = generate_future_raw(&coder, k.matrix(), &c.frames[0], 12).unwrap();
    let err = (back - &c.frames[0]).norm_squared();
    assert!(
        err <= 12.0 * residual + 1e-12,
        "error {err:e}, Loss2 {residual:e}"
    );
}

#[test]
fn fitted_walker_operators_sit_on_the_branch_cut() {
    // One-step walker dynamics flip sign along some direction, and the real
    // principal power is undefined there.
    let coder = CouplingCoder::identity(32).unwrap();
    for c in walker_cycles().iter().take(6) {
        let k = fit_closed_form(&coder, c).unwrap();
        let err = interpolate(&coder, k.matrix(), &c.frames[0], 0.5).unwrap_err();
        assert!(
            matches!(
                err,
                Error::BranchCut { .. } | Error::NotDiagonalizable { .. }
            ),
            "{err}"
        );
    }
}

#[test]
fn half_steps_land_between_neighbours() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let coder = CouplingCoder::identity(16).unwrap();
    for _ in 0..10 {
        let q = uniform(16, 16, -1.0, 1.0, &mut rng).qr().q();
        let mut r = DMatrix::zeros(16, 16);
        for b in 0..8 {
            let theta = 2.0 * std::f64::consts::PI * rng.random_range(1..=3) as f64 / 12.0;
            r.view_mut((2 * b, 2 * b), (2, 2))
                .copy_from(&rotation(theta));
        }
        let k = KoopmanOperator::new(&q * r * q.transpose()).unwrap();
        let x0 = uniform(16, 16, 0.0, 1.0, &mut rng);
        for t in 0..11 {
            let a = advance(k.matrix(), &x0, t).unwrap();
            let b = advance(k.matrix(), &x0, t + 1).unwrap();
            let mid = interpolate_raw(&coder, k.matrix(), &a, 0.5).unwrap();
            let gap = (&a - &b).abs().mean();
            assert!((&mid - &a).abs().mean() < gap && (&mid - &b).abs().mean() < gap);
        }
    }
}
