//! Deterministic parametric walkers used in place of a real silhouette corpus.
//!
//! Each subject is a fixed torso rectangle with a leg bar hinged at the hip and
//! an arm bar hinged at the shoulder. Both bars swing sinusoidally with a
//! subject-specific amplitude, mean lean and relative phase, and the leg
//! shortens once per cycle as the knee bends. The phase of frame
//! `i` is computed from `(i + offset) mod period`, so noiseless frames repeat
//! exactly every `period` frames.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, SilhouetteSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub cycles_per_subject: usize,
    pub period: usize,
    pub w: usize,
    /// Per-pixel flip probability.
    pub noise: f64,
    pub seed: u64,
    /// When set, subjects share every gait parameter except a global swing scale.
    #[serde(default)]
    pub amplitude_only: bool,
}

impl SyntheticSpec {
    /// Ten subjects, six cycles of twelve frames, 2% pixel noise.
    pub fn desk_default(w: usize, seed: u64) -> Self {
        Self {
            n_subjects: 10,
            cycles_per_subject: 6,
            period: 12,
            w,
            noise: 0.02,
            seed,
            amplitude_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.period < 4 {
            return Err(Error::BadSpec(format!("period {} < 4", self.period)));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::BadSpec(format!(
                "noise {} outside [0, 1]",
                self.noise
            )));
        }
        if self.n_subjects == 0 || self.cycles_per_subject == 0 {
            return Err(Error::BadSpec(
                "need at least one subject and one cycle".into(),
            ));
        }
        if self.w < 8 {
            return Err(Error::BadSpec(format!("resolution {} < 8", self.w)));
        }
        Ok(())
    }

    pub fn sequence_len(&self) -> usize {
        self.cycles_per_subject * self.period + self.period / 2
    }
}

#[derive(Debug, Clone, Copy)]
struct Walker {
    leg_amp: f64,
    arm_amp: f64,
    leg_lean: f64,
    arm_lean: f64,
    arm_lag: f64,
    knee: f64,
    knee_phase: f64,
    offset: usize,
}

impl Walker {
    fn draw(rng: &mut ChaCha8Rng, period: usize) -> Self {
        Self {
            leg_amp: rng.random_range(0.60..0.85),
            arm_amp: rng.random_range(0.50..0.75),
            leg_lean: rng.random_range(0.05..0.20),
            arm_lean: rng.random_range(-0.15..0.0),
            arm_lag: rng.random_range(0.3..0.6),
            knee: rng.random_range(0.45..0.60),
            knee_phase: rng.random_range(-0.3..0.3),
            offset: rng.random_range(0..period),
        }
    }

    fn scaled(scale: f64) -> Self {
        Self {
            leg_amp: 0.72 * scale,
            arm_amp: 0.62 * scale,
            leg_lean: 0.12,
            arm_lean: -0.08,
            arm_lag: 0.45,
            knee: 0.52,
            knee_phase: 0.0,
            offset: 0,
        }
    }

    fn render(&self, w: usize, phase_index: usize, period: usize) -> Frame {
        let theta = 2.0 * PI * (phase_index % period) as f64 / period as f64;
        let leg = self.leg_lean + self.leg_amp * theta.sin();
        let arm = self.arm_lean - self.arm_amp * (theta + self.arm_lag).sin();
        let bend = 1.0 - self.knee * 0.5 * (1.0 + (theta + self.knee_phase).cos());
        let s = w as f64;
        let bars = [
            // (pivot x, pivot y, angle from straight down, length, half width)
            (0.5 * s, 0.54 * s, leg, 0.46 * s * bend, 0.15 * s),
            (0.5 * s, 0.22 * s, arm, 0.38 * s, 0.12 * s),
        ];
        DMatrix::from_fn(w, w, |r, c| {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let torso = (0.42 * s..0.58 * s).contains(&x) && (0.16 * s..0.56 * s).contains(&y);
            let limb = bars.iter().any(|&(px, py, angle, len, half)| {
                let (ux, uy) = (angle.sin(), angle.cos());
                let (dx, dy) = (x - px, y - py);
                let along = dx * ux + dy * uy;
                let across = (dx * uy - dy * ux).abs();
                (0.0..=len).contains(&along) && across <= half
            });
            if torso || limb {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Generates one sequence per subject; identical specs give bit-identical output.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<Vec<SilhouetteSequence>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let walkers: Vec<Walker> = (0..spec.n_subjects)
        .map(|s| {
            if spec.amplitude_only {
                let t = if spec.n_subjects > 1 {
                    s as f64 / (spec.n_subjects - 1) as f64
                } else {
                    0.5
                };
                Walker::scaled(0.6 + 0.8 * t)
            } else {
                Walker::draw(&mut rng, spec.period)
            }
        })
        .collect();

    walkers
        .iter()
        .enumerate()
        .map(|(s, walker)| {
            let frames = (0..spec.sequence_len())
                .map(|i| {
                    let mut frame = walker.render(spec.w, i + walker.offset, spec.period);
                    if spec.noise > 0.0 {
                        for v in frame.iter_mut() {
                            if rng.random::<f64>() < spec.noise {
                                *v = 1.0 - *v;
                            }
                        }
                    }
                    frame
                })
                .collect();
            let subject = s as u32 + 1;
            SilhouetteSequence::new(frames, format!("{subject:03}-syn-01"), subject)
        })
        .collect()
}
