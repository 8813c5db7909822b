//! Coder checkpoints: one IKA1 tensor per parameter plus `coder.json`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Activation, CouplingCoder, EtBlock};
use crate::dataio::{load_tensor, save_tensor, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    w: usize,
    eps: f64,
    momentum: f64,
    activation: Activation,
}

const PARTS: [&str; 6] = [
    "weight",
    "bias",
    "gamma",
    "beta",
    "running_mean",
    "running_var",
];

fn vectors(block: &EtBlock) -> [&DVector<f64>; 5] {
    [
        &block.bias,
        &block.bn_gamma,
        &block.bn_beta,
        &block.bn_mean,
        &block.bn_var,
    ]
}

/// Writes the coder into `dir`, creating it if needed. Returns the files written.
pub fn save_coder(coder: &CouplingCoder, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, block) in [("f", &coder.f), ("g", &coder.g)] {
        let path = dir.join(format!("{name}_{}.ika1", PARTS[0]));
        save_tensor(&Tensor::from_matrix(&block.weight)?, &path)?;
        written.push(path);
        for (part, v) in PARTS[1..].iter().zip(vectors(block)) {
            let path = dir.join(format!("{name}_{part}.ika1"));
            save_tensor(&Tensor::from_vector(v.as_slice())?, &path)?;
            written.push(path);
        }
    }
    let meta = Meta {
        w: coder.w(),
        eps: coder.f.bn_eps,
        momentum: coder.f.bn_momentum,
        activation: coder.f.activation,
    };
    let path = dir.join("coder.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?)?;
    written.push(path);
    Ok(written)
}

/// Loads a checkpoint in eval mode. Values round through 32-bit storage.
pub fn load_coder(dir: &Path) -> Result<CouplingCoder> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let meta: Meta = serde_json::from_str(&fs::read_to_string(dir.join("coder.json"))?)?;
    let half = meta.w * meta.w / 2;
    let block = |name: &str| -> Result<EtBlock> {
        let weight: DMatrix<f64> =
            load_tensor(dir.join(format!("{name}_weight.ika1")))?.to_matrix()?;
        let mut v = Vec::new();
        for part in &PARTS[1..] {
            let t = DVector::from_vec(
                load_tensor(dir.join(format!("{name}_{part}.ika1")))?.to_vector()?,
            );
            if t.len() != half {
                return Err(Error::DimMismatch(format!(
                    "{name}_{part} has {} entries, expected {half}",
                    t.len()
                )));
            }
            v.push(t);
        }
        if weight.shape() != (half, half) {
            return Err(Error::DimMismatch(format!(
                "{name}_weight is {:?}, expected {half}x{half}",
                weight.shape()
            )));
        }
        let mut v = v.into_iter();
        let mut next = || v.next().expect("five vectors");
        Ok(EtBlock {
            weight,
            bias: next(),
            bn_gamma: next(),
            bn_beta: next(),
            bn_mean: next(),
            bn_var: next(),
            bn_eps: meta.eps,
            bn_momentum: meta.momentum,
            activation: meta.activation,
            training: false,
        })
    };
    CouplingCoder::from_parts(block("f")?, block("g")?, meta.w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coder::CoderConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_preserves_f32_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cfg = CoderConfig::new(4);
        cfg.activation = Activation::Tanh;
        let coder = CouplingCoder::new_random(&cfg, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = save_coder(&coder, dir.path()).unwrap();
        assert_eq!(files.len(), 13);
        let back = load_coder(dir.path()).unwrap();
        assert_eq!(back.w(), 4);
        assert_eq!(back.f.activation, Activation::Tanh);
        let rounded = coder.f.weight.map(|v| v as f32 as f64);
        assert_eq!(back.f.weight, rounded);
        // a second save/load is exact
        let dir2 = tempfile::tempdir().unwrap();
        save_coder(&back, dir2.path()).unwrap();
        assert_eq!(load_coder(dir2.path()).unwrap(), back);
    }

    #[test]
    fn missing_checkpoint_directory() {
        let err = load_coder(Path::new("/definitely/not/here")).unwrap_err();
        assert!(matches!(err, Error::MissingDirectory(_)));
    }
}
