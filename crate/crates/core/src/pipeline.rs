//! End-to-end runs: input -> segment -> train-coder -> fit-k -> classify.
//!
//! Every stage reads and writes files under the run directory, so a stage can
//! be rerun on its own from the previous stage's output. Run layout:
//!
//! ```text
//! input/      one [N, w, w] tensor per sequence + manifest.csv
//! segments/   train/ and test/, one [T, w, w] tensor per cycle + manifest.csv
//! coder/      coder checkpoint, prototype.ika1, trace.csv
//! operators/  train/ and test/, one w x w operator per cycle + manifest.csv
//! classify/   report.csv, summary.json, maps/
//! repro.json  effective config and SHA-256 of every tensor file
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{fit_logreg, rank1_accuracy, save_weight_maps, write_report, LogRegConfig};
use crate::coder::{load_coder, save_coder};
use crate::dataio::{
    generate_synthetic_dataset, load_sequence, load_tensor, save_pgm, save_tensor,
    SilhouetteSequence, SyntheticSpec, Tensor,
};
use crate::error::{Error, Result};
use crate::koopman::KoopmanOperator;
use crate::ovs::{segment, GaitCycle, SegmentOptions};
use crate::training::{fit_all_matrices, train_coder, MatrixConfig, TrainConfig, TrainedCoder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    Synthetic(SyntheticSpec),
    /// A directory holding one sub-directory of frames per sequence.
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub profile: String,
    pub w: usize,
    pub cycle_len: usize,
    /// Units per ET block; must equal `w * w / 2`.
    pub et_units: usize,
    pub use_minima: bool,
    /// Share of each subject's cycles held out for testing.
    pub test_fraction: f64,
    /// Seeds coder training; the synthetic generator has its own seed.
    pub seed: u64,
    pub train: TrainConfig,
    pub matrix: MatrixConfig,
    pub classifier: LogRegConfig,
    pub input: InputSource,
    pub out_dir: PathBuf,
}

impl PipelineConfig {
    /// The published hyper-parameters: 64x64 frames, 12-frame cycles, 2048-unit
    /// ET blocks, 2000 coder epochs.
    pub fn paper() -> Self {
        Self {
            profile: "paper".into(),
            w: 64,
            cycle_len: 12,
            et_units: 2048,
            use_minima: false,
            test_fraction: 0.2,
            seed: 0,
            train: TrainConfig::default(),
            matrix: MatrixConfig::default(),
            classifier: LogRegConfig::default(),
            input: InputSource::Synthetic(SyntheticSpec::desk_default(64, 0)),
            out_dir: PathBuf::from("run"),
        }
    }

    /// 32x32 frames and a short coder schedule, sized for a laptop.
    pub fn desk() -> Self {
        Self {
            profile: "desk".into(),
            w: 32,
            et_units: 512,
            seed: 7,
            train: TrainConfig {
                epochs: DESK_CODER_EPOCHS,
                ..TrainConfig::default()
            },
            input: InputSource::Synthetic(SyntheticSpec::desk_default(32, 7)),
            ..Self::paper()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::BadSpec(format!(
                "unknown profile {other:?} (expected paper or desk)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w == 0 || !self.w.is_multiple_of(2) {
            return Err(Error::OddResolution(self.w));
        }
        if self.et_units != self.w * self.w / 2 {
            return Err(Error::BadSpec(format!(
                "ET units {} do not match half of a {}x{} frame",
                self.et_units, self.w, self.w
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::BadSpec(format!(
                "test fraction {} outside [0, 1)",
                self.test_fraction
            )));
        }
        if let InputSource::Synthetic(spec) = &self.input {
            if spec.w != self.w {
                return Err(Error::BadSpec(format!(
                    "synthetic resolution {} but w = {}",
                    spec.w, self.w
                )));
            }
        }
        self.train.validate()
    }

    fn segment_options(&self) -> SegmentOptions {
        SegmentOptions {
            cycle_len: self.cycle_len,
            use_minima: self.use_minima,
        }
    }
}

/// Coder epochs of the desk profile. Longer schedules overfit the 48 training
/// cycles: the shared operator pulls every cycle toward the same dynamics and
/// held-out accuracy falls.
pub const DESK_CODER_EPOCHS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    subject_id: u32,
    source_id: String,
    start_index: usize,
    cycle_path: String,
}

fn write_manifest(dir: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("manifest.csv"))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(dir.join("manifest.csv"))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// A cycle with the identifiers that travel with it between stages.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCycle {
    pub id: String,
    pub source_id: String,
    pub cycle: GaitCycle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledOperator {
    pub id: String,
    pub subject_id: u32,
    pub source_id: String,
    pub operator: KoopmanOperator,
}

pub fn save_sequences(dir: &Path, seqs: &[SilhouetteSequence]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    for s in seqs {
        let file = format!("{}.ika1", s.source_id);
        save_tensor(&Tensor::from_matrices(&s.frames)?, dir.join(&file))?;
        rows.push(ManifestRow {
            id: s.source_id.clone(),
            subject_id: s.subject_id,
            source_id: s.source_id.clone(),
            start_index: 0,
            cycle_path: file,
        });
    }
    write_manifest(dir, &rows)
}

pub fn load_sequences(dir: &Path) -> Result<Vec<SilhouetteSequence>> {
    read_manifest(dir)?
        .into_iter()
        .map(|r| {
            SilhouetteSequence::new(
                load_tensor(dir.join(&r.cycle_path))?.to_matrices()?,
                r.source_id,
                r.subject_id,
            )
        })
        .collect()
}

/// Writes each sequence as `dir/<source_id>/frame_NNNN.pgm`, the layout read by [`read_input`].
pub fn save_sequence_images(dir: &Path, seqs: &[SilhouetteSequence]) -> Result<()> {
    for s in seqs {
        let sub = dir.join(&s.source_id);
        fs::create_dir_all(&sub)?;
        for (i, f) in s.frames.iter().enumerate() {
            save_pgm(f, sub.join(format!("frame_{i:04}.pgm")))?;
        }
    }
    Ok(())
}

pub fn read_input(source: &InputSource, w: usize) -> Result<Vec<SilhouetteSequence>> {
    match source {
        InputSource::Synthetic(spec) => generate_synthetic_dataset(spec),
        InputSource::Directory(dir) => {
            if !dir.is_dir() {
                return Err(Error::MissingDirectory(dir.clone()));
            }
            let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            subdirs.sort();
            if subdirs.is_empty() {
                return Err(Error::EmptyInput);
            }
            subdirs.iter().map(|d| load_sequence(d, w)).collect()
        }
    }
}

pub fn save_cycles(dir: &Path, cycles: &[LabeledCycle]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    for c in cycles {
        let file = format!("{}.ika1", c.id);
        save_tensor(&Tensor::from_matrices(&c.cycle.frames)?, dir.join(&file))?;
        rows.push(ManifestRow {
            id: c.id.clone(),
            subject_id: c.cycle.subject_id,
            source_id: c.source_id.clone(),
            start_index: c.cycle.start_index,
            cycle_path: file,
        });
    }
    write_manifest(dir, &rows)
}

pub fn load_cycles(dir: &Path) -> Result<Vec<LabeledCycle>> {
    read_manifest(dir)?
        .into_iter()
        .map(|r| {
            Ok(LabeledCycle {
                cycle: GaitCycle {
                    frames: load_tensor(dir.join(&r.cycle_path))?.to_matrices()?,
                    subject_id: r.subject_id,
                    start_index: r.start_index,
                },
                id: r.id,
                source_id: r.source_id,
            })
        })
        .collect()
}

pub fn save_operators(dir: &Path, ops: &[LabeledOperator]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    for o in ops {
        let file = format!("{}.ika1", o.id);
        o.operator.save(dir.join(&file))?;
        rows.push(ManifestRow {
            id: o.id.clone(),
            subject_id: o.subject_id,
            source_id: o.source_id.clone(),
            start_index: 0,
            cycle_path: file,
        });
    }
    write_manifest(dir, &rows)
}

pub fn load_operators(dir: &Path) -> Result<Vec<LabeledOperator>> {
    read_manifest(dir)?
        .into_iter()
        .map(|r| {
            Ok(LabeledOperator {
                operator: KoopmanOperator::load(dir.join(&r.cycle_path))?,
                id: r.id,
                subject_id: r.subject_id,
                source_id: r.source_id,
            })
        })
        .collect()
}

/// Segments every sequence and holds out the last `test_fraction` of each
/// subject's cycles (at least one when the subject has two or more).
pub fn segment_and_split(
    seqs: &[SilhouetteSequence],
    opts: SegmentOptions,
    test_fraction: f64,
) -> Result<(Vec<LabeledCycle>, Vec<LabeledCycle>)> {
    let mut by_subject: BTreeMap<u32, Vec<LabeledCycle>> = BTreeMap::new();
    for s in seqs {
        for (k, cycle) in segment(s, opts)?.into_iter().enumerate() {
            by_subject
                .entry(s.subject_id)
                .or_default()
                .push(LabeledCycle {
                    id: format!("{}_c{k:02}", s.source_id),
                    source_id: s.source_id.clone(),
                    cycle,
                });
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, cycles) in by_subject {
        let n = cycles.len();
        let mut n_test = (n as f64 * test_fraction).round() as usize;
        if test_fraction > 0.0 && n >= 2 {
            n_test = n_test.clamp(1, n - 1);
        }
        let n_train = n - n_test.min(n);
        for (i, c) in cycles.into_iter().enumerate() {
            if i < n_train {
                train.push(c);
            } else {
                test.push(c);
            }
        }
    }
    Ok((train, test))
}

pub fn segment_stage(
    input_dir: &Path,
    opts: SegmentOptions,
    test_fraction: f64,
    out: &Path,
) -> Result<(usize, usize)> {
    let seqs = load_sequences(input_dir)?;
    let (train, test) = segment_and_split(&seqs, opts, test_fraction)?;
    save_cycles(&out.join("train"), &train)?;
    save_cycles(&out.join("test"), &test)?;
    Ok((train.len(), test.len()))
}

pub fn train_stage(cycles_dir: &Path, cfg: &TrainConfig, out: &Path) -> Result<TrainedCoder> {
    let cycles: Vec<GaitCycle> = load_cycles(cycles_dir)?
        .into_iter()
        .map(|c| c.cycle)
        .collect();
    let trained = train_coder(&cycles, cfg)?;
    save_coder(&trained.coder, out)?;
    trained.prototype.save(out.join("prototype.ika1"))?;
    trained.trace.write_csv(out.join("trace.csv"))?;
    Ok(trained)
}

/// Fits one operator per cycle in `cycles_dir` with the checkpoint in `coder_dir`.
pub fn fit_stage(
    coder_dir: &Path,
    cycles_dir: &Path,
    cfg: &MatrixConfig,
    out: &Path,
) -> Result<Vec<LabeledOperator>> {
    let coder = load_coder(coder_dir)?;
    let prototype_path = coder_dir.join("prototype.ika1");
    let prototype = if prototype_path.exists() {
        KoopmanOperator::load(prototype_path)?
    } else {
        KoopmanOperator::identity(coder.w())
    };
    let labeled = load_cycles(cycles_dir)?;
    let cycles: Vec<GaitCycle> = labeled.iter().map(|c| c.cycle.clone()).collect();
    let fits = fit_all_matrices(&coder, &prototype, &cycles, cfg)?;
    let ops: Vec<LabeledOperator> = labeled
        .into_iter()
        .zip(fits)
        .map(|(c, f)| LabeledOperator {
            id: c.id,
            subject_id: c.cycle.subject_id,
            source_id: c.source_id,
            operator: f.operator,
        })
        .collect();
    save_operators(out, &ops)?;
    Ok(ops)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifySummary {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub iterations: usize,
    pub n_train: usize,
    pub n_test: usize,
}

pub fn classify_stage(
    train_dir: &Path,
    test_dir: &Path,
    cfg: &LogRegConfig,
    report: &Path,
    maps: Option<&Path>,
) -> Result<ClassifySummary> {
    let train = load_operators(train_dir)?;
    let test = load_operators(test_dir)?;
    let samples: Vec<(KoopmanOperator, u32)> = train
        .iter()
        .map(|o| (o.operator.clone(), o.subject_id))
        .collect();
    let model = fit_logreg(&samples, cfg)?;
    let rows: Vec<(String, KoopmanOperator, u32)> = test
        .into_iter()
        .map(|o| (o.id, o.operator, o.subject_id))
        .collect();
    if let Some(parent) = report.parent() {
        fs::create_dir_all(parent)?;
    }
    let test_accuracy = write_report(&model, &rows, report)?;
    if let Some(dir) = maps {
        save_weight_maps(&model, dir)?;
    }
    Ok(ClassifySummary {
        train_accuracy: rank1_accuracy(&model, &samples)?,
        test_accuracy,
        iterations: model.iterations(),
        n_train: samples.len(),
        n_test: rows.len(),
    })
}

/// SHA-256 of every `.ika1` file under `root`, keyed by `/`-separated relative path.
pub fn hash_artifacts(root: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if path.extension().is_some_and(|e| e == "ika1") {
                let rel = path.strip_prefix(root).expect("inside root");
                let key = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                out.insert(key, format!("{:x}", Sha256::digest(fs::read(&path)?)));
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repro {
    pub config: PipelineConfig,
    pub seed: u64,
    pub artifacts: BTreeMap<String, String>,
}

impl Repro {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub classify: ClassifySummary,
    pub repro: Repro,
}

fn staged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(stage))
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary> {
    staged("config", cfg.validate())?;
    if let InputSource::Directory(dir) = &cfg.input {
        if !dir.is_dir() {
            return Err(Error::MissingDirectory(dir.clone()).in_stage("input"));
        }
    }
    let out = cfg.out_dir.as_path();
    staged("input", fs::create_dir_all(out).map_err(Error::from))?;

    let input_dir = out.join("input");
    staged(
        "input",
        read_input(&cfg.input, cfg.w).and_then(|seqs| save_sequences(&input_dir, &seqs)),
    )?;

    let segments = out.join("segments");
    staged(
        "segment",
        segment_stage(
            &input_dir,
            cfg.segment_options(),
            cfg.test_fraction,
            &segments,
        ),
    )?;

    let coder_dir = out.join("coder");
    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train
    };
    staged(
        "train-coder",
        train_stage(&segments.join("train"), &train_cfg, &coder_dir),
    )?;

    let operators = out.join("operators");
    for split in ["train", "test"] {
        staged(
            "fit-k",
            fit_stage(
                &coder_dir,
                &segments.join(split),
                &cfg.matrix,
                &operators.join(split),
            ),
        )?;
    }

    let classify_dir = out.join("classify");
    let summary = staged(
        "classify",
        classify_stage(
            &operators.join("train"),
            &operators.join("test"),
            &cfg.classifier,
            &classify_dir.join("report.csv"),
            Some(&classify_dir.join("maps")),
        ),
    )?;
    staged(
        "classify",
        serde_json::to_string_pretty(&summary)
            .map_err(Error::from)
            .and_then(|s| fs::write(classify_dir.join("summary.json"), s).map_err(Error::from)),
    )?;

    let repro = Repro {
        config: cfg.clone(),
        seed: cfg.seed,
        artifacts: staged("repro", hash_artifacts(out))?,
    };
    staged(
        "repro",
        serde_json::to_string_pretty(&repro)
            .map_err(Error::from)
            .and_then(|s| fs::write(out.join("repro.json"), s).map_err(Error::from)),
    )?;
    Ok(RunSummary {
        out_dir: out.to_path_buf(),
        classify: summary,
        repro,
    })
}
