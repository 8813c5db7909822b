use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use koopgait::classify::LogRegConfig;
use koopgait::coder::load_coder;
use koopgait::dataio::{
    generate_synthetic_dataset, load_tensor, read_gray, resize_nearest, save_pgm, save_tensor,
    Frame, SyntheticSpec, Tensor,
};
use koopgait::flops::{load_specs, model_cost, parse_specs, GAITSET_LIKE_SPEC, INVKA_SPEC};
use koopgait::koopman::KoopmanOperator;
use koopgait::ovs::SegmentOptions;
use koopgait::pipeline::{
    classify_stage, fit_stage, read_input, run_pipeline, save_cycles, save_sequence_images,
    segment_and_split, train_stage, InputSource, PipelineConfig, Repro,
};
use koopgait::synth::{
    clamp01, generate_future_raw, image_metrics, interpolate_raw, median_filter_3x3,
};
use koopgait::training::{FitMethod, KInit, MatrixConfig, TrainConfig};

/// Gait recognition with invertible coupling embeddings and per-cycle Koopman operators.
#[derive(Parser, Debug)]
#[command(name = "koopgait", version)]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "KOOPGAIT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut silhouette sequences into gait cycles.
    Segment(SegmentArgs),
    /// Train the coupling coder on a directory of cycles.
    TrainCoder(TrainArgs),
    /// Fit one operator per cycle.
    FitK(FitArgs),
    /// Train the operator classifier and write a test report.
    Classify(ClassifyArgs),
    /// Generate future or in-between frames from one frame.
    Synth(SynthArgs),
    /// FLOPs report for a layer list.
    Flops(FlopsArgs),
    /// Write the synthetic walker dataset as PGM sequence directories.
    GenSynthetic(GenArgs),
    /// Run every stage end to end.
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct SegmentArgs {
    /// Directory with one sub-directory of frames per sequence.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    cycle_len: usize,
    /// Frames are resampled to size x size.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Cut at minima of the similarity series instead of maxima.
    #[arg(long)]
    use_minima: bool,
    /// Hold out this share of each subject's cycles under out/test (the rest go to out/train).
    #[arg(long, default_value_t = 0.0)]
    test_fraction: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KInitArg {
    Scaled,
    Paper,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    cycles: PathBuf,
    /// JSON training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    k_init: Option<KInitArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Gd,
    Analytic,
}

impl From<MethodArg> for FitMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gd => FitMethod::Gd,
            MethodArg::Analytic => FitMethod::Analytic,
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    coder: PathBuf,
    #[arg(long)]
    cycles: PathBuf,
    #[arg(long, value_enum, default_value = "gd")]
    method: MethodArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Report CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-class weight maps.
    #[arg(long)]
    maps: Option<PathBuf>,
    #[arg(long, default_value_t = 200.0)]
    reg_weight: f64,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long)]
    one_vs_rest: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    coder: PathBuf,
    /// Operator file (IKA1).
    #[arg(long)]
    k: PathBuf,
    /// Start frame: an image, or a 2-D IKA1 tensor.
    #[arg(long)]
    frame: PathBuf,
    #[arg(long, default_value_t = 1)]
    steps: usize,
    /// Step by this fractional power of K instead of whole steps.
    #[arg(long)]
    fractional: Option<f64>,
    /// Cycle tensor to score against (frame j is compared to reference[j mod T]);
    /// without it, frames are scored against the start frame.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FlopsArgs {
    /// Layer list in JSON, or one of the bundled names `invka` and `gaitset-like`.
    #[arg(long)]
    spec: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    Paper,
    Desk,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Starting configuration; defaults to the published hyper-parameters.
    #[arg(long, value_enum, default_value = "paper")]
    profile: ProfileArg,
    /// JSON pipeline config; replaces the profile, flags still override it.
    #[arg(long, conflicts_with = "repro")]
    config: Option<PathBuf>,
    /// Rerun the config stored in a repro.json and check every artifact hash.
    #[arg(long)]
    repro: Option<PathBuf>,
    /// `default` for the bundled walker dataset, or a JSON dataset spec.
    #[arg(long, conflicts_with = "input")]
    synthetic: Option<String>,
    /// Directory with one sub-directory of frames per sequence.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    coder_epochs: Option<usize>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn segment_cmd(a: SegmentArgs) -> Result<()> {
    let seqs = read_input(&InputSource::Directory(a.input), a.size)?;
    let opts = SegmentOptions {
        cycle_len: a.cycle_len,
        use_minima: a.use_minima,
    };
    let (train, test) = segment_and_split(&seqs, opts, a.test_fraction)?;
    if a.test_fraction > 0.0 {
        save_cycles(&a.out.join("train"), &train)?;
        save_cycles(&a.out.join("test"), &test)?;
    } else {
        save_cycles(&a.out, &train)?;
    }
    println!(
        "{} sequences -> {} train / {} test cycles",
        seqs.len(),
        train.len(),
        test.len()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.k_init {
        cfg.k_init = match v {
            KInitArg::Scaled => KInit::Scaled,
            KInitArg::Paper => KInit::Paper,
        };
    }
    let trained = train_stage(&a.cycles, &cfg, &a.out)?;
    if let Some(last) = trained.trace.records.last() {
        println!(
            "epoch {} loss1 {:.6e} loss2 {:.6e}",
            last.epoch, last.loss1, last.loss2
        );
    }
    Ok(())
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let cfg = MatrixConfig {
        method: a.method.into(),
        lr: a.lr,
        epochs: a.epochs,
        ..MatrixConfig::default()
    };
    let ops = fit_stage(&a.coder, &a.cycles, &cfg, &a.out)?;
    println!("{} operators", ops.len());
    Ok(())
}

fn classify_cmd(a: ClassifyArgs) -> Result<()> {
    let cfg = LogRegConfig {
        reg_weight: a.reg_weight,
        max_iter: a.max_iter,
        one_vs_rest: a.one_vs_rest,
        ..LogRegConfig::default()
    };
    let s = classify_stage(&a.train, &a.test, &cfg, &a.out, a.maps.as_deref())?;
    println!(
        "rank-1 accuracy {:.4} (train {:.4}, {} test samples)",
        s.test_accuracy, s.train_accuracy, s.n_test
    );
    Ok(())
}

fn read_frame(path: &Path, w: usize) -> Result<Frame> {
    if path.extension().is_some_and(|e| e == "ika1") {
        Ok(load_tensor(path)?.to_matrix()?)
    } else {
        let f = read_gray(path)?;
        Ok(if f.shape() == (w, w) {
            f
        } else {
            resize_nearest(&f, w)
        })
    }
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let coder = load_coder(&a.coder)?;
    let k = KoopmanOperator::load(&a.k)?;
    let frame = read_frame(&a.frame, coder.w())?;
    let reference = match &a.reference {
        Some(p) => Some(load_tensor(p)?.to_matrices()?),
        None => None,
    };
    fs::create_dir_all(&a.out)?;
    let mut csv = String::from("step,power,file,mse_sim,psnr,uqi\n");
    for j in 1..=a.steps {
        let (power, raw) = match a.fractional {
            Some(r) => (
                r * j as f64,
                interpolate_raw(&coder, k.matrix(), &frame, r * j as f64)?,
            ),
            None => (
                j as f64,
                generate_future_raw(&coder, k.matrix(), &frame, j)?,
            ),
        };
        let name = format!("step_{j:03}");
        save_tensor(
            &Tensor::from_matrix(&raw)?,
            a.out.join(format!("{name}.ika1")),
        )?;
        let clamped = clamp01(raw.clone());
        save_pgm(&clamped, a.out.join(format!("{name}.pgm")))?;
        save_pgm(
            &median_filter_3x3(&clamped),
            a.out.join(format!("{name}_filtered.pgm")),
        )?;
        let target = match &reference {
            Some(r) if !r.is_empty() => &r[j % r.len()],
            _ => &frame,
        };
        let q = image_metrics(&raw, target)?;
        csv.push_str(&format!(
            "{j},{power},{name}.pgm,{},{},{}\n",
            q.mse_sim, q.psnr, q.uqi
        ));
    }
    fs::write(a.out.join("metrics.csv"), csv)?;
    println!("{} frames written to {}", a.steps, a.out.display());
    Ok(())
}

fn flops_cmd(a: FlopsArgs) -> Result<()> {
    let specs = match a.spec.as_str() {
        "invka" => parse_specs(INVKA_SPEC)?,
        "gaitset-like" => parse_specs(GAITSET_LIKE_SPEC)?,
        path => load_specs(path)?,
    };
    let report = model_cost(&specs)?;
    report.write_csv(&a.out)?;
    println!(
        "total {} FLOPs ({} GFLOPs), FL score {:.2e}",
        report.total,
        koopgait::flops::format_gflops(report.total),
        report.fl_score
    );
    Ok(())
}

fn gen_cmd(a: GenArgs) -> Result<()> {
    let mut spec = SyntheticSpec::desk_default(a.size, a.seed);
    if let Some(v) = a.subjects {
        spec.n_subjects = v;
    }
    if let Some(v) = a.cycles {
        spec.cycles_per_subject = v;
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    let seqs = generate_synthetic_dataset(&spec)?;
    save_sequence_images(&a.out, &seqs)?;
    println!("{} sequences written to {}", seqs.len(), a.out.display());
    Ok(())
}

fn run_cmd(a: RunArgs) -> Result<()> {
    let expected = match &a.repro {
        Some(p) => Some(Repro::load(p)?),
        None => None,
    };
    let mut cfg = match (&expected, &a.config) {
        (Some(r), _) => r.config.clone(),
        (None, Some(p)) => read_json(p)?,
        (None, None) => match a.profile {
            ProfileArg::Paper => PipelineConfig::paper(),
            ProfileArg::Desk => PipelineConfig::desk(),
        },
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
        if let InputSource::Synthetic(spec) = &mut cfg.input {
            spec.seed = seed;
        }
    }
    match (&a.synthetic, &a.input) {
        (Some(s), _) if s == "default" => {
            cfg.input = InputSource::Synthetic(SyntheticSpec::desk_default(cfg.w, cfg.seed))
        }
        (Some(s), _) => cfg.input = InputSource::Synthetic(read_json(Path::new(s))?),
        (None, Some(dir)) => cfg.input = InputSource::Directory(dir.clone()),
        (None, None) => {}
    }
    if let Some(out) = a.out {
        cfg.out_dir = out;
    }
    if let Some(e) = a.coder_epochs {
        cfg.train.epochs = e;
    }
    if let Some(m) = a.method {
        cfg.matrix.method = m.into();
    }
    let summary = run_pipeline(&cfg)?;
    println!(
        "rank-1 accuracy {:.4} on {} test cycles; artifacts in {}",
        summary.classify.test_accuracy,
        summary.classify.n_test,
        summary.out_dir.display()
    );
    if let Some(r) = expected {
        let got = &summary.repro.artifacts;
        let mismatched: Vec<&String> = r
            .artifacts
            .iter()
            .filter(|(k, v)| got.get(*k) != Some(*v))
            .map(|(k, _)| k)
            .collect();
        if !mismatched.is_empty() || got.len() != r.artifacts.len() {
            bail!(
                "{} artifacts differ from the repro file, first: {:?}",
                mismatched.len(),
                mismatched.first()
            );
        }
        println!("all {} artifacts match the repro file", got.len());
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Segment(a) => segment_cmd(a),
        Command::TrainCoder(a) => train_cmd(a),
        Command::FitK(a) => fit_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Flops(a) => flops_cmd(a),
        Command::GenSynthetic(a) => gen_cmd(a),
        Command::Run(a) => run_cmd(a),
    }
}
