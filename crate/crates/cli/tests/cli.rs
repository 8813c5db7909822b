use std::path::Path;
use std::process::{Command, Output};

fn koopgait(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopgait"))
        .args(args)
        .env_remove("KOOPGAIT_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = koopgait(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_subcommand_and_flag() {
    let top = ok(&["--help"]);
    for sub in [
        "segment",
        "train-coder",
        "fit-k",
        "classify",
        "synth",
        "flops",
        "gen-synthetic",
        "run",
        "--threads",
    ] {
        assert!(top.contains(sub), "missing {sub}");
    }
    let run = ok(&["run", "--help"]);
    for flag in [
        "--profile",
        "--config",
        "--repro",
        "--synthetic",
        "--input",
        "--seed",
        "--out",
        "--coder-epochs",
        "--method",
    ] {
        assert!(run.contains(flag), "run is missing {flag}");
    }
    let seg = ok(&["segment", "--help"]);
    for flag in [
        "--in",
        "--out",
        "--cycle-len",
        "--size",
        "--use-minima",
        "--test-fraction",
    ] {
        assert!(seg.contains(flag), "segment is missing {flag}");
    }
}

#[test]
fn unknown_flags_are_errors() {
    let out = koopgait(&["flops", "--spec", "invka", "--out", "x.csv", "--bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));
}

#[test]
fn flops_report_for_the_bundled_coder() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cost.csv");
    let stdout = ok(&["flops", "--spec", "invka", "--out", s(&out)]);
    assert!(stdout.contains("16777216") && stdout.contains("0.017"));
    let csv = std::fs::read_to_string(out).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("total,summary,16777216")));
}

#[test]
fn missing_input_is_reported_with_its_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = koopgait(&[
        "run",
        "--profile",
        "desk",
        "--input",
        s(&dir.path().join("absent")),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("input"), "{err}");
    assert!(!dir.path().join("run").exists());
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&[
        "gen-synthetic",
        "--out",
        s(&p("raw")),
        "--size",
        "16",
        "--subjects",
        "3",
        "--seed",
        "3",
    ]);
    let seg = ok(&[
        "segment",
        "--in",
        s(&p("raw")),
        "--out",
        s(&p("cycles")),
        "--size",
        "16",
        "--test-fraction",
        "0.2",
    ]);
    assert!(seg.contains("3 sequences"), "{seg}");
    let manifest = std::fs::read_to_string(p("cycles/train/manifest.csv")).unwrap();
    assert!(manifest.starts_with("id,subject_id,source_id,start_index,cycle_path"));

    ok(&[
        "train-coder",
        "--cycles",
        s(&p("cycles/train")),
        "--out",
        s(&p("coder")),
        "--epochs",
        "1",
        "--seed",
        "1",
    ]);
    assert!(p("coder/trace.csv").exists() && p("coder/prototype.ika1").exists());
    for split in ["train", "test"] {
        ok(&[
            "fit-k",
            "--coder",
            s(&p("coder")),
            "--cycles",
            s(&p(&format!("cycles/{split}"))),
            "--method",
            "analytic",
            "--out",
            s(&p(&format!("k/{split}"))),
        ]);
    }
    let cls = ok(&[
        "classify",
        "--train",
        s(&p("k/train")),
        "--test",
        s(&p("k/test")),
        "--out",
        s(&p("report.csv")),
        "--maps",
        s(&p("maps")),
    ]);
    assert!(cls.contains("rank-1 accuracy"));
    let report = std::fs::read_to_string(p("report.csv")).unwrap();
    assert!(report.starts_with("sample_id,true,predicted,"));
    assert!(p("maps/class_1.pgm").exists());

    // two whole steps from a raw frame, scored against a training cycle
    let cycle = std::fs::read_dir(p("cycles/train"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|q| q.extension().is_some_and(|e| e == "ika1"))
        .min()
        .unwrap();
    let k = std::fs::read_dir(p("k/train"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|q| q.extension().is_some_and(|e| e == "ika1"))
        .min()
        .unwrap();
    let frame = std::fs::read_dir(p("raw"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path()
        .join("frame_0000.pgm");
    ok(&[
        "synth",
        "--coder",
        s(&p("coder")),
        "--k",
        s(&k),
        "--frame",
        s(&frame),
        "--steps",
        "2",
        "--reference",
        s(&cycle),
        "--out",
        s(&p("synth")),
    ]);
    let metrics = std::fs::read_to_string(p("synth/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(p("synth/step_002_filtered.pgm").exists());
}

#[test]
fn repro_file_reproduces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    ok(&[
        "--threads",
        "1",
        "run",
        "--profile",
        "desk",
        "--synthetic",
        "default",
        "--seed",
        "7",
        "--out",
        s(&first),
    ]);
    let repro = first.join("repro.json");
    let text = std::fs::read_to_string(&repro).unwrap();
    assert!(text.contains("\"seed\": 7"));
    let second = dir.path().join("b");
    let stdout = ok(&[
        "--threads",
        "1",
        "run",
        "--repro",
        s(&repro),
        "--out",
        s(&second),
    ]);
    assert!(stdout.contains("artifacts match"), "{stdout}");
}
