use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

/// Small model so every command finishes in seconds.
const TINY: &str = "\
# tiny models for tests
encoder.char_dim = 6
encoder.filters = 6
encoder.orders = 2,3
encoder.max_len = 16
detector.proj_dim = 8
detector.sense_dim = 4
pretrain.epochs = 2
kmeans.epochs = 3
selftrain.max_epochs = 3
supervised.epochs = 3
morph.epochs = 2
morph.proj_dim = 8
folds = 3
";

fn wscd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wscd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) -> String {
    let out = wscd(args);
    assert_eq!(
        code(&out),
        0,
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.conf"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    /// Synthetic corpus at `sa-sb.tsv` plus its morphology file.
    fn synthetic(&self) -> (String, String) {
        ok(&[
            "build-dataset",
            "--synthetic",
            "default",
            "--seed",
            "1",
            "--out",
            &self.p("sa-sb.tsv"),
        ]);
        (self.p("sa-sb.tsv"), self.p("sa-sb.morph.tsv"))
    }

    /// Small real-style dataset built from a 40-pair cognate list.
    fn small(&self) -> String {
        let list: String = (0..40)
            .map(|i| {
                let w = format!("ka{}ra{}", char::from(b'a' + (i % 26) as u8), i);
                format!("{w}\t{}\n", w.replace('k', "g"))
            })
            .collect();
        fs::write(self.path("list.tsv"), list).unwrap();
        ok(&[
            "build-dataset",
            "--cognates",
            &self.p("list.tsv"),
            "--neg-ratio",
            "50:50",
            "--out",
            &self.p("xa-xb.tsv"),
        ]);
        self.p("xa-xb.tsv")
    }

    fn tiny(&self) -> String {
        self.p("tiny.conf")
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synthetic_dataset_is_reproducible() {
    let w = Work::new();
    let (tsv, morph) = w.synthetic();
    let first = (fs::read(&tsv).unwrap(), fs::read(&morph).unwrap());
    ok(&[
        "build-dataset",
        "--synthetic",
        "default",
        "--seed",
        "1",
        "--out",
        &w.p("again.tsv"),
    ]);
    assert_eq!(first.0, fs::read(w.path("again.tsv")).unwrap());
    assert_eq!(first.1, fs::read(w.path("again.morph.tsv")).unwrap());
    ok(&[
        "build-dataset",
        "--synthetic",
        "default",
        "--seed",
        "2",
        "--out",
        &w.p("other.tsv"),
    ]);
    assert_ne!(first.0, fs::read(w.path("other.tsv")).unwrap());
    let manifest = json(&w.path("sa-sb.tsv.manifest.json"));
    assert_eq!(manifest["cognates"], 300);
    assert_eq!(manifest["non_cognates"], 300);
}

#[test]
fn negative_ratio_is_honored() {
    let w = Work::new();
    let tsv = w.small();
    let body = fs::read_to_string(&tsv).unwrap();
    let rows: Vec<&str> = body.lines().collect();
    let negatives = rows.iter().filter(|l| l.ends_with("\t0")).count();
    let positives = rows.iter().filter(|l| l.ends_with("\t1")).count();
    assert_eq!(positives, 40, "{body}");
    assert!(negatives.abs_diff(40) <= 1, "{negatives} negatives");
}

#[test]
fn edited_dataset_fails_manifest_check() {
    let w = Work::new();
    let tsv = w.small();
    let body = fs::read_to_string(&tsv).unwrap();
    let (_, rest) = body.split_once('\n').unwrap();
    fs::write(&tsv, rest).unwrap();
    let out = wscd(&[
        "train-detector",
        "--mode",
        "baseline",
        "--data",
        &tsv,
        "--out",
        &w.p("run"),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn weakly_supervised_needs_knowledge() {
    let w = Work::new();
    let tsv = w.small();
    let out = wscd(&[
        "train-detector",
        "--mode",
        "weakly",
        "--data",
        &tsv,
        "--out",
        &w.p("run"),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--init"));
}

#[test]
fn malformed_config_is_a_config_error() {
    let w = Work::new();
    fs::write(w.path("bad.conf"), "encoder.filters 12\n").unwrap();
    assert_eq!(code(&wscd(&["show-config", "--config", &w.p("bad.conf")])), 2);
    fs::write(w.path("bad.conf"), "encoder.filters = twelve\n").unwrap();
    let out = wscd(&[
        "train-detector",
        "--config",
        &w.p("bad.conf"),
        "--mode",
        "baseline",
        "--data",
        &w.small(),
        "--out",
        &w.p("run"),
    ]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&wscd(&["show-config", "--set", "no.such.key=1"])), 2);
}

#[test]
fn morphology_checkpoint_feeds_the_detector() {
    let w = Work::new();
    let (tsv, morph) = w.synthetic();
    let ckpt = w.p("m.wscd");
    let printed = ok(&[
        "train-morph",
        "--config",
        &w.tiny(),
        "--unimorph",
        &morph,
        "--resample",
        "-80",
        "--out",
        &ckpt,
    ]);
    assert!(w.path("m.wscd.vocab").exists() && w.path("m.wscd.config.txt").exists());
    assert!(printed.contains("morphology pairs"), "{printed}");
    ok(&[
        "train-detector",
        "--config",
        &w.tiny(),
        "--mode",
        "weakly",
        "--init",
        &ckpt,
        "--data",
        &tsv,
        "--out",
        &w.p("run"),
    ]);
    let report = json(&w.path("run/report.json"));
    assert_eq!(report["mode"], "weakly");
    assert_eq!(report["folds"].as_array().unwrap().len(), 3);
    for f in report["folds"].as_array().unwrap() {
        let f = f["f"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f));
    }
    assert!(w.path("run/assignments.tsv").exists());
    assert!(w.path("run/results.txt").exists());
}

#[test]
fn resample_grows_the_morphology_set() {
    let w = Work::new();
    let (_, morph) = w.synthetic();
    let lines = fs::read_to_string(&morph).unwrap().lines().count();
    let printed = ok(&[
        "train-morph",
        "--config",
        &w.tiny(),
        "--set",
        "morph.epochs=1",
        "--unimorph",
        &morph,
        "--resample",
        "30",
        "--out",
        &w.p("m.wscd"),
    ]);
    let used: usize = printed
        .split("from ")
        .nth(1)
        .unwrap()
        .split(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    let expected = (lines as f64 * 1.3).round() as usize;
    assert!(used.abs_diff(expected) <= 1, "{used} vs {expected} from {lines}");
}

#[test]
fn divergence_exits_with_numeric_error() {
    let w = Work::new();
    let (_, morph) = w.synthetic();
    let out = wscd(&[
        "train-morph",
        "--config",
        &w.tiny(),
        "--objective",
        "plain",
        "--lr",
        "1e30",
        "--unimorph",
        &morph,
        "--out",
        &w.p("m.wscd"),
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!w.path("m.wscd").exists());
}

#[test]
fn unsupervised_ignores_labels() {
    let w = Work::new();
    let tsv = w.small();
    ok(&[
        "train-detector",
        "--config",
        &w.tiny(),
        "--mode",
        "unsupervised",
        "--data",
        &tsv,
        "--out",
        &w.p("a"),
    ]);

    // Same pairs in the same order with every label flipped; no manifest.
    let flipped: String = fs::read_to_string(&tsv)
        .unwrap()
        .lines()
        .map(|l| match l.rsplit_once('\t') {
            Some((head, "1")) => format!("{head}\t0\n"),
            Some((head, "0")) => format!("{head}\t1\n"),
            _ => format!("{l}\n"),
        })
        .collect();
    let other = w.path("xa-xb-flipped.tsv");
    fs::write(&other, flipped).unwrap();

    ok(&[
        "train-detector",
        "--config",
        &w.tiny(),
        "--mode",
        "unsupervised",
        "--data",
        &other.display().to_string(),
        "--out",
        &w.p("b"),
    ]);
    assert_eq!(
        fs::read(w.path("a/assignments.tsv")).unwrap(),
        fs::read(w.path("b/assignments.tsv")).unwrap()
    );
}

#[test]
fn config_snapshot_replays_the_run() {
    let w = Work::new();
    let tsv = w.small();
    ok(&[
        "train-detector",
        "--config",
        &w.tiny(),
        "--mode",
        "supervised",
        "--seed",
        "9",
        "--data",
        &tsv,
        "--out",
        &w.p("run"),
    ]);
    let first = fs::read(w.path("run/report.json")).unwrap();
    fs::remove_file(w.path("run/report.json")).unwrap();
    ok(&["train-detector", "--config", &w.p("run/config.txt")]);
    assert_eq!(first, fs::read(w.path("run/report.json")).unwrap());
    let report = json(&w.path("run/report.json"));
    assert_eq!(report["seed"], 9);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 40);
}

#[test]
fn ablation_grid_has_one_row_per_point() {
    let w = Work::new();
    let (tsv, morph) = w.synthetic();
    ok(&[
        "ablate",
        "--config",
        &w.tiny(),
        "--set",
        "morph.epochs=1",
        "--mode",
        "supervised",
        "--data",
        &tsv,
        "--unimorph",
        &morph,
        "--grid",
        "-90..-70:5",
        "--out",
        &w.p("abl"),
    ]);
    let rows = json(&w.path("abl/ablation.json"));
    let rows = rows.as_array().unwrap();
    let percents: Vec<i64> = rows.iter().map(|r| r["percent"].as_i64().unwrap()).collect();
    assert_eq!(percents, vec![-90, -85, -80, -75, -70]);
    let sizes: Vec<u64> = rows.iter().map(|r| r["morph_pairs"].as_u64().unwrap()).collect();
    assert!(sizes.windows(2).all(|w| w[0] < w[1]), "{sizes:?}");
}

#[test]
fn protocol_scores_and_comparison() {
    let w = Work::new();
    let tsv = w.small();
    let base = [
        "train-detector",
        "--config",
        &w.tiny(),
        "--data",
        &tsv,
        "--protocol",
        "fixed-fold",
    ];
    ok(&[&base[..], &["--mode", "baseline", "--out", &w.p("b")]].concat());
    let scores = json(&w.path("b/scores.json"));
    assert_eq!(scores["scores"].as_array().unwrap().len(), 10);
    let cmp = w.p("b/scores.json");
    let printed = ok(&[
        &base[..],
        &["--mode", "supervised", "--out", &w.p("s"), "--compare", &cmp],
    ]
    .concat());
    assert!(printed.contains("vs baseline"), "{printed}");
    let sig = json(&w.path("s/significance.json"));
    let p = sig["p"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn selfcheck_passes_and_detects_faults() {
    let printed = ok(&["selfcheck"]);
    assert!(
        printed.contains("numerics") && printed.contains("checkpoint format"),
        "{printed}"
    );
    let out = wscd(&["selfcheck", "--inject-fault"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn log_file_is_json_lines() {
    let w = Work::new();
    let log = w.p("run.log");
    ok(&[
        "--log",
        &log,
        "build-dataset",
        "--synthetic",
        "default",
        "--out",
        &w.p("sa-sb.tsv"),
    ]);
    let text = fs::read_to_string(&log).unwrap();
    assert!(text.lines().count() >= 2);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["level"].is_string());
    }
    assert!(text.contains("\"event\":\"dataset_written\""));
}
