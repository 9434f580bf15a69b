use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::Parser;
use face::cli::Cli;
use face::pipeline::read_metrics;

const SUBCOMMANDS: [&str; 8] = ["gen-data", "prep", "stats", "train", "reconstruct", "eval", "ablate", "gradcheck"];

/// A model small enough to train a few steps in a test.
const TINY: &str = r#"
[model]
resolution = 16
d_model = 16
d_latent = 16
bottleneck_dim = 4
latent_tokens = 4
encoder_layers = 1
decoder_layers = 1
heads = 2
max_faces = 40
points = 64
freq_bands = 2
coord_embed_dim = 4
head_dim = 16
ffn_mult = 2

[train]
steps = 6
batch_size = 2
checkpoint_every = 3
log_every = 1

[eval]
samples = 256
"#;

const CORPUS: &str = r#"
seed = 4
[[mesh]]
shape = { kind = "cube" }
count = 2
[[mesh]]
shape = { kind = "cylinder", segments = 5 }
"#;

fn face(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_face")).args(args).env("FACE_LOG", "quiet").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn help_text(args: &[&str]) -> String {
    let e = Cli::try_parse_from(args).unwrap_err();
    assert_eq!(e.kind(), clap::error::ErrorKind::DisplayHelp);
    e.render().to_string()
}

fn check_snapshot(name: &str, actual: &str) {
    let file = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots").join(format!("{name}.txt"));
    if std::env::var_os("UPDATE_SNAPSHOTS").is_some() {
        std::fs::write(&file, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&file).unwrap_or_else(|_| panic!("missing snapshot {}", file.display()));
    assert_eq!(actual, expected, "help for {name} changed; rerun with UPDATE_SNAPSHOTS=1 to accept");
}

#[test]
fn help_snapshots() {
    check_snapshot("help", &help_text(&["face", "--help"]));
    for sub in SUBCOMMANDS {
        check_snapshot(&format!("help_{sub}"), &help_text(&["face", sub, "--help"]));
    }
}

#[test]
fn help_lists_defaults() {
    let expect = [
        ("prep", &["--resolution <RESOLUTION>", "[default: 128]", "[default: zyx]"][..]),
        ("stats", &["[default: 128]"]),
        ("reconstruct", &["--max-faces", "--seed <SEED>", "[default: 0]"]),
        ("eval", &["[default: 4096]", "[default: 0]"]),
        ("ablate", &["[default: 1000]", "orderings", "queries", "heads"]),
        ("gradcheck", &["[default: 0]"]),
    ];
    for (sub, needles) in expect {
        let text = help_text(&["face", sub, "--help"]);
        for n in needles {
            assert!(text.contains(n), "{sub} help lacks {n}:\n{text}");
        }
        assert!(text.contains("--threads <THREADS>"), "{sub} help lacks --threads");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(face(&["--help"]).status.code(), Some(0));
    assert_eq!(face(&[]).status.code(), Some(1));
    assert_eq!(face(&["prep", "--bogus"]).status.code(), Some(1));
    assert_eq!(face(&["prep", "--in", "x.obj", "--out", "y", "--order", "spiral"]).status.code(), Some(1));
    assert_eq!(face(&["prep", "--in", "/nonexistent.obj", "--out", "/tmp/never"]).status.code(), Some(2));
    assert_eq!(face(&["stats", "--in", "/nonexistent"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.obj");
    std::fs::write(&bad, "v 0 0 0\nf 1 2 3\n").unwrap();
    let out = face(&["prep", "--in", path(&bad), "--out", path(&dir.path().join("t.ftok"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nstepz = 3\n").unwrap();
    let out = face(&["train", "--config", path(&cfg), "--data", path(dir.path()), "--out", path(&dir.path().join("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn prep_reports_the_ratio() {
    let dir = tempfile::tempdir().unwrap();
    // A 20-segment torus ring of 25: 1000 faces, all distinct at R = 1024.
    let mesh = face_core::synth::torus(20, 25);
    assert_eq!(mesh.faces.len(), 1000);
    let obj = dir.path().join("torus.obj");
    std::fs::write(&obj, face::obj::write_obj(&mesh)).unwrap();
    let ftok = dir.path().join("torus.ftok");
    let out = face(&["prep", "--in", path(&obj), "--resolution", "1024", "--out", path(&ftok)]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("faces 1000\n"), "{text}");
    assert!(text.contains("tokens 1001\n"));
    assert!(text.contains("ratio 0.111222\n"));
    assert!(text.contains("ratio_without_eos 0.111111\n"));
    assert_eq!(std::fs::metadata(&ftok).unwrap().len(), 20 + 18 * 1001);
}

#[test]
fn eval_of_a_mesh_against_itself_is_small() {
    let dir = tempfile::tempdir().unwrap();
    let obj = dir.path().join("ico.obj");
    std::fs::write(&obj, face::obj::write_obj(&face_core::synth::icosphere(2))).unwrap();
    let out = face(&["eval", "--gt", path(&obj), "--pred", path(&obj)]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let cd: f64 = text.lines().next().unwrap().strip_prefix("chamfer ").unwrap().parse().unwrap();
    // Two independent 4096-point samples of a unit-extent surface.
    assert!(cd < 0.02, "{cd}");
    assert_eq!(stdout(&face(&["eval", "--gt", path(&obj), "--pred", path(&obj)])), text);
}

#[test]
fn gradcheck_passes() {
    let out = face(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains(", 0 failed"));
}

#[test]
fn corpus_train_resume_and_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("corpus.toml");
    std::fs::write(&spec, CORPUS).unwrap();
    let data = d.join("data");
    assert_eq!(face(&["gen-data", "--spec", path(&spec), "--out", path(&data)]).status.code(), Some(0));
    let manifest = std::fs::read_to_string(data.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
    assert!(manifest.starts_with("file,kind,seed,vertices,faces\n000_cube.obj,cube,"));

    let stats = face(&["stats", "--in", path(&data), "--resolution", "16"]);
    assert_eq!(stats.status.code(), Some(0));
    assert!(stdout(&stats).contains("aggregate"));

    let cfg = d.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let full = d.join("full.ckpt");
    assert_eq!(face(&["train", "--config", path(&cfg), "--data", path(&data), "--out", path(&full)]).status.code(), Some(0));

    // Stop after three steps, then resume to six.
    let part = d.join("part.ckpt");
    let first = face(&["train", "--config", path(&cfg), "--data", path(&data), "--out", path(&part), "--until", "3"]);
    assert_eq!(first.status.code(), Some(0));
    assert!(stdout(&first).starts_with("steps 3\n"));
    let resumed = face(&[
        "train", "--config", path(&cfg), "--data", path(&data), "--out", path(&part), "--resume", path(&part),
    ]);
    assert_eq!(resumed.status.code(), Some(0), "{}", String::from_utf8_lossy(&resumed.stderr));

    let strip = |p: &Path| -> Vec<(u64, u32, u64, u64)> {
        read_metrics(&face::pipeline::metrics_path(p))
            .unwrap()
            .iter()
            .map(|r| (r.step, r.loss.to_bits(), r.slot_accuracy.to_bits(), r.lr.to_bits()))
            .collect()
    };
    let a = strip(&full);
    assert_eq!(a.len(), 6);
    assert_eq!(a, strip(&part));
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&part).unwrap());

    let target = data.join("000_cube.obj");
    let rec = d.join("rec.obj");
    let out = face(&["reconstruct", "--ckpt", path(&full), "--in", path(&target), "--out", path(&rec), "--max-faces", "0"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "faces 0\nstop limit\n");
    assert_eq!(std::fs::read_to_string(&rec).unwrap(), "");

    let out = face(&["reconstruct", "--ckpt", path(&full), "--in", path(&target), "--out", path(&rec), "--max-faces", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let faces: usize = stdout(&out).lines().next().unwrap().strip_prefix("faces ").unwrap().parse().unwrap();
    assert!(faces <= 3);
}
