use std::path::Path;
use std::process::{Command, Output};

use nbtf::btf::load_btf;
use nbtf::model::load_checkpoint;
use nbtf::propagate::import_neural_btf;

fn nbtf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbtf"))
        .args(args)
        .env_remove("NEUBTF_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth_lambertian(dir: &Path, size: &str) -> std::path::PathBuf {
    let f = dir.join("lamb.nbtf");
    ok(&nbtf(&["synth", "--preset", "lambertian", "--size", size, "--out", p(&f)]));
    f
}

const TINY: &str = "[train]\nbatch_size = 2\n[train.augmentation]\ncrop_size = 8\n";

fn train_tiny(dir: &Path, btf: &Path, out: &str, steps: &str) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, TINY).unwrap();
    nbtf(&[
        "train",
        "--config",
        p(&cfg),
        "--btf",
        p(btf),
        "--out",
        p(&dir.join(out)),
        "--steps",
        steps,
        "--deterministic",
    ])
}

#[test]
fn synth_output_is_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth_lambertian(dir.path(), "32");
    let ds = load_btf(&f).unwrap();
    assert_eq!((ds.height(), ds.width(), ds.len()), (32, 32, 24));

    let held = dir.path().join("held.nbtf");
    ok(&nbtf(&["synth", "--preset", "ggx-textured", "--size", "16", "--angles", "held-out", "--out", p(&held)]));
    assert_eq!(load_btf(&held).unwrap().len(), 9);
    let out = nbtf(&["synth", "--preset", "lambertian", "--angles", "held-out", "--out", p(&held)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn one_step_training_writes_checkpoint_and_loss_row() {
    let dir = tempfile::tempdir().unwrap();
    let btf = synth_lambertian(dir.path(), "16");
    let stdout = ok(&train_tiny(dir.path(), &btf, "run", "1"));
    assert!(stdout.contains("latent_dim = 14"), "config echo missing:\n{stdout}");
    let run = dir.path().join("run");
    let ck = load_checkpoint(run.join("checkpoint.nbck")).unwrap();
    assert_eq!(ck.step, 1);
    let csv = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let echoed = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(echoed.contains("steps = 1") && echoed.contains("crop_size = 8"));
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let btf = synth_lambertian(dir.path(), "16");
    ok(&train_tiny(dir.path(), &btf, "a", "3"));
    ok(&train_tiny(dir.path(), &btf, "b", "3"));
    for f in ["checkpoint.nbck", "loss.csv", "config.toml"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b || f == "config.toml", "{f} differs");
    }
}

#[test]
fn pipeline_propagate_render_eval_latents() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let btf = synth_lambertian(d, "16");
    ok(&train_tiny(d, &btf, "run", "2"));
    let ck = d.join("run/checkpoint.nbck");
    let nbtx = d.join("b.nbtx");
    ok(&nbtf(&["propagate", "--ckpt", p(&ck), "--guidance", p(&btf), "--out", p(&nbtx), "--tileable"]));
    let nb = import_neural_btf(&nbtx).unwrap();
    assert_eq!((nb.height(), nb.width(), nb.texture().depth()), (16, 16, 14));

    let small = d.join("small.nbtx");
    let out = nbtf(&["propagate", "--ckpt", p(&ck), "--guidance", p(&btf), "--scale", "0.5", "--out", p(&small)]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning:"));
    assert_eq!(import_neural_btf(&small).unwrap().height(), 8);

    let img = d.join("slice.pfm");
    ok(&nbtf(&["render", "--nbtx", p(&nbtx), "--cam", "10,20", "--light", "40,180", "--out", p(&img)]));
    let (h, w, _) = nbtf::btf::load_image(&img).unwrap();
    assert_eq!((h, w), (16, 16));
    ok(&nbtf(&["render", "--nbtx", p(&nbtx), "--sweep", "3", "--out-dir", p(&d.join("sweep"))]));
    assert!(d.join("sweep/frame_0002.png").exists());

    let rep = d.join("report");
    let stdout = ok(&nbtf(&["eval", "--ckpt", p(&ck), "--btf", p(&btf), "--pca-ranks", "1,3", "--out", p(&rep)]));
    assert!(stdout.contains("compression ratio") && stdout.contains("rank   3"));
    let csv = std::fs::read_to_string(rep.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 25);

    ok(&nbtf(&["latents", "--nbtx", p(&nbtx), "--out-dir", p(&d.join("lat"))]));
    assert!(d.join("lat/latent_13.png").exists());
}

fn error_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr)
        .lines()
        .find(|l| l.starts_with("error kind="))
        .unwrap_or_default()
        .to_owned()
}

#[test]
fn exit_codes_and_error_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = nbtf(&["synth", "--preset", "marble", "--out", "x.nbtf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error kind=usage exit=2"));

    let bad = d.join("bad.nbtf");
    std::fs::write(&bad, b"NBTF\x01\x00garbage").unwrap();
    let out = nbtf(&["eval", "--ckpt", p(&bad), "--btf", p(&bad)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out).starts_with("error kind=format exit=3"), "{}", error_line(&out));

    let cfg = d.join("typo.toml");
    std::fs::write(&cfg, "[train]\nstepz = 4\n").unwrap();
    let out = nbtf(&["train", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).contains("kind=config"));

    let out = Command::new(env!("CARGO_BIN_EXE_nbtf"))
        .args(["synth", "--preset", "lambertian", "--size", "8", "--out", p(&d.join("t.nbtf"))])
        .env("NEUBTF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
