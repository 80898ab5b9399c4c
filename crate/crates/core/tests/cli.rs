use std::path::Path;
use std::process::{Command, Output};

fn stgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stgan")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    stgan(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) -> (String, String) {
    let out = dir.join("synth");
    let status = code(&["synth", "--out", p(&out), "--frame-size", "128", "--frames", "5", "--n-blobs", "3"]);
    assert_eq!(status, 0);
    (p(&out.join("u")).to_string(), p(&out.join("v")).to_string())
}

const TINY: [&str; 14] = [
    "--tau", "2", "--crop-size", "64", "--gen-depth", "6", "--gen-width", "2", "--disc-width", "2", "--batch-size",
    "1", "--n-train", "4",
];

fn train(dir: &Path, u: &str, v: &str, extra: &[&str]) -> Output {
    let run = dir.join("run");
    let mut args = vec!["train", "--u", u, "--v", v, "--out", p(&run), "--quiet", "--n-val", "1"];
    for pair in TINY.chunks(2) {
        if !extra.contains(&pair[0]) {
            args.extend_from_slice(pair);
        }
    }
    args.extend_from_slice(extra);
    stgan(&args)
}

#[test]
fn config_errors_exit_two() {
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    let dir = tempfile::tempdir().unwrap();
    let (u, v) = synth(dir.path());
    let out = train(dir.path(), &u, &v, &["--tau", "1", "--steps", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau"));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "tau = 3\nlamda_s = 5\n").unwrap();
    let out = stgan(&["train", "--config", p(&cfg), "--u", &u, "--v", &v, "--out", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda_s"));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let (u, v) = synth(dir.path());
    let out = train(dir.path(), &u, &v, &["--steps", "20", "--learning-rate", "1e300"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn data_errors_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    let missing = p(&dir.path().join("missing")).to_string();
    let out = train(dir.path(), &missing, &missing, &["--steps", "1"]);
    assert_eq!(out.status.code(), Some(4));

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = train(dir.path(), p(&empty), p(&empty), &["--steps", "1"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn checkpoint_errors_exit_five() {
    let dir = tempfile::tempdir().unwrap();
    let (u, _) = synth(dir.path());
    let ckpt = dir.path().join("junk.ckpt");
    std::fs::write(&ckpt, b"STGANCKP not really a checkpoint").unwrap();
    let out = dir.path().join("pred");
    assert_eq!(code(&["translate", "--checkpoint", p(&ckpt), "--input", &u, "--out", p(&out)]), 5);
}

#[test]
fn resume_continues_and_rejects_other_architectures() {
    let dir = tempfile::tempdir().unwrap();
    let (u, v) = synth(dir.path());
    assert_eq!(train(dir.path(), &u, &v, &["--steps", "2"]).status.code(), Some(0));
    let ckpt = dir.path().join("run").join("final.ckpt");
    let resumed = train(dir.path(), &u, &v, &["--steps", "3", "--resume", p(&ckpt)]);
    assert_eq!(resumed.status.code(), Some(0), "{}", String::from_utf8_lossy(&resumed.stderr));
    let log = std::fs::read_to_string(dir.path().join("run").join("losses.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let other = train(dir.path(), &u, &v, &["--steps", "3", "--gen-width", "4", "--resume", p(&ckpt)]);
    assert_eq!(other.status.code(), Some(5));
}

#[test]
fn help_lists_flags_with_defaults() {
    for (sub, flags) in [
        ("synth", &["--n-blobs", "--transform", "--lag", "--seed"][..]),
        ("train", &["--tau", "--lambda-s", "--lambda-t", "--learning-rate", "--spatial-only", "--resume"][..]),
        ("translate", &["--direction", "--mode", "--tile", "--overlap"][..]),
        ("evaluate", &["--pred", "--real", "--out"][..]),
        ("reveal", &["--checkpoint", "--input", "--mode"][..]),
    ] {
        let out = stgan(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8_lossy(&out.stdout);
        for flag in flags {
            assert!(text.contains(flag), "{sub} --help lacks {flag}");
        }
        if sub == "train" {
            assert!(text.contains("default: 100") && text.contains("default: 10]"));
        }
    }
}

#[test]
fn reveal_writes_third_channel_frames() {
    let dir = tempfile::tempdir().unwrap();
    let (u, v) = synth(dir.path());
    assert_eq!(train(dir.path(), &u, &v, &["--steps", "1"]).status.code(), Some(0));
    let ckpt = dir.path().join("run").join("final.ckpt");
    let out = dir.path().join("revealed");
    assert_eq!(code(&["reveal", "--checkpoint", p(&ckpt), "--input", &u, "--out", p(&out)]), 0);
    let frames = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with("_pred.png"))
        .count();
    assert_eq!(frames, 5);
}
