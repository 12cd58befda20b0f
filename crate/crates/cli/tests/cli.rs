use std::path::Path;
use std::process::{Command, Output};

fn jiif(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jiif"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Flags shrinking the model and data so a run takes a fraction of a second.
const TINY: &[&str] = &[
    "--dataset",
    "synthetic",
    "--feature-dim",
    "4",
    "--residual-blocks",
    "1",
    "--hidden",
    "16,8",
    "--scale",
    "4",
    "--patch-size",
    "16",
    "--samples",
    "64",
    "--synthetic-count",
    "2",
    "--synthetic-size",
    "24",
];

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(TINY.iter().copied()).collect()
}

#[test]
fn help_lists_flag_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = jiif(dir.path(), &["train", "--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for needle in [
        "--epochs", "200", "--lr", "1e-4", "--scale", "--strategy", "graph_attention", "--mode", "joint",
        "--no-residual", "--samples", "30720", "--patch-size", "256", "--feature-dim", "128", "1024,512,256,128",
        "--config",
    ] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
    let eval = stdout(&jiif(dir.path(), &["eval", "--help"]));
    for needle in ["--baseline", "--scales", "4,8,16", "--noise-sigma", "651", "--save-maps", "--crop"] {
        assert!(eval.contains(needle), "missing {needle}");
    }
}

#[test]
fn train_writes_checkpoint_log_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = jiif(dir.path(), &with_tiny(&["train", "--epochs", "1", "--name", "smoke"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let run = dir.path().join("runs/smoke");
    assert!(run.join("ckpt_1").is_file());
    assert_eq!(std::fs::read_to_string(run.join("latest")).unwrap().trim(), "ckpt_1");
    let log = std::fs::read_to_string(run.join("loss.log")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for key in ["step=", "epoch=", "lr=", "loss="] {
        assert!(log.lines().all(|l| l.contains(key)));
    }
    let config = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(config.contains("feature_dim = 4"));
}

#[test]
fn resolved_config_reruns_to_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = jiif(dir.path(), &with_tiny(&["train", "--epochs", "2", "--name", "a", "--seed", "5"]));
    assert!(first.status.success(), "{}", stderr(&first));
    let again = jiif(dir.path(), &["train", "--config", "runs/a/config.toml", "--name", "b"]);
    assert!(again.status.success(), "{}", stderr(&again));
    let a = std::fs::read(dir.path().join("runs/a/ckpt_2")).unwrap();
    let b = std::fs::read(dir.path().join("runs/b/ckpt_2")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(dir.path().join("runs/a/loss.log")).unwrap(),
        std::fs::read(dir.path().join("runs/b/loss.log")).unwrap()
    );

    for name in ["a", "b"] {
        let out = jiif(
            dir.path(),
            &["eval", "--config", &format!("runs/{name}/config.toml"), "--checkpoint", &format!("runs/{name}"), "--name", name, "--scales", "4"],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(
        std::fs::read(dir.path().join("runs/a/eval_synthetic_model.txt")).unwrap(),
        std::fs::read(dir.path().join("runs/b/eval_synthetic_model.txt")).unwrap()
    );
}

#[test]
fn resume_continues_from_the_latest_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let full = jiif(dir.path(), &with_tiny(&["train", "--epochs", "2", "--name", "full"]));
    assert!(full.status.success());
    let part = jiif(dir.path(), &with_tiny(&["train", "--epochs", "1", "--name", "part"]));
    assert!(part.status.success());
    let resumed = jiif(dir.path(), &with_tiny(&["train", "--epochs", "2", "--name", "part", "--resume", "runs/part"]));
    assert!(resumed.status.success(), "{}", stderr(&resumed));
    assert_eq!(
        std::fs::read(dir.path().join("runs/full/ckpt_2")).unwrap(),
        std::fs::read(dir.path().join("runs/part/ckpt_2")).unwrap()
    );
    let log = std::fs::read_to_string(dir.path().join("runs/part/loss.log")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn bicubic_eval_prints_one_number_per_scale() {
    let dir = tempfile::tempdir().unwrap();
    let out = jiif(dir.path(), &with_tiny(&["eval", "--baseline", "bicubic", "--scales", "4,8", "--save-maps"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("x4") && text.contains("x8") && text.contains("Bicubic"), "{text}");
    let report = std::fs::read_to_string(dir.path().join("runs/default/eval_synthetic_bicubic.txt")).unwrap();
    assert_eq!(report.lines().filter(|l| l.contains("average_rmse=")).count(), 2);
    assert!(dir.path().join("runs/default/maps_synthetic_bicubic/synth_0000_x4_error.png").is_file());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = jiif(dir.path(), &with_tiny(&["train", "--mode", "value_only"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mode"));

    std::fs::write(dir.path().join("bad.toml"), "[train]\nepochz = 3\n").unwrap();
    let out = jiif(dir.path(), &["train", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("epochz"), "{}", stderr(&out));

    let out = jiif(dir.path(), &["train", "--dataset", "synthetic", "--scale", "4", "--patch-size", "18"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("patch_size"));
}

#[test]
fn missing_data_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = jiif(dir.path(), &["eval", "--baseline", "bicubic", "--dataset", "nyu_v2"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("nyu_v2"));
    let out = jiif(dir.path(), &with_tiny(&["eval", "--checkpoint", "missing_ckpt"]));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn prepared_synthetic_data_trains_and_infers() {
    let dir = tempfile::tempdir().unwrap();
    for (split, seed) in [("train", "1"), ("test", "2")] {
        let out = jiif(
            dir.path(),
            &["prepare-data", "synth", "--split", split, "--count", "2", "--seed", seed, "--size", "32"],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert!(dir.path().join("data/synthetic/train/synth_0001_rgb.png").is_file());
    assert!(dir.path().join("data/synthetic/test/meta.json").is_file());

    let out = jiif(dir.path(), &with_tiny(&["train", "--epochs", "1"]));
    assert!(out.status.success(), "{}", stderr(&out));

    // An 8x8 depth input with a 32x32 guide gives a 32x32 prediction.
    let guide = dir.path().join("data/synthetic/test/synth_0000_rgb.png");
    let pair = &jiif::data::load_dataset(jiif::data::DatasetName::Synthetic, jiif::data::Split::Test, &dir.path().join("data"))
        .unwrap()[0];
    let lr = jiif::interpolation::bicubic_downsample(&pair.depth, 4).unwrap();
    let lr_path = dir.path().join("lr.png");
    jiif::data::write_depth_png(&lr_path, &lr, 0.1).unwrap();
    let out = jiif(
        dir.path(),
        &[
            "infer",
            "--checkpoint",
            "runs/default",
            "--lr-depth",
            lr_path.to_str().unwrap(),
            "--guide",
            guide.to_str().unwrap(),
            "--output",
            "pred/out.png",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let pred = jiif::data::read_depth_png(&dir.path().join("pred/out.png"), 1.0).unwrap();
    assert_eq!(pred.dims(), (32, 32));
}

#[test]
fn ablate_emits_seven_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = jiif(dir.path(), &with_tiny(&["ablate", "--epochs", "1", "--name", "abl"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("runs/abl/ablation.txt")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with("table=")).collect();
    assert_eq!(rows.len(), 7);
    assert_eq!(rows.iter().filter(|l| l.contains("full_method=true")).count(), 2);
    assert!(stdout(&out).contains("(full method)"));
}

#[test]
fn demo_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = jiif(dir.path(), &["demo", "--epochs", "1", "--output-dir", "out"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("Bicubic"));
    assert!(dir.path().join("out/demo/ckpt_1").is_file());
}
