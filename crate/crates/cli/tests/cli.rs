//! End-to-end checks of the `bimvfi` binary: exit codes, file outputs,
//! determinism of seeded runs, and the resume path.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bimvfi"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const TINY_TRAIN: &str = r#"
[train]
batch_size = 1
steps = 2
crop = 16
levels = 1
seed = 11
lr_init = 1e-4

[train.model]
base_channels = 4
trunk_channels = 8
cost_radius = 1
levels_train = 1
"#;

fn synth_config(count: usize, seed: u64) -> String {
    format!(
        r#"
[synth]
count = {count}
width = 32
height = 32
seed = {seed}
t_choices = [0.25, 0.5, 0.75]
"#
    )
}

#[test]
fn synth_zero_items_writes_manifest_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &synth_config(0, 1));
    let out = dir.path().join("data");
    let res = run(&["synth", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("manifest.txt").exists());
    let entries: Vec<_> = std::fs::read_dir(&out).unwrap().collect();
    assert_eq!(entries.len(), 1, "manifest only");
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &synth_config(2, 7));
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let res = run(&["synth", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(res.status.success());
    }
    for rel in [
        "manifest.txt",
        "item_0000/im0.png",
        "item_0000/flow_t0.flo",
        "item_0001/im1.png",
        "item_0001/valid.png",
    ] {
        let a = std::fs::read(out_a.join(rel)).unwrap();
        let b = std::fs::read(out_b.join(rel)).unwrap();
        assert_eq!(a, b, "{rel} must be byte-identical");
    }
}

#[test]
fn train_produces_identical_loss_csvs_for_equal_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let synth_cfg = write_config(dir.path(), &synth_config(2, 3));
    let data = dir.path().join("data");
    assert!(run(&["synth", "--config", &synth_cfg, "--out", data.to_str().unwrap()])
        .status
        .success());

    let train_cfg = write_config(&dir.path().join("."), TINY_TRAIN);
    let mut csvs = Vec::new();
    for name in ["t1", "t2"] {
        let out = dir.path().join(name);
        let res = run(&[
            "train",
            "--config",
            &train_cfg,
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--deterministic",
        ]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        assert!(out.join("final.ckpt").exists());
        csvs.push(std::fs::read(out.join("loss.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1], "seeded loss curves must be identical");
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    assert!(text.starts_with("step,term,value\n"));
    assert!(text.lines().any(|l| l.starts_with("0,total,")));
}

#[test]
fn resume_reproduces_the_direct_run() {
    let dir = tempfile::tempdir().unwrap();
    let synth_cfg = write_config(dir.path(), &synth_config(2, 5));
    let data = dir.path().join("data");
    assert!(run(&["synth", "--config", &synth_cfg, "--out", data.to_str().unwrap()])
        .status
        .success());

    // Direct: 4 steps. Split: 2 steps, checkpoint, resume for 2 more.
    let four = TINY_TRAIN.replace("steps = 2", "steps = 4");
    let cfg4 = {
        let p = dir.path().join("four.toml");
        std::fs::write(&p, &four).unwrap();
        p
    };
    let direct_out = dir.path().join("direct");
    assert!(run(&[
        "train",
        "--config",
        cfg4.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        direct_out.to_str().unwrap(),
    ])
    .status
    .success());

    let two = TINY_TRAIN.replace("steps = 2", "steps = 4\ncheckpoint_every = 2");
    let cfg_two = {
        let p = dir.path().join("two.toml");
        std::fs::write(&p, &two).unwrap();
        p
    };
    // First half: run to completion but keep the midpoint checkpoint.
    let half_out = dir.path().join("half");
    assert!(run(&[
        "train",
        "--config",
        cfg_two.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        half_out.to_str().unwrap(),
    ])
    .status
    .success());
    let resumed_out = dir.path().join("resumed");
    assert!(run(&[
        "train",
        "--config",
        cfg4.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        resumed_out.to_str().unwrap(),
        "--resume",
        half_out.join("step_000002.ckpt").to_str().unwrap(),
    ])
    .status
    .success());

    // The resumed run recomputes steps 2..4; its rows must match the direct
    // run's tail rows exactly.
    let direct = std::fs::read_to_string(direct_out.join("loss.csv")).unwrap();
    let resumed = std::fs::read_to_string(resumed_out.join("loss.csv")).unwrap();
    let tail: Vec<&str> = direct
        .lines()
        .filter(|l| l.starts_with("2,") || l.starts_with("3,"))
        .collect();
    let resumed_rows: Vec<&str> = resumed
        .lines()
        .filter(|l| l.starts_with("2,") || l.starts_with("3,"))
        .collect();
    assert_eq!(tail, resumed_rows, "resume must replay the remaining steps");
}

#[test]
fn infer_output_size_matches_input_even_when_padded() {
    let dir = tempfile::tempdir().unwrap();
    // Train a 1-step throwaway model at 16x16 to get a checkpoint.
    let synth_cfg = write_config(dir.path(), &synth_config(1, 9));
    let data = dir.path().join("data");
    assert!(run(&["synth", "--config", &synth_cfg, "--out", data.to_str().unwrap()])
        .status
        .success());
    let cfg1 = {
        let p = dir.path().join("one.toml");
        std::fs::write(&p, TINY_TRAIN.replace("steps = 2", "steps = 1")).unwrap();
        p
    };
    let train_out = dir.path().join("train");
    assert!(run(&[
        "train",
        "--config",
        cfg1.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
    ])
    .status
    .success());

    // 30x22 is not divisible by 4: the command must pad and crop back.
    let mut img = bimvfi::Tensor::<f32>::zeros(&[3, 22, 30]);
    for i in 0..img.numel() {
        img.data_mut()[i] = (i % 97) as f32 / 97.0;
    }
    bimvfi::data::save_image(&dir.path().join("f0.png"), &img).unwrap();
    bimvfi::data::save_image(&dir.path().join("f1.png"), &img).unwrap();
    let infer_out = dir.path().join("infer");
    let res = run(&[
        "infer",
        "--checkpoint",
        train_out.join("final.ckpt").to_str().unwrap(),
        "--frame0",
        dir.path().join("f0.png").to_str().unwrap(),
        "--frame1",
        dir.path().join("f1.png").to_str().unwrap(),
        "--t",
        "0.25,0.5,0.75",
        "--out",
        infer_out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for tag in ["0_2500", "0_5000", "0_7500"] {
        let out = bimvfi::data::load_image::<f32>(&infer_out.join(format!("interp_t{tag}.png")))
            .unwrap();
        assert_eq!(out.shape(), &[3, 22, 30], "output size equals input size");
        assert!(infer_out.join(format!("flow_t0_t{tag}.png")).exists());
    }
}

#[test]
fn eval_writes_per_item_rows_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let synth_cfg = write_config(dir.path(), &synth_config(2, 13));
    let data = dir.path().join("data");
    assert!(run(&["synth", "--config", &synth_cfg, "--out", data.to_str().unwrap()])
        .status
        .success());
    let cfg1 = {
        let p = dir.path().join("one.toml");
        std::fs::write(&p, TINY_TRAIN.replace("steps = 2", "steps = 1")).unwrap();
        p
    };
    let train_out = dir.path().join("train");
    assert!(run(&[
        "train",
        "--config",
        cfg1.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
    ])
    .status
    .success());
    let eval_out = dir.path().join("eval");
    let res = run(&[
        "eval",
        "--checkpoint",
        train_out.join("final.ckpt").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(eval_out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "item,t,psnr,ssim,epe");
    assert_eq!(lines.len(), 1 + 2 + 1, "two items plus aggregate");
    assert!(lines[3].starts_with("aggregate,"));
    // Aggregate psnr equals the mean of the item rows.
    let parse = |l: &str, idx: usize| l.split(',').nth(idx).unwrap().parse::<f64>().unwrap();
    let mean = (parse(lines[1], 2) + parse(lines[2], 2)) / 2.0;
    assert!((parse(lines[3], 2) - mean).abs() < 1e-9);
}

#[test]
fn user_errors_exit_one() {
    // Unknown config key.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nbatch_sizee = 1\n");
    let res = run(&[
        "train",
        "--config",
        &cfg,
        "--data",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));

    // Missing checkpoint file.
    let res = run(&[
        "eval",
        "--checkpoint",
        dir.path().join("nope.ckpt").to_str().unwrap(),
        "--data",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("o2").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));

    // Bad usage (unknown flag).
    let res = run(&["train", "--does-not-exist"]);
    assert_eq!(res.status.code(), Some(1));
}
