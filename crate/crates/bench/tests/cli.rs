use std::path::Path;
use std::process::{Command, Output};

use sinkgraph_bench::idx::encode_images;
use sinkgraph_bench::synth::synth_dataset;

fn sinkgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sinkgraph"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str =
    "train_count = 64\ntest_count = 16\nbatch_size = 32\nmax_epochs = 1\nwidth1 = 4\nwidth2 = 8\n\
                    disc_hidden1 = 16\ndisc_hidden2 = 8\n";

#[test]
fn denoise_writes_one_row_per_epoch_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    let o = sinkgraph(&[
        "denoise",
        "--config",
        path(&cfg),
        "--seed",
        "3",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with(
        "step,epoch,loss_total,loss_p,loss_ssim,loss_adv,loss_ot,test_mse,grad_norm_layer_0"
    ));
    assert!(lines[0].ends_with(",wall_ms"));
    assert!(!metrics.contains('\r'));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("3,sinkhorn-gan,0.1,1,"));
}

#[test]
fn unknown_config_key_fails_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "max_epochs = 1\nlearning_rate = 0.1\n").unwrap();
    let o = sinkgraph(&["denoise", "--config", path(&cfg), "--out", path(dir.path())]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("learning_rate") && err.contains("line 2"),
        "{err}"
    );
}

#[test]
fn idx_dataset_is_used_when_configured() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.idx");
    let test = dir.path().join("test.idx");
    std::fs::write(&train, encode_images(&synth_dataset(32, 8, 1))).unwrap();
    std::fs::write(&test, encode_images(&synth_dataset(8, 8, 2))).unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(
        &cfg,
        format!(
            "dataset = idx\ntrain_images = {}\ntest_images = {}\nside = 8\nmax_epochs = 1\nbatch_size = 16\n\
             width1 = 2\nwidth2 = 2\ndisc_hidden1 = 4\ndisc_hidden2 = 4\nmode = plain-gan\n",
            path(&train),
            path(&test)
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = sinkgraph(&["denoise", "--config", path(&cfg), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    // 32 images in batches of 16.
    assert!(metrics.lines().nth(1).unwrap().starts_with("2,1,"));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(
        summary.trim_end().ends_with(",0"),
        "plain mode must not call the solver: {summary}"
    );
}

#[test]
fn corrupt_idx_reports_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.idx");
    std::fs::write(&bad, [0u8, 0, 8, 1, 0, 0, 0, 1]).unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(
        &cfg,
        format!(
            "dataset = idx\ntrain_images = {0}\ntest_images = {0}\n",
            path(&bad)
        ),
    )
    .unwrap();
    let o = sinkgraph(&["denoise", "--config", path(&cfg), "--out", path(dir.path())]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("at byte 0"));
}

#[test]
fn benches_run_without_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ot.cfg");
    std::fs::write(&cfg, "sizes = 1, 6\nepsilons = 0.001\ntrials = 2\n").unwrap();
    let o = sinkgraph(&[
        "ot-bench",
        "--config",
        path(&cfg),
        "--seed",
        "1",
        "--out",
        path(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("ot_bench.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);

    let o = sinkgraph(&["attn-bench", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("attn_bench.csv"))
            .unwrap()
            .lines()
            .count(),
        65
    );
}

#[test]
fn missing_out_is_a_usage_error() {
    let o = sinkgraph(&["denoise"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}
