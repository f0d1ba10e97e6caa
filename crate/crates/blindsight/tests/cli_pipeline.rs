//! End-to-end runs of the `blindsight` binary: the full
//! synth -> characterize -> aggregate -> flops pipeline through files,
//! plus the mask and sinkfind subcommands and the exit-code contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn blindsight(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blindsight"))
        .args(args)
        .current_dir(dir)
        .env_remove("BLINDSIGHT_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = blindsight(args, dir);
    assert!(
        out.status.success(),
        "`blindsight {}` failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn full_pipeline_and_determinism() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();

    ok(
        &[
            "synth", "--out", "cap", "--layers", "2", "--heads", "2", "--prompts", "4",
            "--seed", "11", "--head-dim", "16", "--min-image-tokens", "24",
            "--max-image-tokens", "40",
        ],
        dir,
    );
    assert!(dir.join("cap/manifest.json").exists());
    assert!(dir.join("cap/ground_truth.json").exists());
    assert!(dir.join("cap/layouts.json").exists());

    // Same seed, second directory: identical capture bytes.
    ok(
        &[
            "synth", "--out", "cap2", "--layers", "2", "--heads", "2", "--prompts", "4",
            "--seed", "11", "--head-dim", "16", "--min-image-tokens", "24",
            "--max-image-tokens", "40",
        ],
        dir,
    );
    assert_eq!(
        fs::read(dir.join("cap/prompts/p0000/q.bin")).unwrap(),
        fs::read(dir.join("cap2/prompts/p0000/q.bin")).unwrap()
    );
    assert_eq!(
        fs::read(dir.join("cap/manifest.json")).unwrap(),
        fs::read(dir.join("cap2/manifest.json")).unwrap()
    );

    // Overwrite refused without --force.
    let clash = blindsight(&["synth", "--out", "cap", "--prompts", "1"], dir);
    assert_eq!(clash.status.code(), Some(2));

    ok(
        &["characterize", "--capture", "cap", "--out", "verdicts.json", "--jobs", "2"],
        dir,
    );
    let verdicts: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("verdicts.json")).unwrap()).unwrap();
    assert_eq!(verdicts["config"]["alpha"], 0.1);
    assert_eq!(verdicts["config"]["order_policy"], "paper_fixed");
    assert_eq!(verdicts["config"]["sinks"]["mode"], "prefix");
    assert_eq!(verdicts["config"]["sinks"]["fraction"], 0.1);
    let first = &verdicts["prompts"][0];
    assert!(first["prompt_id"].is_string());
    assert!(first["alpha"].is_number());
    assert!(first["order_policy"].is_string());
    let v0 = &first["verdicts"][0];
    for key in ["layer", "head", "chosen", "nmse"] {
        assert!(!v0[key].is_null(), "verdict missing {key}");
    }

    // Re-running characterize is byte-identical.
    ok(
        &["characterize", "--capture", "cap", "--out", "verdicts2.json", "--jobs", "1"],
        dir,
    );
    assert_eq!(
        fs::read(dir.join("verdicts.json")).unwrap(),
        fs::read(dir.join("verdicts2.json")).unwrap()
    );

    ok(
        &["aggregate", "--verdicts", "verdicts.json", "--out", "headmap.json"],
        dir,
    );
    let headmap: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("headmap.json")).unwrap()).unwrap();
    assert_eq!(headmap["gamma_c"], 0.25);
    assert_eq!(headmap["gamma_s"], 0.6);
    assert_eq!(headmap["gamma_d"], 0.6);
    assert_eq!(headmap["layers"], 2);
    assert_eq!(headmap["map"].as_array().unwrap().len(), 2);
    let summary = fs::read_to_string(dir.join("headmap_distribution.csv")).unwrap();
    let share_sum: f64 = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((share_sum - 1.0).abs() < 1e-9);

    ok(
        &[
            "flops", "--headmap", "headmap.json", "--layouts", "cap/layouts.json",
            "--out-dir", "flops", "--exact",
        ],
        dir,
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("flops/report.json")).unwrap())
            .unwrap();
    assert!(report["mean_model_reduction"].is_number());
    assert!(report["mean_model_reduction_exact"].is_number());
    assert!(report["note"].as_str().unwrap().contains("not a measured speedup"));
    let cdf = fs::read_to_string(dir.join("flops/cdf.csv")).unwrap();
    let values: Vec<f64> = cdf
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse::<f64>().unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[0] <= w[1]), "cdf not sorted: {values:?}");
    let reductions = fs::read_to_string(dir.join("flops/reductions.csv")).unwrap();
    assert!(reductions.starts_with("prompt_id,reduction,reduction_exact\n"));
    assert!(reductions.lines().last().unwrap().starts_with("mean,"));
}

#[test]
fn missing_capture_dir_exits_2_without_output() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    let out = blindsight(
        &["characterize", "--capture", "no_such_dir", "--out", "verdicts.json"],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.join("verdicts.json").exists());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn order_flag_switches_candidate_ordering() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    ok(
        &[
            "synth", "--out", "cap", "--layers", "1", "--heads", "2", "--prompts", "2",
            "--seed", "3",
        ],
        dir,
    );
    ok(
        &["characterize", "--capture", "cap", "--out", "paper.json"],
        dir,
    );
    ok(
        &["characterize", "--capture", "cap", "--out", "flops.json", "--order", "flops"],
        dir,
    );
    let paper: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("paper.json")).unwrap()).unwrap();
    let flops: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("flops.json")).unwrap()).unwrap();
    assert_eq!(paper["config"]["order_policy"], "paper_fixed");
    assert_eq!(flops["config"]["order_policy"], "flops_ascending");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    fs::write(
        dir.join("cfg.json"),
        r#"{"alpha": 0.05, "gamma_c": 0.5, "sink_fraction": 0.2}"#,
    )
    .unwrap();
    ok(
        &["synth", "--out", "cap", "--layers", "1", "--heads", "1", "--prompts", "1"],
        dir,
    );
    ok(
        &[
            "characterize", "--capture", "cap", "--out", "v.json", "--config", "cfg.json",
            "--alpha", "0.2",
        ],
        dir,
    );
    let verdicts: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("v.json")).unwrap()).unwrap();
    assert_eq!(verdicts["config"]["alpha"], 0.2, "flag must beat config file");
    assert_eq!(verdicts["config"]["sinks"]["fraction"], 0.2, "file value applies");

    ok(
        &[
            "aggregate", "--verdicts", "v.json", "--out", "hm.json", "--config", "cfg.json",
        ],
        dir,
    );
    let headmap: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("hm.json")).unwrap()).unwrap();
    assert_eq!(headmap["gamma_c"], 0.5);
}

#[test]
fn mask_pbm_and_json_emission() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    fs::write(
        dir.join("layout.json"),
        r#"{"seq_len": 4, "segments": [{"kind": "text", "start": 0, "end": 4}]}"#,
    )
    .unwrap();
    ok(
        &[
            "mask", "--layout", "layout.json", "--type", "dense", "--emit", "pbm",
            "--out", "mask.pbm",
        ],
        dir,
    );
    assert_eq!(
        fs::read_to_string(dir.join("mask.pbm")).unwrap(),
        "P1\n4 4\n1000\n1100\n1110\n1111\n"
    );

    fs::write(
        dir.join("two_images.json"),
        r#"{"seq_len": 40, "segments": [
            {"kind": "image", "start": 0, "end": 20},
            {"kind": "image", "start": 20, "end": 40}]}"#,
    )
    .unwrap();
    ok(
        &[
            "mask", "--layout", "two_images.json", "--type", "document-sink",
            "--emit", "json", "--out", "mask.json",
        ],
        dir,
    );
    let mask: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("mask.json")).unwrap()).unwrap();
    assert_eq!(mask["diag_fallback"], true);
    assert_eq!(mask["mask"]["mask_type"], "document_sink");
    assert!(mask["allowed_cells"].as_u64().unwrap() > 0);
}

#[test]
fn sinkfind_emits_offsets_json() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    // Gemma-style capture: uniform image length, fixed planted offsets.
    ok(
        &[
            "synth", "--out", "cap", "--layers", "1", "--heads", "2", "--prompts", "3",
            "--seed", "5", "--pattern", "sink", "--base", "gemma",
            "--min-images", "2", "--max-images", "2",
            "--min-image-tokens", "30", "--max-image-tokens", "30",
            "--sink-mode", "offsets", "--sink-offsets", "0,7,15",
        ],
        dir,
    );
    ok(
        &["sinkfind", "--capture", "cap", "--top-frac", "0.1", "--out", "offsets.json"],
        dir,
    );
    let found: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("offsets.json")).unwrap()).unwrap();
    assert_eq!(found["uniform_image_len"], 30);
    assert_eq!(found["top_fraction"], 0.1);
    assert_eq!(
        found["offsets"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect::<Vec<_>>(),
        vec![0, 7, 15]
    );
    assert!(found["histogram"]["samples"].as_u64().unwrap() > 0);
}
