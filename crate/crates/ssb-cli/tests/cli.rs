//! Black-box tests of the installed binary: the full data -> train -> sample
//! -> evaluate round trip, byte-level reproducibility, config-file handling,
//! and the exit-code contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ssb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ssb"))
}

fn run(args: &[&str]) -> Output {
    ssb().args(args).output().expect("binary should spawn")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("temp paths are utf-8")
}

/// Generates a small dataset and trains a throwaway model in `dir`, returning
/// (data_dir, checkpoint_path) as strings.
fn gen_and_train(dir: &Path) -> (String, String) {
    let data = dir.join("data");
    let rundir = dir.join("run");
    run_ok(&[
        "gen-data",
        "--out",
        path_str(&data),
        "--count",
        "6",
        "--grid-size",
        "16",
        "--experts",
        "2",
        "--ambiguity",
        "0.4",
        "--split",
        "0.67",
        "--seed",
        "3",
    ]);
    run_ok(&[
        "train",
        "--data",
        path_str(&data),
        "--out",
        path_str(&rundir),
        "--steps",
        "10",
        "--batch",
        "2",
        "--channels",
        "4,8",
        "--groups",
        "4",
        "--n-steps",
        "10",
    ]);
    let ckpt = rundir.join("checkpoint.ssbc");
    assert!(ckpt.is_file());
    assert!(rundir.join("loss_trace.csv").is_file());
    assert!(rundir.join("train_config.toml").is_file());
    (path_str(&data).to_string(), path_str(&ckpt).to_string())
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .expect("dir listing")
        .map(|e| {
            let e = e.expect("dir entry");
            let name = e.file_name().to_string_lossy().into_owned();
            (name, fs::read(e.path()).expect("file read"))
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[test]
fn pipeline_round_trip_produces_scored_report() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let (data, ckpt) = gen_and_train(tmp.path());
    let pred = tmp.path().join("pred");
    run_ok(&[
        "sample",
        "--checkpoint",
        &ckpt,
        "--data",
        &data,
        "--out",
        path_str(&pred),
        "--num-samples",
        "3",
        "--nfe",
        "5",
        "--seed",
        "9",
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(pred.join("manifest.json")).expect("manifest"))
            .expect("manifest parses");
    let records = manifest["records"].as_array().expect("records array");
    assert_eq!(records.len(), 2, "6 records at split 0.67 leave 2 in test");
    for rec in records {
        let masks = rec["masks"].as_array().expect("masks array");
        assert_eq!(masks.len(), 3);
        for m in masks {
            assert!(pred.join(m.as_str().expect("mask path")).is_file());
        }
    }

    let report = tmp.path().join("report.csv");
    run_ok(&["evaluate", "--data", &data, "--pred", path_str(&pred), "--out", path_str(&report)]);
    let text = fs::read_to_string(&report).expect("report");
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "id,ged,d_max,ci,d_a,ddi_exp,ddi_gen");
    assert_eq!(lines.len(), 4, "two record rows plus the aggregate");
    assert!(lines[3].starts_with("AGGREGATE,"));
    for line in &lines[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 7);
        // Undefined metrics are empty cells; everything else must be numeric.
        for cell in &cells[1..] {
            if !cell.is_empty() {
                let v: f64 = cell.parse().expect("numeric cell");
                assert!(v.is_finite());
            }
        }
    }
}

#[test]
fn sampling_is_reproducible_across_reruns_and_thread_counts() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let (data, ckpt) = gen_and_train(tmp.path());
    let mut dirs = Vec::new();
    for (name, threads) in [("a", None), ("b", None), ("c", Some("1"))] {
        let out = tmp.path().join(name);
        let mut cmd = ssb();
        cmd.args([
            "sample",
            "--checkpoint",
            &ckpt,
            "--data",
            &data,
            "--out",
            path_str(&out),
            "--num-samples",
            "2",
            "--nfe",
            "5",
            "--seed",
            "9",
        ]);
        if let Some(t) = threads {
            cmd.env("SSB_THREADS", t);
        }
        let res = cmd.output().expect("spawn");
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        dirs.push(out);
    }
    let first = dir_bytes(&dirs[0].join("pred"));
    assert!(!first.is_empty());
    for other in &dirs[1..] {
        assert_eq!(first, dir_bytes(&other.join("pred")), "mask bytes drifted across runs");
    }
    let m0 = fs::read(dirs[0].join("manifest.json")).expect("manifest");
    let m1 = fs::read(dirs[1].join("manifest.json")).expect("manifest");
    assert_eq!(m0, m1, "manifests drifted across identical runs");
}

#[test]
fn training_is_reproducible_at_the_byte_level() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let data = tmp.path().join("data");
    run_ok(&[
        "gen-data",
        "--out",
        path_str(&data),
        "--count",
        "4",
        "--grid-size",
        "16",
        "--experts",
        "2",
        "--split",
        "1.0",
        "--seed",
        "12",
    ]);
    let mut ckpts = Vec::new();
    for name in ["r1", "r2"] {
        let out = tmp.path().join(name);
        run_ok(&[
            "train",
            "--data",
            path_str(&data),
            "--out",
            path_str(&out),
            "--steps",
            "8",
            "--batch",
            "2",
            "--channels",
            "4,8",
            "--groups",
            "4",
            "--n-steps",
            "10",
        ]);
        ckpts.push((
            fs::read(out.join("checkpoint.ssbc")).expect("ckpt"),
            fs::read(out.join("loss_trace.csv")).expect("trace"),
        ));
    }
    assert_eq!(ckpts[0], ckpts[1], "identical trainings wrote different bytes");
}

#[test]
fn config_file_feeds_defaults_and_flags_override_it() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "[data]\ncount = 6\ngrid_size = 16\nexperts = 2\nsplit = 0.67\nseed = 3\n\n\
         [model]\nchannels = [4, 8]\ngroups = 4\n\n\
         [schedule]\nn_steps = 10\n\n\
         [train]\nsteps = 6\nbatch = 2\n\n\
         [sample]\nnum_samples = 2\nnfe = 5\nseed = 9\n",
    )
    .expect("config write");
    let data = tmp.path().join("data");
    // --count overrides the config's 6; everything else comes from the file.
    run_ok(&[
        "gen-data",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&data),
        "--count",
        "4",
        "--split",
        "1.0",
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).expect("manifest"))
            .expect("manifest parses");
    assert_eq!(manifest["records"].as_array().expect("records").len(), 4);
    assert_eq!(manifest["config"]["count"].as_u64(), Some(4));
    assert_eq!(manifest["config"]["grid_size"].as_u64(), Some(16));

    let rundir = tmp.path().join("run");
    run_ok(&[
        "train",
        "--config",
        path_str(&cfg),
        "--data",
        path_str(&data),
        "--out",
        path_str(&rundir),
    ]);
    let echo = fs::read_to_string(rundir.join("train_config.toml")).expect("echo");
    assert!(echo.contains("steps = 6"), "echo should carry the config steps:\n{echo}");

    let pred = tmp.path().join("pred");
    run_ok(&[
        "sample",
        "--config",
        path_str(&cfg),
        "--checkpoint",
        path_str(&rundir.join("checkpoint.ssbc")),
        "--data",
        path_str(&data),
        "--out",
        path_str(&pred),
        "--split",
        "train",
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(pred.join("manifest.json")).expect("manifest"))
            .expect("manifest parses");
    assert_eq!(manifest["num_samples"].as_u64(), Some(2));
    assert_eq!(manifest["nfe"].as_u64(), Some(5));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[data]\ncuont = 3\n").expect("config write");
    let out = run(&["gen-data", "--config", path_str(&bad), "--out", path_str(&data)]);
    assert_eq!(out.status.code(), Some(2), "typoed config keys must be rejected");
}

#[test]
fn exit_codes_follow_the_contract() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let missing = tmp.path().join("nope");

    let out = run(&[
        "train",
        "--data",
        path_str(&missing),
        "--out",
        path_str(&tmp.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2), "missing dataset is a usage error");

    let out = ssb().arg("--definitely-not-a-flag").output().expect("spawn");
    assert_eq!(out.status.code(), Some(2), "clap usage errors exit 2");

    let data = tmp.path().join("data");
    run_ok(&[
        "gen-data",
        "--out",
        path_str(&data),
        "--count",
        "2",
        "--grid-size",
        "16",
        "--experts",
        "2",
        "--split",
        "1.0",
        "--seed",
        "1",
    ]);
    let out = run(&[
        "train",
        "--data",
        path_str(&data),
        "--out",
        path_str(&tmp.path().join("y")),
        "--steps",
        "5",
        "--batch",
        "2",
        "--channels",
        "4,8",
        "--groups",
        "4",
        "--n-steps",
        "10",
        "--lr",
        "1e200",
    ]);
    assert_eq!(out.status.code(), Some(3), "numeric blowup exits 3");
}

#[test]
fn verify_passes_clean_and_fails_under_injected_fault() {
    let out = run(&["verify"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(!text.contains("FAIL"), "clean verify must not fail:\n{text}");
    assert!(text.contains("ok    reverse-marginal-moments"));

    let out = run(&["verify", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(1), "injected fault must exit 1");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("FAIL  rate-symmetry"));
    assert!(text.contains("FAIL  reverse-marginal-moments"));
    assert!(text.contains("ok    schedule-endpoints"), "untouched checks still pass");
}
