use std::path::{Path, PathBuf};

use fedmix::cli::run_cli;
use fedmix::config::RunConfig;
use fedmix::fmps;
use fedmix::runner::{load_run_data, run_to_dir};
use fedmix_core::fl::RoundRecord;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn fedmix(args: &[&str]) -> Outcome {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("fedmix").chain(args.iter().copied());
    let code = run_cli(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SPEC: &str = r#"{"groups": 3, "classes": 4, "samples_per_group": 12, "image_size": 8,
                      "label_alpha": 0.5, "drift_strength": 1.0}"#;

fn synth(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, SPEC).unwrap();
    let data = dir.join("data");
    let o = fedmix(&["synth", "--spec", s(&spec), "--seed", "5", "--out", s(&data)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    data
}

fn write_config(dir: &Path, name: &str, algo: &str, arch: &str, rounds: usize) -> PathBuf {
    let text = format!(
        r#"{{"schema": 1, "data": "data", "test_fraction": 0.25,
            "experiment": {{"algo": "{algo}", "rounds": {rounds}, "local_epochs": 1, "batch_size": 8,
                            "seed": 11, "partition": {{"kind": "ds2"}},
                            "model": {{"arch": "{arch}", "num_classes": 4, "image_size": 8, "patch_size": 2,
                                       "embed_dim": 8, "depth": 2, "token_mlp_dim": 8, "channel_mlp_dim": 16,
                                       "stage_widths": [4, 8]}}}}}}"#
    );
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = fedmix(&["frobnicate"]);
    assert_eq!(o.code, 2);
    assert!(!o.stderr.is_empty());
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(fedmix(&["--help"]).code, 0);
    assert!(fedmix(&["--version"]).stdout.contains("fedmix"));
}

#[test]
fn unreadable_paths_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let o = fedmix(&["partition", "--data", s(&missing), "--scheme", "ds2", "--out", s(dir.path())]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("nowhere"), "{}", o.stderr);
    assert_eq!(fedmix(&["run", "--config", s(&missing.join("c.json")), "--out", s(dir.path())]).code, 2);
}

#[test]
fn invalid_configs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = write_config(dir.path(), "bad.json", "fedavg", "mlp_mixer", 0);
    let o = fedmix(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.code, 1, "{}", o.stderr);

    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"schema": 1, "data": "data", "experiment": {}, "extra": 1}"#).unwrap();
    assert_eq!(fedmix(&["run", "--config", s(&unknown), "--out", s(dir.path())]).code, 1);

    let version = dir.path().join("v2.json");
    std::fs::write(&version, r#"{"schema": 2}"#).unwrap();
    let o = fedmix(&["run", "--config", s(&version), "--out", s(dir.path())]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("schema"), "{}", o.stderr);
}

#[test]
fn partition_writes_shards_and_skew() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("split");
    let o = fedmix(&["partition", "--data", s(&data), "--scheme", "ds1", "--clients", "4", "--out", s(&out)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let shards: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("shards.json")).unwrap()).unwrap();
    assert_eq!(shards.as_array().unwrap().len(), 4);
    let skew: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("skew.json")).unwrap()).unwrap();
    assert!(skew["mean_js"].as_f64().unwrap() >= 0.0);

    let o = fedmix(&["partition", "--data", s(&data), "--scheme", "ds1", "--clients", "0", "--out", s(&out)]);
    assert_eq!(o.code, 1);
}

fn read_rounds(dir: &Path) -> Vec<RoundRecord> {
    std::fs::read_to_string(dir.join("rounds.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn run_logs_one_line_per_round_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = write_config(dir.path(), "run.json", "moon", "pool_former", 3);
    let out = dir.path().join("out");
    let o = fedmix(&["run", "--config", s(&cfg), "--out", s(&out), "--checkpoints"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(o.stdout.lines().filter(|l| l.starts_with("round")).count(), 3);

    let rounds = read_rounds(&out);
    assert_eq!(rounds.len(), 3);
    assert_eq!(rounds.iter().map(|r| r.round).collect::<Vec<_>>(), [1, 2, 3]);
    assert!(rounds.iter().all(|r| r.clients.len() == 3 && r.scenario == "ds2"));
    assert!(rounds[0].clients[0].contrastive_loss.is_some());

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rounds"], 3);
    assert_eq!(summary["final_round"]["round"], 3);

    for round in 1..=3 {
        let blob = fmps::read(&out.join(format!("checkpoints/round_{round:03}.fmps"))).unwrap();
        assert_eq!(blob.params.count_params(), rounds[0].shared_params);
        assert_eq!(2 * 3 * blob.value_bytes, rounds[0].bytes);
    }
}

fn strip_wall_seconds(text: &str) -> String {
    text.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            for c in v["clients"].as_array_mut().unwrap() {
                c.as_object_mut().unwrap().remove("wall_seconds");
            }
            v.to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn threaded_clients_match_sequential() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = RunConfig::load(&write_config(dir.path(), "run.json", "fedavg", "resnet_s", 2)).unwrap();
    let (train, test) = load_run_data(&cfg).unwrap();
    let seq = dir.path().join("seq");
    run_to_dir(&cfg, &train, &test, &seq, |_| {}).unwrap();
    let par = dir.path().join("par");
    let threaded = RunConfig { parallel: true, ..cfg };
    run_to_dir(&threaded, &train, &test, &par, |_| {}).unwrap();
    let read = |d: &Path| strip_wall_seconds(&std::fs::read_to_string(d.join("rounds.jsonl")).unwrap());
    assert_eq!(read(&seq), read(&par));
}

#[test]
fn report_is_deterministic_with_one_csv_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let mut runs = Vec::new();
    for (i, (algo, arch)) in [("fedavg", "mlp_mixer"), ("moon", "conv_mixer")].iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("c{i}.json"), algo, arch, 2);
        let out = dir.path().join(format!("run{i}"));
        assert_eq!(fedmix(&["run", "--config", s(&cfg), "--out", s(&out), "--quiet"]).code, 0);
        runs.push(out);
    }
    let args = |fmt: &'static str, table: &'static str| {
        let mut a = vec!["report", "--format", fmt, "--table", table, "--in"];
        a.extend(runs.iter().map(|p| s(p)));
        a
    };
    let csv = fedmix(&args("csv", "runs"));
    assert_eq!(csv.code, 0, "{}", csv.stderr);
    let lines: Vec<&str> = csv.stdout.lines().collect();
    assert_eq!(lines.len(), 1 + runs.len());
    assert!(lines[1].contains("fedavg") && lines[2].contains("moon"), "{}", csv.stdout);

    for (fmt, table) in [("text", "all"), ("markdown", "accuracy"), ("csv", "complexity")] {
        let a = fedmix(&args(fmt, table));
        let b = fedmix(&args(fmt, table));
        assert_eq!(a.code, 0);
        assert_eq!(a.stdout, b.stdout);
    }

    let target = dir.path().join("tables/report.md");
    let mut a = args("markdown", "all");
    a.extend(["--out", s(&target)]);
    assert_eq!(fedmix(&a).code, 0);
    assert!(std::fs::read_to_string(&target).unwrap().contains('|'));
}

#[test]
fn malformed_round_log_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("rounds.jsonl");
    std::fs::write(&log, "{\"round\": 1}\n").unwrap();
    let o = fedmix(&["report", "--in", s(&log)]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("rounds.jsonl"), "{}", o.stderr);
}
