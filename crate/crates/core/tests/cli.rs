use std::path::Path;
use std::process::{Command, Output};

use clip_assoc::bench::BenchReport;
use clip_assoc::io::read_json_report;
use clip_assoc::metrics::EvalReport;

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clip-assoc"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

#[test]
fn simulate_track_eval_static_pair() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(cli(
        &[
            "simulate",
            "--scenario",
            "static_pair",
            "--out",
            "det.jsonl"
        ],
        d
    )
    .status
    .success());
    assert!(d.join("det.gt.jsonl").is_file());
    assert!(cli(
        &[
            "track",
            "--detections",
            "det.jsonl",
            "--out",
            "tracks.jsonl"
        ],
        d
    )
    .status
    .success());
    let out = cli(
        &[
            "eval",
            "--tracks",
            "tracks.jsonl",
            "--gt",
            "det.gt.jsonl",
            "--report",
            "r.json",
        ],
        d,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: EvalReport = read_json_report(&d.join("r.json")).unwrap();
    assert_eq!(report.aq_proxy, 1.0);
    assert_eq!(report.id_switches, 0);
}

#[test]
fn scenario_file_and_config_driven_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = clip_assoc::simulator::scenario("linear_occlusion_long").unwrap();
    clip_assoc::io::write_scenario(&spec, &d.join("s.toml")).unwrap();
    std::fs::write(d.join("online.toml"), "mode = \"online\"\n").unwrap();
    let run = |args: &[&str]| assert!(cli(args, d).status.success(), "{args:?}");
    run(&[
        "simulate",
        "--scenario",
        "s.toml",
        "--config",
        "online.toml",
        "--out",
        "d.jsonl",
        "--gt",
        "gt.jsonl",
    ]);
    run(&[
        "track",
        "--config",
        "online.toml",
        "--detections",
        "d.jsonl",
        "--out",
        "t.jsonl",
    ]);
    run(&[
        "eval", "--tracks", "t.jsonl", "--gt", "gt.jsonl", "--report", "r.json",
    ]);
    let report: EvalReport = read_json_report(&d.join("r.json")).unwrap();
    assert_eq!(report.id_switches, 0);
    let tracks = clip_assoc::io::read_tracks(&d.join("t.jsonl")).unwrap();
    assert_eq!(tracks.telemetry.stitch_invocations, 0);
}

#[test]
fn online_with_overlap_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(cli(
        &[
            "simulate",
            "--scenario",
            "static_pair",
            "--out",
            "det.jsonl"
        ],
        d
    )
    .status
    .success());
    std::fs::write(
        d.join("c.toml"),
        "mode = \"online\"\nclip_length = 1\noverlap = 1\n",
    )
    .unwrap();
    let out = cli(
        &[
            "track",
            "--config",
            "c.toml",
            "--detections",
            "det.jsonl",
            "--out",
            "t.jsonl",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("online"));
}

#[test]
fn usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = cli(&["track", "--nope"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(
        cli(&["simulate", "--scenario", "no_such", "--out", "x"], d)
            .status
            .code(),
        Some(1)
    );

    std::fs::write(d.join("bad.jsonl"), "{\"frame\":0}\n").unwrap();
    let out = cli(
        &["track", "--detections", "bad.jsonl", "--out", "t.jsonl"],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn bench_both_reports_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(cli(
        &["bench", "--suite", "standard", "--mode", "both", "--report", "b.json"],
        d
    )
    .status
    .success());
    let report: BenchReport = read_json_report(&d.join("b.json")).unwrap();
    assert_eq!(report.modes.len(), 2);
    assert!(report.modes[0].matching_space.avg <= report.modes[1].matching_space.avg);

    assert!(cli(&["bench", "--mode", "naive", "--report", "n.json"], d)
        .status
        .success());
    let naive: BenchReport = read_json_report(&d.join("n.json")).unwrap();
    assert_eq!(naive.modes, report.modes[1..]);
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(cli(
        &["sweep", "--tau", "1,10", "--alpha", "0.3", "--report", "s.csv"],
        d
    )
    .status
    .success());
    let text = std::fs::read_to_string(d.join("s.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "tau,alpha,aq_proxy");
    assert!(lines[1].starts_with("1,0.3,") && lines[2].starts_with("10,0.3,"));
    assert!(lines[3].starts_with("mean,,") && lines[4].starts_with("std,,"));
}
