use std::process::{Command, Output};

fn nbiot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbiot"))
        .args(args)
        .env_remove("NBIOT_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn anchor_scan_10mhz_lists_eight_anchors() {
    let o = nbiot(&["anchor-scan", "--bw", "10"]);
    assert!(o.status.success());
    let rows = data_rows(&stdout(&o));
    let prbs: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(prbs, ["4", "9", "14", "19", "30", "35", "40", "45"]);
    assert!(rows
        .iter()
        .all(|r| r[2].trim_start_matches('-') == "2500.0"));
}

#[test]
fn anchor_scan_5mhz_offsets_are_7_5khz() {
    let o = nbiot(&["anchor-scan", "--bw", "5"]);
    assert!(o.status.success());
    let rows = data_rows(&stdout(&o));
    assert!(!rows.is_empty());
    assert!(rows
        .iter()
        .all(|r| r[2].trim_start_matches('-') == "7500.0"));
}

#[test]
fn anchor_scan_rejects_7mhz() {
    let o = nbiot(&["anchor-scan", "--bw", "7"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("7 MHz"));
}

#[test]
fn rates_report() {
    let a = nbiot(&["rates"]);
    let b = nbiot(&["rates"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let err = String::from_utf8_lossy(&a.stderr);
    assert!(
        err.contains("226.7 kbps") && err.contains("250.0 kbps"),
        "{err}"
    );
    for r in data_rows(&stdout(&a)) {
        let rate: f64 = r[5].parse().unwrap();
        let peak: f64 = r[6].parse().unwrap();
        assert!(rate < peak, "{r:?}");
    }
}

#[test]
fn linkbudget_formula() {
    let o = nbiot(&["linkbudget", "--required-snr-db", "-11.8"]);
    assert!(o.status.success());
    let rows = data_rows(&stdout(&o));
    assert_eq!(rows[0][4], "162.04");
    assert_eq!(
        nbiot(&["linkbudget", "--bandwidth-hz", "0"]).status.code(),
        Some(2)
    );
}

#[test]
fn nprach_info_durations() {
    let o = nbiot(&["nprach-info"]);
    assert!(o.status.success());
    let rows = data_rows(&stdout(&o));
    assert_eq!(rows[0][2], "5.6000");
    assert_eq!(rows[1][2], "6.4000");
}

#[test]
fn grid_dump_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nbiot(&[
        "--out",
        out,
        "grid-dump",
        "--mode",
        "in-band",
        "--pcid",
        "7",
        "--subframes",
        "2",
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert!(text.starts_with("subframe,symbol,subcarrier,usage,re,im"));
    assert_eq!(text.lines().count(), 1 + 2 * 168);
    assert_eq!(
        nbiot(&["grid-dump", "--mode", "orbit"]).status.code(),
        Some(2)
    );
}

const SCENARIO: &str = "[scenario]
name = dl
procedure = link_dl
trials = 4
seed = 3

[cell]
mode = standalone
nb_pcid = 2

[channel]
snr_db = -2, 10

[procedure]
tbs = 56
repetitions = 1
";

#[test]
fn simulate_is_deterministic_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("dl.ini");
    std::fs::write(&sc, SCENARIO).unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let o = nbiot(&[
            "--out",
            out.to_str().unwrap(),
            "simulate",
            sc.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (
            std::fs::read_to_string(out.join("dl_trials.csv")).unwrap(),
            std::fs::read_to_string(out.join("dl_summary.csv")).unwrap(),
        )
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    assert_eq!(a.0.lines().count(), 1 + 2 * 4);
    assert!(a
        .1
        .starts_with("point,channel.snr_db,trials,successes,success_rate,mean_block_error"));
}

#[test]
fn simulate_seed_env_changes_trials() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("dl.ini");
    std::fs::write(&sc, SCENARIO).unwrap();
    let plain = nbiot(&["simulate", sc.to_str().unwrap()]);
    let seeded = Command::new(env!("CARGO_BIN_EXE_nbiot"))
        .args([
            "--out",
            dir.path().join("s").to_str().unwrap(),
            "simulate",
            sc.to_str().unwrap(),
        ])
        .env("NBIOT_SEED", "99")
        .output()
        .unwrap();
    assert!(seeded.status.success());
    let trials = std::fs::read_to_string(dir.path().join("s/dl_trials.csv")).unwrap();
    let seed_col: Vec<&str> = trials
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert!(plain.status.success());
    assert!(!seed_col.is_empty());
    let plain_dir = dir.path().join("p");
    nbiot(&[
        "--out",
        plain_dir.to_str().unwrap(),
        "simulate",
        sc.to_str().unwrap(),
    ]);
    let plain_trials = std::fs::read_to_string(plain_dir.join("dl_trials.csv")).unwrap();
    assert_ne!(trials, plain_trials);
}

#[test]
fn simulate_parse_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("bad.ini");
    std::fs::write(
        &sc,
        "[scenario]\nprocedure = link_dl\n[channel]\nsnr_db = loud\n",
    )
    .unwrap();
    let o = nbiot(&["simulate", sc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
    assert_eq!(
        nbiot(&["simulate", "/nonexistent/file.ini"]).status.code(),
        Some(2)
    );
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(nbiot(&["frobnicate"]).status.code(), Some(2));
}
