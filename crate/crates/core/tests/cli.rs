use std::process::{Command, Output};

fn segmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segmem"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn plan_vww_prints_eight_rows() {
    let o = segmem(&["plan", "--config", "mcunet-vww.json", "--memcap", "131072"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let rows: Vec<_> = text.lines().filter(|l| l.starts_with('S')).collect();
    assert_eq!(rows.len(), 8, "{text}");
    assert!(rows.iter().all(|r| r.ends_with("yes")));
}

#[test]
fn plan_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let o = segmem(&[
        "plan",
        "--config",
        "mcunet-320kb.json",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("name,footprint_bytes,baseline_bytes,reduction")
    );
    assert_eq!(lines.count(), 17);
}

#[test]
fn simulate_s1_is_bit_exact() {
    let o = segmem(&[
        "simulate",
        "--config",
        "mcunet-vww.json",
        "--layer",
        "S1",
        "--seed",
        "42",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("PASS bit-exact"));
}

#[test]
fn simulate_with_shrunk_offset_reports_clobber() {
    let o = segmem(&["simulate", "--layer", "S1", "--offset-delta", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("clobber"), "{}", stderr(&o));
}

#[test]
fn pool_too_small_is_a_fault() {
    let o = segmem(&["simulate", "--layer", "S8", "--memcap", "1024"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn validation_errors_exit_one() {
    for args in [
        &["plan", "--frobnicate"][..],
        &["simulate", "--layer", "S99"],
        &["plan", "--config", "/no/such/file.json"],
        &["sweep", "--axis", "diagonal"],
        &["plan", "--memcap", "0"],
    ] {
        assert_eq!(segmem(args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn broken_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        "{\n  \"name\": \"x\",\n  \"memcap_bytes\": 1024\n  \"entries\": []\n}\n",
    )
    .unwrap();
    let o = segmem(&["plan", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn chain_error_names_both_entries() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.json");
    std::fs::write(
        &path,
        r#"{"name":"x","memcap_bytes":65536,"entries":[
          {"name":"first","kind":"conv","hw":8,"c_in":4,"c_out":8,"rs":1},
          {"name":"second","kind":"depthwise","hw":8,"c":4,"rs":3}]}"#,
    )
    .unwrap();
    let o = segmem(&["plan", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("first") && err.contains("second"), "{err}");
}

#[test]
fn trace_writes_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.log");
    let o = segmem(&["trace", "--layer", "S8", "--trace", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = std::fs::read_to_string(path).unwrap();
    assert!(log.lines().next().unwrap().starts_with("STORE "));
    assert!(log.lines().any(|l| l.starts_with("FREE ")));
}

#[test]
fn sweep_prints_factor_per_entry() {
    let o = segmem(&["sweep", "--axis", "image", "--budget", "baseline"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with('S')).count(), 8);
    let o = segmem(&["sweep", "--axis", "image", "--budget", "4096"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("warning"));
}
