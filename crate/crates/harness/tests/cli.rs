use std::fs;
use std::path::Path;
use std::process::Command;

fn mknn(dir: &Path, args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_mknn")).current_dir(dir).args(args).output().unwrap();
    out.status.code().unwrap()
}

const SMALL: &str = "n_objects = 400\nticks = 3\nk = 4\nth_quad = 16\naudit = true\n";

#[test]
fn generate_then_run_matches_in_memory_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.txt"), SMALL).unwrap();
    assert_eq!(mknn(dir.path(), &["generate", "--config", "cfg.txt", "--set", "dataset=data.csv"]), 0);
    let data = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert!(data.starts_with("# n_objects = 400\n"));
    assert_eq!(
        mknn(dir.path(), &["run", "--config", "cfg.txt", "--set", "dataset=data.csv", "--set", "results_out=a.csv"]),
        0
    );
    assert_eq!(mknn(dir.path(), &["run", "--config", "cfg.txt", "--set", "results_out=b.csv"]), 0);
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("tick,query_id,rank,neighbour_id,distance\n"));
    // 3 ticks x 400 queries x 4 neighbours
    assert_eq!(text.lines().count(), 1 + 3 * 400 * 4);
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3);
}

#[test]
fn verify_reports_every_query() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.txt"), SMALL).unwrap();
    assert_eq!(mknn(dir.path(), &["verify", "--config", "cfg.txt"]), 0);
    let report = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("query_id,verdict,engine_maxdist,oracle_maxdist"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3 * 400);
    assert!(rows.iter().all(|r| !r.contains("mismatch")));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mknn(dir.path(), &["run", "--set", "k=0"]), 1);
    assert_eq!(mknn(dir.path(), &["run", "--set", "colour=blue"]), 1);
    assert_eq!(mknn(dir.path(), &["run", "--config", "missing.txt"]), 1);
    fs::write(dir.path().join("bad.csv"), "0,1,1.0,1.0\n0,1,x,1.0\n").unwrap();
    assert_eq!(mknn(dir.path(), &["run", "--set", "dataset=bad.csv", "--set", "k=1"]), 1);
    // unwritable output aborts before any work
    fs::write(dir.path().join("file"), "").unwrap();
    assert_eq!(mknn(dir.path(), &["bench", "--set", "bench_out=file/bench.csv"]), 1);
}

#[test]
fn bench_emits_one_row_per_tick_and_point() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "bench",
        "--set",
        "n_objects=500",
        "--set",
        "ticks=2",
        "--set",
        "sweep_th_quad=8,64,512",
        "--set",
        "sweep_k=1,8",
    ];
    assert_eq!(mknn(dir.path(), &args), 0);
    let s1 = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(s1.lines().count(), 1 + 2 * 3 * 2);

    let args = ["bench", "--set", "study=s3", "--set", "sweep_n=200,400", "--set", "ticks=2", "--set", "sweep_k=4"];
    assert_eq!(mknn(dir.path(), &args), 0);
    let s3 = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(s3.lines().count(), 1 + 2 * 3 * 2);
    assert!(s3.lines().skip(1).all(|l| !l.split(',').nth(8).unwrap().is_empty()));
}
