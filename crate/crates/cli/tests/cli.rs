//! End-to-end checks of the binary: argument validation, output files, and
//! reproducibility of emitted CSVs.

use std::path::PathBuf;
use std::process::Command;

fn distcount() -> Command {
    Command::new(env!("CARGO_BIN_EXE_distcount"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("distcount-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn simulate_writes_transcripts_and_aggregates() {
    let dir = temp_dir("sim");
    let status = distcount()
        .args(["simulate", "--protocol", "robust", "--stream", "attack", "--k", "8"])
        .args(["--eps", "0.25", "--events", "2000", "--runs", "3", "--seed", "11"])
        .arg("--out")
        .arg(&dir)
        .args(["--jobs", "1"])
        .status()
        .unwrap();
    assert!(status.success());
    for file in ["transcripts.csv", "agg_messages.csv", "agg_ratio.csv", "agg_relerr.csv"] {
        let text = std::fs::read_to_string(dir.join(file)).unwrap();
        assert!(text.ends_with('\n'));
        assert!(text.lines().count() > 1, "{file} has data rows");
    }
    let transcripts = std::fs::read_to_string(dir.join("transcripts.csv")).unwrap();
    assert!(transcripts.starts_with("seed,t,n_hat,messages_cum,round\n"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn simulate_rejects_invalid_epsilon() {
    let output = distcount()
        .args(["simulate", "--protocol", "hyz12", "--stream", "uniform", "--k", "4"])
        .args(["--eps", "0.9", "--events", "10", "--runs", "1", "--seed", "0", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("epsilon"), "stderr: {stderr}");
}

#[test]
fn unknown_protocol_and_suite_are_rejected() {
    let output = distcount()
        .args(["simulate", "--protocol", "hyz", "--stream", "uniform", "--k", "4"])
        .args(["--eps", "0.25", "--events", "10", "--runs", "1", "--seed", "0", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert!(!output.status.success());

    let output = distcount().args(["verify", "--suite", "everything"]).output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("unknown suite"), "stderr: {stderr}");
}

#[test]
fn tradeoff_emits_one_file_per_combination_with_full_grid() {
    let dir = temp_dir("trade");
    let status = distcount()
        .args(["tradeoff", "--k", "4", "--events", "400", "--runs", "2", "--seed", "5"])
        .arg("--out")
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    for protocol in ["hyz12", "robust"] {
        for stream in ["uniform", "attack"] {
            let path = dir.join(format!("tradeoff_{protocol}_{stream}_k4.csv"));
            let text = std::fs::read_to_string(&path).unwrap();
            // header plus the four grid points 2^i/2 <= 1/2
            assert_eq!(text.lines().count(), 5, "{}", path.display());
            assert!(text.starts_with("epsilon,comm_med,"));
        }
    }
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn simulate_output_replays_byte_identically() {
    let args = |dir: &PathBuf| {
        let mut cmd = distcount();
        cmd.args(["simulate", "--protocol", "hyz12", "--stream", "attack", "--k", "16"])
            .args(["--eps", "0.125", "--events", "3000", "--runs", "4", "--seed", "99"])
            .arg("--out")
            .arg(dir);
        cmd
    };
    let (a, b) = (temp_dir("rep-a"), temp_dir("rep-b"));
    assert!(args(&a).status().unwrap().success());
    assert!(args(&b).args(["--jobs", "1"]).status().unwrap().success());
    for file in ["transcripts.csv", "agg_messages.csv", "agg_ratio.csv", "agg_relerr.csv"] {
        let bytes_a = std::fs::read(a.join(file)).unwrap();
        let bytes_b = std::fs::read(b.join(file)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{file} differs between reruns/job counts");
    }
    std::fs::remove_dir_all(&a).unwrap();
    std::fs::remove_dir_all(&b).unwrap();
}
