use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hybrid_market::fixtures::{synthetic, write_inputs, FixtureSpec};
use hybrid_market::manifest::RunManifest;

fn hybrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hybrid(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn quotes_prints_the_first_book() {
    let text = ok(&["quotes", "--beliefs", "0.3,0.5,0.2", "--cash", "1000"]);
    assert_eq!(
        text,
        "Bin | Bid Price | Bid Quantity | Ask Price | Ask Quantity\n\
         \x20 1 |      0.29 |           48 |      0.31 |           46\n\
         \x20 2 |      0.49 |           40 |      0.51 |           40\n\
         \x20 3 |      0.19 |           64 |      0.21 |           60\n"
    );
}

#[test]
fn quotes_after_a_fill() {
    let dir = tempfile::tempdir().unwrap();
    let text =
        ok(&["quotes", "--beliefs", "0.3,0.5,0.2", "--cash", "986.08", "--holdings", "48,0,0", "--out", s(dir.path())]);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('|').map(str::trim).collect()).collect();
    let want = [["0.28", "51", "0.30", "47"], ["0.50", "28", "0.51", "11"], ["0.20", "17", "0.21", "42"]];
    for (row, w) in rows.iter().zip(want) {
        assert_eq!((row[1], row[3]), (w[0], w[2]));
        for (got, want) in [(row[2], w[1]), (row[4], w[3])] {
            let (g, w): (i64, i64) = (got.parse().unwrap(), want.parse().unwrap());
            assert!((g - w).abs() <= 1, "{row:?}");
        }
    }
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("quotes.json")).unwrap()).unwrap();
    assert_eq!(json["bins"][0]["bid"]["price"], 28);
}

#[test]
fn bad_arguments_fail_with_usage() {
    let out = hybrid(&["quotes", "--nope"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = hybrid(&["quotes", "--beliefs", "0.3,0.5,0.3"]);
    assert!(!out.status.success());
    let out = hybrid(&["quotes", "--beliefs", "0.3,0.7", "--cash", "1.005"]);
    assert!(!out.status.success());
    let out = hybrid(&["score", "--out", "/tmp/x", "--model", "a.csv"]);
    assert!(!out.status.success(), "file flags go together");
}

#[test]
fn score_is_deterministic_and_manifested() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = write_inputs(&synthetic(&FixtureSpec::new(5)), &dir.path().join("in")).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "score",
            "--model",
            s(&inputs.model),
            "--market",
            s(&inputs.market),
            "--outcomes",
            s(&inputs.outcomes),
            "--date",
            "2020-10-20",
            "--out",
            s(&out),
        ]);
        RunManifest::read(&out).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a.outputs, b.outputs);
    assert_eq!(a.inputs.len(), 3);
    let names: Vec<&str> = a.outputs.iter().map(|o| o.path.as_str()).collect();
    for want in [
        "daily_brier.csv",
        "calibration.csv",
        "frequency.csv",
        "dominance.csv",
        "state_scores_2020-10-20.csv",
        "scores.json",
    ] {
        assert!(names.contains(&want), "{names:?}");
    }
    assert!(a.verify_outputs(&dir.path().join("a")).unwrap().is_empty());
    let scores: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/scores.json")).unwrap()).unwrap();
    assert_eq!(scores["n_states"], 13);
    let daily = fs::read_to_string(dir.path().join("a/daily_brier.csv")).unwrap();
    assert_eq!(daily.lines().next(), Some("date,model,market,hybrid"));
    assert_eq!(daily.lines().count(), 61);
}

#[test]
fn backtest_with_flips_and_robustness() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bt");
    let text = ok(&[
        "backtest",
        "--seed",
        "8",
        "--flip",
        "AZ,GA",
        "--flip",
        "WI",
        "--robustness",
        "--threshold-votes",
        "500000",
        "--out",
        s(&out),
    ]);
    assert!(text.contains("total"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("backtest.json")).unwrap()).unwrap();
    assert_eq!(json["states"].as_array().unwrap().len(), 13);
    assert_eq!(json["flips"].as_array().unwrap().len(), 2);
    assert_eq!(json["flips"][0]["flipped"], "AZ+GA");
    assert!(json["robustness"].is_object());
    let totals = &json["totals"];
    let sum: f64 = json["states"].as_array().unwrap().iter().map(|r| r["profit"].as_f64().unwrap()).sum();
    assert!((sum - totals["profit"].as_f64().unwrap()).abs() < 1e-6);
    let traj = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 13 * 60);
    assert!(out.join("flips.csv").is_file());

    // Same seed, same bytes.
    let again = dir.path().join("bt2");
    ok(&[
        "backtest",
        "--seed",
        "8",
        "--flip",
        "AZ,GA",
        "--flip",
        "WI",
        "--robustness",
        "--threshold-votes",
        "500000",
        "--out",
        s(&again),
    ]);
    assert_eq!(RunManifest::read(&out).unwrap().outputs, RunManifest::read(&again).unwrap().outputs);
}

#[test]
fn backtest_rejects_unknown_flip_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = hybrid(&["backtest", "--flip", "ZZ", "--out", s(dir.path())]);
    assert!(!out.status.success());
}
