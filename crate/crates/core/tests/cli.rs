use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steklov-nash")).args(args).output().expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|row| row.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["solve", "--game", "builtin:abs-contract", "--alg", "alg4", "--x0", "2,2"]), 0);
    assert_eq!(code(&["solve", "--game", "builtin:diverge2", "--alg", "alg1", "--x0", "1,1"]), 0);
    // No interior equilibrium exists.
    assert_eq!(code(&["solve", "--game", "builtin:dm-maxfun", "--alg", "alg2", "--x0", "0,0", "--max-iters", "50"]), 1);
    assert_eq!(code(&["solve", "--game", "builtin:cycle2", "--alg", "alg9", "--x0", "1,1"]), 2);
    assert_eq!(code(&["solve", "--game", "builtin:cycle2", "--alg", "alg2", "--x0", "1,1", "--eps", "-1"]), 2);
    assert_eq!(code(&["solve", "--game", "builtin:cycle2", "--alg", "alg2"]), 2);
    assert_eq!(code(&["solve", "--game", "builtin:missing", "--alg", "alg2", "--x0", "1,1"]), 3);
    assert_eq!(code(&["games"]), 0);
}

#[test]
fn game_files() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(
        &good,
        r#"{"m": 2, "players": [{"quad": [[2, 0], [0, 0]], "linear": [-2, 0]},
                                {"affine_pieces": [{"a": [0, 1]}, {"a": [0, -1]}]}]}"#,
    )
    .unwrap();
    let out = run(&["solve", "--game", good.to_str().unwrap(), "--alg", "alg4", "--x0", "0,3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"m": 1, "players": [{"quad": [[2]], "cubic": [1]}]}"#).unwrap();
    assert_eq!(code(&["solve", "--game", bad.to_str().unwrap(), "--alg", "alg2", "--x0", "1"]), 3);
    let missing = dir.path().join("none.json");
    assert_eq!(code(&["solve", "--game", missing.to_str().unwrap(), "--alg", "alg2", "--x0", "1"]), 3);
}

#[test]
fn trace_schema_and_zero_iteration_runs() {
    let dir = tempfile::tempdir().unwrap();
    let td = dir.path().to_str().unwrap();
    for alg in ["alg1", "alg2", "alg3", "alg4"] {
        assert_eq!(code(&["solve", "--game", "builtin:cycle2", "--alg", alg, "--x0", "0,0", "--trace-dir", td]), 0);
        let (header, rows) = read_csv(&dir.path().join(format!("{alg}_x0.csv")));
        assert_eq!(header, ["k", "x1", "x2", "res_norm", "lambda", "diameter", "event"]);
        // Newton stops at once; the walks only halve their step until it is small.
        if alg == "alg1" {
            assert_eq!(rows.len(), 1);
        }
        for row in &rows {
            assert_eq!(row[1..4].iter().map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>(), [0.0; 3], "{alg}");
        }
    }

    assert_eq!(code(&["solve", "--game", "builtin:quad-m", "--alg", "alg2", "--x0", "1,2,3,4,5", "--trace-dir", td]), 0);
    let (header, rows) = read_csv(&dir.path().join("alg2_x0.csv"));
    assert_eq!(header.len(), 5 + 5);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), header.len());
        assert_eq!(row[0].parse::<usize>().unwrap(), k);
        for v in &row[1..9] {
            assert!(v.parse::<f64>().unwrap().is_finite());
        }
        assert!(!row[9].is_empty());
    }
}

#[test]
fn compare_report_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let go = |tag: &str| {
        let td = dir.path().join(tag);
        let report = dir.path().join(format!("{tag}.json"));
        let out = run(&[
            "compare", "--game", "builtin:abs-contract", "--alg", "alg2,alg4", "--multistart", "3", "--seed", "5",
            "--trace-dir", td.to_str().unwrap(), "--report", report.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        (String::from_utf8(out.stdout).unwrap(), std::fs::read_to_string(report).unwrap(), td)
    };
    let (table_a, report_a, dir_a) = go("a");
    let (table_b, report_b, dir_b) = go("b");
    assert_eq!(table_a, table_b);
    assert_eq!(report_a, report_b);
    for alg in ["alg2", "alg4"] {
        for s in 0..3 {
            let name = format!("{alg}_s{s}.csv");
            assert_eq!(std::fs::read(dir_a.join(&name)).unwrap(), std::fs::read(dir_b.join(&name)).unwrap());
        }
    }

    assert!(table_a.starts_with("algorithm"));
    let report: serde_json::Value = serde_json::from_str(&report_a).unwrap();
    assert_eq!(report["game"], "abs-contract");
    assert_eq!(report["all_converged"], true);
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 6);
    for r in runs {
        assert!(r["final_residual"].as_f64().unwrap() <= 1e-6);
        assert!(r["distance_to_known"].as_f64().unwrap() <= 1e-3);
        assert!(r["oracle_calls"].as_u64().unwrap() > 0);
    }
    let clusters = report["clusters"].as_array().unwrap();
    assert_eq!(clusters.len(), 1);
    assert_eq!(clusters[0]["members"].as_array().unwrap().len(), 6);

    // A different seed draws different starts.
    let out = run(&["compare", "--game", "builtin:abs-contract", "--alg", "alg4", "--multistart", "3", "--seed", "6"]);
    assert_ne!(String::from_utf8(out.stdout).unwrap(), table_a);
}
