use std::process::{Command, Output};

fn cpkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpkit")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn trace_csv_has_schema_and_prints_config() {
    let out = cpkit(&["trace", "--rank", "2", "--seed", "3"]);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iter,residual,fitness,lambda,cg_iters,seconds"));
    let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
    assert_eq!(last.len(), 6);
    assert!(last[1].parse::<f64>().unwrap() < 5e-5);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("resolved config (trace)"));
    assert!(err.contains("\"cg_tol\":0.001"));
}

#[test]
fn trace_json_records_full_config() {
    let text = stdout(&cpkit(&["trace", "--optimizer", "als", "--rank", "2", "--format", "json", "--max-iters", "5"]));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["records"].as_array().unwrap().len(), 5);
    assert_eq!(v["status"], "cap_hit");
    assert_eq!(v["config"]["optimizer"]["kind"], "als");
    assert_eq!(v["config"]["optimizer"]["step_tol"], 1e-7);
    assert_eq!(v["config"]["init_distribution"]["kind"], "gaussian");
}

#[test]
fn likelihood_writes_file_and_threads_do_not_matter() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let path = dir.path().join(name);
        let args = [
            "likelihood", "--rank", "2,3", "--problems", "3", "--inits", "2", "--seed", "4", "--threads", threads,
            "--out", path.to_str().unwrap(),
        ];
        stdout(&cpkit(&args));
        std::fs::read_to_string(path).unwrap()
    };
    let one = run("one.json", "1");
    assert_eq!(one, run("three.json", "3"));
    let v: serde_json::Value = serde_json::from_str(&one).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 12);
    assert_eq!(v["ranks"].as_array().unwrap().len(), 2);
}

#[test]
fn threads_fall_back_to_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_cpkit"))
        .args(["likelihood", "--rank", "1", "--problems", "2", "--format", "csv"])
        .env("CPKIT_THREADS", "2")
        .output()
        .unwrap();
    let text = stdout(&out);
    assert_eq!(text.lines().next(), Some("rank,problem,init,status,residual,iterations,converged"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn matmul_small_case() {
    let text = stdout(&cpkit(&["matmul", "--n", "1", "--rank", "1", "--inits", "2", "--format", "csv"]));
    assert!(text.starts_with("arm,init,status,residual,iterations,converged"));
    assert_eq!(text.lines().filter(|l| l.ends_with(",true")).count(), 6);
}

#[test]
fn bench_matvec_reports_each_rank() {
    let text = stdout(&cpkit(&["bench-matvec", "--dims", "10", "--rank", "2,4", "--min-seconds", "0.001"]));
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("10x10x10,2,"));
}

#[test]
fn selftest_passes() {
    let text = stdout(&cpkit(&["selftest-oracle", "--problems", "10"]));
    assert_eq!(text.lines().filter(|l| l.ends_with(",true")).count(), 3);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"optimizer": "gn", "reg": "constant", "lambda": 1e-5, "max_iters": 3, "format": "json"}"#).unwrap();
    let out = cpkit(&["trace", "--config", cfg.to_str().unwrap(), "--max-iters", "2", "--residual-tol", "0"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["records"].as_array().unwrap().len(), 2);
    assert_eq!(v["config"]["optimizer"]["schedule"]["mode"], "constant");
    assert_eq!(v["records"][0]["lambda"], 1e-5);
}

#[test]
fn invalid_options_fail_cleanly() {
    let out = cpkit(&["trace", "--order", "3", "--dims", "2,2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--dims"));
    assert!(!cpkit(&["trace", "--family", "poisson"]).status.success());
    assert!(!cpkit(&["likelihood", "--inits", "0"]).status.success());
}
