use std::path::PathBuf;
use std::process::{Command, Output};

use srlab_core::report::csv_body;
use srlab_core::stochastics::Ensemble;

fn srlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srlab"))
        .args(args)
        .env_remove("SRLAB_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("srlab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn malformed_eps_list_exits_2_and_names_the_token() {
    let o = srlab(&["ldp-curve", "--model", "flat1", "--a", "1.0", "--eps", "0.5,abc,0.25"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`abc`"), "{}", stderr(&o));
}

#[test]
fn unknown_model_and_missing_target_are_validation_errors() {
    let o = srlab(&["distance", "--model", "sphere", "--a", "1,0,0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sphere"));
    let o = srlab(&["distance", "--model", "heisenberg"]);
    assert_eq!(o.status.code(), Some(2));
    let o = srlab(&["distance", "--model", "heisenberg", "--a", "1,0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("expected 3 coordinates"));
}

#[test]
fn short_flags_are_rejected() {
    let o = srlab(&["verify", "-m", "heisenberg"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_prints_a_passing_table() {
    let o = srlab(&["verify", "--model", "heisenberg"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("generator identity") && out.contains("chen identity"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let cfg = scratch("hk.cfg");
    std::fs::write(
        &cfg,
        "# flat model\nmodel = flat1\neps = 0.5\nn = 2000\nlevel = 5\nseed = 4\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let o = srlab(&["heatkernel", "--config", cfg, "--a", "1", "--n", "3000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("# n = 3000") && out.contains("# seed = 4"));
    assert!(out.lines().any(|l| l.starts_with("eps,p_hat,stderr")));

    std::fs::write(scratch("bad.cfg"), "model = flat1\nbogus = 1\n").unwrap();
    let o = srlab(&[
        "heatkernel",
        "--config",
        scratch("bad.cfg").to_str().unwrap(),
        "--a",
        "1",
        "--eps",
        "0.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config line 2"));
}

#[test]
fn same_seed_gives_identical_csv_bodies_across_worker_counts() {
    let args = [
        "ldp-curve",
        "--model",
        "flat1",
        "--a",
        "1.0",
        "--eps",
        "0.5,0.35",
        "--n",
        "4000",
        "--level",
        "6",
        "--seed",
        "9",
    ];
    let a = srlab(&args);
    let mut b_args = args.to_vec();
    b_args.extend(["--workers", "3"]);
    let b = srlab(&b_args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(csv_body(&stdout(&a)), csv_body(&stdout(&b)));
    assert!(csv_body(&stdout(&a)).starts_with("eps,p_hat,stderr,eps2logp,target,feasible\n"));
    let mut c_args = args.to_vec();
    let last = c_args.len() - 1;
    c_args[last] = "10";
    assert_ne!(csv_body(&stdout(&a)), csv_body(&stdout(&srlab(&c_args))));
}

#[test]
fn binary_ensembles_round_trip() {
    let path = scratch("ens.bin");
    let o = srlab(&[
        "simulate",
        "--model",
        "heisenberg",
        "--eps",
        "0.5",
        "--n",
        "16",
        "--level",
        "5",
        "--format",
        "binary",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ens = Ensemble::read_binary(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!((ens.len(), ens.dim, ens.level), (16, 3, 5));
    let o = srlab(&["simulate", "--model", "heisenberg", "--n", "4", "--format", "binary"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bridge_summary_reports_the_acceptance_rate() {
    let json = scratch("bridge.json");
    let o = srlab(&[
        "bridge",
        "--model",
        "flat1",
        "--a",
        "0",
        "--eps",
        "0.5",
        "--delta",
        "0.05",
        "--n",
        "50",
        "--level",
        "5",
        "--record",
        "8",
        "--json",
        json.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["result"]["accepted"], 50);
    assert!(v["result"]["max_endpoint_error"].as_f64().unwrap() < 0.05);
    assert_eq!(v["config"]["delta"], "0.05");
    // 50 paths x 9 grid times, plus the column header.
    assert_eq!(csv_body(&stdout(&o)).lines().count(), 50 * 9 + 1);
}

#[test]
fn unreachable_bridge_target_is_a_numerical_failure() {
    let o = srlab(&[
        "bridge", "--model", "flat1", "--a", "9", "--eps", "0.05", "--delta", "0.001", "--n", "5", "--budget", "200",
        "--level", "4",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("increase δ or ε"));
}
