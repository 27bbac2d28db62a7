use std::path::Path;
use std::process::{Command, Output};

fn phical(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phical"))
        .args(args)
        .env_remove("PHICAL_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn phical_in(args: &[&str], cache_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phical"))
        .args(args)
        .env("PHICAL_CACHE_DIR", cache_dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

#[test]
fn associate_x_squared_rows() {
    let out = phical(&["associate", "--p", "x^2", "--order", "6", "--json"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["schema"], "phical/1");
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    // x/(1 - zx): f_n = x^{n+1}
    for (n, row) in rows.iter().enumerate() {
        assert_eq!(row[0], n as u64);
        let want = if n == 0 {
            "1*x".to_string()
        } else {
            format!("1*x^{}", n + 1)
        };
        assert_eq!(row[1], serde_json::Value::String(want), "row {n}");
    }
}

#[test]
fn verify_passes_for_polynomial_p() {
    let out = phical(&["verify", "--p", "1 + x^2", "--order", "5"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), "pass");
}

#[test]
fn parse_error_reports_byte_offset_and_exits_2() {
    let out = phical(&["associate", "--p", "x + ", "--order", "4"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("byte 4"), "stderr: {err}");
}

#[test]
fn division_by_syntactic_zero_exits_2() {
    let out = phical(&["associate", "--p", "x/(x - x)", "--order", "4"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("division by zero"), "stderr: {err}");
}

#[test]
fn negative_exponent_parses() {
    let out = phical(&["associate", "--p", "x^-1", "--order", "4"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn unknown_flag_exits_2() {
    let out = phical(&["associate", "--nonsense", "1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn iota_json_is_deterministic() {
    let args = [
        "iota",
        "--expr",
        "(x - q*z)/(q*x - z)",
        "--outer",
        "z",
        "--inner",
        "x",
        "--order",
        "4",
        "--json",
    ];
    let a = phical(&args);
    let b = phical(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout, "JSON output must be byte-identical");
}

#[test]
fn iota_first_coefficients_are_lambda() {
    let out = phical(&[
        "iota", "--expr", "(x - q*z)/(q*x - z)", "--outer", "z", "--inner", "x",
        "--order", "3", "--json",
    ]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let entries = v["table"]["entries"].as_array().unwrap();
    assert_eq!(entries[0], serde_json::json!([[0, 0], "q"]));
    assert_eq!(entries[1], serde_json::json!([[1, -1], "(q^2 - 1)"]));
}

#[test]
fn coeffs_rat_symbolic_mu() {
    let out = phical(&["coeffs", "--system", "rat", "--order", "2", "--json"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["coeffs"]["mu"][0], "-1");
    assert_eq!(v["coeffs"]["mu"][1], "(q + 1)/(q - 1)");
}

#[test]
fn coeffs_rat_specialized_at_one() {
    let out = phical(&["coeffs", "--system", "rat", "--q", "1", "--order", "4", "--json"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["coeffs"]["mu"][0], "1");
    for k in 1..4 {
        assert_eq!(v["coeffs"]["mu"][k], "0", "mu_{k}");
    }
}

#[test]
fn qbg_cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("m.qbg");
    let cache = cache.to_str().unwrap();
    let build = phical(&[
        "qbg-build", "--system", "rat", "--q", "-1", "--depth", "2", "--floor", "-4",
        "--cache", cache,
    ]);
    assert_eq!(code(&build), 0, "{}", String::from_utf8_lossy(&build.stderr));
    let bytes = std::fs::read(cache).unwrap();
    assert_eq!(&bytes[..8], b"PHICAL\0\x01");
    let verify = phical(&["qbg-verify", "--cache", cache, "--json"]);
    assert_eq!(code(&verify), 0, "{}", String::from_utf8_lossy(&verify.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&verify)).unwrap();
    assert_eq!(v["pass"], true);
    assert_eq!(v["violations"].as_array().unwrap().len(), 0);
    let info = phical(&["cache-info", "--cache", cache, "--json"]);
    assert_eq!(code(&info), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&info)).unwrap();
    assert_eq!(v["kind"]["tag"], "Rat");
    assert_eq!(v["kind"]["q"], "-1");
    assert_eq!(v["policy"]["depth_bound"], 2);
    assert_eq!(v["policy"]["mode_floor"], -4);
}

#[test]
fn cache_dir_env_var_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let build = phical_in(
        &[
            "qbg-build", "--system", "rat", "--q", "1", "--depth", "2", "--floor", "-3",
            "--cache", "env.qbg",
        ],
        dir.path(),
    );
    assert_eq!(code(&build), 0, "{}", String::from_utf8_lossy(&build.stderr));
    assert!(dir.path().join("env.qbg").exists());
    let verify = phical_in(&["qbg-verify", "--cache", "env.qbg"], dir.path());
    assert_eq!(code(&verify), 0);
}

#[test]
fn corrupted_cache_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("bad.qbg");
    std::fs::write(&cache, b"NOTPHICAL").unwrap();
    let out = phical(&["qbg-verify", "--cache", cache.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn modes_flagship_slice() {
    let out = phical(&[
        "modes", "--system", "trig", "--a", "beta", "--b", "gamma",
        "--nlo", "0", "--nhi", "2", "--m", "-1", "--json",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let states = v["states"].as_array().unwrap();
    // (beta_0^e gamma) acts as the identity, higher modes vanish
    assert_eq!(states[0], serde_json::json!([0, [[[], "1"]]]));
    assert_eq!(states[1], serde_json::json!([1, []]));
    assert_eq!(states[2], serde_json::json!([2, []]));
}

#[test]
fn window_escape_exits_3() {
    let out = phical(&[
        "yphi", "--system", "trig", "--a", "beta", "--b", "gamma",
        "--floor", "-3", "--depth", "2", "--zorder", "8", "--xlo", "-2", "--xhi", "2",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn check_suite_log_exp_order_12() {
    let out = phical(&["check-suite", "--name", "log-exp", "--order", "12"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), "pass");
}

#[test]
fn check_suite_delta_and_borcherds() {
    for name in ["delta", "borcherds"] {
        let out = phical(&["check-suite", "--name", name, "--order", "5", "--d", "4", "--json"]);
        assert_eq!(code(&out), 0, "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
        assert_eq!(v["pass"], true, "{name}");
    }
}

#[test]
fn check_suite_unknown_name_exits_2() {
    let out = phical(&["check-suite", "--name", "bogus"]);
    assert_eq!(code(&out), 2);
}
