use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name).display().to_string()
}

fn refract(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refract"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env("REFRACT_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn check_schema(schema: &str, text: &[u8]) -> Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{schema}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let doc: Value = serde_json::from_slice(text).expect("output is JSON");
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema}: {errors:?}");
    doc
}

fn success(args: &[&str]) -> Vec<u8> {
    let out = refract(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

#[test]
fn json_outputs_match_schemas() {
    let kou = data("kou.json");
    let floor = data("floor.json");
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("roots", vec!["roots", "--model", &kou, "--q", "0.1"]),
        ("factors", vec!["factors", "--model", &kou, "--q", "0.1"]),
        ("dist", vec!["dist-cdf", "--model", &kou, "--q", "0.1", "--y", "0.5", "--method", "prop21"]),
        ("dist", vec!["dist-pdf", "--model", &kou, "--q", "0.1", "--y", "-0.2"]),
        ("dist", vec!["occupation", "--model", &kou, "--q", "0.1", "--y", "0.2"]),
        ("invert", vec!["invert", "--model", &kou, "--t", "1", "--y", "0.1", "--verify"]),
        ("price", vec!["price", "gmdb", "--model", &kou, "--pricing", &floor]),
        ("price", vec!["price", "gmmb", "--model", &kou, "--pricing", &floor]),
        ("mc_validate", vec!["mc", "validate", "--model", &kou, "--q", "1", "--y", "0.2", "--paths", "2000", "--dt", "0.01"]),
        ("selfcheck", vec!["selfcheck", "--model", &kou, "--q", "0.1"]),
    ];
    for (schema, args) in cases {
        let doc = check_schema(schema, &success(&args));
        assert_eq!(doc["manifest"]["timestamp"], "2023-11-14T22:13:20Z");
    }
}

#[test]
fn roots_report_counts() {
    let doc = check_schema("roots", &success(&["roots", "--model", &data("kou.json"), "--q", "0.1"]));
    assert_eq!(doc["result"]["beta"].as_array().unwrap().len(), 2);
    assert_eq!(doc["result"]["gamma_hat"].as_array().unwrap().len(), 2);
}

#[test]
fn negative_q_is_a_domain_error() {
    let out = refract(&["dist-cdf", "--model", &data("kou.json"), "--q", "-1", "--y", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let doc = check_schema("error", &out.stderr);
    assert!(doc["error"]["message"].as_str().unwrap().contains("q must be positive"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(refract(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(refract(&["roots", "--q", "0.1"]).status.code(), Some(2));
}

#[test]
fn grid_output_is_csv_with_manifest() {
    let text = String::from_utf8(success(&[
        "dist-cdf", "--model", &data("kou.json"), "--q", "0.1", "--y-grid", "-0.5:0.5:5",
    ]))
    .unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# manifest: {"));
    assert_eq!(lines.next().unwrap(), "y,value,route");
    let values: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 5);
    assert!(values.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn invalid_model_is_reported() {
    let dir = std::env::temp_dir().join(format!("refract-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.json");
    std::fs::write(&path, r#"{"mu":0,"sigma":0.2,"lambda_plus":1,"jumps_plus":[{"rate":[3,0],"order":1,"weights":[[0.9,0]]}]}"#).unwrap();
    let out = refract(&["roots", "--model", path.to_str().unwrap(), "--q", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
    let doc = check_schema("error", &out.stderr);
    assert_eq!(doc["error"]["kind"], "invalid_model");
}

#[test]
fn output_file_matches_stdout() {
    let dir = std::env::temp_dir().join(format!("refract-out-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("roots.json");
    let args = ["roots", "--model", &data("kou.json"), "--q", "0.1"];
    let stdout = success(&args);
    let mut with_out = args.to_vec();
    let p = path.to_str().unwrap();
    with_out.extend(["--out", p]);
    assert!(success(&with_out).is_empty());
    assert_eq!(std::fs::read(&path).unwrap(), stdout);
}
