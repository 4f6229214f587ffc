use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nph2ph::simlab::{mc_bridge_null, SimSpec};
use nph2ph::Exec;
use serde_json::Value;
use tempfile::TempDir;

fn nph2ph() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nph2ph"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn validator() -> jsonschema::Validator {
    let text = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json"),
    )
    .unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn analyze(input: &Path, out: &Path, extra: &[&str]) -> Output {
    nph2ph()
        .arg("analyze")
        .arg("--input")
        .arg(input)
        .arg("--out-dir")
        .arg(out)
        .args(["--kappa-pairs", "20000"])
        .args(extra)
        .output()
        .unwrap()
}

fn report(dir: &Path) -> Value {
    let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    let value: Value = serde_json::from_str(&text).unwrap();
    let v = validator();
    let errors: Vec<String> = v.iter_errors(&value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "schema violations: {errors:?}");
    value
}

fn write(dir: &TempDir, name: &str, contents: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

#[test]
fn long_standin_report() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = analyze(&data("long_standin.csv"), &out, &["--svg"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let tau = r["changepoint"]["changepoints"][0]["tau"].as_f64().unwrap();
    assert!((0.38..=0.54).contains(&tau), "{tau}");
    assert!(r["changepoint"]["r2"].as_f64().unwrap() > r["ph"]["r2"].as_f64().unwrap());
    assert_eq!(r["status"], "complete");
    for file in r["curves"].as_array().unwrap() {
        let name = file.as_str().unwrap();
        let tsv = std::fs::read_to_string(out.join(name)).unwrap();
        let widths: Vec<usize> = tsv.lines().map(|l| l.split('\t').count()).collect();
        assert!(widths.len() > 1 && widths.iter().all(|w| *w == widths[0]), "{name}");
        let svg = out.join(name.replace(".tsv", ".svg"));
        assert!(std::fs::read_to_string(svg).unwrap().starts_with("<svg"));
    }
}

#[test]
fn ph_only_report() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = analyze(
        &data("andre_standin.csv"),
        &out,
        &["--changepoints", "0", "--legendre-order", "0"],
    );
    assert!(o.status.success());
    let r = report(&out);
    assert!(r["changepoint"].is_null() && r["legendre"].is_null() && r["landmark"].is_null());
    assert_eq!(r["nulls"]["changepoint"], "not_requested");
    assert_eq!(r["nulls"]["legendre"], "not_requested");
    assert_eq!(r["nulls"]["landmark"], "no_changepoint");
    assert!(r["ph"]["beta_hat"].is_number());
}

#[test]
fn rerun_on_emitted_csv_is_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(analyze(&data("jonker_standin.csv"), &a, &[]).status.success());
    assert!(analyze(&a.join("data.csv"), &b, &[]).status.success());
    let ra = std::fs::read(a.join("report.json")).unwrap();
    let rb = std::fs::read(b.join("report.json")).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(
        std::fs::read(a.join("data.csv")).unwrap(),
        std::fs::read(b.join("data.csv")).unwrap()
    );
}

#[test]
fn thread_count_does_not_change_the_report() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(analyze(&data("andre_standin.csv"), &a, &[]).status.success());
    let o = nph2ph()
        .env("NPH2PH_THREADS", "1")
        .arg("analyze")
        .arg("--input")
        .arg(data("andre_standin.csv"))
        .arg("--out-dir")
        .arg(&b)
        .args(["--kappa-pairs", "20000"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(a.join("report.json")).unwrap(),
        std::fs::read(b.join("report.json")).unwrap()
    );
}

#[test]
fn missing_input_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = analyze(&tmp.path().join("nope.csv"), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn corrupt_rows_are_bad_input() {
    let tmp = TempDir::new().unwrap();
    let bad = write(&tmp, "bad.csv", "time,event,group\n1.0,1,0\n-1,1,0\n");
    let o = nph2ph().arg("validate").arg("--input").arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let out = tmp.path().join("out");
    assert_eq!(analyze(&bad, &out, &[]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn no_informative_failures_exit_code() {
    let tmp = TempDir::new().unwrap();
    let one_arm = write(&tmp, "arm.csv", "time,event,group\n1,1,1\n2,1,1\n3,0,1\n");
    let out = tmp.path().join("out");
    let o = analyze(&one_arm, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists());
}

#[test]
fn validate_reports_flags() {
    let o = nph2ph()
        .arg("validate")
        .arg("--input")
        .arg(data("long_standin.csv"))
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), r#"{"flags":[]}"#);

    let tmp = TempDir::new().unwrap();
    let one_arm = write(&tmp, "arm.csv", "time,event,group\n1,1,1\n2,1,1\n3,0,1\n");
    let o = nph2ph().arg("validate").arg("--input").arg(&one_arm).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let codes: Vec<&str> = v["flags"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["code"].as_str().unwrap())
        .collect();
    assert!(codes.contains(&"SingleArm"), "{codes:?}");
}

fn simulate(spec: &Path, out: &Path, extra: &[&str]) -> Output {
    nph2ph()
        .args(["simulate", "--spec"])
        .arg(spec)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn simulate_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let spec = write(
        &tmp,
        "spec.json",
        r#"{"n":[50,50],"beta":{"kind":"piecewise","beta0":-1.0,"taus":[0.5],"multipliers":[1.0,0.0]},
            "censoring":{"kind":"uniform","max":3.0},"seed":7}"#,
    );
    let (a, b) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"));
    assert!(simulate(&spec, &a, &[]).status.success());
    assert!(simulate(&spec, &b, &[]).status.success());
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 101);
}

#[test]
fn malformed_spec_reports_position() {
    let tmp = TempDir::new().unwrap();
    let spec = write(&tmp, "spec.json", "{\n  \"n\": [3, 4],\n  \"seed\": x\n}");
    let out = tmp.path().join("o.csv");
    let o = simulate(&spec, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("column"), "{err}");
    assert!(!out.exists());

    let unknown = write(&tmp, "u.json", r#"{"n":[3,4],"beta":{"kind":"constant","beta0":0},"seed":1,"extra":2}"#);
    assert_eq!(simulate(&unknown, &out, &[]).status.code(), Some(2));
}

#[test]
fn bridge_oracle_table_matches_library() {
    let tmp = TempDir::new().unwrap();
    let text = r#"{"n":[100,100],"beta":{"kind":"constant","beta0":0.0},"censoring":{"kind":"uniform","max":5.0},"seed":3}"#;
    let spec = write(&tmp, "null.json", text);
    let out = tmp.path().join("null.csv");
    let o = simulate(&spec, &out, &["--oracle", "bridge", "--replicates", "500"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(tmp.path().join("null_bridge.tsv")).unwrap();
    let parsed = SimSpec::from_json(text).unwrap();
    let expected = mc_bridge_null(&parsed, &[0.90, 0.999], 500, Exec::Sequential).unwrap();
    assert_eq!(table, expected.to_tsv());
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().last().unwrap().starts_with("var_end"));
}

#[test]
fn kappa_and_r2_oracles_write_tables() {
    let tmp = TempDir::new().unwrap();
    let spec = write(
        &tmp,
        "s.json",
        r#"{"n":[300,300],"beta":{"kind":"piecewise","beta0":-1.0,"taus":[0.7],"multipliers":[1.0,-0.5]},"censoring":{"kind":"uniform","max":3.0},"seed":5}"#,
    );
    let out = tmp.path().join("s.csv");
    assert!(simulate(&spec, &out, &["--oracle", "kappa", "--pairs", "200000"]).status.success());
    let kappa = std::fs::read_to_string(tmp.path().join("s_kappa.tsv")).unwrap();
    let row: Vec<f64> = kappa.lines().nth(1).unwrap().split('\t').map(|x| x.parse().unwrap()).collect();
    assert!((row[0] - row[4]).abs() < 0.01, "{kappa}");

    let custom = tmp.path().join("table.tsv");
    let o = simulate(
        &spec,
        &out,
        &["--oracle", "r2argmax", "--oracle-out", custom.to_str().unwrap()],
    );
    assert!(o.status.success());
    let table = std::fs::read_to_string(custom).unwrap();
    assert_eq!(table.lines().count(), 51);
}
