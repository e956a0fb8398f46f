use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use recweyl::exprlang::parse;
use recweyl::invariants::{pushforward_psi, GroupElemD4};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recweyl")).args(args).current_dir(dir).env_remove("WEYL_SEED").output().unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn write(dir: &Path, name: &str, psi: &str, lo: f64, hi: f64) {
    let text = format!(
        r#"{{"format":1,"spec":{{"family":"DimGe4","n":2,"params":{{"psi":"{psi}"}},"ranges":{{"t":[{lo:?},{hi:?}]}}}}}}"#
    );
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn catalog_list_and_emit() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["catalog", "list"], d.path());
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("dim4-psi-exp") && table.contains("3d2-ew"));

    let o = run(&["catalog", "emit", "dim4-psi-exp", "out.json"], d.path());
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("out.json")).unwrap()).unwrap();
    assert_eq!(v["format"], 1);
    assert_eq!(v["spec"]["params"]["psi"], "exp(t)");
    assert_eq!(v["spec"]["n"], 2);

    let o = run(&["catalog", "emit", "nonexistent"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonexistent"));
}

#[test]
fn verify_passes_on_catalog_entry_and_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    run(&["catalog", "emit", "dim4-psi-exp", "e.json"], d.path());
    let a = run(&["verify", "e.json", "--samples", "4"], d.path());
    let b = run(&["verify", "e.json", "--samples", "4"], d.path());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    assert_eq!(v["passed"], true);
    assert!(v["wall_time_ms"].is_null());
    let w = v["checks"].as_array().unwrap().iter().find(|c| c["name"] == "weight").unwrap();
    assert_eq!(w["evidence"]["expected"], 3.0);
    for name in ["metric_compatibility", "recurrence", "holonomy", "conformal_flatness", "einstein_weyl"] {
        assert!(v["checks"].as_array().unwrap().iter().any(|c| c["name"] == name && c["status"] == "pass"), "{name}");
    }
}

#[test]
fn broken_riccati_fails_with_exit_one() {
    let d = tempfile::tempdir().unwrap();
    let text = r#"{"format":1,"spec":{"family":"RiccatiForm","n":2,"params":{"F":"-1.1*ln(u+x)","a":"0"},"constraints":["u+x"]}}"#;
    std::fs::write(d.path().join("m.json"), text).unwrap();
    let o = run(&["verify", "m.json", "--samples", "4"], d.path());
    assert_eq!(o.status.code(), Some(1));
    let v = json(&o);
    let rec = v["checks"].as_array().unwrap().iter().find(|c| c["name"] == "recurrence").unwrap();
    assert_eq!(rec["status"], "fail");
}

#[test]
fn bad_input_exits_two() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.json"), "{\"format\": 1,").unwrap();
    let o = run(&["verify", "bad.json"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed"));

    let extra = r#"{"format":1,"spec":{"family":"DimGe4","n":2,"params":{"psi":"t"}},"colour":"red"}"#;
    std::fs::write(d.path().join("extra.json"), extra).unwrap();
    assert_eq!(run(&["verify", "extra.json"], d.path()).status.code(), Some(2));

    let v2 = r#"{"format":2,"spec":{"family":"DimGe4","n":2,"params":{"psi":"t"}}}"#;
    std::fs::write(d.path().join("v2.json"), v2).unwrap();
    assert_eq!(run(&["verify", "v2.json"], d.path()).status.code(), Some(2));

    write(d.path(), "p.json", "t^2", 0.5, 2.0);
    assert_eq!(run(&["verify", "p.json", "--tol", "nonsense=1"], d.path()).status.code(), Some(2));
    assert_eq!(run(&["signature", "p.json", "--range", "2:1"], d.path()).status.code(), Some(2));
}

#[test]
fn seed_environment_variable_wins() {
    let d = tempfile::tempdir().unwrap();
    run(&["catalog", "emit", "3d2-exp", "c.json"], d.path());
    let o = Command::new(env!("CARGO_BIN_EXE_recweyl"))
        .args(["verify", "c.json", "--samples", "2", "--seed", "3"])
        .env("WEYL_SEED", "11")
        .current_dir(d.path())
        .output()
        .unwrap();
    assert_eq!(json(&o)["seed"], 11);
    assert_eq!(json(&run(&["verify", "c.json", "--samples", "2", "--seed", "3"], d.path()))["seed"], 3);
}

#[test]
fn classify_power() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "p.json", "t^2", 0.5, 2.0);
    let o = run(&["classify", "p.json"], d.path());
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["cohomogeneity"], 1);
    assert_eq!(v["kind"], "Power");
    assert!((v["A"].as_f64().unwrap() - 2.0).abs() < 1e-6);
}

#[test]
fn signature_csv_header() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "p.json", "t^3 + t", 0.5, 2.0);
    let o = run(&["signature", "p.json", "--range", "0.5:2", "--samples", "64", "--csv", "out.csv"], d.path());
    assert!(o.status.success());
    let text = std::fs::read_to_string(d.path().join("out.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("param,I,J,sign_D,singular_flag"));
    assert_eq!(lines.count(), 64);
}

#[test]
fn exact_invariants() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "p.json", "t^3 + t", 0.5, 2.0);
    let v = json(&run(&["invariants", "p.json", "--at", "1", "--exact"], d.path()));
    assert_eq!(v["points"][0]["I"], "-3/125");
    assert_eq!(v["points"][0]["J"], "6/5");
}

#[test]
fn equiv_verdicts() {
    let d = tempfile::tempdir().unwrap();
    let (lo, hi) = (0.5, 2.0);
    write(d.path(), "a.json", "t^3 + t", lo, hi);
    let g = GroupElemD4::new(0.3, 0.1, [1.2, 0.4, 0.05, 0.9], 1).unwrap();
    let pushed = pushforward_psi(&g, &parse("t^3 + t").unwrap());
    let (plo, phi) = g.map_interval(lo, hi);
    write(d.path(), "b.json", &pushed.to_string(), plo, phi);
    let o = run(&["equiv", "a.json", "b.json"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(json(&o)["verdict"], "Equivalent");

    write(d.path(), "q.json", "t^5 + t", lo, hi);
    let o = run(&["equiv", "a.json", "q.json"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json(&o)["verdict"], "Distinct");

    run(&["catalog", "emit", "dim4-psi-exp", "e.json"], d.path());
    run(&["catalog", "emit", "dim4-psi-tan", "t.json"], d.path());
    let v = json(&run(&["equiv", "e.json", "t.json"], d.path()));
    assert_eq!(v["verdict"], "Degenerate");
    assert_ne!(v["signs"][0], v["signs"][1]);
}
