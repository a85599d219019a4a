use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn simnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simnet"))
        .args(args)
        .env_remove("SIMNET_SERVER")
        .env_remove("SIMNET_TOLERANCE")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn validate_exit_codes() {
    let ok = simnet(&["validate", &fixture("sore_throat.json")]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("verdict  consistent"));

    let split = simnet(&["validate", &fixture("split_endpoint_chain.json")]);
    assert_eq!(split.status.code(), Some(1));
    let report = stdout(&split);
    assert!(report.contains("line 11, edge (h2,h3)"), "{report}");
    assert!(report.contains("repair"), "{report}");

    let missing = simnet(&["validate", "/nonexistent/bundle.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn validate_reports_invalid_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let src = std::fs::read_to_string(fixture("sore_throat.json")).unwrap();
    std::fs::write(&path, src.replacen("\"prior\"", "\"priors\"", 1)).unwrap();
    let o = simnet(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("schema_error"), "{}", stdout(&o));
    assert!(stdout(&o).contains("distinguished"), "{}", stdout(&o));
}

#[test]
fn infer_prints_the_prior_without_observations() {
    let o = simnet(&["infer", &fixture("sore_throat.json")]);
    assert_eq!(o.status.code(), Some(0));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["HYPOTHESIS", "P"]);
    assert!(lines[1].starts_with("VIRAL PHARYNGITIS") && lines[1].ends_with("0.5000"));
    assert!(lines[5].starts_with("PERITONSILLAR ABSCESS") && lines[5].ends_with("0.0400"));
}

#[test]
fn infer_collapses_with_narrowing_observations() {
    let o = simnet(&[
        "--format",
        "json",
        "infer",
        &fixture("sore_throat.json"),
        "--observe",
        "QUALITY OF VOICE=MUFFLED",
        "--observe",
        "TONSILS INVOLVED=ONE",
        "--observe",
        "PALATAL SPOTS=ABSENT",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["posterior"][0]["hypothesis"], "PERITONSILLAR ABSCESS");
    assert!(v["posterior"][0]["p"].as_f64().unwrap() > 0.9);
}

#[test]
fn infer_usage_errors_exit_two() {
    let sore = fixture("sore_throat.json");
    for args in [
        vec!["infer", &sore, "--observe", "COUGH=PRESENT"],
        vec!["infer", &sore, "--observe", "FEVER=BOILING"],
        vec!["infer", &sore, "--observe", "FEVER"],
        vec!["infer"],
        vec!["frobnicate"],
    ] {
        let o = simnet(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn impossible_evidence_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exclusive.json");
    std::fs::write(
        &path,
        r#"{
        "format": "simnet-bundle/1",
        "metadata": {"name": "exclusive"},
        "distinguished": {"name": "h", "hypotheses": ["a", "b"], "prior": [0.5, 0.5]},
        "variables": [{"name": "f", "instances": ["-", "+"]}, {"name": "g", "instances": ["-", "+"]}],
        "similarity_graph": {"edges": [["a", "b"]]},
        "local_maps": [{"edge": ["a", "b"], "nodes": ["f", "g"], "arcs": [["h", "f"], ["h", "g"]]}],
        "assessments": [
            {"feature": "f", "partitions": [{"sets": [{"name": "A", "members": ["a"]}, {"name": "B", "members": ["b"]}],
                "distributions": [[1.0, 0.0], [0.5, 0.5]]}]},
            {"feature": "g", "partitions": [{"sets": [{"name": "A", "members": ["a"]}, {"name": "B", "members": ["b"]}],
                "distributions": [[0.5, 0.5], [1.0, 0.0]]}]}
        ]
    }"#,
    )
    .unwrap();
    let p = path.to_str().unwrap();
    let o = simnet(&["infer", p, "--observe", "f=+", "--observe", "g=+"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("impossible"), "{}", stderr(&o));

    // One-sided evidence rules a hypothesis out; the table shows a hard zero.
    let o = simnet(&["infer", p, "--observe", "f=+"]);
    assert_eq!(o.status.code(), Some(0));
    let rows: Vec<Vec<String>> = stdout(&o)
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect();
    assert_eq!(rows[1..], [vec!["b", "1.0000"], vec!["a", "0.0000"]]);
}

#[test]
fn evaluate_reproduces_the_loss_pair() {
    let o = simnet(&[
        "--format",
        "json",
        "evaluate",
        &fixture("loss_pair.json"),
        "--cases",
        &fixture("loss_pair_cases.json"),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["mean"], 32.0);
    let losses: Vec<f64> = v["cases"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["loss"]["loss"].as_f64().unwrap())
        .collect();
    assert_eq!(losses, [0.0, 64.0]);

    let table = simnet(&[
        "evaluate",
        &fixture("loss_pair.json"),
        "--cases",
        &fixture("loss_pair_cases.json"),
    ]);
    assert!(stdout(&table).contains("mean 32.0000"), "{}", stdout(&table));
}

#[test]
fn evaluate_takes_gold_from_a_separate_file() {
    let dir = tempfile::tempdir().unwrap();
    let cases = dir.path().join("cases.json");
    let gold = dir.path().join("gold.json");
    std::fs::write(
        &cases,
        r#"{"cases": [{"name": "one", "evidence": []}, {"name": "two", "evidence": [{"feature": "f", "instance": "+"}]}]}"#,
    )
    .unwrap();
    // Gold equal to the model's own posterior: no loss anywhere.
    let post = |obs: &[&str]| -> Value {
        let mut args = vec!["--format", "json", "infer"];
        let bundle = fixture("loss_pair.json");
        args.push(&bundle);
        args.extend(obs);
        let v: Value = serde_json::from_slice(&simnet(&args).stdout).unwrap();
        v["posterior"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| (e["hypothesis"].as_str().unwrap().to_string(), e["p"].clone()))
            .collect::<serde_json::Map<_, _>>()
            .into()
    };
    let g = serde_json::json!({"one": post(&[]), "two": post(&["--observe", "f=+"])});
    std::fs::write(&gold, g.to_string()).unwrap();
    let o = simnet(&[
        "--format",
        "json",
        "evaluate",
        &fixture("loss_pair.json"),
        "--cases",
        cases.to_str().unwrap(),
        "--gold",
        gold.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["mean"], 0.0);

    std::fs::write(&gold, r#"{"one": {"d1": 1.0, "d2": 0.0}}"#).unwrap();
    let o = simnet(&[
        "evaluate",
        &fixture("loss_pair.json"),
        "--cases",
        cases.to_str().unwrap(),
        "--gold",
        gold.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("two"));
}

#[test]
fn recommend_ranks_and_justifies() {
    let o = simnet(&[
        "recommend",
        &fixture("sore_throat.json"),
        "--limit",
        "2",
        "--justify",
        "FEVER",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("FEATURE"));
    assert!(lines[1].starts_with("TONSILS INVOLVED"));
    assert!(text.contains("FEVER: VIRAL PHARYNGITIS versus STREP THROAT"), "{text}");
}

#[test]
fn transform_writes_a_multi_disease_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("multi.json");
    let o = simnet(&[
        "transform-multi",
        &fixture("abdominal_pain.json"),
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["format"], "simnet-multidisease/1");
    assert_eq!(v["model"]["diseases"], serde_json::json!(["APPI", "RUPTURED ECTOPIC"]));
    assert!(stdout(&o).contains("2 independent diseases"));
}

#[test]
fn synthetic_bundles_are_seeded_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synth.json");
    let p = path.to_str().unwrap();
    let a = simnet(&["synth", "--seed", "11", "--hypotheses", "4"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, simnet(&["synth", "--seed", "11", "--hypotheses", "4"]).stdout);
    assert_ne!(a.stdout, simnet(&["synth", "--seed", "12", "--hypotheses", "4"]).stdout);
    assert_eq!(
        simnet(&["synth", "--seed", "11", "--hypotheses", "4", "-o", p])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(std::fs::read(&path).unwrap(), a.stdout);
    assert_eq!(simnet(&["validate", p]).status.code(), Some(0));
    assert_eq!(simnet(&["synth", "--hypotheses", "9"]).status.code(), Some(2));
}

#[test]
fn talks_to_an_external_server() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let mut server = Command::new(env!("CARGO_BIN_EXE_simnet"))
        .args(["serve", "--addr", &addr.to_string()])
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let url = format!("http://{addr}");
    let mut ok = None;
    for _ in 0..100 {
        let o = simnet(&[
            "--server",
            &url,
            "--format",
            "json",
            "infer",
            &fixture("sore_throat.json"),
        ]);
        if o.status.code() == Some(0) {
            ok = Some(o);
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    server.kill().unwrap();
    server.wait().unwrap();
    let remote = ok.expect("server came up");
    let local = simnet(&["--format", "json", "infer", &fixture("sore_throat.json")]);
    assert_eq!(remote.stdout, local.stdout);
}
