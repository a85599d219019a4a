use std::collections::BTreeMap;

use serde_json::Value;
use simnet_core::bundle::{
    compile, compile_bytes, load_bundle, save_bundle, transform_bundle, BundleError, Compiled, CompiledModel,
};
use simnet_core::decision::{evaluate_cases, EvaluationCase};
use simnet_core::fixtures::bundles::*;
use simnet_core::inference::Engine;
use simnet_core::similarity::{Edge, Procedure};

const TOL: f64 = 1e-9;

fn ready(src: &str) -> Box<CompiledModel> {
    match compile_bytes(src.as_bytes(), TOL).unwrap() {
        Compiled::Ready(m) => m,
        Compiled::Inconsistent { verdict, .. } => panic!("inconsistent: {verdict:?}"),
    }
}

#[test]
fn shipped_fixtures_are_canonical() {
    for src in [SORE_THROAT, SPLIT_ENDPOINT_CHAIN, LOSS_PAIR, ABDOMINAL_PAIN] {
        let b = load_bundle(src.as_bytes()).unwrap();
        assert_eq!(String::from_utf8(save_bundle(&b)).unwrap(), src);
    }
}

#[test]
fn sore_throat_global_structure() {
    let m = ready(SORE_THROAT);
    assert!(m.verdict.is_consistent());
    assert!(m.warnings.is_empty() && m.conflicts.is_empty());
    let km = &m.global.map;
    for (a, b) in [
        ("DISEASE", "ABDOMINAL PAIN"),
        ("DISEASE", "QUALITY OF VOICE"),
        ("TONSILS INVOLVED", "TONSILLAR PUS"),
        ("FEVER", "TOXIC APPEARANCE"),
        ("ABDOMINAL PAIN", "TOXIC APPEARANCE"),
    ] {
        assert!(km.has_arc(a, b), "{a} -> {b}");
    }
    assert_eq!(m.clusters.clusters.len(), 4);
    let toxic = m.clusters.cluster_of("TOXIC APPEARANCE").unwrap();
    assert_eq!(m.clusters.cluster_of("FEVER"), Some(toxic));
}

#[test]
fn quality_of_voice_is_shared_through_the_graph() {
    let m = ready(SORE_THROAT);
    let t = m.global.table("QUALITY OF VOICE").unwrap();
    assert_eq!(t.parents, vec!["DISEASE"]);
    let hyps = &m.global.map.variable("DISEASE").unwrap().instances;
    let row = |h: &str| &t.rows[hyps.iter().position(|x| x == h).unwrap()];
    for h in [
        "VIRAL PHARYNGITIS",
        "STREP THROAT",
        "MONONUCLEOSIS",
        "TONSILLAR CELLULITIS",
    ] {
        assert_eq!(row(h), &vec![0.9, 0.1], "{h}");
    }
    assert_eq!(row("PERITONSILLAR ABSCESS"), &vec![0.15, 0.85]);
}

#[test]
fn compile_is_a_function_of_the_bytes() {
    let a = ready(SORE_THROAT);
    let b = ready(SORE_THROAT);
    assert_eq!(a, b);
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
}

#[test]
fn split_endpoint_chain_is_rejected_at_line_eleven() {
    let c = compile_bytes(SPLIT_ENDPOINT_CHAIN.as_bytes(), TOL).unwrap();
    let Compiled::Inconsistent { verdict, hash } = c else {
        panic!("expected inconsistent")
    };
    assert_eq!(hash.len(), 64);
    let w = verdict.witness.unwrap();
    assert_eq!(w.procedure, Procedure::Ordinary);
    assert_eq!((w.line, w.returned_at), (11, 12));
    assert_eq!(w.edge, Edge::new("h2", "h3"));
    assert!(!verdict.repairs.is_empty());
}

#[test]
fn missing_conditioning_instance_is_named() {
    let mut v: Value = serde_json::from_str(SORE_THROAT).unwrap();
    let pus = v["assessments"]
        .as_array_mut()
        .unwrap()
        .iter_mut()
        .find(|a| a["feature"] == "TONSILLAR PUS")
        .unwrap();
    pus["partitions"].as_array_mut().unwrap().remove(0);
    let err = compile(&serde_json::from_value(v).unwrap(), TOL).unwrap_err();
    assert!(matches!(err, BundleError::Partition(_)), "{err}");
    assert!(err.to_string().contains("TONSILS INVOLVED=NONE"), "{err}");
}

#[test]
fn schema_errors_carry_paths() {
    assert!(matches!(load_bundle(b"  "), Err(BundleError::Schema { .. })));
    let bad = SORE_THROAT.replacen("\"prior\"", "\"priors\"", 1);
    let err = load_bundle(bad.as_bytes()).unwrap_err();
    assert!(err.path().unwrap().starts_with("distinguished"), "{err}");
}

#[test]
fn unknown_hypothesis_in_a_partition() {
    let bad = SORE_THROAT.replacen("\"MONONUCLEOSIS\",\n", "\"MONONUCLEOSIS II\",\n", 1);
    assert_ne!(bad, SORE_THROAT);
    let b = load_bundle(bad.as_bytes()).unwrap();
    let err = compile(&b, TOL).unwrap_err();
    assert!(err.to_string().contains("MONONUCLEOSIS II"), "{err}");
}

#[test]
fn loss_pair_evaluation() {
    let m = ready(LOSS_PAIR);
    #[derive(serde::Deserialize)]
    struct Cases {
        cases: Vec<EvaluationCase>,
    }
    let cases: Cases = serde_json::from_str(LOSS_PAIR_CASES).unwrap();
    let engine = Engine::new(&m.global).unwrap();
    let report = evaluate_cases(&engine, m.utilities.as_ref().unwrap(), &cases.cases).unwrap();
    let losses: Vec<f64> = report.cases.iter().map(|c| c.loss.loss).collect();
    assert_eq!(losses, vec![0.0, 64.0]);
    assert_eq!(report.mean, 32.0);
}

#[test]
fn abdominal_pain_becomes_independent_diseases() {
    let b = load_bundle(ABDOMINAL_PAIN.as_bytes()).unwrap();
    let out = transform_bundle(&b, "NORMAL", &BTreeMap::new(), TOL).unwrap();
    let km = &out.model.map.map;
    assert_eq!(out.model.diseases, vec!["APPI", "RUPTURED ECTOPIC"]);
    let mut arcs: Vec<(&str, &str)> = km.arcs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    arcs.sort();
    assert_eq!(
        arcs,
        vec![
            ("APPI", "ANOREXIA"),
            ("APPI", "PERITONITIS"),
            ("RUPTURED ECTOPIC", "PERITONITIS"),
            ("RUPTURED ECTOPIC", "VAGINAL BLEEDING"),
        ]
    );
    for local in &out.star_maps {
        assert!(local.edge.contains("NORMAL"));
    }
}
