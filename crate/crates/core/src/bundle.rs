//! JSON interchange format for a similarity network with its assessments,
//! and compilation into an inference-ready model.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decision::{CostModel, DecisionError, UtilityInput, UtilityMatrix};
use crate::inference::{decompose_clusters, ClusterDecomposition, InferenceError};
use crate::model::{validate_map, AssessedKnowledgeMap, ConditionalTable, Variable};
use crate::multihyp::{star_transform, transform_multihyp, AssessedNetwork, MultiDiseaseMap, MultiHypError};
use crate::partitions::{
    audit_partitions, expand_assessments, propagate_through_similarity, validate_partition, Conditioning,
    HypothesisSet, Partition, PartitionConflict, PartitionError,
};
use crate::similarity::{
    check_consistency_comprehensive, check_consistency_ordinary, construct_global, derive_ordinary, ConsistencyVerdict,
    Edge, LocalMap, MapKind, SimilarityError, SimilarityGraph, SimilarityNetwork,
};

pub const FORMAT: &str = "simnet-bundle/1";
/// Significant digits kept for numbers in canonical output.
pub const CANONICAL_DIGITS: usize = 12;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {message}")]
    Reference { path: String, message: String },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("compiled map is invalid: {0}")]
    InvalidMap(String),
    #[error("`{0}` is in the global map but has no assessment")]
    MissingAssessment(String),
    #[error(transparent)]
    MultiHyp(#[from] MultiHypError),
    #[error("network is inconsistent")]
    Inconsistent(Box<ConsistencyVerdict>),
}

impl BundleError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            BundleError::Schema { .. } => "schema_error",
            BundleError::Reference { .. } => "reference_error",
            BundleError::Similarity(_) => "similarity_error",
            BundleError::Partition(_) => "partition_error",
            BundleError::Decision(_) => "decision_error",
            BundleError::Inference(_) => "inference_error",
            BundleError::InvalidMap(_) => "invalid_map",
            BundleError::MissingAssessment(_) => "missing_assessment",
            BundleError::MultiHyp(_) => "multi_hypothesis_error",
            BundleError::Inconsistent(_) => "inconsistent_network",
        }
    }

    /// JSON path of the offending element, when known.
    pub fn path(&self) -> Option<&str> {
        match self {
            BundleError::Schema { path, .. } | BundleError::Reference { path, .. } => Some(path),
            _ => None,
        }
    }

    fn reference(path: impl Into<String>, message: impl Into<String>) -> Self {
        BundleError::Reference {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub name: String,
    #[serde(default)]
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Distinguished {
    pub name: String,
    pub hypotheses: Vec<String>,
    /// Aligned with `hypotheses`.
    pub prior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub edges: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalMapSpec {
    pub edge: (String, String),
    /// Required for ordinary networks; comprehensive maps hold every
    /// feature.
    #[serde(default)]
    pub nodes: Vec<String>,
    #[serde(default)]
    pub arcs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    #[serde(default)]
    pub conditioning: Conditioning,
    pub sets: Vec<HypothesisSet>,
    pub distributions: Vec<Vec<f64>>,
}

/// Per-hypothesis distributions given for a few hypotheses and shared
/// across edges whose local map omits the feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationSpec {
    #[serde(default)]
    pub conditioning: Conditioning,
    pub seeds: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentSpec {
    pub feature: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partitions: Vec<PartitionSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub propagate: Vec<PropagationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkBundle {
    pub format: String,
    pub metadata: Metadata,
    #[serde(default = "default_kind")]
    pub kind: MapKind,
    pub distinguished: Distinguished,
    pub variables: Vec<Variable>,
    pub similarity_graph: GraphSpec,
    pub local_maps: Vec<LocalMapSpec>,
    pub assessments: Vec<AssessmentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utilities: Option<UtilityInput>,
    #[serde(default)]
    pub costs: CostModel,
}

fn default_kind() -> MapKind {
    MapKind::Ordinary
}

/// Parses a bundle, reporting schema errors with their JSON path.
pub fn load_bundle(bytes: &[u8]) -> Result<NetworkBundle, BundleError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(BundleError::Schema {
            path: ".".into(),
            message: "empty document".into(),
        });
    }
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let bundle: NetworkBundle = serde_path_to_error::deserialize(de).map_err(|e| BundleError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    if bundle.format != FORMAT {
        return Err(BundleError::Schema {
            path: "format".into(),
            message: format!("expected `{FORMAT}`, found `{}`", bundle.format),
        });
    }
    Ok(bundle)
}

/// Canonical bytes: sorted keys, numbers rounded to
/// [`CANONICAL_DIGITS`] significant digits, two-space indent, trailing
/// newline.
pub fn save_bundle(bundle: &NetworkBundle) -> Vec<u8> {
    canonical_json(&serde_json::to_value(bundle).expect("bundle serializes"))
}

/// Rounds `x` to [`CANONICAL_DIGITS`] significant digits.
pub fn round_significant(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", CANONICAL_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

fn canonicalize(v: &Value) -> Value {
    match v {
        Value::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(_), _, _) | (_, Some(_), _) => v.clone(),
            (_, _, Some(f)) => {
                serde_json::Number::from_f64(round_significant(f)).map_or_else(|| v.clone(), Value::Number)
            }
            _ => v.clone(),
        },
        Value::Array(a) => Value::Array(a.iter().map(canonicalize).collect()),
        // serde_json's default map is ordered by key.
        Value::Object(o) => Value::Object(o.iter().map(|(k, v)| (k.clone(), canonicalize(v))).collect()),
        _ => v.clone(),
    }
}

/// Canonical serialization of any JSON value.
pub fn canonical_json(v: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&canonicalize(v)).expect("value serializes");
    out.push(b'\n');
    out
}

/// Hex SHA-256 of the canonical bytes.
pub fn model_hash(bundle: &NetworkBundle) -> String {
    hex::encode(Sha256::digest(save_bundle(bundle)))
}

impl NetworkBundle {
    pub fn hypothesis_variable(&self) -> Variable {
        Variable {
            name: self.distinguished.name.clone(),
            instances: self.distinguished.hypotheses.clone(),
        }
    }

    fn feature(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    /// Referential integrity: every name used is declared once.
    pub fn check_references(&self, tolerance: f64) -> Result<(), BundleError> {
        let d = &self.distinguished;
        let mut hyps = BTreeSet::new();
        for (i, h) in d.hypotheses.iter().enumerate() {
            if !hyps.insert(h.as_str()) {
                return Err(BundleError::reference(
                    format!("distinguished.hypotheses[{i}]"),
                    format!("duplicate hypothesis `{h}`"),
                ));
            }
        }
        if hyps.len() < 2 {
            return Err(BundleError::reference(
                "distinguished.hypotheses",
                "at least two hypotheses are required",
            ));
        }
        if d.prior.len() != d.hypotheses.len() {
            return Err(BundleError::reference(
                "distinguished.prior",
                format!("{} entries for {} hypotheses", d.prior.len(), d.hypotheses.len()),
            ));
        }
        if d.prior.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(BundleError::reference(
                "distinguished.prior",
                "entries must lie in [0, 1]",
            ));
        }
        let sum: f64 = d.prior.iter().sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(BundleError::reference("distinguished.prior", format!("sums to {sum}")));
        }
        let mut names = BTreeSet::new();
        for (i, v) in self.variables.iter().enumerate() {
            if v.name == d.name || !names.insert(v.name.as_str()) {
                return Err(BundleError::reference(
                    format!("variables[{i}].name"),
                    format!("duplicate variable `{}`", v.name),
                ));
            }
            let unique: BTreeSet<&String> = v.instances.iter().collect();
            if unique.len() < 2 || unique.len() != v.instances.len() {
                return Err(BundleError::reference(
                    format!("variables[{i}].instances"),
                    "need at least two distinct instances",
                ));
            }
        }
        for (i, (a, b)) in self.similarity_graph.edges.iter().enumerate() {
            for h in [a, b] {
                if !hyps.contains(h.as_str()) {
                    return Err(BundleError::reference(
                        format!("similarity_graph.edges[{i}]"),
                        format!("unknown hypothesis `{h}`"),
                    ));
                }
            }
        }
        for (i, m) in self.local_maps.iter().enumerate() {
            for h in [&m.edge.0, &m.edge.1] {
                if !hyps.contains(h.as_str()) {
                    return Err(BundleError::reference(
                        format!("local_maps[{i}].edge"),
                        format!("unknown hypothesis `{h}`"),
                    ));
                }
            }
            for (j, n) in m.nodes.iter().enumerate() {
                if !names.contains(n.as_str()) {
                    return Err(BundleError::reference(
                        format!("local_maps[{i}].nodes[{j}]"),
                        format!("unknown variable `{n}`"),
                    ));
                }
            }
            for (j, (a, b)) in m.arcs.iter().enumerate() {
                for n in [a, b] {
                    if *n != d.name && !names.contains(n.as_str()) {
                        return Err(BundleError::reference(
                            format!("local_maps[{i}].arcs[{j}]"),
                            format!("unknown variable `{n}`"),
                        ));
                    }
                }
            }
        }
        let h = self.hypothesis_variable();
        for (i, a) in self.assessments.iter().enumerate() {
            let Some(feature) = self.feature(&a.feature) else {
                return Err(BundleError::reference(
                    format!("assessments[{i}].feature"),
                    format!("unknown variable `{}`", a.feature),
                ));
            };
            for (j, p) in a.partitions.iter().enumerate() {
                let path = format!("assessments[{i}].partitions[{j}]");
                self.check_conditioning(&p.conditioning, &path)?;
                let part = Partition {
                    feature: a.feature.clone(),
                    conditioning: p.conditioning.clone(),
                    sets: p.sets.clone(),
                    distributions: p.distributions.clone(),
                };
                let report = validate_partition(&part, &h, feature, tolerance);
                if !report.is_valid() {
                    return Err(BundleError::reference(path, report.to_string()));
                }
            }
            for (j, p) in a.propagate.iter().enumerate() {
                let path = format!("assessments[{i}].propagate[{j}]");
                self.check_conditioning(&p.conditioning, &path)?;
                for (s, dist) in &p.seeds {
                    if !hyps.contains(s.as_str()) {
                        return Err(BundleError::reference(
                            format!("{path}.seeds"),
                            format!("unknown hypothesis `{s}`"),
                        ));
                    }
                    if dist.len() != feature.cardinality() {
                        return Err(BundleError::reference(
                            format!("{path}.seeds.{s}"),
                            format!("expected {} entries", feature.cardinality()),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_conditioning(&self, c: &Conditioning, path: &str) -> Result<(), BundleError> {
        for (k, v) in c {
            let ok = self.feature(k).is_some_and(|f| f.instance_index(v).is_some());
            if !ok {
                return Err(BundleError::reference(
                    format!("{path}.conditioning"),
                    format!("`{k}={v}` is not a variable instance"),
                ));
            }
        }
        Ok(())
    }

    pub fn network(&self) -> SimilarityNetwork {
        let hyps: Vec<&str> = self.distinguished.hypotheses.iter().map(String::as_str).collect();
        let edges: Vec<(&str, &str)> = self
            .similarity_graph
            .edges
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect();
        let all: Vec<&str> = self.variables.iter().map(|v| v.name.as_str()).collect();
        let maps = self
            .local_maps
            .iter()
            .map(|m| {
                let nodes: Vec<&str> = if self.kind == MapKind::Comprehensive {
                    all.clone()
                } else {
                    m.nodes.iter().map(String::as_str).collect()
                };
                let arcs: Vec<(&str, &str)> = m.arcs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
                LocalMap::new(Edge::new(m.edge.0.as_str(), m.edge.1.as_str()), &nodes, &arcs)
            })
            .collect();
        SimilarityNetwork::new(
            self.kind,
            self.distinguished.name.as_str(),
            SimilarityGraph::new(&hyps, &edges),
            self.variables.clone(),
            maps,
        )
    }
}

/// An assessed global map ready for sessions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompiledModel {
    pub hash: String,
    pub name: String,
    pub network: SimilarityNetwork,
    pub verdict: ConsistencyVerdict,
    pub global: AssessedKnowledgeMap,
    pub clusters: ClusterDecomposition,
    pub partitions: Vec<Partition>,
    pub utilities: Option<UtilityMatrix>,
    pub costs: CostModel,
    pub conflicts: Vec<PartitionConflict>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Compiled {
    Ready(Box<CompiledModel>),
    Inconsistent {
        hash: String,
        verdict: Box<ConsistencyVerdict>,
    },
}

impl Compiled {
    pub fn verdict(&self) -> &ConsistencyVerdict {
        match self {
            Compiled::Ready(m) => &m.verdict,
            Compiled::Inconsistent { verdict, .. } => verdict,
        }
    }

    pub fn hash(&self) -> &str {
        match self {
            Compiled::Ready(m) => &m.hash,
            Compiled::Inconsistent { hash, .. } => hash,
        }
    }
}

/// Checks consistency, builds the global map and expands every feature's
/// assessments into its table.
pub fn compile(bundle: &NetworkBundle, tolerance: f64) -> Result<Compiled, BundleError> {
    bundle.check_references(tolerance)?;
    let hash = model_hash(bundle);
    let network = bundle.network();
    network.validate()?;
    let (verdict, ordinary) = match network.kind {
        MapKind::Comprehensive => (check_consistency_comprehensive(&network)?, derive_ordinary(&network)),
        MapKind::Ordinary => (check_consistency_ordinary(&network)?, network.clone()),
    };
    if !verdict.is_consistent() {
        return Ok(Compiled::Inconsistent {
            hash,
            verdict: Box::new(verdict),
        });
    }
    let km = construct_global(&ordinary)?;
    let h = bundle.hypothesis_variable();
    let hyps = &h.instances;
    let mut warnings = Vec::new();
    let mut tables = vec![ConditionalTable::new(
        h.name.as_str(),
        &[],
        vec![bundle.distinguished.prior.clone()],
    )];
    let mut all_partitions = Vec::new();
    for v in km.variables.iter().skip(1) {
        let spec = bundle
            .assessments
            .iter()
            .find(|a| a.feature == v.name)
            .ok_or_else(|| BundleError::MissingAssessment(v.name.clone()))?;
        let mut partitions: Vec<Partition> = spec
            .partitions
            .iter()
            .map(|p| Partition {
                feature: v.name.clone(),
                conditioning: p.conditioning.clone(),
                sets: p.sets.clone(),
                distributions: p.distributions.clone(),
            })
            .collect();
        for p in &spec.propagate {
            let per = propagate_through_similarity(&ordinary, &v.name, &p.seeds, tolerance)?;
            partitions.push(Partition::from_distributions(
                &v.name,
                p.conditioning.clone(),
                hyps,
                &per,
            ));
        }
        let parent_names: Vec<String> = km.parents(&v.name).into_iter().filter(|p| *p != h.name).collect();
        let parents: Vec<Variable> = parent_names
            .iter()
            .map(|p| km.variable(p).expect("parent in map").clone())
            .collect();
        let include_h = km.has_arc(&h.name, &v.name);
        tables.push(expand_assessments(&partitions, &h, v, &parents, include_h, tolerance)?);
        all_partitions.extend(partitions);
    }
    for a in &bundle.assessments {
        if km.index_of(&a.feature).is_none() {
            warnings.push(format!("`{}` is in no local map; its assessment is unused", a.feature));
        }
    }
    let global = AssessedKnowledgeMap::new(km, tables);
    let report = validate_map(&global, tolerance);
    if !report.is_valid() {
        return Err(BundleError::InvalidMap(report.to_string()));
    }
    warnings.extend(report.warnings);
    let clusters = decompose_clusters(&global.map)?;
    let conflicts = verdict
        .constructor
        .as_ref()
        .map(|c| audit_partitions(c, &all_partitions, tolerance))
        .unwrap_or_default();
    let utilities = bundle
        .utilities
        .as_ref()
        .map(|u| UtilityMatrix::from_input(u, hyps))
        .transpose()?;
    bundle.costs.validate()?;
    Ok(Compiled::Ready(Box::new(CompiledModel {
        hash,
        name: bundle.metadata.name.clone(),
        network: ordinary,
        verdict,
        global,
        clusters,
        partitions: all_partitions,
        utilities,
        costs: bundle.costs.clone(),
        conflicts,
        warnings,
    })))
}

/// Parses and compiles in one step.
pub fn compile_bytes(bytes: &[u8], tolerance: f64) -> Result<Compiled, BundleError> {
    compile(&load_bundle(bytes)?, tolerance)
}

pub const MULTI_FORMAT: &str = "simnet-multidisease/1";

/// Output document of the multiple-disease transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiDiseaseBundle {
    pub format: String,
    pub name: String,
    /// Local maps of the NORMAL-centred network the map was built from.
    pub star_maps: Vec<LocalMap>,
    pub model: MultiDiseaseMap,
}

/// Compiles `bundle`, re-centres it on `normal` and builds the
/// independent-disease map.
pub fn transform_bundle(
    bundle: &NetworkBundle,
    normal: &str,
    priors: &BTreeMap<String, f64>,
    tolerance: f64,
) -> Result<MultiDiseaseBundle, BundleError> {
    let m = match compile(bundle, tolerance)? {
        Compiled::Ready(m) => m,
        Compiled::Inconsistent { verdict, .. } => return Err(BundleError::Inconsistent(verdict)),
    };
    let assessed = AssessedNetwork {
        network: m.network.clone(),
        global: m.global.clone(),
    };
    let star = star_transform(&assessed, normal, tolerance)?;
    let model = transform_multihyp(&star, normal, priors)?;
    Ok(MultiDiseaseBundle {
        format: MULTI_FORMAT.to_string(),
        name: bundle.metadata.name.clone(),
        star_maps: star.network.local_maps,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"{
        "format": "simnet-bundle/1",
        "metadata": {"name": "tiny"},
        "distinguished": {"name": "h", "hypotheses": ["a", "b"], "prior": [0.5, 0.5]},
        "variables": [{"name": "f", "instances": ["-", "+"]}],
        "similarity_graph": {"edges": [["a", "b"]]},
        "local_maps": [{"edge": ["a", "b"], "nodes": ["f"], "arcs": [["h", "f"]]}],
        "assessments": [{"feature": "f", "partitions": [{
            "sets": [{"name": "A", "members": ["a"]}, {"name": "B", "members": ["b"]}],
            "distributions": [[0.1, 0.9], [0.9, 0.1]]
        }]}]
    }"#;

    #[test]
    fn round_trip_is_canonical() {
        let b = load_bundle(TINY.as_bytes()).unwrap();
        let bytes = save_bundle(&b);
        let again = load_bundle(&bytes).unwrap();
        assert_eq!(again, b);
        assert_eq!(save_bundle(&again), bytes);
    }

    #[test]
    fn empty_and_misshapen_documents() {
        assert!(matches!(load_bundle(b""), Err(BundleError::Schema { .. })));
        let bad = TINY.replace("\"prior\": [0.5, 0.5]", "\"prior\": \"x\"");
        let err = load_bundle(bad.as_bytes()).unwrap_err();
        assert_eq!(err.path(), Some("distinguished.prior"));
    }

    #[test]
    fn unknown_hypothesis_in_partition() {
        let bad = TINY.replace("\"members\": [\"b\"]", "\"members\": [\"zz\"]");
        let b = load_bundle(bad.as_bytes()).unwrap();
        let err = compile(&b, 1e-9).unwrap_err();
        assert!(matches!(err, BundleError::Reference { .. }), "{err}");
        assert!(err.to_string().contains("zz"));
    }

    #[test]
    fn tiny_compiles() {
        let Compiled::Ready(m) = compile_bytes(TINY.as_bytes(), 1e-9).unwrap() else {
            panic!("inconsistent")
        };
        assert_eq!(m.global.table("f").unwrap().rows, vec![vec![0.1, 0.9], vec![0.9, 0.1]]);
        assert_eq!(m.hash.len(), 64);
    }

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_significant(0.1 + 0.2), 0.3);
        assert_eq!(round_significant(1.0 / 3.0), 0.333333333333);
        assert_eq!(round_significant(0.0), 0.0);
    }
}
