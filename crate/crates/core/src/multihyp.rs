//! Noisy-OR combination and the conversion of a single-fault network with a
//! NORMAL hypothesis into a map of independent binary diseases.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{advance, AssessedKnowledgeMap, ConditionalTable, KnowledgeMap, ModelError, Variable};
use crate::similarity::{Edge, LocalMap, SimilarityGraph, SimilarityNetwork};

/// Binary findings use instance 1 as "present".
pub const PRESENT: usize = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MultiHypError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("leak for `{0}` is 1, so activations cannot be inverted")]
    CertainLeak(String),
    #[error("`{finding}`: probability {value} is outside [0, 1]")]
    OutOfRange { finding: String, value: f64 },
    #[error("`{finding}`: activation for `{disease}` is below the leak")]
    ActivationBelowLeak { finding: String, disease: String },
    #[error("`{finding}` has no activation for `{disease}`")]
    UnknownDisease { finding: String, disease: String },
    #[error("hypothesis `{0}` is not in the network")]
    MissingNormal(String),
    #[error("`{0}` is not binary")]
    NonBinary(String),
    #[error("no local map between `{0}` and NORMAL")]
    MissingLocalMap(String),
    #[error("edge {0} does not touch NORMAL")]
    NotStar(Edge),
    #[error("global map is not anchored on the network's distinguished node")]
    GlobalMismatch,
    #[error("prior for `{0}` is outside [0, 1]")]
    BadPrior(String),
}

/// Causal-independence parameters for one binary finding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyOrSpec {
    pub finding: String,
    /// `p(f+ | no disease)`.
    pub leak: f64,
    /// `p(f+ | only this disease)`.
    pub activations: BTreeMap<String, f64>,
}

impl NoisyOrSpec {
    pub fn validate(&self) -> Result<(), MultiHypError> {
        let in_range = |v: f64| (0.0..=1.0).contains(&v);
        if !in_range(self.leak) {
            return Err(MultiHypError::OutOfRange {
                finding: self.finding.clone(),
                value: self.leak,
            });
        }
        for (d, &a) in &self.activations {
            if !in_range(a) {
                return Err(MultiHypError::OutOfRange {
                    finding: self.finding.clone(),
                    value: a,
                });
            }
            if a < self.leak {
                return Err(MultiHypError::ActivationBelowLeak {
                    finding: self.finding.clone(),
                    disease: d.clone(),
                });
            }
        }
        Ok(())
    }

    /// Probability that `disease` alone makes the finding appear when it
    /// was absent.
    pub fn cause_probability(&self, disease: &str) -> Result<f64, MultiHypError> {
        let a = self.activation(disease)?;
        if self.leak == 1.0 {
            return Err(MultiHypError::CertainLeak(self.finding.clone()));
        }
        Ok(1.0 - (1.0 - a) / (1.0 - self.leak))
    }

    fn activation(&self, disease: &str) -> Result<f64, MultiHypError> {
        self.activations
            .get(disease)
            .copied()
            .ok_or_else(|| MultiHypError::UnknownDisease {
                finding: self.finding.clone(),
                disease: disease.to_string(),
            })
    }
}

/// `p(f+ | present)` from the leak and per-disease activations.
pub fn noisy_or(spec: &NoisyOrSpec, present: &[&str]) -> Result<f64, MultiHypError> {
    spec.validate()?;
    if present.is_empty() {
        return Ok(spec.leak);
    }
    if spec.leak == 1.0 {
        return Err(MultiHypError::CertainLeak(spec.finding.clone()));
    }
    let mut absent = 1.0 - spec.leak;
    for d in present {
        absent *= (1.0 - spec.activation(d)?) / (1.0 - spec.leak);
    }
    Ok(1.0 - absent)
}

/// `p(f+ | present)` from the leak and per-disease cause probabilities.
pub fn noisy_or_causal(leak: f64, causes: &[f64]) -> f64 {
    1.0 - (1.0 - leak) * causes.iter().map(|p| 1.0 - p).product::<f64>()
}

/// A similarity network together with its assessed global map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessedNetwork {
    pub network: SimilarityNetwork,
    pub global: AssessedKnowledgeMap,
}

fn rows_differ(table: &ConditionalTable, h_card: usize, a: usize, b: usize, tol: f64) -> bool {
    let block = table.rows.len() / h_card;
    (0..block).any(|r| {
        table.rows[a * block + r]
            .iter()
            .zip(&table.rows[b * block + r])
            .any(|(x, y)| (x - y).abs() > tol)
    })
}

/// Features whose distribution given their parents differs between the two
/// hypotheses.
fn relevant_features(global: &AssessedKnowledgeMap, h: &str, a: usize, b: usize, tol: f64) -> BTreeSet<String> {
    let h_card = global.map.variable(h).map_or(1, Variable::cardinality);
    global
        .tables
        .values()
        .filter(|t| t.child != h && t.parents.first().map(String::as_str) == Some(h))
        .filter(|t| rows_differ(t, h_card, a, b, tol))
        .map(|t| t.child.clone())
        .collect()
}

/// Local map between `hi` and `normal` read off the global map: features
/// whose tables separate the two, their feature ancestors, and the global
/// arcs among them.
fn derived_local_map(global: &AssessedKnowledgeMap, h: &str, hi: usize, h0: usize, tol: f64) -> LocalMap {
    let hyps = &global.map.variable(h).expect("distinguished").instances;
    let relevant = relevant_features(global, h, hi, h0, tol);
    let mut nodes = relevant.clone();
    let mut stack: Vec<String> = relevant.iter().cloned().collect();
    while let Some(x) = stack.pop() {
        for p in global.map.parents(&x) {
            if p != h && nodes.insert(p.clone()) {
                stack.push(p);
            }
        }
    }
    let mut arcs: BTreeSet<(String, String)> = global
        .map
        .arcs
        .iter()
        .filter(|(a, b)| nodes.contains(a) && nodes.contains(b))
        .cloned()
        .collect();
    arcs.extend(relevant.iter().map(|x| (h.to_string(), x.clone())));
    LocalMap {
        edge: Edge::new(hyps[hi].clone(), hyps[h0].clone()),
        nodes,
        arcs,
    }
}

/// Re-centres the similarity graph on `normal`. Existing edges to `normal`
/// keep their local maps; the rest are derived from the global map, which
/// is carried over unchanged.
pub fn star_transform(
    assessed: &AssessedNetwork,
    normal: &str,
    tolerance: f64,
) -> Result<AssessedNetwork, MultiHypError> {
    let net = &assessed.network;
    let h = net.distinguished.as_str();
    if assessed.global.map.distinguished.as_deref() != Some(h) {
        return Err(MultiHypError::GlobalMismatch);
    }
    let hyps = &net.graph.hypotheses;
    let h0 = hyps
        .iter()
        .position(|x| x == normal)
        .ok_or_else(|| MultiHypError::MissingNormal(normal.to_string()))?;
    let mut maps = Vec::new();
    let mut edges = Vec::new();
    for (i, hi) in hyps.iter().enumerate() {
        if i == h0 {
            continue;
        }
        let edge = Edge::new(hi.clone(), normal);
        let map = match net.local_map(&edge) {
            Some(m) => m.clone(),
            None => derived_local_map(&assessed.global, h, i, h0, tolerance),
        };
        edges.push((hi.clone(), normal.to_string()));
        maps.push(map);
    }
    let edge_refs: Vec<(&str, &str)> = edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let hyp_refs: Vec<&str> = hyps.iter().map(String::as_str).collect();
    Ok(AssessedNetwork {
        network: SimilarityNetwork::new(
            net.kind,
            h,
            SimilarityGraph::new(&hyp_refs, &edge_refs),
            net.variables.clone(),
            maps,
        ),
        global: assessed.global.clone(),
    })
}

/// Independent binary disease roots over the original findings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiDiseaseMap {
    pub map: AssessedKnowledgeMap,
    pub diseases: Vec<String>,
    pub normal: String,
    /// Causal-independence assertions the construction relies on but does
    /// not verify.
    pub assumed_assertions: Vec<String>,
    pub warnings: Vec<String>,
}

/// Builds the multiple-disease map from a star network centred on
/// `normal`. `priors` gives `p(disease present)`; absent entries default
/// to `p(h_i) / (p(h_i) + p(normal))` from the global prior.
pub fn transform_multihyp(
    star: &AssessedNetwork,
    normal: &str,
    priors: &BTreeMap<String, f64>,
) -> Result<MultiDiseaseMap, MultiHypError> {
    let net = &star.network;
    let h = net.distinguished.as_str();
    let global = &star.global;
    if global.map.distinguished.as_deref() != Some(h) {
        return Err(MultiHypError::GlobalMismatch);
    }
    let hyps = &net.graph.hypotheses;
    let h0 = hyps
        .iter()
        .position(|x| x == normal)
        .ok_or_else(|| MultiHypError::MissingNormal(normal.to_string()))?;
    if let Some(e) = net.graph.edges.iter().find(|e| !e.contains(normal)) {
        return Err(MultiHypError::NotStar(e.clone()));
    }
    let diseases: Vec<(usize, &String)> = hyps.iter().enumerate().filter(|(i, _)| *i != h0).collect();
    let mut causes: BTreeMap<&str, Vec<(usize, &str)>> = BTreeMap::new();
    for &(i, d) in &diseases {
        let m = net
            .local_map(&Edge::new(d.clone(), normal))
            .ok_or_else(|| MultiHypError::MissingLocalMap(d.clone()))?;
        for (a, b) in &m.arcs {
            if a == h {
                causes.entry(b.as_str()).or_default().push((i, d.as_str()));
            }
        }
    }

    let features: Vec<&Variable> = global.map.variables.iter().filter(|v| v.name != h).collect();
    for v in &features {
        if v.cardinality() != 2 {
            return Err(MultiHypError::NonBinary(v.name.clone()));
        }
    }
    let mut variables: Vec<Variable> = diseases.iter().map(|(_, d)| Variable::binary(d.as_str())).collect();
    variables.extend(features.iter().map(|v| (*v).clone()));
    let mut arcs: Vec<(String, String)> = global.map.arcs.iter().filter(|(a, _)| a != h).cloned().collect();
    for (x, ds) in &causes {
        arcs.extend(ds.iter().map(|(_, d)| (d.to_string(), x.to_string())));
    }

    let prior_h = &global
        .table(h)
        .ok_or_else(|| ModelError::Invalid(format!("no table for `{h}`")))?
        .rows[0];
    let mut tables = Vec::new();
    for &(i, d) in &diseases {
        let q = match priors.get(d.as_str()) {
            Some(&q) => q,
            None => {
                let z = prior_h[i] + prior_h[h0];
                if z > 0.0 {
                    prior_h[i] / z
                } else {
                    0.0
                }
            }
        };
        if !(0.0..=1.0).contains(&q) {
            return Err(MultiHypError::BadPrior(d.clone()));
        }
        tables.push(ConditionalTable::new(d.as_str(), &[], vec![vec![1.0 - q, q]]));
    }

    let mut assumed = Vec::new();
    let mut warnings = Vec::new();
    for v in &features {
        let t = global
            .table(&v.name)
            .ok_or_else(|| ModelError::Invalid(format!("no table for `{}`", v.name)))?;
        let has_h = t.parents.first().map(String::as_str) == Some(h);
        let feat_parents: Vec<&str> = t.parents.iter().map(String::as_str).filter(|p| *p != h).collect();
        let feat_cards: Vec<usize> = feat_parents
            .iter()
            .map(|p| global.map.variable(p).map_or(1, Variable::cardinality))
            .collect();
        let block: usize = feat_cards.iter().product();
        let row = |hk: usize, r: usize| -> f64 {
            let idx = if has_h { hk * block + r } else { r };
            t.rows[idx][PRESENT]
        };
        let ds: Vec<(usize, &str)> = causes.get(v.name.as_str()).cloned().unwrap_or_default();
        if ds.len() > 1 {
            let names: Vec<&str> = ds.iter().map(|(_, d)| *d).collect();
            assumed.push(format!(
                "{} act on `{}` independently (noisy OR)",
                names.join(", "),
                v.name
            ));
        }
        let mut parents: Vec<&str> = ds.iter().map(|(_, d)| *d).collect();
        parents.extend(&feat_parents);
        let mut rows = Vec::with_capacity((1 << ds.len()) * block);
        let mut present = vec![0usize; ds.len()];
        let twos = vec![2usize; ds.len()];
        loop {
            for r in 0..block {
                let spec = NoisyOrSpec {
                    finding: v.name.clone(),
                    leak: row(h0, r),
                    activations: ds.iter().map(|&(i, d)| (d.to_string(), row(i, r))).collect(),
                };
                let on: Vec<&str> = ds
                    .iter()
                    .zip(&present)
                    .filter(|(_, s)| **s == PRESENT)
                    .map(|((_, d), _)| *d)
                    .collect();
                let p = if spec.leak == 1.0 {
                    if !on.is_empty() && r == 0 {
                        warnings.push(format!("`{}` is certain without disease", v.name));
                    }
                    1.0
                } else {
                    noisy_or(&spec, &on)?
                };
                rows.push(vec![1.0 - p, p]);
            }
            if !advance(&mut present, &twos) {
                break;
            }
        }
        tables.push(ConditionalTable::new(v.name.as_str(), &parents, rows));
    }
    warnings.dedup();

    let arc_refs: Vec<(&str, &str)> = arcs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    Ok(MultiDiseaseMap {
        map: AssessedKnowledgeMap::new(KnowledgeMap::new(variables).with_arcs(&arc_refs), tables),
        diseases: diseases.iter().map(|(_, d)| d.to_string()).collect(),
        normal: normal.to_string(),
        assumed_assertions: assumed,
        warnings,
    })
}
