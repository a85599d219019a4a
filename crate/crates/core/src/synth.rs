//! Seeded random models for property tests, benchmarks and `simnet synth`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundle::{
    round_significant, AssessmentSpec, Distinguished, GraphSpec, LocalMapSpec, Metadata, NetworkBundle, PartitionSpec,
    FORMAT,
};
use crate::decision::{CostModel, UtilityInput, UtilityMatrix};
use crate::model::{
    advance, AssessedKnowledgeMap, ConditionalTable, Evidence, JointDistribution, KnowledgeMap, Variable,
};
use crate::partitions::{conditioning_instances, Partition};
use crate::similarity::{
    check_consistency_comprehensive, check_hs_consistency, construct_comprehensive, construct_global, derive_ordinary,
    Edge, HsMap, HypothesisSpecificNetwork, LocalMap, MapKind, Relevance, RelevanceSet, SimilarityGraph,
    SimilarityNetwork,
};

pub const DISTINGUISHED: &str = "h";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn hypothesis_names(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("h{i}")).collect()
}

fn feature_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// Random connected graph: a random spanning tree plus each remaining pair
/// with probability `extra`.
pub fn random_similarity_graph<R: Rng>(rng: &mut R, hypotheses: &[String], extra: f64) -> SimilarityGraph {
    let mut edges = BTreeSet::new();
    for i in 1..hypotheses.len() {
        let j = rng.random_range(0..i);
        edges.insert(Edge::new(hypotheses[j].as_str(), hypotheses[i].as_str()));
    }
    for i in 0..hypotheses.len() {
        for j in i + 1..hypotheses.len() {
            if rng.random_bool(extra) {
                edges.insert(Edge::new(hypotheses[i].as_str(), hypotheses[j].as_str()));
            }
        }
    }
    SimilarityGraph {
        hypotheses: hypotheses.to_vec(),
        edges,
    }
}

/// Per-hypothesis network over binary features. All maps respect one random
/// feature order; each starts from a shared base map and flips a few arcs.
/// Features with equal parent sets on an edge get a random relevance
/// assertion.
pub fn random_hs_network<R: Rng>(rng: &mut R, hypotheses: usize, features: usize) -> HypothesisSpecificNetwork {
    let hyps = hypothesis_names(hypotheses);
    let names = feature_names(features);
    let graph = random_similarity_graph(rng, &hyps, 0.3);
    let mut order = names.clone();
    order.shuffle(rng);
    let pairs: Vec<(String, String)> = (0..order.len())
        .flat_map(|i| (i + 1..order.len()).map(move |j| (i, j)))
        .map(|(i, j)| (order[i].clone(), order[j].clone()))
        .collect();
    let base: BTreeSet<(String, String)> = pairs.iter().filter(|_| rng.random_bool(0.3)).cloned().collect();
    let hs_maps: Vec<HsMap> = hyps
        .iter()
        .map(|h| {
            let mut arcs = base.clone();
            for p in &pairs {
                if rng.random_bool(0.15) && !arcs.remove(p) {
                    arcs.insert(p.clone());
                }
            }
            HsMap {
                hypothesis: h.clone(),
                arcs,
            }
        })
        .collect();
    let mut relevance = Vec::new();
    for e in &graph.edges {
        let mi = hs_maps.iter().find(|m| m.hypothesis == e.first()).unwrap();
        let mj = hs_maps.iter().find(|m| m.hypothesis == e.second()).unwrap();
        let assertions = names
            .iter()
            .filter(|y| mi.parents(y) == mj.parents(y))
            .map(|y| {
                let r = if rng.random_bool(0.6) {
                    Relevance::Equal
                } else {
                    Relevance::Unequal
                };
                (y.clone(), r)
            })
            .collect();
        relevance.push(RelevanceSet {
            edge: e.clone(),
            assertions,
        });
    }
    HypothesisSpecificNetwork {
        distinguished: DISTINGUISHED.to_string(),
        graph,
        variables: names.iter().map(|n| Variable::binary(n.as_str())).collect(),
        hs_maps,
        relevance,
    }
}

/// Samples per-hypothesis networks until one passes both the
/// per-hypothesis and the comprehensive consistency checks. Returns it with
/// its comprehensive network.
pub fn consistent_comprehensive<R: Rng>(
    rng: &mut R,
    hypotheses: usize,
    features: usize,
) -> (HypothesisSpecificNetwork, SimilarityNetwork) {
    loop {
        let hs = random_hs_network(rng, hypotheses, features);
        if !check_hs_consistency(&hs).is_ok_and(|v| v.is_consistent()) {
            continue;
        }
        let Ok(c) = construct_comprehensive(&hs) else { continue };
        if check_consistency_comprehensive(&c).is_ok_and(|v| v.is_consistent()) {
            return (hs, c);
        }
    }
}

/// Strictly positive parameters for a per-hypothesis network: a prior and,
/// for every hypothesis and feature, a table over that hypothesis' parents.
/// Hypotheses joined by a chain of equality assertions share the table.
#[derive(Debug, Clone, PartialEq)]
pub struct HsParameters {
    pub prior: Vec<f64>,
    /// `tables[k][i]`: feature `i` under hypothesis `k`.
    pub tables: Vec<Vec<ConditionalTable>>,
}

fn positive_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

pub fn sample_hs_parameters<R: Rng>(rng: &mut R, hs: &HypothesisSpecificNetwork) -> HsParameters {
    let hyps = &hs.graph.hypotheses;
    let k = hyps.len();
    let prior = positive_distribution(rng, k);
    let mut tables: Vec<Vec<Option<ConditionalTable>>> = vec![vec![None; hs.variables.len()]; k];
    for (i, v) in hs.variables.iter().enumerate() {
        let mut class: Vec<usize> = (0..k).collect();
        fn root(class: &[usize], mut a: usize) -> usize {
            while class[a] != a {
                a = class[a];
            }
            a
        }
        for r in &hs.relevance {
            if r.assertions.get(&v.name) == Some(&Relevance::Equal) {
                let a = root(&class, hs.graph.index_of(r.edge.first()).unwrap());
                let b = root(&class, hs.graph.index_of(r.edge.second()).unwrap());
                class[a.max(b)] = a.min(b);
            }
        }
        let mut shared: BTreeMap<usize, ConditionalTable> = BTreeMap::new();
        for (kk, h) in hyps.iter().enumerate() {
            let c = root(&class, kk);
            let table = shared
                .entry(c)
                .or_insert_with(|| {
                    let parents: Vec<&str> = hs
                        .variables
                        .iter()
                        .map(|p| p.name.as_str())
                        .filter(|p| hs.hs_map(h).unwrap().arcs.contains(&(p.to_string(), v.name.clone())))
                        .collect();
                    let rows = (0..1usize << parents.len())
                        .map(|_| positive_distribution(rng, v.cardinality()))
                        .collect();
                    ConditionalTable::new(v.name.as_str(), &parents, rows)
                })
                .clone();
            tables[kk][i] = Some(table);
        }
    }
    HsParameters {
        prior,
        tables: tables
            .into_iter()
            .map(|row| row.into_iter().map(Option::unwrap).collect())
            .collect(),
    }
}

impl HsParameters {
    /// Joint over `h` followed by the features, optionally with another
    /// prior.
    pub fn joint(&self, hs: &HypothesisSpecificNetwork, prior: Option<&[f64]>) -> JointDistribution {
        let prior = prior.unwrap_or(&self.prior);
        let mut vars = vec![Variable {
            name: hs.distinguished.clone(),
            instances: hs.graph.hypotheses.clone(),
        }];
        vars.extend(hs.variables.iter().cloned());
        let cards: Vec<usize> = vars.iter().map(Variable::cardinality).collect();
        let index: BTreeMap<&str, usize> = vars.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
        let mut probabilities = Vec::new();
        let mut state = vec![0usize; cards.len()];
        loop {
            let k = state[0];
            let mut p = prior[k];
            for (i, t) in self.tables[k].iter().enumerate() {
                let pstate: Vec<usize> = t.parents.iter().map(|n| state[index[n.as_str()]]).collect();
                let pcards: Vec<usize> = t.parents.iter().map(|n| cards[index[n.as_str()]]).collect();
                p *= t.rows[ConditionalTable::row_index(&pcards, &pstate)][state[i + 1]];
            }
            probabilities.push(p);
            if !advance(&mut state, &cards) {
                break;
            }
        }
        JointDistribution::from_probabilities(vars, probabilities)
    }
}

/// Tables for `km` read off `joint`. Parent instances of probability zero
/// take their row from `fallback` when given, else a uniform row.
pub fn assess_from_joint(
    km: &KnowledgeMap,
    joint: &JointDistribution,
    fallback: Option<&JointDistribution>,
) -> AssessedKnowledgeMap {
    let conditional = |j: &JointDistribution, v: &Variable, parents: &[String]| -> Vec<Vec<f64>> {
        let mut idx: Vec<usize> = parents
            .iter()
            .map(|p| j.index_of(p).expect("parent in joint"))
            .collect();
        idx.push(j.index_of(&v.name).expect("variable in joint"));
        j.marginal(&idx)
            .chunks(v.cardinality())
            .map(|row| {
                let z: f64 = row.iter().sum();
                if z > 0.0 {
                    row.iter().map(|p| p / z).collect()
                } else {
                    Vec::new()
                }
            })
            .collect()
    };
    let tables = km
        .variables
        .iter()
        .map(|v| {
            let parents = km.parents(&v.name);
            let mut rows = conditional(joint, v, &parents);
            let backup = fallback.map(|f| conditional(f, v, &parents));
            for (r, row) in rows.iter_mut().enumerate() {
                if row.is_empty() {
                    *row = match &backup {
                        Some(b) if !b[r].is_empty() => b[r].clone(),
                        _ => vec![1.0 / v.cardinality() as f64; v.cardinality()],
                    };
                }
            }
            ConditionalTable {
                child: v.name.clone(),
                parents,
                rows,
            }
        })
        .collect();
    AssessedKnowledgeMap::new(km.clone(), tables)
}

/// A consistent per-hypothesis network with sampled parameters and the
/// ordinary network and assessed global map they determine.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    pub hs: HypothesisSpecificNetwork,
    pub parameters: HsParameters,
    pub ordinary: SimilarityNetwork,
    pub global: AssessedKnowledgeMap,
}

impl SyntheticModel {
    pub fn sample<R: Rng>(rng: &mut R, hypotheses: usize, features: usize) -> Self {
        let (hs, c) = consistent_comprehensive(rng, hypotheses, features);
        let parameters = sample_hs_parameters(rng, &hs);
        let ordinary = derive_ordinary(&c);
        let km = construct_global(&ordinary).expect("consistent networks are acyclic");
        let global = assess_from_joint(&km, &parameters.joint(&hs, None), None);
        SyntheticModel {
            hs,
            parameters,
            ordinary,
            global,
        }
    }

    /// Same model under another prior; rows conditioned on a hypothesis of
    /// prior zero keep their strictly positive values.
    pub fn with_prior(&self, prior: &[f64]) -> AssessedKnowledgeMap {
        let positive = self.parameters.joint(&self.hs, None);
        let joint = self.parameters.joint(&self.hs, Some(prior));
        assess_from_joint(&self.global.map, &joint, Some(&positive))
    }
}

/// Random assessed map over `h` and features of two or three instances,
/// kept at or below `max_states` joint states. About one table entry in
/// ten is zero.
pub fn random_assessed_map<R: Rng>(rng: &mut R, max_states: u128) -> AssessedKnowledgeMap {
    let k = rng.random_range(2..=4usize);
    let h = Variable {
        name: DISTINGUISHED.to_string(),
        instances: hypothesis_names(k),
    };
    let mut states = k as u128;
    let mut variables = vec![h];
    let target = rng.random_range(1..=10usize);
    for i in 1..=target {
        let card = rng.random_range(2..=3usize);
        if states * card as u128 > max_states {
            break;
        }
        states *= card as u128;
        let instances: Vec<String> = (0..card).map(|j| format!("v{j}")).collect();
        variables.push(Variable::new(format!("x{i}"), &instances));
    }
    let mut km = KnowledgeMap::new(variables.clone()).with_distinguished(DISTINGUISHED);
    for j in 1..variables.len() {
        if rng.random_bool(0.7) {
            km.arcs.insert((DISTINGUISHED.to_string(), variables[j].name.clone()));
        }
        for i in 1..j {
            if rng.random_bool(0.3) && km.parents(&variables[j].name).len() < 3 {
                km.arcs.insert((variables[i].name.clone(), variables[j].name.clone()));
            }
        }
    }
    let tables = variables
        .iter()
        .map(|v| {
            let parents = km.parents(&v.name);
            let n_rows: usize = parents.iter().map(|p| km.variable(p).unwrap().cardinality()).product();
            let rows = (0..n_rows)
                .map(|_| {
                    let mut raw: Vec<f64> = (0..v.cardinality())
                        .map(|_| {
                            if rng.random_bool(0.1) {
                                0.0
                            } else {
                                rng.random_range(0.0..1.0)
                            }
                        })
                        .collect();
                    if v.name == DISTINGUISHED || raw.iter().all(|&x| x == 0.0) {
                        raw.iter_mut().for_each(|x| *x += rng.random_range(0.05..1.0));
                    }
                    let z: f64 = raw.iter().sum();
                    raw.into_iter().map(|x| x / z).collect()
                })
                .collect();
            ConditionalTable {
                child: v.name.clone(),
                parents,
                rows,
            }
        })
        .collect();
    AssessedKnowledgeMap::new(km, tables)
}

/// Random instances for a random subset of the features.
pub fn random_evidence<R: Rng>(rng: &mut R, akm: &AssessedKnowledgeMap) -> Evidence {
    let mut ev = Evidence::new();
    for v in akm.map.variables.iter().skip(1) {
        if rng.random_bool(0.4) {
            let i = rng.random_range(0..v.cardinality());
            ev.observe(&v.name, &v.instances[i]).expect("declared instance");
        }
    }
    ev
}

/// Random utility matrix with 0 on the diagonal and losses off it.
pub fn random_utilities<R: Rng>(rng: &mut R, hypotheses: &[String]) -> UtilityMatrix {
    let n = hypotheses.len();
    let entries = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { -rng.random_range(1.0..200.0) })
                .collect()
        })
        .collect();
    UtilityMatrix::new(hypotheses.to_vec(), entries).expect("square finite matrix")
}

/// Ordinary network on a path of `edges + 1` hypotheses. Every map holds
/// `h -> x1 -> x2`; maps on even edges add `h -> x2`.
pub fn chain_network(edges: usize) -> SimilarityNetwork {
    let owned = hypothesis_names(edges + 1);
    let hyps: Vec<&str> = owned.iter().map(String::as_str).collect();
    let graph_edges: Vec<(&str, &str)> = hyps.windows(2).map(|w| (w[0], w[1])).collect();
    let maps = graph_edges
        .iter()
        .enumerate()
        .map(|(i, (a, b))| {
            let mut arcs = vec![(DISTINGUISHED, "x1"), ("x1", "x2")];
            if i % 2 == 0 {
                arcs.push((DISTINGUISHED, "x2"));
            }
            LocalMap::new(Edge::new(*a, *b), &["x1", "x2"], &arcs)
        })
        .collect();
    SimilarityNetwork::new(
        MapKind::Ordinary,
        DISTINGUISHED,
        SimilarityGraph::new(&hyps, &graph_edges),
        vec![Variable::binary("x1"), Variable::binary("x2")],
        maps,
    )
}

/// Consistent ordinary bundle built from a sampled model: local maps from
/// the derived ordinary network, one partition per conditioning instance
/// grouping hypotheses with equal rows, random utilities and unit costs.
pub fn random_bundle<R: Rng>(rng: &mut R, hypotheses: usize, features: usize) -> NetworkBundle {
    loop {
        let m = SyntheticModel::sample(rng, hypotheses, features);
        if m.global.map.variables.len() > 1 {
            return bundle_of(rng, &m);
        }
    }
}

fn bundle_of<R: Rng>(rng: &mut R, m: &SyntheticModel) -> NetworkBundle {
    let km = &m.global.map;
    let hyps = m.hs.graph.hypotheses.clone();
    let prior = rounded_distribution(&m.parameters.prior);
    let mut assessments = Vec::new();
    for v in km.variables.iter().skip(1) {
        let table = m.global.table(&v.name).expect("every variable assessed");
        let with_h = table.parents.first().map(String::as_str) == Some(DISTINGUISHED);
        let others: Vec<Variable> = table
            .parents
            .iter()
            .filter(|p| *p != DISTINGUISHED)
            .map(|p| km.variable(p).unwrap().clone())
            .collect();
        let instances = conditioning_instances(&others);
        let partitions = instances
            .iter()
            .enumerate()
            .map(|(r, c)| {
                let per: BTreeMap<String, Vec<f64>> = hyps
                    .iter()
                    .enumerate()
                    .map(|(k, h)| {
                        let row = if with_h { k * instances.len() + r } else { r };
                        (h.clone(), rounded_distribution(&table.rows[row]))
                    })
                    .collect();
                let p = Partition::from_distributions(&v.name, c.clone(), &hyps, &per);
                PartitionSpec {
                    conditioning: p.conditioning,
                    sets: p.sets,
                    distributions: p.distributions,
                }
            })
            .collect();
        assessments.push(AssessmentSpec {
            feature: v.name.clone(),
            partitions,
            propagate: Vec::new(),
        });
    }
    let u = random_utilities(rng, &hyps);
    NetworkBundle {
        format: FORMAT.to_string(),
        metadata: Metadata {
            name: "synthetic".to_string(),
            version: "1".to_string(),
            description: None,
        },
        kind: MapKind::Ordinary,
        distinguished: Distinguished {
            name: DISTINGUISHED.to_string(),
            hypotheses: hyps.clone(),
            prior,
        },
        variables: m.hs.variables.clone(),
        similarity_graph: GraphSpec {
            edges: m
                .hs
                .graph
                .edges
                .iter()
                .map(|e| (e.first().to_string(), e.second().to_string()))
                .collect(),
        },
        local_maps: m
            .ordinary
            .local_maps
            .iter()
            .map(|lm| LocalMapSpec {
                edge: (lm.edge.first().to_string(), lm.edge.second().to_string()),
                nodes: lm.nodes.iter().cloned().collect(),
                arcs: lm.arcs.iter().cloned().collect(),
            })
            .collect(),
        assessments,
        utilities: Some(UtilityInput::Matrix {
            hypotheses: hyps,
            matrix: u.entries,
        }),
        costs: CostModel {
            costs: km.variables.iter().skip(1).map(|v| (v.name.clone(), 1.0)).collect(),
            ..CostModel::default()
        },
    }
}

/// Rounds to the canonical digits, pushing the residue onto the largest
/// entry so the result still sums to one.
fn rounded_distribution(p: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = p.iter().map(|&x| round_significant(x)).collect();
    let largest = (0..out.len()).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap_or(0);
    let rest: f64 = out
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != largest)
        .map(|(_, x)| x)
        .sum();
    out[largest] = round_significant(1.0 - rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{compile, load_bundle, save_bundle, Compiled};

    #[test]
    fn hs_joint_is_normalized() {
        let mut r = rng(1);
        let m = SyntheticModel::sample(&mut r, 3, 4);
        let j = m.parameters.joint(&m.hs, None);
        assert!((j.total() - 1.0).abs() < 1e-12);
        assert!(j.strictly_positive);
    }

    #[test]
    fn random_maps_respect_the_state_cap() {
        let mut r = rng(2);
        for _ in 0..50 {
            let akm = random_assessed_map(&mut r, 1 << 10);
            assert!(akm.state_count() <= 1 << 10);
            assert!(crate::model::validate_map(&akm, 1e-9).is_valid());
        }
    }

    #[test]
    fn chain_networks_are_consistent() {
        for l in [1, 2, 7] {
            let v = crate::similarity::check_consistency_ordinary(&chain_network(l)).unwrap();
            assert!(v.is_consistent(), "{l}");
        }
    }

    #[test]
    fn random_bundles_compile() {
        let mut r = rng(3);
        for _ in 0..10 {
            let b = random_bundle(&mut r, 3, 4);
            let b = load_bundle(&save_bundle(&b)).unwrap();
            match compile(&b, 1e-9).unwrap() {
                Compiled::Ready(m) => assert!(m.conflicts.is_empty(), "{:?}", m.conflicts),
                Compiled::Inconsistent { verdict, .. } => panic!("{verdict:?}"),
            }
        }
    }
}
