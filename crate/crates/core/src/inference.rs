//! Posterior over the distinguished variable, factored by feature clusters.
//!
//! A cluster is a connected component of the global map once the
//! distinguished node and its arcs are removed. Given the hypothesis,
//! clusters are independent, so the posterior is the prior times one
//! likelihood factor per cluster holding observations.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::{advance, AssessedKnowledgeMap, Evidence, Factorization, KnowledgeMap, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("the map has no distinguished node")]
    NoDistinguished,
    #[error("distinguished node `{0}` has parents")]
    DistinguishedHasParents(String),
    #[error("the distinguished node `{0}` cannot be observed")]
    ObservedDistinguished(String),
    #[error("evidence is impossible under every hypothesis")]
    ImpossibleEvidence,
    #[error("unknown hypothesis `{0}`")]
    UnknownHypothesis(String),
    #[error("weight of evidence needs two different hypotheses, got `{0}` twice")]
    SameHypothesis(String),
}

/// Connected groups of non-distinguished variables, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterDecomposition {
    pub clusters: Vec<Vec<String>>,
}

impl ClusterDecomposition {
    pub fn cluster_of(&self, feature: &str) -> Option<usize> {
        self.clusters.iter().position(|c| c.iter().any(|f| f == feature))
    }
}

fn distinguished_index(km: &KnowledgeMap) -> Result<usize, InferenceError> {
    let h = km.distinguished.as_deref().ok_or(InferenceError::NoDistinguished)?;
    let i = km
        .index_of(h)
        .ok_or_else(|| ModelError::UnknownVariable(h.to_string()))?;
    if !km.parents(h).is_empty() {
        return Err(InferenceError::DistinguishedHasParents(h.to_string()));
    }
    Ok(i)
}

fn clusters_by_index(km: &KnowledgeMap, h: usize) -> Vec<Vec<usize>> {
    let n = km.variables.len();
    let mut adj = vec![Vec::new(); n];
    for (a, b) in &km.arcs {
        let (Some(a), Some(b)) = (km.index_of(a), km.index_of(b)) else {
            continue;
        };
        if a != h && b != h {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut clusters = Vec::new();
    for start in (0..n).filter(|&v| v != h) {
        if label[start] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        let mut members = Vec::new();
        let mut stack = vec![start];
        label[start] = id;
        while let Some(v) = stack.pop() {
            members.push(v);
            for &w in &adj[v] {
                if label[w] == usize::MAX {
                    label[w] = id;
                    stack.push(w);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    clusters
}

pub fn decompose_clusters(global: &KnowledgeMap) -> Result<ClusterDecomposition, InferenceError> {
    let h = distinguished_index(global)?;
    Ok(ClusterDecomposition {
        clusters: clusters_by_index(global, h)
            .into_iter()
            .map(|c| c.into_iter().map(|v| global.variables[v].name.clone()).collect())
            .collect(),
    })
}

/// Probability per hypothesis, in hypothesis declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Differential {
    pub hypotheses: Vec<String>,
    pub probabilities: Vec<f64>,
}

impl Differential {
    pub fn new(hypotheses: Vec<String>, probabilities: Vec<f64>) -> Self {
        Differential {
            hypotheses,
            probabilities,
        }
    }

    /// `(hypothesis, probability)` pairs, most probable first; ties keep
    /// declaration order.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut out: Vec<(&str, f64)> = self
            .hypotheses
            .iter()
            .map(String::as_str)
            .zip(self.probabilities.iter().copied())
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }

    pub fn probability_of(&self, h: &str) -> Option<f64> {
        self.hypotheses
            .iter()
            .position(|x| x == h)
            .map(|i| self.probabilities[i])
    }
}

/// Dense factor over a few variables, first variable most significant.
struct Factor {
    vars: Vec<usize>,
    cards: Vec<usize>,
    values: Vec<f64>,
}

impl Factor {
    fn strides_for(&self, scope: &[usize]) -> Vec<usize> {
        let mut local = vec![0usize; self.vars.len()];
        let mut s = 1;
        for i in (0..self.vars.len()).rev() {
            local[i] = s;
            s *= self.cards[i];
        }
        scope
            .iter()
            .map(|v| self.vars.iter().position(|w| w == v).map_or(0, |i| local[i]))
            .collect()
    }
}

/// Multiplies `factors` and sums out `var`.
fn multiply_and_sum_out(factors: &[Factor], var: usize, cards_of: &[usize]) -> Factor {
    let mut scope: Vec<usize> = factors.iter().flat_map(|f| f.vars.iter().copied()).collect();
    scope.sort_unstable();
    scope.dedup();
    let pos = scope
        .iter()
        .position(|&v| v == var)
        .expect("eliminated variable in scope");
    let cards: Vec<usize> = scope.iter().map(|&v| cards_of[v]).collect();
    let strides: Vec<Vec<usize>> = factors.iter().map(|f| f.strides_for(&scope)).collect();
    let out_vars: Vec<usize> = scope.iter().copied().filter(|&v| v != var).collect();
    let out_cards: Vec<usize> = out_vars.iter().map(|&v| cards_of[v]).collect();
    let mut out_stride = vec![0usize; scope.len()];
    let mut s = 1;
    for i in (0..scope.len()).rev() {
        if i != pos {
            out_stride[i] = s;
            s *= cards[i];
        }
    }
    let mut values = vec![0.0; s];
    let mut state = vec![0usize; scope.len()];
    loop {
        let mut p = 1.0;
        for (f, st) in factors.iter().zip(&strides) {
            let idx: usize = state.iter().zip(st).map(|(a, b)| a * b).sum();
            p *= f.values[idx];
        }
        let o: usize = state.iter().zip(&out_stride).map(|(a, b)| a * b).sum();
        values[o] += p;
        if !advance(&mut state, &cards) {
            break;
        }
    }
    Factor {
        vars: out_vars,
        cards: out_cards,
        values,
    }
}

/// `p(f_i | evidence)` and, when it is positive, the posterior given `f_i`.
pub type Preposterior = (f64, Option<Vec<f64>>);

/// Precomputed cluster structure for repeated likelihood queries.
pub struct Engine<'a> {
    akm: &'a AssessedKnowledgeMap,
    f: Factorization<'a>,
    h: usize,
    clusters: Vec<Vec<usize>>,
    /// Cluster members in reverse topological order.
    elimination: Vec<Vec<usize>>,
    cluster_of: Vec<usize>,
    prior: Vec<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(akm: &'a AssessedKnowledgeMap) -> Result<Self, InferenceError> {
        let h = distinguished_index(&akm.map)?;
        let f = Factorization::new(akm)?;
        let clusters = clusters_by_index(&akm.map, h);
        let topo = akm.map.topological_order()?;
        let mut cluster_of = vec![usize::MAX; f.cards.len()];
        for (c, members) in clusters.iter().enumerate() {
            for &v in members {
                cluster_of[v] = c;
            }
        }
        let elimination = (0..clusters.len())
            .map(|c| topo.iter().rev().copied().filter(|&v| cluster_of[v] == c).collect())
            .collect();
        let prior = f.rows[h][0].clone();
        Ok(Engine {
            akm,
            f,
            h,
            clusters,
            elimination,
            cluster_of,
            prior,
        })
    }

    pub fn hypotheses(&self) -> &[String] {
        &self.akm.map.variables[self.h].instances
    }

    /// Non-distinguished variable names in declaration order.
    pub fn features(&self) -> impl Iterator<Item = &str> {
        self.akm
            .map
            .variables
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.h)
            .map(|(_, v)| v.name.as_str())
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_index(&self, feature: &str) -> Option<usize> {
        let v = self.akm.map.index_of(feature)?;
        (v != self.h).then(|| self.cluster_of[v])
    }

    /// Resolves evidence to per-variable observed states.
    fn observed(&self, evidence: &Evidence) -> Result<Vec<Option<usize>>, InferenceError> {
        let mut obs = vec![None; self.f.cards.len()];
        for (v, i) in evidence.resolve(&self.akm.map.variables)? {
            if v == self.h {
                return Err(InferenceError::ObservedDistinguished(
                    self.akm.map.variables[v].name.clone(),
                ));
            }
            obs[v] = Some(i);
        }
        Ok(obs)
    }

    fn hypothesis_index(&self, label: &str) -> Result<usize, InferenceError> {
        self.akm.map.variables[self.h]
            .instance_index(label)
            .ok_or_else(|| InferenceError::UnknownHypothesis(label.to_string()))
    }

    /// `p(observations in cluster c | h = k)` by variable elimination.
    fn likelihood_eliminated(&self, c: usize, obs: &[Option<usize>], k: usize) -> f64 {
        let cards = &self.f.cards;
        let mut full = vec![0usize; cards.len()];
        full[self.h] = k;
        for (v, o) in obs.iter().enumerate() {
            if let Some(i) = o {
                full[v] = *i;
            }
        }
        let mut factors: Vec<Factor> = Vec::with_capacity(self.clusters[c].len());
        let mut constant = 1.0;
        for &x in &self.clusters[c] {
            let mut vars: Vec<usize> = std::iter::once(x)
                .chain(self.f.parents[x].iter().copied())
                .filter(|&v| v != self.h && obs[v].is_none())
                .collect();
            vars.sort_unstable();
            vars.dedup();
            let fcards: Vec<usize> = vars.iter().map(|&v| cards[v]).collect();
            let size: usize = fcards.iter().product();
            let mut values = Vec::with_capacity(size);
            let mut local = vec![0usize; vars.len()];
            loop {
                for (&v, &s) in vars.iter().zip(&local) {
                    full[v] = s;
                }
                values.push(self.f.entry(x, &full));
                if !advance(&mut local, &fcards) {
                    break;
                }
            }
            if vars.is_empty() {
                constant *= values[0];
            } else {
                factors.push(Factor {
                    vars,
                    cards: fcards,
                    values,
                });
            }
        }
        if constant == 0.0 {
            return 0.0;
        }
        for &v in &self.elimination[c] {
            if obs[v].is_some() {
                continue;
            }
            let (touching, rest): (Vec<Factor>, Vec<Factor>) = factors.into_iter().partition(|f| f.vars.contains(&v));
            factors = rest;
            if touching.is_empty() {
                continue;
            }
            let reduced = multiply_and_sum_out(&touching, v, cards);
            if reduced.vars.is_empty() {
                constant *= reduced.values[0];
            } else {
                factors.push(reduced);
            }
        }
        debug_assert!(factors.is_empty());
        constant
    }

    /// `p(observations in cluster c | h = k)` by summing every unobserved
    /// instance combination.
    fn likelihood_enumerated(&self, c: usize, obs: &[Option<usize>], k: usize) -> f64 {
        let members = &self.clusters[c];
        let free: Vec<usize> = members.iter().copied().filter(|&v| obs[v].is_none()).collect();
        let free_cards: Vec<usize> = free.iter().map(|&v| self.f.cards[v]).collect();
        let mut full = vec![0usize; self.f.cards.len()];
        full[self.h] = k;
        for (v, o) in obs.iter().enumerate() {
            if let Some(i) = o {
                full[v] = *i;
            }
        }
        let mut local = vec![0usize; free.len()];
        let mut total = 0.0;
        loop {
            for (&v, &s) in free.iter().zip(&local) {
                full[v] = s;
            }
            let mut p = 1.0;
            for &x in members {
                p *= self.f.entry(x, &full);
                if p == 0.0 {
                    break;
                }
            }
            total += p;
            if !advance(&mut local, &free_cards) {
                break;
            }
        }
        total
    }

    /// Per-hypothesis natural-log likelihood of the evidence, with clusters
    /// lacking observations skipped.
    fn log_likelihoods(&self, obs: &[Option<usize>]) -> Vec<f64> {
        let n = self.hypotheses().len();
        let mut out = vec![0.0; n];
        for c in 0..self.clusters.len() {
            if !self.clusters[c].iter().any(|&v| obs[v].is_some()) {
                continue;
            }
            for (k, acc) in out.iter_mut().enumerate() {
                *acc += self.likelihood_eliminated(c, obs, k).ln();
            }
        }
        out
    }

    fn normalize(&self, log_lik: &[f64]) -> Result<Vec<f64>, InferenceError> {
        let logs: Vec<f64> = log_lik.iter().zip(&self.prior).map(|(l, p)| l + p.ln()).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            return Err(InferenceError::ImpossibleEvidence);
        }
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / z).collect())
    }

    pub fn posterior(&self, evidence: &Evidence) -> Result<Differential, InferenceError> {
        let obs = self.observed(evidence)?;
        let post = self.normalize(&self.log_likelihoods(&obs))?;
        Ok(Differential::new(self.hypotheses().to_vec(), post))
    }

    pub fn prior(&self) -> Differential {
        Differential::new(self.hypotheses().to_vec(), self.prior.clone())
    }

    /// For each instance of `feature`: `p(f_i | evidence)` and the posterior
    /// after adding it. Instances of probability 0 carry no posterior.
    pub fn preposterior(&self, evidence: &Evidence, feature: &str) -> Result<Vec<Preposterior>, InferenceError> {
        let mut obs = self.observed(evidence)?;
        let v = self
            .akm
            .map
            .index_of(feature)
            .ok_or_else(|| ModelError::UnknownVariable(feature.to_string()))?;
        if v == self.h {
            return Err(InferenceError::ObservedDistinguished(feature.to_string()));
        }
        if obs[v].is_some() {
            return Err(ModelError::DuplicateObservation(feature.to_string()).into());
        }
        let c = self.cluster_of[v];
        let base = self.log_likelihoods(&obs);
        let current = self.normalize(&base)?;
        let before: Vec<f64> = if self.clusters[c].iter().any(|&x| obs[x].is_some()) {
            (0..current.len())
                .map(|k| self.likelihood_eliminated(c, &obs, k))
                .collect()
        } else {
            vec![1.0; current.len()]
        };
        let mut out = Vec::with_capacity(self.f.cards[v]);
        for i in 0..self.f.cards[v] {
            obs[v] = Some(i);
            let after: Vec<f64> = (0..current.len())
                .map(|k| self.likelihood_eliminated(c, &obs, k))
                .collect();
            // p(f_i | h_k, e) = L(e_c, f_i | h_k) / L(e_c | h_k)
            let cond: Vec<f64> = after
                .iter()
                .zip(&before)
                .map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 })
                .collect();
            let pf: f64 = cond.iter().zip(&current).map(|(c, p)| c * p).sum();
            let post = if pf > 0.0 {
                Some(cond.iter().zip(&current).map(|(c, p)| c * p / pf).collect())
            } else {
                None
            };
            out.push((pf, post));
        }
        Ok(out)
    }
}

/// Likelihood of the observations inside `cluster` under `hypothesis`,
/// computed by eliminating unobserved variables in reverse topological
/// order.
pub fn cluster_likelihood(
    akm: &AssessedKnowledgeMap,
    cluster: &[String],
    evidence: &Evidence,
    hypothesis: &str,
) -> Result<f64, InferenceError> {
    cluster_likelihood_with(akm, cluster, evidence, hypothesis, false)
}

/// Same quantity as [`cluster_likelihood`], by direct summation.
pub fn cluster_likelihood_enumerated(
    akm: &AssessedKnowledgeMap,
    cluster: &[String],
    evidence: &Evidence,
    hypothesis: &str,
) -> Result<f64, InferenceError> {
    cluster_likelihood_with(akm, cluster, evidence, hypothesis, true)
}

fn cluster_likelihood_with(
    akm: &AssessedKnowledgeMap,
    cluster: &[String],
    evidence: &Evidence,
    hypothesis: &str,
    enumerate: bool,
) -> Result<f64, InferenceError> {
    let engine = Engine::new(akm)?;
    let k = engine.hypothesis_index(hypothesis)?;
    let first = cluster
        .first()
        .ok_or_else(|| ModelError::Invalid("empty cluster".into()))?;
    let c = engine
        .cluster_index(first)
        .ok_or_else(|| ModelError::UnknownVariable(first.clone()))?;
    let mut names: Vec<&str> = engine.clusters[c]
        .iter()
        .map(|&v| akm.map.variables[v].name.as_str())
        .collect();
    let mut asked: Vec<&str> = cluster.iter().map(String::as_str).collect();
    names.sort_unstable();
    asked.sort_unstable();
    if names != asked {
        return Err(ModelError::Invalid(format!("{asked:?} is not a cluster of the map")).into());
    }
    let keep = cluster.iter().cloned().collect();
    let obs = engine.observed(&evidence.restricted_to(&keep))?;
    Ok(if enumerate {
        engine.likelihood_enumerated(c, &obs, k)
    } else {
        engine.likelihood_eliminated(c, &obs, k)
    })
}

/// Posterior over the distinguished variable. Empty evidence gives the
/// prior.
pub fn posterior(akm: &AssessedKnowledgeMap, evidence: &Evidence) -> Result<Differential, InferenceError> {
    Engine::new(akm)?.posterior(evidence)
}

/// Base-10 log likelihood ratio; infinite when one side is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weight(pub f64);

impl Serialize for Weight {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("+inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Weight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(x) => Ok(Weight(x)),
            Raw::Text(t) if t == "+inf" => Ok(Weight(f64::INFINITY)),
            Raw::Text(t) if t == "-inf" => Ok(Weight(f64::NEG_INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad weight `{t}`"))),
        }
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            write!(f, "{}inf", if self.0 > 0.0 { "+" } else { "-" })
        } else {
            write!(f, "{:.4}", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceWeight {
    pub instance: String,
    pub weight: Weight,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// `log10 p(f_i | d1, e) / p(f_i | d2, e)` for each instance of `feature`.
/// Any existing observation of `feature` is ignored.
pub fn weight_of_evidence(
    akm: &AssessedKnowledgeMap,
    feature: &str,
    top_two: (&str, &str),
    evidence: &Evidence,
) -> Result<Vec<InstanceWeight>, InferenceError> {
    let (d1, d2) = top_two;
    if d1 == d2 {
        return Err(InferenceError::SameHypothesis(d1.to_string()));
    }
    let engine = Engine::new(akm)?;
    let (k1, k2) = (engine.hypothesis_index(d1)?, engine.hypothesis_index(d2)?);
    let c = engine
        .cluster_index(feature)
        .ok_or_else(|| ModelError::UnknownVariable(feature.to_string()))?;
    let v = akm.map.index_of(feature).expect("cluster member");
    let mut ev = evidence.clone();
    ev.retract(feature);
    let mut obs = engine.observed(&ev)?;
    let conditional = |obs: &mut Vec<Option<usize>>, k: usize, i: usize| -> Option<f64> {
        obs[v] = None;
        let before = engine.likelihood_eliminated(c, obs, k);
        obs[v] = Some(i);
        let after = engine.likelihood_eliminated(c, obs, k);
        obs[v] = None;
        (before > 0.0).then(|| after / before)
    };
    let mut out = Vec::new();
    for (i, label) in akm.map.variables[v].instances.iter().enumerate() {
        let p1 = conditional(&mut obs, k1, i);
        let p2 = conditional(&mut obs, k2, i);
        let (weight, diagnostic) = match (p1, p2) {
            (Some(a), Some(b)) if a > 0.0 && b > 0.0 => (Weight((a / b).log10()), None),
            (Some(a), Some(_)) if a > 0.0 => (Weight(f64::INFINITY), Some(format!("p({label} | {d2}) is zero"))),
            (Some(_), Some(b)) if b > 0.0 => (Weight(f64::NEG_INFINITY), Some(format!("p({label} | {d1}) is zero"))),
            _ => (
                Weight(0.0),
                Some(format!(
                    "ratio undefined: `{label}` has zero probability under both hypotheses or the evidence excludes one"
                )),
            ),
        };
        out.push(InstanceWeight {
            instance: label.clone(),
            weight,
            diagnostic,
        });
    }
    Ok(out)
}

/// Per-cluster likelihoods keyed by cluster index, for diagnostics.
pub fn cluster_likelihoods(
    akm: &AssessedKnowledgeMap,
    evidence: &Evidence,
) -> Result<BTreeMap<usize, Vec<f64>>, InferenceError> {
    let engine = Engine::new(akm)?;
    let obs = engine.observed(evidence)?;
    let n = engine.hypotheses().len();
    Ok((0..engine.cluster_count())
        .filter(|&c| engine.clusters[c].iter().any(|&v| obs[v].is_some()))
        .map(|c| (c, (0..n).map(|k| engine.likelihood_eliminated(c, &obs, k)).collect()))
        .collect())
}
