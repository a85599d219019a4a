//! Similarity networks in three forms (per-hypothesis maps, comprehensive
//! local maps, ordinary local maps), the constructions between them, and the
//! consistency procedures that recover a maximal per-hypothesis network.
//!
//! Both consistency procedures walk every feature arc `x -> y` of the global
//! map and post constraints "x does not precede y" on hypotheses. Witnesses
//! cite the numbered step at which a contradiction was detected (`line`) and
//! the step that returns the verdict (`returned_at`).
//!
//! Comprehensive procedure:
//! - 1-3: post on both endpoints of every local map lacking the arc;
//! - 4-8: for every local map holding the arc, fail at 5 (returning at 6)
//!   when `h -> y` is present and both endpoints are posted, or at 7
//!   (returning at 8) when `h -> y` is absent and either endpoint is posted;
//! - 9-11: add the arc to every unposted hypothesis;
//! - 12-16: for every local map with `h -> y`, fail at 15 (returning at 16)
//!   if its edge lies on a similarity-graph cycle whose other edges all
//!   lack `h -> y`;
//! - 17-22: synthesize relevance sets.
//!
//! Ordinary procedure:
//! - 2-3: post from local maps holding both endpoints but not the arc;
//! - 4-5: post from local maps holding exactly one endpoint;
//! - 6-9: post from local maps holding neither endpoint when a neighbouring
//!   post reaches them, repeating until nothing changes;
//! - 10-14: fail at 11 (returning at 12) or 13 (returning at 14) as above;
//! - 15-17: add arcs; 18-22: the cycle rule, failing at 21 (returning at
//!   22); 23-28: relevance sets. A node missing from a local map counts as
//!   having no arc from `h`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Arc, JointDistribution, KnowledgeMap, Variable};

/// Unordered pair of hypotheses, stored with the lexicographically smaller
/// label first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(String, String)", into = "(String, String)")]
pub struct Edge(String, String);

impl Edge {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Self {
        let (a, b) = (a.into(), b.into());
        if a <= b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }

    pub fn first(&self) -> &str {
        &self.0
    }

    pub fn second(&self) -> &str {
        &self.1
    }

    pub fn contains(&self, h: &str) -> bool {
        self.0 == h || self.1 == h
    }

    /// The endpoint that is not `h`.
    pub fn other(&self, h: &str) -> &str {
        if self.0 == h {
            &self.1
        } else {
            &self.0
        }
    }
}

impl From<(String, String)> for Edge {
    fn from((a, b): (String, String)) -> Self {
        Edge::new(a, b)
    }
}

impl From<Edge> for (String, String) {
    fn from(e: Edge) -> Self {
        (e.0, e.1)
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.0, self.1)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("similarity graph: {0}")]
    Graph(String),
    #[error("similarity graph is disconnected; not reachable from `{from}`: {unreached:?}")]
    Disconnected { from: String, unreached: Vec<String> },
    #[error("edge {0} has no local map")]
    MissingLocalMap(Edge),
    #[error("local map {0} does not belong to a similarity-graph edge")]
    UnexpectedLocalMap(Edge),
    #[error("local map {edge}: {reason}")]
    LocalMap { edge: Edge, reason: String },
    #[error("map for hypothesis `{hypothesis}`: {reason}")]
    HsMap { hypothesis: String, reason: String },
    #[error("edge {edge} has no relevance assertion for `{variable}`")]
    MissingRelevance { edge: Edge, variable: String },
    #[error("edge {edge} asserts relevance for `{variable}`, whose parent sets differ")]
    UnexpectedRelevance { edge: Edge, variable: String },
    #[error("directed cycle in the global map: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("expected a {0:?} network")]
    WrongKind(MapKind),
    #[error("variable `{0}` is not in the joint distribution")]
    MissingFromJoint(String),
}

/// Hypotheses and the edges joining pairs an author chose to compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGraph {
    pub hypotheses: Vec<String>,
    pub edges: BTreeSet<Edge>,
}

impl SimilarityGraph {
    pub fn new<S: AsRef<str>>(hypotheses: &[S], edges: &[(S, S)]) -> Self {
        SimilarityGraph {
            hypotheses: hypotheses.iter().map(|h| h.as_ref().to_string()).collect(),
            edges: edges.iter().map(|(a, b)| Edge::new(a.as_ref(), b.as_ref())).collect(),
        }
    }

    pub fn index_of(&self, h: &str) -> Option<usize> {
        self.hypotheses.iter().position(|x| x == h)
    }

    pub fn validate(&self) -> Result<(), SimilarityError> {
        if self.hypotheses.len() < 2 {
            return Err(SimilarityError::Graph("fewer than two hypotheses".into()));
        }
        let set: BTreeSet<&String> = self.hypotheses.iter().collect();
        if set.len() != self.hypotheses.len() {
            return Err(SimilarityError::Graph("duplicate hypothesis".into()));
        }
        for e in &self.edges {
            if e.first() == e.second() {
                return Err(SimilarityError::Graph(format!("self-loop {e}")));
            }
            for h in [e.first(), e.second()] {
                if self.index_of(h).is_none() {
                    return Err(SimilarityError::Graph(format!(
                        "edge {e} names unknown hypothesis `{h}`"
                    )));
                }
            }
        }
        let start = &self.hypotheses[0];
        let reached = reachable(start, self.edges.iter(), None);
        let unreached: Vec<String> = self
            .hypotheses
            .iter()
            .filter(|h| !reached.contains_key(h.as_str()))
            .cloned()
            .collect();
        if !unreached.is_empty() {
            return Err(SimilarityError::Disconnected {
                from: start.clone(),
                unreached,
            });
        }
        Ok(())
    }
}

/// Breadth-first reachability over `edges`, skipping `skip`. Returns each
/// reached node with its predecessor on a shortest path. Neighbours are
/// visited in lexicographic order.
fn reachable<'a>(
    start: &'a str,
    edges: impl Iterator<Item = &'a Edge>,
    skip: Option<&Edge>,
) -> BTreeMap<&'a str, Option<&'a str>> {
    let mut adj: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for e in edges {
        if Some(e) == skip {
            continue;
        }
        adj.entry(e.first()).or_default().insert(e.second());
        adj.entry(e.second()).or_default().insert(e.first());
    }
    let mut pred: BTreeMap<&str, Option<&str>> = BTreeMap::new();
    pred.insert(start, None);
    let mut queue = VecDeque::from([start]);
    while let Some(n) = queue.pop_front() {
        if let Some(ns) = adj.get(n) {
            for &m in ns {
                if !pred.contains_key(m) {
                    pred.insert(m, Some(n));
                    queue.push_back(m);
                }
            }
        }
    }
    pred
}

/// Path from `start` to `goal` recovered from a predecessor map.
fn path_to<'a>(pred: &BTreeMap<&'a str, Option<&'a str>>, goal: &'a str) -> Vec<String> {
    let mut path = vec![goal.to_string()];
    let mut cur = goal;
    while let Some(Some(p)) = pred.get(cur) {
        path.push(p.to_string());
        cur = p;
    }
    path.reverse();
    path
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// Every local map holds every feature.
    Comprehensive,
    /// Local maps hold only features connected to the distinguished node.
    Ordinary,
}

/// Knowledge map for one similarity-graph edge. `nodes` lists the features
/// present; arcs may start at the distinguished node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalMap {
    pub edge: Edge,
    pub nodes: BTreeSet<String>,
    pub arcs: BTreeSet<Arc>,
}

impl LocalMap {
    pub fn new<S: AsRef<str>>(edge: Edge, nodes: &[S], arcs: &[(S, S)]) -> Self {
        LocalMap {
            edge,
            nodes: nodes.iter().map(|n| n.as_ref().to_string()).collect(),
            arcs: arcs
                .iter()
                .map(|(a, b)| (a.as_ref().to_string(), b.as_ref().to_string()))
                .collect(),
        }
    }

    pub fn contains(&self, y: &str) -> bool {
        self.nodes.contains(y)
    }

    pub fn has_arc(&self, x: &str, y: &str) -> bool {
        self.arcs.contains(&(x.to_string(), y.to_string()))
    }

    /// Features connected to `h` ignoring arc direction.
    pub fn connected_to(&self, h: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![h.to_string()];
        while let Some(n) = stack.pop() {
            for (a, b) in &self.arcs {
                let next = if *a == n {
                    b
                } else if *b == n {
                    a
                } else {
                    continue;
                };
                if next != h && seen.insert(next.clone()) {
                    stack.push(next.clone());
                }
            }
        }
        seen
    }
}

/// Similarity graph plus one local map per edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityNetwork {
    pub kind: MapKind,
    pub distinguished: String,
    pub graph: SimilarityGraph,
    /// Declared features, in declaration order.
    pub variables: Vec<Variable>,
    /// Sorted by edge.
    pub local_maps: Vec<LocalMap>,
}

impl SimilarityNetwork {
    pub fn new(
        kind: MapKind,
        distinguished: impl Into<String>,
        graph: SimilarityGraph,
        variables: Vec<Variable>,
        mut local_maps: Vec<LocalMap>,
    ) -> Self {
        local_maps.sort_by(|a, b| a.edge.cmp(&b.edge));
        SimilarityNetwork {
            kind,
            distinguished: distinguished.into(),
            graph,
            variables,
            local_maps,
        }
    }

    pub fn local_map(&self, edge: &Edge) -> Option<&LocalMap> {
        self.local_maps
            .binary_search_by(|m| m.edge.cmp(edge))
            .ok()
            .map(|i| &self.local_maps[i])
    }

    pub fn distinguished_variable(&self) -> Variable {
        Variable {
            name: self.distinguished.clone(),
            instances: self.graph.hypotheses.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), SimilarityError> {
        self.graph.validate()?;
        let declared: BTreeSet<&str> = self.variables.iter().map(|v| v.name.as_str()).collect();
        if declared.contains(self.distinguished.as_str()) {
            return Err(SimilarityError::Graph(format!(
                "distinguished node `{}` is also declared as a feature",
                self.distinguished
            )));
        }
        for e in &self.graph.edges {
            if self.local_map(e).is_none() {
                return Err(SimilarityError::MissingLocalMap(e.clone()));
            }
        }
        let h = self.distinguished.as_str();
        for (k, m) in self.local_maps.iter().enumerate() {
            let bad = |reason: String| SimilarityError::LocalMap {
                edge: m.edge.clone(),
                reason,
            };
            if !self.graph.edges.contains(&m.edge) {
                return Err(SimilarityError::UnexpectedLocalMap(m.edge.clone()));
            }
            if k > 0 && self.local_maps[k - 1].edge == m.edge {
                return Err(bad("duplicate local map".into()));
            }
            if let Some(n) = m.nodes.iter().find(|n| !declared.contains(n.as_str())) {
                return Err(bad(format!("undeclared feature `{n}`")));
            }
            for (a, b) in &m.arcs {
                if b == h {
                    return Err(bad(format!("arc {a} -> {b} enters the distinguished node")));
                }
                if (a != h && !m.contains(a)) || !m.contains(b) || a == b {
                    return Err(bad(format!("arc {a} -> {b} joins nodes not in the map")));
                }
            }
            if let Some(cycle) = self.local_knowledge_map(m).find_cycle() {
                return Err(bad(format!("directed cycle {}", cycle.join(" -> "))));
            }
            match self.kind {
                MapKind::Comprehensive => {
                    if let Some(v) = self.variables.iter().find(|v| !m.contains(&v.name)) {
                        return Err(bad(format!("comprehensive map lacks feature `{}`", v.name)));
                    }
                }
                MapKind::Ordinary => {
                    let connected = m.connected_to(h);
                    if let Some(n) = m.nodes.iter().find(|n| !connected.contains(*n)) {
                        return Err(bad(format!("feature `{n}` is not connected to `{h}`")));
                    }
                }
            }
        }
        Ok(())
    }

    /// The local map as a knowledge map whose distinguished node ranges over
    /// the edge's two hypotheses.
    pub fn local_knowledge_map(&self, m: &LocalMap) -> KnowledgeMap {
        let mut vars = vec![Variable::new(
            self.distinguished.clone(),
            &[m.edge.first(), m.edge.second()],
        )];
        vars.extend(self.variables.iter().filter(|v| m.contains(&v.name)).cloned());
        KnowledgeMap {
            variables: vars,
            arcs: m.arcs.clone(),
            distinguished: Some(self.distinguished.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevance {
    /// The feature has the same distribution under both hypotheses.
    Equal,
    /// The distributions differ.
    Unequal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceSet {
    pub edge: Edge,
    pub assertions: BTreeMap<String, Relevance>,
}

/// Arcs among features believed to hold under one hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HsMap {
    pub hypothesis: String,
    pub arcs: BTreeSet<Arc>,
}

impl HsMap {
    pub fn parents(&self, y: &str) -> BTreeSet<&str> {
        self.arcs
            .iter()
            .filter(|(_, c)| c == y)
            .map(|(p, _)| p.as_str())
            .collect()
    }
}

/// One map per hypothesis over a shared feature set, plus a relevance set
/// per similarity-graph edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpecificNetwork {
    pub distinguished: String,
    pub graph: SimilarityGraph,
    pub variables: Vec<Variable>,
    /// In hypothesis declaration order.
    pub hs_maps: Vec<HsMap>,
    /// Sorted by edge.
    pub relevance: Vec<RelevanceSet>,
}

impl HypothesisSpecificNetwork {
    pub fn hs_map(&self, h: &str) -> Option<&HsMap> {
        self.hs_maps.iter().find(|m| m.hypothesis == h)
    }

    pub fn relevance_set(&self, e: &Edge) -> Option<&RelevanceSet> {
        self.relevance.iter().find(|r| &r.edge == e)
    }

    pub fn validate(&self) -> Result<(), SimilarityError> {
        self.graph.validate()?;
        let declared: BTreeSet<&str> = self.variables.iter().map(|v| v.name.as_str()).collect();
        let mut union = KnowledgeMap::new(self.variables.clone());
        for h in &self.graph.hypotheses {
            let m = self.hs_map(h).ok_or_else(|| SimilarityError::HsMap {
                hypothesis: h.clone(),
                reason: "missing".into(),
            })?;
            for (a, b) in &m.arcs {
                if !declared.contains(a.as_str()) || !declared.contains(b.as_str()) || a == b {
                    return Err(SimilarityError::HsMap {
                        hypothesis: h.clone(),
                        reason: format!("arc {a} -> {b} joins undeclared features"),
                    });
                }
                union.arcs.insert((a.clone(), b.clone()));
            }
        }
        if let Some(cycle) = union.find_cycle() {
            return Err(SimilarityError::Cycle(cycle));
        }
        for r in &self.relevance {
            if !self.graph.edges.contains(&r.edge) {
                return Err(SimilarityError::Graph(format!(
                    "relevance set for unknown edge {}",
                    r.edge
                )));
            }
            let mi = self.hs_map(r.edge.first()).unwrap();
            let mj = self.hs_map(r.edge.second()).unwrap();
            for y in r.assertions.keys() {
                if !declared.contains(y.as_str()) || mi.parents(y) != mj.parents(y) {
                    return Err(SimilarityError::UnexpectedRelevance {
                        edge: r.edge.clone(),
                        variable: y.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    Comprehensive,
    Ordinary,
    HypothesisSpecific,
}

/// Where and why a consistency check failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub procedure: Procedure,
    /// Step whose condition fired; 0 for the per-hypothesis cycle test.
    pub line: u32,
    /// Step that returns the verdict.
    pub returned_at: u32,
    pub edge: Edge,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arc: Option<Arc>,
    pub variable: String,
    /// Closed hypothesis path, for cycle failures.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cycle: Vec<String>,
    pub message: String,
}

/// An arc whose addition to one local map would remove the reported
/// contradiction. Advisory only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Repair {
    pub edge: Edge,
    pub add_arc: Arc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constructor: Option<HypothesisSpecificNetwork>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub repairs: Vec<Repair>,
}

impl ConsistencyVerdict {
    pub fn is_consistent(&self) -> bool {
        self.status == Status::Consistent
    }

    fn consistent(constructor: HypothesisSpecificNetwork) -> Self {
        ConsistencyVerdict {
            status: Status::Consistent,
            witness: None,
            constructor: Some(constructor),
            repairs: Vec::new(),
        }
    }

    fn inconsistent(witness: Witness, repairs: Vec<Repair>) -> Self {
        ConsistencyVerdict {
            status: Status::Inconsistent,
            witness: Some(witness),
            constructor: None,
            repairs,
        }
    }
}

/// Builds the comprehensive network a per-hypothesis network describes:
/// each local map is the union of its two hypotheses' maps plus `h`, with
/// `h -> y` exactly when the parent sets of `y` differ or the relevance set
/// asserts inequality.
pub fn construct_comprehensive(hs: &HypothesisSpecificNetwork) -> Result<SimilarityNetwork, SimilarityError> {
    hs.validate()?;
    let h = &hs.distinguished;
    let nodes: BTreeSet<String> = hs.variables.iter().map(|v| v.name.clone()).collect();
    let mut maps = Vec::new();
    for e in &hs.graph.edges {
        let mi = hs.hs_map(e.first()).unwrap();
        let mj = hs.hs_map(e.second()).unwrap();
        let mut arcs: BTreeSet<Arc> = mi.arcs.union(&mj.arcs).cloned().collect();
        let rel = hs.relevance_set(e);
        for v in &hs.variables {
            let y = v.name.as_str();
            let relevant = if mi.parents(y) != mj.parents(y) {
                true
            } else {
                match rel.and_then(|r| r.assertions.get(y)) {
                    Some(Relevance::Unequal) => true,
                    Some(Relevance::Equal) => false,
                    None => {
                        return Err(SimilarityError::MissingRelevance {
                            edge: e.clone(),
                            variable: y.to_string(),
                        })
                    }
                }
            };
            if relevant {
                arcs.insert((h.clone(), y.to_string()));
            }
        }
        maps.push(LocalMap {
            edge: e.clone(),
            nodes: nodes.clone(),
            arcs,
        });
    }
    Ok(SimilarityNetwork::new(
        MapKind::Comprehensive,
        h.clone(),
        hs.graph.clone(),
        hs.variables.clone(),
        maps,
    ))
}

/// Graph union of all local maps. The distinguished node ranges over every
/// hypothesis and comes first; features follow in declaration order.
pub fn construct_global(net: &SimilarityNetwork) -> Result<KnowledgeMap, SimilarityError> {
    let present: BTreeSet<&str> = net
        .local_maps
        .iter()
        .flat_map(|m| m.nodes.iter().map(String::as_str))
        .collect();
    let mut variables = vec![net.distinguished_variable()];
    variables.extend(
        net.variables
            .iter()
            .filter(|v| present.contains(v.name.as_str()))
            .cloned(),
    );
    let arcs = net.local_maps.iter().flat_map(|m| m.arcs.iter().cloned()).collect();
    let km = KnowledgeMap {
        variables,
        arcs,
        distinguished: Some(net.distinguished.clone()),
    };
    if let Some(cycle) = km.find_cycle() {
        return Err(SimilarityError::Cycle(cycle));
    }
    Ok(km)
}

/// Keeps, in each local map, only the features connected to `h`.
pub fn derive_ordinary(c: &SimilarityNetwork) -> SimilarityNetwork {
    let h = &c.distinguished;
    let maps = c
        .local_maps
        .iter()
        .map(|m| {
            let keep = m.connected_to(h);
            LocalMap {
                edge: m.edge.clone(),
                arcs: m
                    .arcs
                    .iter()
                    .filter(|(a, b)| (a == h || keep.contains(a)) && keep.contains(b))
                    .cloned()
                    .collect(),
                nodes: keep,
            }
        })
        .collect();
    SimilarityNetwork::new(MapKind::Ordinary, h.clone(), c.graph.clone(), c.variables.clone(), maps)
}

#[derive(Debug, Clone)]
struct Post {
    /// Local map whose content first forced the constraint.
    origin: Edge,
}

struct Steps {
    procedure: Procedure,
    both_posted: (u32, u32),
    either_posted: (u32, u32),
    cycle: (u32, u32),
}

const COMPREHENSIVE_STEPS: Steps = Steps {
    procedure: Procedure::Comprehensive,
    both_posted: (5, 6),
    either_posted: (7, 8),
    cycle: (15, 16),
};

const ORDINARY_STEPS: Steps = Steps {
    procedure: Procedure::Ordinary,
    both_posted: (11, 12),
    either_posted: (13, 14),
    cycle: (21, 22),
};

/// Runs the comprehensive consistency procedure.
pub fn check_consistency_comprehensive(c: &SimilarityNetwork) -> Result<ConsistencyVerdict, SimilarityError> {
    if c.kind != MapKind::Comprehensive {
        return Err(SimilarityError::WrongKind(MapKind::Comprehensive));
    }
    c.validate()?;
    check(c, &COMPREHENSIVE_STEPS)
}

/// Runs the ordinary consistency procedure.
pub fn check_consistency_ordinary(o: &SimilarityNetwork) -> Result<ConsistencyVerdict, SimilarityError> {
    if o.kind != MapKind::Ordinary {
        return Err(SimilarityError::WrongKind(MapKind::Ordinary));
    }
    o.validate()?;
    check(o, &ORDINARY_STEPS)
}

fn check(net: &SimilarityNetwork, steps: &Steps) -> Result<ConsistencyVerdict, SimilarityError> {
    let global = construct_global(net)?;
    let h = net.distinguished.as_str();
    let hyps = &net.graph.hypotheses;
    let hyp_index: BTreeMap<&str, usize> = hyps.iter().enumerate().map(|(i, x)| (x.as_str(), i)).collect();
    let features: Vec<&Variable> = global.variables.iter().skip(1).collect();
    let feature_arcs: Vec<&Arc> = global.arcs.iter().filter(|(a, _)| a != h).collect();
    let ends = |m: &LocalMap| (hyp_index[m.edge.first()], hyp_index[m.edge.second()]);

    let mut hs_arcs: Vec<BTreeSet<Arc>> = vec![BTreeSet::new(); hyps.len()];
    for &(x, y) in &feature_arcs {
        let mut posted: Vec<Option<Post>> = vec![None; hyps.len()];
        let post = |posted: &mut Vec<Option<Post>>, m: &LocalMap, origin: &Edge| {
            let (i, j) = ends(m);
            for k in [i, j] {
                if posted[k].is_none() {
                    posted[k] = Some(Post { origin: origin.clone() });
                }
            }
        };
        match steps.procedure {
            Procedure::Comprehensive => {
                for m in net.local_maps.iter().filter(|m| !m.has_arc(x, y)) {
                    post(&mut posted, m, &m.edge);
                }
            }
            _ => {
                for m in &net.local_maps {
                    if m.contains(x) && m.contains(y) && !m.has_arc(x, y) {
                        post(&mut posted, m, &m.edge);
                    }
                }
                for m in &net.local_maps {
                    if m.contains(x) != m.contains(y) {
                        post(&mut posted, m, &m.edge);
                    }
                }
                let mut visited = vec![false; net.local_maps.len()];
                loop {
                    let next = net.local_maps.iter().enumerate().find(|(k, m)| {
                        let (i, j) = ends(m);
                        !visited[*k] && !m.contains(x) && !m.contains(y) && (posted[i].is_some() || posted[j].is_some())
                    });
                    let Some((k, m)) = next else { break };
                    let (i, j) = ends(m);
                    let origin = posted[i].as_ref().or(posted[j].as_ref()).unwrap().origin.clone();
                    post(&mut posted, m, &origin);
                    visited[k] = true;
                }
            }
        }
        for m in net.local_maps.iter().filter(|m| m.has_arc(x, y)) {
            let (i, j) = ends(m);
            let h_arc = m.has_arc(h, y);
            let fired = if h_arc && posted[i].is_some() && posted[j].is_some() {
                Some(steps.both_posted)
            } else if !h_arc && (posted[i].is_some() || posted[j].is_some()) {
                Some(steps.either_posted)
            } else {
                None
            };
            if let Some((line, returned_at)) = fired {
                let mut repairs: Vec<Repair> = [i, j]
                    .iter()
                    .filter_map(|&k| posted[k].as_ref())
                    .map(|p| Repair {
                        edge: p.origin.clone(),
                        add_arc: (x.clone(), y.clone()),
                    })
                    .collect();
                if !h_arc && !(posted[i].is_some() && posted[j].is_some()) {
                    repairs.push(Repair {
                        edge: m.edge.clone(),
                        add_arc: (h.to_string(), y.clone()),
                    });
                }
                repairs.sort_by(|a, b| (&a.edge, &a.add_arc).cmp(&(&b.edge, &b.add_arc)));
                repairs.dedup();
                let posted_on: Vec<&str> = [i, j]
                    .iter()
                    .filter(|&&k| posted[k].is_some())
                    .map(|&k| hyps[k].as_str())
                    .collect();
                let message = format!(
                    "local map {} holds {x} -> {y} {} an arc from {h} to {y}, but the \
                     constraint that {x} does not precede {y} is posted on {}",
                    m.edge,
                    if h_arc { "with" } else { "without" },
                    posted_on.join(" and "),
                );
                return Ok(ConsistencyVerdict::inconsistent(
                    Witness {
                        procedure: steps.procedure,
                        line,
                        returned_at,
                        edge: m.edge.clone(),
                        arc: Some((x.clone(), y.clone())),
                        variable: y.clone(),
                        cycle: Vec::new(),
                        message,
                    },
                    repairs,
                ));
            }
        }
        for (k, p) in posted.iter().enumerate() {
            if p.is_none() {
                hs_arcs[k].insert((x.clone(), y.clone()));
            }
        }
    }

    for v in &features {
        let y = v.name.as_str();
        for m in net.local_maps.iter().filter(|m| m.has_arc(h, y)) {
            let others: Vec<&Edge> = net
                .local_maps
                .iter()
                .filter(|o| !o.has_arc(h, y))
                .map(|o| &o.edge)
                .collect();
            let pred = reachable(m.edge.first(), others.into_iter(), None);
            if pred.contains_key(m.edge.second()) {
                let mut cycle = path_to(&pred, m.edge.second());
                cycle.push(m.edge.first().to_string());
                let repairs = cycle
                    .windows(2)
                    .map(|w| Edge::new(w[0].clone(), w[1].clone()))
                    .filter(|e| *e != m.edge)
                    .map(|e| Repair {
                        edge: e,
                        add_arc: (h.to_string(), y.to_string()),
                    })
                    .collect();
                let (line, returned_at) = steps.cycle;
                return Ok(ConsistencyVerdict::inconsistent(
                    Witness {
                        procedure: steps.procedure,
                        line,
                        returned_at,
                        edge: m.edge.clone(),
                        arc: Some((h.to_string(), y.to_string())),
                        variable: y.to_string(),
                        message: format!(
                            "{h} -> {y} appears in local map {} only, on the cycle {}",
                            m.edge,
                            cycle.join(" - ")
                        ),
                        cycle,
                    },
                    repairs,
                ));
            }
        }
    }

    let hs_maps: Vec<HsMap> = hyps
        .iter()
        .zip(hs_arcs)
        .map(|(hyp, arcs)| HsMap {
            hypothesis: hyp.clone(),
            arcs,
        })
        .collect();
    let mut relevance = Vec::new();
    for m in &net.local_maps {
        let (i, j) = ends(m);
        let mut assertions = BTreeMap::new();
        for v in &features {
            let y = v.name.as_str();
            if hs_maps[i].parents(y) == hs_maps[j].parents(y) {
                let r = if m.has_arc(h, y) {
                    Relevance::Unequal
                } else {
                    Relevance::Equal
                };
                assertions.insert(y.to_string(), r);
            }
        }
        relevance.push(RelevanceSet {
            edge: m.edge.clone(),
            assertions,
        });
    }
    Ok(ConsistencyVerdict::consistent(HypothesisSpecificNetwork {
        distinguished: net.distinguished.clone(),
        graph: net.graph.clone(),
        variables: features.into_iter().cloned().collect(),
        hs_maps,
        relevance,
    }))
}

/// A per-hypothesis network is inconsistent exactly when, for some feature,
/// a similarity-graph cycle asserts equality on every edge but one.
pub fn check_hs_consistency(hs: &HypothesisSpecificNetwork) -> Result<ConsistencyVerdict, SimilarityError> {
    hs.validate()?;
    for v in &hs.variables {
        let y = v.name.as_str();
        let asserted = |r: &RelevanceSet, want: Relevance| r.assertions.get(y) == Some(&want);
        for r in hs.relevance.iter().filter(|r| asserted(r, Relevance::Unequal)) {
            let equal_edges = hs
                .relevance
                .iter()
                .filter(|o| asserted(o, Relevance::Equal))
                .map(|o| &o.edge);
            let pred = reachable(r.edge.first(), equal_edges, None);
            if pred.contains_key(r.edge.second()) {
                let mut cycle = path_to(&pred, r.edge.second());
                cycle.push(r.edge.first().to_string());
                return Ok(ConsistencyVerdict::inconsistent(
                    Witness {
                        procedure: Procedure::HypothesisSpecific,
                        line: 0,
                        returned_at: 0,
                        edge: r.edge.clone(),
                        arc: None,
                        variable: y.to_string(),
                        message: format!(
                            "`{y}` is asserted equal along {} but unequal across {}",
                            cycle.join(" - "),
                            r.edge
                        ),
                        cycle,
                    },
                    Vec::new(),
                ));
            }
        }
    }
    Ok(ConsistencyVerdict::consistent(hs.clone()))
}

/// Whether leaving `extra` out of every local map is justified by `joint`:
/// true when the feature appears in some local map, or when it is
/// conditionally independent of the distinguished node given every instance
/// of every subset of the remaining variables.
pub fn check_exhaustive(
    o: &SimilarityNetwork,
    extra: &Variable,
    joint: &JointDistribution,
    tolerance: f64,
) -> Result<bool, SimilarityError> {
    if o.local_maps.iter().any(|m| m.contains(&extra.name)) {
        return Ok(true);
    }
    let hi = joint
        .index_of(&o.distinguished)
        .ok_or_else(|| SimilarityError::MissingFromJoint(o.distinguished.clone()))?;
    let xi = joint
        .index_of(&extra.name)
        .ok_or_else(|| SimilarityError::MissingFromJoint(extra.name.clone()))?;
    Ok(!interacts(joint, xi, hi, tolerance))
}

/// True when `a` and `b` are dependent given some instance of some subset
/// of the other variables.
pub fn interacts(joint: &JointDistribution, a: usize, b: usize, tolerance: f64) -> bool {
    let cards = joint.cards();
    let rest: Vec<usize> = (0..cards.len()).filter(|&v| v != a && v != b).collect();
    for mask in 0u64..(1u64 << rest.len()) {
        let subset: Vec<usize> = rest
            .iter()
            .enumerate()
            .filter(|(k, _)| mask & (1 << k) != 0)
            .map(|(_, &v)| v)
            .collect();
        let mut vars = subset.clone();
        vars.push(a);
        vars.push(b);
        let m = joint.marginal(&vars);
        let (ca, cb) = (cards[a], cards[b]);
        for block in m.chunks(ca * cb) {
            let z: f64 = block.iter().sum();
            if z <= 0.0 {
                continue;
            }
            for ia in 0..ca {
                let pa: f64 = (0..cb).map(|ib| block[ia * cb + ib]).sum::<f64>() / z;
                for ib in 0..cb {
                    let pb: f64 = (0..ca).map(|k| block[k * cb + ib]).sum::<f64>() / z;
                    if (block[ia * cb + ib] / z - pa * pb).abs() > tolerance {
                        return true;
                    }
                }
            }
        }
    }
    false
}
