//! Discrete variables, knowledge maps, conditional tables and the joint
//! distributions they determine.
//!
//! Tables are indexed row-major over their parent list: the first parent is
//! the most significant digit. Joint distributions use the same convention
//! over their variable list.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for every probability comparison.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Largest joint the enumeration oracle will build.
pub const DEFAULT_STATE_CAP: usize = 1 << 22;

/// Environment variable that overrides [`DEFAULT_TOLERANCE`].
pub const TOLERANCE_ENV: &str = "SIMNET_TOLERANCE";

/// Reads the tolerance override, falling back to the default when unset or
/// unparsable.
pub fn tolerance_from_env() -> f64 {
    std::env::var(TOLERANCE_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|t| t.is_finite() && *t > 0.0)
        .unwrap_or(DEFAULT_TOLERANCE)
}

/// Directed arc `(parent, child)`.
pub type Arc = (String, String);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{variable}` has no instance `{instance}`")]
    UnknownInstance { variable: String, instance: String },
    #[error("variable `{0}` is observed more than once")]
    DuplicateObservation(String),
    #[error("variable `{0}` appears in more than one argument set")]
    OverlappingSets(String),
    #[error("arc {0} -> {1} is not in the map")]
    NoSuchArc(String, String),
    #[error("reversing {0} -> {1} would create a directed cycle")]
    ReversalCycle(String, String),
    #[error("joint has {states} states, above the cap of {cap}")]
    TooManyStates { states: u128, cap: usize },
    #[error("evidence has zero probability")]
    ImpossibleEvidence,
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub instances: Vec<String>,
}

impl Variable {
    pub fn new<S: AsRef<str>>(name: impl Into<String>, instances: &[S]) -> Self {
        Variable {
            name: name.into(),
            instances: instances.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    /// Two-valued variable with instances `-` and `+`.
    pub fn binary(name: impl Into<String>) -> Self {
        Variable::new(name, &["-", "+"])
    }

    pub fn cardinality(&self) -> usize {
        self.instances.len()
    }

    pub fn instance_index(&self, label: &str) -> Option<usize> {
        self.instances.iter().position(|i| i == label)
    }
}

/// An observed feature and the instance seen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub feature: String,
    pub instance: String,
}

/// Ordered observations, at most one per feature.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Evidence {
    observations: Vec<Observation>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<A: AsRef<str>, B: AsRef<str>>(pairs: &[(A, B)]) -> Result<Self, ModelError> {
        let mut ev = Evidence::new();
        for (f, i) in pairs {
            ev.observe(f.as_ref(), i.as_ref())?;
        }
        Ok(ev)
    }

    pub fn observe(&mut self, feature: &str, instance: &str) -> Result<(), ModelError> {
        if self.get(feature).is_some() {
            return Err(ModelError::DuplicateObservation(feature.to_string()));
        }
        self.observations.push(Observation {
            feature: feature.to_string(),
            instance: instance.to_string(),
        });
        Ok(())
    }

    /// Removes the observation of `feature`, returning whether one existed.
    pub fn retract(&mut self, feature: &str) -> bool {
        let before = self.observations.len();
        self.observations.retain(|o| o.feature != feature);
        before != self.observations.len()
    }

    pub fn get(&self, feature: &str) -> Option<&str> {
        self.observations
            .iter()
            .find(|o| o.feature == feature)
            .map(|o| o.instance.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation> {
        self.observations.iter()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Same observations with the given features dropped.
    pub fn restricted_to(&self, keep: &BTreeSet<String>) -> Evidence {
        Evidence {
            observations: self
                .observations
                .iter()
                .filter(|o| keep.contains(&o.feature))
                .cloned()
                .collect(),
        }
    }

    /// Maps observations to `(variable index, instance index)` pairs.
    pub fn resolve(&self, variables: &[Variable]) -> Result<Vec<(usize, usize)>, ModelError> {
        self.observations
            .iter()
            .map(|o| {
                let v = variables
                    .iter()
                    .position(|v| v.name == o.feature)
                    .ok_or_else(|| ModelError::UnknownVariable(o.feature.clone()))?;
                let i = variables[v]
                    .instance_index(&o.instance)
                    .ok_or_else(|| ModelError::UnknownInstance {
                        variable: o.feature.clone(),
                        instance: o.instance.clone(),
                    })?;
                Ok((v, i))
            })
            .collect()
    }
}

/// Directed acyclic graph over variables, optionally anchored on a
/// distinguished hypothesis node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeMap {
    pub variables: Vec<Variable>,
    pub arcs: BTreeSet<Arc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distinguished: Option<String>,
}

impl KnowledgeMap {
    pub fn new(variables: Vec<Variable>) -> Self {
        KnowledgeMap {
            variables,
            arcs: BTreeSet::new(),
            distinguished: None,
        }
    }

    pub fn with_arcs<S: AsRef<str>>(mut self, arcs: &[(S, S)]) -> Self {
        for (a, b) in arcs {
            self.arcs.insert((a.as_ref().to_string(), b.as_ref().to_string()));
        }
        self
    }

    pub fn with_distinguished(mut self, name: impl Into<String>) -> Self {
        self.distinguished = Some(name.into());
        self
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    pub fn has_arc(&self, from: &str, to: &str) -> bool {
        self.arcs.contains(&(from.to_string(), to.to_string()))
    }

    /// Parents of `name` in variable declaration order.
    pub fn parents(&self, name: &str) -> Vec<String> {
        let mut ps: Vec<(usize, &String)> = self
            .arcs
            .iter()
            .filter(|(_, c)| c == name)
            .map(|(p, _)| (self.index_of(p).unwrap_or(usize::MAX), p))
            .collect();
        ps.sort();
        ps.into_iter().map(|(_, p)| p.clone()).collect()
    }

    /// Children of `name` in variable declaration order.
    pub fn children(&self, name: &str) -> Vec<String> {
        let mut cs: Vec<(usize, &String)> = self
            .arcs
            .iter()
            .filter(|(p, _)| p == name)
            .map(|(_, c)| (self.index_of(c).unwrap_or(usize::MAX), c))
            .collect();
        cs.sort();
        cs.into_iter().map(|(_, c)| c.clone()).collect()
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.variables.len()];
        for (a, b) in &self.arcs {
            if let (Some(i), Some(j)) = (self.index_of(a), self.index_of(b)) {
                adj[i].push(j);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Returns one directed cycle as a closed node path, if any exists.
    pub fn find_cycle(&self) -> Option<Vec<String>> {
        let adj = self.adjacency();
        let n = adj.len();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut color = vec![0u8; n];
        let mut stack_path: Vec<usize> = Vec::new();
        for start in 0..n {
            if color[start] != 0 {
                continue;
            }
            let mut frames: Vec<(usize, usize)> = vec![(start, 0)];
            color[start] = 1;
            stack_path.push(start);
            while let Some(&mut (node, ref mut next)) = frames.last_mut() {
                if *next < adj[node].len() {
                    let child = adj[node][*next];
                    *next += 1;
                    match color[child] {
                        0 => {
                            color[child] = 1;
                            stack_path.push(child);
                            frames.push((child, 0));
                        }
                        1 => {
                            let pos = stack_path.iter().position(|&x| x == child).unwrap();
                            let mut cycle: Vec<String> = stack_path[pos..]
                                .iter()
                                .map(|&i| self.variables[i].name.clone())
                                .collect();
                            cycle.push(self.variables[child].name.clone());
                            return Some(cycle);
                        }
                        _ => {}
                    }
                } else {
                    color[node] = 2;
                    stack_path.pop();
                    frames.pop();
                }
            }
        }
        None
    }

    /// Variables ordered so that every parent precedes its children; ties go
    /// to declaration order.
    pub fn topological_order(&self) -> Result<Vec<usize>, ModelError> {
        let adj = self.adjacency();
        let n = adj.len();
        let mut indegree = vec![0usize; n];
        for list in &adj {
            for &j in list {
                indegree[j] += 1;
            }
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            order.push(i);
            for &j in &adj[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.insert(j);
                }
            }
        }
        if order.len() != n {
            let cycle = self.find_cycle().unwrap_or_default();
            return Err(ModelError::Invalid(format!("directed cycle {}", cycle.join(" -> "))));
        }
        Ok(order)
    }

    /// Nodes reachable from `name` ignoring arc direction, including itself.
    pub fn undirected_component(&self, name: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        if !self.contains(name) {
            return seen;
        }
        let mut stack = vec![name.to_string()];
        while let Some(n) = stack.pop() {
            if !seen.insert(n.clone()) {
                continue;
            }
            for (a, b) in &self.arcs {
                if *a == n && !seen.contains(b) {
                    stack.push(b.clone());
                } else if *b == n && !seen.contains(a) {
                    stack.push(a.clone());
                }
            }
        }
        seen
    }

    /// True when a directed path of length at least one runs from `from` to
    /// `to`, optionally ignoring one arc.
    pub fn has_directed_path(&self, from: &str, to: &str, skip: Option<(&str, &str)>) -> bool {
        let mut seen = BTreeSet::new();
        let mut stack = vec![from.to_string()];
        while let Some(n) = stack.pop() {
            for (a, b) in &self.arcs {
                if *a != n || skip == Some((a.as_str(), b.as_str())) {
                    continue;
                }
                if b == to {
                    return true;
                }
                if seen.insert(b.clone()) {
                    stack.push(b.clone());
                }
            }
        }
        false
    }

    /// Structural problems only; tables are checked by [`validate_map`].
    pub fn validate_structure(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut names = BTreeSet::new();
        for v in &self.variables {
            if !names.insert(v.name.as_str()) {
                report
                    .violations
                    .push(Violation::DuplicateVariable { name: v.name.clone() });
            }
            let distinct: BTreeSet<&String> = v.instances.iter().collect();
            if v.instances.len() < 2 {
                report.violations.push(Violation::InvalidInstances {
                    variable: v.name.clone(),
                    reason: "fewer than two instances".into(),
                });
            } else if distinct.len() != v.instances.len() {
                report.violations.push(Violation::InvalidInstances {
                    variable: v.name.clone(),
                    reason: "duplicate instance label".into(),
                });
            }
        }
        for (a, b) in &self.arcs {
            if !names.contains(a.as_str()) || !names.contains(b.as_str()) || a == b {
                report.violations.push(Violation::BadArc {
                    from: a.clone(),
                    to: b.clone(),
                });
            }
        }
        if let Some(cycle) = self.find_cycle() {
            report.violations.push(Violation::Cycle { nodes: cycle });
        }
        if let Some(h) = &self.distinguished {
            if !names.contains(h.as_str()) {
                report
                    .violations
                    .push(Violation::UnknownDistinguished { name: h.clone() });
            } else {
                let parents = self.parents(h);
                if !parents.is_empty() {
                    report.violations.push(Violation::DistinguishedHasPredecessors {
                        node: h.clone(),
                        parents,
                    });
                }
            }
        }
        report
    }
}

/// Conditional distribution of `child` given each instance of `parents`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    pub child: String,
    pub parents: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ConditionalTable {
    pub fn new(child: impl Into<String>, parents: &[&str], rows: Vec<Vec<f64>>) -> Self {
        ConditionalTable {
            child: child.into(),
            parents: parents.iter().map(|s| s.to_string()).collect(),
            rows,
        }
    }

    /// Row index of a parent instance under row-major layout.
    pub fn row_index(cards: &[usize], states: &[usize]) -> usize {
        states.iter().zip(cards).fold(0, |acc, (&s, &c)| acc * c + s)
    }

    /// Every entry is 0 or 1.
    pub fn is_deterministic(&self) -> bool {
        self.rows.iter().flatten().all(|&p| p == 0.0 || p == 1.0)
    }
}

/// Knowledge map with one table per variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessedKnowledgeMap {
    pub map: KnowledgeMap,
    pub tables: BTreeMap<String, ConditionalTable>,
}

impl AssessedKnowledgeMap {
    pub fn new(map: KnowledgeMap, tables: Vec<ConditionalTable>) -> Self {
        AssessedKnowledgeMap {
            map,
            tables: tables.into_iter().map(|t| (t.child.clone(), t)).collect(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&ConditionalTable> {
        self.tables.get(name)
    }

    pub fn variables(&self) -> &[Variable] {
        &self.map.variables
    }

    /// Number of joint states, saturating on overflow.
    pub fn state_count(&self) -> u128 {
        self.map
            .variables
            .iter()
            .fold(1u128, |acc, v| acc.saturating_mul(v.cardinality() as u128))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    #[error("variable `{name}` is declared more than once")]
    DuplicateVariable { name: String },
    #[error("variable `{variable}`: {reason}")]
    InvalidInstances { variable: String, reason: String },
    #[error("arc {from} -> {to} does not join two distinct declared variables")]
    BadArc { from: String, to: String },
    #[error("directed cycle {}", nodes.join(" -> "))]
    Cycle { nodes: Vec<String> },
    #[error("distinguished node `{name}` is not declared")]
    UnknownDistinguished { name: String },
    #[error("distinguished node `{node}` has predecessors {parents:?}")]
    DistinguishedHasPredecessors { node: String, parents: Vec<String> },
    #[error("variable `{variable}` has no table")]
    MissingTable { variable: String },
    #[error("table for `{variable}` does not match a declared variable")]
    ExtraTable { variable: String },
    #[error("table for `{variable}` lists parents {found:?}, graph gives {expected:?}")]
    ParentMismatch {
        variable: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("table for `{variable}` has {found} rows of length {found_width:?}, expected {expected} rows of length {expected_width}")]
    TableShape {
        variable: String,
        expected: usize,
        found: usize,
        expected_width: usize,
        found_width: Option<usize>,
    },
    #[error("table for `{variable}` row {row} holds {value}, outside [0, 1]")]
    InvalidEntry { variable: String, row: usize, value: f64 },
    #[error("table for `{variable}` row {row} sums to {sum}")]
    NotNormalized { variable: String, row: usize, sum: f64 },
}

/// Violations make a model unusable; warnings do not.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
        self.warnings.extend(other.warnings);
    }

    fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ")
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            write!(f, "valid")
        } else {
            write!(f, "{}", self.summary())
        }
    }
}

/// Checks structure and tables. An all-zero row is accepted as the encoding
/// of an impossible conditioning event and reported as a warning.
pub fn validate_map(akm: &AssessedKnowledgeMap, tolerance: f64) -> ValidationReport {
    let mut report = akm.map.validate_structure();
    let mut zero_entries = 0usize;
    for v in &akm.map.variables {
        let Some(table) = akm.tables.get(&v.name) else {
            report.violations.push(Violation::MissingTable {
                variable: v.name.clone(),
            });
            continue;
        };
        let expected_parents = akm.map.parents(&v.name);
        if table.parents != expected_parents {
            report.violations.push(Violation::ParentMismatch {
                variable: v.name.clone(),
                expected: expected_parents,
                found: table.parents.clone(),
            });
            continue;
        }
        let expected_rows: usize = table
            .parents
            .iter()
            .map(|p| akm.map.variable(p).map_or(0, Variable::cardinality))
            .product();
        let width = v.cardinality();
        if table.rows.len() != expected_rows || table.rows.iter().any(|r| r.len() != width) {
            report.violations.push(Violation::TableShape {
                variable: v.name.clone(),
                expected: expected_rows,
                found: table.rows.len(),
                expected_width: width,
                found_width: table.rows.iter().map(Vec::len).find(|&l| l != width),
            });
            continue;
        }
        for (r, row) in table.rows.iter().enumerate() {
            if let Some(&bad) = row.iter().find(|p| !(0.0..=1.0).contains(*p) || p.is_nan()) {
                report.violations.push(Violation::InvalidEntry {
                    variable: v.name.clone(),
                    row: r,
                    value: bad,
                });
                continue;
            }
            let sum: f64 = row.iter().sum();
            if sum == 0.0 {
                report.warnings.push(format!(
                    "table for `{}` row {} is all zero (impossible conditioning event)",
                    v.name, r
                ));
            } else if (sum - 1.0).abs() > tolerance {
                report.violations.push(Violation::NotNormalized {
                    variable: v.name.clone(),
                    row: r,
                    sum,
                });
            }
            zero_entries += row.iter().filter(|&&p| p == 0.0).count();
        }
    }
    for name in akm.tables.keys() {
        if !akm.map.contains(name) {
            report.violations.push(Violation::ExtraTable { variable: name.clone() });
        }
    }
    if zero_entries > 0 {
        report.warnings.push(format!(
            "{zero_entries} zero table entries; the joint is not strictly positive"
        ));
    }
    report
}

/// Index form of an assessed map used by the enumeration routines.
pub(crate) struct Factorization<'a> {
    pub cards: Vec<usize>,
    pub parents: Vec<Vec<usize>>,
    pub rows: Vec<&'a [Vec<f64>]>,
}

impl<'a> Factorization<'a> {
    pub fn new(akm: &'a AssessedKnowledgeMap) -> Result<Self, ModelError> {
        let vars = &akm.map.variables;
        let mut parents = Vec::with_capacity(vars.len());
        let mut rows = Vec::with_capacity(vars.len());
        for v in vars {
            let table = akm
                .tables
                .get(&v.name)
                .ok_or_else(|| ModelError::Invalid(format!("no table for `{}`", v.name)))?;
            let idx = table
                .parents
                .iter()
                .map(|p| {
                    akm.map
                        .index_of(p)
                        .ok_or_else(|| ModelError::UnknownVariable(p.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            parents.push(idx);
            rows.push(table.rows.as_slice());
        }
        Ok(Factorization {
            cards: vars.iter().map(Variable::cardinality).collect(),
            parents,
            rows,
        })
    }

    /// Table entry for variable `v` under full or partial assignment `state`
    /// (only `v` and its parents are read).
    #[inline]
    pub fn entry(&self, v: usize, state: &[usize]) -> f64 {
        let mut r = 0;
        for &p in &self.parents[v] {
            r = r * self.cards[p] + state[p];
        }
        self.rows[v][r][state[v]]
    }
}

/// Advances a mixed-radix counter (last digit fastest). Returns false after
/// the last state.
#[inline]
pub(crate) fn advance(state: &mut [usize], cards: &[usize]) -> bool {
    for i in (0..state.len()).rev() {
        state[i] += 1;
        if state[i] < cards[i] {
            return true;
        }
        state[i] = 0;
    }
    false
}

/// Distribution over every instance combination of `variables`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    pub variables: Vec<Variable>,
    pub probabilities: Vec<f64>,
    pub strictly_positive: bool,
}

impl JointDistribution {
    pub fn from_probabilities(variables: Vec<Variable>, probabilities: Vec<f64>) -> Self {
        let strictly_positive = probabilities.iter().all(|&p| p > 0.0);
        JointDistribution {
            variables,
            probabilities,
            strictly_positive,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn cards(&self) -> Vec<usize> {
        self.variables.iter().map(Variable::cardinality).collect()
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    /// Probability of a full instance given as instance indices.
    pub fn probability_of(&self, state: &[usize]) -> f64 {
        let cards = self.cards();
        self.probabilities[ConditionalTable::row_index(&cards, state)]
    }

    /// Marginal over `vars` (indices into `self.variables`), row-major in the
    /// given order.
    pub fn marginal(&self, vars: &[usize]) -> Vec<f64> {
        let cards = self.cards();
        let mut strides = vec![0usize; cards.len()];
        let mut size = 1;
        for &v in vars.iter().rev() {
            strides[v] = size;
            size *= cards[v];
        }
        let mut out = vec![0.0; size];
        let mut state = vec![0usize; cards.len()];
        let mut k = 0;
        loop {
            let idx: usize = vars.iter().map(|&v| state[v] * strides[v]).sum();
            out[idx] += self.probabilities[k];
            k += 1;
            if !advance(&mut state, &cards) {
                break;
            }
        }
        out
    }

    /// Probability that every `(variable, instance)` pair holds.
    pub fn probability(&self, assignment: &[(usize, usize)]) -> f64 {
        let cards = self.cards();
        let mut state = vec![0usize; cards.len()];
        let mut total = 0.0;
        let mut k = 0;
        loop {
            if assignment.iter().all(|&(v, i)| state[v] == i) {
                total += self.probabilities[k];
            }
            k += 1;
            if !advance(&mut state, &cards) {
                break;
            }
        }
        total
    }

    /// Distribution of `target` given the evidence pairs.
    pub fn conditional(&self, target: usize, evidence: &[(usize, usize)]) -> Result<Vec<f64>, ModelError> {
        let cards = self.cards();
        let mut out = vec![0.0; cards[target]];
        let mut state = vec![0usize; cards.len()];
        let mut k = 0;
        loop {
            if evidence.iter().all(|&(v, i)| state[v] == i) {
                out[state[target]] += self.probabilities[k];
            }
            k += 1;
            if !advance(&mut state, &cards) {
                break;
            }
        }
        let z: f64 = out.iter().sum();
        if z <= 0.0 {
            return Err(ModelError::ImpossibleEvidence);
        }
        out.iter_mut().for_each(|p| *p /= z);
        Ok(out)
    }
}

/// Product of the map's tables over every joint instance.
pub fn joint_from_map(akm: &AssessedKnowledgeMap) -> Result<JointDistribution, ModelError> {
    joint_from_map_capped(akm, DEFAULT_STATE_CAP)
}

pub fn joint_from_map_capped(akm: &AssessedKnowledgeMap, cap: usize) -> Result<JointDistribution, ModelError> {
    let states = akm.state_count();
    if states > cap as u128 {
        return Err(ModelError::TooManyStates { states, cap });
    }
    let report = validate_map(akm, DEFAULT_TOLERANCE.max(1e-6));
    if !report.is_valid() {
        return Err(ModelError::Invalid(report.summary()));
    }
    let f = Factorization::new(akm)?;
    let n = f.cards.len();
    let mut probabilities = Vec::with_capacity(states as usize);
    let mut state = vec![0usize; n];
    loop {
        let mut p = 1.0;
        for v in 0..n {
            p *= f.entry(v, &state);
            if p == 0.0 {
                break;
            }
        }
        probabilities.push(p);
        if !advance(&mut state, &f.cards) {
            break;
        }
    }
    Ok(JointDistribution::from_probabilities(
        akm.map.variables.clone(),
        probabilities,
    ))
}

fn resolve_names(km: &KnowledgeMap, names: &[&str]) -> Result<BTreeSet<usize>, ModelError> {
    names
        .iter()
        .map(|n| km.index_of(n).ok_or_else(|| ModelError::UnknownVariable(n.to_string())))
        .collect()
}

/// Graphical separation of `xs` from `ys` given `zs`.
///
/// Decided on the moral graph of the ancestral set of `xs ∪ ys ∪ zs`, which
/// is equivalent to the absence of an active path. Not valid for maps with
/// deterministic nodes.
pub fn d_separated(km: &KnowledgeMap, xs: &[&str], ys: &[&str], zs: &[&str]) -> Result<bool, ModelError> {
    let x = resolve_names(km, xs)?;
    let y = resolve_names(km, ys)?;
    let z = resolve_names(km, zs)?;
    for (a, b) in [(&x, &y), (&x, &z), (&y, &z)] {
        if let Some(&common) = a.intersection(b).next() {
            return Err(ModelError::OverlappingSets(km.variables[common].name.clone()));
        }
    }
    let n = km.variables.len();
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (a, b) in &km.arcs {
        if let (Some(i), Some(j)) = (km.index_of(a), km.index_of(b)) {
            parents[j].push(i);
        }
    }
    let mut ancestral = vec![false; n];
    let mut stack: Vec<usize> = x.iter().chain(&y).chain(&z).copied().collect();
    while let Some(v) = stack.pop() {
        if ancestral[v] {
            continue;
        }
        ancestral[v] = true;
        stack.extend(parents[v].iter().copied());
    }
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for v in (0..n).filter(|&v| ancestral[v]) {
        for &p in &parents[v] {
            adj[v].insert(p);
            adj[p].insert(v);
        }
        for (i, &p) in parents[v].iter().enumerate() {
            for &q in &parents[v][i + 1..] {
                adj[p].insert(q);
                adj[q].insert(p);
            }
        }
    }
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = x.iter().copied().collect();
    while let Some(v) = stack.pop() {
        if seen[v] || z.contains(&v) {
            continue;
        }
        if y.contains(&v) {
            return Ok(false);
        }
        seen[v] = true;
        stack.extend(adj[v].iter().copied());
    }
    Ok(true)
}

/// Whether `y`'s distribution is unchanged when `x` is dropped from its
/// conditioning set, across every parent instance with positive probability.
pub fn is_superfluous_arc(
    akm: &AssessedKnowledgeMap,
    from: &str,
    to: &str,
    tolerance: f64,
) -> Result<bool, ModelError> {
    if !akm.map.has_arc(from, to) {
        return Err(ModelError::NoSuchArc(from.to_string(), to.to_string()));
    }
    let joint = joint_from_map(akm)?;
    let yi = akm.map.index_of(to).unwrap();
    let xi = akm.map.index_of(from).unwrap();
    let others: Vec<usize> = akm
        .map
        .parents(to)
        .iter()
        .filter(|p| p.as_str() != from)
        .map(|p| akm.map.index_of(p).unwrap())
        .collect();
    // Marginal over (others..., x, y).
    let mut vars = others.clone();
    vars.push(xi);
    vars.push(yi);
    let m = joint.marginal(&vars);
    let cx = akm.map.variables[xi].cardinality();
    let cy = akm.map.variables[yi].cardinality();
    let rest: usize = others.iter().map(|&o| akm.map.variables[o].cardinality()).product();
    for r in 0..rest {
        let block = &m[r * cx * cy..(r + 1) * cx * cy];
        let reduced_total: f64 = block.iter().sum();
        if reduced_total <= 0.0 {
            continue;
        }
        for xv in 0..cx {
            let row = &block[xv * cy..(xv + 1) * cy];
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                continue;
            }
            for yv in 0..cy {
                let full = row[yv] / total;
                let reduced: f64 = (0..cx).map(|xx| block[xx * cy + yv]).sum::<f64>() / reduced_total;
                if (full - reduced).abs() > tolerance {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

fn sort_by_declaration(km: &KnowledgeMap, names: BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<String> = names.into_iter().collect();
    v.sort_by_key(|n| km.index_of(n).unwrap_or(usize::MAX));
    v
}

/// Reverses `from -> to`. Both nodes end up conditioned on the union of
/// their former parents, and new tables follow from Bayes' theorem. Where
/// the new conditioning event has probability zero, `from` keeps its old
/// conditional as an arbitrary but well-formed row.
pub fn reverse_arc(akm: &AssessedKnowledgeMap, from: &str, to: &str) -> Result<AssessedKnowledgeMap, ModelError> {
    let km = &akm.map;
    if !km.has_arc(from, to) {
        return Err(ModelError::NoSuchArc(from.to_string(), to.to_string()));
    }
    if km.has_directed_path(from, to, Some((from, to))) {
        return Err(ModelError::ReversalCycle(from.to_string(), to.to_string()));
    }
    let x_parents: BTreeSet<String> = km.parents(from).into_iter().collect();
    let y_parents: BTreeSet<String> = km.parents(to).into_iter().filter(|p| p != from).collect();
    let shared: BTreeSet<String> = x_parents.union(&y_parents).cloned().collect();

    let mut new_map = km.clone();
    new_map.arcs.remove(&(from.to_string(), to.to_string()));
    new_map.arcs.insert((to.to_string(), from.to_string()));
    for p in &shared {
        new_map.arcs.insert((p.clone(), from.to_string()));
        new_map.arcs.insert((p.clone(), to.to_string()));
    }
    let new_y_parents = sort_by_declaration(km, shared.clone());
    let mut x_with_y = shared.clone();
    x_with_y.insert(to.to_string());
    let new_x_parents = sort_by_declaration(km, x_with_y);

    let var = |n: &str| km.variable(n).unwrap();
    let card = |n: &str| var(n).cardinality();
    let xt = akm
        .table(from)
        .ok_or_else(|| ModelError::Invalid(format!("no table for `{from}`")))?;
    let yt = akm
        .table(to)
        .ok_or_else(|| ModelError::Invalid(format!("no table for `{to}`")))?;
    let lookup = |t: &ConditionalTable, assign: &BTreeMap<&str, usize>, child: usize| -> f64 {
        let cards: Vec<usize> = t.parents.iter().map(|p| card(p)).collect();
        let states: Vec<usize> = t.parents.iter().map(|p| assign[p.as_str()]).collect();
        t.rows[ConditionalTable::row_index(&cards, &states)][child]
    };

    let cx = card(from);
    let cy = card(to);
    let shared_cards: Vec<usize> = new_y_parents.iter().map(|p| card(p)).collect();
    let n_shared: usize = shared_cards.iter().product();
    let mut y_rows = Vec::with_capacity(n_shared);
    // x rows indexed by (shared..., y) in declaration order of new_x_parents.
    let x_card_list: Vec<usize> = new_x_parents.iter().map(|p| card(p)).collect();
    let n_x_rows: usize = x_card_list.iter().product();
    let mut x_rows = vec![vec![0.0; cx]; n_x_rows];

    let mut s = vec![0usize; new_y_parents.len()];
    for _ in 0..n_shared {
        let mut assign: BTreeMap<&str, usize> = new_y_parents
            .iter()
            .map(String::as_str)
            .zip(s.iter().copied())
            .collect();
        // p(x, y | shared) = p(x | x-parents) p(y | x, y-parents)
        let mut pxy = vec![vec![0.0; cy]; cx];
        for (xv, row) in pxy.iter_mut().enumerate() {
            assign.insert(from, xv);
            let px = lookup(xt, &assign, xv);
            for (yv, cell) in row.iter_mut().enumerate() {
                *cell = px * lookup(yt, &assign, yv);
            }
        }
        assign.remove(from);
        // Rounding can push a sum or a ratio an ulp past 1.
        let py: Vec<f64> = (0..cy)
            .map(|yv| (0..cx).map(|xv| pxy[xv][yv]).sum::<f64>().min(1.0))
            .collect();
        y_rows.push(py.clone());
        for yv in 0..cy {
            assign.insert(to, yv);
            let states: Vec<usize> = new_x_parents.iter().map(|p| assign[p.as_str()]).collect();
            let r = ConditionalTable::row_index(&x_card_list, &states);
            x_rows[r] = if py[yv] > 0.0 {
                (0..cx).map(|xv| (pxy[xv][yv] / py[yv]).min(1.0)).collect()
            } else {
                (0..cx).map(|xv| lookup(xt, &assign, xv)).collect()
            };
        }
        advance(&mut s, &shared_cards);
    }

    let mut tables = akm.tables.clone();
    tables.insert(
        from.to_string(),
        ConditionalTable {
            child: from.to_string(),
            parents: new_x_parents,
            rows: x_rows,
        },
    );
    tables.insert(
        to.to_string(),
        ConditionalTable {
            child: to.to_string(),
            parents: new_y_parents,
            rows: y_rows,
        },
    );
    Ok(AssessedKnowledgeMap { map: new_map, tables })
}

/// Brute-force posterior of `target` by summing the enumerated joint.
pub fn query_conditional(
    akm: &AssessedKnowledgeMap,
    target: &str,
    evidence: &Evidence,
) -> Result<Vec<f64>, ModelError> {
    let t = akm
        .map
        .index_of(target)
        .ok_or_else(|| ModelError::UnknownVariable(target.to_string()))?;
    let ev = evidence.resolve(&akm.map.variables)?;
    if ev.iter().any(|&(v, _)| v == t) {
        return Err(ModelError::OverlappingSets(target.to_string()));
    }
    let joint = joint_from_map(akm)?;
    joint.conditional(t, &ev)
}

/// A total order over a map's variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionOrder {
    pub order: Vec<String>,
}

impl ExpansionOrder {
    /// Every arc runs from an earlier to a later variable.
    pub fn is_consistent_with(&self, km: &KnowledgeMap) -> bool {
        let pos: BTreeMap<&str, usize> = self.order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        pos.len() == km.variables.len()
            && km.variables.iter().all(|v| pos.contains_key(v.name.as_str()))
            && km.arcs.iter().all(|(a, b)| pos[a.as_str()] < pos[b.as_str()])
    }

    /// All orders consistent with the map. Exponential; for small maps.
    pub fn all_consistent(km: &KnowledgeMap) -> Vec<ExpansionOrder> {
        fn go(km: &KnowledgeMap, placed: &mut Vec<String>, out: &mut Vec<ExpansionOrder>) {
            if placed.len() == km.variables.len() {
                out.push(ExpansionOrder { order: placed.clone() });
                return;
            }
            for v in &km.variables {
                if placed.contains(&v.name) {
                    continue;
                }
                if km.parents(&v.name).iter().all(|p| placed.contains(p)) {
                    placed.push(v.name.clone());
                    go(km, placed, out);
                    placed.pop();
                }
            }
        }
        let mut out = Vec::new();
        go(km, &mut Vec::new(), &mut out);
        out
    }
}
