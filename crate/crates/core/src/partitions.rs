//! Partition-based elicitation: hypotheses grouped into sets that share one
//! distribution for a feature, per instance of the feature's other parents.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{advance, ConditionalTable, Variable};
use crate::similarity::{HypothesisSpecificNetwork, Relevance, SimilarityNetwork};

/// Either a hypothesis label or a nested named set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SetMember {
    Hypothesis(String),
    Set(HypothesisSet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub name: String,
    pub members: Vec<SetMember>,
}

impl HypothesisSet {
    pub fn of(name: impl Into<String>, members: &[&str]) -> Self {
        HypothesisSet {
            name: name.into(),
            members: members.iter().map(|m| SetMember::Hypothesis(m.to_string())).collect(),
        }
    }

    /// Hypothesis labels in declaration order, nested sets expanded.
    pub fn flatten(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for m in &self.members {
            match m {
                SetMember::Hypothesis(h) => out.push(h.as_str()),
                SetMember::Set(s) => out.extend(s.flatten()),
            }
        }
        out
    }
}

/// Instance assignment of a feature's non-distinguished parents.
pub type Conditioning = BTreeMap<String, String>;

fn describe(c: &Conditioning) -> String {
    if c.is_empty() {
        "(no parents)".to_string()
    } else {
        c.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
    }
}

/// One grouping of hypotheses for `feature` under one conditioning
/// instance; `distributions[k]` belongs to `sets[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub feature: String,
    #[serde(default)]
    pub conditioning: Conditioning,
    pub sets: Vec<HypothesisSet>,
    pub distributions: Vec<Vec<f64>>,
}

impl Partition {
    /// Index of the set holding `h`.
    pub fn set_of(&self, h: &str) -> Option<usize> {
        self.sets.iter().position(|s| s.flatten().contains(&h))
    }

    /// Same sets and distributions under another conditioning instance.
    pub fn copy_for(&self, conditioning: Conditioning) -> Partition {
        Partition {
            conditioning,
            ..self.clone()
        }
    }

    /// Groups hypotheses with identical distributions, in first-appearance
    /// order. Each set is named after its first member.
    pub fn from_distributions(
        feature: &str,
        conditioning: Conditioning,
        hypotheses: &[String],
        per_hypothesis: &BTreeMap<String, Vec<f64>>,
    ) -> Partition {
        let mut sets: Vec<(Vec<&str>, &Vec<f64>)> = Vec::new();
        for h in hypotheses {
            let Some(d) = per_hypothesis.get(h) else { continue };
            match sets.iter_mut().find(|(_, dist)| *dist == d) {
                Some((members, _)) => members.push(h),
                None => sets.push((vec![h], d)),
            }
        }
        Partition {
            feature: feature.to_string(),
            conditioning,
            distributions: sets.iter().map(|(_, d)| (*d).clone()).collect(),
            sets: sets
                .iter()
                .map(|(members, _)| HypothesisSet::of(members[0], members))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionViolation {
    #[error("hypothesis `{hypothesis}` is in no set")]
    MissingHypothesis { hypothesis: String },
    #[error("hypothesis `{hypothesis}` is in more than one set")]
    DuplicateHypothesis { hypothesis: String },
    #[error("set `{set}` names unknown hypothesis `{hypothesis}`")]
    UnknownHypothesis { set: String, hypothesis: String },
    #[error("set `{set}` is empty")]
    EmptySet { set: String },
    #[error("{sets} sets but {distributions} distributions")]
    DistributionCount { sets: usize, distributions: usize },
    #[error("distribution for set `{set}` has {found} entries, expected {expected}")]
    DistributionLength { set: String, expected: usize, found: usize },
    #[error("distribution for set `{set}` holds {value}, outside [0, 1]")]
    InvalidEntry { set: String, value: f64 },
    #[error("distribution for set `{set}` sums to {sum}")]
    NotNormalized { set: String, sum: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub violations: Vec<PartitionViolation>,
    pub warnings: Vec<String>,
}

impl PartitionReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for PartitionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Reports coverage, duplication and distribution problems. An all-zero
/// distribution marks an impossible conditioning event and only warns.
pub fn validate_partition(p: &Partition, h: &Variable, feature: &Variable, tolerance: f64) -> PartitionReport {
    let mut report = PartitionReport::default();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for s in &p.sets {
        let members = s.flatten();
        if members.is_empty() {
            report
                .violations
                .push(PartitionViolation::EmptySet { set: s.name.clone() });
        }
        for m in members {
            if h.instance_index(m).is_none() {
                report.violations.push(PartitionViolation::UnknownHypothesis {
                    set: s.name.clone(),
                    hypothesis: m.to_string(),
                });
            } else if !seen.insert(m) {
                report.violations.push(PartitionViolation::DuplicateHypothesis {
                    hypothesis: m.to_string(),
                });
            }
        }
    }
    for hyp in &h.instances {
        if !seen.contains(hyp.as_str()) {
            report.violations.push(PartitionViolation::MissingHypothesis {
                hypothesis: hyp.clone(),
            });
        }
    }
    if p.sets.len() != p.distributions.len() {
        report.violations.push(PartitionViolation::DistributionCount {
            sets: p.sets.len(),
            distributions: p.distributions.len(),
        });
    }
    for (s, d) in p.sets.iter().zip(&p.distributions) {
        if d.len() != feature.cardinality() {
            report.violations.push(PartitionViolation::DistributionLength {
                set: s.name.clone(),
                expected: feature.cardinality(),
                found: d.len(),
            });
            continue;
        }
        if let Some(&value) = d.iter().find(|v| !(0.0..=1.0).contains(*v) || v.is_nan()) {
            report.violations.push(PartitionViolation::InvalidEntry {
                set: s.name.clone(),
                value,
            });
            continue;
        }
        let sum: f64 = d.iter().sum();
        if sum == 0.0 {
            report.warnings.push(format!(
                "`{}` under {} for set `{}` is all zero (impossible conditioning event)",
                p.feature,
                describe(&p.conditioning),
                s.name
            ));
        } else if (sum - 1.0).abs() > tolerance {
            report.violations.push(PartitionViolation::NotNormalized {
                set: s.name.clone(),
                sum,
            });
        }
    }
    report
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("`{feature}` has no partition for {instance}")]
    MissingConditioning { feature: String, instance: String },
    #[error("`{feature}` has more than one partition for {instance}")]
    DuplicateConditioning { feature: String, instance: String },
    #[error("`{feature}` partition conditions on {instance}, which is not an instance of its parents")]
    UnknownConditioning { feature: String, instance: String },
    #[error("`{feature}` partition for {instance} is invalid: {report}")]
    Invalid {
        feature: String,
        instance: String,
        report: PartitionReport,
    },
    #[error(
        "`{feature}` has no arc from the distinguished node but its partition for {instance} separates hypotheses"
    )]
    RelevantWithoutArc { feature: String, instance: String },
    #[error("seed for unknown hypothesis `{0}`")]
    UnknownSeed(String),
    #[error("conflicting seeds for `{feature}` at `{first}` and `{second}`")]
    ConflictingSeeds {
        feature: String,
        first: String,
        second: String,
    },
    #[error("no seed for `{feature}` reaches {hypotheses:?}")]
    UncoveredComponent { feature: String, hypotheses: Vec<String> },
}

/// Every instance of `parents` in row-major order.
pub fn conditioning_instances(parents: &[Variable]) -> Vec<Conditioning> {
    let cards: Vec<usize> = parents.iter().map(Variable::cardinality).collect();
    let total: usize = cards.iter().product();
    let mut state = vec![0usize; parents.len()];
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        out.push(
            parents
                .iter()
                .zip(&state)
                .map(|(v, &i)| (v.name.clone(), v.instances[i].clone()))
                .collect(),
        );
        advance(&mut state, &cards);
    }
    out
}

/// Expands one-distribution-per-set assessments into a full table.
///
/// With `include_h` the table's parents are `h` followed by `parents`, and
/// the row for `(h_k, c)` is the distribution of the set holding `h_k` in
/// the partition for `c`. Without it, every partition must consist of a
/// single set.
pub fn expand_assessments(
    partitions: &[Partition],
    h: &Variable,
    feature: &Variable,
    parents: &[Variable],
    include_h: bool,
    tolerance: f64,
) -> Result<ConditionalTable, PartitionError> {
    let instances = conditioning_instances(parents);
    let parent_names: BTreeSet<&str> = parents.iter().map(|p| p.name.as_str()).collect();
    let mut by_instance: BTreeMap<&Conditioning, &Partition> = BTreeMap::new();
    for p in partitions.iter().filter(|p| p.feature == feature.name) {
        let label = describe(&p.conditioning);
        let well_formed = p.conditioning.len() == parents.len()
            && p.conditioning.iter().all(|(k, v)| {
                parent_names.contains(k.as_str())
                    && parents.iter().any(|pv| pv.name == *k && pv.instance_index(v).is_some())
            });
        if !well_formed {
            return Err(PartitionError::UnknownConditioning {
                feature: feature.name.clone(),
                instance: label,
            });
        }
        if by_instance.insert(&p.conditioning, p).is_some() {
            return Err(PartitionError::DuplicateConditioning {
                feature: feature.name.clone(),
                instance: label,
            });
        }
        let report = validate_partition(p, h, feature, tolerance);
        if !report.is_valid() {
            return Err(PartitionError::Invalid {
                feature: feature.name.clone(),
                instance: label,
                report,
            });
        }
        if !include_h && p.sets.len() != 1 {
            return Err(PartitionError::RelevantWithoutArc {
                feature: feature.name.clone(),
                instance: label,
            });
        }
    }
    let mut ordered = Vec::with_capacity(instances.len());
    for c in &instances {
        let p = by_instance.get(c).ok_or_else(|| PartitionError::MissingConditioning {
            feature: feature.name.clone(),
            instance: describe(c),
        })?;
        ordered.push(*p);
    }
    let mut table_parents: Vec<String> = Vec::new();
    let mut rows = Vec::new();
    if include_h {
        table_parents.push(h.name.clone());
        for hyp in &h.instances {
            for p in &ordered {
                let s = p.set_of(hyp).expect("validated coverage");
                rows.push(p.distributions[s].clone());
            }
        }
    } else {
        rows.extend(ordered.iter().map(|p| p.distributions[0].clone()));
    }
    table_parents.extend(parents.iter().map(|p| p.name.clone()));
    Ok(ConditionalTable {
        child: feature.name.clone(),
        parents: table_parents,
        rows,
    })
}

/// Fills in distributions for every hypothesis by flooding seeds across
/// edges whose local map omits `feature`.
pub fn propagate_through_similarity(
    net: &SimilarityNetwork,
    feature: &str,
    seeds: &BTreeMap<String, Vec<f64>>,
    tolerance: f64,
) -> Result<BTreeMap<String, Vec<f64>>, PartitionError> {
    let hyps = &net.graph.hypotheses;
    if let Some(unknown) = seeds.keys().find(|s| !hyps.contains(s)) {
        return Err(PartitionError::UnknownSeed(unknown.clone()));
    }
    let mut component: BTreeMap<&str, usize> = BTreeMap::new();
    let mut next = 0;
    for start in hyps {
        if component.contains_key(start.as_str()) {
            continue;
        }
        let mut stack = vec![start.as_str()];
        while let Some(n) = stack.pop() {
            if component.insert(n, next).is_some() {
                continue;
            }
            for m in &net.local_maps {
                if m.edge.contains(n) && !m.contains(feature) {
                    let o = m.edge.other(n);
                    if !component.contains_key(o) {
                        stack.push(o);
                    }
                }
            }
        }
        next += 1;
    }
    let mut chosen: Vec<Option<(&str, &Vec<f64>)>> = vec![None; next];
    for h in hyps {
        let Some(d) = seeds.get(h) else { continue };
        let c = component[h.as_str()];
        match chosen[c] {
            None => chosen[c] = Some((h, d)),
            Some((first, prev)) => {
                let same = prev.len() == d.len() && prev.iter().zip(d).all(|(a, b)| (a - b).abs() <= tolerance);
                if !same {
                    return Err(PartitionError::ConflictingSeeds {
                        feature: feature.to_string(),
                        first: first.to_string(),
                        second: h.clone(),
                    });
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    for (c, seed) in chosen.iter().enumerate() {
        let members: Vec<String> = hyps.iter().filter(|h| component[h.as_str()] == c).cloned().collect();
        let Some((_, d)) = seed else {
            return Err(PartitionError::UncoveredComponent {
                feature: feature.to_string(),
                hypotheses: members,
            });
        };
        for m in members {
            out.insert(m, (*d).clone());
        }
    }
    Ok(out)
}

/// Assessments a feature requires, for [`count_assessments`].
pub struct FeatureAssessments<'a> {
    pub feature: &'a Variable,
    pub hypotheses: usize,
    /// Instances of the feature's non-distinguished parents.
    pub parent_instances: usize,
    pub partitions: &'a [Partition],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentCount {
    pub with_partitions: usize,
    pub without: usize,
}

/// Free parameters with and without partitions; entries fixed by
/// normalization are not counted.
pub fn count_assessments(features: &[FeatureAssessments<'_>]) -> AssessmentCount {
    let mut count = AssessmentCount {
        with_partitions: 0,
        without: 0,
    };
    for f in features {
        let free = f.feature.cardinality().saturating_sub(1);
        count.without += f.hypotheses * f.parent_instances * free;
        count.with_partitions += f.partitions.iter().map(|p| p.sets.len() * free).sum::<usize>();
    }
    count
}

/// A disagreement between a partition and the similarity network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConflict {
    pub feature: String,
    pub hypotheses: (String, String),
    pub message: String,
}

/// Cross-checks partitions against the per-hypothesis network:
/// - set-mates whose maps give the feature different parents;
/// - edges asserting equality whose endpoints receive different
///   distributions under some conditioning instance;
/// - edges asserting inequality whose endpoints share a set under every
///   conditioning instance.
pub fn audit_partitions(
    hs: &HypothesisSpecificNetwork,
    partitions: &[Partition],
    tolerance: f64,
) -> Vec<PartitionConflict> {
    let mut out = Vec::new();
    let mut features: BTreeMap<&str, Vec<&Partition>> = BTreeMap::new();
    for p in partitions {
        features.entry(p.feature.as_str()).or_default().push(p);
    }
    for (feature, ps) in &features {
        let mut reported: BTreeSet<(String, String)> = BTreeSet::new();
        for p in ps {
            for s in &p.sets {
                let members = s.flatten();
                for pair in members.windows(2) {
                    let (a, b) = (pair[0], pair[1]);
                    let (Some(ma), Some(mb)) = (hs.hs_map(a), hs.hs_map(b)) else {
                        continue;
                    };
                    if ma.parents(feature) != mb.parents(feature) && reported.insert((a.to_string(), b.to_string())) {
                        out.push(PartitionConflict {
                            feature: feature.to_string(),
                            hypotheses: (a.to_string(), b.to_string()),
                            message: format!(
                                "set `{}` groups {a} and {b}, whose maps give `{feature}` different parents",
                                s.name
                            ),
                        });
                    }
                }
            }
        }
        for r in &hs.relevance {
            let (a, b) = (r.edge.first(), r.edge.second());
            match r.assertions.get(*feature) {
                Some(Relevance::Equal) => {
                    let differs = ps.iter().find(|p| match (p.set_of(a), p.set_of(b)) {
                        (Some(i), Some(j)) => p.distributions[i]
                            .iter()
                            .zip(&p.distributions[j])
                            .any(|(x, y)| (x - y).abs() > tolerance),
                        _ => false,
                    });
                    if let Some(p) = differs {
                        out.push(PartitionConflict {
                            feature: feature.to_string(),
                            hypotheses: (a.to_string(), b.to_string()),
                            message: format!(
                                "edge {} asserts `{feature}` is irrelevant, but the partition for {} gives different distributions",
                                r.edge,
                                describe(&p.conditioning)
                            ),
                        });
                    }
                }
                Some(Relevance::Unequal) => {
                    let always_grouped =
                        !ps.is_empty() && ps.iter().all(|p| p.set_of(a).is_some() && p.set_of(a) == p.set_of(b));
                    if always_grouped {
                        out.push(PartitionConflict {
                            feature: feature.to_string(),
                            hypotheses: (a.to_string(), b.to_string()),
                            message: format!(
                                "edge {} asserts `{feature}` is relevant, but every partition groups {a} and {b}",
                                r.edge
                            ),
                        });
                    }
                }
                None => {}
            }
        }
    }
    out
}
