//! Utilities in micromorts, maximum-expected-utility diagnosis, inferential
//! loss and value of clairvoyance.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{Differential, Engine, InferenceError};
use crate::model::Evidence;
use crate::similarity::SimilarityNetwork;

/// Expected utilities closer than this are ties.
pub const TIE_TOLERANCE: f64 = 1e-12;
/// Net values at or below this are not recommended.
pub const NET_EPSILON: f64 = 1e-9;
pub const DEFAULT_DOLLARS_PER_MICROMORT: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecisionError {
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("utility matrix must be {expected}x{expected}, found a row of length {found}")]
    Shape { expected: usize, found: usize },
    #[error("utility for `{disease}` is not finite")]
    NotFinite { disease: String },
    #[error("u({disease}, {disease}) is below u({disease}, {diagnosis})")]
    CorrectNotBest { disease: String, diagnosis: String },
    #[error("utility input names unknown hypothesis `{0}`")]
    UnknownHypothesis(String),
    #[error("utility input does not cover hypothesis `{0}`")]
    MissingHypothesis(String),
    #[error("hypothesis `{0}` appears in more than one utility class")]
    DuplicateHypothesis(String),
    #[error("disutility for class `{0}` is negative")]
    NegativeDisutility(String),
    #[error("feature `{0}` is already observed")]
    AlreadyObserved(String),
    #[error("cost for `{0}` is negative")]
    NegativeCost(String),
    #[error("differential does not cover hypothesis `{0}`")]
    DifferentialMismatch(String),
}

/// `entries[i][j]` is the utility of diagnosing `hypotheses[j]` when the
/// patient has `hypotheses[i]`. Utilities are nonpositive micromorts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityMatrix {
    pub hypotheses: Vec<String>,
    pub entries: Vec<Vec<f64>>,
}

/// Diseases sharing treatment and prognosis, with disutilities (positive
/// micromorts) of the decomposed outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityClass {
    pub name: String,
    pub members: Vec<String>,
    /// Loss when the disease is correctly treated.
    #[serde(default)]
    pub treated: f64,
    /// Extra loss from delaying the appropriate treatment.
    #[serde(default)]
    pub delay: f64,
    /// Loss from receiving this class's treatment without its disease.
    #[serde(default)]
    pub treatment_harm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityOverride {
    pub disease: String,
    pub diagnosis: String,
    pub utility: f64,
}

/// Accepted utility inputs: a direct matrix or the class decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UtilityInput {
    Matrix {
        hypotheses: Vec<String>,
        matrix: Vec<Vec<f64>>,
    },
    Classes {
        classes: Vec<UtilityClass>,
        #[serde(default)]
        overrides: Vec<UtilityOverride>,
    },
}

impl UtilityMatrix {
    pub fn new(hypotheses: Vec<String>, entries: Vec<Vec<f64>>) -> Result<Self, DecisionError> {
        let u = UtilityMatrix { hypotheses, entries };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<(), DecisionError> {
        let n = self.hypotheses.len();
        if self.entries.len() != n {
            return Err(DecisionError::Shape {
                expected: n,
                found: self.entries.len(),
            });
        }
        for (i, row) in self.entries.iter().enumerate() {
            if row.len() != n {
                return Err(DecisionError::Shape {
                    expected: n,
                    found: row.len(),
                });
            }
            if row.iter().any(|u| !u.is_finite()) {
                return Err(DecisionError::NotFinite {
                    disease: self.hypotheses[i].clone(),
                });
            }
            if let Some(j) = (0..n).find(|&j| row[j] > row[i] + TIE_TOLERANCE) {
                return Err(DecisionError::CorrectNotBest {
                    disease: self.hypotheses[i].clone(),
                    diagnosis: self.hypotheses[j].clone(),
                });
            }
        }
        Ok(())
    }

    /// `0` on the diagonal and `-loss` elsewhere.
    pub fn symmetric(hypotheses: &[&str], loss: f64) -> Self {
        let n = hypotheses.len();
        UtilityMatrix {
            hypotheses: hypotheses.iter().map(|s| s.to_string()).collect(),
            entries: (0..n)
                .map(|i| (0..n).map(|j| if i == j { 0.0 } else { -loss }).collect())
                .collect(),
        }
    }

    /// Expands `input` over `hypotheses`, reordering matrix rows and
    /// columns to match.
    pub fn from_input(input: &UtilityInput, hypotheses: &[String]) -> Result<Self, DecisionError> {
        let n = hypotheses.len();
        let position = |h: &str| {
            hypotheses
                .iter()
                .position(|x| x == h)
                .ok_or_else(|| DecisionError::UnknownHypothesis(h.to_string()))
        };
        let entries = match input {
            UtilityInput::Matrix {
                hypotheses: given,
                matrix,
            } => {
                if given.len() != n || matrix.len() != n {
                    if let Some(missing) = hypotheses.iter().find(|h| !given.contains(h)) {
                        return Err(DecisionError::MissingHypothesis(missing.clone()));
                    }
                    return Err(DecisionError::Shape {
                        expected: n,
                        found: matrix.len(),
                    });
                }
                let map: Vec<usize> = given.iter().map(|h| position(h)).collect::<Result<_, _>>()?;
                let mut entries = vec![vec![0.0; n]; n];
                for (gi, row) in matrix.iter().enumerate() {
                    if row.len() != n {
                        return Err(DecisionError::Shape {
                            expected: n,
                            found: row.len(),
                        });
                    }
                    for (gj, u) in row.iter().enumerate() {
                        entries[map[gi]][map[gj]] = *u;
                    }
                }
                entries
            }
            UtilityInput::Classes { classes, overrides } => {
                let mut class_of = vec![None; n];
                for (c, class) in classes.iter().enumerate() {
                    if class.treated < 0.0 || class.delay < 0.0 || class.treatment_harm < 0.0 {
                        return Err(DecisionError::NegativeDisutility(class.name.clone()));
                    }
                    for m in &class.members {
                        let i = position(m)?;
                        if class_of[i].replace(c).is_some() {
                            return Err(DecisionError::DuplicateHypothesis(m.clone()));
                        }
                    }
                }
                let class_of: Vec<usize> = class_of
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c.ok_or_else(|| DecisionError::MissingHypothesis(hypotheses[i].clone())))
                    .collect::<Result<_, _>>()?;
                let mut entries = vec![vec![0.0; n]; n];
                for i in 0..n {
                    for j in 0..n {
                        let (a, b) = (&classes[class_of[i]], &classes[class_of[j]]);
                        entries[i][j] = if class_of[i] == class_of[j] {
                            -a.treated
                        } else {
                            -(a.treated + a.delay + b.treatment_harm)
                        };
                    }
                }
                for o in overrides {
                    entries[position(&o.disease)?][position(&o.diagnosis)?] = o.utility;
                }
                entries
            }
        };
        UtilityMatrix::new(hypotheses.to_vec(), entries)
    }

    /// Posterior probabilities in this matrix's hypothesis order.
    fn align(&self, d: &Differential) -> Result<Vec<f64>, DecisionError> {
        self.hypotheses
            .iter()
            .map(|h| {
                d.probability_of(h)
                    .ok_or_else(|| DecisionError::DifferentialMismatch(h.clone()))
            })
            .collect()
    }

    fn expected_utilities(&self, p: &[f64]) -> Vec<f64> {
        let n = self.hypotheses.len();
        (0..n)
            .map(|j| (0..n).map(|i| p[i] * self.entries[i][j]).sum())
            .collect()
    }
}

/// First index within [`TIE_TOLERANCE`] of the maximum.
fn argmax(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().position(|v| *v >= max - TIE_TOLERANCE).unwrap_or(0)
}

fn best_eu(u: &UtilityMatrix, p: &[f64]) -> f64 {
    u.expected_utilities(p).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub diagnosis: String,
    pub expected_utility: f64,
}

pub fn meu_diagnosis(posterior: &Differential, u: &UtilityMatrix) -> Result<Diagnosis, DecisionError> {
    let p = u.align(posterior)?;
    let eu = u.expected_utilities(&p);
    let j = argmax(&eu);
    Ok(Diagnosis {
        diagnosis: u.hypotheses[j].clone(),
        expected_utility: eu[j],
    })
}

/// Whether diagnoses are offered before one hypothesis reaches
/// `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisPolicy {
    #[serde(default)]
    pub allow_uncertain: bool,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    1.0
}

impl Default for DiagnosisPolicy {
    fn default() -> Self {
        DiagnosisPolicy {
            allow_uncertain: false,
            threshold: default_threshold(),
        }
    }
}

/// MEU diagnosis subject to `policy`; `None` while no hypothesis is
/// confident enough.
pub fn diagnose(
    posterior: &Differential,
    u: &UtilityMatrix,
    policy: &DiagnosisPolicy,
) -> Result<Option<Diagnosis>, DecisionError> {
    let top = posterior.probabilities.iter().copied().fold(0.0, f64::max);
    if policy.allow_uncertain || top >= policy.threshold - TIE_TOLERANCE {
        meu_diagnosis(posterior, u).map(Some)
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferentialLoss {
    pub loss: f64,
    pub gold_diagnosis: String,
    pub model_diagnosis: String,
}

/// Expected-utility shortfall, under the gold distribution, of acting on
/// the model's diagnosis instead of the gold one.
pub fn inferential_loss(
    gold: &Differential,
    model: &Differential,
    u: &UtilityMatrix,
) -> Result<InferentialLoss, DecisionError> {
    let pg = u.align(gold)?;
    let pm = u.align(model)?;
    let eu_gold = u.expected_utilities(&pg);
    let dx_gs = argmax(&eu_gold);
    let dx_pf = argmax(&u.expected_utilities(&pm));
    Ok(InferentialLoss {
        loss: (eu_gold[dx_gs] - eu_gold[dx_pf]).max(0.0),
        gold_diagnosis: u.hypotheses[dx_gs].clone(),
        model_diagnosis: u.hypotheses[dx_pf].clone(),
    })
}

/// Expected gain from learning `feature` before diagnosing, assuming the
/// delta property. Clamped at zero.
pub fn value_of_clairvoyance(
    engine: &Engine<'_>,
    evidence: &Evidence,
    feature: &str,
    u: &UtilityMatrix,
) -> Result<f64, DecisionError> {
    if evidence.get(feature).is_some() {
        return Err(DecisionError::AlreadyObserved(feature.to_string()));
    }
    let current = engine.posterior(evidence)?;
    let now = best_eu(u, &u.align(&current)?);
    let mut after = 0.0;
    for (pf, post) in engine.preposterior(evidence, feature)? {
        if let Some(post) = post {
            let d = Differential::new(engine.hypotheses().to_vec(), post);
            after += pf * best_eu(u, &u.align(&d)?);
        }
    }
    Ok((after - now).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    #[serde(default)]
    pub costs: BTreeMap<String, f64>,
    #[serde(default = "default_rate")]
    pub dollars_per_micromort: f64,
}

fn default_rate() -> f64 {
    DEFAULT_DOLLARS_PER_MICROMORT
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            costs: BTreeMap::new(),
            dollars_per_micromort: DEFAULT_DOLLARS_PER_MICROMORT,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), DecisionError> {
        match self.costs.iter().find(|(_, c)| **c < 0.0 || !c.is_finite()) {
            Some((f, _)) => Err(DecisionError::NegativeCost(f.clone())),
            None => Ok(()),
        }
    }

    /// Cost in micromorts; unlisted features are free.
    pub fn cost(&self, feature: &str) -> f64 {
        self.costs.get(feature).copied().unwrap_or(0.0)
    }

    pub fn to_dollars(&self, micromorts: f64) -> f64 {
        micromorts * self.dollars_per_micromort
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub feature: String,
    pub voc: f64,
    pub cost: f64,
    pub net: f64,
}

/// Unobserved features ranked by VOC minus cost, best first, ties by name.
/// Features in `skip` are known to have zero VOC and are not evaluated.
pub fn recommend_features(
    engine: &Engine<'_>,
    evidence: &Evidence,
    u: &UtilityMatrix,
    costs: &CostModel,
    limit: usize,
    skip: &BTreeSet<String>,
) -> Result<Vec<Recommendation>, DecisionError> {
    costs.validate()?;
    let mut out = Vec::new();
    for feature in engine.features() {
        if evidence.get(feature).is_some() || skip.contains(feature) {
            continue;
        }
        let voc = value_of_clairvoyance(engine, evidence, feature, u)?;
        let cost = costs.cost(feature);
        let net = voc - cost;
        if net > NET_EPSILON {
            out.push(Recommendation {
                feature: feature.to_string(),
                voc,
                cost,
                net,
            });
        }
    }
    out.sort_by(|a, b| b.net.total_cmp(&a.net).then_with(|| a.feature.cmp(&b.feature)));
    out.truncate(limit);
    Ok(out)
}

/// Features whose VOC is zero once only `surviving` hypotheses remain.
///
/// A feature qualifies when neither it nor any feature linked to it by
/// feature-to-feature arcs of the global map appears in a local map of an
/// edge between surviving hypotheses, and those edges connect the
/// surviving set. A single survivor leaves nothing to discriminate, so
/// every feature qualifies. A disconnected surviving set yields nothing.
pub fn voc_shortcircuit(net: &SimilarityNetwork, surviving: &BTreeSet<String>) -> BTreeSet<String> {
    let all: BTreeSet<String> = net.variables.iter().map(|v| v.name.clone()).collect();
    if surviving.len() <= 1 {
        return all;
    }
    let maps: Vec<_> = net
        .local_maps
        .iter()
        .filter(|m| surviving.contains(m.edge.first()) && surviving.contains(m.edge.second()))
        .collect();
    let mut reached: BTreeSet<&str> = BTreeSet::new();
    let mut stack = vec![surviving.iter().next().expect("nonempty").as_str()];
    while let Some(h) = stack.pop() {
        if reached.insert(h) {
            stack.extend(maps.iter().filter(|m| m.edge.contains(h)).map(|m| m.edge.other(h)));
        }
    }
    if reached.len() != surviving.len() {
        return BTreeSet::new();
    }
    let relevant: BTreeSet<&str> = maps.iter().flat_map(|m| m.nodes.iter().map(String::as_str)).collect();
    // Features tied together by arcs in any local map share likelihood
    // factors, so one relevant member disqualifies the whole group.
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for m in &net.local_maps {
        for (a, b) in &m.arcs {
            if *a != net.distinguished && *b != net.distinguished {
                adj.entry(a).or_default().push(b);
                adj.entry(b).or_default().push(a);
            }
        }
    }
    let mut tainted: BTreeSet<&str> = BTreeSet::new();
    let mut stack: Vec<&str> = relevant.iter().copied().collect();
    while let Some(f) = stack.pop() {
        if tainted.insert(f) {
            stack.extend(adj.get(f).into_iter().flatten().copied());
        }
    }
    all.into_iter().filter(|f| !tainted.contains(f.as_str())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCase {
    #[serde(default)]
    pub name: Option<String>,
    pub evidence: Evidence,
    /// Gold-standard probabilities keyed by hypothesis.
    pub gold: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    #[serde(default)]
    pub name: Option<String>,
    pub model: Differential,
    pub loss: InferentialLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub cases: Vec<CaseResult>,
    pub mean: f64,
    /// Sample standard deviation; zero for fewer than two cases.
    pub sd: f64,
}

/// Inferential loss of the model's posterior against each case's gold
/// distribution.
pub fn evaluate_cases(
    engine: &Engine<'_>,
    u: &UtilityMatrix,
    cases: &[EvaluationCase],
) -> Result<EvaluationReport, DecisionError> {
    let hyps = engine.hypotheses().to_vec();
    let mut results = Vec::with_capacity(cases.len());
    for c in cases {
        let model = engine.posterior(&c.evidence)?;
        if let Some(extra) = c.gold.keys().find(|h| !hyps.contains(h)) {
            return Err(DecisionError::UnknownHypothesis(extra.clone()));
        }
        let gold = Differential::new(
            hyps.clone(),
            hyps.iter().map(|h| c.gold.get(h).copied().unwrap_or(0.0)).collect(),
        );
        let loss = inferential_loss(&gold, &model, u)?;
        results.push(CaseResult {
            name: c.name.clone(),
            model,
            loss,
        });
    }
    let n = results.len() as f64;
    let mean = if results.is_empty() {
        0.0
    } else {
        results.iter().map(|r| r.loss.loss).sum::<f64>() / n
    };
    let sd = if results.len() < 2 {
        0.0
    } else {
        (results.iter().map(|r| (r.loss.loss - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(EvaluationReport {
        cases: results,
        mean,
        sd,
    })
}
