//! Diagnostic session: an observation log replayed against a compiled
//! model, with the differential recomputed after every change.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::CompiledModel;
use crate::decision::{
    diagnose, recommend_features, voc_shortcircuit, DecisionError, Diagnosis, DiagnosisPolicy, Recommendation,
};
use crate::inference::{weight_of_evidence, Differential, Engine, InferenceError, InstanceWeight};
use crate::model::{Evidence, ModelError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LogEntry {
    Observe { feature: String, instance: String },
    Retract { feature: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{feature}` has no instance `{instance}`")]
    UnknownInstance { feature: String, instance: String },
    #[error("`{0}` is already observed; retract it first")]
    AlreadyObserved(String),
    #[error("`{0}` is not observed")]
    NotObserved(String),
    #[error("observation rejected: evidence is impossible under every hypothesis")]
    ImpossibleEvidence,
    #[error("the model has no utility matrix")]
    NoUtilities,
    #[error(transparent)]
    Inference(InferenceError),
    #[error(transparent)]
    Decision(DecisionError),
}

impl SessionError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::UnknownFeature(_) => "unknown_feature",
            SessionError::UnknownInstance { .. } => "unknown_instance",
            SessionError::AlreadyObserved(_) => "already_observed",
            SessionError::NotObserved(_) => "not_observed",
            SessionError::ImpossibleEvidence => "impossible_evidence",
            SessionError::NoUtilities => "no_utilities",
            SessionError::Inference(_) => "inference_error",
            SessionError::Decision(_) => "decision_error",
        }
    }
}

impl From<InferenceError> for SessionError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::ImpossibleEvidence => SessionError::ImpossibleEvidence,
            InferenceError::Model(ModelError::UnknownVariable(f)) => SessionError::UnknownFeature(f),
            InferenceError::Model(ModelError::UnknownInstance { variable, instance }) => {
                SessionError::UnknownInstance {
                    feature: variable,
                    instance,
                }
            }
            other => SessionError::Inference(other),
        }
    }
}

impl From<DecisionError> for SessionError {
    fn from(e: DecisionError) -> Self {
        match e {
            DecisionError::Inference(i) => i.into(),
            other => SessionError::Decision(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Justification {
    pub feature: String,
    pub top_two: (String, String),
    pub instances: Vec<InstanceWeight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiagnosisOutcome {
    Made(Diagnosis),
    Withheld,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    policy: DiagnosisPolicy,
    log: Vec<LogEntry>,
    evidence: Evidence,
    differential: Differential,
}

impl Session {
    pub fn open(model: &CompiledModel, policy: DiagnosisPolicy) -> Result<Self, SessionError> {
        let evidence = Evidence::new();
        let differential = Engine::new(&model.global)?.posterior(&evidence)?;
        Ok(Session {
            policy,
            log: Vec::new(),
            evidence,
            differential,
        })
    }

    /// Rebuilds a session by applying `log` from the empty state.
    pub fn replay(model: &CompiledModel, policy: DiagnosisPolicy, log: &[LogEntry]) -> Result<Self, SessionError> {
        let mut s = Session::open(model, policy)?;
        for entry in log {
            s.apply(model, entry.clone())?;
        }
        Ok(s)
    }

    pub fn policy(&self) -> &DiagnosisPolicy {
        &self.policy
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn evidence(&self) -> &Evidence {
        &self.evidence
    }

    pub fn differential(&self) -> &Differential {
        &self.differential
    }

    /// Applies one entry; on error the session is unchanged.
    pub fn apply(&mut self, model: &CompiledModel, entry: LogEntry) -> Result<&Differential, SessionError> {
        let mut evidence = self.evidence.clone();
        match &entry {
            LogEntry::Observe { feature, instance } => {
                let var = model
                    .global
                    .map
                    .variable(feature)
                    .filter(|_| model.global.map.distinguished.as_deref() != Some(feature.as_str()))
                    .ok_or_else(|| SessionError::UnknownFeature(feature.clone()))?;
                if var.instance_index(instance).is_none() {
                    return Err(SessionError::UnknownInstance {
                        feature: feature.clone(),
                        instance: instance.clone(),
                    });
                }
                if evidence.get(feature).is_some() {
                    return Err(SessionError::AlreadyObserved(feature.clone()));
                }
                evidence
                    .observe(feature, instance)
                    .map_err(|e| SessionError::Inference(e.into()))?;
            }
            LogEntry::Retract { feature } => {
                if !evidence.retract(feature) {
                    return Err(SessionError::NotObserved(feature.clone()));
                }
            }
        }
        let differential = Engine::new(&model.global)?.posterior(&evidence)?;
        self.evidence = evidence;
        self.differential = differential;
        self.log.push(entry);
        Ok(&self.differential)
    }

    pub fn observe(
        &mut self,
        model: &CompiledModel,
        feature: &str,
        instance: &str,
    ) -> Result<&Differential, SessionError> {
        self.apply(
            model,
            LogEntry::Observe {
                feature: feature.to_string(),
                instance: instance.to_string(),
            },
        )
    }

    pub fn retract(&mut self, model: &CompiledModel, feature: &str) -> Result<&Differential, SessionError> {
        self.apply(
            model,
            LogEntry::Retract {
                feature: feature.to_string(),
            },
        )
    }

    /// Most cost-effective unobserved features. Features that cannot
    /// separate the hypotheses still possible are skipped without
    /// computing their VOC.
    pub fn recommendations(&self, model: &CompiledModel, limit: usize) -> Result<Vec<Recommendation>, SessionError> {
        let u = model.utilities.as_ref().ok_or(SessionError::NoUtilities)?;
        let surviving: BTreeSet<String> = self
            .differential
            .hypotheses
            .iter()
            .zip(&self.differential.probabilities)
            .filter(|(_, p)| **p > 0.0)
            .map(|(h, _)| h.clone())
            .collect();
        let skip = voc_shortcircuit(&model.network, &surviving);
        let engine = Engine::new(&model.global)?;
        Ok(recommend_features(
            &engine,
            &self.evidence,
            u,
            &model.costs,
            limit,
            &skip,
        )?)
    }

    /// Weight of evidence of `feature` for the two leading hypotheses.
    pub fn justification(&self, model: &CompiledModel, feature: &str) -> Result<Justification, SessionError> {
        if model.global.map.variable(feature).is_none() || model.global.map.distinguished.as_deref() == Some(feature) {
            return Err(SessionError::UnknownFeature(feature.to_string()));
        }
        let ranked = self.differential.ranked();
        let top_two = (ranked[0].0.to_string(), ranked[1].0.to_string());
        let instances = weight_of_evidence(&model.global, feature, (&top_two.0, &top_two.1), &self.evidence)?;
        Ok(Justification {
            feature: feature.to_string(),
            top_two,
            instances,
        })
    }

    pub fn diagnose(&self, model: &CompiledModel) -> Result<DiagnosisOutcome, SessionError> {
        let u = model.utilities.as_ref().ok_or(SessionError::NoUtilities)?;
        Ok(match diagnose(&self.differential, u, &self.policy)? {
            Some(d) => DiagnosisOutcome::Made(d),
            None => DiagnosisOutcome::Withheld,
        })
    }
}
