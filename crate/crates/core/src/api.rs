//! Request and response bodies of the HTTP API.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bundle::{CompiledModel, NetworkBundle};
use crate::decision::{DiagnosisPolicy, EvaluationCase};
use crate::inference::{Differential, InstanceWeight};
use crate::model::{Arc, Evidence, Variable};
use crate::partitions::PartitionConflict;
use crate::session::{DiagnosisOutcome, LogEntry};
use crate::similarity::ConsistencyVerdict;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCreated {
    pub network_id: String,
    pub name: String,
    pub verdict: ConsistencyVerdict,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub conflicts: Vec<PartitionConflict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphView {
    pub network_id: String,
    pub name: String,
    pub distinguished: String,
    pub hypotheses: Vec<String>,
    pub variables: Vec<Variable>,
    pub arcs: Vec<Arc>,
    pub clusters: Vec<Vec<String>>,
}

impl GraphView {
    pub fn of(network_id: &str, m: &CompiledModel) -> Self {
        let km = &m.global.map;
        let h = km.distinguished.clone().unwrap_or_default();
        GraphView {
            network_id: network_id.to_string(),
            name: m.name.clone(),
            hypotheses: km.variable(&h).map(|v| v.instances.clone()).unwrap_or_default(),
            variables: km.variables.iter().filter(|v| v.name != h).cloned().collect(),
            distinguished: h,
            arcs: km.arcs.iter().cloned().collect(),
            clusters: m.clusters.clusters.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub policy: Option<DiagnosisPolicy>,
    /// Entries replayed into the new session.
    #[serde(default)]
    pub log: Vec<LogEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub network_id: String,
    pub differential: DifferentialView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserveRequest {
    pub feature: String,
    pub instance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEntry {
    pub hypothesis: String,
    pub p: f64,
}

/// Posterior sorted most probable first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialView {
    pub posterior: Vec<PosteriorEntry>,
}

impl From<&Differential> for DifferentialView {
    fn from(d: &Differential) -> Self {
        DifferentialView {
            posterior: d
                .ranked()
                .into_iter()
                .map(|(h, p)| PosteriorEntry {
                    hypothesis: h.to_string(),
                    p,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationResponse {
    pub differential: DifferentialView,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JustificationView {
    pub feature: String,
    pub top_two: (String, String),
    pub instances: Vec<WeightView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightView {
    pub label: String,
    pub weight: crate::inference::Weight,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl From<InstanceWeight> for WeightView {
    fn from(w: InstanceWeight) -> Self {
        WeightView {
            label: w.instance,
            weight: w.weight,
            diagnostic: w.diagnostic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisView {
    /// A hypothesis label, or `withheld`.
    pub diagnosis: String,
    pub expected_utility: Option<f64>,
}

pub const WITHHELD: &str = "withheld";

impl From<DiagnosisOutcome> for DiagnosisView {
    fn from(o: DiagnosisOutcome) -> Self {
        match o {
            DiagnosisOutcome::Made(d) => DiagnosisView {
                diagnosis: d.diagnosis,
                expected_utility: Some(d.expected_utility),
            },
            DiagnosisOutcome::Withheld => DiagnosisView {
                diagnosis: WITHHELD.to_string(),
                expected_utility: None,
            },
        }
    }
}

/// Everything needed to rebuild a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub network_id: String,
    /// Hash of the bundle the log was recorded against.
    pub model_hash: String,
    pub policy: DiagnosisPolicy,
    pub log: Vec<LogEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub cases: Vec<EvaluationCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRequest {
    pub bundle: NetworkBundle,
    #[serde(default = "default_normal")]
    pub normal: String,
    #[serde(default)]
    pub priors: BTreeMap<String, f64>,
}

pub fn default_normal() -> String {
    "NORMAL".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub networks: usize,
    pub sessions: usize,
}
