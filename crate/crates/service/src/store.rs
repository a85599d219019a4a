//! Compiled networks and live sessions, optionally mirrored to a data
//! directory so a restarted service can replay them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::http::StatusCode;
use simnet_core::api::SessionRecord;
use simnet_core::bundle::{canonical_json, compile, load_bundle, save_bundle, Compiled, CompiledModel, NetworkBundle};
use simnet_core::decision::DiagnosisPolicy;
use simnet_core::session::{LogEntry, Session};
use simnet_core::similarity::ConsistencyVerdict;
use tokio::sync::Mutex;

use crate::error::ServiceError;

/// Hex digits of the model hash used as the network id.
const NETWORK_ID_LEN: usize = 16;

pub struct NetworkEntry {
    pub id: String,
    pub hash: String,
    pub verdict: ConsistencyVerdict,
    /// `None` when the network is inconsistent.
    pub model: Option<Arc<CompiledModel>>,
}

impl NetworkEntry {
    pub fn ready(&self) -> Result<&Arc<CompiledModel>, ServiceError> {
        self.model.as_ref().ok_or_else(|| {
            ServiceError::new(
                StatusCode::CONFLICT,
                "inconsistent_network",
                format!("network `{}` is inconsistent; fix it before opening sessions", self.id),
            )
        })
    }
}

/// One session. Writers serialize on `writer`; readers take the last
/// published snapshot without waiting.
pub struct SessionSlot {
    pub id: String,
    pub network: Arc<NetworkEntry>,
    writer: Mutex<()>,
    snapshot: RwLock<Arc<Session>>,
}

impl SessionSlot {
    pub fn snapshot(&self) -> Arc<Session> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn model(&self) -> &Arc<CompiledModel> {
        self.network
            .model
            .as_ref()
            .expect("sessions only open on ready networks")
    }

    fn record(&self, s: &Session) -> SessionRecord {
        SessionRecord {
            session_id: self.id.clone(),
            network_id: self.network.id.clone(),
            model_hash: self.network.hash.clone(),
            policy: *s.policy(),
            log: s.log().to_vec(),
        }
    }
}

pub struct Store {
    networks: RwLock<BTreeMap<String, Arc<NetworkEntry>>>,
    sessions: RwLock<BTreeMap<String, Arc<SessionSlot>>>,
    next_session: AtomicU64,
    data_dir: Option<PathBuf>,
    tolerance: f64,
}

fn io_error(context: &str, e: std::io::Error) -> ServiceError {
    ServiceError::internal(format!("{context}: {e}"))
}

async fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    let tmp = path.with_extension("json.tmp");
    tokio::fs::write(&tmp, bytes)
        .await
        .map_err(|e| io_error("writing state", e))?;
    tokio::fs::rename(&tmp, path)
        .await
        .map_err(|e| io_error("publishing state", e))
}

impl Store {
    pub fn new(data_dir: Option<PathBuf>, tolerance: f64) -> Self {
        Store {
            networks: RwLock::default(),
            sessions: RwLock::default(),
            next_session: AtomicU64::new(1),
            data_dir,
            tolerance,
        }
    }

    /// Loads every persisted network and replays every persisted session.
    pub async fn open(data_dir: PathBuf, tolerance: f64) -> Result<Self, ServiceError> {
        for sub in ["networks", "sessions"] {
            tokio::fs::create_dir_all(data_dir.join(sub))
                .await
                .map_err(|e| io_error("creating data directory", e))?;
        }
        let store = Store::new(Some(data_dir.clone()), tolerance);
        for path in json_files(&data_dir.join("networks"))? {
            let bytes = tokio::fs::read(&path)
                .await
                .map_err(|e| io_error("reading network", e))?;
            store.add_network(load_bundle(&bytes)?).await?;
        }
        let mut max_seq = 0;
        for path in json_files(&data_dir.join("sessions"))? {
            let bytes = tokio::fs::read(&path)
                .await
                .map_err(|e| io_error("reading session", e))?;
            let record: SessionRecord = serde_json::from_slice(&bytes)
                .map_err(|e| ServiceError::internal(format!("{}: {e}", path.display())))?;
            let network = store.network(&record.network_id)?;
            if network.hash != record.model_hash {
                return Err(ServiceError::internal(format!(
                    "session `{}` was recorded against a different model",
                    record.session_id
                )));
            }
            let session = Session::replay(network.ready()?, record.policy, &record.log)?;
            if let Some(n) = record.session_id.strip_prefix("s").and_then(|n| n.parse::<u64>().ok()) {
                max_seq = max_seq.max(n);
            }
            store.insert_session(record.session_id, network, session);
        }
        store.next_session.store(max_seq + 1, Ordering::SeqCst);
        tracing::info!(
            networks = store.networks.read().expect("lock").len(),
            sessions = store.sessions.read().expect("lock").len(),
            "state restored"
        );
        Ok(store)
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn counts(&self) -> (usize, usize) {
        (
            self.networks.read().expect("lock").len(),
            self.sessions.read().expect("lock").len(),
        )
    }

    /// Compiles and registers `bundle`. Identical bundles share one id.
    pub async fn add_network(&self, bundle: NetworkBundle) -> Result<Arc<NetworkEntry>, ServiceError> {
        let tolerance = self.tolerance;
        let (bundle, compiled) = tokio::task::spawn_blocking(move || {
            let c = compile(&bundle, tolerance);
            (bundle, c)
        })
        .await
        .map_err(|e| ServiceError::internal(e.to_string()))?;
        let compiled = compiled?;
        let hash = compiled.hash().to_string();
        let id = hash[..NETWORK_ID_LEN].to_string();
        if let Some(existing) = self.networks.read().expect("lock").get(&id) {
            return Ok(existing.clone());
        }
        if let Some(dir) = &self.data_dir {
            write_atomic(&dir.join("networks").join(format!("{id}.json")), &save_bundle(&bundle)).await?;
        }
        let entry = Arc::new(match compiled {
            Compiled::Ready(m) => NetworkEntry {
                id: id.clone(),
                hash,
                verdict: m.verdict.clone(),
                model: Some(Arc::from(m)),
            },
            Compiled::Inconsistent { verdict, .. } => NetworkEntry {
                id: id.clone(),
                hash,
                verdict: *verdict,
                model: None,
            },
        });
        Ok(self.networks.write().expect("lock").entry(id).or_insert(entry).clone())
    }

    pub fn network(&self, id: &str) -> Result<Arc<NetworkEntry>, ServiceError> {
        self.networks
            .read()
            .expect("lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::not_found("network", id))
    }

    pub fn session(&self, id: &str) -> Result<Arc<SessionSlot>, ServiceError> {
        self.sessions
            .read()
            .expect("lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::not_found("session", id))
    }

    fn insert_session(&self, id: String, network: Arc<NetworkEntry>, session: Session) -> Arc<SessionSlot> {
        let slot = Arc::new(SessionSlot {
            id: id.clone(),
            network,
            writer: Mutex::new(()),
            snapshot: RwLock::new(Arc::new(session)),
        });
        self.sessions.write().expect("lock").insert(id, slot.clone());
        slot
    }

    async fn persist(&self, slot: &SessionSlot, s: &Session) -> Result<(), ServiceError> {
        if let Some(dir) = &self.data_dir {
            let bytes = canonical_json(&serde_json::to_value(slot.record(s)).expect("record serializes"));
            write_atomic(&dir.join("sessions").join(format!("{}.json", slot.id)), &bytes).await?;
        }
        Ok(())
    }

    /// Opens a session, replaying `log` first.
    pub async fn create_session(
        &self,
        network_id: &str,
        policy: DiagnosisPolicy,
        log: &[LogEntry],
    ) -> Result<Arc<SessionSlot>, ServiceError> {
        let network = self.network(network_id)?;
        let session = Session::replay(network.ready()?, policy, log)?;
        let id = format!("s{}", self.next_session.fetch_add(1, Ordering::SeqCst));
        let slot = self.insert_session(id, network, session);
        let snapshot = slot.snapshot();
        self.persist(&slot, &snapshot).await?;
        Ok(slot)
    }

    /// Applies one log entry. The new state is published only after it has
    /// been computed and persisted.
    pub async fn apply(&self, slot: &SessionSlot, entry: LogEntry) -> Result<Arc<Session>, ServiceError> {
        let _writer = slot.writer.lock().await;
        let mut next = (*slot.snapshot()).clone();
        next.apply(slot.model(), entry)?;
        self.persist(slot, &next).await?;
        let next = Arc::new(next);
        *slot.snapshot.write().expect("snapshot lock") = next.clone();
        Ok(next)
    }

    pub fn record(&self, slot: &SessionSlot) -> SessionRecord {
        slot.record(&slot.snapshot())
    }
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, ServiceError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_error("listing data directory", e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    Ok(out)
}
