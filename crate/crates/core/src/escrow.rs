//! The escrow instance: one data directory, one log, one sharing program.
//!
//! Data directory layout:
//!
//! ```text
//! LOCK            held for the lifetime of the instance
//! escrow.wal      encrypted write-ahead log
//! escrow.ckpt     encrypted checkpoint (optional)
//! blobs/          encrypted element content, one file per element
//! ```
//!
//! Every log record is sealed under the escrow key. Records made on behalf of
//! an agent additionally carry their mutation sealed under that agent's key,
//! so replay can tell which entities a record touches before the agent's key
//! is available, and defer exactly the records that depend on it.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions, TryLockError};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, RwLock};
use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};
use sha2::{Digest, Sha256};

use crate::contract::{
    ApprovalState, ArgPattern, ArgSpec, Args, Contract, ContractManagementRule, ContractStatus, Proposal,
    RuleDecision, RuleMatcher, canonicalize, canonicalize_args, evaluate_rules,
};
use crate::destore::{
    BackendKind, Backends, BlobStore, DataElementRecord, ElementEntry, ElementKind, OUTPUT_TYPE,
    ProvenanceClosure, Registry, blob_aad,
};
use crate::error::{EscrowError, Result};
use crate::ids::{AgentId, ContractId, DataElementId, RuleId, Seq};
use crate::runtime::{
    CallOutcome, ContractFn, ContractOutcome, EndpointHost, Enforcement, ExecutionContext, ExecutionResult,
    ExecutionTiming, FunctionBody, FunctionKind, FunctionRef, ReleaseOutcome, SharingProgram,
};
use crate::sharing_model::{DataflowRecord, SharingState};
use crate::state::{
    AgentRecord, AuditEvent, AuditKind, CommittedIntermediate, Counters, Entity, EscrowState, ExecutionOutcome,
    Mutation,
};
use crate::vault::checkpoint::{read_checkpoint, write_checkpoint};
use crate::vault::ewal::first_seq_on_disk;
use crate::vault::{Ewal, SymmetricKey, SyncMode, VolatileKeyManager, cipher};

pub const WAL_FILE: &str = "escrow.wal";
pub const CHECKPOINT_FILE: &str = "escrow.ckpt";
pub const BLOB_DIR: &str = "blobs";
pub const LOCK_FILE: &str = "LOCK";

#[derive(Debug, Clone)]
pub struct EscrowConfig {
    pub data_dir: PathBuf,
    /// Escrow-internal key. Supplied by the operator at every start and never
    /// written to the data directory.
    pub system_key: SymmetricKey,
    pub sync: SyncMode,
    /// External ids of agents added as source agents of every contract.
    pub mandatory_approvers: Vec<String>,
    /// External ids of agents allowed to read the audit log.
    pub auditors: Vec<String>,
    pub enforcement: Enforcement,
    pub backends: Backends,
}

impl EscrowConfig {
    pub fn new(data_dir: impl Into<PathBuf>, system_key: SymmetricKey) -> Self {
        EscrowConfig {
            data_dir: data_dir.into(),
            system_key,
            sync: SyncMode::default(),
            mandatory_approvers: Vec::new(),
            auditors: Vec::new(),
            enforcement: Enforcement::default(),
            backends: Backends::default(),
        }
    }
}

/// Where an injected crash strikes, relative to the log append of the
/// targeted commit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    BeforeAppend,
    /// Half the record reaches the file.
    TornAppend,
    /// The record is durable; the caller never hears back.
    AfterAppend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrashPlan {
    /// Zero-based index of the commit that crashes.
    pub at_commit: u64,
    pub point: CrashPoint,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub checkpoint_seq: Option<Seq>,
    pub log_records: usize,
    pub replayed: usize,
    pub deferred: usize,
    pub torn_tail_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverableEntry {
    pub id: DataElementId,
    pub owner: AgentId,
    #[serde(rename = "type")]
    pub type_tag: String,
    pub has_content: bool,
}

mod b64 {
    use base64::Engine;
    use base64::engine::general_purpose::STANDARD;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LogBody {
    Plain(Mutation),
    Sealed(#[serde(with = "b64")] Vec<u8>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogEntry {
    touches: Vec<Entity>,
    body: LogBody,
}

#[derive(Debug)]
struct Deferred {
    seq: Seq,
    agent: AgentId,
    entry: LogEntry,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    /// JSON lines, one element record each.
    registry: String,
    elements: Vec<(DataElementId, ElementKind, Option<u64>)>,
    state: EscrowState,
}

fn sealed_aad(seq: Seq, agent: AgentId) -> [u8; 16] {
    let mut a = [0u8; 16];
    a[..8].copy_from_slice(&seq.to_le_bytes());
    a[8..].copy_from_slice(&agent.0.to_le_bytes());
    a
}

fn open_sealed(key: &SymmetricKey, seq: Seq, agent: AgentId, ct: &[u8]) -> Result<Mutation> {
    let pt = cipher::decrypt_blob(key, ct, &sealed_aad(seq, agent)).map_err(|_| EscrowError::KeyMismatch(agent))?;
    serde_json::from_slice(&pt).map_err(|e| EscrowError::CorruptLog { seq, reason: e.to_string() })
}

pub fn hash_credential(secret: &str) -> String {
    let mut salt = [0u8; 16];
    rand::rngs::OsRng.fill_bytes(&mut salt);
    let salt = hex::encode(salt);
    format!("sha256${salt}${}", hex::encode(Sha256::digest(format!("{salt}{secret}"))))
}

pub fn verify_credential(stored: &str, secret: &str) -> bool {
    let mut parts = stored.splitn(3, '$');
    match (parts.next(), parts.next(), parts.next()) {
        (Some("sha256"), Some(salt), Some(hash)) => {
            hex::encode(Sha256::digest(format!("{salt}{secret}"))) == hash
        }
        _ => false,
    }
}

struct Inner {
    wal: Ewal,
    state: EscrowState,
    deferred: Vec<Deferred>,
    blocked: BTreeSet<Entity>,
    crash: Option<CrashPlan>,
    commits: u64,
    crashed: bool,
}

pub struct Escrow {
    config: EscrowConfig,
    keys: VolatileKeyManager,
    blobs: BlobStore,
    program: SharingProgram,
    inner: Mutex<Inner>,
    enforcement: RwLock<Enforcement>,
    recovery: RecoveryReport,
    _lock: File,
}

impl std::fmt::Debug for Escrow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Escrow")
            .field("data_dir", &self.config.data_dir)
            .field("program", &self.program.name)
            .finish_non_exhaustive()
    }
}

impl Escrow {
    /// Opens the data directory, restores the checkpoint, and replays the log.
    /// Records of agents whose keys are not yet submitted stay deferred.
    pub fn open(config: EscrowConfig, program: SharingProgram) -> Result<Self> {
        let dir = config.data_dir.clone();
        fs::create_dir_all(&dir)?;
        let lock = OpenOptions::new().create(true).write(true).truncate(false).open(dir.join(LOCK_FILE))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(EscrowError::Locked),
            Err(TryLockError::Error(e)) => return Err(e.into()),
        }
        let keys = VolatileKeyManager::new();
        keys.insert(AgentId::SYSTEM, config.system_key.clone());
        let blobs = BlobStore::open(&dir.join(BLOB_DIR))?;

        let mut report = RecoveryReport::default();
        let ckpt_path = dir.join(CHECKPOINT_FILE);
        let (state, upto) = match read_checkpoint(&ckpt_path, &config.system_key)? {
            Some(c) => {
                report.checkpoint_seq = Some(c.upto_seq);
                (restore_snapshot(&c.snapshot)?, c.upto_seq)
            }
            None => (EscrowState::default(), 0),
        };
        let wal_path = dir.join(WAL_FILE);
        if first_seq_on_disk(&wal_path)?.is_some_and(|s| s <= upto) {
            // Crash between checkpoint rename and log reset: the log is covered.
            OpenOptions::new().write(true).open(&wal_path)?.set_len(0)?;
        }
        let (wal, scan) = Ewal::open(&wal_path, upto + 1, config.sync)?;
        report.log_records = scan.records.len();
        report.torn_tail_bytes = scan.torn_tail_bytes;

        let mut deferred = Vec::with_capacity(scan.records.len());
        for rec in scan.records {
            let pt = rec.open(&config.system_key).map_err(|_| EscrowError::CorruptLog {
                seq: rec.seq,
                reason: "record failed authentication".into(),
            })?;
            let entry: LogEntry = serde_json::from_slice(&pt)
                .map_err(|e| EscrowError::CorruptLog { seq: rec.seq, reason: e.to_string() })?;
            deferred.push(Deferred { seq: rec.seq, agent: rec.agent, entry });
        }
        let mut inner = Inner {
            wal,
            state,
            deferred,
            blocked: BTreeSet::new(),
            crash: None,
            commits: 0,
            crashed: false,
        };
        let escrow_keys = &keys;
        report.replayed = replay_deferred(escrow_keys, &mut inner)?;
        report.deferred = inner.deferred.len();
        if report.torn_tail_bytes > 0 || report.log_records > 0 {
            log::info!(
                "recovered {} records ({} deferred, {} torn bytes dropped)",
                report.log_records,
                report.deferred,
                report.torn_tail_bytes
            );
        }
        Ok(Escrow {
            enforcement: RwLock::new(config.enforcement),
            config,
            keys,
            blobs,
            program,
            inner: Mutex::new(inner),
            recovery: report,
            _lock: lock,
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub(crate) fn with_state<R>(&self, f: impl FnOnce(&EscrowState) -> R) -> R {
        f(&self.lock().state)
    }

    pub fn program(&self) -> &SharingProgram {
        &self.program
    }

    pub fn data_dir(&self) -> &Path {
        &self.config.data_dir
    }

    pub fn recovery_report(&self) -> &RecoveryReport {
        &self.recovery
    }

    /// Copy of the whole in-memory database.
    pub fn state(&self) -> EscrowState {
        self.lock().state.clone()
    }

    pub fn sharing_state(&self) -> SharingState {
        self.lock().state.sharing.clone()
    }

    pub fn dataflows(&self) -> Vec<DataflowRecord> {
        self.lock().state.dataflows.clone()
    }

    pub fn deferred_records(&self) -> usize {
        self.lock().deferred.len()
    }

    pub fn set_enforcement(&self, mode: Enforcement) {
        *self.enforcement.write().unwrap_or_else(|p| p.into_inner()) = mode;
    }

    pub fn enforcement(&self) -> Enforcement {
        *self.enforcement.read().unwrap_or_else(|p| p.into_inner())
    }

    /// Arms a fault: the targeted commit crashes the instance, and every
    /// later operation fails with [`EscrowError::Crashed`].
    #[doc(hidden)]
    pub fn inject_crash(&self, plan: CrashPlan) {
        let mut inner = self.lock();
        inner.crash = Some(plan);
        inner.commits = 0;
    }

    pub fn is_crashed(&self) -> bool {
        self.lock().crashed
    }

    fn commit(&self, inner: &mut Inner, actor: AgentId, m: Mutation) -> Result<Seq> {
        if inner.crashed {
            return Err(EscrowError::Crashed);
        }
        let touches = m.touches();
        if touches.iter().any(|t| inner.blocked.contains(t)) {
            return Err(EscrowError::PendingReplay);
        }
        let seq = inner.wal.next_seq();
        let body = if actor.is_system() {
            LogBody::Plain(m.clone())
        } else {
            let key = self.keys.require(actor)?;
            let pt = serde_json::to_vec(&m).expect("mutations serialize");
            LogBody::Sealed(cipher::encrypt_blob(&key, &pt, &sealed_aad(seq, actor)))
        };
        let bytes = serde_json::to_vec(&LogEntry { touches, body }).expect("log entries serialize");
        let sys = &self.config.system_key;
        if let Some(plan) = inner.crash
            && inner.commits == plan.at_commit {
                match plan.point {
                    CrashPoint::BeforeAppend => {}
                    CrashPoint::TornAppend => inner.wal.append_torn(actor, sys, &bytes, bytes.len() / 2 + 10)?,
                    CrashPoint::AfterAppend => {
                        let seq = inner.wal.append(actor, sys, &bytes)?;
                        inner.state.apply(seq, actor, &m)?;
                    }
                }
                inner.crashed = true;
                return Err(EscrowError::Crashed);
            }
        inner.commits += 1;
        let seq = inner.wal.append(actor, sys, &bytes)?;
        if let Err(e) = inner.state.apply(seq, actor, &m) {
            log::error!("logged mutation at seq {seq} failed to apply: {e}");
            return Err(e);
        }
        Ok(seq)
    }

    fn reserve(&self, inner: &mut Inner, pick: impl FnOnce(&mut Counters) -> &mut u64) -> Result<u64> {
        if inner.crashed {
            return Err(EscrowError::Crashed);
        }
        let mut c = inner.state.counters;
        let slot = pick(&mut c);
        let id = *slot;
        *slot += 1;
        self.commit(inner, AgentId::SYSTEM, Mutation::IdsReserved { counters: c })?;
        Ok(id)
    }

    pub(crate) fn reserve_element_id(&self) -> Result<DataElementId> {
        let mut inner = self.lock();
        Ok(DataElementId(self.reserve(&mut inner, |c| &mut c.data_element)?))
    }

    fn require_agent(state: &EscrowState, agent: AgentId) -> Result<()> {
        if state.agents.contains_key(&agent) { Ok(()) } else { Err(EscrowError::UnknownAgent(agent)) }
    }

    // ---- agents and keys ----

    pub fn register_agent(&self, external_id: &str, name: &str, secret: Option<&str>) -> Result<AgentId> {
        if external_id.is_empty() {
            return Err(EscrowError::InvalidArgument("external id must not be empty".into()));
        }
        let mut inner = self.lock();
        if inner.state.agent_by_external_id(external_id).is_some() {
            return Err(EscrowError::DuplicateExternalId(external_id.to_string()));
        }
        let id = AgentId(inner.state.counters.agent);
        let agent = AgentRecord {
            id,
            external_id: external_id.to_string(),
            name: name.to_string(),
            credential: secret.map(hash_credential),
            registered_at: inner.wal.next_seq(),
        };
        self.commit(&mut inner, AgentId::SYSTEM, Mutation::AgentRegistered { agent })?;
        Ok(id)
    }

    pub fn login(&self, external_id: &str, secret: &str) -> Result<AgentId> {
        let inner = self.lock();
        match inner.state.agent_by_external_id(external_id) {
            Some(a) if a.credential.as_deref().is_some_and(|c| verify_credential(c, secret)) => Ok(a.id),
            _ => Err(EscrowError::BadCredentials),
        }
    }

    pub fn agent_id(&self, external_id: &str) -> Option<AgentId> {
        self.lock().state.agent_by_external_id(external_id).map(|a| a.id)
    }

    pub fn has_key(&self, agent: AgentId) -> bool {
        self.keys.contains(agent)
    }

    /// Installs `agent`'s key and replays log records that were waiting for it.
    /// A key that fails to open the agent's existing log records or content is
    /// rejected.
    pub fn submit_key(&self, agent: AgentId, key: SymmetricKey) -> Result<()> {
        if agent.is_system() {
            return Err(EscrowError::InvalidArgument("the escrow key is not submitted by agents".into()));
        }
        let mut inner = self.lock();
        if inner.crashed {
            return Err(EscrowError::Crashed);
        }
        Self::require_agent(&inner.state, agent)?;
        if let Some(existing) = self.keys.get(agent) {
            return if existing == key { Ok(()) } else { Err(EscrowError::KeyMismatch(agent)) };
        }
        let probe = inner.deferred.iter().find_map(|d| match &d.entry.body {
            LogBody::Sealed(ct) if d.agent == agent => Some((d.seq, ct)),
            _ => None,
        });
        if let Some((seq, ct)) = probe {
            open_sealed(&key, seq, agent, ct)?;
        } else if let Some(e) = inner.state.registry.iter().find(|e| {
            e.owner() == agent
                && e.content_len.is_some()
                && self.config.backends.kind(&e.record.type_tag).ok() == Some(BackendKind::File)
        }) {
            let blob = self.blobs.get(BackendKind::File, e.id())?;
            cipher::decrypt_blob(&key, &blob, &blob_aad(e.id())).map_err(|_| EscrowError::KeyMismatch(agent))?;
        }
        self.keys.insert(agent, key);
        let applied = replay_deferred(&self.keys, &mut inner)?;
        if applied > 0 {
            log::info!("replayed {applied} deferred records after key submission by {agent}");
        }
        Ok(())
    }

    // ---- data elements ----

    pub fn register_data_element(
        &self,
        owner: AgentId,
        type_tag: &str,
        access_parameters: Value,
        discoverable: bool,
    ) -> Result<DataElementId> {
        self.config.backends.validate(type_tag, &access_parameters)?;
        let mut inner = self.lock();
        Self::require_agent(&inner.state, owner)?;
        self.keys.require(owner)?;
        let id = DataElementId(self.reserve(&mut inner, |c| &mut c.data_element)?);
        let entry = ElementEntry {
            record: DataElementRecord {
                id,
                owner,
                type_tag: type_tag.to_string(),
                access_parameters,
                discoverable,
                provenance: BTreeSet::new(),
            },
            kind: ElementKind::Uploaded,
            content_len: None,
        };
        self.commit(&mut inner, owner, Mutation::DataElementRegistered { entry })?;
        Ok(id)
    }

    pub fn upload_data_element(&self, owner: AgentId, de: DataElementId, content: &[u8]) -> Result<()> {
        let mut inner = self.lock();
        let e = inner.state.registry.get(de).ok_or(EscrowError::UnknownDataElement(de))?;
        if e.owner() != owner || e.kind != ElementKind::Uploaded {
            return Err(EscrowError::NotOwner { agent: owner, de });
        }
        let kind = self.config.backends.kind(&e.record.type_tag)?;
        if kind == BackendKind::Remote {
            return Err(EscrowError::UnsupportedType(e.record.type_tag.clone()));
        }
        if inner.crashed {
            return Err(EscrowError::Crashed);
        }
        if inner.blocked.contains(&Entity::DataElement(de)) {
            return Err(EscrowError::PendingReplay);
        }
        let sealed = self.keys.encrypt_blob(owner, content, &blob_aad(de))?;
        self.blobs.put(kind, de, &sealed)?;
        self.commit(&mut inner, owner, Mutation::ContentStored { de, len: content.len() as u64 })?;
        Ok(())
    }

    pub fn list_discoverable_des(&self, caller: AgentId) -> Result<Vec<DiscoverableEntry>> {
        let inner = self.lock();
        Self::require_agent(&inner.state, caller)?;
        Ok(inner
            .state
            .registry
            .iter()
            .filter(|e| e.kind == ElementKind::Uploaded && e.record.discoverable)
            .map(|e| DiscoverableEntry {
                id: e.id(),
                owner: e.owner(),
                type_tag: e.record.type_tag.clone(),
                has_content: e.content_len.is_some(),
            })
            .collect())
    }

    pub fn element(&self, de: DataElementId) -> Option<ElementEntry> {
        self.lock().state.registry.get(de).cloned()
    }

    pub fn provenance_closure(&self, de: DataElementId) -> Result<ProvenanceClosure> {
        self.lock().state.registry.closure(de)
    }

    /// Decrypted content of an element, under its owner's key.
    pub(crate) fn read_content(&self, e: &ElementEntry) -> Result<Vec<u8>> {
        let kind = self.config.backends.kind(&e.record.type_tag)?;
        if e.content_len.is_none() && kind != BackendKind::Remote {
            return Err(EscrowError::ContentMissing(e.id()));
        }
        let blob = self.blobs.get(kind, e.id())?;
        Ok(self.keys.decrypt_blob(e.owner(), &blob, &blob_aad(e.id()))?)
    }

    /// An agent's own uploaded or released content.
    pub fn fetch_own(&self, agent: AgentId, de: DataElementId) -> Result<Vec<u8>> {
        let e = self.element(de).ok_or(EscrowError::UnknownDataElement(de))?;
        if e.owner() != agent {
            return Err(EscrowError::NotOwner { agent, de });
        }
        self.read_content(&e)
    }

    // ---- contracts ----

    fn resolve_agents(state: &EscrowState, external_ids: &[String]) -> BTreeSet<AgentId> {
        external_ids
            .iter()
            .filter_map(|x| state.agent_by_external_id(x).map(|a| a.id))
            .collect()
    }

    pub fn propose_contract(&self, proposer: AgentId, mut p: Proposal) -> Result<Contract> {
        match self.program.get(&p.function).map(|f| f.fref.kind) {
            Some(FunctionKind::ContractFunction | FunctionKind::Both) => {}
            Some(_) => {
                return Err(EscrowError::InvalidArgument(format!("{:?} is not a contract function", p.function)));
            }
            None => return Err(EscrowError::UnknownFunction(p.function)),
        }
        if p.dest_agents.is_empty() || p.data_elements.is_empty() {
            return Err(EscrowError::InvalidArgument(
                "a contract needs destination agents and data elements".into(),
            ));
        }
        if let crate::contract::UseLimit::Times(0) = p.max_uses {
            return Err(EscrowError::InvalidArgument("max_uses must be positive".into()));
        }
        p.args = ArgSpec(
            p.args
                .0
                .into_iter()
                .map(|(k, pat)| {
                    let pat = match pat {
                        ArgPattern::Exact { value } => ArgPattern::Exact { value: canonicalize(&value) },
                        ArgPattern::OneOf { values } => {
                            ArgPattern::OneOf { values: values.iter().map(canonicalize).collect() }
                        }
                        other => other,
                    };
                    (k, pat)
                })
                .collect(),
        );
        let mut inner = self.lock();
        let st = &inner.state;
        Self::require_agent(st, proposer)?;
        for a in &p.dest_agents {
            Self::require_agent(st, *a)?;
        }
        for d in &p.data_elements {
            let e = st.registry.get(*d).ok_or(EscrowError::UnknownDataElement(*d))?;
            if matches!(e.kind, ElementKind::Intermediate { .. }) {
                return Err(EscrowError::InvalidArgument(format!("{d} is an escrow intermediate")));
            }
        }
        let mut src = st.registry.source_agents(&p.data_elements)?;
        src.extend(Self::resolve_agents(st, &self.config.mandatory_approvers));
        self.keys.require(proposer)?;
        let id = ContractId(self.reserve(&mut inner, |c| &mut c.contract)?);
        let at = inner.wal.next_seq();
        let mut c = Contract::new(id, proposer, p, src, at);
        for a in c.src_agents.clone() {
            match evaluate_rules(inner.state.rules.values(), a, &c) {
                Some(RuleDecision::Approve) => {
                    c.approvals.insert(a, ApprovalState::Approved { at });
                }
                Some(RuleDecision::Reject) => {
                    c.approvals.insert(a, ApprovalState::Denied { at, reason: "rejected by rule".into() });
                }
                None => {}
            }
        }
        self.commit(&mut inner, proposer, Mutation::ContractProposed { contract: c.clone() })?;
        Ok(c)
    }

    pub fn approve_contract(&self, agent: AgentId, contract: ContractId) -> Result<ContractStatus> {
        let mut inner = self.lock();
        inner.state.contract(contract)?.clone().approve(agent, 0)?;
        self.commit(&mut inner, agent, Mutation::ContractApproved { contract, agent })?;
        Ok(inner.state.contract(contract)?.status())
    }

    pub fn deny_contract(&self, agent: AgentId, contract: ContractId, reason: &str) -> Result<ContractStatus> {
        let mut inner = self.lock();
        inner.state.contract(contract)?.clone().deny(agent, 0, String::new())?;
        self.commit(&mut inner, agent, Mutation::ContractDenied { contract, agent, reason: reason.to_string() })?;
        Ok(inner.state.contract(contract)?.status())
    }

    pub fn withdraw_contract(&self, agent: AgentId, contract: ContractId) -> Result<ContractStatus> {
        let mut inner = self.lock();
        inner.state.contract(contract)?.clone().withdraw(agent)?;
        self.commit(&mut inner, agent, Mutation::ContractWithdrawn { contract, agent })?;
        Ok(inner.state.contract(contract)?.status())
    }

    pub fn contract(&self, id: ContractId) -> Result<Contract> {
        self.lock().state.contract(id).cloned()
    }

    pub fn is_executable(&self, id: ContractId) -> Result<bool> {
        Ok(self.lock().state.contract(id)?.is_executable())
    }

    /// Proposed contracts still waiting on `agent`'s decision.
    pub fn pending_contracts(&self, agent: AgentId) -> Result<Vec<Contract>> {
        let inner = self.lock();
        Self::require_agent(&inner.state, agent)?;
        Ok(inner
            .state
            .contracts
            .values()
            .filter(|c| c.status() == ContractStatus::Proposed && c.pending_for(agent))
            .cloned()
            .collect())
    }

    /// Contracts `agent` proposed, approves, or receives output from.
    pub fn contracts_for(&self, agent: AgentId) -> Vec<Contract> {
        self.lock()
            .state
            .contracts
            .values()
            .filter(|c| c.proposer == agent || c.src_agents.contains(&agent) || c.dest_agents.contains(&agent))
            .cloned()
            .collect()
    }

    pub fn register_cmr(&self, owner: AgentId, matcher: RuleMatcher, decision: RuleDecision) -> Result<RuleId> {
        let mut inner = self.lock();
        Self::require_agent(&inner.state, owner)?;
        self.keys.require(owner)?;
        let id = RuleId(self.reserve(&mut inner, |c| &mut c.rule)?);
        let rule = ContractManagementRule { id, owner, matcher, decision, created_at: inner.wal.next_seq() };
        self.commit(&mut inner, owner, Mutation::RuleRegistered { rule })?;
        Ok(id)
    }

    pub fn rules_of(&self, owner: AgentId) -> Vec<ContractManagementRule> {
        self.lock().state.rules.values().filter(|r| r.owner == owner).cloned().collect()
    }

    // ---- functions ----

    pub fn show_functions(&self) -> Vec<FunctionRef> {
        self.program.exposed()
    }

    pub fn call_function(&self, caller: AgentId, name: &str, args: &Args) -> Result<CallOutcome> {
        let t0 = Instant::now();
        self.with_state(|s| Self::require_agent(s, caller))?;
        let f = self.program.get(name).ok_or_else(|| EscrowError::UnknownFunction(name.to_string()))?;
        match &f.body {
            FunctionBody::Helper(_) => Err(EscrowError::NotCallable(name.to_string())),
            FunctionBody::Endpoint(body) => {
                let value = body(&EndpointHost::new(self, caller), args)?;
                Ok(CallOutcome::Endpoint { value })
            }
            FunctionBody::Contract(body) => {
                let body = body.clone();
                Ok(CallOutcome::Execution { result: self.execute(caller, name, &*body, args, t0)? })
            }
        }
    }

    fn execute(&self, caller: AgentId, name: &str, body: &ContractFn, args: &Args, t0: Instant) -> Result<ExecutionResult> {
        let args = canonicalize_args(args);
        let contract = self.with_state(|s| {
            let matching: Vec<&Contract> = s
                .contracts
                .values()
                .filter(|c| c.function == name && c.is_executable() && c.args.matches(&args))
                .collect();
            match matching.iter().find(|c| c.dest_agents.contains(&caller)) {
                Some(c) => Ok((*c).clone()),
                None if matching.is_empty() => Err(EscrowError::NoMatchingContract(name.to_string())),
                None => Err(EscrowError::NotDestinationAgent),
            }
        })?;
        self.keys.require(caller)?;
        let cid = contract.id;
        let des = contract.data_elements.clone();
        let mut ctx = ExecutionContext::new(self, contract, caller, self.enforcement())?;
        let setup = t0.elapsed();
        let t1 = Instant::now();
        let res = body(&mut ctx, &args);
        let compute = t1.elapsed();
        let t2 = Instant::now();

        if let Some(offending) = ctx.violation {
            log::warn!("execution of {cid} by {caller} short-circuited");
            let mut inner = self.lock();
            self.commit(
                &mut inner,
                AgentId::SYSTEM,
                Mutation::ShortCircuitRecorded { contract: cid, caller, offending },
            )?;
            return Err(EscrowError::ShortCircuited);
        }
        let warnings = std::mem::take(&mut ctx.warnings);
        let pending = std::mem::take(&mut ctx.pending);
        drop(ctx);
        let out = res?;

        let mut inner = self.lock();
        if !inner.state.contract(cid)?.is_executable() {
            return Err(EscrowError::ContractClosed(cid));
        }
        let (outcome, release, intermediates) = match out {
            ContractOutcome::PreconditionFailed(message) => (
                ExecutionOutcome::PreconditionFailed { message: message.clone() },
                ReleaseOutcome::PreconditionFailed { message },
                vec![],
            ),
            ContractOutcome::PostconditionFailed(message) => (
                ExecutionOutcome::PostconditionFailed { message: message.clone() },
                ReleaseOutcome::PostconditionFailed { message },
                vec![],
            ),
            ContractOutcome::Released(bytes) => {
                let id = DataElementId(self.reserve(&mut inner, |c| &mut c.data_element)?);
                let sealed = self.keys.encrypt_blob(caller, &bytes, &blob_aad(id))?;
                self.blobs.put(BackendKind::File, id, &sealed)?;
                let mut committed = Vec::with_capacity(pending.len());
                for p in pending {
                    let blob = self.keys.encrypt_blob(AgentId::SYSTEM, &p.bytes, &blob_aad(p.id))?;
                    self.blobs.put(BackendKind::File, p.id, &blob)?;
                    committed.push(CommittedIntermediate {
                        key: p.key.clone(),
                        entry: ElementEntry {
                            record: DataElementRecord {
                                id: p.id,
                                owner: AgentId::SYSTEM,
                                type_tag: crate::destore::INTERMEDIATE_TYPE.into(),
                                access_parameters: Value::Null,
                                discoverable: false,
                                provenance: p.provenance,
                            },
                            kind: ElementKind::Intermediate { key: p.key },
                            content_len: Some(p.bytes.len() as u64),
                        },
                    });
                }
                let output = ElementEntry {
                    record: DataElementRecord {
                        id,
                        owner: caller,
                        type_tag: OUTPUT_TYPE.into(),
                        access_parameters: json!({ "contract": cid }),
                        discoverable: false,
                        provenance: des,
                    },
                    kind: ElementKind::Output { contract: cid },
                    content_len: Some(bytes.len() as u64),
                };
                (
                    ExecutionOutcome::Released { output },
                    ReleaseOutcome::Released { output: id, sealed },
                    committed,
                )
            }
        };
        self.commit(
            &mut inner,
            caller,
            Mutation::ExecutionCommitted { contract: cid, caller, outcome, intermediates },
        )?;
        Ok(ExecutionResult {
            contract: cid,
            outcome: release,
            timing: ExecutionTiming { setup, compute, commit: t2.elapsed() },
            warnings,
        })
    }

    // ---- audit and maintenance ----

    pub fn is_auditor(&self, agent: AgentId) -> bool {
        let inner = self.lock();
        Self::resolve_agents(&inner.state, &self.config.auditors).contains(&agent)
    }

    pub fn audit(&self, viewer: AgentId) -> Result<Vec<AuditEvent>> {
        if !self.is_auditor(viewer) {
            return Err(EscrowError::NotAuditor(viewer));
        }
        Ok(self.lock().state.audit.clone())
    }

    /// Short-circuit events on contracts where `agent` is a source agent.
    pub fn short_circuit_reports(&self, agent: AgentId) -> Vec<AuditEvent> {
        let inner = self.lock();
        inner
            .state
            .audit
            .iter()
            .filter(|e| e.kind == AuditKind::ShortCircuit)
            .filter(|e| {
                e.contract
                    .and_then(|c| inner.state.contracts.get(&c))
                    .is_some_and(|c| c.src_agents.contains(&agent))
            })
            .cloned()
            .collect()
    }

    /// Writes an encrypted snapshot and empties the log.
    pub fn checkpoint(&self) -> Result<Seq> {
        let mut inner = self.lock();
        if inner.crashed {
            return Err(EscrowError::Crashed);
        }
        if !inner.deferred.is_empty() {
            return Err(EscrowError::PendingReplay);
        }
        let snapshot = take_snapshot(&inner.state);
        let upto = inner.wal.next_seq() - 1;
        write_checkpoint(&self.config.data_dir.join(CHECKPOINT_FILE), &self.config.system_key, upto, &snapshot)?;
        inner.wal.reset_after_checkpoint(upto)?;
        Ok(upto)
    }
}

/// Applies deferred records in log order. A record stays deferred while its
/// agent's key is missing or while it touches an entity that an earlier
/// deferred record touches. Returns how many records were applied.
fn replay_deferred(keys: &VolatileKeyManager, inner: &mut Inner) -> Result<usize> {
    let pending = std::mem::take(&mut inner.deferred);
    inner.blocked.clear();
    let mut applied = 0;
    for d in pending {
        let blocked = d.entry.touches.iter().any(|t| inner.blocked.contains(t));
        let m = if blocked {
            None
        } else {
            match &d.entry.body {
                LogBody::Plain(m) => Some(m.clone()),
                LogBody::Sealed(ct) => match keys.get(d.agent) {
                    Some(k) => Some(open_sealed(&k, d.seq, d.agent, ct)?),
                    None => None,
                },
            }
        };
        match m {
            Some(m) => {
                inner.state.apply(d.seq, d.agent, &m).map_err(|e| EscrowError::CorruptLog {
                    seq: d.seq,
                    reason: format!("replay failed: {e}"),
                })?;
                applied += 1;
            }
            None => {
                inner.blocked.extend(d.entry.touches.iter().cloned());
                inner.deferred.push(d);
            }
        }
    }
    Ok(applied)
}

fn take_snapshot(state: &EscrowState) -> Vec<u8> {
    let elements = state.registry.iter().map(|e| (e.id(), e.kind.clone(), e.content_len)).collect();
    let mut rest = state.clone();
    rest.registry = Registry::default();
    let snap = Snapshot { registry: state.registry.to_json_lines(), elements, state: rest };
    serde_json::to_vec(&snap).expect("snapshots serialize")
}

fn restore_snapshot(bytes: &[u8]) -> Result<EscrowState> {
    let bad = |e: String| EscrowError::BadCheckpoint(e);
    let snap: Snapshot = serde_json::from_slice(bytes).map_err(|e| bad(e.to_string()))?;
    let mut state = snap.state;
    let records = Registry::records_from_json_lines(&snap.registry).map_err(|e| bad(e.to_string()))?;
    if records.len() != snap.elements.len() {
        return Err(bad("registry and element metadata disagree".into()));
    }
    for (record, (id, kind, content_len)) in records.into_iter().zip(snap.elements) {
        if record.id != id {
            return Err(bad(format!("metadata for {id} out of order")));
        }
        state.registry.insert(ElementEntry { record, kind, content_len });
    }
    Ok(state)
}
