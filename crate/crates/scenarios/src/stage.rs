//! Drives an escrow on behalf of a cast of agents whose keys derive from a
//! seed, and records what each step produced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use escrow_core::contract::{ArgPattern, ArgSpec, Proposal, UseLimit};
use escrow_core::runtime::{CallOutcome, ReleaseOutcome, SharingProgram, open_output};
use escrow_core::vault::{SymmetricKey, SyncMode};
use escrow_core::{AgentId, ContractId, DataElementId, Escrow, EscrowConfig};
use serde::Serialize;
use serde_json::{Value, json};
use sha2::{Digest, Sha256};

use crate::Result;

/// Key of `name` in a cast seeded by `seed`.
pub fn agent_key(seed: u64, name: &str) -> SymmetricKey {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(b"agent:");
    h.update(name.as_bytes());
    SymmetricKey::from_bytes(h.finalize().into())
}

pub fn system_key(seed: u64) -> SymmetricKey {
    agent_key(seed, "\0escrow")
}

/// What one call produced, with released bytes already opened.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum StepOutcome {
    Value { value: Value },
    Released { output: DataElementId, bytes: Vec<u8> },
    PreconditionFailed { message: String },
    PostconditionFailed { message: String },
    Error { code: String, message: String },
}

impl StepOutcome {
    pub fn released(&self) -> Option<&[u8]> {
        match self {
            StepOutcome::Released { bytes, .. } => Some(bytes),
            _ => None,
        }
    }

    pub fn message(&self) -> Option<&str> {
        match self {
            StepOutcome::PreconditionFailed { message }
            | StepOutcome::PostconditionFailed { message }
            | StepOutcome::Error { message, .. } => Some(message),
            StepOutcome::Value { value } => value.as_str(),
            StepOutcome::Released { .. } => None,
        }
    }

    pub fn error_code(&self) -> Option<&str> {
        match self {
            StepOutcome::Error { code, .. } => Some(code),
            _ => None,
        }
    }

    /// One line for logs: released payloads are summarized by size.
    pub fn summary(&self) -> String {
        match self {
            StepOutcome::Value { value } => format!("value {value}"),
            StepOutcome::Released { output, bytes } => format!("released {output} ({} bytes)", bytes.len()),
            StepOutcome::PreconditionFailed { message } => format!("precondition failed: {message}"),
            StepOutcome::PostconditionFailed { message } => format!("postcondition failed: {message}"),
            StepOutcome::Error { code, message } => format!("error {code}: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub actor: String,
    pub action: String,
    pub outcome: String,
}

pub struct Stage {
    escrow: Option<Escrow>,
    config: EscrowConfig,
    program: SharingProgram,
    seed: u64,
    names: BTreeMap<AgentId, String>,
    steps: Vec<Step>,
}

impl Stage {
    /// Opens an escrow in `dir` with the cast's system key. `tweak` adjusts
    /// the configuration (approvers, auditors, enforcement) before opening.
    pub fn open(dir: &Path, program: SharingProgram, seed: u64, tweak: impl FnOnce(&mut EscrowConfig)) -> Result<Self> {
        let mut config = EscrowConfig::new(dir, system_key(seed));
        config.sync = SyncMode::OsBuffer;
        tweak(&mut config);
        let escrow = Escrow::open(config.clone(), program.clone())?;
        Ok(Stage { escrow: Some(escrow), config, program, seed, names: BTreeMap::new(), steps: Vec::new() })
    }

    pub fn escrow(&self) -> &Escrow {
        self.escrow.as_ref().expect("escrow is open")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.config.data_dir.clone()
    }

    pub fn key(&self, agent: AgentId) -> SymmetricKey {
        agent_key(self.seed, &self.names[&agent])
    }

    /// Registers `name` and hands the escrow its key.
    pub fn agent(&mut self, name: &str) -> Result<AgentId> {
        let id = self.escrow().register_agent(name, name, Some(&format!("{name}-secret")))?;
        self.escrow().submit_key(id, agent_key(self.seed, name))?;
        self.names.insert(id, name.to_string());
        Ok(id)
    }

    pub fn name(&self, agent: AgentId) -> &str {
        &self.names[&agent]
    }

    /// Stops the escrow and starts it again from disk; every agent then
    /// reconnects and re-submits its key.
    pub fn restart(&mut self) -> Result<()> {
        drop(self.escrow.take());
        let escrow = Escrow::open(self.config.clone(), self.program.clone())?;
        for (id, name) in &self.names {
            escrow.submit_key(*id, agent_key(self.seed, name))?;
        }
        self.escrow = Some(escrow);
        Ok(())
    }

    fn log(&mut self, actor: AgentId, action: String, outcome: &StepOutcome) {
        self.steps.push(Step { actor: self.name(actor).to_string(), action, outcome: outcome.summary() });
    }

    pub fn note(&mut self, actor: AgentId, action: &str, outcome: &str) {
        self.steps.push(Step { actor: self.name(actor).to_string(), action: action.into(), outcome: outcome.into() });
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Calls `name`, opening any released output with the caller's key.
    /// Escrow errors become [`StepOutcome::Error`].
    pub fn call(&mut self, caller: AgentId, name: &str, args: Value) -> Result<StepOutcome> {
        let map = args.as_object().cloned().unwrap_or_default();
        let out = match self.escrow().call_function(caller, name, &map) {
            Ok(CallOutcome::Endpoint { value }) => StepOutcome::Value { value },
            Ok(CallOutcome::Execution { result }) => match result.outcome {
                ReleaseOutcome::Released { output, sealed } => {
                    StepOutcome::Released { output, bytes: open_output(&self.key(caller), output, &sealed)? }
                }
                ReleaseOutcome::PreconditionFailed { message } => StepOutcome::PreconditionFailed { message },
                ReleaseOutcome::PostconditionFailed { message } => StepOutcome::PostconditionFailed { message },
            },
            Err(e) => StepOutcome::Error { code: e.code().to_string(), message: e.to_string() },
        };
        self.log(caller, format!("call {name}"), &out);
        Ok(out)
    }

    /// Registers and uploads through the platform API.
    pub fn upload(&mut self, owner: AgentId, type_tag: &str, content: &[u8]) -> Result<DataElementId> {
        self.upload_with(owner, type_tag, json!({}), content)
    }

    pub fn upload_with(&mut self, owner: AgentId, type_tag: &str, params: Value, content: &[u8]) -> Result<DataElementId> {
        let de = self.escrow().register_data_element(owner, type_tag, params, true)?;
        self.escrow().upload_data_element(owner, de, content)?;
        self.note(owner, "upload", &format!("{de} ({} bytes)", content.len()));
        Ok(de)
    }

    pub fn propose(&mut self, proposer: AgentId, p: Proposal) -> Result<ContractId> {
        let function = p.function.clone();
        let c = self.escrow().propose_contract(proposer, p)?;
        self.note(proposer, &format!("propose {function}"), &format!("{} {:?}", c.id, c.status()));
        Ok(c.id)
    }

    pub fn approve(&mut self, agent: AgentId, c: ContractId) -> Result<()> {
        let st = self.escrow().approve_contract(agent, c)?;
        self.note(agent, &format!("approve {c}"), &format!("{st:?}"));
        Ok(())
    }

    /// Approves `c` on behalf of every source agent whose slot is pending.
    pub fn approve_all(&mut self, c: ContractId) -> Result<()> {
        let contract = self.escrow().contract(c)?;
        for a in contract.src_agents.iter().filter(|a| contract.pending_for(**a)) {
            self.approve(*a, c)?;
        }
        Ok(())
    }

    pub fn deny(&mut self, agent: AgentId, c: ContractId, reason: &str) -> Result<()> {
        let st = self.escrow().deny_contract(agent, c, reason)?;
        self.note(agent, &format!("deny {c}"), &format!("{st:?}"));
        Ok(())
    }

    /// Audit trail as JSON, read through the first registered auditor.
    pub fn audit_json(&self) -> Result<String> {
        let auditor = self
            .names
            .keys()
            .copied()
            .find(|a| self.escrow().is_auditor(*a))
            .ok_or_else(|| crate::ScenarioError::Script("no auditor in the cast".into()))?;
        Ok(serde_json::to_string(&self.escrow().audit(auditor)?)?)
    }
}

/// A proposal pinning every argument to the given values.
pub fn exact(function: &str, dest: &[AgentId], des: &[DataElementId], args: Value, uses: UseLimit) -> Proposal {
    let map = args.as_object().cloned().unwrap_or_default();
    Proposal {
        dest_agents: dest.iter().copied().collect(),
        data_elements: des.iter().copied().collect(),
        function: function.into(),
        args: ArgSpec::exact(&map),
        conditions: vec![],
        max_uses: uses,
    }
}

/// As [`exact`], but the listed arguments accept any value.
pub fn open_args(
    function: &str,
    dest: &[AgentId],
    des: &[DataElementId],
    pinned: Value,
    free: &[&str],
    uses: UseLimit,
) -> Proposal {
    let mut p = exact(function, dest, des, pinned, uses);
    for f in free {
        p.args.0.insert((*f).to_string(), ArgPattern::Any);
    }
    p
}
