//! The in-memory database and the mutations that change it.
//!
//! Every durable change is a [`Mutation`] carried by one log record. Mutations
//! are post-images: applying one never consults configuration, rules, or
//! clocks, so replay reproduces the original state exactly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::contract::{Contract, ContractManagementRule, ContractStatus};
use crate::destore::{ElementEntry, ElementKind, Registry};
use crate::error::{EscrowError, Result};
use crate::ids::{AgentId, ContractId, DataElementId, RuleId, Seq};
use crate::sharing_model::{DataflowRecord, SharingState, apply_dataflow};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: AgentId,
    pub external_id: String,
    pub name: String,
    /// Salted credential hash; `None` for agents that never log in.
    pub credential: Option<String>,
    pub registered_at: Seq,
}

/// Next unused value of each id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub agent: u64,
    pub data_element: u64,
    pub contract: u64,
    pub rule: u64,
}

impl Default for Counters {
    fn default() -> Self {
        Counters { agent: 1, data_element: 1, contract: 1, rule: 1 }
    }
}

impl Counters {
    fn raise_to(&mut self, o: &Counters) {
        self.agent = self.agent.max(o.agent);
        self.data_element = self.data_element.max(o.data_element);
        self.contract = self.contract.max(o.contract);
        self.rule = self.rule.max(o.rule);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ExecutionOutcome {
    Released { output: ElementEntry },
    PreconditionFailed { message: String },
    PostconditionFailed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommittedIntermediate {
    pub key: String,
    pub entry: ElementEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
// Externally tagged: internal tags would stringify integer map keys.
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    AgentRegistered { agent: AgentRecord },
    IdsReserved { counters: Counters },
    DataElementRegistered { entry: ElementEntry },
    ContentStored { de: DataElementId, len: u64 },
    /// Carries the contract as created, with rule-decided slots filled in.
    ContractProposed { contract: Contract },
    ContractApproved { contract: ContractId, agent: AgentId },
    ContractDenied { contract: ContractId, agent: AgentId, reason: String },
    ContractWithdrawn { contract: ContractId, agent: AgentId },
    RuleRegistered { rule: ContractManagementRule },
    ExecutionCommitted {
        contract: ContractId,
        caller: AgentId,
        outcome: ExecutionOutcome,
        intermediates: Vec<CommittedIntermediate>,
    },
    ShortCircuitRecorded { contract: ContractId, caller: AgentId, offending: DataElementId },
}

/// An entity a mutation reads or writes. Replay defers every mutation that
/// touches an entity already touched by a deferred one.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Entity {
    DataElement(DataElementId),
    Contract(ContractId),
    Rule(RuleId),
    IntermediateKey(String),
}

impl Mutation {
    pub fn touches(&self) -> Vec<Entity> {
        use Entity as E;
        match self {
            Mutation::AgentRegistered { .. }
            | Mutation::IdsReserved { .. }
            | Mutation::ShortCircuitRecorded { .. } => vec![],
            Mutation::DataElementRegistered { entry } => vec![E::DataElement(entry.id())],
            Mutation::ContentStored { de, .. } => vec![E::DataElement(*de)],
            Mutation::ContractProposed { contract } => std::iter::once(E::Contract(contract.id))
                .chain(contract.data_elements.iter().map(|d| E::DataElement(*d)))
                .collect(),
            Mutation::ContractApproved { contract, .. }
            | Mutation::ContractDenied { contract, .. }
            | Mutation::ContractWithdrawn { contract, .. } => vec![E::Contract(*contract)],
            Mutation::RuleRegistered { rule } => vec![E::Rule(rule.id)],
            Mutation::ExecutionCommitted { contract, outcome, intermediates, .. } => {
                let mut v = vec![E::Contract(*contract)];
                if let ExecutionOutcome::Released { output } = outcome {
                    v.push(E::DataElement(output.id()));
                    v.extend(output.record.provenance.iter().map(|d| E::DataElement(*d)));
                }
                for i in intermediates {
                    v.push(E::IntermediateKey(i.key.clone()));
                    v.push(E::DataElement(i.entry.id()));
                    v.extend(i.entry.record.provenance.iter().map(|d| E::DataElement(*d)));
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    AgentRegistered,
    DataElementRegistered,
    ContentUploaded,
    ContractProposed,
    ContractApproved,
    ContractDenied,
    ContractWithdrawn,
    RuleRegistered,
    OutputReleased,
    PreconditionFailed,
    PostconditionFailed,
    ShortCircuit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: Seq,
    pub kind: AuditKind,
    pub actor: AgentId,
    #[serde(default)]
    pub contract: Option<ContractId>,
    #[serde(default)]
    pub data_element: Option<DataElementId>,
    #[serde(default)]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EscrowState {
    pub agents: BTreeMap<AgentId, AgentRecord>,
    pub registry: Registry,
    pub contracts: BTreeMap<ContractId, Contract>,
    pub rules: BTreeMap<RuleId, ContractManagementRule>,
    pub intermediates: BTreeMap<String, DataElementId>,
    pub sharing: SharingState,
    /// Ordered by timestamp.
    pub dataflows: Vec<DataflowRecord>,
    /// Ordered by seq.
    pub audit: Vec<AuditEvent>,
    pub counters: Counters,
}

impl EscrowState {
    pub fn agent_by_external_id(&self, external_id: &str) -> Option<&AgentRecord> {
        self.agents.values().find(|a| a.external_id == external_id)
    }

    pub fn contract(&self, id: ContractId) -> Result<&Contract> {
        self.contracts.get(&id).ok_or(EscrowError::UnknownContract(id))
    }

    fn contract_mut(&mut self, id: ContractId) -> Result<&mut Contract> {
        self.contracts.get_mut(&id).ok_or(EscrowError::UnknownContract(id))
    }

    fn audit(&mut self, ev: AuditEvent) {
        let at = self.audit.partition_point(|e| e.seq <= ev.seq);
        self.audit.insert(at, ev);
    }

    fn add_entry(&mut self, entry: ElementEntry) -> Result<()> {
        let id = entry.id();
        if self.registry.contains(id) {
            return Err(EscrowError::InvalidArgument(format!("{id} registered twice")));
        }
        if let Some(p) = entry.record.provenance.iter().find(|p| !self.registry.contains(**p)) {
            return Err(EscrowError::UnknownDataElement(*p));
        }
        let holder = match entry.kind {
            ElementKind::Uploaded => Some(entry.owner()),
            _ => None,
        };
        if let Some(h) = holder
            && !self.agents.contains_key(&h) {
                return Err(EscrowError::UnknownAgent(h));
            }
        if !matches!(entry.kind, ElementKind::Output { .. }) {
            self.sharing.add_element(id, holder)?;
        }
        self.registry.insert(entry);
        Ok(())
    }

    /// Applies `m`, logged at `seq`. On error the state is unchanged.
    pub fn apply(&mut self, seq: Seq, actor: AgentId, m: &Mutation) -> Result<()> {
        let ev = |kind, contract, de, detail| AuditEvent {
            seq,
            kind,
            actor,
            contract,
            data_element: de,
            detail,
        };
        match m {
            Mutation::AgentRegistered { agent } => {
                if self.agents.contains_key(&agent.id) {
                    return Err(EscrowError::InvalidArgument(format!("{} registered twice", agent.id)));
                }
                self.agents.insert(agent.id, agent.clone());
                self.counters.agent = self.counters.agent.max(agent.id.0 + 1);
                self.sharing.add_agent(agent.id);
                self.audit(ev(AuditKind::AgentRegistered, None, None, Some(agent.external_id.clone())));
            }
            Mutation::IdsReserved { counters } => self.counters.raise_to(counters),
            Mutation::DataElementRegistered { entry } => {
                self.add_entry(entry.clone())?;
                self.audit(ev(AuditKind::DataElementRegistered, None, Some(entry.id()), None));
            }
            Mutation::ContentStored { de, len } => {
                let e = self.registry.get_mut(*de).ok_or(EscrowError::UnknownDataElement(*de))?;
                e.content_len = Some(*len);
                self.audit(ev(AuditKind::ContentUploaded, None, Some(*de), None));
            }
            Mutation::ContractProposed { contract } => {
                if self.contracts.contains_key(&contract.id) {
                    return Err(EscrowError::InvalidArgument(format!("{} proposed twice", contract.id)));
                }
                if let Some(d) = contract.data_elements.iter().find(|d| !self.registry.contains(**d)) {
                    return Err(EscrowError::UnknownDataElement(*d));
                }
                self.contracts.insert(contract.id, contract.clone());
                self.audit(ev(AuditKind::ContractProposed, Some(contract.id), None, None));
            }
            Mutation::ContractApproved { contract, agent } => {
                self.contract_mut(*contract)?.approve(*agent, seq)?;
                self.audit(ev(AuditKind::ContractApproved, Some(*contract), None, None));
            }
            Mutation::ContractDenied { contract, agent, reason } => {
                self.contract_mut(*contract)?.deny(*agent, seq, reason.clone())?;
                self.audit(ev(AuditKind::ContractDenied, Some(*contract), None, Some(reason.clone())));
            }
            Mutation::ContractWithdrawn { contract, agent } => {
                self.contract_mut(*contract)?.withdraw(*agent)?;
                self.audit(ev(AuditKind::ContractWithdrawn, Some(*contract), None, None));
            }
            Mutation::RuleRegistered { rule } => {
                if self.rules.contains_key(&rule.id) {
                    return Err(EscrowError::InvalidArgument(format!("{} registered twice", rule.id)));
                }
                self.rules.insert(rule.id, rule.clone());
                self.audit(ev(AuditKind::RuleRegistered, None, None, Some(rule.id.to_string())));
            }
            Mutation::ExecutionCommitted { contract, caller, outcome, intermediates } => {
                self.apply_execution(seq, *contract, *caller, outcome, intermediates)?;
                let (kind, de, detail) = match outcome {
                    ExecutionOutcome::Released { output } => (AuditKind::OutputReleased, Some(output.id()), None),
                    ExecutionOutcome::PreconditionFailed { message } => {
                        (AuditKind::PreconditionFailed, None, Some(message.clone()))
                    }
                    ExecutionOutcome::PostconditionFailed { message } => {
                        (AuditKind::PostconditionFailed, None, Some(message.clone()))
                    }
                };
                self.audit(ev(kind, Some(*contract), de, detail));
            }
            Mutation::ShortCircuitRecorded { contract, caller, offending } => {
                self.audit(AuditEvent {
                    seq,
                    kind: AuditKind::ShortCircuit,
                    actor: *caller,
                    contract: Some(*contract),
                    data_element: Some(*offending),
                    detail: None,
                });
            }
        }
        Ok(())
    }

    fn apply_execution(
        &mut self,
        seq: Seq,
        contract: ContractId,
        caller: AgentId,
        outcome: &ExecutionOutcome,
        intermediates: &[CommittedIntermediate],
    ) -> Result<()> {
        // Validate everything before touching state.
        let c = self.contract(contract)?;
        if c.status() != ContractStatus::Approved {
            return Err(EscrowError::ContractClosed(contract));
        }
        let function = c.function.clone();
        let des = c.data_elements.clone();
        let mut next = self.clone();
        for i in intermediates {
            next.add_entry(i.entry.clone())?;
            next.intermediates.insert(i.key.clone(), i.entry.id());
        }
        if let ExecutionOutcome::Released { output } = outcome {
            let id = output.id();
            let dest: BTreeSet<AgentId> = [caller].into();
            next.sharing = apply_dataflow(&next.sharing, &dest, &des, &function, id)?;
            next.add_entry(output.clone())?;
            next.contract_mut(contract)?.record_use()?;
            let rec = DataflowRecord {
                dest_agents: dest,
                src_elements: des,
                function,
                produced: id,
                timestamp: seq,
            };
            let at = next.dataflows.partition_point(|d| d.timestamp <= seq);
            next.dataflows.insert(at, rec);
        }
        *self = next;
        Ok(())
    }
}
