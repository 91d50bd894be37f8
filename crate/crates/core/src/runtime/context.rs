use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Enforcement, FunctionBody};
use crate::contract::Contract;
use crate::destore::{ElementEntry, ElementKind, INTERMEDIATE_TYPE};
use crate::error::{EscrowError, Result};
use crate::escrow::Escrow;
use crate::ids::{AgentId, ContractId, DataElementId};

/// Metadata of an element a contract function may read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementInfo {
    pub id: DataElementId,
    pub owner: AgentId,
    #[serde(rename = "type")]
    pub type_tag: String,
    pub access_parameters: Value,
    pub kind: ElementKind,
}

pub(crate) struct PendingIntermediate {
    pub key: String,
    pub id: DataElementId,
    pub bytes: Vec<u8>,
    pub provenance: BTreeSet<DataElementId>,
}

/// The only door from a contract function to stored data.
///
/// Once an access outside the contract is attempted (with
/// [`Enforcement::ShortCircuit`]) every later call fails too, and nothing the
/// function produced leaves the context.
pub struct ExecutionContext<'a> {
    escrow: &'a Escrow,
    contract: Contract,
    caller: AgentId,
    enforcement: Enforcement,
    /// Non-escrow members of the closures of the contract's elements.
    covered: BTreeSet<DataElementId>,
    writer_owners: BTreeSet<AgentId>,
    access_log: Vec<DataElementId>,
    pub(crate) pending: Vec<PendingIntermediate>,
    pub(crate) violation: Option<DataElementId>,
    short_circuited: bool,
    pub(crate) warnings: Vec<String>,
}

impl<'a> ExecutionContext<'a> {
    pub(crate) fn new(escrow: &'a Escrow, contract: Contract, caller: AgentId, enforcement: Enforcement) -> Result<Self> {
        let (covered, writer_owners) = escrow.with_state(|s| -> Result<_> {
            let mut covered = BTreeSet::new();
            for d in &contract.data_elements {
                let cl = s.registry.closure(*d)?;
                covered.extend(cl.members.into_iter().filter(|m| {
                    s.registry.get(*m).is_some_and(|e| !e.owner().is_system())
                }));
            }
            let owners = s.registry.source_agents(&contract.data_elements)?;
            Ok((covered, owners))
        })?;
        Ok(ExecutionContext {
            escrow,
            contract,
            caller,
            enforcement,
            covered,
            writer_owners,
            access_log: Vec::new(),
            pending: Vec::new(),
            violation: None,
            short_circuited: false,
            warnings: Vec::new(),
        })
    }

    pub fn caller(&self) -> AgentId {
        self.caller
    }

    pub fn contract_id(&self) -> ContractId {
        self.contract.id
    }

    pub fn is_short_circuited(&self) -> bool {
        self.short_circuited
    }

    /// Distinct elements read so far, in first-read order.
    pub fn access_log(&self) -> &[DataElementId] {
        &self.access_log
    }

    fn guard(&self) -> Result<()> {
        if self.short_circuited { Err(EscrowError::ShortCircuited) } else { Ok(()) }
    }

    fn refuse(&mut self, de: DataElementId) -> Result<()> {
        self.violation.get_or_insert(de);
        match self.enforcement {
            Enforcement::ShortCircuit => {
                self.short_circuited = true;
                Err(EscrowError::ShortCircuited)
            }
            Enforcement::DeferredCheck => Ok(()),
        }
    }

    fn log_access(&mut self, de: DataElementId) {
        if !self.access_log.contains(&de) {
            self.access_log.push(de);
        }
    }

    /// An element is readable when the contract names it, or when it is an
    /// intermediate derived only from data the contract covers.
    fn readable(&self, entry: &ElementEntry) -> Result<bool> {
        if self.contract.data_elements.contains(&entry.id()) {
            return Ok(true);
        }
        if !matches!(entry.kind, ElementKind::Intermediate { .. }) {
            return Ok(false);
        }
        let members = self.escrow.with_state(|s| s.registry.closure(entry.id()))?.members;
        Ok(self.escrow.with_state(|s| {
            members.iter().all(|m| {
                s.registry.get(*m).is_some_and(|e| e.owner().is_system()) || self.covered.contains(m)
            })
        }))
    }

    /// The elements named by the contract, ascending.
    pub fn get_all_accessible_des(&self) -> Result<Vec<DataElementId>> {
        self.guard()?;
        Ok(self.contract.data_elements.iter().copied().collect())
    }

    pub fn element(&mut self, de: DataElementId) -> Result<ElementInfo> {
        self.guard()?;
        if let Some(p) = self.pending.iter().find(|p| p.id == de) {
            return Ok(ElementInfo {
                id: de,
                owner: AgentId::SYSTEM,
                type_tag: INTERMEDIATE_TYPE.into(),
                access_parameters: Value::Null,
                kind: ElementKind::Intermediate { key: p.key.clone() },
            });
        }
        let entry = self.lookup(de)?;
        if !self.readable(&entry)? {
            self.refuse(de)?;
        }
        Ok(ElementInfo {
            id: de,
            owner: entry.owner(),
            type_tag: entry.record.type_tag.clone(),
            access_parameters: entry.record.access_parameters.clone(),
            kind: entry.kind.clone(),
        })
    }

    fn lookup(&mut self, de: DataElementId) -> Result<ElementEntry> {
        match self.escrow.with_state(|s| s.registry.get(de).cloned()) {
            Some(e) => Ok(e),
            None => {
                // Probing ids that do not exist is itself outside the contract.
                self.refuse(de)?;
                Err(EscrowError::UnknownDataElement(de))
            }
        }
    }

    /// Plaintext content of `de`.
    pub fn read(&mut self, de: DataElementId) -> Result<Vec<u8>> {
        self.guard()?;
        if let Some(p) = self.pending.iter().find(|p| p.id == de) {
            let bytes = p.bytes.clone();
            self.log_access(de);
            return Ok(bytes);
        }
        let entry = self.lookup(de)?;
        if !self.readable(&entry)? {
            self.refuse(de)?;
        }
        let bytes = self.escrow.read_content(&entry)?;
        self.log_access(de);
        Ok(bytes)
    }

    /// Id of the intermediate stored under `key`, if one exists that this
    /// execution may read.
    pub fn read_intermediate(&mut self, key: &str) -> Result<Option<DataElementId>> {
        self.guard()?;
        if let Some(p) = self.pending.iter().find(|p| p.key == key) {
            return Ok(Some(p.id));
        }
        let Some(id) = self.escrow.with_state(|s| s.intermediates.get(key).copied()) else {
            return Ok(None);
        };
        let entry = self.escrow.with_state(|s| s.registry.get(id).cloned()).ok_or(EscrowError::UnknownDataElement(id))?;
        Ok(if self.readable(&entry)? { Some(id) } else { None })
    }

    /// Stores `bytes` under `key`. Provenance is every element read so far.
    /// Nothing becomes durable unless the execution completes and releases.
    pub fn write_intermediate(&mut self, key: &str, bytes: Vec<u8>) -> Result<DataElementId> {
        self.guard()?;
        let provenance: BTreeSet<DataElementId> = self.access_log.iter().copied().collect();
        if provenance.is_empty() {
            self.warnings.push(format!("SuspiciousEmptyProvenance: intermediate {key:?}"));
        }
        if let Some(p) = self.pending.iter_mut().find(|p| p.key == key) {
            p.bytes = bytes;
            p.provenance.extend(provenance);
            return Ok(p.id);
        }
        let existing = self.escrow.with_state(|s| -> Result<Option<BTreeSet<AgentId>>> {
            match s.intermediates.get(key) {
                Some(id) => Ok(Some(s.registry.closure(*id)?.leaf_owners)),
                None => Ok(None),
            }
        })?;
        if let Some(owners) = existing
            && !owners.is_subset(&self.writer_owners) {
                return Err(EscrowError::DuplicateKey(key.to_string()));
            }
        let id = self.escrow.reserve_element_id()?;
        self.pending.push(PendingIntermediate { key: key.to_string(), id, bytes, provenance });
        Ok(id)
    }

    pub fn call_helper(&mut self, name: &str, args: &Value) -> Result<Value> {
        self.guard()?;
        let f = match self.escrow.program().get(name).map(|f| f.body.clone()) {
            Some(FunctionBody::Helper(f)) => f,
            Some(_) => return Err(EscrowError::NotCallable(name.to_string())),
            None => return Err(EscrowError::UnknownFunction(name.to_string())),
        };
        f(self, args)
    }
}
