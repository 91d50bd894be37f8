use serde_json::Value;

use super::{CallOutcome, FunctionRef};
use crate::contract::{Args, Contract, ContractStatus, Proposal, RuleDecision, RuleMatcher};
use crate::error::Result;
use crate::escrow::{DiscoverableEntry, Escrow};
use crate::ids::{AgentId, ContractId, DataElementId, RuleId};

/// Escrow operations available to an API endpoint, always on behalf of the
/// calling agent. Endpoints never see protected content.
pub struct EndpointHost<'a> {
    escrow: &'a Escrow,
    caller: AgentId,
}

impl<'a> EndpointHost<'a> {
    pub(crate) fn new(escrow: &'a Escrow, caller: AgentId) -> Self {
        EndpointHost { escrow, caller }
    }

    pub fn caller(&self) -> AgentId {
        self.caller
    }

    pub fn register_data_element(&self, type_tag: &str, access_parameters: Value, discoverable: bool) -> Result<DataElementId> {
        self.escrow.register_data_element(self.caller, type_tag, access_parameters, discoverable)
    }

    pub fn upload_data_element(&self, de: DataElementId, content: &[u8]) -> Result<()> {
        self.escrow.upload_data_element(self.caller, de, content)
    }

    pub fn list_discoverable_des(&self) -> Result<Vec<DiscoverableEntry>> {
        self.escrow.list_discoverable_des(self.caller)
    }

    pub fn propose_contract(&self, proposal: Proposal) -> Result<Contract> {
        self.escrow.propose_contract(self.caller, proposal)
    }

    pub fn approve_contract(&self, contract: ContractId) -> Result<ContractStatus> {
        self.escrow.approve_contract(self.caller, contract)
    }

    pub fn deny_contract(&self, contract: ContractId, reason: &str) -> Result<ContractStatus> {
        self.escrow.deny_contract(self.caller, contract, reason)
    }

    pub fn pending_contracts(&self) -> Result<Vec<Contract>> {
        self.escrow.pending_contracts(self.caller)
    }

    pub fn register_cmr(&self, matcher: RuleMatcher, decision: RuleDecision) -> Result<RuleId> {
        self.escrow.register_cmr(self.caller, matcher, decision)
    }

    pub fn show_functions(&self) -> Vec<FunctionRef> {
        self.escrow.show_functions()
    }

    pub fn call_function(&self, name: &str, args: &Args) -> Result<CallOutcome> {
        self.escrow.call_function(self.caller, name, args)
    }
}
