//! Contracts, their approval lifecycle, and contract management rules.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::error::{EscrowError, Result};
use crate::ids::{AgentId, ContractId, DataElementId, RuleId, Seq};

/// Arguments of a function call, keyed by parameter name.
pub type Args = Map<String, Value>;

/// Canonical form used for matching: object keys sorted, integral floats
/// collapsed to integers. Two values that denote the same JSON number compare
/// equal after canonicalization.
pub fn canonicalize(v: &Value) -> Value {
    match v {
        Value::Number(n) => Value::Number(canonical_number(n)),
        Value::Array(xs) => Value::Array(xs.iter().map(canonicalize).collect()),
        Value::Object(m) => {
            let sorted: BTreeMap<&String, Value> = m.iter().map(|(k, v)| (k, canonicalize(v))).collect();
            Value::Object(sorted.into_iter().map(|(k, v)| (k.clone(), v)).collect())
        }
        other => other.clone(),
    }
}

fn canonical_number(n: &Number) -> Number {
    if n.is_i64() || n.is_u64() {
        return n.clone();
    }
    match n.as_f64() {
        Some(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => Number::from(f as i64),
        _ => n.clone(),
    }
}

pub fn canonicalize_args(args: &Args) -> Args {
    match canonicalize(&Value::Object(args.clone())) {
        Value::Object(m) => m,
        _ => unreachable!("canonicalize preserves objects"),
    }
}

/// Pattern a contract places on one call argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArgPattern {
    Exact { value: Value },
    /// Inclusive numeric interval.
    Range { min: f64, max: f64 },
    OneOf { values: Vec<Value> },
    Any,
}

impl ArgPattern {
    pub fn exact(v: impl Into<Value>) -> Self {
        ArgPattern::Exact { value: canonicalize(&v.into()) }
    }

    pub fn matches(&self, v: &Value) -> bool {
        let v = canonicalize(v);
        match self {
            ArgPattern::Exact { value } => canonicalize(value) == v,
            ArgPattern::Range { min, max } => v.as_f64().is_some_and(|x| *min <= x && x <= *max),
            ArgPattern::OneOf { values } => values.iter().any(|c| canonicalize(c) == v),
            ArgPattern::Any => true,
        }
    }
}

/// The argument constraints of a contract. A call matches when it supplies
/// exactly the listed parameters and each satisfies its pattern.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArgSpec(pub BTreeMap<String, ArgPattern>);

impl ArgSpec {
    /// Every argument pinned to its exact value.
    pub fn exact(args: &Args) -> Self {
        ArgSpec(args.iter().map(|(k, v)| (k.clone(), ArgPattern::exact(v.clone()))).collect())
    }

    pub fn matches(&self, call: &Args) -> bool {
        call.len() == self.0.len()
            && self.0.iter().all(|(k, p)| call.get(k).is_some_and(|v| p.matches(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Precondition,
    Postcondition,
}

/// Human-readable statement of a condition the contract function enforces.
/// The check itself lives in the function body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionDescriptor {
    pub kind: ConditionKind,
    pub description: String,
    #[serde(default)]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ApprovalState {
    Pending,
    Approved { at: Seq },
    Denied { at: Seq, reason: String },
}

impl ApprovalState {
    pub fn is_pending(&self) -> bool {
        matches!(self, ApprovalState::Pending)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractStatus {
    Proposed,
    Approved,
    Denied,
    Executed,
    Expired,
}

impl ContractStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, ContractStatus::Denied | ContractStatus::Executed | ContractStatus::Expired)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UseLimit {
    Times(u32),
    Unlimited,
}

impl Default for UseLimit {
    fn default() -> Self {
        UseLimit::Times(1)
    }
}

/// What a proposer asks for. Source agents are computed by the escrow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub dest_agents: BTreeSet<AgentId>,
    pub data_elements: BTreeSet<DataElementId>,
    pub function: String,
    #[serde(default)]
    pub args: ArgSpec,
    #[serde(default)]
    pub conditions: Vec<ConditionDescriptor>,
    #[serde(default)]
    pub max_uses: UseLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub id: ContractId,
    pub proposer: AgentId,
    pub dest_agents: BTreeSet<AgentId>,
    pub data_elements: BTreeSet<DataElementId>,
    pub function: String,
    pub args: ArgSpec,
    pub src_agents: BTreeSet<AgentId>,
    pub conditions: Vec<ConditionDescriptor>,
    pub approvals: BTreeMap<AgentId, ApprovalState>,
    pub max_uses: UseLimit,
    pub uses: u32,
    pub withdrawn: bool,
    pub proposed_at: Seq,
}

impl Contract {
    pub fn new(
        id: ContractId,
        proposer: AgentId,
        p: Proposal,
        src_agents: BTreeSet<AgentId>,
        proposed_at: Seq,
    ) -> Self {
        let approvals = src_agents.iter().map(|a| (*a, ApprovalState::Pending)).collect();
        Contract {
            id,
            proposer,
            dest_agents: p.dest_agents,
            data_elements: p.data_elements,
            function: p.function,
            args: p.args,
            src_agents,
            conditions: p.conditions,
            approvals,
            max_uses: p.max_uses,
            uses: 0,
            withdrawn: false,
            proposed_at,
        }
    }

    /// Derived from the approval slots and the use count; never stored.
    pub fn status(&self) -> ContractStatus {
        if self.approvals.values().any(|s| matches!(s, ApprovalState::Denied { .. })) {
            return ContractStatus::Denied;
        }
        if let UseLimit::Times(n) = self.max_uses
            && self.uses >= n {
                return ContractStatus::Executed;
            }
        if self.withdrawn {
            return ContractStatus::Expired;
        }
        if self.approvals.values().all(|s| matches!(s, ApprovalState::Approved { .. })) {
            ContractStatus::Approved
        } else {
            ContractStatus::Proposed
        }
    }

    pub fn is_executable(&self) -> bool {
        self.status() == ContractStatus::Approved
    }

    pub fn pending_for(&self, agent: AgentId) -> bool {
        self.approvals.get(&agent).is_some_and(ApprovalState::is_pending)
    }

    fn check_decidable(&self, agent: AgentId) -> Result<()> {
        let slot = self.approvals.get(&agent).ok_or(EscrowError::NotASourceAgent {
            agent,
            contract: self.id,
        })?;
        if self.status().is_terminal() {
            return Err(EscrowError::ContractClosed(self.id));
        }
        if !slot.is_pending() {
            return Err(EscrowError::AlreadyDecided { agent, contract: self.id });
        }
        Ok(())
    }

    pub fn approve(&mut self, agent: AgentId, at: Seq) -> Result<ContractStatus> {
        self.check_decidable(agent)?;
        self.approvals.insert(agent, ApprovalState::Approved { at });
        Ok(self.status())
    }

    pub fn deny(&mut self, agent: AgentId, at: Seq, reason: String) -> Result<ContractStatus> {
        self.check_decidable(agent)?;
        self.approvals.insert(agent, ApprovalState::Denied { at, reason });
        Ok(self.status())
    }

    pub fn withdraw(&mut self, agent: AgentId) -> Result<()> {
        if agent != self.proposer {
            return Err(EscrowError::OwnerMismatch);
        }
        if self.status().is_terminal() {
            return Err(EscrowError::ContractClosed(self.id));
        }
        self.withdrawn = true;
        Ok(())
    }

    pub fn record_use(&mut self) -> Result<()> {
        if !self.is_executable() {
            return Err(EscrowError::ContractClosed(self.id));
        }
        self.uses += 1;
        Ok(())
    }

    /// True when a call `function(args)` by `caller` is covered by this contract.
    pub fn covers(&self, caller: AgentId, function: &str, args: &Args) -> bool {
        self.function == function && self.dest_agents.contains(&caller) && self.args.matches(args)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleDecision {
    Approve,
    Reject,
}

/// Predicate over a proposed contract. Absent filters match everything; a set
/// filter matches when the contract's corresponding set lies inside it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleMatcher {
    #[serde(default)]
    pub functions: Option<BTreeSet<String>>,
    #[serde(default)]
    pub data_elements: Option<BTreeSet<DataElementId>>,
    #[serde(default)]
    pub dest_agents: Option<BTreeSet<AgentId>>,
    /// Each listed argument must be pinned by the contract to a value the
    /// pattern accepts.
    #[serde(default)]
    pub args: BTreeMap<String, ArgPattern>,
}

impl RuleMatcher {
    pub fn matches(&self, c: &Contract) -> bool {
        self.functions.as_ref().is_none_or(|f| f.contains(&c.function))
            && self.data_elements.as_ref().is_none_or(|d| c.data_elements.is_subset(d))
            && self.dest_agents.as_ref().is_none_or(|d| c.dest_agents.is_subset(d))
            && self.args.iter().all(|(k, p)| match c.args.0.get(k) {
                Some(ArgPattern::Exact { value }) => p.matches(value),
                _ => false,
            })
    }
}

/// A standing approval or rejection an agent registers in advance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractManagementRule {
    pub id: RuleId,
    pub owner: AgentId,
    pub matcher: RuleMatcher,
    pub decision: RuleDecision,
    pub created_at: Seq,
}

/// Decision of `owner`'s rules on `c`: any matching reject wins over any
/// matching approve; `None` leaves the slot pending.
pub fn evaluate_rules<'a>(
    rules: impl IntoIterator<Item = &'a ContractManagementRule>,
    owner: AgentId,
    c: &Contract,
) -> Option<RuleDecision> {
    let mut verdict = None;
    for r in rules.into_iter().filter(|r| r.owner == owner && r.matcher.matches(c)) {
        match r.decision {
            RuleDecision::Reject => return Some(RuleDecision::Reject),
            RuleDecision::Approve => verdict = Some(RuleDecision::Approve),
        }
    }
    verdict
}
