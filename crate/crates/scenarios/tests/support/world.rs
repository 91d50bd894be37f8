//! Seeded random lifecycle driver over a small fuzz program. Actions are
//! resolved against what the driver has seen succeed so far, so the same
//! seed replays the same stream against the same escrow behavior.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use escrow_core::contract::{ArgPattern, ArgSpec, Args, Proposal, UseLimit};
use escrow_core::runtime::{
    CallOutcome, ContractOutcome, Enforcement, ParamDescriptor, ReleaseOutcome, SharingProgram, open_output,
};
use escrow_core::vault::{SymmetricKey, SyncMode};
use escrow_core::{AgentId, ContractId, DataElementId, Escrow, EscrowConfig, EscrowError};
use escrow_scenarios::stage::{agent_key, system_key};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{Value, json};

pub const FUNCTIONS: [&str; 4] = ["concat", "peek", "cached", "post_fail"];
pub const CACHE_KEY: &str = "k";
pub const POST_MESSAGE: &str = "Accuracy constraint failed";
pub const PRE_MESSAGE: &str = "Input size constraint failed.";
pub const MARKER_LEN: usize = 16;

/// Four contract functions: concatenate the contract's elements, read one
/// named element, concatenate through a cached intermediate, and a body
/// whose postcondition always fails.
pub fn program() -> SharingProgram {
    let mut p = SharingProgram::new("fuzz");
    p.contract_function("concat", "concatenate; release if at least min bytes", vec![ParamDescriptor::new("min", "int", "")], |ctx, a| {
        let mut out = Vec::new();
        for d in ctx.get_all_accessible_des()? {
            out.extend(ctx.read(d)?);
        }
        let min = a.get("min").and_then(Value::as_u64).unwrap_or(0) as usize;
        if out.len() < min {
            return Ok(ContractOutcome::PreconditionFailed(PRE_MESSAGE.into()));
        }
        Ok(ContractOutcome::Released(out))
    })
    .unwrap();
    p.contract_function("peek", "length of one element", vec![ParamDescriptor::new("target", "int", "")], |ctx, a| {
        let target = a.get("target").and_then(Value::as_u64).ok_or_else(|| EscrowError::InvalidArgument("target".into()))?;
        let data = ctx.read(DataElementId(target))?;
        Ok(ContractOutcome::Released((data.len() as u64).to_le_bytes().to_vec()))
    })
    .unwrap();
    p.contract_function("cached", "concatenation through an intermediate", vec![], |ctx, _| {
        if let Some(id) = ctx.read_intermediate(CACHE_KEY)? {
            return Ok(ContractOutcome::Released([b"hit:".to_vec(), ctx.read(id)?].concat()));
        }
        let mut all = Vec::new();
        for d in ctx.get_all_accessible_des()? {
            all.extend(ctx.read(d)?);
        }
        ctx.write_intermediate(CACHE_KEY, all.clone())?;
        Ok(ContractOutcome::Released([b"miss:".to_vec(), all].concat()))
    })
    .unwrap();
    p.contract_function("post_fail", "reads everything, never releases", vec![], |ctx, _| {
        for d in ctx.get_all_accessible_des()? {
            ctx.read(d)?;
        }
        Ok(ContractOutcome::PostconditionFailed(POST_MESSAGE.into()))
    })
    .unwrap();
    p
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Register { name: String },
    Upload { owner: AgentId, content: Vec<u8> },
    Propose { proposer: AgentId, proposal: Proposal },
    Approve { agent: AgentId, contract: ContractId },
    Deny { agent: AgentId, contract: ContractId },
    Withdraw { agent: AgentId, contract: ContractId },
    Call { caller: AgentId, function: String, args: Args },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observed {
    Created(u64),
    Proposed { id: ContractId, src: BTreeSet<AgentId> },
    Done,
    /// Opened with the caller's key. `intermediate` is the cache entry this
    /// release committed, if it replaced one.
    Released { output: DataElementId, bytes: Vec<u8>, intermediate: Option<DataElementId> },
    Pre(String),
    Post(String),
    Error(&'static str),
}

pub struct ContractInfo {
    pub id: ContractId,
    pub proposer: AgentId,
    pub proposal: Proposal,
    pub src: BTreeSet<AgentId>,
    /// Arguments that satisfy the proposal's spec.
    pub call_args: Args,
}

pub struct World {
    pub seed: u64,
    pub escrow: Escrow,
    pub config: EscrowConfig,
    pub agents: Vec<(String, AgentId)>,
    /// Uploads and outputs, in creation order.
    pub elements: Vec<DataElementId>,
    pub contracts: Vec<ContractInfo>,
    pub markers: BTreeMap<DataElementId, [u8; MARKER_LEN]>,
    pub uploads: usize,
    rng: StdRng,
}

pub fn config(dir: &Path, seed: u64, enforcement: Enforcement) -> EscrowConfig {
    let mut c = EscrowConfig::new(dir, system_key(seed));
    c.sync = SyncMode::OsBuffer;
    c.enforcement = enforcement;
    c
}

fn marker(rng: &mut StdRng) -> [u8; MARKER_LEN] {
    const ALNUM: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
    let mut m = [0u8; MARKER_LEN];
    m[..2].copy_from_slice(b"MK");
    for b in &mut m[2..] {
        *b = ALNUM[rng.gen_range(0..ALNUM.len())];
    }
    m
}

fn code(e: &EscrowError) -> &'static str {
    e.code()
}

impl World {
    pub fn open(dir: &Path, seed: u64) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let enforcement = if rng.gen_bool(0.5) { Enforcement::ShortCircuit } else { Enforcement::DeferredCheck };
        let config = config(dir, seed, enforcement);
        let escrow = Escrow::open(config.clone(), program()).expect("open escrow");
        World {
            seed,
            escrow,
            config,
            agents: Vec::new(),
            elements: Vec::new(),
            contracts: Vec::new(),
            markers: BTreeMap::new(),
            uploads: 0,
            rng,
        }
    }

    pub fn key_of(&self, agent: AgentId) -> SymmetricKey {
        let name = &self.agents.iter().find(|(_, a)| *a == agent).expect("known agent").0;
        agent_key(self.seed, name)
    }

    /// Secrets that must never appear in the data directory: element
    /// markers and the first 16 bytes of every key.
    pub fn secrets(&self) -> Vec<[u8; MARKER_LEN]> {
        let mut out: Vec<[u8; MARKER_LEN]> = self.markers.values().copied().collect();
        let keys = self.agents.iter().map(|(n, _)| agent_key(self.seed, n)).chain([system_key(self.seed)]);
        for k in keys {
            out.push(k.as_bytes()[..MARKER_LEN].try_into().unwrap());
        }
        out
    }

    fn pick_agent(&mut self) -> AgentId {
        self.agents.choose(&mut self.rng).expect("agents exist").1
    }

    fn pick_subset<T: Copy + Ord>(&mut self, from: &[T], max: usize) -> BTreeSet<T> {
        let n = self.rng.gen_range(1..=max.min(from.len()));
        from.choose_multiple(&mut self.rng, n).copied().collect()
    }

    fn all_ids(&self) -> Vec<u64> {
        let s = self.escrow.state();
        let mut ids: Vec<u64> = s.registry.iter().map(|e| e.id().get()).collect();
        ids.push(ids.iter().max().copied().unwrap_or(0) + 7);
        ids
    }

    fn args_for(&mut self, function: &str) -> Args {
        let v = match function {
            "concat" => json!({ "min": if self.rng.gen_bool(0.3) { 10_000 } else { 0 } }),
            "peek" => {
                let ids = self.all_ids();
                json!({ "target": ids[self.rng.gen_range(0..ids.len())] })
            }
            _ => json!({}),
        };
        v.as_object().unwrap().clone()
    }

    /// Draws the next action from the seeded stream.
    pub fn next_action(&mut self) -> Action {
        if self.agents.len() < 2 {
            return self.register();
        }
        if self.uploads < 2 {
            return self.upload();
        }
        let w = [
            if self.agents.len() < 4 { 4 } else { 0 },
            if self.uploads < 7 { 10 } else { 0 },
            22,
            if self.contracts.is_empty() { 0 } else { 22 },
            if self.contracts.is_empty() { 0 } else { 6 },
            if self.contracts.is_empty() { 0 } else { 3 },
            if self.contracts.is_empty() { 0 } else { 33 },
        ];
        let dist = rand::distributions::WeightedIndex::new(w).unwrap();
        match self.rng.sample(dist) {
            0 => self.register(),
            1 => self.upload(),
            2 => self.propose(),
            3..=5 => {
                let i = self.recent_contract();
                let c = &self.contracts[i];
                let (id, proposer) = (c.id, c.proposer);
                let src: Vec<AgentId> = c.src.iter().copied().collect();
                let agent = if self.rng.gen_bool(0.8) && !src.is_empty() {
                    src[self.rng.gen_range(0..src.len())]
                } else {
                    self.pick_agent()
                };
                let r = self.rng.gen_range(0..31);
                if r < 22 {
                    Action::Approve { agent, contract: id }
                } else if r < 28 {
                    Action::Deny { agent, contract: id }
                } else {
                    let agent = if self.rng.gen_bool(0.7) { proposer } else { agent };
                    Action::Withdraw { agent, contract: id }
                }
            }
            _ => self.call(),
        }
    }

    fn recent_contract(&mut self) -> usize {
        let n = self.contracts.len();
        if self.rng.gen_bool(0.7) { n - 1 - self.rng.gen_range(0..n.min(4)) } else { self.rng.gen_range(0..n) }
    }

    fn register(&mut self) -> Action {
        Action::Register { name: format!("fuzz-agent-{:02}", self.agents.len()) }
    }

    fn upload(&mut self) -> Action {
        let owner = self.pick_agent();
        let m = marker(&mut self.rng);
        let filler: String = (0..self.rng.gen_range(0..40)).map(|_| self.rng.gen_range(b'a'..=b'z') as char).collect();
        Action::Upload { owner, content: [m.as_slice(), b"|", filler.as_bytes()].concat() }
    }

    fn propose(&mut self) -> Action {
        let proposer = self.pick_agent();
        let agents: Vec<AgentId> = self.agents.iter().map(|(_, a)| *a).collect();
        let dest = self.pick_subset(&agents, 3);
        let elements = self.elements.clone();
        let mut des = self.pick_subset(&elements, 3);
        if self.rng.gen_bool(0.05)
            && let Some(i) = self.escrow.state().intermediates.values().next() {
                des.insert(*i);
            }
        let function = FUNCTIONS[self.rng.gen_range(0..FUNCTIONS.len())].to_string();
        let call_args = self.args_for(&function);
        let mut spec = ArgSpec::exact(&call_args);
        if function == "concat" && self.rng.gen_bool(0.2) {
            spec.0.insert("min".into(), ArgPattern::Any);
        }
        let max_uses = if self.rng.gen_bool(0.1) { UseLimit::Unlimited } else { UseLimit::Times(self.rng.gen_range(1..=3)) };
        Action::Propose {
            proposer,
            proposal: Proposal { dest_agents: dest, data_elements: des, function, args: spec, conditions: vec![], max_uses },
        }
    }

    fn call(&mut self) -> Action {
        let i = self.recent_contract();
        let (dest, mut function, mut args) = {
            let c = &self.contracts[i];
            (c.proposal.dest_agents.iter().copied().collect::<Vec<_>>(), c.proposal.function.clone(), c.call_args.clone())
        };
        let caller = if self.rng.gen_bool(0.8) { dest[self.rng.gen_range(0..dest.len())] } else { self.pick_agent() };
        if self.rng.gen_bool(0.15) {
            if let Some(v) = args.get_mut("min") {
                *v = json!(v.as_u64().unwrap_or(0) + 1);
            } else if args.contains_key("target") {
                args = self.args_for("peek");
            } else {
                args.insert("extra".into(), json!(1));
            }
        }
        if self.rng.gen_bool(0.05) {
            function = FUNCTIONS[self.rng.gen_range(0..FUNCTIONS.len())].to_string();
        }
        Action::Call { caller, function, args }
    }

    /// Executes `action` and records what succeeded.
    pub fn perform(&mut self, action: &Action) -> Observed {
        let e = &self.escrow;
        let r: Result<Observed, EscrowError> = match action {
            Action::Register { name } => e.register_agent(name, name, Some("pw")).and_then(|id| {
                e.submit_key(id, agent_key(self.seed, name))?;
                self.agents.push((name.clone(), id));
                Ok(Observed::Created(id.get()))
            }),
            Action::Upload { owner, content } => e.register_data_element(*owner, "csv", json!({}), true).and_then(|d| {
                e.upload_data_element(*owner, d, content)?;
                self.elements.push(d);
                self.uploads += 1;
                self.markers.insert(d, content[..MARKER_LEN].try_into().unwrap());
                Ok(Observed::Created(d.get()))
            }),
            Action::Propose { proposer, proposal } => e.propose_contract(*proposer, proposal.clone()).map(|c| {
                let call_args = match proposal.args.0.get("min") {
                    Some(ArgPattern::Any) => json!({ "min": 0 }).as_object().unwrap().clone(),
                    _ => proposal
                        .args
                        .0
                        .iter()
                        .map(|(k, p)| match p {
                            ArgPattern::Exact { value } => (k.clone(), value.clone()),
                            _ => (k.clone(), Value::Null),
                        })
                        .collect(),
                };
                self.contracts.push(ContractInfo {
                    id: c.id,
                    proposer: *proposer,
                    proposal: proposal.clone(),
                    src: c.src_agents.clone(),
                    call_args,
                });
                Observed::Proposed { id: c.id, src: c.src_agents }
            }),
            Action::Approve { agent, contract } => e.approve_contract(*agent, *contract).map(|_| Observed::Done),
            Action::Deny { agent, contract } => e.deny_contract(*agent, *contract, "fuzz").map(|_| Observed::Done),
            Action::Withdraw { agent, contract } => e.withdraw_contract(*agent, *contract).map(|_| Observed::Done),
            Action::Call { caller, function, args } => {
                let before = e.state().intermediates.get(CACHE_KEY).copied();
                match e.call_function(*caller, function, args) {
                    Ok(CallOutcome::Execution { result }) => match result.outcome {
                        ReleaseOutcome::Released { output, sealed } => {
                            let bytes = open_output(&self.key_of(*caller), output, &sealed).expect("caller opens its output");
                            for (_, other) in self.agents.iter().filter(|(_, a)| a != caller) {
                                assert!(
                                    open_output(&self.key_of(*other), output, &sealed).is_err(),
                                    "output {output} opens under a non-caller key"
                                );
                            }
                            self.elements.push(output);
                            let after = e.state().intermediates.get(CACHE_KEY).copied();
                            Ok(Observed::Released { output, bytes, intermediate: after.filter(|a| Some(*a) != before) })
                        }
                        ReleaseOutcome::PreconditionFailed { message } => Ok(Observed::Pre(message)),
                        ReleaseOutcome::PostconditionFailed { message } => Ok(Observed::Post(message)),
                    },
                    Ok(CallOutcome::Endpoint { .. }) => Ok(Observed::Done),
                    Err(err) => Err(err),
                }
            }
        };
        r.unwrap_or_else(|err| Observed::Error(code(&err)))
    }
}
