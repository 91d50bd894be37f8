//! Reference model of the release policy, written from the contract rules
//! alone: it shares no code with the escrow beyond id types.

use std::collections::{BTreeMap, BTreeSet};

use escrow_core::contract::{ArgPattern, Proposal, UseLimit};
use escrow_core::{AgentId, ContractId, DataElementId};
use serde_json::Value;

use super::world::{Action, Observed, POST_MESSAGE, PRE_MESSAGE};

#[derive(Debug, Clone)]
struct Elem {
    /// `None` for escrow-owned intermediates.
    owner: Option<AgentId>,
    prov: BTreeSet<DataElementId>,
    content: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Pending,
    Approved,
    Denied,
}

#[derive(Debug, Clone)]
struct Deal {
    proposer: AgentId,
    function: String,
    dest: BTreeSet<AgentId>,
    des: BTreeSet<DataElementId>,
    /// `None` accepts any value.
    spec: BTreeMap<String, Option<Value>>,
    slots: BTreeMap<AgentId, Slot>,
    max: Option<u64>,
    uses: u64,
    withdrawn: bool,
}

impl Deal {
    fn denied(&self) -> bool {
        self.slots.values().any(|s| *s == Slot::Denied)
    }
    fn used_up(&self) -> bool {
        self.max.is_some_and(|m| self.uses >= m)
    }
    fn closed(&self) -> bool {
        self.denied() || self.used_up() || self.withdrawn
    }
    fn executable(&self) -> bool {
        !self.closed() && self.slots.values().all(|s| *s == Slot::Approved)
    }
    fn accepts(&self, args: &serde_json::Map<String, Value>) -> bool {
        args.len() == self.spec.len()
            && self.spec.iter().all(|(k, p)| args.get(k).is_some_and(|v| p.as_ref().is_none_or(|want| want == v)))
    }
}

/// The model's prediction for one action. Released bytes are exact; ids of
/// new elements are learned from the escrow's answer.
#[derive(Debug, Clone, PartialEq)]
pub enum Expected {
    Created,
    Proposed(BTreeSet<AgentId>),
    Done,
    Released { bytes: Vec<u8>, contract: ContractId, caches: bool },
    Pre(String),
    Post(String),
    Error(&'static str),
}

#[derive(Default)]
pub struct Model {
    elems: BTreeMap<DataElementId, Elem>,
    deals: BTreeMap<ContractId, Deal>,
    cache: Option<DataElementId>,
}

impl Model {
    fn closure(&self, root: DataElementId) -> BTreeSet<DataElementId> {
        let mut seen = BTreeSet::new();
        self.visit(root, &mut seen);
        seen
    }

    fn visit(&self, d: DataElementId, seen: &mut BTreeSet<DataElementId>) {
        if seen.insert(d) {
            for p in &self.elems[&d].prov {
                self.visit(*p, seen);
            }
        }
    }

    fn owners(&self, des: &BTreeSet<DataElementId>) -> BTreeSet<AgentId> {
        des.iter().flat_map(|d| self.closure(*d)).filter_map(|m| self.elems[&m].owner).collect()
    }

    /// Every agent-owned element some contract element derives from.
    pub fn covered(&self, des: &BTreeSet<DataElementId>) -> BTreeSet<DataElementId> {
        des.iter().flat_map(|d| self.closure(*d)).filter(|m| self.elems[m].owner.is_some()).collect()
    }

    fn readable(&self, deal: &Deal, d: DataElementId) -> bool {
        if deal.des.contains(&d) {
            return true;
        }
        match self.elems.get(&d) {
            Some(e) if e.owner.is_none() => {
                let cov = self.covered(&deal.des);
                self.closure(d).iter().all(|m| self.elems[m].owner.is_none() || cov.contains(m))
            }
            _ => false,
        }
    }

    fn concat(&self, des: &BTreeSet<DataElementId>) -> Vec<u8> {
        des.iter().flat_map(|d| self.elems[d].content.clone()).collect()
    }

    fn leaf_owners(&self, d: DataElementId) -> BTreeSet<AgentId> {
        self.closure(d).into_iter().filter(|m| self.elems[m].prov.is_empty()).filter_map(|m| self.elems[&m].owner).collect()
    }

    pub fn predict(&self, action: &Action) -> Expected {
        match action {
            Action::Register { .. } | Action::Upload { .. } => Expected::Created,
            Action::Propose { proposal, .. } => {
                if proposal.data_elements.iter().any(|d| self.elems.get(d).is_some_and(|e| e.owner.is_none())) {
                    return Expected::Error("InvalidArgument");
                }
                Expected::Proposed(self.owners(&proposal.data_elements))
            }
            Action::Approve { agent, contract } | Action::Deny { agent, contract } => {
                let deal = &self.deals[contract];
                match deal.slots.get(agent) {
                    None => Expected::Error("NotASourceAgent"),
                    Some(_) if deal.closed() => Expected::Error("ContractClosed"),
                    Some(Slot::Pending) => Expected::Done,
                    Some(_) => Expected::Error("AlreadyDecided"),
                }
            }
            Action::Withdraw { agent, contract } => {
                let deal = &self.deals[contract];
                if *agent != deal.proposer {
                    Expected::Error("OwnerMismatch")
                } else if deal.closed() {
                    Expected::Error("ContractClosed")
                } else {
                    Expected::Done
                }
            }
            Action::Call { caller, function, args } => {
                let matching: Vec<(&ContractId, &Deal)> =
                    self.deals.iter().filter(|(_, d)| d.function == *function && d.executable() && d.accepts(args)).collect();
                let Some((cid, deal)) = matching.iter().find(|(_, d)| d.dest.contains(caller)) else {
                    return Expected::Error(if matching.is_empty() { "NoMatchingContract" } else { "NotDestinationAgent" });
                };
                let cid = **cid;
                let release = |bytes: Vec<u8>, caches: bool| Expected::Released { bytes, contract: cid, caches };
                match function.as_str() {
                    "concat" => {
                        let bytes = self.concat(&deal.des);
                        let min = args.get("min").and_then(Value::as_u64).unwrap_or(0) as usize;
                        if bytes.len() < min { Expected::Pre(PRE_MESSAGE.into()) } else { release(bytes, false) }
                    }
                    "peek" => {
                        let target = DataElementId(args["target"].as_u64().unwrap_or(u64::MAX));
                        if self.elems.contains_key(&target) && self.readable(deal, target) {
                            release((self.elems[&target].content.len() as u64).to_le_bytes().to_vec(), false)
                        } else {
                            Expected::Error("ShortCircuited")
                        }
                    }
                    "cached" => {
                        if let Some(id) = self.cache.filter(|id| self.readable(deal, *id)) {
                            return release([b"hit:".as_slice(), &self.elems[&id].content].concat(), false);
                        }
                        if let Some(id) = self.cache
                            && !self.leaf_owners(id).is_subset(&self.owners(&deal.des)) {
                                return Expected::Error("DuplicateKey");
                            }
                        release([b"miss:".as_slice(), &self.concat(&deal.des)].concat(), true)
                    }
                    _ => Expected::Post(POST_MESSAGE.into()),
                }
            }
        }
    }

    /// Folds the escrow's (already checked) answer into the model.
    pub fn absorb(&mut self, action: &Action, expected: &Expected, seen: &Observed) {
        match (action, seen) {
            (Action::Upload { owner, content }, Observed::Created(id)) => {
                self.elems.insert(DataElementId(*id), Elem { owner: Some(*owner), prov: BTreeSet::new(), content: content.clone() });
            }
            (Action::Propose { proposer, proposal }, Observed::Proposed { id, src }) => {
                self.deals.insert(*id, deal(*proposer, proposal, src));
            }
            (Action::Approve { agent, contract }, Observed::Done) => {
                self.deals.get_mut(contract).unwrap().slots.insert(*agent, Slot::Approved);
            }
            (Action::Deny { agent, contract }, Observed::Done) => {
                self.deals.get_mut(contract).unwrap().slots.insert(*agent, Slot::Denied);
            }
            (Action::Withdraw { contract, .. }, Observed::Done) => {
                self.deals.get_mut(contract).unwrap().withdrawn = true;
            }
            (Action::Call { caller, .. }, Observed::Released { output, bytes, intermediate }) => {
                let Expected::Released { contract, caches, .. } = expected else { return };
                let deal = self.deals.get_mut(contract).unwrap();
                deal.uses += 1;
                let des = deal.des.clone();
                if *caches {
                    let id = intermediate.expect("a cache miss commits an intermediate");
                    let content = self.concat(&des);
                    self.elems.insert(id, Elem { owner: None, prov: des.clone(), content });
                    self.cache = Some(id);
                }
                self.elems.insert(*output, Elem { owner: Some(*caller), prov: des, content: bytes.clone() });
            }
            _ => {}
        }
    }

    /// Markers a release under `contract` may legitimately contain: those of
    /// uploads its elements derive from.
    pub fn allowed_sources(&self, contract: ContractId) -> BTreeSet<DataElementId> {
        self.covered(&self.deals[&contract].des)
    }
}

fn deal(proposer: AgentId, p: &Proposal, src: &BTreeSet<AgentId>) -> Deal {
    Deal {
        proposer,
        function: p.function.clone(),
        dest: p.dest_agents.clone(),
        des: p.data_elements.clone(),
        spec: p
            .args
            .0
            .iter()
            .map(|(k, pat)| {
                let v = match pat {
                    ArgPattern::Exact { value } => Some(value.clone()),
                    _ => None,
                };
                (k.clone(), v)
            })
            .collect(),
        slots: src.iter().map(|a| (*a, Slot::Pending)).collect(),
        max: match p.max_uses {
            UseLimit::Times(n) => Some(u64::from(n)),
            UseLimit::Unlimited => None,
        },
        uses: 0,
        withdrawn: false,
    }
}

/// Whether an observation is what the model expected.
pub fn agrees(expected: &Expected, seen: &Observed) -> bool {
    match (expected, seen) {
        (Expected::Created, Observed::Created(_)) | (Expected::Done, Observed::Done) => true,
        (Expected::Proposed(a), Observed::Proposed { src, .. }) => a == src,
        (Expected::Released { bytes, .. }, Observed::Released { bytes: b, .. }) => bytes == b,
        (Expected::Pre(a), Observed::Pre(b)) | (Expected::Post(a), Observed::Post(b)) => a == b,
        (Expected::Error(a), Observed::Error(b)) => a == b,
        _ => false,
    }
}
