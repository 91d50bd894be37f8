//! Random provenance DAGs and a recursive owner-set oracle.

use std::collections::{BTreeMap, BTreeSet};

use escrow_core::destore::{DataElementRecord, ElementEntry, ElementKind, Registry};
use escrow_core::{AgentId, ContractId, DataElementId};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::json;

pub struct Dag {
    pub registry: Registry,
    /// Node -> (owner, parents), the oracle's own copy.
    pub nodes: BTreeMap<u64, (AgentId, Vec<u64>)>,
    /// Elements a contract names.
    pub chosen: BTreeSet<DataElementId>,
}

/// Up to 50 nodes. Parents always have smaller ids, so the graph is acyclic.
/// Roots are uploads owned by agents 1..=6, with the odd escrow-owned root;
/// inner nodes are agent outputs or escrow-owned intermediates.
pub fn random(seed: u64) -> Dag {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = rng.gen_range(1..=50u64);
    let agents = rng.gen_range(1..=6u64);
    let mut registry = Registry::default();
    let mut nodes = BTreeMap::new();
    for id in 1..=n {
        let parents: Vec<u64> = if id == 1 || rng.gen_bool(0.3) {
            Vec::new()
        } else {
            let earlier: Vec<u64> = (1..id).collect();
            let k = rng.gen_range(1..=earlier.len().min(4));
            earlier.choose_multiple(&mut rng, k).copied().collect()
        };
        let agent = AgentId(rng.gen_range(1..=agents));
        let (owner, kind) = match (parents.is_empty(), rng.gen_range(0..10)) {
            (true, 0) => (AgentId::SYSTEM, ElementKind::Uploaded),
            (true, _) => (agent, ElementKind::Uploaded),
            (false, 0..=4) => (AgentId::SYSTEM, ElementKind::Intermediate { key: format!("i{id}") }),
            (false, _) => (agent, ElementKind::Output { contract: ContractId(id) }),
        };
        registry.insert(ElementEntry {
            record: DataElementRecord {
                id: DataElementId(id),
                owner,
                type_tag: "csv".into(),
                access_parameters: json!({}),
                discoverable: true,
                provenance: parents.iter().map(|p| DataElementId(*p)).collect(),
            },
            kind,
            content_len: None,
        });
        nodes.insert(id, (owner, parents));
    }
    let k = rng.gen_range(1..=n.min(5)) as usize;
    let all: Vec<u64> = (1..=n).collect();
    let chosen = all.choose_multiple(&mut rng, k).map(|d| DataElementId(*d)).collect();
    Dag { registry, nodes, chosen }
}

fn reach(nodes: &BTreeMap<u64, (AgentId, Vec<u64>)>, id: u64, seen: &mut BTreeSet<u64>, owners: &mut BTreeSet<AgentId>) {
    if !seen.insert(id) {
        return;
    }
    let (owner, parents) = &nodes[&id];
    if *owner != AgentId::SYSTEM {
        owners.insert(*owner);
    }
    for p in parents {
        reach(nodes, *p, seen, owners);
    }
}

/// Non-escrow owners of everything reachable from `chosen`.
pub fn oracle_owners(dag: &Dag) -> BTreeSet<AgentId> {
    let (mut seen, mut owners) = (BTreeSet::new(), BTreeSet::new());
    for d in &dag.chosen {
        reach(&dag.nodes, d.0, &mut seen, &mut owners);
    }
    owners
}
