//! The data sharing model: who can access which data elements, and how
//! dataflows move the system from one sharing state to the next.
//!
//! Everything here is pure. Operations take a state by reference and return a
//! new one, so the module doubles as a reference oracle for the stateful parts
//! of the escrow.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AgentId, DataElementId, Seq};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("unknown data element {0}")]
    UnknownDataElement(DataElementId),
    #[error("data element id {0} already exists")]
    StaleId(DataElementId),
    #[error("a dataflow needs at least one destination agent")]
    EmptyDestination,
    #[error("a dataflow needs at least one source data element")]
    EmptySource,
}

/// A snapshot `<A, D, s>` of which agent can access which data elements.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SharingState {
    agents: BTreeSet<AgentId>,
    data_elements: BTreeSet<DataElementId>,
    access: BTreeMap<AgentId, BTreeSet<DataElementId>>,
}

impl SharingState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a state from raw parts, checking that every access entry refers to
    /// a known agent and known data elements.
    pub fn from_parts(
        agents: impl IntoIterator<Item = AgentId>,
        data_elements: impl IntoIterator<Item = DataElementId>,
        access: impl IntoIterator<Item = (AgentId, BTreeSet<DataElementId>)>,
    ) -> Result<Self, ModelError> {
        let mut state = SharingState {
            agents: agents.into_iter().collect(),
            data_elements: data_elements.into_iter().collect(),
            access: BTreeMap::new(),
        };
        for (agent, set) in access {
            if !state.agents.contains(&agent) {
                return Err(ModelError::UnknownAgent(agent));
            }
            if let Some(d) = set.iter().find(|d| !state.data_elements.contains(d)) {
                return Err(ModelError::UnknownDataElement(*d));
            }
            state.access.entry(agent).or_default().extend(set);
        }
        Ok(state)
    }

    pub fn agents(&self) -> &BTreeSet<AgentId> {
        &self.agents
    }

    pub fn data_elements(&self) -> &BTreeSet<DataElementId> {
        &self.data_elements
    }

    /// `s(a)`: the elements `agent` can access. Empty for unknown agents.
    pub fn access(&self, agent: AgentId) -> BTreeSet<DataElementId> {
        self.access.get(&agent).cloned().unwrap_or_default()
    }

    pub fn can_access(&self, agent: AgentId, de: DataElementId) -> bool {
        self.access.get(&agent).is_some_and(|s| s.contains(&de))
    }

    /// Agent transition: `agent` joins. Idempotent.
    pub fn add_agent(&mut self, agent: AgentId) {
        self.agents.insert(agent);
    }

    /// Registers a new element. With `holder = Some(a)` the element starts in
    /// `s(a)`; with `None` nobody can access it (escrow-internal elements).
    pub fn add_element(
        &mut self,
        de: DataElementId,
        holder: Option<AgentId>,
    ) -> Result<(), ModelError> {
        if self.data_elements.contains(&de) {
            return Err(ModelError::StaleId(de));
        }
        if let Some(a) = holder {
            if !self.agents.contains(&a) {
                return Err(ModelError::UnknownAgent(a));
            }
            self.access.entry(a).or_default().insert(de);
        }
        self.data_elements.insert(de);
        Ok(())
    }

    fn next_fresh_id(&self) -> DataElementId {
        DataElementId(self.data_elements.iter().next_back().map_or(1, |d| d.0 + 1))
    }
}

/// `t(q, A_dest, D_src, f)`: every destination agent gains access to the fresh
/// element `fresh_id = f(D_src)`. The input state is left untouched.
pub fn apply_dataflow(
    state: &SharingState,
    dest: &BTreeSet<AgentId>,
    src: &BTreeSet<DataElementId>,
    _function: &str,
    fresh_id: DataElementId,
) -> Result<SharingState, ModelError> {
    if dest.is_empty() {
        return Err(ModelError::EmptyDestination);
    }
    if src.is_empty() {
        return Err(ModelError::EmptySource);
    }
    if let Some(a) = dest.iter().find(|a| !state.agents.contains(a)) {
        return Err(ModelError::UnknownAgent(*a));
    }
    if let Some(d) = src.iter().find(|d| !state.data_elements.contains(d)) {
        return Err(ModelError::UnknownDataElement(*d));
    }
    if state.data_elements.contains(&fresh_id) {
        return Err(ModelError::StaleId(fresh_id));
    }
    let mut next = state.clone();
    next.data_elements.insert(fresh_id);
    for a in dest {
        next.access.entry(*a).or_default().insert(fresh_id);
    }
    Ok(next)
}

/// One applied dataflow, as kept in the escrow's history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataflowRecord {
    pub dest_agents: BTreeSet<AgentId>,
    pub src_elements: BTreeSet<DataElementId>,
    pub function: String,
    pub produced: DataElementId,
    pub timestamp: Seq,
}

type StatePredicate = Arc<dyn Fn(&SharingState) -> bool + Send + Sync>;

/// One agent's goal states `q^g_i`, given as a decidable predicate.
#[derive(Clone)]
pub struct GoalSpec {
    pub agent: AgentId,
    predicate: StatePredicate,
}

impl GoalSpec {
    pub fn new(agent: AgentId, p: impl Fn(&SharingState) -> bool + Send + Sync + 'static) -> Self {
        Self {
            agent,
            predicate: Arc::new(p),
        }
    }

    pub fn holds(&self, state: &SharingState) -> bool {
        (self.predicate)(state)
    }
}

impl fmt::Debug for GoalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GoalSpec").field("agent", &self.agent).finish()
    }
}

/// One agent's constraint states `q^c_i`.
#[derive(Clone)]
pub struct ConstraintSpec {
    pub agent: AgentId,
    predicate: StatePredicate,
}

impl ConstraintSpec {
    pub fn new(agent: AgentId, p: impl Fn(&SharingState) -> bool + Send + Sync + 'static) -> Self {
        Self {
            agent,
            predicate: Arc::new(p),
        }
    }

    pub fn holds(&self, state: &SharingState) -> bool {
        (self.predicate)(state)
    }
}

impl fmt::Debug for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSpec").field("agent", &self.agent).finish()
    }
}

/// Membership in the common goal states: the intersection over agents.
pub fn is_common_goal(state: &SharingState, goals: &[GoalSpec]) -> bool {
    goals.iter().all(|g| g.holds(state))
}

/// Membership in the common constraint states: the union over agents.
pub fn violates_common_constraint(state: &SharingState, constraints: &[ConstraintSpec]) -> bool {
    constraints.iter().any(|c| c.holds(state))
}

/// A dataflow the search may choose to apply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateDataflow {
    pub dest: BTreeSet<AgentId>,
    pub src: BTreeSet<DataElementId>,
    pub function: String,
}

impl CandidateDataflow {
    pub fn new(
        dest: impl IntoIterator<Item = AgentId>,
        src: impl IntoIterator<Item = DataElementId>,
        function: impl Into<String>,
    ) -> Self {
        Self {
            dest: dest.into_iter().collect(),
            src: src.into_iter().collect(),
            function: function.into(),
        }
    }

    fn applicable(&self, state: &SharingState) -> bool {
        !self.dest.is_empty()
            && !self.src.is_empty()
            && self.dest.is_subset(&state.agents)
            && self.src.is_subset(&state.data_elements)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchOutcome {
    /// A shortest sequence reaching a common goal state.
    Found(Vec<DataflowRecord>),
    /// The whole space was explored; no sequence exists.
    Absent,
    /// Nothing found, but the depth bound cut off expandable paths.
    BoundExceeded,
}

/// Breadth-first search for a shortest dataflow sequence from `initial` to a
/// common goal state that never passes through a common constraint state.
///
/// Each candidate is applied at most once along a path; a candidate whose
/// sources do not exist yet (e.g. it consumes the output of another candidate)
/// is skipped until they do. Produced elements get `max(D) + 1`.
pub fn find_dataflow_sequence(
    initial: &SharingState,
    candidates: &[CandidateDataflow],
    goals: &[GoalSpec],
    constraints: &[ConstraintSpec],
    depth_bound: usize,
) -> SearchOutcome {
    if violates_common_constraint(initial, constraints) {
        return SearchOutcome::Absent;
    }
    if is_common_goal(initial, goals) {
        return SearchOutcome::Found(Vec::new());
    }

    struct Node {
        state: SharingState,
        used: Vec<bool>,
        path: Vec<DataflowRecord>,
    }

    let mut queue = VecDeque::from([Node {
        state: initial.clone(),
        used: vec![false; candidates.len()],
        path: Vec::new(),
    }]);
    let mut truncated = false;

    while let Some(node) = queue.pop_front() {
        let expandable = candidates
            .iter()
            .enumerate()
            .filter(|(i, c)| !node.used[*i] && c.applicable(&node.state));
        if node.path.len() >= depth_bound {
            if expandable.count() > 0 {
                truncated = true;
            }
            continue;
        }
        for (i, cand) in expandable {
            let fresh = node.state.next_fresh_id();
            let Ok(next) =
                apply_dataflow(&node.state, &cand.dest, &cand.src, &cand.function, fresh)
            else {
                continue;
            };
            if violates_common_constraint(&next, constraints) {
                continue;
            }
            let mut path = node.path.clone();
            path.push(DataflowRecord {
                dest_agents: cand.dest.clone(),
                src_elements: cand.src.clone(),
                function: cand.function.clone(),
                produced: fresh,
                timestamp: path.len() as Seq + 1,
            });
            if is_common_goal(&next, goals) {
                return SearchOutcome::Found(path);
            }
            let mut used = node.used.clone();
            used[i] = true;
            queue.push_back(Node {
                state: next,
                used,
                path,
            });
        }
    }

    if truncated {
        SearchOutcome::BoundExceeded
    } else {
        SearchOutcome::Absent
    }
}
