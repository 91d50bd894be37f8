//! Finite instance space for the dataflow search and a brute-force oracle
//! that enumerates every ordered sequence of distinct candidates.

use std::collections::{BTreeMap, BTreeSet};

use escrow_core::sharing_model::{
    CandidateDataflow, ConstraintSpec, DataflowRecord, GoalSpec, SearchOutcome, SharingState, find_dataflow_sequence,
};
use escrow_core::{AgentId, DataElementId};

/// Goal templates, one predicate per agent; the common goal is their
/// conjunction.
#[derive(Debug, Clone, Copy)]
pub enum Goal {
    /// Every agent gains an element it did not start with.
    EveryoneGains,
    /// Agent 1 gains an element.
    FirstGains,
    /// The last agent can access the second produced element.
    LastHoldsSecond,
    /// Agent 1 can access every initial element.
    FirstSeesAll,
}

/// Constraint templates; the common constraint is their disjunction.
#[derive(Debug, Clone, Copy)]
pub enum Constraint {
    None,
    /// Agent 1 gains an element it did not start with but some other
    /// agent did.
    FirstSeesForeignRaw,
    /// The last agent holds two or more new elements.
    LastHoldsTwo,
    /// Agent 1 holds element 1, which it owns from the start.
    AlreadyViolated,
}

pub const GOALS: [Goal; 4] = [Goal::EveryoneGains, Goal::FirstGains, Goal::LastHoldsSecond, Goal::FirstSeesAll];
pub const CONSTRAINTS: [Constraint; 4] =
    [Constraint::None, Constraint::FirstSeesForeignRaw, Constraint::LastHoldsTwo, Constraint::AlreadyViolated];
pub const DEPTHS: [usize; 2] = [2, 4];

/// Plain view of a state: per-agent access sets and the element set.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub access: BTreeMap<u64, BTreeSet<u64>>,
    pub elements: BTreeSet<u64>,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub agents: u64,
    pub elements: u64,
    pub candidates: Vec<(BTreeSet<u64>, BTreeSet<u64>)>,
    pub goal: Goal,
    pub constraint: Constraint,
    pub depth: usize,
}

impl Instance {
    pub fn initial(&self) -> View {
        let mut access: BTreeMap<u64, BTreeSet<u64>> = (1..=self.agents).map(|a| (a, BTreeSet::new())).collect();
        for d in 1..=self.elements {
            access.get_mut(&owner_of(d, self.agents)).unwrap().insert(d);
        }
        View { access, elements: (1..=self.elements).collect() }
    }

    fn goal_for(&self, agent: u64, v: &View) -> bool {
        let gained = |a: u64| v.access[&a].iter().filter(|d| !self.initially_held(a, **d)).count();
        match self.goal {
            Goal::EveryoneGains => gained(agent) >= 1,
            Goal::FirstGains => gained(1) >= 1,
            Goal::LastHoldsSecond => v.access[&self.agents].contains(&(self.elements + 2)),
            Goal::FirstSeesAll => (1..=self.elements).all(|d| v.access[&1].contains(&d)),
        }
    }

    pub fn goal_holds(&self, v: &View) -> bool {
        (1..=self.agents).all(|a| self.goal_for(a, v))
    }

    fn initially_held(&self, agent: u64, d: u64) -> bool {
        d <= self.elements && owner_of(d, self.agents) == agent
    }

    pub fn violates(&self, v: &View) -> bool {
        match self.constraint {
            Constraint::None => false,
            Constraint::FirstSeesForeignRaw => {
                v.access[&1].iter().any(|d| *d <= self.elements && owner_of(*d, self.agents) != 1)
            }
            Constraint::LastHoldsTwo => {
                v.access[&self.agents].iter().filter(|d| !self.initially_held(self.agents, **d)).count() >= 2
            }
            Constraint::AlreadyViolated => v.access[&1].contains(&1),
        }
    }

    /// The same problem in the search's own types.
    pub fn to_search(&self) -> (SharingState, Vec<CandidateDataflow>, Vec<GoalSpec>, Vec<ConstraintSpec>) {
        let mut s = SharingState::new();
        for a in 1..=self.agents {
            s.add_agent(AgentId(a));
        }
        for d in 1..=self.elements {
            s.add_element(DataElementId(d), Some(AgentId(owner_of(d, self.agents)))).unwrap();
        }
        let cands = self
            .candidates
            .iter()
            .map(|(dest, src)| CandidateDataflow::new(dest.iter().map(|a| AgentId(*a)), src.iter().map(|d| DataElementId(*d)), "f"))
            .collect();
        let me = std::sync::Arc::new(self.clone());
        let goals = (1..=self.agents)
            .map(|a| {
                let me = me.clone();
                GoalSpec::new(AgentId(a), move |s| me.goal_for(a, &view_of(s)))
            })
            .collect();
        let me2 = me.clone();
        let constraints = vec![ConstraintSpec::new(AgentId(1), move |s| me2.violates(&view_of(s)))];
        (s, cands, goals, constraints)
    }
}

pub fn owner_of(d: u64, agents: u64) -> u64 {
    (d - 1) % agents + 1
}

pub fn view_of(s: &SharingState) -> View {
    View {
        access: s.agents().iter().map(|a| (a.0, s.access(*a).iter().map(|d| d.0).collect())).collect(),
        elements: s.data_elements().iter().map(|d| d.0).collect(),
    }
}

fn applicable(c: &(BTreeSet<u64>, BTreeSet<u64>), v: &View) -> bool {
    !c.0.is_empty() && !c.1.is_empty() && c.0.iter().all(|a| v.access.contains_key(a)) && c.1.is_subset(&v.elements)
}

fn step(c: &(BTreeSet<u64>, BTreeSet<u64>), v: &View) -> (View, u64) {
    let fresh = v.elements.iter().next_back().map_or(1, |m| m + 1);
    let mut next = v.clone();
    next.elements.insert(fresh);
    for a in &c.0 {
        next.access.get_mut(a).unwrap().insert(fresh);
    }
    (next, fresh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Found(usize),
    Absent,
    BoundExceeded,
}

/// Shortest goal-reaching length by exhaustive enumeration.
pub fn oracle(inst: &Instance) -> Verdict {
    let init = inst.initial();
    if inst.violates(&init) {
        return Verdict::Absent;
    }
    if inst.goal_holds(&init) {
        return Verdict::Found(0);
    }
    let mut best: Option<usize> = None;
    let mut cut = false;
    let mut used = vec![false; inst.candidates.len()];
    walk(inst, &init, &mut used, 0, &mut best, &mut cut);
    match best {
        Some(n) => Verdict::Found(n),
        None if cut => Verdict::BoundExceeded,
        None => Verdict::Absent,
    }
}

fn walk(inst: &Instance, v: &View, used: &mut [bool], depth: usize, best: &mut Option<usize>, cut: &mut bool) {
    let open: Vec<usize> = (0..inst.candidates.len()).filter(|i| !used[*i] && applicable(&inst.candidates[*i], v)).collect();
    if depth == inst.depth {
        *cut |= !open.is_empty();
        return;
    }
    for i in open {
        let (next, _) = step(&inst.candidates[i], v);
        if inst.violates(&next) {
            continue;
        }
        if inst.goal_holds(&next) {
            *best = Some(best.map_or(depth + 1, |b| b.min(depth + 1)));
            continue;
        }
        used[i] = true;
        walk(inst, &next, used, depth + 1, best, cut);
        used[i] = false;
    }
}

/// Checks a returned path against the instance: distinct candidates, fresh
/// ids, no constraint state on the way, and a goal state at the end.
pub fn replay(inst: &Instance, path: &[DataflowRecord]) -> Result<(), String> {
    let mut v = inst.initial();
    let mut used = BTreeSet::new();
    for r in path {
        let c = (r.dest_agents.iter().map(|a| a.0).collect(), r.src_elements.iter().map(|d| d.0).collect());
        let i = (0..inst.candidates.len())
            .find(|i| !used.contains(i) && inst.candidates[*i] == c)
            .ok_or_else(|| format!("step {r:?} is not an unused candidate"))?;
        used.insert(i);
        if !applicable(&c, &v) {
            return Err(format!("step {r:?} is not applicable"));
        }
        let (next, fresh) = step(&c, &v);
        if fresh != r.produced.0 {
            return Err(format!("produced {} but the fresh id is {fresh}", r.produced.0));
        }
        if inst.violates(&next) {
            return Err("path passes through a constraint state".into());
        }
        v = next;
    }
    if inst.goal_holds(&v) { Ok(()) } else { Err("path does not end in a goal state".into()) }
}

/// The candidate vocabulary for one `(agents, elements)` shape.
pub fn vocabulary(agents: u64, elements: u64) -> Vec<(BTreeSet<u64>, BTreeSet<u64>)> {
    let mut dests: Vec<BTreeSet<u64>> = (1..=agents).map(|a| BTreeSet::from([a])).collect();
    if agents > 1 {
        dests.push((1..=agents).collect());
    }
    let mut srcs: Vec<BTreeSet<u64>> = vec![BTreeSet::from([1])];
    if elements > 1 {
        srcs.push(BTreeSet::from([elements]));
        srcs.push((1..=elements).collect());
    }
    srcs.push(BTreeSet::from([elements + 1]));
    dests.iter().flat_map(|d| srcs.iter().map(move |s| (d.clone(), s.clone()))).collect()
}

/// All index subsets of `0..n` with at most `k` members, smallest first.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..k {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().map_or(0, |l| l + 1);
            for i in start..n {
                let mut t: Vec<usize> = s.clone();
                t.push(i);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Compares the search with the oracle on one instance.
pub fn check(inst: &Instance) -> Result<Verdict, String> {
    let (s, cands, goals, constraints) = inst.to_search();
    let got = find_dataflow_sequence(&s, &cands, &goals, &constraints, inst.depth);
    let want = oracle(inst);
    match (&got, want) {
        (SearchOutcome::Found(p), Verdict::Found(n)) if p.len() == n => replay(inst, p).map(|()| want),
        (SearchOutcome::Absent, Verdict::Absent) | (SearchOutcome::BoundExceeded, Verdict::BoundExceeded) => Ok(want),
        _ => Err(format!("search {got:?}, oracle {want:?}")),
    }
}

/// Every instance in the space, lazily.
pub fn instances() -> impl Iterator<Item = Instance> {
    (1..=3u64).flat_map(|agents| {
        (1..=4u64).flat_map(move |elements| {
            let vocab = vocabulary(agents, elements);
            subsets(vocab.len(), 4).into_iter().flat_map(move |pick| {
                let candidates: Vec<_> = pick.iter().map(|i| vocab[*i].clone()).collect();
                GOALS.into_iter().flat_map(move |goal| {
                    let candidates = candidates.clone();
                    CONSTRAINTS.into_iter().flat_map(move |constraint| {
                        let candidates = candidates.clone();
                        DEPTHS.into_iter().map(move |depth| Instance {
                            agents,
                            elements,
                            candidates: candidates.clone(),
                            goal,
                            constraint,
                            depth,
                        })
                    })
                })
            })
        })
    })
}
