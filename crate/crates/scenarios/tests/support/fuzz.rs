//! One randomized lifecycle interleaving, checked action by action against
//! the reference model.

use super::model::{Expected, Model, agrees};
use super::scan::plaintext_hits;
use super::world::{Action, Observed, World};

#[derive(Debug, Default, Clone, Copy)]
pub struct Tally {
    pub actions: usize,
    pub releases: usize,
    pub refusals: usize,
    pub short_circuits: usize,
}

impl Tally {
    pub fn add(&mut self, o: Tally) {
        self.actions += o.actions;
        self.releases += o.releases;
        self.refusals += o.refusals;
        self.short_circuits += o.short_circuits;
    }
}

/// Runs `steps` actions of seed `seed` in a fresh data directory.
pub fn interleaving(seed: u64, steps: usize) -> Result<Tally, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut w = World::open(dir.path(), seed);
    let mut model = Model::default();
    let mut t = Tally::default();
    for i in 0..steps {
        let action = w.next_action();
        let expected = model.predict(&action);
        let seen = w.perform(&action);
        let at = || format!("seed {seed} step {i}: {action:?}");
        if let Observed::Released { bytes, .. } = &seen {
            let Expected::Released { contract, .. } = &expected else {
                return Err(format!("{}: unapproved release; model expected {expected:?}", at()));
            };
            let allowed = model.allowed_sources(*contract);
            for (de, m) in &w.markers {
                if !allowed.contains(de) && bytes.windows(m.len()).any(|x| x == m) {
                    return Err(format!("{}: release carries bytes of out-of-contract element {de}", at()));
                }
            }
            t.releases += 1;
        }
        if !agrees(&expected, &seen) {
            return Err(format!("{}: expected {expected:?}, escrow said {seen:?}", at()));
        }
        if let Action::Call { .. } = action {
            match &seen {
                Observed::Error("ShortCircuited") => t.short_circuits += 1,
                Observed::Released { .. } => {}
                _ => t.refusals += 1,
            }
        }
        model.absorb(&action, &expected, &seen);
        t.actions += 1;
    }
    let hits = plaintext_hits(dir.path(), &w.secrets());
    if let Some((f, s)) = hits.first() {
        return Err(format!("seed {seed}: {} holds {s:?} in the clear", f.display()));
    }
    Ok(t)
}
