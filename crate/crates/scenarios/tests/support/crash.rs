//! Crash injection over recorded mutation streams.

use escrow_core::Escrow;
use escrow_core::escrow::{CrashPlan, CrashPoint};
use escrow_scenarios::stage::agent_key;

use super::scan::plaintext_hits;
use super::world::{Observed, World, program};

pub const POINTS: [CrashPoint; 3] = [CrashPoint::BeforeAppend, CrashPoint::TornAppend, CrashPoint::AfterAppend];

/// Log records a full stream of `ops` actions for `seed` produces.
pub fn commits(seed: u64, ops: usize) -> u64 {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = {
        let mut w = World::open(dir.path(), seed);
        for _ in 0..ops {
            let a = w.next_action();
            w.perform(&a);
        }
        w.config.clone()
    };
    let e = Escrow::open(config, program()).expect("reopen");
    assert_eq!(e.recovery_report().checkpoint_seq, None);
    e.recovery_report().log_records as u64
}

/// Replays the stream until commit `plan.at_commit` crashes, reopens, hands
/// every agent key back, and compares the recovered state with the state at
/// the crash.
pub fn crash_and_recover(seed: u64, ops: usize, plan: CrashPlan) -> Result<usize, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (config, expected, secrets, ran) = {
        let mut w = World::open(dir.path(), seed);
        w.escrow.inject_crash(plan);
        let mut ran = None;
        for i in 0..ops {
            let a = w.next_action();
            if w.perform(&a) == Observed::Error("Crashed") || w.escrow.is_crashed() {
                ran = Some(i + 1);
                break;
            }
        }
        let Some(ran) = ran else {
            return Err(format!("seed {seed}: {plan:?} never fired"));
        };
        (w.config.clone(), w.escrow.state(), w.secrets(), ran)
    };
    let e = Escrow::open(config, program()).map_err(|e| format!("reopen: {e}"))?;
    for rec in expected.agents.values() {
        let id = e.agent_id(&rec.external_id).ok_or_else(|| format!("agent {} lost", rec.external_id))?;
        e.submit_key(id, agent_key(seed, &rec.external_id)).map_err(|e| format!("submit key: {e}"))?;
    }
    if e.deferred_records() != 0 {
        return Err(format!("seed {seed} {plan:?}: {} records still deferred", e.deferred_records()));
    }
    if e.state() != expected {
        return Err(format!("seed {seed} {plan:?}: recovered state differs from the state at the crash"));
    }
    drop(e);
    if let Some((f, s)) = plaintext_hits(dir.path(), &secrets).first() {
        return Err(format!("seed {seed} {plan:?}: {} holds {s:?} in the clear", f.display()));
    }
    Ok(ran)
}
