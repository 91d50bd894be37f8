//! One executable contract per canonical dataflow pattern. Each script
//! reaches its goal state and then exercises the condition that keeps the
//! pattern's constraint.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use escrow_core::contract::UseLimit;
use escrow_core::runtime::{ContractOutcome, ExecutionContext, ParamDescriptor, SharingProgram};
use escrow_core::sharing_model::{ConstraintSpec, GoalSpec, is_common_goal, violates_common_constraint};
use escrow_core::{AgentId, DataElementId, EscrowError};
use serde::Serialize;
use serde_json::json;

use crate::ml::{LogisticRegression, TrainConfig, accuracy};
use crate::stage::{Stage, exact};
use crate::table::Table;
use crate::{Result, ScenarioError, StepOutcome, args, synth};

pub const TOO_FEW_CELLS: &str = "Query region covers too few cells.";
pub const NOT_TRAINED: &str = "Training requirement not met.";
pub const NO_GAIN: &str = "Performance requirement not met.";
/// Fewest cells a spatial aggregate may cover.
pub const MIN_CELLS: usize = 20;
/// Fewest distinct users a released bigram must come from.
pub const MIN_USERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    ManyToMany,
    OneToMany,
    OneToOne,
    ManyToOne,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [Pattern::ManyToMany, Pattern::OneToMany, Pattern::OneToOne, Pattern::ManyToOne];
}

#[derive(Debug, Clone, Serialize)]
pub struct PatternReport {
    pub pattern: Pattern,
    pub example: &'static str,
    pub goal_reached: bool,
    pub constraint_violated: bool,
    /// The call that the pattern's condition must refuse.
    pub rejection: StepOutcome,
    pub rejection_observed: bool,
    pub steps: Vec<crate::stage::Step>,
}

fn released(bytes: Vec<u8>) -> escrow_core::Result<ContractOutcome> {
    Ok(ContractOutcome::Released(bytes))
}

fn tables(ctx: &mut ExecutionContext<'_>) -> escrow_core::Result<Vec<(DataElementId, Table)>> {
    let mut out = Vec::new();
    for de in ctx.get_all_accessible_des()? {
        out.push((de, Table::from_csv(&ctx.read(de)?)?));
    }
    Ok(out)
}

fn role(ctx: &mut ExecutionContext<'_>, de: DataElementId) -> escrow_core::Result<(AgentId, String)> {
    let info = ctx.element(de)?;
    let role = info.access_parameters.get("role").and_then(|v| v.as_str()).unwrap_or("").to_string();
    Ok((info.owner, role))
}

pub fn program() -> Result<SharingProgram> {
    let mut p = SharingProgram::new("patterns");
    p.contract_function(
        "spatial_query",
        "Cell count and mean load inside a bounding box across every provider's cells.",
        ["x_min", "x_max", "y_min", "y_max"].iter().map(|n| ParamDescriptor::new(n, "float", "")).collect(),
        |ctx, a| {
            let (x0, x1) = (args::f64(a, "x_min")?, args::f64(a, "x_max")?);
            let (y0, y1) = (args::f64(a, "y_min")?, args::f64(a, "y_max")?);
            let (mut n, mut load) = (0usize, 0.0);
            for (_, t) in tables(ctx)? {
                let (x, y, l) = (t.num("x")?, t.num("y")?, t.num("load")?);
                for i in 0..t.rows() {
                    if (x0..=x1).contains(&x[i]) && (y0..=y1).contains(&y[i]) {
                        n += 1;
                        load += l[i];
                    }
                }
            }
            if n < MIN_CELLS {
                return Ok(ContractOutcome::PreconditionFailed(TOO_FEW_CELLS.into()));
            }
            released(serde_json::to_vec(&json!({ "cells": n, "mean_load": load / n as f64 })).map_err(ScenarioError::from)?)
        },
    )?;
    p.contract_function(
        "share_with_trained",
        "Release the dataset to callers listed in the source's training roster.",
        vec![],
        |ctx, _| {
            let mut dataset = None;
            let mut roster = None;
            for de in ctx.get_all_accessible_des()? {
                match role(ctx, de)?.1.as_str() {
                    "roster" => roster = Some(de),
                    _ => dataset = Some(de),
                }
            }
            let (Some(dataset), Some(roster)) = (dataset, roster) else {
                return Err(EscrowError::InvalidArgument("contract needs a dataset and a roster".into()));
            };
            let trained = Table::from_csv(&ctx.read(roster)?)?.num("agent_id")?.iter().any(|a| *a as u64 == ctx.caller().get());
            if !trained {
                return Ok(ContractOutcome::PreconditionFailed(NOT_TRAINED.into()));
            }
            released(ctx.read(dataset)?)
        },
    )?;
    p.contract_function(
        "share_if_model_improves",
        "Release the seller's data if it raises the buyer's test accuracy by min_gain.",
        vec![ParamDescriptor::new("min_gain", "float", "absolute accuracy gain")],
        |ctx, a| {
            let min_gain = args::f64(a, "min_gain")?;
            let (mut train, mut test, mut offer) = (None, None, None);
            for de in ctx.get_all_accessible_des()? {
                match role(ctx, de)?.1.as_str() {
                    "train" => train = Some(de),
                    "test" => test = Some(de),
                    _ => offer = Some(de),
                }
            }
            let (Some(train), Some(test), Some(offer)) = (train, test, offer) else {
                return Err(EscrowError::InvalidArgument("contract needs train, test and offered data".into()));
            };
            let train_t = Table::from_csv(&ctx.read(train)?)?;
            let test_t = Table::from_csv(&ctx.read(test)?)?;
            let offer_bytes = ctx.read(offer)?;
            let offer_t = Table::from_csv(&offer_bytes)?;
            let features: Vec<String> = train_t.names().iter().filter(|n| *n != "label").cloned().collect();
            let cfg = TrainConfig { epochs: 200, learning_rate: 0.5, seed: 0 };
            let score = |t: &Table| -> Result<f64> {
                let m = LogisticRegression::fit(&t.matrix(&features)?, t.num("label")?, features.len(), &cfg)?;
                Ok(accuracy(&m.predict(&test_t.matrix(&features)?), test_t.num("label")?))
            };
            let base = score(&train_t)?;
            let augmented = score(&Table::vstack(&[train_t.clone(), offer_t])?)?;
            if augmented - base < min_gain {
                return Ok(ContractOutcome::PreconditionFailed(NO_GAIN.into()));
            }
            released(offer_bytes)
        },
    )?;
    p.contract_function(
        "train_keyboard_model",
        "Bigram next-word counts over every user's messages, keeping bigrams typed by several users.",
        vec![],
        |ctx, _| {
            let mut users: BTreeMap<String, BTreeSet<DataElementId>> = BTreeMap::new();
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            for de in ctx.get_all_accessible_des()? {
                let text = String::from_utf8_lossy(&ctx.read(de)?).into_owned();
                for line in text.lines() {
                    let w: Vec<&str> = line.split_whitespace().collect();
                    for pair in w.windows(2) {
                        let k = format!("{} {}", pair[0], pair[1]);
                        users.entry(k.clone()).or_default().insert(de);
                        *counts.entry(k).or_default() += 1;
                    }
                }
            }
            counts.retain(|k, _| users[k].len() >= MIN_USERS);
            released(serde_json::to_vec(&counts).map_err(ScenarioError::from)?)
        },
    )?;
    p.contract_function("export_corpus", "Concatenate every user's raw messages.", vec![], |ctx, _| {
        let mut out = Vec::new();
        for de in ctx.get_all_accessible_des()? {
            out.extend(ctx.read(de)?);
        }
        released(out)
    })?;
    Ok(p)
}

fn open(dir: &Path, seed: u64) -> Result<Stage> {
    Stage::open(dir, program()?, seed, |_| {})
}

/// Goal: each agent in `who` holds an output derived from all of `from`.
fn derived_goal(st: &Stage, who: &[AgentId], from: &[DataElementId]) -> bool {
    let e = st.escrow();
    let from: BTreeSet<DataElementId> = from.iter().copied().collect();
    let owned: BTreeMap<AgentId, BTreeSet<DataElementId>> = who
        .iter()
        .map(|a| {
            let outs = e
                .sharing_state()
                .access(*a)
                .into_iter()
                .filter(|d| e.element(*d).is_some_and(|x| from.is_subset(&x.record.provenance.iter().copied().collect())))
                .collect();
            (*a, outs)
        })
        .collect();
    let goals: Vec<GoalSpec> = who
        .iter()
        .map(|a| {
            let (a, outs) = (*a, owned[a].clone());
            GoalSpec::new(a, move |s| outs.iter().any(|d| s.can_access(a, *d)))
        })
        .collect();
    is_common_goal(&e.sharing_state(), &goals)
}

/// Constraint: some agent in `who` can access a raw element owned by someone else.
fn raw_disclosed(st: &Stage, who: &[AgentId], raw: &[(AgentId, DataElementId)]) -> bool {
    let constraints: Vec<ConstraintSpec> = who
        .iter()
        .map(|a| {
            let (a, foreign): (AgentId, Vec<DataElementId>) =
                (*a, raw.iter().filter(|(o, _)| o != a).map(|(_, d)| *d).collect());
            ConstraintSpec::new(a, move |s| foreign.iter().any(|d| s.can_access(a, *d)))
        })
        .collect();
    violates_common_constraint(&st.escrow().sharing_state(), &constraints)
}

/// Mobile network federation: providers pool cell data and each learns
/// aggregate statistics; small regions that would expose single cells are
/// refused.
pub fn many_to_many(dir: &Path, seed: u64) -> Result<PatternReport> {
    let mut st = open(dir, seed)?;
    let providers: Vec<AgentId> = (0..3).map(|i| st.agent(&format!("provider_{i}"))).collect::<Result<_>>()?;
    let mut raw = Vec::new();
    for (i, p) in providers.iter().enumerate() {
        raw.push((*p, st.upload(*p, "csv", &synth::cells_csv(seed, i as u64, 200))?));
    }
    let des: Vec<DataElementId> = raw.iter().map(|(_, d)| *d).collect();
    let wide = json!({ "x_min": 0.0, "x_max": 50.0, "y_min": 0.0, "y_max": 50.0 });
    let c = st.propose(providers[0], exact("spatial_query", &providers, &des, wide.clone(), UseLimit::Times(3)))?;
    st.approve_all(c)?;
    for p in &providers {
        st.call(*p, "spatial_query", wide.clone())?;
    }
    let goal_reached = derived_goal(&st, &providers, &des);
    let narrow = json!({ "x_min": 0.0, "x_max": 2.0, "y_min": 0.0, "y_max": 2.0 });
    let c = st.propose(providers[1], exact("spatial_query", &providers, &des, narrow.clone(), UseLimit::Times(3)))?;
    st.approve_all(c)?;
    let rejection = st.call(providers[1], "spatial_query", narrow)?;
    Ok(PatternReport {
        pattern: Pattern::ManyToMany,
        example: "mobile network federation",
        goal_reached,
        constraint_violated: raw_disclosed(&st, &providers, &raw),
        rejection_observed: rejection.message() == Some(TOO_FEW_CELLS),
        rejection,
        steps: st.steps().to_vec(),
    })
}

/// Medical database shared with every user who completed training.
pub fn one_to_many(dir: &Path, seed: u64) -> Result<PatternReport> {
    let mut st = open(dir, seed)?;
    let db = st.agent("medical_db")?;
    let (trained, untrained) = (st.agent("researcher_trained")?, st.agent("researcher_untrained")?);
    let data = synth::labelled_csv(seed, 1, 300, 4, 0.0);
    let dataset = st.upload_with(db, "csv", json!({ "role": "dataset" }), &data)?;
    let roster = st.upload_with(db, "csv", json!({ "role": "roster" }), format!("agent_id\n{}\n", trained.get()).as_bytes())?;
    let c = st.propose(db, exact("share_with_trained", &[trained, untrained], &[dataset, roster], json!({}), UseLimit::Times(2)))?;
    st.approve_all(c)?;
    let granted = st.call(trained, "share_with_trained", json!({}))?;
    let goal_reached = granted.released() == Some(data.as_slice()) && derived_goal(&st, &[trained], &[dataset]);
    let rejection = st.call(untrained, "share_with_trained", json!({}))?;
    let nothing_for_untrained = st.escrow().sharing_state().access(untrained).is_empty();
    Ok(PatternReport {
        pattern: Pattern::OneToMany,
        example: "training-gated medical dataset",
        goal_reached,
        constraint_violated: !nothing_for_untrained,
        rejection_observed: rejection.message() == Some(NOT_TRAINED),
        rejection,
        steps: st.steps().to_vec(),
    })
}

/// Data market: the buyer pays for (receives) a seller's data only if it
/// improves the buyer's model by three accuracy points.
pub fn one_to_one(dir: &Path, seed: u64) -> Result<PatternReport> {
    let mut st = open(dir, seed)?;
    let buyer = st.agent("buyer")?;
    let (good, noisy) = (st.agent("seller_good")?, st.agent("seller_noisy")?);
    let train = st.upload_with(buyer, "csv", json!({ "role": "train" }), &synth::labelled_csv(seed, 1, 12, 8, 0.3))?;
    let test = st.upload_with(buyer, "csv", json!({ "role": "test" }), &synth::labelled_csv(seed, 2, 2000, 8, 0.0))?;
    let offer = synth::labelled_csv(seed, 3, 2000, 8, 0.0);
    let good_de = st.upload_with(good, "csv", json!({ "role": "offer" }), &offer)?;
    let noisy_de = st.upload_with(noisy, "csv", json!({ "role": "offer" }), &synth::labelled_csv(seed, 4, 2000, 8, 1.0))?;
    let gain = json!({ "min_gain": 0.03 });

    let c = st.propose(buyer, exact("share_if_model_improves", &[buyer], &[good_de, train, test], gain.clone(), UseLimit::Times(1)))?;
    st.approve_all(c)?;
    let bought = st.call(buyer, "share_if_model_improves", gain.clone())?;
    let goal_reached = bought.released() == Some(offer.as_slice()) && derived_goal(&st, &[buyer], &[good_de]);

    let c = st.propose(buyer, exact("share_if_model_improves", &[buyer], &[noisy_de, train, test], gain.clone(), UseLimit::Times(1)))?;
    st.approve_all(c)?;
    let rejection = st.call(buyer, "share_if_model_improves", gain)?;
    let leaked = derived_goal(&st, &[buyer], &[noisy_de]);
    Ok(PatternReport {
        pattern: Pattern::OneToOne,
        example: "performance-conditioned data sale",
        goal_reached,
        constraint_violated: leaked,
        rejection_observed: rejection.message() == Some(NO_GAIN),
        rejection,
        steps: st.steps().to_vec(),
    })
}

/// Keyboard model trained from many users' messages; the collector gets the
/// model, never the messages.
pub fn many_to_one(dir: &Path, seed: u64) -> Result<PatternReport> {
    let mut st = open(dir, seed)?;
    let collector = st.agent("keyboard_vendor")?;
    let users: Vec<AgentId> = (0..4).map(|i| st.agent(&format!("user_{i}"))).collect::<Result<_>>()?;
    let mut raw = Vec::new();
    for (i, u) in users.iter().enumerate() {
        raw.push((*u, st.upload(*u, "bytes", synth::keyboard_text(seed, i as u64, 40).as_bytes())?));
    }
    let des: Vec<DataElementId> = raw.iter().map(|(_, d)| *d).collect();
    let c = st.propose(collector, exact("train_keyboard_model", &[collector], &des, json!({}), UseLimit::Times(1)))?;
    st.approve_all(c)?;
    let model = st.call(collector, "train_keyboard_model", json!({}))?;
    let goal_reached = model.released().is_some() && derived_goal(&st, &[collector], &des);

    let c = st.propose(collector, exact("export_corpus", &[collector], &des, json!({}), UseLimit::Times(1)))?;
    st.deny(users[0], c, "raw messages stay with the user")?;
    let rejection = st.call(collector, "export_corpus", json!({}))?;
    let mut everyone = users.clone();
    everyone.push(collector);
    Ok(PatternReport {
        pattern: Pattern::ManyToOne,
        example: "keyboard model collection",
        goal_reached,
        constraint_violated: raw_disclosed(&st, &everyone, &raw),
        rejection_observed: rejection.error_code() == Some("NoMatchingContract"),
        rejection,
        steps: st.steps().to_vec(),
    })
}

pub fn run(pattern: Pattern, dir: &Path, seed: u64) -> Result<PatternReport> {
    match pattern {
        Pattern::ManyToMany => many_to_many(dir, seed),
        Pattern::OneToMany => one_to_many(dir, seed),
        Pattern::OneToOne => one_to_one(dir, seed),
        Pattern::ManyToOne => many_to_one(dir, seed),
    }
}
