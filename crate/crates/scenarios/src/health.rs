//! Causal queries over a national patient registry. Researchers upload
//! tables keyed by CPR number; the registry owner auto-approves every causal
//! query through a standing rule.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use escrow_core::contract::{RuleDecision, RuleMatcher, UseLimit};
use escrow_core::runtime::{ContractOutcome, ExecutionContext, ParamDescriptor, SharingProgram};
use escrow_core::{AgentId, DataElementId, EscrowError};
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};

use crate::fraud::both;
use crate::ml::ols;
use crate::stage::{Stage, exact};
use crate::table::{Column, Table};
use crate::{Result, ScenarioError, ScenarioProgram, StepOutcome, args, synth};

pub const CPR_MISSING: &str = "Error: CPR column does not exist.";
pub const JOIN_KEY: &str = "CPR";

/// Estimates the effect of `treatment` on `outcome` given an adjustment set.
pub trait Estimator: Send + Sync {
    fn estimate(&self, t: &Table, treatment: &str, outcome: &str, adjust: &[String]) -> Result<f64>;
}

/// Coefficient of the treatment in an OLS regression of the outcome on the
/// treatment and the adjustment set.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearAdjustment;

impl Estimator for LinearAdjustment {
    fn estimate(&self, t: &Table, treatment: &str, outcome: &str, adjust: &[String]) -> Result<f64> {
        let mut cols = vec![treatment.to_string()];
        cols.extend(adjust.iter().cloned());
        let x = t.matrix(&cols)?;
        Ok(ols(&x, t.num(outcome)?, cols.len())?[1])
    }
}

/// Directed edges `a -> b`, separated by `;`, `,` or newlines.
pub fn parse_dag(spec: &str) -> Result<Vec<(String, String)>> {
    spec.split([';', ',', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|e| {
            let (a, b) = e.split_once("->").ok_or_else(|| ScenarioError::Data(format!("bad edge {e:?}")))?;
            Ok((a.trim().to_string(), b.trim().to_string()))
        })
        .collect()
}

/// Backdoor adjustment by the treatment's parents.
pub fn adjustment_set(edges: &[(String, String)], treatment: &str) -> Vec<String> {
    let set: BTreeSet<&String> = edges.iter().filter(|(_, b)| b == treatment).map(|(a, _)| a).collect();
    set.into_iter().cloned().collect()
}

/// Inner join of `user` with `extra` columns of `registry` on CPR.
pub fn join_on_cpr(user: &Table, registry: &Table, extra: &[String]) -> Result<Table> {
    let index: HashMap<String, usize> =
        registry.text(JOIN_KEY)?.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
    let (mut li, mut ri) = (Vec::new(), Vec::new());
    for (i, k) in user.text(JOIN_KEY)?.iter().enumerate() {
        if let Some(j) = index.get(k) {
            li.push(i);
            ri.push(*j);
        }
    }
    let (l, r) = (user.take(&li), registry.take(&ri));
    let mut cols: Vec<(String, Column)> = Vec::new();
    for n in l.names() {
        cols.push((n.clone(), l.column(n)?.clone()));
    }
    for n in extra {
        if !l.has(n) {
            cols.push((n.clone(), r.column(n)?.clone()));
        }
    }
    Table::new(cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEstimate {
    pub estimate: f64,
    pub adjustment_set: Vec<String>,
    pub rows: usize,
}

fn causal_query(ctx: &mut ExecutionContext<'_>, a: &escrow_core::contract::Args, est: &dyn Estimator) -> escrow_core::Result<ContractOutcome> {
    let user_de = args::de(a, "user_de_id")?;
    let extra = args::str_list(a, "additional_vars")?;
    let (treatment, outcome) = (args::str(a, "treatment")?, args::str(a, "outcome")?);
    let edges = parse_dag(args::str(a, "dag_spec")?)?;
    let user = Table::from_csv(&ctx.read(user_de)?)?;
    let mut joined = user;
    for de in ctx.get_all_accessible_des()? {
        if de == user_de {
            continue;
        }
        let other = Table::from_csv(&ctx.read(de)?)?;
        if other.has(JOIN_KEY) {
            let wanted: Vec<String> = extra.iter().filter(|v| other.has(v)).cloned().collect();
            joined = join_on_cpr(&joined, &other, &wanted)?;
        }
    }
    if joined.rows() == 0 {
        return Err(EscrowError::FunctionFailed("EmptyJoin: no CPR values in common".into()));
    }
    let adjust = adjustment_set(&edges, treatment);
    if let Some(v) = adjust.iter().find(|v| !joined.has(v)) {
        return Err(EscrowError::InvalidArgument(format!("confounder {v:?} is not available")));
    }
    let estimate = est.estimate(&joined, treatment, outcome, &adjust)?;
    let out = CausalEstimate { estimate, adjustment_set: adjust, rows: joined.rows() };
    Ok(ContractOutcome::Released(serde_json::to_vec(&out).map_err(ScenarioError::from)?))
}

pub fn program(estimator: Arc<dyn Estimator>) -> Result<ScenarioProgram> {
    let mut p = SharingProgram::new("health");
    p.endpoint(
        "upload_data_with_CPR",
        "Upload a table; rejected unless it has a CPR column.",
        vec![ParamDescriptor::new("data", "csv", "")],
        |host, a| {
            let data = args::str(a, "data")?;
            let t = Table::from_csv(data.as_bytes())?;
            if !t.has(JOIN_KEY) {
                return Ok(Value::String(CPR_MISSING.into()));
            }
            let de = host.register_data_element("csv", json!({}), true)?;
            host.upload_data_element(de, data.as_bytes())?;
            Ok(json!({ "de_id": de }))
        },
    )?;
    both(
        &mut p,
        "run_causal_query",
        "Augment the caller's table with registry confounders joined on CPR, then estimate the effect of \
         treatment on outcome.",
        vec![
            ParamDescriptor::new("user_de_id", "de", ""),
            ParamDescriptor::new("additional_vars", "list[str]", "registry columns to join in"),
            ParamDescriptor::new("dag_spec", "str", "edges such as \"a -> b; b -> c\""),
            ParamDescriptor::new("treatment", "str", ""),
            ParamDescriptor::new("outcome", "str", ""),
        ],
        Arc::new(move |ctx, a| causal_query(ctx, a, &*estimator)),
    )?;
    p.endpoint(
        "upload_cmr",
        "Approve every future contract for function f that needs the caller's approval.",
        vec![ParamDescriptor::new("f", "str", "function name")],
        |host, a| {
            let f = args::str(a, "f")?;
            let matcher = RuleMatcher { functions: Some([f.to_string()].into()), ..Default::default() };
            Ok(json!({ "rule_id": host.register_cmr(matcher, RuleDecision::Approve)? }))
        },
    )?;
    Ok(ScenarioProgram { name: "health".into(), program: p, fixtures: json!(HealthFixtures::default()) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HealthFixtures {
    pub population: usize,
    pub first_study: usize,
    pub second_study: usize,
}

impl Default for HealthFixtures {
    fn default() -> Self {
        HealthFixtures { population: 5000, first_study: 1500, second_study: 800 }
    }
}

/// The population and the two researchers' cohorts for `seed`.
pub fn cohort(seed: u64) -> (Vec<synth::Person>, Vec<usize>, Vec<usize>) {
    let fx = HealthFixtures::default();
    let people = synth::population(seed, fx.population);
    let first = synth::sample_indices(seed, 1, fx.population, fx.first_study);
    let second = synth::sample_indices(seed, 2, fx.population, fx.second_study);
    (people, first, second)
}

pub const DAG: &str = "depression -> smoking; depression -> hba1c; smoking -> hba1c";

pub fn query_args(user_de: DataElementId, adjusted: bool) -> Value {
    let (vars, dag) = if adjusted { (json!(["depression"]), DAG) } else { (json!([]), "smoking -> hba1c") };
    json!({
        "user_de_id": user_de,
        "additional_vars": vars,
        "dag_spec": dag,
        "treatment": "smoking",
        "outcome": "hba1c",
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HealthReport {
    pub cpr_rejection: StepOutcome,
    pub adjusted: CausalEstimate,
    pub unadjusted: CausalEstimate,
    pub second_study: CausalEstimate,
    pub empty_join: StepOutcome,
    /// Registry owner's slot on each proposal right after it was made.
    pub registry_slots_auto_approved: bool,
    /// Largest pending queue the registry owner ever had.
    pub registry_max_pending: usize,
    pub goal_reached: bool,
    pub steps: Vec<crate::stage::Step>,
    pub audit: String,
}

fn de_of(out: &StepOutcome) -> Result<DataElementId> {
    match out {
        StepOutcome::Value { value } => {
            value["de_id"].as_u64().map(DataElementId).ok_or_else(|| ScenarioError::Script(out.summary()))
        }
        other => Err(ScenarioError::Script(other.summary())),
    }
}

fn estimate_of(out: &StepOutcome) -> Result<CausalEstimate> {
    let bytes = out.released().ok_or_else(|| ScenarioError::Script(format!("expected release, got {}", out.summary())))?;
    Ok(serde_json::from_slice(bytes)?)
}

fn csv_string(bytes: Vec<u8>) -> Result<String> {
    String::from_utf8(bytes).map_err(|e| ScenarioError::Data(e.to_string()))
}

pub fn script(dir: &Path, seed: u64) -> Result<HealthReport> {
    let sp = program(Arc::new(LinearAdjustment))?;
    let mut st = Stage::open(dir, sp.program, seed, |c| c.auditors = vec!["auditor".into()])?;
    let dnpr = st.agent("dnpr")?;
    let dadr = st.agent("dadr")?;
    let steno = st.agent("steno")?;
    let outsider = st.agent("outsider")?;
    st.agent("auditor")?;
    let (people, first, second) = cohort(seed);

    let no_cpr = csv_string(synth::study_csv(&people, &first))?.replacen("CPR,", "PatientID,", 1);
    let cpr_rejection = st.call(dadr, "upload_data_with_CPR", json!({ "data": no_cpr }))?;

    let reg = st.call(dnpr, "upload_data_with_CPR", json!({ "data": csv_string(synth::registry_csv(&people))? }))?;
    let registry = de_of(&reg)?;
    st.call(dnpr, "upload_cmr", json!({ "f": "run_causal_query" }))?;

    let mut auto = true;
    let mut max_pending = 0;
    let mut query = |st: &mut Stage, who: AgentId, de: DataElementId, adjusted: bool| -> Result<StepOutcome> {
        let a = query_args(de, adjusted);
        let c = st.propose(who, exact("run_causal_query", &[who], &[de, registry], a.clone(), UseLimit::Times(1)))?;
        auto &= !st.escrow().contract(c)?.pending_for(dnpr);
        max_pending = max_pending.max(st.escrow().pending_contracts(dnpr)?.len());
        st.approve(who, c)?;
        st.call(who, "run_causal_query", a)
    };

    let mine = de_of(&st.call(dadr, "upload_data_with_CPR", json!({ "data": csv_string(synth::study_csv(&people, &first))? }))?)?;
    let adjusted = estimate_of(&query(&mut st, dadr, mine, true)?)?;
    let unadjusted = estimate_of(&query(&mut st, dadr, mine, false)?)?;

    let theirs = de_of(&st.call(steno, "upload_data_with_CPR", json!({ "data": csv_string(synth::study_csv(&people, &second))? }))?)?;
    let second_study = estimate_of(&query(&mut st, steno, theirs, true)?)?;

    // A cohort nobody in the registry belongs to.
    let strangers = synth::population(seed ^ 0xFFFF, 50);
    let mut rows = b"CPR,smoking,hba1c\n".to_vec();
    for (i, p) in strangers.iter().enumerate() {
        rows.extend(format!("X{},{},{}\n", synth::cpr(i), p.smoking, p.hba1c).into_bytes());
    }
    let foreign = de_of(&st.call(outsider, "upload_data_with_CPR", json!({ "data": csv_string(rows)? }))?)?;
    let empty_join = query(&mut st, outsider, foreign, true)?;

    let goal_reached = [dadr, steno].iter().all(|r| {
        st.escrow().sharing_state().access(*r).iter().any(|d| {
            st.escrow().element(*d).is_some_and(|e| e.record.provenance.contains(&registry))
        })
    });
    Ok(HealthReport {
        cpr_rejection,
        adjusted,
        unadjusted,
        second_study,
        empty_join,
        registry_slots_auto_approved: auto,
        registry_max_pending: max_pending,
        goal_reached,
        steps: st.steps().to_vec(),
        audit: st.audit_json()?,
    })
}

/// Summary used by the CLI.
pub fn summary(r: &HealthReport) -> BTreeMap<&'static str, Value> {
    BTreeMap::from([
        ("true_effect", json!(synth::TRUE_EFFECT)),
        ("adjusted", json!(r.adjusted.estimate)),
        ("unadjusted", json!(r.unadjusted.estimate)),
        ("second_study", json!(r.second_study.estimate)),
        ("registry_max_pending", json!(r.registry_max_pending)),
    ])
}
