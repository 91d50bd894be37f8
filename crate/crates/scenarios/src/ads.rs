//! Ad matching: an advertiser trains models over two publishers' user
//! tables. The fuzzy join of the two tables is cached as an intermediate so
//! later models skip it.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use escrow_core::contract::{ArgSpec, Proposal, UseLimit};
use escrow_core::runtime::{ContractOutcome, ExecutionContext, ParamDescriptor, SharingProgram};
use escrow_core::{AgentId, ContractId, DataElementId, EscrowError};
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};

use crate::fraud::both;
use crate::fuzzy::fuzzy_join;
use crate::ml::{LogisticRegression, Mlp, TrainConfig, accuracy};
use crate::stage::Stage;
use crate::table::Table;
use crate::{Probe, Result, ScenarioError, ScenarioProgram, StepOutcome, args, synth};

pub const JOINED_KEY: &str = "joined_data";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lr,
    Mlp,
}

impl ModelKind {
    /// Names starting with `mlp` select the MLP; anything else logistic regression.
    pub fn from_model_name(name: &str) -> Self {
        if name.to_ascii_lowercase().starts_with("mlp") { ModelKind::Mlp } else { ModelKind::Lr }
    }
}

#[derive(Debug, Clone)]
pub struct AdsOptions {
    /// Cache the joined table as an intermediate.
    pub reuse: bool,
    pub lr: TrainConfig,
    pub mlp: TrainConfig,
    pub probe: Arc<Probe>,
}

impl Default for AdsOptions {
    fn default() -> Self {
        AdsOptions {
            reuse: true,
            lr: TrainConfig { epochs: 40, learning_rate: 0.5, seed: 1 },
            mlp: TrainConfig { epochs: 3, learning_rate: 0.1, seed: 1 },
            probe: Arc::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdModel {
    pub model_name: String,
    pub kind: ModelKind,
    pub features: Vec<String>,
    pub rows: usize,
    pub accuracy: f64,
}

/// `column op number` with op one of `< <= > >= == !=`.
pub fn parse_query(q: &str) -> Result<(String, String, f64)> {
    for op in ["<=", ">=", "==", "!=", "<", ">"] {
        if let Some((l, r)) = q.split_once(op) {
            let v = r.trim().parse::<f64>().map_err(|_| ScenarioError::Data(format!("bad query value in {q:?}")))?;
            return Ok((l.trim().to_string(), op.to_string(), v));
        }
    }
    Err(ScenarioError::Data(format!("bad query {q:?}")))
}

fn apply_query(t: &Table, q: &Value) -> Result<Table> {
    let Some(q) = q.as_str() else { return Ok(t.clone()) };
    let (col, op, v) = parse_query(q)?;
    let c = t.num(&col)?;
    let keep = |x: f64| match op.as_str() {
        "<" => x < v,
        "<=" => x <= v,
        ">" => x > v,
        ">=" => x >= v,
        "==" => x == v,
        _ => x != v,
    };
    Ok(t.filter(|r| keep(c[r])))
}

fn join_inputs(ctx: &mut ExecutionContext<'_>) -> escrow_core::Result<Table> {
    let mut tables = Vec::new();
    for de in ctx.get_all_accessible_des()? {
        let t = Table::from_csv(&ctx.read(de)?)?;
        if t.has("email") && t.has("name") {
            tables.push(t);
        }
    }
    let [left, right] = tables.as_slice() else {
        return Err(EscrowError::InvalidArgument("ad matching needs exactly two user tables".into()));
    };
    let (joined, _) = fuzzy_join(left, right)?;
    Ok(joined.numeric_only())
}

fn train(ctx: &mut ExecutionContext<'_>, a: &escrow_core::contract::Args, o: &AdsOptions) -> escrow_core::Result<ContractOutcome> {
    let model_name = args::str(a, "model_name")?.to_string();
    let label = args::str(a, "label_name")?;
    let query = args::get(a, "query")?;
    let t0 = Instant::now();
    let cached = if o.reuse { ctx.read_intermediate(JOINED_KEY)? } else { None };
    let joined = match cached {
        Some(id) => Table::decode(&ctx.read(id)?)?,
        None => {
            o.probe.record_join();
            let j = join_inputs(ctx)?;
            if o.reuse {
                ctx.write_intermediate(JOINED_KEY, j.encode())?;
            }
            j
        }
    };
    let data = apply_query(&joined, query)?;
    let t1 = Instant::now();
    let features: Vec<String> = data.names().iter().filter(|n| *n != label).cloned().collect();
    let (x, y) = (data.matrix(&features)?, data.num(label)?);
    let kind = ModelKind::from_model_name(&model_name);
    let acc = match kind {
        ModelKind::Lr => accuracy(&LogisticRegression::fit(&x, y, features.len(), &o.lr)?.predict(&x), y),
        ModelKind::Mlp => accuracy(&Mlp::fit(&x, y, features.len(), &o.mlp)?.predict(&x), y),
    };
    o.probe.add_combine(t1 - t0);
    o.probe.add_compute(t1.elapsed());
    let out = AdModel { model_name, kind, features, rows: data.rows(), accuracy: acc };
    Ok(ContractOutcome::Released(serde_json::to_vec(&out).map_err(ScenarioError::from)?))
}

pub fn program(opts: AdsOptions) -> Result<ScenarioProgram> {
    let mut p = SharingProgram::new("ads");
    p.endpoint(
        "propose_contract",
        "Propose a contract with the default lifecycle.",
        vec![
            ParamDescriptor::new("dest_agents", "list[agent]", ""),
            ParamDescriptor::new("des", "list[de]", ""),
            ParamDescriptor::new("f", "str", ""),
            ParamDescriptor::new("args", "argspec", "per-argument patterns"),
            ParamDescriptor::new("max_uses", "uses", "optional; defaults to one use"),
        ],
        |host, a| {
            let dest = args::get(a, "dest_agents")?
                .as_array()
                .ok_or_else(|| EscrowError::InvalidArgument("dest_agents".into()))?
                .iter()
                .map(|v| v.as_u64().map(AgentId).ok_or_else(|| EscrowError::InvalidArgument("dest_agents".into())))
                .collect::<escrow_core::Result<_>>()?;
            let spec: ArgSpec = serde_json::from_value(args::get(a, "args")?.clone())
                .map_err(|e| EscrowError::InvalidArgument(e.to_string()))?;
            let max_uses = match a.get("max_uses") {
                Some(v) => serde_json::from_value(v.clone()).map_err(|e| EscrowError::InvalidArgument(e.to_string()))?,
                None => UseLimit::default(),
            };
            let c = host.propose_contract(Proposal {
                dest_agents: dest,
                data_elements: args::de_list(a, "des")?.into_iter().collect(),
                function: args::str(a, "f")?.to_string(),
                args: spec,
                conditions: vec![],
                max_uses,
            })?;
            Ok(json!({ "contract_id": c.id, "status": c.status() }))
        },
    )?;
    p.endpoint(
        "approve_contract",
        "Approve a contract with the default lifecycle.",
        vec![ParamDescriptor::new("contract_id", "contract", "")],
        |host, a| Ok(json!({ "status": host.approve_contract(ContractId(args::u64(a, "contract_id")?))? })),
    )?;
    let o = opts.clone();
    both(
        &mut p,
        "train_advertising_model",
        "Join the publishers' users on name and email, then train a model predicting label_name.",
        vec![
            ParamDescriptor::new("model_name", "str", "names starting with mlp train an MLP"),
            ParamDescriptor::new("label_name", "str", ""),
            ParamDescriptor::new("query", "str|null", "optional row filter such as \"age < 30\""),
        ],
        Arc::new(move |ctx, a| train(ctx, a, &o)),
    )?;
    Ok(ScenarioProgram {
        name: "ads".into(),
        program: p,
        fixtures: json!({ "rows": AdsFixtures::default().rows, "overlap": AdsFixtures::default().overlap, "reuse": opts.reuse }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdsFixtures {
    pub rows: usize,
    pub overlap: f64,
}

impl Default for AdsFixtures {
    fn default() -> Self {
        AdsFixtures { rows: 3000, overlap: 0.7 }
    }
}

/// The pass-through proposal: any model name, fixed label, no filter.
pub fn proposal_args(don: AgentId, fb: DataElementId, yt: DataElementId) -> Value {
    json!({
        "dest_agents": [don],
        "des": [fb, yt],
        "f": "train_advertising_model",
        "args": {
            "model_name": { "kind": "any" },
            "label_name": { "kind": "exact", "value": "clicked" },
            "query": { "kind": "any" },
        },
        "max_uses": "unlimited",
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AdsReport {
    pub models: Vec<AdModel>,
    pub joins_before_restart: u64,
    pub joins_after_restart: u64,
    pub after_restart: AdModel,
    pub goal_reached: bool,
    pub raw_data_disclosed: bool,
    pub steps: Vec<crate::stage::Step>,
    pub audit: String,
}

fn model_of(out: &StepOutcome) -> Result<AdModel> {
    let bytes = out.released().ok_or_else(|| ScenarioError::Script(format!("expected release, got {}", out.summary())))?;
    Ok(serde_json::from_slice(bytes)?)
}

/// Runs the ad-matching story. With `reuse` off every call joins again.
pub fn script_with(dir: &Path, seed: u64, reuse: bool) -> Result<AdsReport> {
    let probe = Arc::new(Probe::default());
    let sp = program(AdsOptions { reuse, probe: probe.clone(), ..AdsOptions::default() })?;
    let mut st = Stage::open(dir, sp.program, seed, |c| c.auditors = vec!["auditor".into()])?;
    let don = st.agent("don")?;
    let (fb, yt) = (st.agent("facebook")?, st.agent("youtube")?);
    st.agent("auditor")?;
    let fx = AdsFixtures::default();
    let (fb_csv, yt_csv) = synth::ads_csv(seed, fx.rows, fx.overlap);
    let fb_de = st.upload(fb, "csv", &fb_csv)?;
    let yt_de = st.upload(yt, "csv", &yt_csv)?;

    let proposed = st.call(don, "propose_contract", proposal_args(don, fb_de, yt_de))?;
    let cid = match &proposed {
        StepOutcome::Value { value } => value["contract_id"].as_u64().map(ContractId),
        _ => None,
    }
    .ok_or_else(|| ScenarioError::Script(proposed.summary()))?;
    for publisher in [fb, yt] {
        st.call(publisher, "approve_contract", json!({ "contract_id": cid }))?;
    }

    let mut models = Vec::new();
    for (name, query) in [("lr_ctr", Value::Null), ("mlp_ctr", Value::Null), ("lr_young", json!("age < 30"))] {
        let out = st.call(don, "train_advertising_model", json!({ "model_name": name, "label_name": "clicked", "query": query }))?;
        models.push(model_of(&out)?);
    }
    let joins_before_restart = probe.joins();

    st.restart()?;
    let out = st.call(don, "train_advertising_model", json!({ "model_name": "lr_after_restart", "label_name": "clicked", "query": null }))?;
    let after_restart = model_of(&out)?;
    let joins_after_restart = probe.joins() - joins_before_restart;

    let access = st.escrow().sharing_state().access(don);
    let outputs = access.iter().filter(|d| **d != fb_de && **d != yt_de).count();
    let goal_reached = outputs == models.len() + 1;
    let raw_data_disclosed = access.contains(&fb_de) || access.contains(&yt_de);
    Ok(AdsReport {
        models,
        joins_before_restart,
        joins_after_restart,
        after_restart,
        goal_reached,
        raw_data_disclosed,
        steps: st.steps().to_vec(),
        audit: st.audit_json()?,
    })
}

pub fn script(dir: &Path, seed: u64) -> Result<AdsReport> {
    script_with(dir, seed, true)
}
