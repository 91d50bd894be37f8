//! Joint fraud detection across banks: data preparation functions and a
//! model that is released only if every bank contributed enough rows and
//! the model is accurate enough on held-out data.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use escrow_core::contract::{Args, UseLimit};
use escrow_core::runtime::{
    ContractOutcome, ExecutionContext, FunctionBody, FunctionKind, FunctionRef, ParamDescriptor, SharingProgram,
};
use escrow_core::sharing_model::{ConstraintSpec, GoalSpec, is_common_goal, violates_common_constraint};
use escrow_core::{DataElementId, EscrowError};
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};

use crate::ml::{LogisticRegression, TrainConfig, accuracy, jaccard, ks_statistic};
use crate::stage::{Stage, exact};
use crate::table::{Column, Table};
use crate::{Probe, Result, ScenarioError, ScenarioProgram, args, synth};

pub const SIZE_FAILED: &str = "Input size constraint failed.";
pub const ACCURACY_FAILED: &str = "Accuracy constraint failed";

#[derive(Debug, Clone, Default)]
pub struct FraudOptions {
    pub train: TrainConfig,
    pub probe: Option<Arc<Probe>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FraudModel {
    pub features: Vec<String>,
    pub model: LogisticRegression,
    pub accuracy: f64,
}

type Body = dyn Fn(&mut ExecutionContext<'_>, &Args) -> escrow_core::Result<ContractOutcome> + Send + Sync;

/// Registers a function agents see as an endpoint but that only runs under
/// a contract.
pub(crate) fn both(
    p: &mut SharingProgram,
    name: &str,
    description: &str,
    params: Vec<ParamDescriptor>,
    body: Arc<Body>,
) -> escrow_core::Result<()> {
    let fref = FunctionRef { name: name.into(), kind: FunctionKind::Both, params, description: description.into() };
    p.register(fref, FunctionBody::Contract(body))
}

fn read_table(ctx: &mut ExecutionContext<'_>, de: DataElementId) -> escrow_core::Result<Table> {
    Ok(Table::from_csv(&ctx.read(de)?)?)
}

fn released(v: &impl Serialize) -> escrow_core::Result<ContractOutcome> {
    Ok(ContractOutcome::Released(serde_json::to_vec(v).map_err(ScenarioError::from)?))
}

/// Model features: numeric columns other than the label and `Time`.
fn features_of(t: &Table, label: &str) -> Vec<String> {
    t.schema()
        .into_iter()
        .filter(|c| c.type_name == "numeric" && c.name != label && c.name != "Time")
        .map(|c| c.name)
        .collect()
}

/// Training and test tables, or `None` if some training element is below
/// `min_rows`. Stops reading at the first undersized element.
fn read_inputs(ctx: &mut ExecutionContext<'_>, a: &Args, min_rows: usize) -> escrow_core::Result<Option<(Table, Table)>> {
    let mut parts = Vec::new();
    for de in args::de_list(a, "train_de_ids")? {
        let t = read_table(ctx, de)?;
        if t.rows() < min_rows {
            return Ok(None);
        }
        parts.push(t);
    }
    let mut tests = Vec::new();
    for de in args::de_list(a, "test_de_ids")? {
        tests.push(read_table(ctx, de)?);
    }
    Ok(Some((Table::vstack(&parts)?, Table::vstack(&tests)?)))
}

pub fn program(opts: FraudOptions) -> Result<ScenarioProgram> {
    let mut p = SharingProgram::new("fraud");
    p.endpoint(
        "upload_credit_transaction_data",
        "For banks to upload their transaction data.",
        vec![ParamDescriptor::new("data", "csv", "transactions with a label column")],
        |host, a| {
            let data = args::str(a, "data")?;
            let t = Table::from_csv(data.as_bytes())?;
            if t.rows() == 0 {
                return Err(EscrowError::InvalidArgument("no transactions in upload".into()));
            }
            let de = host.register_data_element("csv", json!({ "rows": t.rows() }), true)?;
            host.upload_data_element(de, data.as_bytes())?;
            Ok(json!({ "de_id": de }))
        },
    )?;

    both(
        &mut p,
        "show_schema",
        "Return schema of DEs in de_ids.",
        vec![ParamDescriptor::new("de_ids", "list[de]", "")],
        Arc::new(|ctx, a| {
            let mut out = BTreeMap::new();
            for de in args::de_list(a, "de_ids")? {
                out.insert(de.get(), read_table(ctx, de)?.schema());
            }
            released(&out)
        }),
    )?;

    both(
        &mut p,
        "share_sample",
        "Return samples of size sample_size for DEs in de_ids.",
        vec![ParamDescriptor::new("de_ids", "list[de]", ""), ParamDescriptor::new("sample_size", "int", "")],
        Arc::new(|ctx, a| {
            let n = args::u64(a, "sample_size")? as usize;
            let mut out = BTreeMap::new();
            for de in args::de_list(a, "de_ids")? {
                let csv = read_table(ctx, de)?.head(n).to_csv();
                out.insert(de.get(), String::from_utf8_lossy(&csv).into_owned());
            }
            released(&out)
        }),
    )?;

    both(
        &mut p,
        "check_column_compatibility",
        "Compare two lists of columns: KS statistic for numeric columns, Jaccard similarity for text columns.",
        vec![
            ParamDescriptor::new("de_1", "de", ""),
            ParamDescriptor::new("de_2", "de", ""),
            ParamDescriptor::new("cols_1", "list[str]", ""),
            ParamDescriptor::new("cols_2", "list[str]", ""),
        ],
        Arc::new(|ctx, a| {
            let (c1, c2) = (args::str_list(a, "cols_1")?, args::str_list(a, "cols_2")?);
            if c1.len() != c2.len() {
                return Err(EscrowError::InvalidArgument("cols_1 and cols_2 differ in length".into()));
            }
            let t1 = read_table(ctx, args::de(a, "de_1")?)?;
            let t2 = read_table(ctx, args::de(a, "de_2")?)?;
            let mut out = Vec::new();
            for (x, y) in c1.iter().zip(&c2) {
                let (metric, value) = match (t1.column(x)?, t2.column(y)?) {
                    (Column::Num(u), Column::Num(v)) => ("ks", ks_statistic(u, v)),
                    _ => ("jaccard", jaccard(&t1.text(x)?, &t2.text(y)?)),
                };
                out.push(json!({ "col_1": x, "col_2": y, "metric": metric, "value": value }));
            }
            released(&out)
        }),
    )?;

    let train = opts.train;
    let probe = opts.probe.clone();
    both(
        &mut p,
        "train_fraud_model",
        "Train a joint model; released only if every training DE has at least size_constraint rows \
         and test accuracy reaches target_accuracy.",
        vec![
            ParamDescriptor::new("train_de_ids", "list[de]", ""),
            ParamDescriptor::new("size_constraint", "int", "minimum rows per training DE"),
            ParamDescriptor::new("test_de_ids", "list[de]", ""),
            ParamDescriptor::new("target_accuracy", "float", ""),
            ParamDescriptor::new("label_name", "str", ""),
        ],
        Arc::new(move |ctx, a| {
            let label = args::str(a, "label_name")?;
            let min_rows = args::u64(a, "size_constraint")? as usize;
            let target = args::f64(a, "target_accuracy")?;
            let t0 = Instant::now();
            let inputs = read_inputs(ctx, a, min_rows);
            let t1 = Instant::now();
            if let Some(p) = &probe {
                p.add_combine(t1 - t0);
            }
            let Some((train_t, test_t)) = inputs? else {
                return Ok(ContractOutcome::PreconditionFailed(SIZE_FAILED.into()));
            };
            let features = features_of(&train_t, label);
            let (x, y) = (train_t.matrix(&features)?, train_t.num(label)?);
            let (xt, yt) = (test_t.matrix(&features)?, test_t.num(label)?);
            let model = LogisticRegression::fit(&x, y, features.len(), &train)?;
            let acc = accuracy(&model.predict(&xt), yt);
            if let Some(p) = &probe {
                p.add_compute(t1.elapsed());
            }
            if acc < target {
                return Ok(ContractOutcome::PostconditionFailed(ACCURACY_FAILED.into()));
            }
            released(&FraudModel { features, model, accuracy: acc })
        }),
    )?;

    Ok(ScenarioProgram { name: "fraud".into(), program: p, fixtures: json!(FraudFixtures::default()) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FraudFixtures {
    pub train_rows: [usize; 2],
    pub test_rows: usize,
    pub size_constraint: usize,
    pub target_accuracy: f64,
}

impl Default for FraudFixtures {
    fn default() -> Self {
        FraudFixtures { train_rows: [2000, 1500], test_rows: 600, size_constraint: 1000, target_accuracy: 0.75 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FraudReport {
    pub schema: Value,
    pub compatibility: Value,
    /// Released to each bank under the approved contract.
    pub models: Vec<FraudModel>,
    pub size_outcome: crate::StepOutcome,
    pub accuracy_outcome: crate::StepOutcome,
    pub goal_reached: bool,
    pub constraint_violated: bool,
    pub steps: Vec<crate::stage::Step>,
    pub audit: String,
}

fn upload(stage: &mut Stage, bank: escrow_core::AgentId, csv: Vec<u8>) -> Result<DataElementId> {
    let data = String::from_utf8(csv).map_err(|e| ScenarioError::Data(e.to_string()))?;
    let out = stage.call(bank, "upload_credit_transaction_data", json!({ "data": data }))?;
    match out {
        crate::StepOutcome::Value { value } => {
            value["de_id"].as_u64().map(DataElementId).ok_or_else(|| ScenarioError::Script("no de_id".into()))
        }
        other => Err(ScenarioError::Script(format!("upload failed: {}", other.summary()))),
    }
}

fn json_of(out: &crate::StepOutcome) -> Result<Value> {
    let bytes = out.released().ok_or_else(|| ScenarioError::Script(format!("expected release, got {}", out.summary())))?;
    Ok(serde_json::from_slice(bytes)?)
}

/// Two banks prepare their data, train a joint model, and hit both
/// release conditions.
pub fn script(dir: &Path, seed: u64) -> Result<FraudReport> {
    let fx = FraudFixtures::default();
    let sp = program(FraudOptions { train: TrainConfig { epochs: 100, learning_rate: 0.5, seed }, probe: None })?;
    let mut st = Stage::open(dir, sp.program, seed, |c| c.auditors = vec!["auditor".into()])?;
    let (a, b) = (st.agent("bank_a")?, st.agent("bank_b")?);
    st.agent("auditor")?;

    let a_train = upload(&mut st, a, synth::fraud_csv(seed, 0, fx.train_rows[0]))?;
    let b_train = upload(&mut st, b, synth::fraud_csv(seed, 1, fx.train_rows[1]))?;
    let a_test = upload(&mut st, a, synth::fraud_csv(seed, 10, fx.test_rows))?;
    let b_test = upload(&mut st, b, synth::fraud_csv(seed, 11, fx.test_rows))?;

    // Data preparation: bank A learns B's schema and checks column fit.
    let schema_args = json!({ "de_ids": [b_train] });
    let c = st.propose(a, exact("show_schema", &[a], &[b_train], schema_args.clone(), UseLimit::Times(1)))?;
    st.approve_all(c)?;
    let schema = json_of(&st.call(a, "show_schema", schema_args)?)?;

    let compat_args = json!({ "de_1": a_train, "de_2": b_train, "cols_1": ["V1", "Amount"], "cols_2": ["V1", "Amount"] });
    let c = st.propose(a, exact("check_column_compatibility", &[a], &[a_train, b_train], compat_args.clone(), UseLimit::Times(1)))?;
    st.approve_all(c)?;
    let compatibility = json_of(&st.call(a, "check_column_compatibility", compat_args)?)?;

    let train_args = |size: usize, target: f64| {
        json!({
            "train_de_ids": [a_train, b_train],
            "size_constraint": size,
            "test_de_ids": [a_test, b_test],
            "target_accuracy": target,
            "label_name": "Class",
        })
    };
    let des = [a_train, b_train, a_test, b_test];

    let ok_args = train_args(fx.size_constraint, fx.target_accuracy);
    let c = st.propose(a, exact("train_fraud_model", &[a, b], &des, ok_args.clone(), UseLimit::Times(2)))?;
    st.approve_all(c)?;
    let mut models = Vec::new();
    let mut outputs = Vec::new();
    for bank in [a, b] {
        let out = st.call(bank, "train_fraud_model", ok_args.clone())?;
        if let crate::StepOutcome::Released { output, bytes } = &out {
            outputs.push((bank, *output));
            models.push(serde_json::from_slice(bytes)?);
        }
    }

    let big = train_args(fx.train_rows[1] + 300, fx.target_accuracy);
    let c = st.propose(a, exact("train_fraud_model", &[a], &des, big.clone(), UseLimit::Times(1)))?;
    st.approve_all(c)?;
    let size_outcome = st.call(a, "train_fraud_model", big)?;

    let strict = train_args(fx.size_constraint, 1.01);
    let c = st.propose(b, exact("train_fraud_model", &[b], &des, strict.clone(), UseLimit::Times(1)))?;
    st.approve_all(c)?;
    let accuracy_outcome = st.call(b, "train_fraud_model", strict)?;

    let state = st.escrow().sharing_state();
    let goals: Vec<GoalSpec> = outputs
        .iter()
        .map(|(bank, out)| {
            let (bank, out) = (*bank, *out);
            GoalSpec::new(bank, move |s| s.can_access(bank, out))
        })
        .collect();
    let raw = [(a, vec![b_train, b_test]), (b, vec![a_train, a_test])];
    let constraints: Vec<ConstraintSpec> = raw
        .into_iter()
        .map(|(bank, others)| ConstraintSpec::new(bank, move |s| others.iter().any(|d| s.can_access(bank, *d))))
        .collect();
    let goal_reached = outputs.len() == 2 && is_common_goal(&state, &goals);
    let constraint_violated = violates_common_constraint(&state, &constraints);

    Ok(FraudReport {
        schema,
        compatibility,
        models,
        size_outcome,
        accuracy_outcome,
        goal_reached,
        constraint_violated,
        steps: st.steps().to_vec(),
        audit: st.audit_json()?,
    })
}
