#![allow(dead_code)]

use std::collections::BTreeSet;

use escrow_core::contract::{ArgSpec, Proposal, UseLimit};
use escrow_core::runtime::{ContractOutcome, ParamDescriptor, SharingProgram};
use escrow_core::vault::{SymmetricKey, SyncMode};
use escrow_core::{AgentId, DataElementId, Escrow, EscrowConfig, EscrowError};
use serde_json::{Value, json};

pub fn key_for(agent: &str) -> SymmetricKey {
    let mut b = [0u8; 32];
    for (i, c) in agent.bytes().enumerate() {
        b[i % 32] ^= c;
    }
    b[31] ^= 0x5a;
    SymmetricKey::from_bytes(b)
}

pub fn system_key() -> SymmetricKey {
    SymmetricKey::from_bytes([42; 32])
}

/// A small program exercising every host call.
pub fn test_program() -> SharingProgram {
    let mut p = SharingProgram::new("test");
    p.endpoint("whoami", "caller id", vec![], |host, _| Ok(json!(host.caller().get())))
        .unwrap();
    p.contract_function(
        "concat",
        "concatenate every element; release if at least `min` bytes",
        vec![ParamDescriptor::new("min", "int", "")],
        |ctx, args| {
            let mut out = Vec::new();
            for d in ctx.get_all_accessible_des()? {
                out.extend(ctx.read(d)?);
            }
            let min = args.get("min").and_then(Value::as_u64).unwrap_or(0) as usize;
            if out.len() < min {
                return Ok(ContractOutcome::PreconditionFailed("Input size constraint failed.".into()));
            }
            Ok(ContractOutcome::Released(out))
        },
    )
    .unwrap();
    p.contract_function(
        "peek",
        "read `target` then release its length",
        vec![ParamDescriptor::new("target", "int", "")],
        |ctx, args| {
            let target = DataElementId(args["target"].as_u64().unwrap());
            let data = ctx.read(target)?;
            // A body that swallows the error must still be stopped.
            let _ = ctx.read(target);
            Ok(ContractOutcome::Released(data.len().to_le_bytes().to_vec()))
        },
    )
    .unwrap();
    p.contract_function("cached_upper", "uppercase via a cached intermediate", vec![], |ctx, _| {
        let cached = ctx.read_intermediate("upper")?;
        let bytes = match cached {
            Some(id) => ctx.read(id)?,
            None => {
                let mut all = Vec::new();
                for d in ctx.get_all_accessible_des()? {
                    all.extend(ctx.read(d)?);
                }
                let up = all.to_ascii_uppercase();
                ctx.write_intermediate("upper", up.clone())?;
                up
            }
        };
        let hit = if cached.is_some() { b"hit:".to_vec() } else { b"miss:".to_vec() };
        Ok(ContractOutcome::Released([hit, bytes].concat()))
    })
    .unwrap();
    p.contract_function("never_ok", "postcondition always fails", vec![], |ctx, _| {
        for d in ctx.get_all_accessible_des()? {
            ctx.read(d)?;
        }
        ctx.write_intermediate("scratch", b"tmp".to_vec())?;
        Ok(ContractOutcome::PostconditionFailed("Accuracy constraint failed".into()))
    })
    .unwrap();
    p.helper("double", |_, v| Ok(json!(v.as_i64().unwrap_or(0) * 2))).unwrap();
    p.contract_function("use_helper", "calls a helper", vec![], |ctx, _| {
        let v = ctx.call_helper("double", &json!(21))?;
        Ok(ContractOutcome::Released(v.to_string().into_bytes()))
    })
    .unwrap();
    p
}

pub fn config(dir: &std::path::Path) -> EscrowConfig {
    let mut c = EscrowConfig::new(dir, system_key());
    c.sync = SyncMode::OsBuffer;
    c.auditors = vec!["auditor".into()];
    c
}

pub fn open(dir: &std::path::Path) -> Escrow {
    Escrow::open(config(dir), test_program()).unwrap()
}

pub fn agent(e: &Escrow, name: &str) -> AgentId {
    let id = e.register_agent(name, name, Some("pw")).unwrap();
    e.submit_key(id, key_for(name)).unwrap();
    id
}

pub fn upload(e: &Escrow, owner: AgentId, content: &[u8]) -> DataElementId {
    let d = e.register_data_element(owner, "csv", json!({}), true).unwrap();
    e.upload_data_element(owner, d, content).unwrap();
    d
}

pub fn proposal(function: &str, dest: &[AgentId], des: &[DataElementId], args: Value) -> Proposal {
    Proposal {
        dest_agents: dest.iter().copied().collect::<BTreeSet<_>>(),
        data_elements: des.iter().copied().collect(),
        function: function.into(),
        args: ArgSpec::exact(args.as_object().unwrap()),
        conditions: vec![],
        max_uses: UseLimit::Times(1),
    }
}

pub fn args(v: Value) -> serde_json::Map<String, Value> {
    v.as_object().unwrap().clone()
}

pub fn is_short_circuit<T: std::fmt::Debug>(r: &Result<T, EscrowError>) -> bool {
    matches!(r, Err(EscrowError::ShortCircuited))
}
