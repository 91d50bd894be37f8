//! Sharing programs: the functions agents may call and how contract
//! functions execute.

mod context;
mod host;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::contract::Args;
use crate::error::{EscrowError, Result};
use crate::ids::{ContractId, DataElementId};
use crate::vault::{SymmetricKey, cipher};

pub use context::{ElementInfo, ExecutionContext};
pub use host::EndpointHost;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionKind {
    /// Runs directly on the caller's behalf; never sees protected data.
    ApiEndpoint,
    /// Runs only under an approved contract.
    ContractFunction,
    /// Listed as an endpoint, executed under a contract.
    Both,
    /// Callable from contract functions only.
    Helper,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDescriptor {
    pub name: String,
    #[serde(rename = "type")]
    pub type_tag: String,
    #[serde(default)]
    pub description: String,
}

impl ParamDescriptor {
    pub fn new(name: &str, type_tag: &str, description: &str) -> Self {
        ParamDescriptor {
            name: name.into(),
            type_tag: type_tag.into(),
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRef {
    pub name: String,
    pub kind: FunctionKind,
    pub params: Vec<ParamDescriptor>,
    #[serde(default)]
    pub description: String,
}

/// What a contract function body decides.
#[derive(Debug, Clone, PartialEq)]
pub enum ContractOutcome {
    Released(Vec<u8>),
    PreconditionFailed(String),
    PostconditionFailed(String),
}

pub type EndpointFn = dyn Fn(&EndpointHost<'_>, &Args) -> Result<Value> + Send + Sync;
pub type ContractFn = dyn Fn(&mut ExecutionContext<'_>, &Args) -> Result<ContractOutcome> + Send + Sync;
pub type HelperFn = dyn Fn(&mut ExecutionContext<'_>, &Value) -> Result<Value> + Send + Sync;

#[derive(Clone)]
pub enum FunctionBody {
    Endpoint(Arc<EndpointFn>),
    Contract(Arc<ContractFn>),
    Helper(Arc<HelperFn>),
}

impl fmt::Debug for FunctionBody {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FunctionBody::Endpoint(_) => "Endpoint(..)",
            FunctionBody::Contract(_) => "Contract(..)",
            FunctionBody::Helper(_) => "Helper(..)",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RegisteredFunction {
    pub fref: FunctionRef,
    pub body: FunctionBody,
}

/// Named collection of functions loaded into one escrow.
#[derive(Debug, Clone, Default)]
pub struct SharingProgram {
    pub name: String,
    functions: BTreeMap<String, RegisteredFunction>,
}

impl SharingProgram {
    pub fn new(name: &str) -> Self {
        SharingProgram { name: name.into(), functions: BTreeMap::new() }
    }

    pub fn register(&mut self, fref: FunctionRef, body: FunctionBody) -> Result<()> {
        if self.functions.contains_key(&fref.name) {
            return Err(EscrowError::DuplicateName(fref.name));
        }
        let ok = match (fref.kind, &body) {
            (FunctionKind::Helper, FunctionBody::Helper(_)) => true,
            (FunctionKind::Helper, _) => return Err(EscrowError::HelperExposed(fref.name)),
            (FunctionKind::ApiEndpoint, FunctionBody::Endpoint(_)) => true,
            (FunctionKind::ContractFunction | FunctionKind::Both, FunctionBody::Contract(_)) => true,
            _ => false,
        };
        if !ok {
            return Err(EscrowError::KindMismatch(fref.name));
        }
        self.functions.insert(fref.name.clone(), RegisteredFunction { fref, body });
        Ok(())
    }

    pub fn endpoint(
        &mut self,
        name: &str,
        description: &str,
        params: Vec<ParamDescriptor>,
        f: impl Fn(&EndpointHost<'_>, &Args) -> Result<Value> + Send + Sync + 'static,
    ) -> Result<&mut Self> {
        let fref = FunctionRef { name: name.into(), kind: FunctionKind::ApiEndpoint, params, description: description.into() };
        self.register(fref, FunctionBody::Endpoint(Arc::new(f)))?;
        Ok(self)
    }

    pub fn contract_function(
        &mut self,
        name: &str,
        description: &str,
        params: Vec<ParamDescriptor>,
        f: impl Fn(&mut ExecutionContext<'_>, &Args) -> Result<ContractOutcome> + Send + Sync + 'static,
    ) -> Result<&mut Self> {
        let fref =
            FunctionRef { name: name.into(), kind: FunctionKind::ContractFunction, params, description: description.into() };
        self.register(fref, FunctionBody::Contract(Arc::new(f)))?;
        Ok(self)
    }

    pub fn helper(
        &mut self,
        name: &str,
        f: impl Fn(&mut ExecutionContext<'_>, &Value) -> Result<Value> + Send + Sync + 'static,
    ) -> Result<&mut Self> {
        let fref = FunctionRef { name: name.into(), kind: FunctionKind::Helper, params: vec![], description: String::new() };
        self.register(fref, FunctionBody::Helper(Arc::new(f)))?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&RegisteredFunction> {
        self.functions.get(name)
    }

    /// Everything agents may see: helpers are omitted.
    pub fn exposed(&self) -> Vec<FunctionRef> {
        self.functions
            .values()
            .filter(|f| f.fref.kind != FunctionKind::Helper)
            .map(|f| f.fref.clone())
            .collect()
    }
}

/// How reads outside the permitted set are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enforcement {
    /// Abort at the first illegal access.
    #[default]
    ShortCircuit,
    /// Let the function run to completion and withhold the output afterwards.
    /// Exists as a measurement baseline.
    DeferredCheck,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTiming {
    pub setup: Duration,
    pub compute: Duration,
    pub commit: Duration,
}

impl ExecutionTiming {
    pub fn total(&self) -> Duration {
        self.setup + self.compute + self.commit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ReleaseOutcome {
    /// `sealed` is `nonce || ciphertext || tag` under the caller's key with
    /// the output id as associated data.
    Released { output: DataElementId, sealed: Vec<u8> },
    PreconditionFailed { message: String },
    PostconditionFailed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub contract: ContractId,
    pub outcome: ReleaseOutcome,
    pub timing: ExecutionTiming,
    /// Non-fatal observations, e.g. intermediates written with no provenance.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CallOutcome {
    Endpoint { value: Value },
    Execution { result: ExecutionResult },
}

/// Opens a released output with the caller's own key.
pub fn open_output(key: &SymmetricKey, output: DataElementId, sealed: &[u8]) -> Result<Vec<u8>> {
    cipher::decrypt_blob(key, sealed, &crate::destore::blob_aad(output)).map_err(|_| EscrowError::AuthFailure)
}
