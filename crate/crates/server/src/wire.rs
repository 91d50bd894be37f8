//! JSON bodies shared by the server and the bundled client.

use escrow_core::contract::ContractStatus;
use escrow_core::runtime::{CallOutcome, ReleaseOutcome};
use escrow_core::{AgentId, ContractId, DataElementId};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ApiError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterAgent {
    pub external_id: String,
    #[serde(default)]
    pub name: Option<String>,
    pub password: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registered {
    pub agent_id: AgentId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Login {
    pub external_id: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginResponse {
    pub agent_id: AgentId,
    pub token: String,
    /// Seconds since the Unix epoch.
    pub expires_at: u64,
}

/// Hex of the 32-byte key.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitKey {
    pub key: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterData {
    #[serde(rename = "type")]
    pub type_tag: String,
    #[serde(default)]
    pub access_parameters: Value,
    #[serde(default = "yes")]
    pub discoverable: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataCreated {
    pub de_id: DataElementId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub id: AgentId,
    pub external_id: String,
    pub name: String,
    pub has_key: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Deny {
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub contract: ContractId,
    pub status: ContractStatus,
}

/// Successful call. Precondition and postcondition refusals are errors
/// (422) with codes `PreconditionFailed` and `PostconditionFailed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CallResponse {
    Endpoint {
        value: Value,
    },
    /// `sealed` is base64 of the output sealed under the caller's key.
    Released {
        contract: ContractId,
        output: DataElementId,
        sealed: String,
        #[serde(default)]
        warnings: Vec<String>,
    },
}

impl CallResponse {
    pub fn from_outcome(o: CallOutcome) -> Result<Self, ApiError> {
        use base64::Engine;
        use base64::engine::general_purpose::STANDARD;
        use axum::http::StatusCode;
        match o {
            CallOutcome::Endpoint { value } => Ok(CallResponse::Endpoint { value }),
            CallOutcome::Execution { result } => match result.outcome {
                ReleaseOutcome::Released { output, sealed } => Ok(CallResponse::Released {
                    contract: result.contract,
                    output,
                    sealed: STANDARD.encode(sealed),
                    warnings: result.warnings,
                }),
                ReleaseOutcome::PreconditionFailed { message } => {
                    Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "PreconditionFailed", message))
                }
                ReleaseOutcome::PostconditionFailed { message } => {
                    Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "PostconditionFailed", message))
                }
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub program: String,
    pub agents: usize,
    /// Log records still waiting for an agent key.
    pub deferred_records: usize,
}
