use thiserror::Error;

use crate::ids::{AgentId, ContractId, DataElementId, Seq};
use crate::sharing_model::ModelError;
use crate::vault::VaultError;

/// Every failure the escrow reports to a caller. Each variant has a stable
/// machine-readable [`code`](EscrowError::code).
#[derive(Debug, Error)]
pub enum EscrowError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("unknown data element {0}")]
    UnknownDataElement(DataElementId),
    #[error("unknown contract {0}")]
    UnknownContract(ContractId),
    #[error("invalid credentials")]
    BadCredentials,
    #[error("unknown function {0:?}")]
    UnknownFunction(String),
    #[error("external id {0:?} is already registered")]
    DuplicateExternalId(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{agent} is not a source agent of {contract}")]
    NotASourceAgent { agent: AgentId, contract: ContractId },
    #[error("{agent} has already decided on {contract}")]
    AlreadyDecided { agent: AgentId, contract: ContractId },
    #[error("contract {0} can no longer change state")]
    ContractClosed(ContractId),
    #[error("{0} is not an auditor")]
    NotAuditor(AgentId),
    #[error("rule owner must be the registering agent")]
    OwnerMismatch,
    #[error("{agent} does not own {de}")]
    NotOwner { agent: AgentId, de: DataElementId },
    #[error("caller is not a destination agent of any matching contract")]
    NotDestinationAgent,
    #[error("no approved contract matches a call to {0:?}")]
    NoMatchingContract(String),
    #[error("no store backend handles type {0:?}")]
    UnsupportedType(String),
    #[error("intermediate key {0:?} already exists")]
    DuplicateKey(String),
    #[error("data element {0} has no uploaded content")]
    ContentMissing(DataElementId),
    #[error("execution was stopped: access outside the contract")]
    ShortCircuited,
    #[error("function failed: {0}")]
    FunctionFailed(String),
    #[error("function {0:?} is not callable by agents")]
    NotCallable(String),
    #[error("a function named {0:?} is already registered")]
    DuplicateName(String),
    #[error("helper {0:?} cannot be exposed to agents")]
    HelperExposed(String),
    #[error("function {0:?}: body does not match its declared kind")]
    KindMismatch(String),
    #[error("no key available for {0}")]
    MissingKey(AgentId),
    #[error("submitted key for {0} does not authenticate existing data")]
    KeyMismatch(AgentId),
    #[error("ciphertext failed authentication")]
    AuthFailure,
    #[error("corrupt log at seq {seq}: {reason}")]
    CorruptLog { seq: Seq, reason: String },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("log records are still waiting for agent keys")]
    PendingReplay,
    #[error("data directory is locked by another escrow process")]
    Locked,
    #[error("escrow instance crashed (injected fault)")]
    Crashed,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl EscrowError {
    pub fn code(&self) -> &'static str {
        use EscrowError::*;
        match self {
            UnknownAgent(_) => "UnknownAgent",
            UnknownDataElement(_) => "UnknownDataElement",
            UnknownContract(_) => "UnknownContract",
            BadCredentials => "BadCredentials",
            UnknownFunction(_) => "UnknownFunction",
            DuplicateExternalId(_) => "DuplicateExternalId",
            InvalidArgument(_) => "InvalidArgument",
            NotASourceAgent { .. } => "NotASourceAgent",
            AlreadyDecided { .. } => "AlreadyDecided",
            ContractClosed(_) => "ContractClosed",
            NotAuditor(_) => "NotAuditor",
            OwnerMismatch => "OwnerMismatch",
            NotOwner { .. } => "NotOwner",
            NotDestinationAgent => "NotDestinationAgent",
            NoMatchingContract(_) => "NoMatchingContract",
            UnsupportedType(_) => "UnsupportedType",
            DuplicateKey(_) => "DuplicateKey",
            ContentMissing(_) => "ContentMissing",
            ShortCircuited => "ShortCircuited",
            FunctionFailed(_) => "FunctionFailed",
            NotCallable(_) => "NotCallable",
            DuplicateName(_) => "DuplicateName",
            HelperExposed(_) => "HelperExposed",
            KindMismatch(_) => "KindMismatch",
            MissingKey(_) => "MissingKey",
            KeyMismatch(_) => "KeyMismatch",
            AuthFailure => "AuthFailure",
            CorruptLog { .. } => "CorruptLog",
            BadCheckpoint(_) => "BadCheckpoint",
            PendingReplay => "PendingReplay",
            Locked => "Locked",
            Crashed => "Crashed",
            Model(ModelError::UnknownAgent(_)) => "UnknownAgent",
            Model(ModelError::UnknownDataElement(_)) => "UnknownDataElement",
            Model(_) => "InvalidDataflow",
            Io(_) => "IoFailure",
        }
    }
}

impl From<VaultError> for EscrowError {
    fn from(e: VaultError) -> Self {
        match e {
            VaultError::MissingKey(a) => EscrowError::MissingKey(a),
            VaultError::KeyMismatch(a) => EscrowError::KeyMismatch(a),
            VaultError::AuthFailure => EscrowError::AuthFailure,
            VaultError::CorruptLog { seq, reason } => EscrowError::CorruptLog { seq, reason },
            VaultError::BadCheckpoint(m) => EscrowError::BadCheckpoint(m),
            VaultError::Io(e) => EscrowError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for EscrowError {
    fn from(e: std::io::Error) -> Self {
        EscrowError::Io(e.to_string())
    }
}

pub type Result<T, E = EscrowError> = std::result::Result<T, E>;
