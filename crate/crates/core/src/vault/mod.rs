//! Cryptographic substrate: volatile keys, blob encryption, the encrypted
//! write-ahead log and checkpoints.

pub mod checkpoint;
pub mod cipher;
pub mod ewal;
pub mod keys;

use thiserror::Error;

use crate::ids::{AgentId, Seq};

pub use checkpoint::Checkpoint;
pub use ewal::{Ewal, EwalRecord, SyncMode};
pub use keys::{SymmetricKey, VolatileKeyManager};

#[derive(Debug, Error)]
pub enum VaultError {
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
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl From<cipher::AuthFailure> for VaultError {
    fn from(_: cipher::AuthFailure) -> Self {
        VaultError::AuthFailure
    }
}

/// Key lookup plus blob encryption under a named owner's key.
impl VolatileKeyManager {
    pub fn require(&self, owner: AgentId) -> Result<SymmetricKey, VaultError> {
        self.get(owner).ok_or(VaultError::MissingKey(owner))
    }

    pub fn encrypt_blob(&self, owner: AgentId, plaintext: &[u8], aad: &[u8]) -> Result<Vec<u8>, VaultError> {
        Ok(cipher::encrypt_blob(&self.require(owner)?, plaintext, aad))
    }

    pub fn decrypt_blob(&self, owner: AgentId, blob: &[u8], aad: &[u8]) -> Result<Vec<u8>, VaultError> {
        Ok(cipher::decrypt_blob(&self.require(owner)?, blob, aad)?)
    }
}
