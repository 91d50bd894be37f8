use std::collections::HashMap;
use std::fmt;
use std::sync::RwLock;

use rand::RngCore;

use crate::ids::AgentId;

pub const KEY_LEN: usize = 32;

/// A 256-bit symmetric key. Deliberately not `Serialize`; `Debug` is redacted.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey([u8; KEY_LEN]);

impl SymmetricKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn try_from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Self)
    }

    pub fn generate() -> Self {
        let mut k = [0u8; KEY_LEN];
        rand::rngs::OsRng.fill_bytes(&mut k);
        Self(k)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymmetricKey(..)")
    }
}

impl Drop for SymmetricKey {
    fn drop(&mut self) {
        // best effort; the optimizer may still leave copies around
        self.0.iter_mut().for_each(|b| *b = 0);
    }
}

/// In-memory holder of per-agent keys plus the escrow-internal key (stored
/// under [`AgentId::SYSTEM`]). Nothing in here is ever written to disk, so a
/// restarted process starts with an empty manager.
#[derive(Default)]
pub struct VolatileKeyManager {
    keys: RwLock<HashMap<AgentId, SymmetricKey>>,
}

impl VolatileKeyManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, owner: AgentId, key: SymmetricKey) {
        self.keys.write().expect("key manager poisoned").insert(owner, key);
    }

    pub fn get(&self, owner: AgentId) -> Option<SymmetricKey> {
        self.keys.read().expect("key manager poisoned").get(&owner).cloned()
    }

    pub fn contains(&self, owner: AgentId) -> bool {
        self.keys.read().expect("key manager poisoned").contains_key(&owner)
    }

    pub fn remove(&self, owner: AgentId) -> Option<SymmetricKey> {
        self.keys.write().expect("key manager poisoned").remove(&owner)
    }

    pub fn len(&self) -> usize {
        self.keys.read().expect("key manager poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Debug for VolatileKeyManager {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VolatileKeyManager")
            .field("keys", &self.len())
            .finish()
    }
}
