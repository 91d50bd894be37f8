//! Bearer sessions. Tokens live only in memory; a restart logs everyone out.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use escrow_core::AgentId;
use rand::RngCore;
use rand::rngs::OsRng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionToken {
    pub agent: AgentId,
    /// Hex of 32 random bytes.
    pub token: String,
    pub expiry: SystemTime,
}

impl SessionToken {
    pub fn expires_at_unix(&self) -> u64 {
        self.expiry.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Valid(AgentId),
    Expired,
    Unknown,
}

pub struct Sessions {
    ttl: Duration,
    by_token: Mutex<HashMap<String, SessionToken>>,
}

impl Sessions {
    pub fn new(ttl: Duration) -> Self {
        Sessions { ttl, by_token: Mutex::new(HashMap::new()) }
    }

    pub fn issue(&self, agent: AgentId) -> SessionToken {
        let mut raw = [0u8; 32];
        OsRng.fill_bytes(&mut raw);
        let s = SessionToken { agent, token: hex::encode(raw), expiry: SystemTime::now() + self.ttl };
        self.by_token.lock().unwrap_or_else(|p| p.into_inner()).insert(s.token.clone(), s.clone());
        s
    }

    /// Expired tokens are dropped on first sight.
    pub fn lookup(&self, token: &str) -> Lookup {
        let mut map = self.by_token.lock().unwrap_or_else(|p| p.into_inner());
        match map.get(token) {
            None => Lookup::Unknown,
            Some(s) if s.expiry <= SystemTime::now() => {
                map.remove(token);
                Lookup::Expired
            }
            Some(s) => Lookup::Valid(s.agent),
        }
    }
}
