//! Identifier newtypes shared by every subsystem.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl $name {
            pub fn get(self) -> u64 {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl From<u64> for $name {
            fn from(v: u64) -> Self {
                Self(v)
            }
        }
    };
}

id_type!(
    /// An agent registered with one escrow instance. `AgentId(0)` is reserved for
    /// the escrow itself (owner of intermediates, author of system mutations).
    AgentId,
    "a"
);
id_type!(
    /// A data element. Assigned from a monotone counter; never reused.
    DataElementId,
    "d"
);
id_type!(ContractId, "c");
id_type!(RuleId, "r");

impl AgentId {
    pub const SYSTEM: AgentId = AgentId(0);

    pub fn is_system(self) -> bool {
        self == Self::SYSTEM
    }
}

/// Logical clock value. Every durable mutation gets the sequence number of the
/// log record that carries it; timestamps throughout the escrow are these.
pub type Seq = u64;
