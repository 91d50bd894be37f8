//! Programmable data escrow: agents share data only through approved
//! contracts, and every execution is confined to the data its contract names.

pub mod contract;
pub mod destore;
pub mod error;
pub mod escrow;
pub mod ids;
pub mod runtime;
pub mod sharing_model;
pub mod state;
pub mod vault;

pub use error::{EscrowError, Result};
pub use escrow::{Escrow, EscrowConfig};
pub use ids::{AgentId, ContractId, DataElementId, RuleId, Seq};
