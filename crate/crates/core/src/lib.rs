//! Fairness accountability for permissioned ledgers.

pub mod codec;
pub mod crypto;
pub mod ledger;
pub mod outqueue;
pub mod owac;
pub mod proposal;
pub mod report;
pub mod node;
pub mod audit;
pub mod simnet;
pub mod vectors;
