//! Multi-period economic dispatch with energy storage on a DC
//! transmission network, nodal price extraction, congestion-rent
//! settlement, and financial transmission/storage right
//! (FTR/FGR/FSR/ECR) validation with revenue-adequacy auditing.

pub mod corpus;
pub mod costs;
pub mod dispatch;
pub mod fixtures;
pub mod hedging;
pub mod io;
pub mod network;
pub mod rights;
pub mod settlement;
pub mod sft;
pub mod solver;
pub mod storage;
