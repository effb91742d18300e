//! Radiation-safety record keeping: dose arithmetic, the signed
//! investigation ledger, PKI and smart-card emulation, and replication
//! between patient cards, hospital stores and the central store.

pub mod dose;
pub mod canonical;
pub mod ledger;
pub mod pki;
pub mod sync;
