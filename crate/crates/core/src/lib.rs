//! Securing inter-organization container workflows in a seaport.
//!
//! Two enforcement mechanisms for one global access-control policy:
//!
//! * peer-to-peer messages whose attribute values are covered by
//!   double-hash multi-signatures and selectively sealed for their
//!   authorized readers ([`adapter`]), and
//! * a permissioned, hash-chained container ledger whose chaincode enforces
//!   roles, multitenancy and the container lifecycle ([`ledger`]).
//!
//! [`sim`] runs the export and import workflows in either mode, injects
//! attacks and audits what every actor got to see.

pub mod adapter;
pub mod crypto;
pub mod flat;
pub mod ledger;
pub mod message;
pub mod pki;
pub mod policy;
pub mod segment;
pub mod sim;
