//! Core algorithms for privacy-preserving cross-institution ensemble learning.
//!
//! A group of hospitals train image classifiers locally with federated
//! averaging, evaluate each other's models without revealing weights or data
//! (additive/binary secret sharing with a trusted dealer), fuse the resulting
//! per-model probabilities into a weighted ensemble tuned by grid search, and
//! anchor every model and the tuned weights in hash-linked ledgers verified by
//! majority hash consensus.
//!
//! The crate is `no_std + alloc`: everything in here is deterministic value
//! code driven by seeds and simulated ticks. File formats, dataset loading and
//! the command line live in the companion `hefl-cli` crate.
//!
//! Module map:
//!
//! * [`ring`] — fixed-point encoding into `Z/2^64Z` and wrapping arithmetic.
//! * [`sharing`] — additive/XOR secret shares, dealer-issued correlated
//!   randomness, share-domain conversions.
//! * [`secure`] — computation kernels over shared tensors (Beaver
//!   multiplication, truncation, comparison, ReLU, matmul, conv).
//! * [`neural`] — plaintext models, backprop, SGD, and the fixed-point
//!   reference forward pass that anchors the secure path.
//! * [`federated`] — participant selection, local training, sample-weighted
//!   aggregation.
//! * [`ensemble`] — weighted ensemble prediction and grid-search tuning.
//! * [`ledger`] — blocks, chains, replica sets, majority hash consensus.
//! * [`bus`] — the simulated message bus all actors talk through.
//! * [`protocol`] — hospitals, encrypted-evaluation sessions, the end-to-end
//!   scenario driver and its report.
//! * [`data`] — synthetic datasets and partition plans.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bus;
pub mod data;
pub mod ensemble;
pub mod federated;
pub mod ledger;
pub mod neural;
pub mod protocol;
pub mod ring;
pub mod secure;
pub mod sharing;

pub use ring::{FixedPointCodec, RingElement};
pub use sharing::{PartyId, SessionId};
