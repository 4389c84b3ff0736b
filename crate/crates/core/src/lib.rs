//! Core of the brewtask microtask platform.
//!
//! Requestors create jobs whose input data is split into units; workers claim
//! task instances (batches of units), submit judgments and spend earned
//! balance on coupons. Gold units are mixed into instances to police worker
//! quality, and units are finalized once enough similar judgments agree.
//!
//! [`Platform`] is the entry point for stateful operations. The pure pieces
//! (validation, batching, similarity, aggregation, kappa) live in their own
//! modules and can be used directly.

pub mod accounts;
pub mod analytics;
pub mod clock;
pub mod error;
pub mod ingestion;
pub mod kitchen;
pub mod ledger;
pub mod model;
pub mod platform;
pub mod quality;
pub mod routing;
pub mod storage;

pub use error::{Error, Result};
pub use platform::{Platform, PlatformConfig};
