//! Operator tooling for the brewtask platform: seeding accounts and coupon
//! pools, loading job files, simulating worker campaigns and exporting
//! results and reports.

pub mod client;
pub mod export;
pub mod jobfile;
pub mod seed;
pub mod sim;
