//! Ratio-balanced maximum flows for collateral allocation, computed in exact
//! rational arithmetic.

pub mod balancer;
pub mod cli;
pub mod flow;
pub mod model;
pub mod priority;
pub mod ratio;
pub mod search;
pub mod verification;
