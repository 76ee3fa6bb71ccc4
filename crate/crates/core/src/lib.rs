//! Membership-leakage assessment for intersection-size-revealing PSI
//! protocols (PSI-CA, PSI-SUM).

pub mod data;
pub mod error;
pub mod oracle;
pub mod planner;
pub mod result;
pub mod attacks;
pub mod treesum;
pub mod actbayes;
pub mod analysis;
pub mod cli;

pub use error::{Error, Result};
