//! Safe Frank-Wolfe over polytopes whose constraints are only observable
//! through noisy measurements.

pub mod estimator;
pub mod lp;
pub mod oracle;
pub mod problem;
pub mod safety;
pub mod sfw;
pub mod baseline_ro;
pub mod harness;
