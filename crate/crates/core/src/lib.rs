//! Competitive multi-virus SIR dynamics on a network of populations, with
//! stability certificates, an observability test, a distributed Luenberger
//! observer, LMI-based gain synthesis and a distributed eradication
//! controller.

pub mod analysis;
pub mod cli;
pub mod control;
pub mod estimator;
pub mod model;
pub mod numerics;
pub mod observability;
pub mod output;
pub mod scenario;
pub mod synthesis;
