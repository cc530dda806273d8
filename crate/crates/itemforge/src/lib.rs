//! Itemforge: psychometric survey item generation, mediator-guided virtual
//! respondent simulation, and construct-validity evaluation.

pub mod error;
pub mod evaluation;
pub mod human;
pub mod mediators;
pub mod metrics;
pub mod model;
pub mod pool;
pub mod providers;
pub mod selection;
pub mod simulation;
