//! Agent protocol, episode orchestration, batch evaluation, analysis and the
//! session service around `gridmind-core`.

pub mod agents;
pub mod analysis;
pub mod benchmark;
pub mod episode;
pub mod protocol;
pub mod session;
