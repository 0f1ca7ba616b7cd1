//! Exact recovery of planted group elements from corrupted pairwise
//! relations on graphs: generators, channel, recovery algorithms, cut
//! statistics and a Monte Carlo harness.

pub mod channel;
pub mod cli;
pub mod cutmetrics;
pub mod graphs;
pub mod group;
pub mod harness;
pub mod recover;
