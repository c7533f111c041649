//! Dialog evaluation by the conditional log-likelihood of follow-up
//! utterances.
//!
//! [`scorer`] turns (context, continuation) pairs into log-likelihoods,
//! [`metric`] aggregates them over a follow-up set, [`stats`] correlates the
//! results with human ratings and [`data`] loads datasets and the follow-up
//! catalog.

pub mod data;
pub mod domain;
pub mod metric;
pub mod scorer;
pub mod stats;
