//! Decomposes the performance gap a scoring model shows between its home
//! site and an external site into per-factor Shapley contributions.
//!
//! The external dataset is repeatedly resampled so that the marginal
//! distribution of each case-mix factor, taken in permutation order, matches
//! the reference site. The metric movement caused by adding one more factor
//! to the matched set is that factor's marginal contribution; averaging over
//! permutations yields its Shapley value. Whatever part of the gap survives
//! full matching is reported as unexplained.

pub mod config;
pub mod dataset;
pub mod matching;
pub mod metric;
pub mod report;
pub mod shapley;
pub mod synth;

pub(crate) mod rng;
