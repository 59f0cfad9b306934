//! Synthesis of hybrid automata with affine dynamics from time-series data.
//!
//! The pipeline has three stages: [`segmentation`] turns a sampled time series
//! into a piecewise-affine trajectory within a user-chosen pointwise error;
//! [`membership`] decides whether an automaton path can shadow such a
//! trajectory inside an infinity-norm tube, by chaining over- and
//! under-approximations of the synchronized reachable set; [`synthesis`]
//! repairs an automaton with the cheapest edits (widened constraints, new
//! transitions, new locations) until every trajectory is captured.
//!
//! [`geometry`], [`dynamics`], [`trajectory`], and [`automaton`] provide the
//! supporting vocabulary: convex polytopes in halfspace form, affine flows and
//! matrix exponentials, trajectory evaluation, and the automaton model itself.
//! [`simulation`] samples randomized executions from an automaton for
//! benchmarking and cross-validation; [`models`] holds the built-in benchmark
//! automata.

pub mod automaton;
pub mod dynamics;
pub mod geometry;
pub mod membership;
pub mod models;
pub mod segmentation;
pub mod simulation;
pub mod synthesis;
pub mod trajectory;

use nalgebra::DVector;

/// Infinity norm; the distance used for tubes and capture checks throughout.
pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
