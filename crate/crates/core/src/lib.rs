//! Patch-based probabilistic modelling of bus journey times.
//!
//! The pipeline: high-frequency AVL traces are cut into per-patch crossing
//! times ([`ingest`]), each patch's sojourn law is fitted by maximum
//! likelihood to an Erlang, hyper-Erlang, or shifted-Erlang distribution
//! ([`dist`], [`fit`]), the fitted patches are chained into a probabilistic
//! timed automaton ([`pta`]), and journey-time statistics are estimated by
//! Monte Carlo simulation with confidence intervals ([`smc`]). Models also
//! serialise to UPPAAL-compatible XML ([`uppaal`]).
//!
//! A counterfactual 20 mph speed-limit scenario is derived from the same
//! traces by charging every above-limit fix the extra time needed to cover
//! its distance at the limit; baseline and limited scenarios then flow
//! through the identical fit/build/estimate path for comparison.
//!
//! Simulation batches and independent fits run across a rayon pool when the
//! `parallel` feature (default) is enabled; results are bit-identical to
//! the sequential fallback.

pub mod dist;
pub mod exec;
pub mod fit;
pub mod ingest;
pub mod pta;
pub mod rng;
pub mod smc;
pub mod uppaal;
