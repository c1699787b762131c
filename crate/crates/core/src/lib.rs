//! Causal testing over observational run data.
//!
//! The crate evaluates *causal test cases* — (treatment, outcome, expected
//! effect) triples — against data that was not collected under controlled
//! experiments. A user-supplied causal DAG drives bias identification
//! (backdoor adjustment sets, instrument validation), regression and
//! instrumental-variable estimators produce unit average treatment effects
//! with confidence intervals, and oracles turn estimates into test verdicts.
//!
//! Modules:
//! - [`graph`]: causal DAGs, d-separation, adjustment sets, instruments.
//! - [`dataset`]: columnar run data, stratification, positivity diagnostics.
//! - [`estimation`]: design matrices, OLS with confidence intervals, IV ratio.
//! - [`testing`]: test cases, oracles, suite evaluation, group comparison.
//! - [`synth`]: seeded structural-causal-model data generator with planted
//!   ground-truth coefficients, used to validate the whole pipeline.
//!
//! The `parallel` feature (on by default) evaluates suites and synthesizes
//! data on a rayon pool; disabling it yields identical results sequentially.

pub mod dataset;
pub mod estimation;
pub mod graph;
pub mod synth;
pub mod testing;

/// Bundled DAG for an autonomous-driving simulation study: scenario inputs
/// (route, traffic, weather), run outputs (infractions, scores), and host
/// timing, with unobservable traffic counts and one effect modifier.
pub const DRIVING_SIM_DAG: &str = include_str!("../fixtures/driving_sim.dot");
