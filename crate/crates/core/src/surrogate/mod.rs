// SPDX-License-Identifier: MIT OR Apache-2.0

//! Executable stand-ins for a language model.
//!
//! Two agents embody the competing accounts of in-context graph learning: a
//! bigram-copying induction agent and a Bayesian learner with a
//! complexity-weighted prior. A synthetic activation generator and a linear
//! toy residual stream feed the geometry and intervention analytics. They are
//! idealized test oracles, not models of any particular network.

pub mod activations;
pub mod bayes;
pub mod curves;
pub mod induction;
pub mod residual;

pub use activations::{synthetic_activations, PlantMode, SyntheticSpec};
pub use bayes::{BayesAgent, BayesConfig};
pub use curves::{agent_accuracy_curves, agent_context_logits, agent_pair_logits, agent_walk_scores, AgentConfig, AgentKind, CurveDesign, Decoding};
pub use induction::InductionAgent;
pub use residual::{steer_logits, ResidualConfig, ResidualModel, SteerDesign};
