// SPDX-License-Identifier: MIT OR Apache-2.0

//! Belief-dynamics curves: model, scoring, fitting, selection and bootstrap.

pub mod bootstrap;
pub mod curve;
pub mod fit;
pub mod model;
pub mod optim;
pub mod select;

pub use bootstrap::{lambda_bootstrap, prepare, BootstrapConfig, CurveSettings, HypothesisDef, LambdaInterval};
pub use curve::{AccuracyCurve, P0_MAX_CONTEXT, CurveSample, ScoredPosition, WalkScores};
pub use fit::{fit, information_criteria, FitConfig, FitResult, HypothesisSpec};
pub use model::{inflection, predict_accuracy, BeliefParams, HypothesisParams, Prior, RhoShare, Variant};
pub use select::{select_model, SelectionReport, Winner};
