// SPDX-License-Identifier: MIT OR Apache-2.0

//! AIC/BIC comparison of two fits on the same training data.

use serde::{Deserialize, Serialize};

use super::fit::FitResult;
use super::model::Variant;
use crate::error::{Error, Result};

/// Outcome of one criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    /// The first fit has the lower criterion.
    First,
    /// The second fit has the lower criterion.
    Second,
    /// Exactly equal.
    Tie,
}

/// Per-criterion comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    /// Which fit wins.
    pub winner: Winner,
    /// Variant of the winner, `None` on a tie.
    pub winning_variant: Option<Variant>,
    /// `first - second`; negative favours the first fit.
    pub delta: f64,
}

/// Model-selection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Variant of the first fit.
    pub first: Variant,
    /// Variant of the second fit.
    pub second: Variant,
    /// Shared number of training observations.
    pub n_obs: usize,
    /// AIC comparison.
    pub aic: CriterionReport,
    /// BIC comparison.
    pub bic: CriterionReport,
}

fn compare(a: f64, b: f64, first: Variant, second: Variant) -> CriterionReport {
    let winner = if a < b {
        Winner::First
    } else if b < a {
        Winner::Second
    } else {
        Winner::Tie
    };
    CriterionReport {
        winner,
        winning_variant: match winner {
            Winner::First => Some(first),
            Winner::Second => Some(second),
            Winner::Tie => None,
        },
        delta: a - b,
    }
}

/// Compare two fits by AIC and BIC. Lower wins; equal values are ties.
pub fn select_model(first: &FitResult, second: &FitResult) -> Result<SelectionReport> {
    if first.n_obs != second.n_obs {
        return Err(Error::InvalidArgument(format!(
            "fits use different training data ({} vs {} observations)",
            first.n_obs, second.n_obs
        )));
    }
    Ok(SelectionReport {
        first: first.variant,
        second: second.variant,
        n_obs: first.n_obs,
        aic: compare(first.aic, second.aic, first.variant, second.variant),
        bic: compare(first.bic, second.bic, first.variant, second.variant),
    })
}
