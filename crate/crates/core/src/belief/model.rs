// SPDX-License-Identifier: MIT OR Apache-2.0

//! The sigmoid belief-dynamics model and its parameterizations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Which share of the context a hypothesis receives at mixture ratio `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoShare {
    /// `1 - rho` (the first hypothesis of the mixture, e.g. the grid).
    Complement,
    /// `rho` (the second hypothesis, e.g. the ring).
    Rho,
    /// The whole context regardless of `rho`.
    Full,
}

impl RhoShare {
    /// Share of the context at mixture ratio `rho`.
    pub fn share(self, rho: f64) -> f64 {
        match self {
            RhoShare::Complement => 1.0 - rho,
            RhoShare::Rho => rho,
            RhoShare::Full => 1.0,
        }
    }
}

/// Model parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Complexity-weighted prior, per-hypothesis evidence dynamics.
    PerGraph,
    /// One shared sigmoid whose prior interpolates linearly in `rho`.
    MixtureBias,
    /// Single-hypothesis curve with a free prior `b`.
    Baseline,
}

impl Variant {
    /// Free parameters for `k` hypotheses.
    pub fn free_parameters(self, k: usize) -> usize {
        match self {
            Variant::PerGraph => 2 + 3 * k,
            Variant::MixtureBias => 5,
            Variant::Baseline => 4,
        }
    }
}

/// Prior log-odds parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Prior {
    /// `b_k = b0 - lambda * C(H_k)`.
    PerGraph {
        /// Shared baseline log-odds.
        b0: f64,
        /// Complexity penalty per bit.
        lambda: f64,
    },
    /// `b(rho) = (1 - rho) * b_grid + rho * b_ring`, shared by every hypothesis.
    MixtureBias {
        /// Prior at `rho = 0`.
        b_grid: f64,
        /// Prior at `rho = 1`.
        b_ring: f64,
    },
    /// A free prior for a single hypothesis.
    Baseline {
        /// Prior log-odds.
        b: f64,
    },
}

/// Evidence dynamics of one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisParams {
    /// Hypothesis name.
    pub name: String,
    /// MDL complexity in bits.
    pub complexity_bits: f64,
    /// Share of the context the hypothesis receives.
    pub share: RhoShare,
    /// Pre-transition accuracy (fixed, not fitted).
    pub p0: f64,
    /// Evidence strength.
    pub gamma: f64,
    /// Diminishing-returns exponent.
    pub alpha: f64,
    /// Post-transition accuracy.
    pub q: f64,
}

/// Full parameter set of the belief model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefParams {
    /// Prior parameters; the tag names the variant.
    pub prior: Prior,
    /// Per-hypothesis dynamics, in fit order.
    pub hypotheses: Vec<HypothesisParams>,
}

impl BeliefParams {
    /// Variant implied by the prior.
    pub fn variant(&self) -> Variant {
        match self.prior {
            Prior::PerGraph { .. } => Variant::PerGraph,
            Prior::MixtureBias { .. } => Variant::MixtureBias,
            Prior::Baseline { .. } => Variant::Baseline,
        }
    }

    /// Index of the hypothesis called `name`.
    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.hypotheses
            .iter()
            .position(|h| h.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no hypothesis named `{name}`")))
    }

    /// Prior log-odds of hypothesis `k` at mixture ratio `rho`.
    pub fn prior_log_odds(&self, k: usize, rho: f64) -> f64 {
        match self.prior {
            Prior::PerGraph { b0, lambda } => {
                prior_from_complexity(b0, lambda, self.hypotheses[k].complexity_bits)
            }
            Prior::MixtureBias { b_grid, b_ring } => (1.0 - rho) * b_grid + rho * b_ring,
            Prior::Baseline { b } => b,
        }
    }

    /// Structural checks on bounds that hold for every valid parameter set.
    pub fn validate(&self) -> Result<()> {
        if self.hypotheses.is_empty() {
            return Err(Error::InvalidArgument("no hypotheses".into()));
        }
        for h in &self.hypotheses {
            if !(h.gamma > 0.0) || !(0.0..1.0).contains(&h.alpha) || !(h.q > h.p0 && h.q <= 1.0)
            {
                return Err(Error::InvalidArgument(format!(
                    "hypothesis `{}` violates gamma > 0, alpha in [0, 1), q in (p0, 1]",
                    h.name
                )));
            }
        }
        Ok(())
    }
}

/// `b0 - lambda * c_bits`.
pub fn prior_from_complexity(b0: f64, lambda: f64, c_bits: f64) -> f64 {
    b0 - lambda * c_bits
}

/// Evidence term `gamma * x^(1 - alpha)`, zero at `x = 0`.
pub(crate) fn evidence(gamma: f64, alpha: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma * x.powf(1.0 - alpha)
    }
}

/// Predicted neighbour-hit accuracy of hypothesis `k` at mixture ratio `rho`
/// and context length `n`.
///
/// The result always lies in `[p0_k, q_k]`.
pub fn predict_accuracy(params: &BeliefParams, k: usize, rho: f64, n: f64) -> f64 {
    let h = &params.hypotheses[k];
    let x = h.share.share(rho) * n;
    let z = params.prior_log_odds(k, rho) + evidence(h.gamma, h.alpha, x);
    (h.p0 + (h.q - h.p0) * sigmoid(z)).clamp(h.p0.min(h.q), h.p0.max(h.q))
}

/// Context length at which the belief sigmoid crosses its midpoint.
///
/// Returns 0 when `b >= 0` (already committed at zero context).
pub fn inflection_point(b: f64, gamma: f64, alpha: f64) -> f64 {
    if b >= 0.0 {
        0.0
    } else {
        (-b / gamma).powf(1.0 / (1.0 - alpha))
    }
}

/// Effective-context inflection point of hypothesis `k` at mixture ratio `rho`.
///
/// `rho` only matters for the mixture-bias prior.
pub fn inflection(params: &BeliefParams, k: usize, rho: f64) -> f64 {
    let h = &params.hypotheses[k];
    inflection_point(params.prior_log_odds(k, rho), h.gamma, h.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn single(b: f64, gamma: f64, alpha: f64, p0: f64, q: f64) -> BeliefParams {
        BeliefParams {
            prior: Prior::Baseline { b },
            hypotheses: vec![HypothesisParams {
                name: "ring".into(),
                complexity_bits: 64.0,
                share: RhoShare::Rho,
                p0,
                gamma,
                alpha,
                q,
            }],
        }
    }

    #[test]
    fn hand_evaluated_point() {
        let p = single(-4.0, 1.0, 0.5, 0.2, 1.0);
        assert!((predict_accuracy(&p, 0, 1.0, 16.0) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn zero_share_removes_evidence() {
        let p = single(-4.0, 1.0, 0.5, 0.2, 1.0);
        let expected = 0.2 + 0.8 * sigmoid(-4.0);
        assert_eq!(predict_accuracy(&p, 0, 0.0, 5000.0), expected);
    }

    #[test]
    fn very_negative_prior_gives_p0() {
        let p = single(-800.0, 1.0, 0.5, 0.2, 1.0);
        assert_eq!(predict_accuracy(&p, 0, 1.0, 100.0), 0.2);
    }

    #[test]
    fn prior_examples() {
        assert_eq!(prior_from_complexity(1.5, 0.0, 96.0), 1.5);
        assert!((prior_from_complexity(0.0, 0.1, 96.0) + 9.6).abs() < 1e-12);
        assert!(prior_from_complexity(0.3, 0.02, 96.0) < prior_from_complexity(0.3, 0.02, 64.0));
    }

    #[test]
    fn inflection_examples() {
        assert_eq!(inflection_point(-1.0, 1.0, 0.0), 1.0);
        assert!((inflection_point(-4.0, 1.0, 0.5) - 16.0).abs() < 1e-12);
        assert_eq!(inflection_point(0.5, 1.0, 0.5), 0.0);
    }

    #[test]
    fn mixture_bias_interpolates() {
        let mut p = single(0.0, 1.0, 0.0, 0.1, 0.9);
        p.prior = Prior::MixtureBias {
            b_grid: -6.0,
            b_ring: -2.0,
        };
        assert_eq!(p.prior_log_odds(0, 0.0), -6.0);
        assert_eq!(p.prior_log_odds(0, 1.0), -2.0);
        assert_eq!(p.prior_log_odds(0, 0.25), -5.0);
    }

    #[test]
    fn symmetric_parameters_coincide_at_half() {
        let h = |name: &str, c: f64, share| HypothesisParams {
            name: name.into(),
            complexity_bits: c,
            share,
            p0: 0.15,
            gamma: 0.3,
            alpha: 0.4,
            q: 0.95,
        };
        let p = BeliefParams {
            prior: Prior::PerGraph {
                b0: -3.0,
                lambda: 0.0,
            },
            hypotheses: vec![h("grid", 96.0, RhoShare::Complement), h("ring", 64.0, RhoShare::Rho)],
        };
        for n in [1.0, 10.0, 300.0, 2000.0] {
            assert_eq!(predict_accuracy(&p, 0, 0.5, n), predict_accuracy(&p, 1, 0.5, n));
        }
    }

    fn valid_params() -> impl Strategy<Value = (f64, f64, f64, f64, f64)> {
        (-15.0..-0.01f64, 1e-3..5.0f64, 0.0..0.95f64, 0.0..0.5f64, 0.0..0.5f64)
            .prop_map(|(b, g, a, p0, dq)| (b, g, a, p0, (p0 + 0.01 + dq).min(1.0)))
    }

    proptest! {
        #[test]
        fn midpoint_at_inflection((b, g, a, p0, q) in valid_params()) {
            let p = single(b, g, a, p0, q);
            let n_star = inflection(&p, 0, 1.0);
            let mid = predict_accuracy(&p, 0, 1.0, n_star);
            prop_assert!((mid - (p0 + q) / 2.0).abs() < 1e-12);
        }

        #[test]
        fn bounded_and_monotone((b, g, a, p0, q) in valid_params(), n in 0.0..5000.0f64, dn in 0.0..100.0f64, rho in 0.0..1.0f64) {
            let p = single(b, g, a, p0, q);
            let lo = predict_accuracy(&p, 0, rho, n);
            let hi = predict_accuracy(&p, 0, rho, n + dn);
            prop_assert!(lo >= p0 && lo <= q);
            prop_assert!(hi >= lo);
            prop_assert!(predict_accuracy(&p, 0, (rho + 0.1).min(1.0), n) >= lo);
        }
    }
}
