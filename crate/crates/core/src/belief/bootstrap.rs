// SPDX-License-Identifier: MIT OR Apache-2.0

//! Walk-level bootstrap of the fitted complexity penalty.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::curve::{curves_from_scores, pooled_p0, AccuracyCurve, WalkScores};
use super::fit::{fit, fit_from, FitConfig, FitResult, HypothesisSpec};
use super::model::{RhoShare, Variant};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

/// A hypothesis before its pre-transition accuracy is estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisDef {
    /// Hypothesis name.
    pub name: String,
    /// MDL complexity in bits.
    pub complexity_bits: f64,
    /// Context share at mixture ratio `rho`.
    pub share: RhoShare,
}

/// How walk scores become fit inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSettings {
    /// Context lengths at which curves are sampled.
    pub n_grid: Vec<usize>,
    /// Trailing averaging window.
    pub window: usize,
    /// Largest context length pooled into `p0`.
    pub p0_max_context: usize,
}

/// Estimate `p0` per hypothesis and attach it.
pub fn specs_from_scores(
    scores: &[WalkScores],
    defs: &[HypothesisDef],
    p0_max_context: usize,
) -> Result<Vec<HypothesisSpec>> {
    defs.iter()
        .map(|d| {
            Ok(HypothesisSpec {
                name: d.name.clone(),
                complexity_bits: d.complexity_bits,
                share: d.share,
                p0: pooled_p0(scores, &d.name, p0_max_context)?.p0,
            })
        })
        .collect()
}

/// Curves and specs built from walk scores.
pub fn prepare(
    scores: &[WalkScores],
    defs: &[HypothesisDef],
    settings: &CurveSettings,
) -> Result<(Vec<AccuracyCurve>, Vec<HypothesisSpec>)> {
    let specs = specs_from_scores(scores, defs, settings.p0_max_context)?;
    let curves = curves_from_scores(scores, &settings.n_grid, settings.window);
    Ok((curves, specs))
}

/// Bootstrap settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    /// Resampling replicates.
    pub replicates: usize,
    /// Random restarts per replicate.
    pub restarts: usize,
    /// Add the full-data optimum as an extra starting point of every replicate.
    pub warm_start: bool,
    /// Two-sided confidence level.
    pub level: f64,
    /// Resampling seed.
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 60,
            restarts: 24,
            warm_start: false,
            level: 0.9,
            seed: 0,
        }
    }
}

/// Percentile bootstrap interval for `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaInterval {
    /// Point estimate from the full data.
    pub lambda_hat: f64,
    /// Lower percentile.
    pub lower: f64,
    /// Upper percentile.
    pub upper: f64,
    /// Confidence level.
    pub level: f64,
    /// Replicate estimates in replicate order.
    pub replicates: Vec<f64>,
}

impl LambdaInterval {
    /// Does the interval contain `value`?
    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fit the per-graph model and bootstrap `lambda` by resampling walks within
/// each mixture ratio.
///
/// Every replicate re-estimates `p0` and the curves from the resampled walks.
/// Each refit runs `restarts` random starts, preceded by the full-data optimum
/// when `warm_start` is set.
pub fn lambda_bootstrap(
    scores: &[WalkScores],
    defs: &[HypothesisDef],
    settings: &CurveSettings,
    fit_config: &FitConfig,
    boot: &BootstrapConfig,
) -> Result<(FitResult, LambdaInterval)> {
    if boot.replicates < 2 || !(0.0 < boot.level && boot.level < 1.0) {
        return Err(Error::InvalidArgument(
            "bootstrap needs at least 2 replicates and a level in (0, 1)".into(),
        ));
    }
    let (curves, specs) = prepare(scores, defs, settings)?;
    let point = fit(&curves, &specs, Variant::PerGraph, fit_config)?;
    let lambda_hat = point.lambda().expect("per-graph fit has lambda");

    // Walks by stratum; every hypothesis' scores of a walk travel together.
    let mut strata: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    let mut by_walk: BTreeMap<u64, Vec<&WalkScores>> = BTreeMap::new();
    for s in scores {
        let walks = by_walk.entry(s.walk_id).or_default();
        if walks.is_empty() {
            strata.entry(s.rho.to_bits()).or_default().push(s.walk_id);
        }
        walks.push(s);
    }

    let refit_config = FitConfig {
        restarts: boot.restarts + usize::from(boot.warm_start),
        ..*fit_config
    };
    let mut replicates = Vec::with_capacity(boot.replicates);
    for r in 0..boot.replicates {
        let mut rng = stream_rng(derive_seed(boot.seed, r as u64), 5);
        let mut sample: Vec<WalkScores> = Vec::with_capacity(scores.len());
        for ids in strata.values() {
            for _ in 0..ids.len() {
                let id = ids[rng.random_range(0..ids.len())];
                sample.extend(by_walk[&id].iter().map(|s| (*s).clone()));
            }
        }
        let (c, sp) = prepare(&sample, defs, settings)?;
        let cfg = FitConfig {
            seed: derive_seed(fit_config.seed, 1 + r as u64),
            ..refit_config
        };
        let f = fit_from(&c, &sp, Variant::PerGraph, &cfg, boot.warm_start.then_some(&point.params))?;
        replicates.push(f.lambda().expect("per-graph fit has lambda"));
    }
    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - boot.level) / 2.0;
    let interval = LambdaInterval {
        lambda_hat,
        lower: quantile(&sorted, tail),
        upper: quantile(&sorted, 1.0 - tail),
        level: boot.level,
        replicates,
    };
    Ok((point, interval))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_examples() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert!((quantile(&v, 0.05) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn interval_coverage() {
        let i = LambdaInterval {
            lambda_hat: 0.1,
            lower: -0.05,
            upper: 0.2,
            level: 0.9,
            replicates: vec![],
        };
        assert!(i.covers(0.0) && !i.covers(0.3));
    }
}
