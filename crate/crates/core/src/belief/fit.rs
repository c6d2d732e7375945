// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multi-start bounded least-squares fitting of the belief model.
//!
//! The objective is the mean squared error over every `(rho, k, N)`
//! observation. Each restart draws a start uniformly inside the box and runs
//! the projected L-BFGS minimizer; the lowest-loss restart wins, ties going to
//! the lowest restart index. The evidence strength is optimized as
//! `ln(gamma)`, so "uniform over the box" is log-uniform in `gamma`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::curve::AccuracyCurve;
use super::model::{evidence, sigmoid, BeliefParams, HypothesisParams, Prior, RhoShare, Variant};
use super::optim::{minimize, Bounds, MinimizerOptions, Termination};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

/// Distance from a bound at which a fitted value counts as saturated.
pub const SATURATION_TOLERANCE: f64 = 1e-6;

/// Search box of the belief parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBounds {
    /// Prior log-odds (`b0`, `b_grid`, `b_ring` or `b`).
    pub b: [f64; 2],
    /// Complexity penalty per bit.
    pub lambda: [f64; 2],
    /// Evidence strength.
    pub gamma: [f64; 2],
    /// Diminishing-returns exponent.
    pub alpha: [f64; 2],
    /// `q` is bounded below by `p0 + q_margin` and above by 1.
    pub q_margin: f64,
}

/// Fitting configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Random restarts drawn uniformly within the box.
    pub restarts: usize,
    /// Extra starts drawn by inflection point, run after the uniform ones.
    #[serde(default)]
    pub informed_starts: usize,
    /// Seed for restart initialization.
    pub seed: u64,
    /// Parameter box.
    pub bounds: FitBounds,
    /// Minimizer settings.
    pub minimizer: MinimizerOptions,
}

impl FitConfig {
    /// Joint complexity-prior preset: 24 restarts, `b0` in [-15, 15].
    pub fn joint(seed: u64) -> Self {
        Self {
            restarts: 24,
            informed_starts: 24,
            seed,
            bounds: FitBounds {
                b: [-15.0, 15.0],
                lambda: [-2.0, 2.0],
                gamma: [1e-6, 50.0],
                alpha: [0.0, 0.99],
                q_margin: 1e-6,
            },
            minimizer: MinimizerOptions::default(),
        }
    }

    /// Single-hypothesis baseline preset: 16 restarts, `b` in [-30, 30].
    pub fn baseline(seed: u64) -> Self {
        let mut cfg = Self::joint(seed);
        cfg.restarts = 16;
        cfg.informed_starts = 16;
        cfg.bounds.b = [-30.0, 30.0];
        cfg
    }
}

/// Fixed description of one hypothesis entering a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    /// Hypothesis name (matches [`AccuracyCurve::hypothesis`]).
    pub name: String,
    /// MDL complexity in bits.
    pub complexity_bits: f64,
    /// Context share at mixture ratio `rho`.
    pub share: RhoShare,
    /// Pre-transition accuracy.
    pub p0: f64,
}

/// Per-parameter record of whether the optimum sits on a bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSaturation {
    /// Parameter name.
    pub parameter: String,
    /// Fitted value.
    pub value: f64,
    /// Lower bound.
    pub lower: f64,
    /// Upper bound.
    pub upper: f64,
    /// Within [`SATURATION_TOLERANCE`] of either bound.
    pub saturated: bool,
}

/// AIC and BIC under Gaussian residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    /// Akaike information criterion.
    pub aic: f64,
    /// Bayesian information criterion.
    pub bic: f64,
    /// The MSE was zero and replaced by machine epsilon.
    pub mse_floored: bool,
}

/// `AIC = n (ln(2 pi MSE) + 1) + 2k`, `BIC = n (ln(2 pi MSE) + 1) + k ln n`.
pub fn information_criteria(mse: f64, n_obs: usize, k_params: usize) -> Result<InformationCriteria> {
    if n_obs == 0 || !(mse >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "information criteria need n >= 1 and mse >= 0 (n = {n_obs}, mse = {mse})"
        )));
    }
    let mse_floored = mse <= 0.0;
    let mse = mse.max(f64::EPSILON);
    let n = n_obs as f64;
    let k = k_params as f64;
    let fit_term = n * ((2.0 * std::f64::consts::PI * mse).ln() + 1.0);
    Ok(InformationCriteria {
        aic: fit_term + 2.0 * k,
        bic: fit_term + k * n.ln(),
        mse_floored,
    })
}

/// Outcome of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Fitted parameterization.
    pub variant: Variant,
    /// Fitted parameters.
    pub params: BeliefParams,
    /// MSE on the training curves.
    pub train_mse: f64,
    /// MSE on validation curves, when supplied.
    pub val_mse: Option<f64>,
    /// MSE on test curves, when supplied.
    pub test_mse: Option<f64>,
    /// Akaike information criterion on the training data.
    pub aic: f64,
    /// Bayesian information criterion on the training data.
    pub bic: f64,
    /// Training observations.
    pub n_obs: usize,
    /// Free parameters.
    pub n_params: usize,
    /// The training MSE was zero and floored for the criteria.
    pub mse_floored: bool,
    /// Every observed accuracy was identical.
    pub degenerate: bool,
    /// Restarts attempted.
    pub restarts_run: usize,
    /// Index of the winning restart.
    pub best_restart_index: usize,
    /// Stop reason of the winning restart.
    pub best_termination: Termination,
    /// Bound proximity per free parameter.
    pub saturation: Vec<BoundSaturation>,
    /// Configuration echo.
    pub config: FitConfig,
}

impl FitResult {
    /// Names of the parameters on a bound.
    pub fn saturated_parameters(&self) -> Vec<&str> {
        self.saturation
            .iter()
            .filter(|s| s.saturated)
            .map(|s| s.parameter.as_str())
            .collect()
    }

    /// Fitted complexity penalty (per-graph variant only).
    pub fn lambda(&self) -> Option<f64> {
        match self.params.prior {
            Prior::PerGraph { lambda, .. } => Some(lambda),
            _ => None,
        }
    }

    /// Attach validation and test errors.
    pub fn with_holdout(
        mut self,
        val: Option<&[AccuracyCurve]>,
        test: Option<&[AccuracyCurve]>,
    ) -> Result<Self> {
        self.val_mse = val.map(|c| evaluate_mse(&self.params, c)).transpose()?;
        self.test_mse = test.map(|c| evaluate_mse(&self.params, c)).transpose()?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy)]
struct Observation {
    k: usize,
    rho: f64,
    n: f64,
    y: f64,
}

fn observations(curves: &[AccuracyCurve], names: &[&str]) -> Result<Vec<Observation>> {
    let mut obs = Vec::new();
    for c in curves {
        c.validate()?;
        let k = names.iter().position(|n| *n == c.hypothesis).ok_or_else(|| {
            Error::InvalidArgument(format!("curve for unknown hypothesis `{}`", c.hypothesis))
        })?;
        obs.extend(c.samples.iter().map(|s| Observation {
            k,
            rho: c.rho,
            n: s.n as f64,
            y: s.accuracy,
        }));
    }
    // Canonical order makes the floating-point sum independent of input order.
    obs.sort_by(|a, b| {
        a.k.cmp(&b.k)
            .then(a.rho.total_cmp(&b.rho))
            .then(a.n.total_cmp(&b.n))
            .then(a.y.total_cmp(&b.y))
    });
    Ok(obs)
}

/// Mean squared error of `params` on `curves`.
pub fn evaluate_mse(params: &BeliefParams, curves: &[AccuracyCurve]) -> Result<f64> {
    let names: Vec<&str> = params.hypotheses.iter().map(|h| h.name.as_str()).collect();
    let obs = observations(curves, &names)?;
    if obs.is_empty() {
        return Err(Error::NoData("no observations to evaluate".into()));
    }
    let sse: f64 = obs
        .iter()
        .map(|o| (super::model::predict_accuracy(params, o.k, o.rho, o.n) - o.y).powi(2))
        .sum();
    Ok(sse / obs.len() as f64)
}

/// Maps between the optimizer's coordinate vector and [`BeliefParams`].
struct Layout<'a> {
    variant: Variant,
    specs: &'a [HypothesisSpec],
}

impl Layout<'_> {
    fn k(&self) -> usize {
        self.specs.len()
    }

    /// Internal `lambda` coordinate is `lambda * lambda_scale`, in log-odds units.
    fn lambda_scale(&self) -> f64 {
        let m = self.specs.iter().map(|s| s.complexity_bits.abs()).sum::<f64>() / self.k() as f64;
        if m > 0.0 { m } else { 1.0 }
    }

    fn dim(&self) -> usize {
        self.variant.free_parameters(self.k())
    }

    fn names(&self) -> Vec<String> {
        let h = |p: &'static str| self.specs.iter().map(move |s| format!("{p}_{}", s.name));
        match self.variant {
            Variant::PerGraph => ["b0".to_owned(), "lambda".to_owned()]
                .into_iter()
                .chain(h("gamma"))
                .chain(h("alpha"))
                .chain(h("q"))
                .collect(),
            Variant::MixtureBias => ["b_grid", "b_ring", "gamma", "alpha", "q"]
                .map(str::to_owned)
                .to_vec(),
            Variant::Baseline => ["b", "gamma", "alpha", "q"].map(str::to_owned).to_vec(),
        }
    }

    /// Box in optimizer coordinates (`gamma` as its logarithm).
    fn bounds(&self, b: &FitBounds) -> Bounds {
        let lg = [b.gamma[0].ln(), b.gamma[1].ln()];
        let q_lo = |p0: f64| p0 + b.q_margin;
        let mut lower = Vec::with_capacity(self.dim());
        let mut upper = Vec::with_capacity(self.dim());
        let mut push = |r: [f64; 2]| {
            lower.push(r[0]);
            upper.push(r[1]);
        };
        match self.variant {
            Variant::PerGraph => {
                let ls = self.lambda_scale();
                push(b.b);
                push([b.lambda[0] * ls, b.lambda[1] * ls]);
                self.specs.iter().for_each(|_| push(lg));
                self.specs.iter().for_each(|_| push(b.alpha));
                self.specs.iter().for_each(|s| push([q_lo(s.p0), 1.0]));
            }
            Variant::MixtureBias => {
                push(b.b);
                push(b.b);
                push(lg);
                push(b.alpha);
                let p0 = self.specs.iter().map(|s| s.p0).fold(f64::MIN, f64::max);
                push([q_lo(p0), 1.0]);
            }
            Variant::Baseline => {
                push(b.b);
                push(lg);
                push(b.alpha);
                push([q_lo(self.specs[0].p0), 1.0]);
            }
        }
        Bounds { lower, upper }
    }

    fn unpack(&self, x: &[f64]) -> BeliefParams {
        let k = self.k();
        let hyp = |i: usize, lg: f64, a: f64, q: f64| {
            let s = &self.specs[i];
            HypothesisParams {
                name: s.name.clone(),
                complexity_bits: s.complexity_bits,
                share: s.share,
                p0: s.p0,
                gamma: lg.exp(),
                alpha: a,
                q,
            }
        };
        match self.variant {
            Variant::PerGraph => BeliefParams {
                prior: Prior::PerGraph {
                    b0: x[0],
                    lambda: x[1] / self.lambda_scale(),
                },
                hypotheses: (0..k)
                    .map(|i| hyp(i, x[2 + i], x[2 + k + i], x[2 + 2 * k + i]))
                    .collect(),
            },
            Variant::MixtureBias => BeliefParams {
                prior: Prior::MixtureBias {
                    b_grid: x[0],
                    b_ring: x[1],
                },
                hypotheses: (0..k).map(|i| hyp(i, x[2], x[3], x[4])).collect(),
            },
            Variant::Baseline => BeliefParams {
                prior: Prior::Baseline { b: x[0] },
                hypotheses: vec![hyp(0, x[1], x[2], x[3])],
            },
        }
    }

    fn pack(&self, p: &BeliefParams) -> Vec<f64> {
        let h = &p.hypotheses;
        match (self.variant, p.prior) {
            (Variant::PerGraph, Prior::PerGraph { b0, lambda }) => [b0, lambda * self.lambda_scale()]
                .into_iter()
                .chain(h.iter().map(|h| h.gamma.ln()))
                .chain(h.iter().map(|h| h.alpha))
                .chain(h.iter().map(|h| h.q))
                .collect(),
            (Variant::MixtureBias, Prior::MixtureBias { b_grid, b_ring }) => {
                vec![b_grid, b_ring, h[0].gamma.ln(), h[0].alpha, h[0].q]
            }
            (Variant::Baseline, Prior::Baseline { b }) => vec![b, h[0].gamma.ln(), h[0].alpha, h[0].q],
            _ => Vec::new(),
        }
    }

    /// Smallest and largest positive effective context in `obs`.
    fn context_range(&self, obs: &[Observation]) -> [f64; 2] {
        let (lo, hi) = obs
            .iter()
            .map(|o| self.specs[o.k].share.share(o.rho) * o.n)
            .filter(|x| *x > 0.0)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
        if lo.is_finite() {
            [lo, hi.max(lo)]
        } else {
            [1.0, 1.0]
        }
    }

    /// Start whose per-hypothesis inflection points fall inside the observed
    /// context range: draw `b_k < 0`, `alpha_k` and a log-uniform `N*_k`, then
    /// solve for `gamma_k`.
    fn informed_start(&self, rng: &mut impl Rng, fb: &FitBounds, range: [f64; 2]) -> Vec<f64> {
        let k = self.k();
        let b_lo = fb.b[0].max(-10.0);
        let b_hi = fb.b[1].min(-0.5).max(b_lo);
        let mut draw = |p0: f64| {
            let b = b_lo + (b_hi - b_lo) * rng.random::<f64>();
            let alpha = fb.alpha[0] + (fb.alpha[1].min(0.9) - fb.alpha[0]) * rng.random::<f64>();
            let n_star = (range[0].ln() + (range[1].ln() - range[0].ln()) * rng.random::<f64>()).exp();
            let gamma = (-b / n_star.powf(1.0 - alpha)).clamp(fb.gamma[0], fb.gamma[1]);
            let q_lo = p0 + fb.q_margin;
            let q = q_lo + (1.0 - q_lo) * rng.random::<f64>();
            (b, gamma.ln(), alpha, q)
        };
        let h: Vec<(f64, f64, f64, f64)> = self.specs.iter().map(|s| draw(s.p0)).collect();
        match self.variant {
            Variant::PerGraph => {
                // Least-squares line through (C_k, b_k); flat when complexities coincide.
                let c: Vec<f64> = self.specs.iter().map(|s| s.complexity_bits).collect();
                let cm = c.iter().sum::<f64>() / k as f64;
                let bm = h.iter().map(|t| t.0).sum::<f64>() / k as f64;
                let sxx: f64 = c.iter().map(|x| (x - cm) * (x - cm)).sum();
                let sxy: f64 = c.iter().zip(&h).map(|(x, t)| (x - cm) * (t.0 - bm)).sum();
                let lambda = if sxx > 0.0 { -sxy / sxx } else { 0.0 };
                let b0 = bm + lambda * cm;
                [b0, lambda * self.lambda_scale()]
                    .into_iter()
                    .chain(h.iter().map(|t| t.1))
                    .chain(h.iter().map(|t| t.2))
                    .chain(h.iter().map(|t| t.3))
                    .collect()
            }
            Variant::MixtureBias => {
                let p0 = self.specs.iter().map(|s| s.p0).fold(f64::MIN, f64::max);
                let (b_other, ..) = draw(p0);
                let (b, lg, a, _) = h[0];
                let q_lo = p0 + fb.q_margin;
                vec![b, b_other, lg, a, q_lo + (1.0 - q_lo) * rng.random::<f64>()]
            }
            Variant::Baseline => {
                let (b, lg, a, q) = h[0];
                vec![b, lg, a, q]
            }
        }
    }

    /// MSE and its gradient in optimizer coordinates.
    fn objective(&self, x: &[f64], obs: &[Observation], grad: &mut [f64]) -> f64 {
        let k = self.k();
        let ls = self.lambda_scale();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut sse = 0.0;
        for o in obs {
            let spec = &self.specs[o.k];
            let (b, lg, a, q, ib, ig, ia, iq) = match self.variant {
                Variant::PerGraph => (
                    x[0] - x[1] / ls * spec.complexity_bits,
                    x[2 + o.k],
                    x[2 + k + o.k],
                    x[2 + 2 * k + o.k],
                    usize::MAX,
                    2 + o.k,
                    2 + k + o.k,
                    2 + 2 * k + o.k,
                ),
                Variant::MixtureBias => (
                    (1.0 - o.rho) * x[0] + o.rho * x[1],
                    x[2],
                    x[3],
                    x[4],
                    usize::MAX,
                    2,
                    3,
                    4,
                ),
                Variant::Baseline => (x[0], x[1], x[2], x[3], 0, 1, 2, 3),
            };
            let gamma = lg.exp();
            let xe = spec.share.share(o.rho) * o.n;
            let e = evidence(gamma, a, xe);
            let s = sigmoid(b + e);
            let p = spec.p0 + (q - spec.p0) * s;
            let r = p - o.y;
            sse += r * r;
            let dz = 2.0 * r * (q - spec.p0) * s * (1.0 - s);
            match self.variant {
                Variant::PerGraph => {
                    grad[0] += dz;
                    grad[1] -= dz * spec.complexity_bits / ls;
                }
                Variant::MixtureBias => {
                    grad[0] += dz * (1.0 - o.rho);
                    grad[1] += dz * o.rho;
                }
                Variant::Baseline => grad[ib] += dz,
            }
            grad[ig] += dz * e;
            if xe > 0.0 {
                grad[ia] -= dz * e * xe.ln();
            }
            grad[iq] += 2.0 * r * s;
        }
        let inv = 1.0 / obs.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        sse * inv
    }

    fn saturation(&self, x: &[f64], bounds: &Bounds) -> Vec<BoundSaturation> {
        let names = self.names();
        let gamma_slots: Vec<usize> = match self.variant {
            Variant::PerGraph => (2..2 + self.k()).collect(),
            Variant::MixtureBias => vec![2],
            Variant::Baseline => vec![1],
        };
        names
            .into_iter()
            .enumerate()
            .map(|(i, parameter)| {
                let lambda_slot = self.variant == Variant::PerGraph && i == 1;
                let ls = self.lambda_scale();
                let tr = |v: f64| {
                    if gamma_slots.contains(&i) {
                        v.exp()
                    } else if lambda_slot {
                        v / ls
                    } else {
                        v
                    }
                };
                let (value, lower, upper) = (tr(x[i]), tr(bounds.lower[i]), tr(bounds.upper[i]));
                BoundSaturation {
                    parameter,
                    value,
                    lower,
                    upper,
                    saturated: (value - lower).abs() <= SATURATION_TOLERANCE
                        || (upper - value).abs() <= SATURATION_TOLERANCE,
                }
            })
            .collect()
    }
}

fn check_specs(specs: &[HypothesisSpec], variant: Variant, bounds: &FitBounds) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no hypotheses to fit".into()));
    }
    if variant == Variant::Baseline && specs.len() != 1 {
        return Err(Error::InvalidArgument(
            "the baseline variant fits exactly one hypothesis".into(),
        ));
    }
    for s in specs {
        if !(0.0..1.0 - bounds.q_margin).contains(&s.p0) {
            return Err(Error::InvalidArgument(format!(
                "p0 of `{}` is {} and leaves no room for q in (p0, 1]",
                s.name, s.p0
            )));
        }
    }
    Ok(())
}

/// Fit the belief model to `curves`.
pub fn fit(
    curves: &[AccuracyCurve],
    specs: &[HypothesisSpec],
    variant: Variant,
    config: &FitConfig,
) -> Result<FitResult> {
    fit_from(curves, specs, variant, config, None)
}

/// [`fit`] with an optional warm start used as restart 0.
///
/// Random restarts fill the remaining `config.restarts - 1` slots when a warm
/// start is given.
pub fn fit_from(
    curves: &[AccuracyCurve],
    specs: &[HypothesisSpec],
    variant: Variant,
    config: &FitConfig,
    warm_start: Option<&BeliefParams>,
) -> Result<FitResult> {
    check_specs(specs, variant, &config.bounds)?;
    let names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
    let obs = observations(curves, &names)?;
    let layout = Layout { variant, specs };
    let dim = layout.dim();
    if obs.len() < dim {
        return Err(Error::InvalidArgument(format!(
            "{} observations cannot identify {dim} free parameters",
            obs.len()
        )));
    }
    let bounds = layout.bounds(&config.bounds);
    let restarts = config.restarts.max(1) + config.informed_starts;
    let context_range = layout.context_range(&obs);

    let mut best: Option<(usize, super::optim::Minimum)> = None;
    for r in 0..restarts {
        let x0 = match (r, warm_start) {
            (0, Some(p)) => {
                let mut x = layout.pack(p);
                if x.len() != dim {
                    return Err(Error::InvalidArgument("warm start has the wrong variant".into()));
                }
                bounds.project(&mut x);
                x
            }
            _ if r < config.restarts.max(1) => {
                let mut rng = stream_rng(derive_seed(config.seed, r as u64), 4);
                bounds
                    .lower
                    .iter()
                    .zip(&bounds.upper)
                    .map(|(&lo, &hi)| lo + (hi - lo) * rng.random::<f64>())
                    .collect()
            }
            _ => {
                let mut rng = stream_rng(derive_seed(config.seed, r as u64), 12);
                let mut x = layout.informed_start(&mut rng, &config.bounds, context_range);
                bounds.project(&mut x);
                x
            }
        };
        let m = minimize(
            |x, g| layout.objective(x, &obs, g),
            &x0,
            &bounds,
            &config.minimizer,
        );
        if !m.f.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(_, b)| m.f < b.f) {
            best = Some((r, m));
        }
    }
    let (best_index, m) =
        best.ok_or_else(|| Error::Numeric("every restart produced a non-finite loss".into()))?;

    let params = layout.unpack(&m.x);
    let train_mse = m.f;
    let ic = information_criteria(train_mse, obs.len(), dim)?;
    let first = obs[0].y;
    Ok(FitResult {
        variant,
        params,
        train_mse,
        val_mse: None,
        test_mse: None,
        aic: ic.aic,
        bic: ic.bic,
        n_obs: obs.len(),
        n_params: dim,
        mse_floored: ic.mse_floored,
        degenerate: obs.iter().all(|o| o.y == first),
        restarts_run: restarts,
        best_restart_index: best_index,
        best_termination: m.termination,
        saturation: layout.saturation(&m.x, &bounds),
        config: *config,
    })
}
