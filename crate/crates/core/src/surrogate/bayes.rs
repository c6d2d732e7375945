// SPDX-License-Identifier: MIT OR Apache-2.0

//! Bayesian structure learner over a fixed set of graph hypotheses.
//!
//! Each hypothesis scores `b0 - lambda C_k + beta (LL_k - LL0_k)`, where
//! `LL_k` is the walk log-likelihood of the transitions inside `H_k`'s
//! vocabulary and `LL0_k` the log-likelihood of the same transitions under a
//! uniform null. The optional null hypothesis scores 0 and predicts uniformly.
//! Without the null the score reduces to `-lambda C_k + beta LL_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphHypothesis;

/// Agent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BayesConfig {
    /// Baseline log-odds against the null.
    pub b0: f64,
    /// Prior penalty per bit of complexity.
    pub lambda_true: f64,
    /// Weight of one nat of evidence.
    pub beta: f64,
    /// Probability mass a hypothesis leaks to non-edges.
    pub leak: f64,
    /// Include the uniform null hypothesis.
    pub null: bool,
    /// Logit temperature.
    pub temperature: f64,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self {
            b0: 1.0,
            lambda_true: 0.1,
            beta: 0.015,
            leak: 0.0,
            null: true,
            temperature: 1.0,
        }
    }
}

/// Running posterior state.
#[derive(Debug, Clone)]
pub struct BayesAgent<'g> {
    graphs: Vec<&'g GraphHypothesis>,
    complexity: Vec<f64>,
    vocab: Vec<String>,
    config: BayesConfig,
    ll: Vec<f64>,
    ll_null: Vec<f64>,
}

impl<'g> BayesAgent<'g> {
    /// Fresh agent over `graphs`; `vocab` must contain every hypothesis word.
    pub fn new(graphs: &[&'g GraphHypothesis], vocab: &[String], config: BayesConfig) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::InvalidArgument("Bayes agent needs at least one hypothesis".into()));
        }
        if !(0.0..=1.0).contains(&config.leak) || !(config.temperature > 0.0) || !(config.beta >= 0.0) {
            return Err(Error::InvalidArgument(
                "leak must lie in [0, 1], temperature > 0 and beta >= 0".into(),
            ));
        }
        for g in graphs {
            if let Some(w) = g.words().iter().find(|w| !vocab.contains(w)) {
                return Err(Error::InvalidArgument(format!("`{w}` missing from the agent vocabulary")));
            }
        }
        Ok(Self {
            complexity: graphs.iter().map(|g| g.mdl_complexity() as f64).collect(),
            graphs: graphs.to_vec(),
            vocab: vocab.to_vec(),
            config,
            ll: vec![0.0; graphs.len()],
            ll_null: vec![0.0; graphs.len()],
        })
    }

    /// Hypotheses in score order.
    pub fn graphs(&self) -> &[&'g GraphHypothesis] {
        &self.graphs
    }

    /// Agent vocabulary.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Update with one transition; `within_segment` is false for transitions
    /// that cross a segment boundary, which are ignored.
    pub fn observe(&mut self, from: &str, to: &str, within_segment: bool) {
        if !within_segment {
            return;
        }
        let eta = self.config.leak;
        for (k, g) in self.graphs.iter().enumerate() {
            let (Some(a), Some(b)) = (g.node_of(from), g.node_of(to)) else {
                continue;
            };
            let n = g.len() as f64;
            let deg = g.degree(a).unwrap_or(0) as f64;
            let p = if g.has_edge(a, b) {
                (1.0 - eta) / deg + eta / n
            } else {
                eta / n
            };
            self.ll[k] += p.ln();
            self.ll_null[k] -= n.ln();
        }
    }

    /// Log-likelihood of the in-scope transitions under each hypothesis.
    pub fn log_likelihoods(&self) -> &[f64] {
        &self.ll
    }

    fn score(&self, k: usize) -> f64 {
        let c = &self.config;
        if c.null {
            let evidence = if self.ll[k] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                c.beta * (self.ll[k] - self.ll_null[k])
            };
            c.b0 - c.lambda_true * self.complexity[k] + evidence
        } else if self.ll[k] == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            -c.lambda_true * self.complexity[k] + c.beta * self.ll[k]
        }
    }

    /// Posterior over the hypotheses containing `current` (in hypothesis
    /// order), followed by the null weight (0 without the null).
    pub fn posterior(&self, current: &str) -> Result<(Vec<f64>, f64)> {
        let mut scores: Vec<f64> = (0..self.graphs.len())
            .map(|k| {
                if self.graphs[k].node_of(current).is_some() {
                    self.score(k)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let null_score = if self.config.null { 0.0 } else { f64::NEG_INFINITY };
        scores.push(null_score);
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(Error::Numeric(format!(
                "every hypothesis has zero likelihood at `{current}`"
            )));
        }
        let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = w.iter().sum();
        let null = w[w.len() - 1] / z;
        Ok((w[..w.len() - 1].iter().map(|x| x / z).collect(), null))
    }

    /// Posterior-weighted mixture of uniform-over-neighbour predictions, in
    /// vocabulary order.
    pub fn predictive(&self, current: &str) -> Result<Vec<f64>> {
        let (post, null) = self.posterior(current)?;
        let v = self.vocab.len();
        let mut p = vec![null / v as f64; v];
        for (k, g) in self.graphs.iter().enumerate() {
            if post[k] == 0.0 {
                continue;
            }
            let Some(x) = g.node_of(current) else { continue };
            let nbrs = g.neighbors(x)?;
            for &u in nbrs {
                let w = &g.words()[u];
                let i = self.vocab.iter().position(|s| s == w).expect("checked at construction");
                p[i] += post[k] / nbrs.len() as f64;
            }
        }
        Ok(p)
    }

    /// `ln p / temperature`, floored at the induction agent's logit floor.
    pub fn logits(&self, current: &str) -> Result<Vec<f64>> {
        let t = self.config.temperature;
        Ok(self
            .predictive(current)?
            .into_iter()
            .map(|p| (p.ln() / t).max(super::induction::LOGIT_FLOOR))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_grid, build_ring, default_words, VocabMode};

    fn overlap() -> (GraphHypothesis, GraphHypothesis) {
        let (a, b) = default_words(VocabMode::Overlap);
        (build_grid(4, 4, a).unwrap(), build_ring(16, b).unwrap())
    }

    fn no_null() -> BayesConfig {
        BayesConfig {
            null: false,
            b0: 0.0,
            beta: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn single_hypothesis_predicts_uniform_neighbors() {
        let (_, ring) = overlap();
        let agent = BayesAgent::new(&[&ring], ring.words(), no_null()).unwrap();
        let x = &ring.words()[0];
        let p = agent.predictive(x).unwrap();
        for (i, w) in ring.words().iter().enumerate() {
            let v = ring.node_of(w).unwrap();
            let expected = if ring.has_edge(0, v) { 0.5 } else { 0.0 };
            assert!((p[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn impossible_context_eliminates_hypothesis() {
        let (grid, ring) = overlap();
        let mut agent = BayesAgent::new(&[&grid, &ring], grid.words(), no_null()).unwrap();
        // A grid edge is never a ring edge under the default word order.
        let (a, b) = grid.edges()[0];
        agent.observe(&grid.words()[a], &grid.words()[b], true);
        let (post, null) = agent.posterior(&grid.words()[a]).unwrap();
        assert_eq!((post[0], post[1], null), (1.0, 0.0, 0.0));
    }

    #[test]
    fn equal_likelihood_favors_simpler_graph() {
        let (grid, ring) = overlap();
        let cfg = BayesConfig {
            lambda_true: 0.05,
            ..no_null()
        };
        let agent = BayesAgent::new(&[&grid, &ring], grid.words(), cfg).unwrap();
        let (post, _) = agent.posterior(&grid.words()[0]).unwrap();
        let expected_ratio = (0.05f64 * 32.0).exp();
        assert!((post[1] / post[0] - expected_ratio).abs() < 1e-9);
    }

    #[test]
    fn posterior_ignores_segment_order() {
        let (grid, ring) = overlap();
        let seg_a = [0usize, 1, 2, 6];
        let seg_b = [3usize, 7, 11];
        let feed = |order: &[&[usize]]| {
            let mut agent = BayesAgent::new(&[&grid, &ring], grid.words(), BayesConfig::default()).unwrap();
            for seg in order {
                for p in seg.windows(2) {
                    agent.observe(&grid.words()[p[0]], &grid.words()[p[1]], true);
                }
            }
            agent.posterior(&grid.words()[5]).unwrap()
        };
        assert_eq!(feed(&[&seg_a, &seg_b]), feed(&[&seg_b, &seg_a]));
    }

    #[test]
    fn boundary_transitions_are_ignored() {
        let (grid, ring) = overlap();
        let mut agent = BayesAgent::new(&[&grid, &ring], grid.words(), no_null()).unwrap();
        agent.observe(&grid.words()[0], &grid.words()[9], false);
        assert_eq!(agent.log_likelihoods(), &[0.0, 0.0]);
    }

    #[test]
    fn predictive_normalizes() {
        let (grid, ring) = overlap();
        let mut agent = BayesAgent::new(&[&grid, &ring], grid.words(), BayesConfig::default()).unwrap();
        agent.observe(&grid.words()[0], &grid.words()[1], true);
        let p = agent.predictive(&grid.words()[5]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
