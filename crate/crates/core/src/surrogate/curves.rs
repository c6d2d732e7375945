// SPDX-License-Identifier: MIT OR Apache-2.0

//! Neighbour-hit curves produced by running an agent along mixture walks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bayes::{BayesAgent, BayesConfig};
use super::induction::{InductionAgent, DEFAULT_EPSILON};
use crate::belief::curve::{curves_from_scores, scored_positions, AccuracyCurve, ScoredPosition, WalkScores};
use crate::error::{Error, Result};
use crate::graph::GraphHypothesis;
use crate::intervention::{Condition, LogitRecord};
use crate::rng::derive_seed;
use crate::walk::{interleave, PromptPair, WalkRecord, DEFAULT_SEGMENT_LEN};

/// Which agent to run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "agent", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentKind {
    /// Bigram-copying agent.
    Induction {
        /// Additive smoothing.
        epsilon: f64,
    },
    /// Bayesian structure learner.
    Bayes(BayesConfig),
}

impl AgentKind {
    /// Induction agent with default smoothing.
    pub fn induction() -> Self {
        AgentKind::Induction {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// How a predictive distribution turns into a neighbour hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    /// Most probable word, ties broken uniformly; scored as the expected hit.
    Argmax,
    /// A word sampled from the predictive; scored as the expected hit (the
    /// predictive mass on neighbours).
    Sample,
}

/// Agent plus decoding rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Agent.
    pub kind: AgentKind,
    /// Decoding rule.
    pub decoding: Decoding,
}

impl AgentConfig {
    /// Induction agent with argmax decoding.
    pub fn induction() -> Self {
        Self {
            kind: AgentKind::induction(),
            decoding: Decoding::Argmax,
        }
    }

    /// Bayes agent with sampled decoding.
    pub fn bayes(config: BayesConfig) -> Self {
        Self {
            kind: AgentKind::Bayes(config),
            decoding: Decoding::Sample,
        }
    }
}

/// Union of the hypothesis vocabularies in first-appearance order.
pub fn union_vocab(graphs: &[&GraphHypothesis]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for g in graphs {
        for w in g.words() {
            if !out.contains(w) {
                out.push(w.clone());
            }
        }
    }
    out
}

enum Running<'g> {
    Induction(InductionAgent),
    Bayes(BayesAgent<'g>),
}

fn expected_hit(p: &[f64], decoding: Decoding, is_target: impl Fn(usize) -> bool) -> f64 {
    match decoding {
        Decoding::Sample => (0..p.len()).filter(|&i| is_target(i)).map(|i| p[i]).sum(),
        Decoding::Argmax => {
            let best = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ties: Vec<usize> = (0..p.len()).filter(|&i| p[i] == best).collect();
            ties.iter().filter(|&&i| is_target(i)).count() as f64 / ties.len() as f64
        }
    }
}

/// Score an agent's next-word predictions along `walk` against every hypothesis.
///
/// At position `t` the agent has ingested tokens `0..=t`; its prediction of
/// token `t + 1` is scored against the neighbours of token `t` in each
/// hypothesis containing it.
pub fn agent_walk_scores(
    config: &AgentConfig,
    walk: &WalkRecord,
    graphs: &[&GraphHypothesis],
    include_boundaries: bool,
) -> Result<Vec<WalkScores>> {
    let vocab = union_vocab(graphs);
    let index = |w: &str| vocab.iter().position(|s| s == w);
    let mut agent = match config.kind {
        AgentKind::Induction { epsilon } => Running::Induction(InductionAgent::new(&vocab, epsilon)?),
        AgentKind::Bayes(c) => Running::Bayes(BayesAgent::new(graphs, &vocab, c)?),
    };
    // Per hypothesis: scored position -> (node); looked up by t.
    let scored: Vec<Vec<Option<usize>>> = graphs
        .iter()
        .map(|g| {
            let mut v = vec![None; walk.len()];
            for (t, node) in scored_positions(walk, g, include_boundaries) {
                v[t] = Some(node);
            }
            v
        })
        .collect();
    // Vocabulary index of each hypothesis node.
    let node_vocab: Vec<Vec<usize>> = graphs
        .iter()
        .map(|g| g.words().iter().map(|w| index(w).expect("union vocabulary")).collect())
        .collect();
    let seg = walk.segment_index();
    let mut positions: Vec<Vec<ScoredPosition>> = vec![Vec::new(); graphs.len()];
    for t in 0..walk.len() {
        if t > 0 {
            let (a, b) = (&walk.words[t - 1], &walk.words[t]);
            match &mut agent {
                Running::Induction(ag) => ag.observe(a, b)?,
                Running::Bayes(ag) => ag.observe(a, b, seg[t - 1] == seg[t]),
            }
        }
        if scored.iter().all(|s| s[t].is_none()) {
            continue;
        }
        let current = &walk.words[t];
        let p = match &agent {
            Running::Induction(ag) => ag.probabilities(current)?,
            Running::Bayes(ag) => ag.predictive(current)?,
        };
        for (k, g) in graphs.iter().enumerate() {
            let Some(node) = scored[k][t] else { continue };
            let targets: Vec<usize> = g.neighbors(node)?.iter().map(|&u| node_vocab[k][u]).collect();
            let hit = match (&agent, config.decoding) {
                // Argmax over raw counts; smoothing never changes the order.
                (Running::Induction(ag), Decoding::Argmax) => {
                    ag.argmax_hit_probability(current, |i| targets.contains(&i))?
                }
                _ => expected_hit(&p, config.decoding, |i| targets.contains(&i)),
            };
            positions[k].push(ScoredPosition {
                context_len: t + 1,
                hit,
            });
        }
    }
    Ok(graphs
        .iter()
        .zip(positions)
        .map(|(g, positions)| WalkScores {
            walk_id: walk.walk_id,
            rho: walk.rho.unwrap_or(0.0),
            hypothesis: g.name().to_owned(),
            positions,
        })
        .collect())
}

/// Next-token logits of `config`'s agent after ingesting `context`.
pub fn agent_context_logits(
    config: &AgentConfig,
    context: &WalkRecord,
    graphs: &[&GraphHypothesis],
) -> Result<BTreeMap<String, f64>> {
    let vocab = union_vocab(graphs);
    let last = context
        .words
        .last()
        .ok_or_else(|| Error::InvalidArgument("empty context".into()))?;
    let z = match config.kind {
        AgentKind::Induction { epsilon } => InductionAgent::from_context(&vocab, epsilon, &context.words)?.logits(last)?,
        AgentKind::Bayes(c) => {
            let mut agent = BayesAgent::new(graphs, &vocab, c)?;
            let seg = context.segment_index();
            for t in 1..context.len() {
                agent.observe(&context.words[t - 1], &context.words[t], seg[t - 1] == seg[t]);
            }
            agent.logits(last)?
        }
    };
    Ok(vocab.into_iter().zip(z).collect())
}

/// Clean and corrupt logit records of one prompt pair.
pub fn agent_pair_logits(config: &AgentConfig, pair: &PromptPair, graphs: &[&GraphHypothesis]) -> Result<Vec<LogitRecord>> {
    [(Condition::Clean, &pair.clean), (Condition::Corrupt, &pair.corrupt)]
        .into_iter()
        .map(|(condition, walk)| {
            Ok(LogitRecord {
                pair_id: pair.pair_id.clone(),
                condition,
                layer: None,
                final_node: pair.final_node,
                final_word: pair.final_word.clone(),
                logits: agent_context_logits(config, walk, graphs)?,
                alpha: None,
                control: None,
                direction: None,
            })
        })
        .collect()
}

/// Monte-Carlo design for agent curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveDesign {
    /// Mixture ratios.
    pub rho_grid: Vec<f64>,
    /// Context lengths at which curves are sampled.
    pub n_grid: Vec<usize>,
    /// Walks per mixture ratio.
    pub walks_per_rho: usize,
    /// Tokens per walk; at least the largest `n_grid` entry.
    pub walk_len: usize,
    /// Tokens per segment.
    pub segment_len: usize,
    /// Trailing averaging window.
    pub window: usize,
    /// Score positions whose successor lies in another segment.
    pub include_boundaries: bool,
}

impl CurveDesign {
    /// Five-rung ladder, 30 log-spaced context lengths up to 2000.
    pub fn standard(walks_per_rho: usize) -> Self {
        Self {
            rho_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            n_grid: log_grid(10, 2000, 30),
            walks_per_rho,
            walk_len: 2000,
            segment_len: DEFAULT_SEGMENT_LEN,
            window: 50,
            include_boundaries: false,
        }
    }
}

/// `count` roughly log-spaced distinct integers from `lo` to `hi`.
pub fn log_grid(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let (a, b) = ((lo.max(1) as f64).ln(), (hi.max(lo) as f64).ln());
    let mut v: Vec<usize> = (0..count)
        .map(|i| {
            let f = if count > 1 { i as f64 / (count - 1) as f64 } else { 1.0 };
            (a + f * (b - a)).exp().round() as usize
        })
        .collect();
    v.dedup();
    v
}

/// Walks of the design; walk ids are `derive_seed(seed, index)`.
pub fn design_walks(
    g_a: &GraphHypothesis,
    g_b: &GraphHypothesis,
    design: &CurveDesign,
    seed: u64,
) -> Result<Vec<WalkRecord>> {
    if design.walk_len < design.n_grid.iter().copied().max().unwrap_or(0) {
        return Err(Error::InvalidArgument("walks are shorter than the largest context length".into()));
    }
    let mut walks = Vec::new();
    let mut index = 0u64;
    for &rho in &design.rho_grid {
        for _ in 0..design.walks_per_rho {
            walks.push(interleave(
                g_a,
                g_b,
                rho,
                design.walk_len,
                design.segment_len,
                derive_seed(seed, index),
            )?);
            index += 1;
        }
    }
    Ok(walks)
}

/// Run `config` on fresh walks and return per-walk scores and curves.
pub fn agent_accuracy_curves(
    config: &AgentConfig,
    g_a: &GraphHypothesis,
    g_b: &GraphHypothesis,
    design: &CurveDesign,
    seed: u64,
) -> Result<(Vec<WalkScores>, Vec<AccuracyCurve>)> {
    let mut scores = Vec::new();
    for walk in design_walks(g_a, g_b, design, seed)? {
        scores.extend(agent_walk_scores(config, &walk, &[g_a, g_b], design.include_boundaries)?);
    }
    let curves = curves_from_scores(&scores, &design.n_grid, design.window);
    Ok((scores, curves))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_grid, build_ring, default_words, VocabMode};

    fn graphs() -> (GraphHypothesis, GraphHypothesis) {
        let (a, b) = default_words(VocabMode::Disjoint);
        (build_grid(4, 4, a).unwrap(), build_ring(16, b).unwrap())
    }

    fn small_design() -> CurveDesign {
        CurveDesign {
            rho_grid: vec![1.0],
            n_grid: vec![1, 1000],
            walks_per_rho: 20,
            walk_len: 1000,
            segment_len: 100,
            window: 1,
            include_boundaries: true,
        }
    }

    #[test]
    fn induction_starts_at_chance() {
        let (grid, ring) = graphs();
        let (_, curves) = agent_accuracy_curves(&AgentConfig::induction(), &grid, &ring, &small_design(), 2).unwrap();
        let ring_curve = curves.iter().find(|c| c.hypothesis == "ring").unwrap();
        // No transition seen at N = 1: uniform over the 32-word union, ring degree 2.
        assert!((ring_curve.samples[0].accuracy - 2.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn bayes_ring_accuracy_approaches_one() {
        let (grid, ring) = graphs();
        let cfg = AgentConfig::bayes(BayesConfig {
            beta: 0.2,
            ..Default::default()
        });
        let (_, curves) = agent_accuracy_curves(&cfg, &grid, &ring, &small_design(), 2).unwrap();
        let ring_curve = curves.iter().find(|c| c.hypothesis == "ring").unwrap();
        assert!(ring_curve.samples.last().unwrap().accuracy > 0.99);
    }

    #[test]
    fn induction_pair_logits_favour_copied_successors() {
        let (a, b) = default_words(VocabMode::Overlap);
        let (grid, ring) = (build_grid(4, 4, a).unwrap(), build_ring(16, b).unwrap());
        let pair = crate::walk::make_prompt_pair(&grid, &ring, 400, 3, "p").unwrap();
        let recs = agent_pair_logits(&AgentConfig::induction(), &pair, &[&grid, &ring]).unwrap();
        assert_eq!(recs.len(), 2);
        let d = |r: &LogitRecord| crate::intervention::graph_logit_contrast(&r.logits, &pair.final_word, &grid, &ring).unwrap();
        assert!(d(&recs[0]) > 0.0 && d(&recs[1]) < 0.0);
    }

    #[test]
    fn log_grid_is_increasing() {
        let g = log_grid(10, 2000, 30);
        assert_eq!((g[0], *g.last().unwrap()), (10, 2000));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
