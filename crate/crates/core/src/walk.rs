// SPDX-License-Identifier: MIT OR Apache-2.0

//! Random walks, mixture-interleaved contexts and matched prompt pairs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphHypothesis;
use crate::rng::{stream_rng, RNG_ALGORITHM};

/// Default tokens per interleaved segment.
pub const DEFAULT_SEGMENT_LEN: usize = 100;

/// A contiguous run of tokens drawn from one hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    /// Index of the first token.
    pub start: usize,
    /// Number of tokens.
    pub length: usize,
    /// Name of the hypothesis that generated the segment.
    pub source: String,
}

/// A generated walk with per-segment provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkRecord {
    /// Identifier used for train/validation/test splits.
    pub walk_id: u64,
    /// Node ids, each in its segment source's id space.
    pub tokens: Vec<usize>,
    /// Vocabulary-mapped words.
    pub words: Vec<String>,
    /// Segments in order; they tile `tokens`.
    pub segments: Vec<Segment>,
    /// Probability that a segment was drawn from the second hypothesis.
    /// `None` for single-source walks.
    pub rho: Option<f64>,
    /// Seed the walk was generated from.
    pub seed: u64,
    /// Nominal tokens per segment.
    pub segment_len: usize,
    /// Generator algorithm identifier.
    pub rng: String,
}

impl WalkRecord {
    /// Number of tokens.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True for an empty walk (never produced by the generators).
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of the segment containing token `t`.
    pub fn segment_of(&self, t: usize) -> Option<usize> {
        self.segments
            .iter()
            .position(|s| t >= s.start && t < s.start + s.length)
    }

    /// Segment index for every token.
    pub fn segment_index(&self) -> Vec<usize> {
        let mut idx = vec![0; self.tokens.len()];
        for (k, s) in self.segments.iter().enumerate() {
            for slot in idx.iter_mut().skip(s.start).take(s.length) {
                *slot = k;
            }
        }
        idx
    }

    /// True when tokens `t` and `t + 1` belong to the same segment.
    pub fn within_segment(&self, t: usize) -> bool {
        match (self.segment_of(t), self.segment_of(t + 1)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }

    /// Structural checks: segments tile the walk and words align with tokens.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Schema("walk has no tokens".into()));
        }
        if self.words.len() != self.tokens.len() {
            return Err(Error::Schema(format!(
                "walk {} has {} tokens but {} words",
                self.walk_id,
                self.tokens.len(),
                self.words.len()
            )));
        }
        if let Some(rho) = self.rho {
            check_rho(rho).map_err(|e| Error::Schema(e.to_string()))?;
        }
        let mut next = 0;
        for (k, s) in self.segments.iter().enumerate() {
            if s.start != next || s.length == 0 {
                return Err(Error::Schema(format!(
                    "walk {} segment {k} does not continue at token {next}",
                    self.walk_id
                )));
            }
            let last = k + 1 == self.segments.len();
            if s.length > self.segment_len || (!last && s.length != self.segment_len) {
                return Err(Error::Schema(format!(
                    "walk {} segment {k} has length {} (segment_len {})",
                    self.walk_id, s.length, self.segment_len
                )));
            }
            next += s.length;
        }
        if next != self.tokens.len() {
            return Err(Error::Schema(format!(
                "walk {} segments cover {next} of {} tokens",
                self.walk_id,
                self.tokens.len()
            )));
        }
        Ok(())
    }

    /// Check that every within-segment transition is an edge of its source.
    pub fn check_edges(&self, graphs: &[&GraphHypothesis]) -> Result<()> {
        for s in &self.segments {
            let g = graphs
                .iter()
                .find(|g| g.name() == s.source)
                .ok_or_else(|| Error::InvalidArgument(format!("no graph named `{}`", s.source)))?;
            for t in s.start..s.start + s.length - 1 {
                if !g.has_edge(self.tokens[t], self.tokens[t + 1]) {
                    return Err(Error::InvalidArgument(format!(
                        "walk {} step {t} ({} -> {}) is not an edge of `{}`",
                        self.walk_id,
                        self.tokens[t],
                        self.tokens[t + 1],
                        s.source
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho must lie in [0, 1], got {rho}")));
    }
    Ok(())
}

fn step_nodes<R: Rng>(
    g: &GraphHypothesis,
    start: usize,
    length: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if g.degree(start)? == 0 && length > 1 {
        return Err(Error::InvalidArgument(format!(
            "node {start} of `{}` is isolated",
            g.name()
        )));
    }
    let mut nodes = Vec::with_capacity(length);
    let mut cur = start;
    nodes.push(cur);
    for _ in 1..length {
        let nbrs = g.neighbors(cur)?;
        cur = nbrs[rng.random_range(0..nbrs.len())];
        nodes.push(cur);
    }
    Ok(nodes)
}

fn single_source(
    g: &GraphHypothesis,
    tokens: Vec<usize>,
    walk_id: u64,
    seed: u64,
) -> WalkRecord {
    let words = tokens.iter().map(|&v| g.words()[v].clone()).collect();
    let len = tokens.len();
    WalkRecord {
        walk_id,
        tokens,
        words,
        segments: vec![Segment {
            start: 0,
            length: len,
            source: g.name().to_owned(),
        }],
        rho: None,
        seed,
        segment_len: len,
        rng: RNG_ALGORITHM.to_owned(),
    }
}

/// Uniform-over-neighbours random walk of `length` tokens.
///
/// Starts at `start`, or at a uniformly drawn node when `None`.
pub fn random_walk(
    g: &GraphHypothesis,
    length: usize,
    start: Option<usize>,
    seed: u64,
) -> Result<WalkRecord> {
    if length == 0 {
        return Err(Error::InvalidArgument("walk length must be positive".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let start = match start {
        Some(v) => {
            g.degree(v)?;
            v
        }
        None => rng.random_range(0..g.len()),
    };
    let tokens = step_nodes(g, start, length, &mut rng)?;
    Ok(single_source(g, tokens, seed, seed))
}

/// Walk of `length` tokens that ends at `final_node`.
///
/// Generated forward from `final_node` and reversed; undirected edges keep it valid.
pub fn reversed_walk_to(
    g: &GraphHypothesis,
    final_node: usize,
    length: usize,
    seed: u64,
) -> Result<WalkRecord> {
    let mut walk = random_walk(g, length, Some(final_node), seed)?;
    walk.tokens.reverse();
    walk.words.reverse();
    Ok(walk)
}

/// Interleave walks from `g_a` and `g_b` in segments of `segment_len` tokens.
///
/// Each segment independently comes from `g_b` with probability `rho`, else
/// from `g_a`, and restarts at a uniform node of its source. Transitions that
/// cross a segment boundary are not edges in general.
pub fn interleave(
    g_a: &GraphHypothesis,
    g_b: &GraphHypothesis,
    rho: f64,
    total_len: usize,
    segment_len: usize,
    seed: u64,
) -> Result<WalkRecord> {
    check_rho(rho)?;
    if segment_len == 0 || total_len < segment_len {
        return Err(Error::InvalidArgument(format!(
            "total length {total_len} must be at least the segment length {segment_len} (> 0)"
        )));
    }
    let mut rng = stream_rng(seed, 1);
    let mut tokens = Vec::with_capacity(total_len);
    let mut words = Vec::with_capacity(total_len);
    let mut segments = Vec::new();
    while tokens.len() < total_len {
        let length = segment_len.min(total_len - tokens.len());
        let g = if rng.random::<f64>() < rho { g_b } else { g_a };
        let start = rng.random_range(0..g.len());
        let nodes = step_nodes(g, start, length, &mut rng)?;
        segments.push(Segment {
            start: tokens.len(),
            length,
            source: g.name().to_owned(),
        });
        words.extend(nodes.iter().map(|&v| g.words()[v].clone()));
        tokens.extend(nodes);
    }
    Ok(WalkRecord {
        walk_id: seed,
        tokens,
        words,
        segments,
        rho: Some(rho),
        seed,
        segment_len,
        rng: RNG_ALGORITHM.to_owned(),
    })
}

/// Clean and corrupt contexts from different graphs ending at one shared word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPair {
    /// Pair identifier.
    pub pair_id: String,
    /// Context drawn from the clean graph.
    pub clean: WalkRecord,
    /// Context drawn from the corrupt graph.
    pub corrupt: WalkRecord,
    /// Final node id in the clean graph.
    pub final_node: usize,
    /// Final word, shared by both contexts.
    pub final_word: String,
    /// Tokens per context.
    pub context_len: usize,
}

/// Sample a matched pair of length-`context_len` contexts.
///
/// Nodes are matched across hypotheses by word. The final word is uniform over
/// the shared vocabulary.
pub fn make_prompt_pair(
    g_clean: &GraphHypothesis,
    g_corrupt: &GraphHypothesis,
    context_len: usize,
    seed: u64,
    pair_id: impl Into<String>,
) -> Result<PromptPair> {
    let shared: Vec<(usize, usize)> = g_clean
        .words()
        .iter()
        .enumerate()
        .filter_map(|(v, w)| g_corrupt.node_of(w).map(|u| (v, u)))
        .collect();
    if shared.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "`{}` and `{}` share no nodes",
            g_clean.name(),
            g_corrupt.name()
        )));
    }
    let mut rng = stream_rng(seed, 2);
    let (v_clean, v_corrupt) = shared[rng.random_range(0..shared.len())];
    let clean = reversed_walk_to(g_clean, v_clean, context_len, crate::rng::derive_seed(seed, 0))?;
    let corrupt =
        reversed_walk_to(g_corrupt, v_corrupt, context_len, crate::rng::derive_seed(seed, 1))?;
    Ok(PromptPair {
        pair_id: pair_id.into(),
        final_word: g_clean.words()[v_clean].clone(),
        clean,
        corrupt,
        final_node: v_clean,
        context_len,
    })
}

/// Effective context for a hypothesis receiving share `rho_k` of `n` tokens.
pub fn effective_context(rho_k: f64, n: f64) -> f64 {
    rho_k * n
}
