// SPDX-License-Identifier: MIT OR Apache-2.0

//! Observed accuracy curves and the per-walk scores they are built from.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphHypothesis;
use crate::rng::stream_rng;
use crate::walk::WalkRecord;

/// Context positions at or below this length feed the pre-transition estimate.
pub const P0_MAX_CONTEXT: usize = 100;

/// One point of an accuracy curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    /// Context length.
    pub n: usize,
    /// Mean neighbour-hit accuracy.
    pub accuracy: f64,
    /// Number of walks contributing.
    pub n_walks: usize,
}

/// Observed neighbour-hit accuracy of one hypothesis at one mixture ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    /// Hypothesis scored against.
    pub hypothesis: String,
    /// Mixture ratio of the contexts.
    pub rho: f64,
    /// Samples with strictly increasing `n`.
    pub samples: Vec<CurveSample>,
}

impl AccuracyCurve {
    /// Check ordering and range invariants.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Schema(format!("rho {} outside [0, 1]", self.rho)));
        }
        for pair in self.samples.windows(2) {
            if pair[1].n <= pair[0].n {
                return Err(Error::Schema(format!(
                    "curve `{}` at rho {}: context lengths not strictly increasing",
                    self.hypothesis, self.rho
                )));
            }
        }
        if let Some(s) = self.samples.iter().find(|s| !(0.0..=1.0).contains(&s.accuracy)) {
            return Err(Error::Schema(format!(
                "curve `{}`: accuracy {} outside [0, 1]",
                self.hypothesis, s.accuracy
            )));
        }
        Ok(())
    }
}

/// Outcome of scoring one predicted word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborHit {
    /// Prediction is a neighbour of the current node.
    pub hit: bool,
    /// Prediction is not in the vocabulary at all (counted as a miss).
    pub unknown_word: bool,
}

/// Is `predicted_word` a neighbour of `current_node` in `g`?
pub fn neighbor_hit(predicted_word: &str, current_node: usize, g: &GraphHypothesis) -> Result<NeighborHit> {
    let nbrs = g.neighbors(current_node)?;
    Ok(match g.node_of(predicted_word) {
        Some(v) => NeighborHit {
            hit: nbrs.binary_search(&v).is_ok(),
            unknown_word: false,
        },
        None => NeighborHit {
            hit: false,
            unknown_word: true,
        },
    })
}

/// A scored prediction at one context length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPosition {
    /// Context length at prediction time (tokens seen).
    pub context_len: usize,
    /// Hit indicator, or hit probability for distribution-valued predictions.
    pub hit: f64,
}

/// All scored positions of one walk under one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkScores {
    /// Walk identifier.
    pub walk_id: u64,
    /// Mixture ratio of the walk.
    pub rho: f64,
    /// Hypothesis scored against.
    pub hypothesis: String,
    /// Scored positions in increasing context length.
    pub positions: Vec<ScoredPosition>,
}

/// A next-word prediction at one position of a walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// Walk identifier.
    pub walk_id: u64,
    /// Zero-based index of the current token.
    pub position: usize,
    /// Predicted next word.
    pub word: String,
}

/// Which positions of a walk are scored under `g`.
///
/// A position is scored when its word belongs to `g`'s vocabulary and, unless
/// `include_boundaries` is set, the next token lies in the same segment.
pub fn scored_positions(walk: &WalkRecord, g: &GraphHypothesis, include_boundaries: bool) -> Vec<(usize, usize)> {
    let seg = walk.segment_index();
    (0..walk.len())
        .filter(|&t| include_boundaries || t + 1 >= walk.len() || seg[t] == seg[t + 1])
        .filter_map(|t| g.node_of(&walk.words[t]).map(|v| (t, v)))
        .collect()
}

/// Score external predictions for one walk against each hypothesis.
///
/// Returns one [`WalkScores`] per hypothesis and the number of predicted
/// words that were not in that hypothesis' vocabulary.
pub fn score_predictions(
    walk: &WalkRecord,
    predictions: &[PredictionRecord],
    graphs: &[&GraphHypothesis],
    include_boundaries: bool,
) -> Result<Vec<(WalkScores, usize)>> {
    let by_pos: BTreeMap<usize, &str> = predictions
        .iter()
        .filter(|p| p.walk_id == walk.walk_id)
        .map(|p| (p.position, p.word.as_str()))
        .collect();
    let rho = walk.rho.unwrap_or(0.0);
    let mut out = Vec::with_capacity(graphs.len());
    for g in graphs {
        let mut positions = Vec::new();
        let mut unknown = 0;
        for (t, v) in scored_positions(walk, g, include_boundaries) {
            let Some(word) = by_pos.get(&t) else { continue };
            let outcome = neighbor_hit(word, v, g)?;
            unknown += usize::from(outcome.unknown_word);
            positions.push(ScoredPosition {
                context_len: t + 1,
                hit: f64::from(u8::from(outcome.hit)),
            });
        }
        out.push((
            WalkScores {
                walk_id: walk.walk_id,
                rho,
                hypothesis: g.name().to_owned(),
                positions,
            },
            unknown,
        ));
    }
    Ok(out)
}

/// Pre-transition accuracy of one hypothesis, pooled across mixture ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P0Estimate {
    /// Hypothesis name.
    pub hypothesis: String,
    /// Pooled mean hit rate.
    pub p0: f64,
    /// Number of pooled positions.
    pub n_positions: usize,
    /// Mean hit rate per mixture ratio, as `(rho, mean, positions)`.
    pub per_rho: Vec<(f64, f64, usize)>,
    /// Variance of the per-rho means around the pooled value.
    pub per_rho_variance: f64,
}

/// Mean hit indicator over positions with context length at most `max_context`.
pub fn estimate_p0(positions: &[ScoredPosition], max_context: usize) -> Result<f64> {
    let (sum, count) = positions
        .iter()
        .filter(|p| p.context_len <= max_context)
        .fold((0.0, 0usize), |(s, c), p| (s + p.hit, c + 1));
    if count == 0 {
        return Err(Error::NoData(format!(
            "no scored positions with context length <= {max_context}"
        )));
    }
    Ok(sum / count as f64)
}

/// Pool [`estimate_p0`] across every walk and mixture ratio for `hypothesis`.
pub fn pooled_p0(scores: &[WalkScores], hypothesis: &str, max_context: usize) -> Result<P0Estimate> {
    let mut by_rho: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    let mut all = Vec::new();
    for s in scores.iter().filter(|s| s.hypothesis == hypothesis) {
        let entry = by_rho.entry(s.rho.to_bits()).or_insert((s.rho, 0.0, 0));
        for p in s.positions.iter().filter(|p| p.context_len <= max_context) {
            entry.1 += p.hit;
            entry.2 += 1;
            all.push(*p);
        }
    }
    let p0 = estimate_p0(&all, max_context)
        .map_err(|_| Error::NoData(format!("no early positions scored for `{hypothesis}`")))?;
    let per_rho: Vec<(f64, f64, usize)> = by_rho
        .into_values()
        .filter(|e| e.2 > 0)
        .map(|(rho, sum, n)| (rho, sum / n as f64, n))
        .collect();
    let per_rho_variance =
        per_rho.iter().map(|e| (e.1 - p0).powi(2)).sum::<f64>() / per_rho.len() as f64;
    Ok(P0Estimate {
        hypothesis: hypothesis.to_owned(),
        p0,
        n_positions: all.len(),
        per_rho,
        per_rho_variance,
    })
}

/// Aggregate walk scores into curves.
///
/// The accuracy at `n` averages scored positions whose context length lies in
/// the trailing window `(n - window, n]`. Curves come out ordered by
/// hypothesis (first appearance) then `rho`; points with no scored positions
/// are omitted.
pub fn curves_from_scores(scores: &[WalkScores], n_grid: &[usize], window: usize) -> Vec<AccuracyCurve> {
    let window = window.max(1);
    let mut names: Vec<&str> = Vec::new();
    for s in scores {
        if !names.contains(&s.hypothesis.as_str()) {
            names.push(&s.hypothesis);
        }
    }
    let mut grid: Vec<usize> = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let mut out = Vec::new();
    for name in names {
        let mut rhos: Vec<f64> = scores.iter().filter(|s| s.hypothesis == name).map(|s| s.rho).collect();
        rhos.sort_by(f64::total_cmp);
        rhos.dedup();
        for rho in rhos {
            let cell: Vec<(&WalkScores, bool)> = scores
                .iter()
                .filter(|s| s.hypothesis == name && s.rho == rho)
                .map(|s| (s, s.positions.windows(2).all(|w| w[0].context_len <= w[1].context_len)))
                .collect();
            let mut samples = Vec::new();
            for &n in &grid {
                let lo = n.saturating_sub(window);
                let mut sum = 0.0;
                let mut count = 0usize;
                let mut walks = BTreeSet::new();
                for &(s, sorted) in &cell {
                    let range = if sorted {
                        let a = s.positions.partition_point(|p| p.context_len <= lo);
                        let b = s.positions.partition_point(|p| p.context_len <= n);
                        &s.positions[a..b]
                    } else {
                        &s.positions[..]
                    };
                    for p in range.iter().filter(|p| p.context_len > lo && p.context_len <= n) {
                        sum += p.hit;
                        count += 1;
                        walks.insert(s.walk_id);
                    }
                }
                if count > 0 {
                    samples.push(CurveSample {
                        n,
                        accuracy: sum / count as f64,
                        n_walks: walks.len(),
                    });
                }
            }
            out.push(AccuracyCurve {
                hypothesis: name.to_owned(),
                rho,
                samples,
            });
        }
    }
    out
}

/// Walk ids partitioned into train, validation and test sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkSplit {
    /// Training walks.
    pub train: BTreeSet<u64>,
    /// Validation walks.
    pub val: BTreeSet<u64>,
    /// Test walks.
    pub test: BTreeSet<u64>,
}

/// Seeded 70/15/15 split by walk id.
pub fn split_walk_ids(ids: &[u64], seed: u64) -> WalkSplit {
    let mut unique: Vec<u64> = ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    unique.shuffle(&mut stream_rng(seed, 3));
    let n = unique.len();
    let n_train = (n as f64 * 0.70).round() as usize;
    let n_val = (n as f64 * 0.15).round() as usize;
    let n_val = n_val.min(n - n_train);
    WalkSplit {
        train: unique[..n_train].iter().copied().collect(),
        val: unique[n_train..n_train + n_val].iter().copied().collect(),
        test: unique[n_train + n_val..].iter().copied().collect(),
    }
}
