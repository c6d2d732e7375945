// SPDX-License-Identifier: MIT OR Apache-2.0

//! Bigram-copying agent.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Logits are clamped here so records stay finite.
pub const LOGIT_FLOOR: f64 = -1e9;

/// Default additive smoothing.
pub const DEFAULT_EPSILON: f64 = 0.1;

/// Predicts the next word from transition counts seen so far in the context.
#[derive(Debug, Clone)]
pub struct InductionAgent {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<Vec<u32>>,
    totals: Vec<u32>,
    epsilon: f64,
}

impl InductionAgent {
    /// Empty agent over `vocab` with smoothing `epsilon >= 0`.
    pub fn new(vocab: &[String], epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!("smoothing must be >= 0, got {epsilon}")));
        }
        let index: HashMap<String, usize> =
            vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if index.len() != vocab.len() {
            return Err(Error::InvalidArgument("vocabulary contains duplicates".into()));
        }
        let v = vocab.len();
        Ok(Self {
            vocab: vocab.to_vec(),
            index,
            counts: vec![vec![0; v]; v],
            totals: vec![0; v],
            epsilon,
        })
    }

    /// Vocabulary in logit order.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Index of `word` in the vocabulary.
    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    fn idx(&self, word: &str) -> Result<usize> {
        self.word_index(word)
            .ok_or_else(|| Error::InvalidArgument(format!("`{word}` is not in the agent vocabulary")))
    }

    /// Record one transition.
    pub fn observe(&mut self, from: &str, to: &str) -> Result<()> {
        let (a, b) = (self.idx(from)?, self.idx(to)?);
        self.counts[a][b] += 1;
        self.totals[a] += 1;
        Ok(())
    }

    /// Agent after ingesting every consecutive pair of `words`.
    pub fn from_context(vocab: &[String], epsilon: f64, words: &[String]) -> Result<Self> {
        let mut agent = Self::new(vocab, epsilon)?;
        for pair in words.windows(2) {
            agent.observe(&pair[0], &pair[1])?;
        }
        Ok(agent)
    }

    /// Observed count of `from -> to`.
    pub fn count(&self, from: &str, to: &str) -> Result<u32> {
        Ok(self.counts[self.idx(from)?][self.idx(to)?])
    }

    /// `ln(count + eps) - ln(total + eps |V|)` per vocabulary word, floored at
    /// [`LOGIT_FLOOR`]. A row with no mass at all gives uniform logits.
    pub fn logits(&self, current: &str) -> Result<Vec<f64>> {
        let a = self.idx(current)?;
        let v = self.vocab.len() as f64;
        let total = f64::from(self.totals[a]) + self.epsilon * v;
        if total == 0.0 {
            return Ok(vec![-v.ln(); self.vocab.len()]);
        }
        Ok(self.counts[a]
            .iter()
            .map(|&c| ((f64::from(c) + self.epsilon).ln() - total.ln()).max(LOGIT_FLOOR))
            .collect())
    }

    /// Words tied for the highest count after `current` (all words when none was seen).
    pub fn argmax_set(&self, current: &str) -> Result<Vec<usize>> {
        let row = &self.counts[self.idx(current)?];
        let best = row.iter().copied().max().unwrap_or(0);
        Ok((0..row.len()).filter(|&i| row[i] == best).collect())
    }

    /// Probability that an argmax prediction with uniform tie-breaking lands in `targets`.
    pub fn argmax_hit_probability(&self, current: &str, is_target: impl Fn(usize) -> bool) -> Result<f64> {
        let ties = self.argmax_set(current)?;
        Ok(ties.iter().filter(|&&i| is_target(i)).count() as f64 / ties.len() as f64)
    }

    /// Smoothed predictive distribution.
    pub fn probabilities(&self, current: &str) -> Result<Vec<f64>> {
        Ok(self.logits(current)?.into_iter().map(f64::exp).collect())
    }
}
