// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear toy residual stream for exercising patching and steering analytics.
//!
//! The hidden state at layer `l` of a context generated by graph `G`, ending at
//! word `x`, is
//!
//! ```text
//! h_l = e_x + w(l) * (g s_G u + a m_G(x) + c m_seen(x) + sigma xi)
//! ```
//!
//! with `s_G = +1` for the clean graph and `-1` for the corrupt one, `u` a unit
//! belief direction, `m_G(x)` the mean readout vector of `x`'s neighbours in
//! `G`, `m_seen(x)` the mean readout of the successors of `x` observed in the
//! context, `xi` per-context noise and `w(l)` a logistic depth profile with
//! `w(last) = 1`. Logits read the last layer:
//! `z_w = <R_w, h> + k <u, h> (1[w in N_clean(x)] - 1[w in N_corrupt(x)])`.
//! Interventions act on the final position and propagate unchanged to the
//! last layer.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::curves::union_vocab;
use crate::error::{Error, Result};
use crate::graph::GraphHypothesis;
use crate::intervention::{random_norm_matched, shuffled_labels, steering_vector, Condition, Control, Direction, LogitRecord, SteeringVector};
use crate::rng::{derive_seed, stream_rng};
use crate::walk::{make_prompt_pair, PromptPair, WalkRecord};

/// Toy model settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualConfig {
    /// Residual width.
    pub dim: usize,
    /// Number of layers.
    pub layers: usize,
    /// Layer at which the depth profile reaches half its final value.
    pub mid_layer: f64,
    /// Width of the depth profile in layers.
    pub depth_width: f64,
    /// Magnitude `g` of the graph-identity component.
    pub belief_gain: f64,
    /// Readout gain `k` of the graph-identity component.
    pub belief_readout: f64,
    /// Weight `a` of the neighbour-structure component.
    pub structure_gain: f64,
    /// Weight `c` of the copied-successor component.
    pub induction_gain: f64,
    /// Per-context noise scale.
    pub noise: f64,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            layers: 32,
            mid_layer: 16.0,
            depth_width: 3.0,
            belief_gain: 1.0,
            belief_readout: 0.15,
            structure_gain: 2.0,
            induction_gain: 1.0,
            noise: 0.3,
        }
    }
}

/// Features of one context that the toy model reads.
#[derive(Debug, Clone)]
pub struct ContextState {
    /// `+1` for the clean graph, `-1` for the corrupt graph.
    pub sign: f64,
    /// Final word.
    pub final_word: String,
    structure: DVector<f64>,
    seen: DVector<f64>,
    noise: DVector<f64>,
}

/// The toy model.
#[derive(Debug, Clone)]
pub struct ResidualModel<'g> {
    config: ResidualConfig,
    g_clean: &'g GraphHypothesis,
    g_corrupt: &'g GraphHypothesis,
    vocab: Vec<String>,
    readout: Vec<DVector<f64>>,
    embed: Vec<DVector<f64>>,
    belief: DVector<f64>,
}

fn gaussian(rng: &mut impl Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

impl<'g> ResidualModel<'g> {
    /// Draw readout, embedding and belief directions from `seed`.
    pub fn new(
        config: ResidualConfig,
        g_clean: &'g GraphHypothesis,
        g_corrupt: &'g GraphHypothesis,
        seed: u64,
    ) -> Result<Self> {
        if config.dim == 0 || config.layers == 0 || !(config.depth_width > 0.0) {
            return Err(Error::InvalidArgument("toy model needs dim, layers and depth width > 0".into()));
        }
        let vocab = union_vocab(&[g_clean, g_corrupt]);
        let mut rng = stream_rng(seed, 10);
        let s = 1.0 / (config.dim as f64).sqrt();
        let readout = (0..vocab.len()).map(|_| gaussian(&mut rng, config.dim, s)).collect();
        let embed = (0..vocab.len()).map(|_| gaussian(&mut rng, config.dim, s)).collect();
        let belief = gaussian(&mut rng, config.dim, 1.0).normalize();
        Ok(Self {
            config,
            g_clean,
            g_corrupt,
            vocab,
            readout,
            embed,
            belief,
        })
    }

    /// Settings.
    pub fn config(&self) -> &ResidualConfig {
        &self.config
    }

    /// Index of the last layer.
    pub fn last_layer(&self) -> usize {
        self.config.layers - 1
    }

    /// Depth profile `w(l)`, increasing, with `w(last) = 1`.
    pub fn depth_weight(&self, layer: usize) -> f64 {
        let f = |l: f64| 1.0 / (1.0 + (-(l - self.config.mid_layer) / self.config.depth_width).exp());
        f(layer as f64) / f(self.last_layer() as f64)
    }

    fn index(&self, word: &str) -> Result<usize> {
        self.vocab
            .iter()
            .position(|w| w == word)
            .ok_or_else(|| Error::InvalidArgument(format!("`{word}` is outside the model vocabulary")))
    }

    fn mean_readout(&self, words: impl Iterator<Item = usize>) -> DVector<f64> {
        let mut m = DVector::zeros(self.config.dim);
        let mut n = 0usize;
        for i in words {
            m += &self.readout[i];
            n += 1;
        }
        if n > 0 {
            m /= n as f64;
        }
        m
    }

    /// Context features of `walk`, generated by the clean graph when `clean`.
    pub fn context(&self, walk: &WalkRecord, clean: bool, noise_seed: u64) -> Result<ContextState> {
        let g = if clean { self.g_clean } else { self.g_corrupt };
        let x = walk
            .words
            .last()
            .ok_or_else(|| Error::InvalidArgument("empty context".into()))?
            .clone();
        let v = g
            .node_of(&x)
            .ok_or_else(|| Error::InvalidArgument(format!("`{x}` is not a node of `{}`", g.name())))?;
        let nbrs: Vec<usize> = g
            .neighbors(v)?
            .iter()
            .map(|&u| self.index(&g.words()[u]))
            .collect::<Result<_>>()?;
        let mut seen: Vec<usize> = Vec::new();
        for pair in walk.words.windows(2) {
            if pair[0] == x {
                let i = self.index(&pair[1])?;
                if !seen.contains(&i) {
                    seen.push(i);
                }
            }
        }
        let mut rng = stream_rng(noise_seed, 11);
        Ok(ContextState {
            sign: if clean { 1.0 } else { -1.0 },
            structure: self.mean_readout(nbrs.into_iter()),
            seen: self.mean_readout(seen.into_iter()),
            noise: gaussian(&mut rng, self.config.dim, 1.0 / (self.config.dim as f64).sqrt()),
            final_word: x,
        })
    }

    /// Final-position hidden state at `layer`.
    pub fn hidden(&self, ctx: &ContextState, layer: usize) -> Result<DVector<f64>> {
        let c = &self.config;
        let signal = &self.belief * (c.belief_gain * ctx.sign)
            + &ctx.structure * c.structure_gain
            + &ctx.seen * c.induction_gain
            + &ctx.noise * c.noise;
        Ok(&self.embed[self.index(&ctx.final_word)?] + signal * self.depth_weight(layer))
    }

    /// Logits read from a last-layer state.
    pub fn logits(&self, h: &DVector<f64>, final_word: &str) -> Result<BTreeMap<String, f64>> {
        let in_graph = |g: &GraphHypothesis, w: &str| -> bool {
            match (g.node_of(final_word), g.node_of(w)) {
                (Some(a), Some(b)) => g.has_edge(a, b),
                _ => false,
            }
        };
        let b = self.belief.dot(h) * self.config.belief_readout;
        Ok(self
            .vocab
            .iter()
            .zip(&self.readout)
            .map(|(w, r)| {
                let tilt = f64::from(u8::from(in_graph(self.g_clean, w))) - f64::from(u8::from(in_graph(self.g_corrupt, w)));
                (w.clone(), r.dot(h) + b * tilt)
            })
            .collect())
    }

    fn record(&self, pair: &PromptPair, condition: Condition, h: &DVector<f64>) -> Result<LogitRecord> {
        Ok(LogitRecord {
            pair_id: pair.pair_id.clone(),
            condition,
            layer: None,
            final_node: pair.final_node,
            final_word: pair.final_word.clone(),
            logits: self.logits(h, &pair.final_word)?,
            alpha: None,
            control: None,
            direction: None,
        })
    }

    fn pair_states(&self, pair: &PromptPair) -> Result<(ContextState, ContextState)> {
        Ok((
            self.context(&pair.clean, true, derive_seed(pair.clean.seed, 0))?,
            self.context(&pair.corrupt, false, derive_seed(pair.corrupt.seed, 1))?,
        ))
    }

    /// Clean, corrupt and one patched record per layer for `pair`.
    pub fn patch_logits(&self, pair: &PromptPair, layers: &[usize]) -> Result<Vec<LogitRecord>> {
        let (clean, corrupt) = self.pair_states(pair)?;
        let last = self.last_layer();
        let h_clean = self.hidden(&clean, last)?;
        let h_corrupt = self.hidden(&corrupt, last)?;
        let mut out = vec![
            self.record(pair, Condition::Clean, &h_clean)?,
            self.record(pair, Condition::Corrupt, &h_corrupt)?,
        ];
        for &l in layers {
            let h = &h_corrupt + self.hidden(&clean, l)? - self.hidden(&corrupt, l)?;
            let mut r = self.record(pair, Condition::Patched, &h)?;
            r.layer = Some(l);
            out.push(r);
        }
        Ok(out)
    }

    /// Final-position activations at `layer` of `n` contexts per graph,
    /// drawn from seeds disjoint from evaluation pairs built with
    /// [`Self::pairs`].
    pub fn training_activations(
        &self,
        n: usize,
        context_len: usize,
        layer: usize,
        seed: u64,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut clean = Vec::with_capacity(n);
        let mut corrupt = Vec::with_capacity(n);
        for i in 0..n {
            let pair = make_prompt_pair(self.g_clean, self.g_corrupt, context_len, derive_seed(seed ^ TRAIN_SALT, i as u64), format!("train-{i}"))?;
            let (c, k) = self.pair_states(&pair)?;
            clean.push(self.hidden(&c, layer)?.as_slice().to_vec());
            corrupt.push(self.hidden(&k, layer)?.as_slice().to_vec());
        }
        Ok((clean, corrupt))
    }

    /// `n` evaluation pairs with ids `pair-<i>`.
    pub fn pairs(&self, n: usize, context_len: usize, seed: u64) -> Result<Vec<PromptPair>> {
        (0..n)
            .map(|i| make_prompt_pair(self.g_clean, self.g_corrupt, context_len, derive_seed(seed, i as u64), format!("pair-{i}")))
            .collect()
    }
}

const TRAIN_SALT: u64 = 0x7472_6169_6e5f_7365;

/// Steering experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerDesign {
    /// Steered layer.
    pub layer: usize,
    /// Steering strengths.
    pub alphas: Vec<f64>,
    /// Vector kinds.
    pub controls: Vec<Control>,
    /// Direction of application.
    pub direction: Direction,
    /// Training contexts per graph.
    pub train_contexts: usize,
    /// Tokens per context.
    pub context_len: usize,
}

/// Steering logits for `pairs`.
///
/// `target_to_source` adds `alpha v` to the corrupt prompt; `source_to_target`
/// adds `-alpha v` to the clean prompt. Control vectors are redrawn per pair
/// from `seed` and the pair index.
pub fn steer_logits(
    model: &ResidualModel,
    pairs: &[PromptPair],
    design: &SteerDesign,
    seed: u64,
) -> Result<(SteeringVector, Vec<LogitRecord>)> {
    let (train_clean, train_corrupt) =
        model.training_activations(design.train_contexts, design.context_len, design.layer, seed)?;
    let real = steering_vector(&train_clean, &train_corrupt, design.layer)?;
    let last = model.last_layer();
    let mut out = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        let (clean, corrupt) = model.pair_states(pair)?;
        let h_clean = model.hidden(&clean, last)?;
        let h_corrupt = model.hidden(&corrupt, last)?;
        out.push(model.record(pair, Condition::Clean, &h_clean)?);
        out.push(model.record(pair, Condition::Corrupt, &h_corrupt)?);
        let (base, sign) = match design.direction {
            Direction::TargetToSource => (&h_corrupt, 1.0),
            Direction::SourceToTarget => (&h_clean, -1.0),
        };
        let pair_seed = derive_seed(seed, i as u64);
        for &control in &design.controls {
            let v = match control {
                Control::Real => real.clone(),
                Control::RandomNormMatched => random_norm_matched(&real, pair_seed),
                Control::ShuffledLabels => shuffled_labels(&train_clean, &train_corrupt, design.layer, pair_seed, None)?,
                Control::None => return Err(Error::InvalidArgument("`none` is not a steering control".into())),
            };
            let v = DVector::from_column_slice(&v.vector);
            for &alpha in &design.alphas {
                let h = base + &v * (sign * alpha);
                let mut r = model.record(pair, Condition::Steered, &h)?;
                r.layer = Some(design.layer);
                r.alpha = Some(alpha);
                r.control = Some(control);
                r.direction = Some(design.direction);
                out.push(r);
            }
        }
    }
    Ok((real, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_grid, build_ring, default_words, VocabMode};
    use crate::intervention::{graph_logit_contrast, patch_effects, EffectInputs, DEFAULT_DENOMINATOR_FLOOR};

    fn graphs() -> (GraphHypothesis, GraphHypothesis) {
        let (a, b) = default_words(VocabMode::Overlap);
        (build_grid(4, 4, a).unwrap(), build_ring(16, b).unwrap())
    }

    #[test]
    fn depth_profile_is_increasing_to_one() {
        let (grid, ring) = graphs();
        let m = ResidualModel::new(ResidualConfig::default(), &grid, &ring, 0).unwrap();
        assert_eq!(m.depth_weight(m.last_layer()), 1.0);
        assert!((1..32).all(|l| m.depth_weight(l) > m.depth_weight(l - 1)));
    }

    #[test]
    fn clean_contrast_exceeds_corrupt() {
        let (grid, ring) = graphs();
        let m = ResidualModel::new(ResidualConfig::default(), &grid, &ring, 0).unwrap();
        for pair in m.pairs(20, 100, 4).unwrap() {
            let recs = m.patch_logits(&pair, &[]).unwrap();
            let dc = graph_logit_contrast(&recs[0].logits, &pair.final_word, &grid, &ring).unwrap();
            let dk = graph_logit_contrast(&recs[1].logits, &pair.final_word, &grid, &ring).unwrap();
            assert!(dc > dk);
        }
    }

    #[test]
    fn patch_effect_equals_depth_weight() {
        let (grid, ring) = graphs();
        let m = ResidualModel::new(ResidualConfig::default(), &grid, &ring, 0).unwrap();
        let pairs = m.pairs(5, 100, 1).unwrap();
        let mut logits = Vec::new();
        for p in &pairs {
            logits.extend(m.patch_logits(p, &[0, 16, 31]).unwrap());
        }
        let by_id = pairs.iter().map(|p| (p.pair_id.clone(), p.clone())).collect();
        let inp = EffectInputs {
            g_clean: &grid,
            g_corrupt: &ring,
            pairs: &by_id,
            floor: DEFAULT_DENOMINATOR_FLOOR,
        };
        for r in patch_effects(&logits, &inp).unwrap() {
            let e = r.normalized_effect.unwrap();
            assert!((e - m.depth_weight(r.layer)).abs() < 1e-9, "layer {}: {e}", r.layer);
        }
    }
}
