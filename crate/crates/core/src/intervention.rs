// SPDX-License-Identifier: MIT OR Apache-2.0

//! Logit contrasts and effect analytics for patching and steering runs.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphHypothesis;
use crate::rng::stream_rng;
use crate::walk::{PromptPair, WalkRecord};

/// Denominators below this magnitude make a record unusable.
pub const DEFAULT_DENOMINATOR_FLOOR: f64 = 1e-6;

/// Which forward pass produced a logit vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Unmodified clean prompt.
    Clean,
    /// Unmodified corrupt prompt.
    Corrupt,
    /// Corrupt prompt with the clean activation patched in.
    Patched,
    /// Prompt with a steering vector added.
    Steered,
}

/// Kind of intervention vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    /// The graph-difference vector itself.
    Real,
    /// Gaussian vector rescaled to the real vector's norm.
    RandomNormMatched,
    /// Graph-difference vector recomputed under permuted labels.
    ShuffledLabels,
    /// No vector (activation patching).
    None,
}

/// Direction of an intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Applied to the corrupt prompt, pushing toward the clean graph.
    TargetToSource,
    /// Applied to the clean prompt, pushing toward the corrupt graph.
    SourceToTarget,
}

/// Next-token logits captured from one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitRecord {
    /// Prompt pair identifier.
    pub pair_id: String,
    /// Forward-pass condition.
    pub condition: Condition,
    /// Intervened layer; absent for unmodified passes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    /// Final token as a node id of the clean hypothesis.
    pub final_node: usize,
    /// Final token as a word.
    pub final_word: String,
    /// Logit per vocabulary word.
    pub logits: BTreeMap<String, f64>,
    /// Steering strength.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Steering vector kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<Control>,
    /// Steering direction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

impl LogitRecord {
    /// Structural checks: finite logits, layer present exactly for intervened passes.
    pub fn validate(&self) -> Result<()> {
        if let Some((w, _)) = self.logits.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Schema(format!("non-finite logit for `{w}`")));
        }
        let intervened = matches!(self.condition, Condition::Patched | Condition::Steered);
        if intervened != self.layer.is_some() {
            return Err(Error::Schema(format!(
                "{:?} record must {}carry a layer",
                self.condition,
                if intervened { "" } else { "not " }
            )));
        }
        if self.condition == Condition::Steered
            && (self.alpha.is_none() || self.control.is_none() || self.direction.is_none())
        {
            return Err(Error::Schema("steered record needs alpha, control and direction".into()));
        }
        Ok(())
    }

    /// Check that every word of every hypothesis has a logit.
    pub fn check_vocab(&self, graphs: &[&GraphHypothesis]) -> Result<()> {
        for g in graphs {
            if let Some(w) = g.words().iter().find(|w| !self.logits.contains_key(*w)) {
                return Err(Error::Schema(format!("pair `{}`: missing logit for `{w}`", self.pair_id)));
            }
        }
        Ok(())
    }
}

/// One analysed intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    /// Prompt pair identifier.
    pub pair_id: String,
    /// Intervened layer.
    pub layer: usize,
    /// Steering strength; 0 for patching.
    pub alpha: f64,
    /// Vector kind.
    pub control: Control,
    /// Intervention direction.
    pub direction: Direction,
    /// Contrast on the clean prompt.
    pub delta_clean: f64,
    /// Contrast on the corrupt prompt.
    pub delta_corrupt: f64,
    /// Contrast after the intervention.
    pub delta_intervened: f64,
    /// Normalized effect; present exactly when `usable`.
    pub normalized_effect: Option<f64>,
    /// The endpoint contrasts differ by at least the floor.
    pub usable: bool,
    /// Raw-logit contrast of the seen neighbours after the intervention.
    #[serde(default)]
    pub seen_contrast: Option<f64>,
    /// Raw-logit contrast of the held-out neighbours after the intervention.
    #[serde(default)]
    pub heldout_contrast: Option<f64>,
}

impl InterventionRecord {
    /// Check that `normalized_effect` is present exactly when the record is usable.
    pub fn validate(&self) -> Result<()> {
        if self.usable != self.normalized_effect.is_some() {
            return Err(Error::Schema(format!(
                "pair `{}` layer {}: normalized_effect must be present iff usable",
                self.pair_id, self.layer
            )));
        }
        if !(self.alpha.is_finite()
            && self.delta_clean.is_finite()
            && self.delta_corrupt.is_finite()
            && self.delta_intervened.is_finite())
        {
            return Err(Error::Schema("non-finite value in intervention record".into()));
        }
        Ok(())
    }

    /// Deduplication key.
    pub fn key(&self) -> DedupKey {
        DedupKey {
            pair_id: self.pair_id.clone(),
            layer: self.layer,
            alpha_bits: (self.alpha + 0.0).to_bits(),
            control: self.control,
            direction: self.direction,
        }
    }
}

fn mean_logit(logits: &BTreeMap<String, f64>, g: &GraphHypothesis, nodes: &[usize]) -> Result<f64> {
    let mut sum = 0.0;
    for &v in nodes {
        let w = g.word(v)?;
        sum += logits
            .get(w)
            .ok_or_else(|| Error::Schema(format!("missing logit for `{w}`")))?;
    }
    Ok(sum / nodes.len() as f64)
}

fn neighbors_of_word<'g>(g: &'g GraphHypothesis, word: &str) -> Result<&'g [usize]> {
    let v = g
        .node_of(word)
        .ok_or_else(|| Error::InvalidArgument(format!("`{word}` is not a node of `{}`", g.name())))?;
    let nbrs = g.neighbors(v)?;
    if nbrs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "`{word}` has no neighbours in `{}`",
            g.name()
        )));
    }
    Ok(nbrs)
}

/// Mean logit over clean-graph neighbours of the final word minus the mean
/// over its corrupt-graph neighbours.
pub fn graph_logit_contrast(
    logits: &BTreeMap<String, f64>,
    final_word: &str,
    g_clean: &GraphHypothesis,
    g_corrupt: &GraphHypothesis,
) -> Result<f64> {
    let a = mean_logit(logits, g_clean, neighbors_of_word(g_clean, final_word)?)?;
    let b = mean_logit(logits, g_corrupt, neighbors_of_word(g_corrupt, final_word)?)?;
    Ok(a - b)
}

/// Mean logit over `subset` (clean-graph node ids) minus the mean over the
/// corrupt-graph neighbours of the final word; `None` for an empty subset.
pub fn subset_contrast(
    logits: &BTreeMap<String, f64>,
    subset: &BTreeSet<usize>,
    final_word: &str,
    g_clean: &GraphHypothesis,
    g_corrupt: &GraphHypothesis,
) -> Result<Option<f64>> {
    if subset.is_empty() {
        return Ok(None);
    }
    let nodes: Vec<usize> = subset.iter().copied().collect();
    let a = mean_logit(logits, g_clean, &nodes)?;
    let b = mean_logit(logits, g_corrupt, neighbors_of_word(g_corrupt, final_word)?)?;
    Ok(Some(a - b))
}

/// Normalized effect and usability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    /// `(delta_int - from) / (to - from)`; `None` when unusable.
    pub value: Option<f64>,
    /// `|to - from| >= floor`.
    pub usable: bool,
}

/// `(delta_int - delta_from) / (delta_to - delta_from)`, unusable when the
/// denominator is below `floor` in magnitude.
///
/// For patching `to` is the clean contrast and `from` the corrupt one.
pub fn normalized_effect(delta_int: f64, delta_to: f64, delta_from: f64, floor: f64) -> Effect {
    let denom = delta_to - delta_from;
    if !(denom.abs() >= floor) {
        return Effect {
            value: None,
            usable: false,
        };
    }
    Effect {
        value: Some((delta_int - delta_from) / denom),
        usable: true,
    }
}

/// A layer-wise graph-difference vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVector {
    /// Layer the vector was computed at.
    pub layer: usize,
    /// Vector kind.
    pub control: Control,
    /// The vector.
    pub vector: Vec<f64>,
    /// Training contexts per graph label (`clean`, `corrupt`).
    pub train_counts: BTreeMap<String, usize>,
    /// Euclidean norm of `vector`.
    pub norm: f64,
}

fn mean_vector(rows: &[&[f64]]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        m.iter_mut().zip(r.iter()).for_each(|(a, b)| *a += b);
    }
    let n = rows.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_train(clean: &[Vec<f64>], corrupt: &[Vec<f64>]) -> Result<usize> {
    if clean.is_empty() || corrupt.is_empty() {
        return Err(Error::NoData("steering vector needs activations from both graphs".into()));
    }
    let d = clean[0].len();
    if d == 0 || clean.iter().chain(corrupt).any(|v| v.len() != d) {
        return Err(Error::InvalidArgument("steering activations differ in dimension".into()));
    }
    Ok(d)
}

fn difference_of_means(
    clean: &[&[f64]],
    corrupt: &[&[f64]],
    layer: usize,
    control: Control,
) -> SteeringVector {
    let a = mean_vector(clean);
    let b = mean_vector(corrupt);
    let vector: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    SteeringVector {
        layer,
        control,
        norm: norm(&vector),
        vector,
        train_counts: BTreeMap::from([
            ("clean".to_owned(), clean.len()),
            ("corrupt".to_owned(), corrupt.len()),
        ]),
    }
}

/// Mean clean activation minus mean corrupt activation.
pub fn steering_vector(clean: &[Vec<f64>], corrupt: &[Vec<f64>], layer: usize) -> Result<SteeringVector> {
    check_train(clean, corrupt)?;
    let a: Vec<&[f64]> = clean.iter().map(Vec::as_slice).collect();
    let b: Vec<&[f64]> = corrupt.iter().map(Vec::as_slice).collect();
    Ok(difference_of_means(&a, &b, layer, Control::Real))
}

/// Gaussian direction rescaled to the norm of `real`.
pub fn random_norm_matched(real: &SteeringVector, seed: u64) -> SteeringVector {
    let mut rng = stream_rng(seed, 7);
    let mut v: Vec<f64> = (0..real.vector.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let scale = real.norm / norm(&v);
    v.iter_mut().for_each(|x| *x *= scale);
    SteeringVector {
        layer: real.layer,
        control: Control::RandomNormMatched,
        norm: norm(&v),
        vector: v,
        train_counts: real.train_counts.clone(),
    }
}

/// Difference of means after a seeded permutation of the graph labels.
///
/// Group sizes are kept. `permutation` overrides the seeded shuffle; index
/// `i` of the pooled list `clean ++ corrupt` takes the label of
/// `permutation[i]`.
pub fn shuffled_labels(
    clean: &[Vec<f64>],
    corrupt: &[Vec<f64>],
    layer: usize,
    seed: u64,
    permutation: Option<&[usize]>,
) -> Result<SteeringVector> {
    check_train(clean, corrupt)?;
    let pooled: Vec<&[f64]> = clean.iter().chain(corrupt).map(Vec::as_slice).collect();
    let perm: Vec<usize> = match permutation {
        Some(p) => {
            let mut sorted = p.to_vec();
            sorted.sort_unstable();
            if sorted != (0..pooled.len()).collect::<Vec<_>>() {
                return Err(Error::InvalidArgument("not a permutation of the pooled set".into()));
            }
            p.to_vec()
        }
        None => {
            let mut p: Vec<usize> = (0..pooled.len()).collect();
            p.shuffle(&mut stream_rng(seed, 8));
            p
        }
    };
    let n = clean.len();
    let a: Vec<&[f64]> = perm[..n].iter().map(|&i| pooled[i]).collect();
    let b: Vec<&[f64]> = perm[n..].iter().map(|&i| pooled[i]).collect();
    Ok(difference_of_means(&a, &b, layer, Control::ShuffledLabels))
}

/// Build a control vector of `kind` for `real`.
pub fn control_vector(
    real: &SteeringVector,
    kind: Control,
    clean: &[Vec<f64>],
    corrupt: &[Vec<f64>],
    seed: u64,
) -> Result<SteeringVector> {
    match kind {
        Control::Real => Ok(real.clone()),
        Control::RandomNormMatched => Ok(random_norm_matched(real, seed)),
        Control::ShuffledLabels => shuffled_labels(clean, corrupt, real.layer, seed, None),
        Control::None => Err(Error::InvalidArgument("`none` is not a steering control".into())),
    }
}

/// `activation + alpha * v`.
pub fn apply_steer(activation: &[f64], v: &SteeringVector, alpha: f64) -> Result<Vec<f64>> {
    if activation.len() != v.vector.len() {
        return Err(Error::InvalidArgument(format!(
            "activation has {} dims, steering vector {}",
            activation.len(),
            v.vector.len()
        )));
    }
    Ok(activation.iter().zip(&v.vector).map(|(h, x)| h + alpha * x).collect())
}

/// Neighbours of the final word in `g_clean`, split by whether their edge
/// appears as consecutive words (either order) in `context`.
pub fn seen_heldout_split(
    final_word: &str,
    g_clean: &GraphHypothesis,
    context: &WalkRecord,
) -> Result<(BTreeSet<usize>, BTreeSet<usize>)> {
    let nbrs: BTreeSet<usize> = neighbors_of_word(g_clean, final_word)?.iter().copied().collect();
    let mut seen = BTreeSet::new();
    for pair in context.words.windows(2) {
        let other = if pair[0] == final_word {
            &pair[1]
        } else if pair[1] == final_word {
            &pair[0]
        } else {
            continue;
        };
        if let Some(v) = g_clean.node_of(other) {
            if nbrs.contains(&v) {
                seen.insert(v);
            }
        }
    }
    let heldout = nbrs.difference(&seen).copied().collect();
    Ok((seen, heldout))
}

/// Identity of an intervention for deduplication.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DedupKey {
    /// Prompt pair.
    pub pair_id: String,
    /// Layer.
    pub layer: usize,
    /// Bit pattern of alpha (negative zero folded into zero).
    pub alpha_bits: u64,
    /// Vector kind.
    pub control: Control,
    /// Direction.
    pub direction: Direction,
}

/// Streaming first-occurrence filter.
#[derive(Debug, Default)]
pub struct Deduper {
    seen: HashSet<DedupKey>,
    dropped: usize,
}

impl Deduper {
    /// Empty filter.
    pub fn new() -> Self {
        Self::default()
    }

    /// `true` the first time a key is offered.
    pub fn admit(&mut self, record: &InterventionRecord) -> bool {
        let fresh = self.seen.insert(record.key());
        self.dropped += usize::from(!fresh);
        fresh
    }

    /// Records rejected so far.
    pub fn dropped(&self) -> usize {
        self.dropped
    }
}

/// Keep the first record per key, preserving order.
pub fn dedup(records: &[InterventionRecord]) -> Vec<InterventionRecord> {
    let mut d = Deduper::new();
    records.iter().filter(|r| d.admit(r)).cloned().collect()
}

/// Field a record set can be grouped by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupField {
    /// Layer.
    Layer,
    /// Steering strength.
    Alpha,
    /// Vector kind.
    Control,
    /// Direction.
    Direction,
}

impl std::str::FromStr for GroupField {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "layer" => Ok(Self::Layer),
            "alpha" => Ok(Self::Alpha),
            "control" => Ok(Self::Control),
            "direction" => Ok(Self::Direction),
            other => Err(Error::InvalidArgument(format!("unknown group field `{other}`"))),
        }
    }
}

/// Value summarized by [`aggregate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Normalized effect (usable records only).
    NormalizedEffect,
    /// Seen-neighbour raw contrast.
    SeenContrast,
    /// Held-out-neighbour raw contrast.
    HeldoutContrast,
}

impl Metric {
    fn value(self, r: &InterventionRecord) -> Option<f64> {
        match self {
            Metric::NormalizedEffect => r.normalized_effect,
            Metric::SeenContrast => r.seen_contrast,
            Metric::HeldoutContrast => r.heldout_contrast,
        }
    }
}

/// Mean and standard error of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    /// Layer, when grouped by layer.
    pub layer: Option<usize>,
    /// Alpha, when grouped by alpha.
    pub alpha: Option<f64>,
    /// Control, when grouped by control.
    pub control: Option<Control>,
    /// Direction, when grouped by direction.
    pub direction: Option<Direction>,
    /// Summarized metric.
    pub metric: Metric,
    /// Records averaged.
    pub n: usize,
    /// Arithmetic mean.
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; 0 when `n = 1`.
    pub sem: f64,
    /// `n = 1`, so `sem` is a placeholder.
    pub single: bool,
    /// Records skipped because they were unusable or lacked the metric.
    pub excluded: usize,
}

type GroupKey = (Option<usize>, Option<i64>, Option<Control>, Option<Direction>);

fn total_order_key(x: f64) -> i64 {
    let bits = (x + 0.0).to_bits() as i64;
    bits ^ (((bits >> 63) as u64) >> 1) as i64
}

/// Mean and SEM of `metric` per group, ordered by group key.
pub fn aggregate(records: &[InterventionRecord], group_by: &[GroupField], metric: Metric) -> Result<Vec<AggregateRow>> {
    let has = |f: GroupField| group_by.contains(&f);
    let mut groups: BTreeMap<GroupKey, (Option<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let key = (
            has(GroupField::Layer).then_some(r.layer),
            has(GroupField::Alpha).then(|| total_order_key(r.alpha)),
            has(GroupField::Control).then_some(r.control),
            has(GroupField::Direction).then_some(r.direction),
        );
        let entry = groups
            .entry(key)
            .or_insert_with(|| (has(GroupField::Alpha).then_some(r.alpha + 0.0), Vec::new(), 0));
        match metric.value(r).filter(|_| r.usable || metric != Metric::NormalizedEffect) {
            Some(v) => entry.1.push(v),
            None => entry.2 += 1,
        }
    }
    if groups.is_empty() {
        return Err(Error::NoData("no records to aggregate".into()));
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((layer, _, control, direction), (alpha, values, excluded)) in groups {
        if values.is_empty() {
            return Err(Error::NoData(format!(
                "group (layer {layer:?}, alpha {alpha:?}, control {control:?}, direction {direction:?}) has no usable records"
            )));
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sem = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        out.push(AggregateRow {
            layer,
            alpha,
            control,
            direction,
            metric,
            n,
            mean,
            sem,
            single: n == 1,
            excluded,
        });
    }
    Ok(out)
}

struct PairLogits<'a> {
    clean: Option<&'a LogitRecord>,
    corrupt: Option<&'a LogitRecord>,
    intervened: Vec<&'a LogitRecord>,
}

fn group_by_pair(logits: &[LogitRecord], kind: Condition) -> Result<BTreeMap<&str, PairLogits<'_>>> {
    let mut pairs: BTreeMap<&str, PairLogits> = BTreeMap::new();
    for r in logits {
        r.validate()?;
        let p = pairs.entry(r.pair_id.as_str()).or_insert_with(|| PairLogits {
            clean: None,
            corrupt: None,
            intervened: Vec::new(),
        });
        let slot = match r.condition {
            Condition::Clean => &mut p.clean,
            Condition::Corrupt => &mut p.corrupt,
            c if c == kind => {
                p.intervened.push(r);
                continue;
            }
            _ => continue,
        };
        if slot.replace(r).is_some() {
            return Err(Error::Schema(format!(
                "pair `{}` has more than one {:?} record",
                r.pair_id, r.condition
            )));
        }
    }
    Ok(pairs)
}

/// Inputs shared by [`patch_effects`] and [`steer_effects`].
pub struct EffectInputs<'a> {
    /// Clean hypothesis.
    pub g_clean: &'a GraphHypothesis,
    /// Corrupt hypothesis.
    pub g_corrupt: &'a GraphHypothesis,
    /// Prompt pairs by id; seen/held-out contrasts are skipped for pairs not listed.
    pub pairs: &'a BTreeMap<String, PromptPair>,
    /// Usability floor.
    pub floor: f64,
}

fn effect_record(
    inp: &EffectInputs,
    clean: &LogitRecord,
    corrupt: &LogitRecord,
    int: &LogitRecord,
    direction: Direction,
) -> Result<InterventionRecord> {
    let word = &int.final_word;
    let contrast = |r: &LogitRecord| graph_logit_contrast(&r.logits, word, inp.g_clean, inp.g_corrupt);
    let (dc, dk, di) = (contrast(clean)?, contrast(corrupt)?, contrast(int)?);
    let effect = match direction {
        Direction::TargetToSource => normalized_effect(di, dc, dk, inp.floor),
        Direction::SourceToTarget => normalized_effect(di, dk, dc, inp.floor),
    };
    let (seen_contrast, heldout_contrast) = match inp.pairs.get(&int.pair_id) {
        Some(pair) => {
            let context = match direction {
                Direction::TargetToSource => &pair.corrupt,
                Direction::SourceToTarget => &pair.clean,
            };
            let (seen, held) = seen_heldout_split(word, inp.g_clean, context)?;
            let sub = |s: &BTreeSet<usize>| subset_contrast(&int.logits, s, word, inp.g_clean, inp.g_corrupt);
            (sub(&seen)?, sub(&held)?)
        }
        None => (None, None),
    };
    Ok(InterventionRecord {
        pair_id: int.pair_id.clone(),
        layer: int.layer.expect("validated intervened record"),
        alpha: int.alpha.unwrap_or(0.0),
        control: int.control.unwrap_or(Control::None),
        direction,
        delta_clean: dc,
        delta_corrupt: dk,
        delta_intervened: di,
        normalized_effect: effect.value,
        usable: effect.usable,
        seen_contrast,
        heldout_contrast,
    })
}

fn effects(logits: &[LogitRecord], inp: &EffectInputs, kind: Condition) -> Result<Vec<InterventionRecord>> {
    let mut out = Vec::new();
    for (id, p) in group_by_pair(logits, kind)? {
        if p.intervened.is_empty() {
            continue;
        }
        let (Some(clean), Some(corrupt)) = (p.clean, p.corrupt) else {
            return Err(Error::NoData(format!("pair `{id}` lacks a clean or corrupt record")));
        };
        for int in p.intervened {
            let direction = int.direction.unwrap_or(Direction::TargetToSource);
            out.push(effect_record(inp, clean, corrupt, int, direction)?);
        }
    }
    Ok(out)
}

/// Effects of clean-into-corrupt activation patches.
pub fn patch_effects(logits: &[LogitRecord], inp: &EffectInputs) -> Result<Vec<InterventionRecord>> {
    effects(logits, inp, Condition::Patched)
}

/// Effects of steering runs.
///
/// `target_to_source` runs are normalized from the corrupt toward the clean
/// contrast, `source_to_target` runs from the clean toward the corrupt one.
pub fn steer_effects(logits: &[LogitRecord], inp: &EffectInputs) -> Result<Vec<InterventionRecord>> {
    effects(logits, inp, Condition::Steered)
}

fn snake_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

/// Render aggregate rows as CSV with a fixed column set; ungrouped columns are empty.
pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("layer,alpha,control,direction,metric,n,mean,sem,single,excluded\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{:.16e},{:.16e},{},{}\n",
            r.layer.map(|x| x.to_string()).unwrap_or_default(),
            r.alpha.map(|x| format!("{x:.16e}")).unwrap_or_default(),
            r.control.as_ref().map(snake_name).unwrap_or_default(),
            r.direction.as_ref().map(snake_name).unwrap_or_default(),
            snake_name(&r.metric),
            r.n,
            r.mean,
            r.sem,
            r.single,
            r.excluded
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_grid, build_ring, default_words, VocabMode};

    fn graphs() -> (GraphHypothesis, GraphHypothesis) {
        let (a, b) = default_words(VocabMode::Overlap);
        (build_grid(4, 4, a).unwrap(), build_ring(16, b).unwrap())
    }

    fn logits_with(f: impl Fn(&str) -> f64, g: &GraphHypothesis) -> BTreeMap<String, f64> {
        g.words().iter().map(|w| (w.clone(), f(w))).collect()
    }

    #[test]
    fn contrast_examples() {
        let (grid, ring) = graphs();
        let uniform = logits_with(|_| 0.3, &grid);
        let x = grid.words()[5].clone();
        assert_eq!(graph_logit_contrast(&uniform, &x, &grid, &ring).unwrap(), 0.0);

        // Default overlap words give disjoint grid and ring neighbourhoods.
        let x = grid.words()[6].clone();
        let v = grid.node_of(&x).unwrap();
        let clean_nbrs: BTreeSet<String> = grid.neighbors(v).unwrap().iter().map(|&u| grid.words()[u].clone()).collect();
        let l = logits_with(|w| f64::from(u8::from(clean_nbrs.contains(w))), &grid);
        assert_eq!(graph_logit_contrast(&l, &x, &grid, &ring).unwrap(), 1.0);
        assert_eq!(graph_logit_contrast(&l, &x, &ring, &grid).unwrap(), -1.0);
        assert_eq!(graph_logit_contrast(&l, &x, &grid, &grid).unwrap(), 0.0);
        let mut missing = l.clone();
        missing.remove(&grid.words()[grid.neighbors(v).unwrap()[0]]);
        assert!(graph_logit_contrast(&missing, &x, &grid, &ring).is_err());
    }

    #[test]
    fn normalized_effect_examples() {
        assert_eq!(normalized_effect(2.5, 2.5, -1.0, 1e-6).value, Some(1.0));
        assert_eq!(normalized_effect(-1.0, 2.5, -1.0, 1e-6).value, Some(0.0));
        let e = normalized_effect(0.3, 1.0, 1.0 - 1e-9, 1e-6);
        assert!(!e.usable && e.value.is_none());
        // Joint affine maps leave the effect unchanged.
        let base = normalized_effect(0.4, 1.3, -0.2, 1e-6).value.unwrap();
        let t = |x: f64| 3.0 * x - 7.0;
        let mapped = normalized_effect(t(0.4), t(1.3), t(-0.2), 1e-6).value.unwrap();
        assert!((base - mapped).abs() < 1e-12);
    }

    #[test]
    fn steering_vector_examples() {
        let v = steering_vector(&[vec![3.0, 1.0]], &[vec![1.0, 1.0]], 20).unwrap();
        assert_eq!(v.vector, vec![2.0, 0.0]);
        assert_eq!(v.norm, 2.0);
        assert!(steering_vector(&[], &[vec![1.0]], 20).is_err());
        assert!(steering_vector(&[vec![1.0]], &[vec![1.0, 2.0]], 20).is_err());

        let r = random_norm_matched(&v, 4);
        assert!((r.norm / v.norm - 1.0).abs() < 1e-12);

        let clean = vec![vec![1.0, 0.0], vec![3.0, 0.0]];
        let corrupt = vec![vec![0.0, 1.0]];
        let real = steering_vector(&clean, &corrupt, 1).unwrap();
        let ident = shuffled_labels(&clean, &corrupt, 1, 0, Some(&[0, 1, 2])).unwrap();
        assert_eq!(ident.vector, real.vector);
        assert!(shuffled_labels(&clean, &corrupt, 1, 0, Some(&[0, 0, 2])).is_err());
    }

    #[test]
    fn shuffled_control_averages_to_zero() {
        let clean: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0 + 0.01 * i as f64, -1.0]).collect();
        let corrupt: Vec<Vec<f64>> = (0..20).map(|i| vec![-1.0, 1.0 + 0.01 * i as f64]).collect();
        let real = steering_vector(&clean, &corrupt, 0).unwrap();
        let mut mean = [0.0; 2];
        for s in 0..100 {
            let v = shuffled_labels(&clean, &corrupt, 0, s, None).unwrap();
            mean[0] += v.vector[0] / 100.0;
            mean[1] += v.vector[1] / 100.0;
        }
        assert!(mean[0].hypot(mean[1]) < 0.25 * real.norm, "{mean:?}");
    }

    #[test]
    fn apply_steer_examples() {
        let v = SteeringVector {
            layer: 0,
            control: Control::Real,
            vector: vec![1.0, 0.0],
            train_counts: BTreeMap::new(),
            norm: 1.0,
        };
        assert_eq!(apply_steer(&[0.5, 0.5], &v, 0.0).unwrap(), vec![0.5, 0.5]);
        assert_eq!(apply_steer(&[0.5, 0.5], &v, 1.0).unwrap(), vec![1.5, 0.5]);
        let there = apply_steer(&[0.5, 0.5], &v, 2.0).unwrap();
        assert_eq!(apply_steer(&there, &v, -2.0).unwrap(), vec![0.5, 0.5]);
        assert!(apply_steer(&[0.5], &v, 1.0).is_err());
    }

    fn context(g: &GraphHypothesis, nodes: &[usize]) -> WalkRecord {
        let mut w = crate::walk::random_walk(g, nodes.len(), Some(nodes[0]), 0).unwrap();
        w.tokens = nodes.to_vec();
        w.words = nodes.iter().map(|&v| g.words()[v].clone()).collect();
        w
    }

    #[test]
    fn split_examples() {
        let (_, ring) = graphs();
        let x = ring.words()[0].clone();
        let (seen, held) = seen_heldout_split(&x, &ring, &context(&ring, &[2, 1, 0])).unwrap();
        assert_eq!(seen, BTreeSet::from([1]));
        assert_eq!(held, BTreeSet::from([15]));
        let (seen, held) = seen_heldout_split(&x, &ring, &context(&ring, &[0])).unwrap();
        assert!(seen.is_empty() && held.len() == 2);
        let (seen, held) = seen_heldout_split(&x, &ring, &context(&ring, &[15, 0, 1, 0])).unwrap();
        assert_eq!(seen.len(), 2);
        assert!(held.is_empty());
    }

    fn rec(pair: &str, layer: usize, alpha: f64, effect: Option<f64>) -> InterventionRecord {
        InterventionRecord {
            pair_id: pair.into(),
            layer,
            alpha,
            control: Control::Real,
            direction: Direction::TargetToSource,
            delta_clean: 1.0,
            delta_corrupt: 0.0,
            delta_intervened: effect.unwrap_or(0.0),
            normalized_effect: effect,
            usable: effect.is_some(),
            seen_contrast: None,
            heldout_contrast: None,
        }
    }

    #[test]
    fn dedup_keeps_first_and_is_idempotent() {
        let mut rs = vec![rec("a", 1, 0.0, Some(0.1)), rec("b", 1, 0.0, Some(0.2))];
        assert_eq!(dedup(&rs), rs);
        rs.push(rec("a", 1, -0.0, Some(0.9)));
        let d = dedup(&rs);
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].normalized_effect, Some(0.1));
        assert_eq!(dedup(&d), d);
        assert_eq!(dedup(&[rec("a", 1, 0.5, None), rec("a", 1, 1.0, None)]).len(), 2);
    }

    #[test]
    fn aggregate_examples() {
        let rows = aggregate(&[rec("a", 3, 0.0, Some(0.7))], &[GroupField::Layer], Metric::NormalizedEffect).unwrap();
        assert_eq!((rows[0].mean, rows[0].sem, rows[0].single), (0.7, 0.0, true));
        let rs = [rec("a", 3, 0.0, Some(0.0)), rec("b", 3, 0.0, Some(1.0)), rec("c", 3, 0.0, None)];
        let rows = aggregate(&rs, &[GroupField::Layer], Metric::NormalizedEffect).unwrap();
        assert_eq!(rows[0].mean, 0.5);
        assert!((rows[0].sem - 0.5).abs() < 1e-15);
        assert_eq!(rows[0].excluded, 1);
        assert!(aggregate(&[rec("a", 3, 0.0, None)], &[], Metric::NormalizedEffect).is_err());
        assert!(aggregate(&[], &[], Metric::NormalizedEffect).is_err());

        let mut shuffled = rs.to_vec();
        shuffled.reverse();
        assert_eq!(
            aggregate(&shuffled, &[GroupField::Layer], Metric::NormalizedEffect).unwrap()[0].mean,
            0.5
        );
        let by_alpha = aggregate(
            &[rec("a", 1, -1.0, Some(0.1)), rec("a", 1, 2.0, Some(0.3)), rec("a", 1, 0.5, Some(0.2))],
            &[GroupField::Alpha],
            Metric::NormalizedEffect,
        )
        .unwrap();
        let alphas: Vec<f64> = by_alpha.iter().map(|r| r.alpha.unwrap()).collect();
        assert_eq!(alphas, vec![-1.0, 0.5, 2.0]);
    }

    #[test]
    fn patch_effects_from_logits() {
        let (grid, ring) = graphs();
        let pair = crate::walk::make_prompt_pair(&grid, &ring, 50, 3, "p0").unwrap();
        let word = pair.final_word.clone();
        let clean_nbrs: BTreeSet<String> = neighbors_of_word(&grid, &word).unwrap().iter().map(|&u| grid.words()[u].clone()).collect();
        let base = |condition, layer, scale: f64| LogitRecord {
            pair_id: "p0".into(),
            condition,
            layer,
            final_node: pair.final_node,
            final_word: word.clone(),
            logits: logits_with(|w| scale * f64::from(u8::from(clean_nbrs.contains(w))), &grid),
            alpha: None,
            control: None,
            direction: None,
        };
        let logits = vec![
            base(Condition::Clean, None, 2.0),
            base(Condition::Corrupt, None, 0.0),
            base(Condition::Patched, Some(4), 2.0),
            base(Condition::Patched, Some(8), 0.0),
        ];
        let pairs = BTreeMap::from([("p0".to_owned(), pair)]);
        let inp = EffectInputs {
            g_clean: &grid,
            g_corrupt: &ring,
            pairs: &pairs,
            floor: DEFAULT_DENOMINATOR_FLOOR,
        };
        let out = patch_effects(&logits, &inp).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].normalized_effect, Some(1.0));
        assert_eq!(out[1].normalized_effect, Some(0.0));
        assert!(out[0].seen_contrast.is_some() || out[0].heldout_contrast.is_some());
        out.iter().for_each(|r| r.validate().unwrap());
    }
}
