// SPDX-License-Identifier: MIT OR Apache-2.0

//! Representation geometry of class-mean activations.
//!
//! Class means are taken per graph node over a trailing window of positions,
//! then summarized by PCA, Dirichlet energy against a hypothesis graph, and
//! principal angles between subspaces.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphHypothesis;
use crate::rng::stream_rng;

/// Residual-stream layer analysed when none is given.
pub const DEFAULT_LAYER: usize = 26;

/// One captured activation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    /// Walk the activation was captured on.
    pub walk_id: u64,
    /// Zero-based token position.
    pub position: usize,
    /// Node id of the token at `position`.
    pub node: usize,
    /// Word at `position`; when present it takes precedence over `node`
    /// for matching against a hypothesis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word: Option<String>,
    /// Layer index.
    pub layer: usize,
    /// Context length at capture.
    pub context_len: usize,
    /// Activation vector.
    pub vector: Vec<f64>,
}

impl ActivationRecord {
    /// Check the vector is nonempty and finite and the position lies in the context.
    pub fn validate(&self) -> Result<()> {
        if self.vector.is_empty() {
            return Err(Error::Schema("empty activation vector".into()));
        }
        if self.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("non-finite activation value".into()));
        }
        if self.position >= self.context_len {
            return Err(Error::Schema(format!(
                "position {} outside context of length {}",
                self.position, self.context_len
            )));
        }
        Ok(())
    }
}

/// Per-node mean activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMeanMatrix {
    /// Node ids, ascending; row `i` of `h` belongs to `nodes[i]`.
    pub nodes: Vec<usize>,
    /// Mean vectors, `|nodes| x d`.
    pub h: DMatrix<f64>,
    /// Records averaged per row.
    pub counts: Vec<usize>,
    /// Nodes of the hypothesis with no qualifying record.
    pub absent: Vec<usize>,
    /// Context length the records were captured at.
    pub context_len: usize,
    /// Trailing window length used.
    pub window: usize,
    /// Layer of the records.
    pub layer: usize,
}

/// Average the records captured at context length `context_len` over the
/// trailing window `position >= context_len - window` (the whole context when
/// `window` is `None`).
///
/// Records resolve to nodes of `g` through their word, or through `node` when
/// no word is given; words outside `g` are skipped.
pub fn class_means(
    records: &[ActivationRecord],
    g: &GraphHypothesis,
    context_len: usize,
    window: Option<usize>,
) -> Result<ClassMeanMatrix> {
    let window = window.unwrap_or(context_len).min(context_len);
    let first_pos = context_len - window;
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    let mut dim = None;
    let mut layer = None;
    for r in records
        .iter()
        .filter(|r| r.context_len == context_len && r.position >= first_pos)
    {
        let node = match &r.word {
            Some(w) => match g.node_of(w) {
                Some(v) => v,
                None => continue,
            },
            None if r.node < g.len() => r.node,
            None => {
                return Err(Error::UnknownNode {
                    graph: g.name().to_owned(),
                    node: r.node,
                })
            }
        };
        if *dim.get_or_insert(r.vector.len()) != r.vector.len() {
            return Err(Error::Schema("activation dimension varies within the dataset".into()));
        }
        if *layer.get_or_insert(r.layer) != r.layer {
            return Err(Error::InvalidArgument("records mix several layers".into()));
        }
        let entry = sums.entry(node).or_insert_with(|| (vec![0.0; r.vector.len()], 0));
        entry.0.iter_mut().zip(&r.vector).for_each(|(s, v)| *s += v);
        entry.1 += 1;
    }
    let (Some(d), Some(layer)) = (dim, layer) else {
        return Err(Error::NoData(format!(
            "no activations of `{}` at context length {context_len}",
            g.name()
        )));
    };
    let nodes: Vec<usize> = sums.keys().copied().collect();
    let mut h = DMatrix::zeros(nodes.len(), d);
    let mut counts = Vec::with_capacity(nodes.len());
    for (i, (sum, n)) in sums.values().enumerate() {
        for (j, s) in sum.iter().enumerate() {
            h[(i, j)] = s / *n as f64;
        }
        counts.push(*n);
    }
    Ok(ClassMeanMatrix {
        absent: (0..g.len()).filter(|v| !sums.contains_key(v)).collect(),
        nodes,
        h,
        counts,
        context_len,
        window,
        layer,
    })
}

/// PCA of a set of row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// Projected coordinates, `n x dims`.
    pub coordinates: DMatrix<f64>,
    /// Unit principal axes as columns, `d x dims`.
    pub components: DMatrix<f64>,
    /// Covariance eigenvalues (`1/(n-1)` normalization), descending.
    pub eigenvalues: Vec<f64>,
    /// Share of total variance per retained component.
    pub explained_ratio: Vec<f64>,
}

/// Project the rows of `h` onto their top `dims` principal components.
///
/// Rows are centered by their unweighted mean. The eigenproblem is solved on
/// the `n x n` Gram matrix, so cost does not grow with `d` beyond one product.
/// Each component is signed so its largest-magnitude coordinate is positive.
pub fn pca_project(h: &DMatrix<f64>, dims: usize) -> Result<Pca> {
    let n = h.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two rows".into()));
    }
    if dims == 0 {
        return Err(Error::InvalidArgument("PCA needs at least one dimension".into()));
    }
    let mean = h.row_mean();
    let mut x = h.clone();
    for mut row in x.row_iter_mut() {
        row -= &mean;
    }
    let gram = &x * x.transpose();
    let total = gram.trace();
    if !(total > 0.0) {
        return Err(Error::Numeric("PCA input has rank 0 (all rows identical)".into()));
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let tol = total * 1e-12;
    let mut coordinates = DMatrix::zeros(n, dims);
    let mut components = DMatrix::zeros(h.ncols(), dims);
    let mut eigenvalues = Vec::with_capacity(dims);
    let mut explained_ratio = Vec::with_capacity(dims);
    for (c, &i) in order.iter().take(dims).enumerate() {
        let lambda = eig.eigenvalues[i].max(0.0);
        eigenvalues.push(lambda / (n - 1) as f64);
        explained_ratio.push(lambda / total);
        if lambda <= tol {
            continue;
        }
        let u = eig.eigenvectors.column(i);
        let sign = {
            let (mut best, mut mag) = (0.0f64, -1.0f64);
            for &v in u.iter() {
                if v.abs() > mag + 1e-12 {
                    best = v;
                    mag = v.abs();
                }
            }
            if best < 0.0 { -1.0 } else { 1.0 }
        };
        let s = lambda.sqrt();
        coordinates.set_column(c, &(u * (sign * s)));
        components.set_column(c, &(x.transpose() * u * (sign / s)));
    }
    for _ in eigenvalues.len()..dims {
        eigenvalues.push(0.0);
        explained_ratio.push(0.0);
    }
    Ok(Pca {
        coordinates,
        components,
        eigenvalues,
        explained_ratio,
    })
}

/// Top-`k` principal axes of `h` as columns of a `d x k` matrix.
pub fn pca_subspace(h: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    Ok(pca_project(h, k)?.components)
}

/// Dirichlet energy `Tr(H^T L H)` with `L` the Laplacian of the subgraph of
/// `g` induced by `nodes` (row order of `h`).
pub fn dirichlet_energy(h: &DMatrix<f64>, nodes: &[usize], g: &GraphHypothesis) -> Result<f64> {
    check_rows(h, nodes)?;
    let (l, _) = g.induced_laplacian(nodes)?;
    Ok(quadratic_trace(h, &l))
}

fn check_rows(h: &DMatrix<f64>, nodes: &[usize]) -> Result<()> {
    if h.nrows() != nodes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rows but {} node labels",
            h.nrows(),
            nodes.len()
        )));
    }
    Ok(())
}

fn quadratic_trace(h: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    (h.transpose() * m * h).trace()
}

/// Degree-normalized Dirichlet energy
/// `Tr(H^T L H) / Tr((H - 1 hbar^T)^T D (H - 1 hbar^T))`, with `hbar` the
/// degree-weighted row mean.
pub fn normalized_energy(h: &DMatrix<f64>, nodes: &[usize], g: &GraphHypothesis) -> Result<f64> {
    check_rows(h, nodes)?;
    let (l, deg) = g.induced_laplacian(nodes)?;
    normalized_with(h, &l, &deg)
}

fn normalized_with(h: &DMatrix<f64>, l: &DMatrix<f64>, deg: &DVector<f64>) -> Result<f64> {
    let vol = deg.sum();
    if vol <= 0.0 {
        return Err(Error::Numeric("induced subgraph has no edges; normalized energy undefined".into()));
    }
    let hbar = (deg.transpose() * h) / vol;
    let mut denom = 0.0;
    for (i, row) in h.row_iter().enumerate() {
        denom += deg[i] * (row - &hbar).norm_squared();
    }
    let num = quadratic_trace(h, l);
    if !(denom > f64::MIN_POSITIVE * num.abs().max(1.0)) {
        return Err(Error::Numeric(
            "degree-weighted centered norm is zero; normalized energy undefined".into(),
        ));
    }
    Ok(num / denom)
}

/// Normalized energy under random relabelings of the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBaseline {
    /// Normalized energy with the true labels.
    pub observed: f64,
    /// Mean over permutations.
    pub mean: f64,
    /// Sample standard deviation over permutations.
    pub std: f64,
    /// Fraction of permutations with energy at most `observed`.
    pub p_value: f64,
    /// Permutations drawn.
    pub permutations: usize,
}

/// Compare the observed normalized energy with `permutations` seeded row
/// shuffles (the node set is kept, the labels are permuted).
pub fn randomized_energy_baseline(
    h: &DMatrix<f64>,
    nodes: &[usize],
    g: &GraphHypothesis,
    permutations: usize,
    seed: u64,
) -> Result<EnergyBaseline> {
    if permutations < 2 {
        return Err(Error::InvalidArgument("need at least two permutations".into()));
    }
    check_rows(h, nodes)?;
    let (l, deg) = g.induced_laplacian(nodes)?;
    let observed = normalized_with(h, &l, &deg)?;
    let mut rng = stream_rng(seed, 6);
    let mut perm: Vec<usize> = (0..nodes.len()).collect();
    let mut values = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        perm.shuffle(&mut rng);
        let shuffled = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(perm[i], j)]);
        values.push(normalized_with(&shuffled, &l, &deg)?);
    }
    let mean = values.iter().sum::<f64>() / permutations as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (permutations - 1) as f64;
    let below = values.iter().filter(|&&v| v <= observed).count();
    Ok(EnergyBaseline {
        observed,
        mean,
        std: var.sqrt(),
        p_value: (below + 1) as f64 / (permutations + 1) as f64,
        permutations,
    })
}

/// Orthonormal basis of the column space of `a`.
fn orthonormal_basis(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() == 0 || a.nrows() == 0 {
        return Err(Error::InvalidArgument("zero-dimensional subspace".into()));
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * a.nrows().max(a.ncols()) as f64;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidArgument("zero-dimensional subspace".into()));
    }
    Ok(u.select_columns(&keep))
}

/// Principal angles (radians, ascending) between the column spans of `a` and `b`.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::InvalidArgument(format!(
            "ambient dimensions differ ({} vs {})",
            a.nrows(),
            b.nrows()
        )));
    }
    let qa = orthonormal_basis(a)?;
    let qb = orthonormal_basis(b)?;
    let cross = qa.transpose() * qb;
    let mut angles: Vec<f64> = cross
        .singular_values()
        .iter()
        .map(|s| s.clamp(0.0, 1.0).acos())
        .collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_ring, default_words, VocabMode};
    use std::f64::consts::FRAC_PI_2;

    fn ring(n: usize) -> GraphHypothesis {
        let (_, b) = default_words(VocabMode::Overlap);
        build_ring(n, b[..n].to_vec()).unwrap()
    }

    fn record(node: usize, position: usize, vector: Vec<f64>) -> ActivationRecord {
        ActivationRecord {
            walk_id: 0,
            position,
            node,
            word: None,
            layer: 26,
            context_len: 10,
            vector,
        }
    }

    #[test]
    fn class_mean_examples() {
        let g = ring(4);
        let recs = vec![
            record(0, 0, vec![1.0, 0.0]),
            record(0, 5, vec![0.0, 1.0]),
            record(1, 6, vec![2.0, 2.0]),
            record(1, 7, vec![2.0, 2.0]),
        ];
        let m = class_means(&recs, &g, 10, None).unwrap();
        assert_eq!(m.nodes, vec![0, 1]);
        assert_eq!(m.absent, vec![2, 3]);
        assert_eq!(m.counts, vec![2, 2]);
        assert_eq!(m.h.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5]);
        assert_eq!(m.h.row(1).iter().copied().collect::<Vec<_>>(), vec![2.0, 2.0]);
        // Window of 5 drops the position-0 record.
        let w = class_means(&recs, &g, 10, Some(5)).unwrap();
        assert_eq!(w.h.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0]);
        assert!(class_means(&[], &g, 10, None).is_err());
    }

    #[test]
    fn class_means_match_words() {
        let g = ring(4);
        let mut r = record(3, 0, vec![1.0]);
        r.word = Some(g.words()[2].clone());
        let mut other = record(0, 1, vec![5.0]);
        other.word = Some("not-a-node".into());
        let m = class_means(&[r, other], &g, 10, None).unwrap();
        assert_eq!(m.nodes, vec![2]);
    }

    #[test]
    fn pca_line_has_one_component() {
        let h = DMatrix::from_fn(5, 3, |i, j| (i as f64) * [1.0, 2.0, -1.0][j]);
        let p = pca_project(&h, 2).unwrap();
        assert!((p.explained_ratio[0] - 1.0).abs() < 1e-12);
        assert!(p.explained_ratio[1].abs() < 1e-12);
        let identical = DMatrix::from_element(4, 3, 2.0);
        assert!(pca_project(&identical, 2).is_err());
    }

    #[test]
    fn pca_matches_covariance_eigenvalues() {
        let h = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 2.0, 0.0, 0.0, 1.0, 2.0, 1.0]);
        let p = pca_project(&h, 2).unwrap();
        // Covariance diag(4/3, 1/3).
        assert!((p.eigenvalues[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((p.eigenvalues[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p.components[(0, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_sign_and_permutation_invariance() {
        let h = DMatrix::from_row_slice(4, 3, &[1.0, 0.2, 0.0, -2.0, 0.1, 1.0, 0.5, -1.0, 0.3, 0.0, 0.0, 2.0]);
        let p = pca_project(&h, 2).unwrap();
        for c in 0..2 {
            let col = p.coordinates.column(c);
            let big = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(big > 0.0);
        }
        let perm = [2usize, 0, 3, 1];
        let hp = DMatrix::from_fn(4, 3, |i, j| h[(perm[i], j)]);
        let pp = pca_project(&hp, 2).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for c in 0..2 {
                assert!((pp.coordinates[(i, c)] - p.coordinates[(src, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn energy_examples() {
        let (_, w) = default_words(VocabMode::Overlap);
        let pair = GraphHypothesis::from_edges("pair", w[..2].to_vec(), &[(0, 1)]).unwrap();
        let h = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.6, 0.8]);
        assert!((dirichlet_energy(&h, &[0, 1], &pair).unwrap() - 1.0).abs() < 1e-15);
        let flat = DMatrix::from_element(4, 3, 1.5);
        assert_eq!(dirichlet_energy(&flat, &[0, 1, 2, 3], &ring(4)).unwrap(), 0.0);
        assert!(normalized_energy(&flat, &[0, 1, 2, 3], &ring(4)).is_err());
    }

    #[test]
    fn missing_nodes_use_induced_subgraph() {
        let g = ring(5);
        let h = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        // Induced edges among {0, 1, 3}: only 0-1.
        assert_eq!(dirichlet_energy(&h, &[0, 1, 3], &g).unwrap(), 1.0);
    }

    #[test]
    fn ring_layout_has_low_energy_against_baseline() {
        let g = ring(12);
        let h = DMatrix::from_fn(12, 2, |i, j| {
            let t = i as f64 * std::f64::consts::TAU / 12.0;
            if j == 0 { t.cos() } else { t.sin() }
        });
        let nodes: Vec<usize> = (0..12).collect();
        let b = randomized_energy_baseline(&h, &nodes, &g, 200, 1).unwrap();
        assert!(b.observed < b.mean - 2.0 * b.std);
        assert!(b.p_value < 0.05);
    }

    #[test]
    fn principal_angle_examples() {
        let e = |i: usize| DMatrix::from_fn(3, 1, |r, _| f64::from(u8::from(r == i)));
        let span = |a: usize, b: usize| {
            let mut m = DMatrix::zeros(3, 2);
            m.set_column(0, &e(a).column(0));
            m.set_column(1, &e(b).column(0));
            m
        };
        let same = principal_angles(&span(0, 1), &span(0, 1)).unwrap();
        assert!(same.iter().all(|a| a.abs() < 1e-7));
        assert!((principal_angles(&e(0), &e(2)).unwrap()[0] - FRAC_PI_2).abs() < 1e-12);
        let mixed = principal_angles(&span(0, 1), &span(0, 2)).unwrap();
        assert!(mixed[0].abs() < 1e-7 && (mixed[1] - FRAC_PI_2).abs() < 1e-12);
        assert!(principal_angles(&DMatrix::zeros(3, 0), &e(0)).is_err());
        assert!(principal_angles(&DMatrix::zeros(3, 1), &e(0)).is_err());
    }
}
