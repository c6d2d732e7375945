// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic activations with planted graph layouts.

use nalgebra::SymmetricEigen;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphHypothesis;
use crate::repr::ActivationRecord;
use crate::rng::stream_rng;

/// How the two layouts are planted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantMode {
    /// First layout in dims 0-1, second in dims 2-3.
    OrthogonalSubspaces,
    /// One layout `mix * first + (1 - mix) * second` in dims 0-1.
    Blended {
        /// Weight of the first layout.
        mix: f64,
    },
}

/// Synthetic activation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Planting mode.
    pub mode: PlantMode,
    /// Isotropic noise standard deviation per dimension.
    pub sigma: f64,
    /// Ambient dimension (at least 4).
    pub dim: usize,
    /// Records per word.
    pub samples_per_word: usize,
    /// Layer label written into the records.
    pub layer: usize,
}

/// Spectral layout: Laplacian eigenvectors 2 and 3, scaled to unit RMS per
/// coordinate. Row `v` is the position of node `v`.
pub fn spectral_layout(g: &GraphHypothesis) -> Result<Vec<[f64; 2]>> {
    let n = g.len();
    if n < 3 {
        return Err(Error::InvalidGraph("spectral layout needs at least 3 nodes".into()));
    }
    let eig = SymmetricEigen::new(g.laplacian());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = (n as f64).sqrt();
    let (c1, c2) = (eig.eigenvectors.column(order[1]), eig.eigenvectors.column(order[2]));
    Ok((0..n).map(|v| [c1[v] * scale, c2[v] * scale]).collect())
}

/// Activation records for every word of `g_a` and `g_b`.
///
/// Words present in both hypotheses get both placements. Records carry the
/// word, the node id in the first hypothesis containing it, and consecutive
/// positions in one context whose length is the total record count.
pub fn synthetic_activations(
    g_a: &GraphHypothesis,
    g_b: &GraphHypothesis,
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<Vec<ActivationRecord>> {
    if spec.dim < 4 {
        return Err(Error::InvalidArgument("synthetic activations need at least 4 dimensions".into()));
    }
    if spec.samples_per_word == 0 {
        return Err(Error::InvalidArgument("samples_per_word must be positive".into()));
    }
    let noise = Normal::new(0.0, spec.sigma)
        .map_err(|_| Error::InvalidArgument(format!("invalid noise sigma {}", spec.sigma)))?;
    let (la, lb) = (spectral_layout(g_a)?, spectral_layout(g_b)?);
    let mut words: Vec<&String> = g_a.words().iter().collect();
    words.extend(g_b.words().iter().filter(|w| g_a.node_of(w).is_none()));

    let mut rng = stream_rng(seed, 9);
    let total = words.len() * spec.samples_per_word;
    let mut out = Vec::with_capacity(total);
    for (i, w) in words.iter().enumerate() {
        let pa = g_a.node_of(w).map(|v| la[v]);
        let pb = g_b.node_of(w).map(|v| lb[v]);
        let mut base = vec![0.0; spec.dim];
        match spec.mode {
            PlantMode::OrthogonalSubspaces => {
                if let Some(p) = pa {
                    base[..2].copy_from_slice(&p);
                }
                if let Some(p) = pb {
                    base[2..4].copy_from_slice(&p);
                }
            }
            PlantMode::Blended { mix } => {
                let p = match (pa, pb) {
                    (Some(a), Some(b)) => [mix * a[0] + (1.0 - mix) * b[0], mix * a[1] + (1.0 - mix) * b[1]],
                    (Some(a), None) => a,
                    (None, Some(b)) => b,
                    (None, None) => unreachable!("every word comes from one of the graphs"),
                };
                base[..2].copy_from_slice(&p);
            }
        }
        let node = g_a.node_of(w).or_else(|| g_b.node_of(w)).expect("word from a graph");
        for s in 0..spec.samples_per_word {
            out.push(ActivationRecord {
                walk_id: seed,
                position: i * spec.samples_per_word + s,
                node,
                word: Some((*w).clone()),
                layer: spec.layer,
                context_len: total,
                vector: base.iter().map(|b| b + noise.sample(&mut rng)).collect(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_grid, build_ring, default_words, VocabMode};
    use crate::repr::{class_means, pca_project, pca_subspace, principal_angles, randomized_energy_baseline};
    use nalgebra::DMatrix;

    fn graphs() -> (GraphHypothesis, GraphHypothesis) {
        let (a, b) = default_words(VocabMode::Disjoint);
        (build_grid(4, 4, a).unwrap(), build_ring(16, b).unwrap())
    }

    fn spec(mode: PlantMode, sigma: f64) -> SyntheticSpec {
        SyntheticSpec {
            mode,
            sigma,
            dim: 16,
            samples_per_word: 4,
            layer: 26,
        }
    }

    #[test]
    fn noiseless_orthogonal_planes_are_at_right_angles() {
        let (grid, ring) = graphs();
        let recs = synthetic_activations(&grid, &ring, &spec(PlantMode::OrthogonalSubspaces, 0.0), 1).unwrap();
        let t = recs[0].context_len;
        let a = class_means(&recs, &grid, t, None).unwrap();
        let b = class_means(&recs, &ring, t, None).unwrap();
        let angles = principal_angles(&pca_subspace(&a.h, 2).unwrap(), &pca_subspace(&b.h, 2).unwrap()).unwrap();
        for x in angles {
            assert!((x - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        }
    }

    #[test]
    fn blended_layout_is_rank_two() {
        let (a, _) = default_words(VocabMode::Overlap);
        let (_, b) = default_words(VocabMode::Overlap);
        let grid = build_grid(4, 4, a).unwrap();
        let ring = build_ring(16, b).unwrap();
        let recs = synthetic_activations(&grid, &ring, &spec(PlantMode::Blended { mix: 0.5 }, 0.0), 1).unwrap();
        let m = class_means(&recs, &grid, recs[0].context_len, None).unwrap();
        let p = pca_project(&m.h, 2).unwrap();
        assert!(p.explained_ratio.iter().sum::<f64>() >= 0.9);
    }

    #[test]
    fn planted_grid_energy_beats_random_labels() {
        let (grid, ring) = graphs();
        let recs = synthetic_activations(&grid, &ring, &spec(PlantMode::OrthogonalSubspaces, 0.05), 3).unwrap();
        let m = class_means(&recs, &grid, recs[0].context_len, None).unwrap();
        let h = DMatrix::from_fn(m.h.nrows(), 2, |i, j| m.h[(i, j)]);
        let b = randomized_energy_baseline(&h, &m.nodes, &grid, 200, 5).unwrap();
        assert!(b.observed < b.mean && b.p_value < 0.05);
    }
}
