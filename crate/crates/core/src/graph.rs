// SPDX-License-Identifier: MIT OR Apache-2.0

//! Graph hypotheses: labelled undirected graphs with a word vocabulary.
//!
//! Node ids are `0..|V|`. Grids number their nodes row-major, rings number
//! them cyclically, and word `i` of the vocabulary labels node `i`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the vocabularies of competing hypotheses relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabMode {
    /// Every hypothesis uses its own words; vocabularies are pairwise disjoint.
    Disjoint,
    /// All hypotheses share one vocabulary.
    Overlap,
}

impl VocabMode {
    /// Check that a set of hypotheses satisfies this vocabulary condition.
    pub fn check(self, graphs: &[&GraphHypothesis]) -> Result<()> {
        match self {
            VocabMode::Overlap => {
                let Some(first) = graphs.first() else {
                    return Ok(());
                };
                let reference: BTreeSet<&str> = first.words().iter().map(String::as_str).collect();
                for g in &graphs[1..] {
                    let words: BTreeSet<&str> = g.words().iter().map(String::as_str).collect();
                    if words != reference {
                        return Err(Error::InvalidArgument(format!(
                            "overlap mode requires a shared vocabulary, but `{}` and `{}` differ",
                            first.name(),
                            g.name()
                        )));
                    }
                }
                Ok(())
            }
            VocabMode::Disjoint => {
                for (i, a) in graphs.iter().enumerate() {
                    for b in &graphs[i + 1..] {
                        if let Some(w) = a.words().iter().find(|w| b.node_of(w).is_some()) {
                            return Err(Error::InvalidArgument(format!(
                                "disjoint mode violated: `{w}` appears in `{}` and `{}`",
                                a.name(),
                                b.name()
                            )));
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

/// A labelled undirected simple graph. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphHypothesis {
    name: String,
    words: Vec<String>,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    word_index: HashMap<String, usize>,
}

impl GraphHypothesis {
    /// Build a hypothesis from an explicit edge list.
    ///
    /// Edges are unordered; self loops, duplicate edges, out-of-range ids and
    /// repeated words are rejected.
    pub fn from_edges(
        name: impl Into<String>,
        words: Vec<String>,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let name = name.into();
        let n = words.len();
        if n == 0 {
            return Err(Error::InvalidGraph(format!("`{name}` has no nodes")));
        }
        let mut word_index = HashMap::with_capacity(n);
        for (i, w) in words.iter().enumerate() {
            if word_index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidGraph(format!(
                    "`{name}` repeats the word `{w}`"
                )));
            }
        }
        let mut canonical = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!(
                    "`{name}` edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("`{name}` has a self loop at {a}")));
            }
            if !canonical.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidGraph(format!(
                    "`{name}` lists edge ({a}, {b}) twice"
                )));
            }
        }
        let edges: Vec<(usize, usize)> = canonical.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            name,
            words,
            edges,
            adjacency,
            word_index,
        })
    }

    /// Hypothesis name.
    pub fn name(&self) -> &str {
        &self.name
    }

    /// The same graph under another name.
    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    /// Always false; hypotheses have at least one node.
    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Vocabulary indexed by node id.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Word labelling `node`.
    pub fn word(&self, node: usize) -> Result<&str> {
        self.words
            .get(node)
            .map(String::as_str)
            .ok_or_else(|| self.unknown(node))
    }

    /// Node id labelled by `word`, if the word belongs to this vocabulary.
    pub fn node_of(&self, word: &str) -> Option<usize> {
        self.word_index.get(word).copied()
    }

    /// Canonical edge list, each pair `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Number of edges.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Sorted neighbours of `node`.
    pub fn neighbors(&self, node: usize) -> Result<&[usize]> {
        self.adjacency
            .get(node)
            .map(Vec::as_slice)
            .ok_or_else(|| self.unknown(node))
    }

    /// Degree of `node`.
    pub fn degree(&self, node: usize) -> Result<usize> {
        self.neighbors(node).map(<[usize]>::len)
    }

    /// True when `{a, b}` is an edge. Unknown ids are never adjacent.
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency
            .get(a)
            .is_some_and(|list| list.binary_search(&b).is_ok())
    }

    /// Dense 0/1 adjacency matrix.
    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// Degree vector (diagonal of D).
    pub fn degrees(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.adjacency.iter().map(|l| l.len() as f64))
    }

    /// Combinatorial Laplacian L = D - A.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency_matrix();
        for (i, list) in self.adjacency.iter().enumerate() {
            l[(i, i)] = list.len() as f64;
        }
        l
    }

    /// Laplacian and degrees of the subgraph induced by `nodes`, in the given order.
    pub fn induced_laplacian(&self, nodes: &[usize]) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let m = nodes.len();
        for &v in nodes {
            if v >= self.len() {
                return Err(self.unknown(v));
            }
        }
        let mut l = DMatrix::zeros(m, m);
        let mut deg = DVector::zeros(m);
        for i in 0..m {
            for j in 0..m {
                if i != j && self.has_edge(nodes[i], nodes[j]) {
                    l[(i, j)] = -1.0;
                    deg[i] += 1.0;
                }
            }
            l[(i, i)] = deg[i];
        }
        Ok((l, deg))
    }

    /// Edge-list description length `|E| * ceil(log2 |V|)` in bits.
    pub fn mdl_complexity(&self) -> u64 {
        self.edge_count() as u64 * u64::from(ceil_log2(self.len()))
    }

    fn unknown(&self, node: usize) -> Error {
        Error::UnknownNode {
            graph: self.name.clone(),
            node,
        }
    }
}

fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// `rows x cols` four-neighbour lattice with row-major node ids.
pub fn build_grid(rows: usize, cols: usize, words: Vec<String>) -> Result<GraphHypothesis> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidGraph("grid dimensions must be positive".into()));
    }
    if rows * cols != words.len() {
        return Err(Error::InvalidGraph(format!(
            "a {rows}x{cols} grid needs {} words, got {}",
            rows * cols,
            words.len()
        )));
    }
    let mut edges = Vec::with_capacity(rows * (cols - 1) + cols * (rows - 1));
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push((v, v + 1));
            }
            if r + 1 < rows {
                edges.push((v, v + cols));
            }
        }
    }
    GraphHypothesis::from_edges("grid", words, &edges)
}

/// `n`-cycle with cyclic node ids. Requires `n >= 3`.
pub fn build_ring(n: usize, words: Vec<String>) -> Result<GraphHypothesis> {
    if n < 3 {
        return Err(Error::InvalidGraph(format!(
            "a ring needs at least 3 nodes, got {n}"
        )));
    }
    if words.len() != n {
        return Err(Error::InvalidGraph(format!(
            "a {n}-ring needs {n} words, got {}",
            words.len()
        )));
    }
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    GraphHypothesis::from_edges("ring", words, &edges)
}

const DEFAULT_NOUNS: [&str; 32] = [
    "apple", "bird", "car", "dog", "egg", "fish", "girl", "hat", "ice", "jar", "kite", "lamp",
    "moon", "nest", "owl", "pen", "queen", "rock", "sun", "tree", "vase", "wolf", "box", "yarn",
    "zoo", "bell", "cup", "drum", "fork", "gate", "horn", "ink",
];

/// Default word lists for a pair of 16-node hypotheses.
///
/// Overlap mode returns the same 16 nouns for both, the second list visiting
/// them at stride 5 so that a ring over it shares no edge with a row-major
/// 4x4 grid over the first. Disjoint mode returns two non-overlapping lists.
/// The lists are configuration, not ground truth.
pub fn default_words(mode: VocabMode) -> (Vec<String>, Vec<String>) {
    let first: Vec<String> = DEFAULT_NOUNS[..16].iter().map(|s| s.to_string()).collect();
    let second = match mode {
        VocabMode::Overlap => (0..16).map(|i| first[(5 * i) % 16].clone()).collect(),
        VocabMode::Disjoint => DEFAULT_NOUNS[16..].iter().map(|s| s.to_string()).collect(),
    };
    (first, second)
}

/// On-disk graph definition: `{name, mode, words, edges}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    /// Hypothesis name.
    pub name: String,
    /// Vocabulary condition the file was written for.
    pub mode: VocabMode,
    /// Words indexed by node id.
    pub words: Vec<String>,
    /// Undirected edges as `[i, j]` pairs.
    pub edges: Vec<[usize; 2]>,
}

impl GraphFile {
    /// Snapshot a hypothesis.
    pub fn from_graph(g: &GraphHypothesis, mode: VocabMode) -> Self {
        Self {
            name: g.name().to_owned(),
            mode,
            words: g.words().to_vec(),
            edges: g.edges().iter().map(|&(a, b)| [a, b]).collect(),
        }
    }

    /// Build the hypothesis described by this file.
    pub fn to_graph(&self) -> Result<GraphHypothesis> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        GraphHypothesis::from_edges(self.name.clone(), self.words.clone(), &edges)
    }

    /// Read a graph definition file, bare or wrapped with a header.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_document(path)
    }
}
