// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration for the end-to-end pipeline.
//!
//! A config is one JSON or TOML document; unknown keys are rejected at every
//! level. Omitted sections take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::belief::{BootstrapConfig, FitConfig};
use crate::error::{Error, Result};
use crate::graph::{build_grid, build_ring, default_words, GraphFile, GraphHypothesis, VocabMode};
use crate::intervention::{Control, Direction, DEFAULT_DENOMINATOR_FLOOR};
use crate::io::sha256_str;
use crate::repr::DEFAULT_LAYER;
use crate::surrogate::{AgentConfig, PlantMode, ResidualConfig};

/// One graph hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    /// Rectangular grid.
    Grid {
        /// Hypothesis name.
        name: String,
        /// Rows.
        rows: usize,
        /// Columns.
        cols: usize,
        /// Words by node id; the built-in nouns when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        words: Option<Vec<String>>,
    },
    /// Cycle.
    Ring {
        /// Hypothesis name.
        name: String,
        /// Nodes.
        n: usize,
        /// Words by node id; the built-in nouns when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        words: Option<Vec<String>>,
    },
    /// Graph definition file, resolved against the config's directory.
    File {
        /// Path to a graph JSON file.
        path: PathBuf,
    },
}

/// Fit preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitPreset {
    /// Joint complexity-prior fit: `b` in [-15, 15], 24 restarts.
    Joint,
    /// Single-hypothesis baseline bounds: `b` in [-30, 30], 16 restarts.
    Baseline,
}

/// Walk generation and curve construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkSection {
    /// Walks per mixture ratio.
    pub walks_per_rho: usize,
    /// Tokens per walk.
    pub walk_len: usize,
    /// Tokens per segment.
    pub segment_len: usize,
    /// Trailing averaging window of the curves.
    pub window: usize,
    /// Score positions whose successor lies in another segment.
    pub include_boundaries: bool,
    /// Largest context length pooled into `p0`.
    pub p0_max_context: usize,
}

impl Default for WalkSection {
    fn default() -> Self {
        Self {
            walks_per_rho: 8,
            walk_len: 2000,
            segment_len: crate::walk::DEFAULT_SEGMENT_LEN,
            window: 50,
            include_boundaries: false,
            p0_max_context: crate::belief::P0_MAX_CONTEXT,
        }
    }
}

/// Where predictions, activations and logits come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    /// Built-in surrogate agents and fixtures.
    Surrogate {
        /// Agent that produces the neighbour-hit curves.
        agent: AgentConfig,
    },
    /// Files produced by an external model; paths resolve against the
    /// config's directory. Stages whose file is absent are skipped.
    Ingest {
        /// Next-word predictions for the generated walks.
        predictions: PathBuf,
        /// Activation records.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        activations: Option<PathBuf>,
        /// Prompt pairs referenced by the logit files.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pairs: Option<PathBuf>,
        /// Clean, corrupt and patched logits.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        patch_logits: Option<PathBuf>,
        /// Clean, corrupt and steered logits.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        steer_logits: Option<PathBuf>,
    },
}

/// Representation geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReprSection {
    /// Layer analysed.
    pub layer: usize,
    /// Context lengths analysed; every length present in the records when empty.
    pub t_grid: Vec<usize>,
    /// Trailing window for class means; the whole context when absent.
    pub window: Option<usize>,
    /// Label permutations of the energy baseline.
    pub permutations: usize,
    /// Surrogate activation layout.
    pub mode: PlantMode,
    /// Surrogate activation noise.
    pub sigma: f64,
    /// Surrogate activation width.
    pub dim: usize,
    /// Surrogate records per word.
    pub samples_per_word: usize,
}

impl Default for ReprSection {
    fn default() -> Self {
        Self {
            layer: DEFAULT_LAYER,
            t_grid: Vec::new(),
            window: None,
            permutations: 200,
            mode: PlantMode::OrthogonalSubspaces,
            sigma: 0.05,
            dim: 64,
            samples_per_word: 8,
        }
    }
}

/// Patching and steering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterventionSection {
    /// Prompt pairs.
    pub pairs: usize,
    /// Tokens per prompt.
    pub context_len: usize,
    /// Patched layers.
    pub layers: Vec<usize>,
    /// Steered layer.
    pub steer_layer: usize,
    /// Steering strengths.
    pub alpha_grid: Vec<f64>,
    /// Steering vector kinds.
    pub controls: Vec<Control>,
    /// Steering directions.
    pub directions: Vec<Direction>,
    /// Training contexts per graph for the steering vector.
    pub train_contexts: usize,
    /// Usability floor of the normalized effect.
    pub floor: f64,
    /// Surrogate residual model.
    pub toy: ResidualConfig,
}

impl Default for InterventionSection {
    fn default() -> Self {
        Self {
            pairs: 50,
            context_len: 200,
            layers: vec![0, 8, 16, 20, 24, 26, 28, 31],
            steer_layer: DEFAULT_LAYER,
            alpha_grid: vec![1.0, 2.0, 5.0],
            controls: vec![Control::Real, Control::RandomNormMatched, Control::ShuffledLabels],
            directions: vec![Direction::TargetToSource],
            train_contexts: 100,
            floor: DEFAULT_DENOMINATOR_FLOOR,
            toy: ResidualConfig::default(),
        }
    }
}

/// Seeds of the independent random stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Walk generation.
    pub walks: u64,
    /// Train/validation/test split.
    pub split: u64,
    /// Fit restarts.
    pub fit: u64,
    /// Bootstrap resampling.
    pub bootstrap: u64,
    /// Surrogate activations and the energy baseline.
    pub representation: u64,
    /// Prompt pairs, toy model and control vectors.
    pub interventions: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            walks: 1,
            split: 2,
            fit: 3,
            bootstrap: 4,
            representation: 5,
            interventions: 6,
        }
    }
}

/// Complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Experiment name.
    pub experiment: String,
    /// Exactly two hypotheses; the second is the one drawn with probability `rho`.
    #[serde(default = "default_graphs")]
    pub graphs: Vec<GraphSpec>,
    /// Vocabulary condition.
    #[serde(default = "default_vocab")]
    pub vocab_mode: VocabMode,
    /// Mixture ratios.
    #[serde(default = "default_rho_grid")]
    pub rho_grid: Vec<f64>,
    /// Context lengths of the accuracy curves.
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    /// Walks and curves.
    #[serde(default)]
    pub walks: WalkSection,
    /// Data source.
    #[serde(default = "default_source")]
    pub source: Source,
    /// Fit bounds and restart preset.
    #[serde(default = "default_preset")]
    pub fit_preset: FitPreset,
    /// Overrides the preset's uniform restart count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    /// Bootstrap of lambda; skipped when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapConfig>,
    /// Representation geometry.
    #[serde(default)]
    pub representation: ReprSection,
    /// Patching and steering.
    #[serde(default)]
    pub interventions: InterventionSection,
    /// Seeds.
    #[serde(default)]
    pub seeds: Seeds,
    /// Output directory, resolved against the config's directory.
    pub output_dir: PathBuf,
}

fn default_graphs() -> Vec<GraphSpec> {
    vec![
        GraphSpec::Grid {
            name: "grid".into(),
            rows: 4,
            cols: 4,
            words: None,
        },
        GraphSpec::Ring {
            name: "ring".into(),
            n: 16,
            words: None,
        },
    ]
}

fn default_vocab() -> VocabMode {
    VocabMode::Disjoint
}

fn default_rho_grid() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

fn default_n_grid() -> Vec<usize> {
    crate::surrogate::curves::log_grid(10, 2000, 30)
}

fn default_source() -> Source {
    Source::Surrogate {
        agent: AgentConfig::induction(),
    }
}

fn default_preset() -> FitPreset {
    FitPreset::Joint
}

impl RunConfig {
    /// Defaults with the given name and output directory.
    pub fn new(experiment: impl Into<String>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            experiment: experiment.into(),
            graphs: default_graphs(),
            vocab_mode: default_vocab(),
            rho_grid: default_rho_grid(),
            n_grid: default_n_grid(),
            walks: WalkSection::default(),
            source: default_source(),
            fit_preset: default_preset(),
            restarts: None,
            bootstrap: None,
            representation: ReprSection::default(),
            interventions: InterventionSection::default(),
            seeds: Seeds::default(),
            output_dir: output_dir.into(),
        }
    }

    /// Parse JSON (text starting with `{`) or TOML.
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?
        };
        config.validate()?;
        Ok(config)
    }

    /// Read a config file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        if let Some(base) = path.parent().filter(|b| !b.as_os_str().is_empty()) {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for g in &mut self.graphs {
            if let GraphSpec::File { path } = g {
                fix(path);
            }
        }
        if let Source::Ingest {
            predictions,
            activations,
            pairs,
            patch_logits,
            steer_logits,
        } = &mut self.source
        {
            fix(predictions);
            for p in [activations, pairs, patch_logits, steer_logits].into_iter().flatten() {
                fix(p);
            }
        }
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("config: {m}")));
        if self.graphs.len() != 2 {
            return bad(format!("exactly two graphs are required, got {}", self.graphs.len()));
        }
        if self.rho_grid.is_empty() || self.rho_grid.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("rho_grid must be nonempty with values in [0, 1]".into());
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return bad("n_grid must be nonempty with positive entries".into());
        }
        let w = &self.walks;
        if w.walks_per_rho == 0 || w.segment_len == 0 || w.walk_len < w.segment_len {
            return bad("walks need walks_per_rho > 0 and walk_len >= segment_len > 0".into());
        }
        if self.n_grid.iter().any(|&n| n > w.walk_len) {
            return bad("n_grid exceeds walk_len".into());
        }
        if self.restarts == Some(0) {
            return bad("restarts must be positive".into());
        }
        let iv = &self.interventions;
        if iv.pairs == 0 || iv.context_len == 0 || !(iv.floor > 0.0) {
            return bad("interventions need pairs > 0, context_len > 0 and floor > 0".into());
        }
        if self.experiment.is_empty() {
            return bad("experiment name is empty".into());
        }
        Ok(())
    }

    /// Build both hypotheses and check the vocabulary condition.
    pub fn build_graphs(&self) -> Result<(GraphHypothesis, GraphHypothesis)> {
        let (first_words, second_words) = default_words(self.vocab_mode);
        let mut built = Vec::with_capacity(2);
        for (i, spec) in self.graphs.iter().enumerate() {
            let fallback = if i == 0 { &first_words } else { &second_words };
            let g = match spec {
                GraphSpec::Grid { name, rows, cols, words } => {
                    let words = words.clone().unwrap_or_else(|| fallback.clone());
                    build_grid(*rows, *cols, words.into_iter().take(rows * cols).collect())?.renamed(name)
                }
                GraphSpec::Ring { name, n, words } => {
                    let words = words.clone().unwrap_or_else(|| fallback.clone());
                    build_ring(*n, words.into_iter().take(*n).collect())?.renamed(name)
                }
                GraphSpec::File { path } => GraphFile::load(path)?.to_graph()?,
            };
            built.push(g);
        }
        let b = built.pop().expect("two graphs");
        let a = built.pop().expect("two graphs");
        if a.name() == b.name() {
            return Err(Error::InvalidArgument(format!("both graphs are named `{}`", a.name())));
        }
        self.vocab_mode.check(&[&a, &b])?;
        Ok((a, b))
    }

    /// Fit settings for the configured preset.
    pub fn fit_config(&self) -> FitConfig {
        let mut c = match self.fit_preset {
            FitPreset::Joint => FitConfig::joint(self.seeds.fit),
            FitPreset::Baseline => FitConfig::baseline(self.seeds.fit),
        };
        if let Some(r) = self.restarts {
            c.restarts = r;
        }
        c
    }

    /// The config as a JSON value, every field present.
    pub fn echo(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the canonical echo.
    pub fn digest(&self) -> String {
        sha256_str(&crate::io::to_json_line(&self.echo()).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_and_toml_agree() {
        let a = RunConfig::parse(r#"{"experiment": "x", "output_dir": "out"}"#).unwrap();
        let b = RunConfig::parse("experiment = \"x\"\noutput_dir = \"out\"\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, RunConfig::new("x", "out"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse(r#"{"experiment": "x", "output_dir": "o", "colour": 1}"#).is_err());
        assert!(RunConfig::parse("experiment = \"x\"\noutput_dir = \"o\"\n[walks]\nwalk_length = 5\n").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::new("x", "out");
        c.bootstrap = Some(BootstrapConfig::default());
        let back: RunConfig = serde_json::from_value(c.echo()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn graphs_follow_vocab_mode() {
        let mut c = RunConfig::new("x", "out");
        let (g, r) = c.build_graphs().unwrap();
        assert_eq!((g.mdl_complexity(), r.mdl_complexity()), (96, 64));
        c.vocab_mode = VocabMode::Overlap;
        let (g, r) = c.build_graphs().unwrap();
        assert!(g.words().iter().all(|w| r.node_of(w).is_some()));
    }

    #[test]
    fn bad_grids_fail_validation() {
        let mut c = RunConfig::new("x", "out");
        c.rho_grid = vec![1.5];
        assert!(c.validate().is_err());
        let mut c = RunConfig::new("x", "out");
        c.n_grid = vec![5000];
        assert!(c.validate().is_err());
    }

    #[test]
    fn shipped_configs_parse() {
        let full = RunConfig::parse(include_str!("../../../configs/full.toml")).unwrap();
        assert_eq!(full.vocab_mode, VocabMode::Overlap);
        assert_eq!(full.bootstrap.unwrap().replicates, 60);
        assert!(matches!(
            full.source,
            Source::Surrogate {
                agent: AgentConfig {
                    kind: crate::surrogate::AgentKind::Bayes(_),
                    ..
                }
            }
        ));
        let defaults = RunConfig {
            experiment: full.experiment.clone(),
            output_dir: full.output_dir.clone(),
            vocab_mode: full.vocab_mode,
            source: full.source.clone(),
            bootstrap: full.bootstrap,
            ..RunConfig::new("", "")
        };
        assert_eq!(full, defaults);
        let ingest = RunConfig::parse(include_str!("../../../configs/ingest.toml")).unwrap();
        assert!(matches!(ingest.source, Source::Ingest { activations: Some(_), .. }));
    }
}
