// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end run: graphs, walks, scores, curves, fits, selection, geometry,
//! intervention effects and aggregates, with a hashed manifest.
//!
//! Stages run in order and each failure is reported with its stage name.
//! The manifest is written even when a stage fails and then lists the
//! outputs produced so far.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::belief::bootstrap::specs_from_scores;
use crate::belief::curve::{curves_from_scores, pooled_p0, score_predictions, split_walk_ids, PredictionRecord};
use crate::belief::fit::evaluate_mse;
use crate::belief::{
    fit, lambda_bootstrap, select_model, AccuracyCurve, CurveSettings, FitResult, HypothesisDef, RhoShare, Variant,
    WalkScores,
};
use crate::config::{RunConfig, Source};
use crate::error::{Error, Result};
use crate::graph::{GraphFile, GraphHypothesis};
use crate::intervention::{
    aggregate, aggregate_csv, dedup, patch_effects, steer_effects, EffectInputs, GroupField, InterventionRecord,
    LogitRecord, Metric,
};
use crate::io::{read_jsonl, sha256_file, to_json_line, write_document, write_jsonl, write_text, Schema};
use crate::plot::{Scatter, Series};
use crate::repr::{
    class_means, dirichlet_energy, normalized_energy, pca_project, pca_subspace, principal_angles,
    randomized_energy_baseline, ActivationRecord, EnergyBaseline,
};
use crate::rng::derive_seed;
use crate::surrogate::curves::design_walks;
use crate::surrogate::{agent_walk_scores, steer_logits, synthetic_activations, CurveDesign, ResidualModel, SteerDesign, SyntheticSpec};
use crate::walk::{PromptPair, WalkRecord};

/// One file written by the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    /// Lower-case hex SHA-256 of the file.
    pub sha256: String,
    /// Size in bytes.
    pub bytes: u64,
    /// Line schema, for JSON-Lines record files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
}

/// A stage that ran but had nothing to do.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedStage {
    /// Stage name.
    pub stage: String,
    /// Why.
    pub reason: String,
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Experiment name.
    pub experiment: String,
    /// `complete` or `failed`.
    pub status: String,
    /// Stages that finished, in order.
    pub stages: Vec<String>,
    /// Stages skipped for lack of input.
    pub skipped: Vec<SkippedStage>,
    /// Stage that failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    /// Failure message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Outputs in write order.
    pub outputs: Vec<ManifestEntry>,
    /// SHA-256 of the canonical config echo.
    pub config_sha256: String,
    /// The config, every field present.
    pub config: Value,
}

/// Name of the manifest file inside the output directory.
pub const MANIFEST_FILE: &str = "manifest.json";

/// Curve file of one mixture ratio and hypothesis.
pub fn curve_file_name(rho: f64, hypothesis: &str) -> String {
    format!("curves/rho-{rho}_{hypothesis}.jsonl")
}

struct Run<'c> {
    config: &'c RunConfig,
    out: PathBuf,
    header: Value,
    entries: Vec<ManifestEntry>,
    stages: Vec<String>,
    skipped: Vec<SkippedStage>,
}

impl Run<'_> {
    fn header_for(&self, schema: &str) -> Value {
        let mut h = self.header.clone();
        h["schema"] = schema.into();
        h
    }

    fn record(&mut self, rel: &str, schema: Option<Schema>) -> Result<()> {
        let path = self.out.join(rel);
        let bytes = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        self.entries.push(ManifestEntry {
            path: rel.to_owned(),
            sha256: sha256_file(&path)?,
            bytes,
            schema,
        });
        Ok(())
    }

    fn jsonl<T: Serialize>(&mut self, rel: &str, schema: Option<Schema>, records: &[T]) -> Result<()> {
        let name = schema.map_or("records", Schema::name);
        write_jsonl(self.out.join(rel), Some(&self.header_for(name)), records)?;
        self.record(rel, schema)
    }

    fn document<T: Serialize + ?Sized>(&mut self, rel: &str, kind: &str, value: &T) -> Result<()> {
        write_document(self.out.join(rel), &self.header_for(kind), value)?;
        self.record(rel, None)
    }

    fn plot(&mut self, stem: &str, mut plot: Scatter) -> Result<()> {
        plot.description = to_json_line(&self.header_for("plot"))?;
        write_text(self.out.join(format!("{stem}.svg")), &plot.to_svg())?;
        self.record(&format!("{stem}.svg"), None)?;
        write_text(self.out.join(format!("{stem}.csv")), &plot.to_csv())?;
        self.record(&format!("{stem}.csv"), None)
    }

    fn skip(&mut self, stage: &str, reason: impl Into<String>) {
        self.skipped.push(SkippedStage {
            stage: stage.into(),
            reason: reason.into(),
        });
    }

    fn manifest(&self, failure: Option<(&str, &Error)>) -> Manifest {
        Manifest {
            experiment: self.config.experiment.clone(),
            status: if failure.is_some() { "failed" } else { "complete" }.into(),
            stages: self.stages.clone(),
            skipped: self.skipped.clone(),
            failed_stage: failure.map(|(s, _)| s.to_owned()),
            error: failure.map(|(_, e)| e.to_string()),
            outputs: self.entries.clone(),
            config_sha256: self.config.digest(),
            config: self.config.echo(),
        }
    }
}

/// State handed from stage to stage.
#[derive(Default)]
struct State {
    graphs: Option<(GraphHypothesis, GraphHypothesis)>,
    walks: Vec<WalkRecord>,
    scores: Vec<WalkScores>,
    train_scores: Vec<WalkScores>,
    train: Vec<AccuracyCurve>,
    val: Vec<AccuracyCurve>,
    test: Vec<AccuracyCurve>,
    defs: Vec<HypothesisDef>,
    fits: Option<(FitResult, FitResult)>,
    patch: Vec<InterventionRecord>,
    steer: Vec<InterventionRecord>,
}

impl State {
    fn graphs(&self) -> (&GraphHypothesis, &GraphHypothesis) {
        let (a, b) = self.graphs.as_ref().expect("graphs stage ran first");
        (a, b)
    }
}

type Stage = fn(&mut Run, &mut State) -> Result<()>;

const STAGES: [(&str, Stage); 10] = [
    ("graphs", stage_graphs),
    ("gen", stage_gen),
    ("score", stage_score),
    ("curves", stage_curves),
    ("fit", stage_fit),
    ("select", stage_select),
    ("bootstrap", stage_bootstrap),
    ("representation", stage_representation),
    ("effects", stage_effects),
    ("aggregate", stage_aggregate),
];

/// Run every stage of `config` and write `manifest.json`.
///
/// On failure the manifest records the failed stage and the outputs so far,
/// and the error is returned wrapped in [`Error::Stage`].
pub fn run_pipeline(config: &RunConfig) -> Result<Manifest> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let out = config.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e).in_stage("config"))?;
    let mut run = Run {
        config,
        header: json!({
            "experiment": config.experiment,
            "config": config.echo(),
            "config_sha256": config.digest(),
        }),
        out,
        entries: Vec::new(),
        stages: Vec::new(),
        skipped: Vec::new(),
    };
    let mut state = State::default();
    for (name, stage) in STAGES {
        if let Err(e) = stage(&mut run, &mut state) {
            let manifest = run.manifest(Some((name, &e)));
            // The stage error is what the caller needs; a manifest write failure is secondary.
            let _ = crate::io::write_json(run.out.join(MANIFEST_FILE), &manifest);
            return Err(e.in_stage(name));
        }
        run.stages.push(name.to_owned());
    }
    let manifest = run.manifest(None);
    crate::io::write_json(run.out.join(MANIFEST_FILE), &manifest).map_err(|e| e.in_stage("manifest"))?;
    Ok(manifest)
}

/// Read a manifest back.
pub fn load_manifest(output_dir: impl AsRef<Path>) -> Result<Manifest> {
    crate::io::read_json(output_dir.as_ref().join(MANIFEST_FILE))
}

fn stage_graphs(run: &mut Run, st: &mut State) -> Result<()> {
    let (a, b) = run.config.build_graphs()?;
    let mut mdl = Vec::new();
    for g in [&a, &b] {
        run.document(
            &format!("graphs/{}.json", g.name()),
            "graph",
            &GraphFile::from_graph(g, run.config.vocab_mode),
        )?;
        mdl.push(json!({
            "name": g.name(),
            "nodes": g.len(),
            "edges": g.edge_count(),
            "complexity_bits": g.mdl_complexity(),
        }));
    }
    run.document("graphs/mdl.json", "mdl", &mdl)?;
    st.defs = vec![
        HypothesisDef {
            name: a.name().to_owned(),
            complexity_bits: a.mdl_complexity() as f64,
            share: RhoShare::Complement,
        },
        HypothesisDef {
            name: b.name().to_owned(),
            complexity_bits: b.mdl_complexity() as f64,
            share: RhoShare::Rho,
        },
    ];
    st.graphs = Some((a, b));
    Ok(())
}

fn curve_design(c: &RunConfig) -> CurveDesign {
    CurveDesign {
        rho_grid: c.rho_grid.clone(),
        n_grid: c.n_grid.clone(),
        walks_per_rho: c.walks.walks_per_rho,
        walk_len: c.walks.walk_len,
        segment_len: c.walks.segment_len,
        window: c.walks.window,
        include_boundaries: c.walks.include_boundaries,
    }
}

fn stage_gen(run: &mut Run, st: &mut State) -> Result<()> {
    let (a, b) = st.graphs();
    let walks = design_walks(a, b, &curve_design(run.config), run.config.seeds.walks)?;
    run.jsonl("walks.jsonl", Some(Schema::Walk), &walks)?;
    st.walks = walks;
    Ok(())
}

fn stage_score(run: &mut Run, st: &mut State) -> Result<()> {
    let (a, b) = st.graphs.as_ref().expect("graphs stage ran first");
    let include = run.config.walks.include_boundaries;
    let mut scores = Vec::new();
    let mut unknown: BTreeMap<String, usize> = BTreeMap::new();
    match &run.config.source {
        Source::Surrogate { agent } => {
            for w in &st.walks {
                scores.extend(agent_walk_scores(agent, w, &[a, b], include)?);
            }
        }
        Source::Ingest { predictions, .. } => {
            let preds: Vec<PredictionRecord> = read_jsonl(predictions)?;
            let mut by_walk: BTreeMap<u64, Vec<PredictionRecord>> = BTreeMap::new();
            for p in preds {
                by_walk.entry(p.walk_id).or_default().push(p);
            }
            for w in &st.walks {
                let preds = by_walk.get(&w.walk_id).map(Vec::as_slice).unwrap_or(&[]);
                for (s, u) in score_predictions(w, preds, &[a, b], include)? {
                    *unknown.entry(s.hypothesis.clone()).or_default() += u;
                    scores.push(s);
                }
            }
        }
    }
    if scores.iter().all(|s| s.positions.is_empty()) {
        return Err(Error::NoData("no scored positions".into()));
    }
    run.jsonl("scores.jsonl", None, &scores)?;
    st.scores = scores;
    let p0: Vec<_> = [a.name(), b.name()]
        .into_iter()
        .map(|h| pooled_p0(&st.scores, h, run.config.walks.p0_max_context))
        .collect::<Result<_>>()?;
    run.document("p0.json", "p0", &json!({ "estimates": p0, "unknown_words": unknown }))
}

fn realized_rho(walk: &WalkRecord, second: &str) -> f64 {
    let from_second: usize = walk.segments.iter().filter(|s| s.source == second).map(|s| s.length).sum();
    from_second as f64 / walk.len().max(1) as f64
}

fn stage_curves(run: &mut Run, st: &mut State) -> Result<()> {
    let c = run.config;
    let ids: Vec<u64> = st.walks.iter().map(|w| w.walk_id).collect();
    let split = split_walk_ids(&ids, c.seeds.split);
    let part = |set: &BTreeSet<u64>| -> Vec<WalkScores> {
        st.scores.iter().filter(|s| set.contains(&s.walk_id)).cloned().collect()
    };
    let (train, val, test) = (part(&split.train), part(&split.val), part(&split.test));
    let curves = |s: &[WalkScores]| curves_from_scores(s, &c.n_grid, c.walks.window);
    st.train = curves(&train);
    st.val = curves(&val);
    st.test = curves(&test);

    let (a, b) = st.graphs();
    let names = [a.name().to_owned(), b.name().to_owned()];
    for &rho in &c.rho_grid {
        for h in &names {
            let curve = st
                .train
                .iter()
                .find(|cv| cv.rho == rho && &cv.hypothesis == h)
                .cloned()
                .unwrap_or_else(|| AccuracyCurve {
                    hypothesis: h.clone(),
                    rho,
                    samples: Vec::new(),
                });
            run.jsonl(&curve_file_name(rho, h), Some(Schema::AccuracyCurve), &[curve])?;
        }
    }
    run.jsonl("split/val_curves.jsonl", Some(Schema::AccuracyCurve), &st.val.clone())?;
    run.jsonl("split/test_curves.jsonl", Some(Schema::AccuracyCurve), &st.test.clone())?;
    run.document("split/walk_split.json", "walk_split", &split)?;

    let series = st
        .train
        .iter()
        .filter(|cv| !cv.samples.is_empty())
        .map(|cv| {
            let mut s = Series::points(
                format!("{} rho={}", cv.hypothesis, cv.rho),
                cv.samples.iter().map(|p| (p.n as f64, p.accuracy)).collect(),
            );
            s.line = true;
            s
        })
        .collect();
    run.plot(
        "plots/curves",
        Scatter {
            title: format!("{}: neighbour-hit accuracy", c.experiment),
            x_label: "context length N".into(),
            y_label: "accuracy".into(),
            log_x: true,
            series,
            description: String::new(),
        },
    )?;
    st.train_scores = train;
    Ok(())
}

fn stage_fit(run: &mut Run, st: &mut State) -> Result<()> {
    let c = run.config;
    let specs = specs_from_scores(&st.train_scores, &st.defs, c.walks.p0_max_context)?;
    let cfg = c.fit_config();
    let holdout = |f: FitResult| {
        f.with_holdout(
            (!st.val.is_empty()).then_some(st.val.as_slice()),
            (!st.test.is_empty()).then_some(st.test.as_slice()),
        )
    };
    let per_graph = holdout(fit(&st.train, &specs, Variant::PerGraph, &cfg)?)?;
    let mixture = holdout(fit(&st.train, &specs, Variant::MixtureBias, &cfg)?)?;
    run.document("fits/per_graph.json", "fit", &per_graph)?;
    run.document("fits/mixture_bias.json", "fit", &mixture)?;

    // Nominal versus realized mixture shares, per training cell.
    let (_, b) = st.graphs();
    let train_ids: BTreeSet<u64> = st.train_scores.iter().map(|s| s.walk_id).collect();
    let mut realized: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for w in st.walks.iter().filter(|w| train_ids.contains(&w.walk_id)) {
        let rho = w.rho.unwrap_or(0.0);
        let e = realized.entry(rho.to_bits()).or_insert((rho, 0.0, 0));
        e.1 += realized_rho(w, b.name());
        e.2 += 1;
    }
    let cells: Vec<Value> = realized
        .values()
        .map(|&(rho, sum, n)| json!({ "rho": rho, "realized": sum / n as f64, "walks": n }))
        .collect();
    let relabeled: Vec<AccuracyCurve> = st
        .train
        .iter()
        .map(|cv| {
            let mut cv = cv.clone();
            if let Some(&(_, sum, n)) = realized.get(&cv.rho.to_bits()) {
                cv.rho = sum / n as f64;
            }
            cv
        })
        .collect();
    let diag = json!({
        "cells": cells,
        "per_graph_mse_nominal": evaluate_mse(&per_graph.params, &st.train)?,
        "per_graph_mse_realized": evaluate_mse(&per_graph.params, &relabeled)?,
        "mixture_bias_mse_nominal": evaluate_mse(&mixture.params, &st.train)?,
        "mixture_bias_mse_realized": evaluate_mse(&mixture.params, &relabeled)?,
    });
    run.document("fits/rho_diagnostic.json", "rho_diagnostic", &diag)?;
    st.fits = Some((per_graph, mixture));
    Ok(())
}

fn stage_select(run: &mut Run, st: &mut State) -> Result<()> {
    let (a, b) = st.fits.as_ref().expect("fit stage ran");
    let report = select_model(a, b)?;
    run.document("selection.json", "selection", &report)
}

fn stage_bootstrap(run: &mut Run, st: &mut State) -> Result<()> {
    let c = run.config;
    let Some(boot) = c.bootstrap else {
        run.skip("bootstrap", "no bootstrap section");
        return Ok(());
    };
    let boot = crate::belief::BootstrapConfig {
        seed: c.seeds.bootstrap,
        ..boot
    };
    let settings = CurveSettings {
        n_grid: c.n_grid.clone(),
        window: c.walks.window,
        p0_max_context: c.walks.p0_max_context,
    };
    let (_, interval) = lambda_bootstrap(&st.train_scores, &st.defs, &settings, &c.fit_config(), &boot)?;
    run.document("lambda_interval.json", "lambda_interval", &interval)
}

/// Geometry of one hypothesis' class means at one context length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphGeometry {
    /// Hypothesis name.
    pub graph: String,
    /// Context length.
    pub context_len: usize,
    /// Nodes with at least one record, ascending.
    pub nodes: Vec<usize>,
    /// Nodes without records.
    pub absent: Vec<usize>,
    /// Dirichlet energy of the class means.
    pub dirichlet_energy: f64,
    /// Energy over total squared norm.
    pub normalized_energy: f64,
    /// Energy under random relabelings of the nodes.
    pub baseline: EnergyBaseline,
    /// Variance share of the two plotted components.
    pub explained_ratio: Vec<f64>,
}

/// Class means of `records` under `g` at context length `t`: energies, a
/// relabeling baseline, a 2-D PCA plot with the graph's edges, and the
/// top-2 principal subspace.
pub fn graph_geometry(
    records: &[ActivationRecord],
    g: &GraphHypothesis,
    t: usize,
    window: Option<usize>,
    permutations: usize,
    seed: u64,
) -> Result<(GraphGeometry, Scatter, nalgebra::DMatrix<f64>)> {
    let m = class_means(records, g, t, window)?;
    let pca = pca_project(&m.h, 2)?;
    let baseline = randomized_energy_baseline(&m.h, &m.nodes, g, permutations, seed)?;
    let row: BTreeMap<usize, usize> = m.nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut s = Series::points(
        g.name(),
        (0..m.nodes.len()).map(|i| (pca.coordinates[(i, 0)], pca.coordinates[(i, 1)])).collect(),
    );
    s.labels = m.nodes.iter().map(|&v| g.words()[v].clone()).collect();
    s.edges = g
        .edges()
        .iter()
        .filter_map(|(u, v)| Some((*row.get(u)?, *row.get(v)?)))
        .collect();
    let plot = Scatter {
        title: format!("class means under {} (T = {t}, layer {})", g.name(), m.layer),
        x_label: "PC1".into(),
        y_label: "PC2".into(),
        log_x: false,
        series: vec![s],
        description: String::new(),
    };
    let geometry = GraphGeometry {
        graph: g.name().to_owned(),
        context_len: t,
        dirichlet_energy: dirichlet_energy(&m.h, &m.nodes, g)?,
        normalized_energy: normalized_energy(&m.h, &m.nodes, g)?,
        baseline,
        explained_ratio: pca.explained_ratio,
        nodes: m.nodes,
        absent: m.absent,
    };
    Ok((geometry, plot, pca_subspace(&m.h, 2)?))
}

fn stage_representation(run: &mut Run, st: &mut State) -> Result<()> {
    let c = run.config;
    let r = &c.representation;
    let (a, b) = st.graphs();
    let records: Vec<ActivationRecord> = match &c.source {
        Source::Surrogate { .. } => {
            let spec = SyntheticSpec {
                mode: r.mode,
                sigma: r.sigma,
                dim: r.dim,
                samples_per_word: r.samples_per_word,
                layer: r.layer,
            };
            let recs = synthetic_activations(a, b, &spec, c.seeds.representation)?;
            run.jsonl("activations.jsonl", Some(Schema::Activation), &recs)?;
            recs
        }
        Source::Ingest { activations: Some(p), .. } => read_jsonl(p)?,
        Source::Ingest { activations: None, .. } => {
            run.skip("representation", "no activation file");
            return Ok(());
        }
    };
    for rec in &records {
        rec.validate()?;
    }
    let records: Vec<ActivationRecord> = records.into_iter().filter(|x| x.layer == r.layer).collect();
    if records.is_empty() {
        return Err(Error::NoData(format!("no activations at layer {}", r.layer)));
    }
    let t_grid: Vec<usize> = if r.t_grid.is_empty() {
        records.iter().map(|x| x.context_len).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        r.t_grid.clone()
    };
    let mut report = Vec::new();
    for (ti, &t) in t_grid.iter().enumerate() {
        let mut geoms = Vec::new();
        let mut subspaces = Vec::new();
        for (gi, g) in [a, b].into_iter().enumerate() {
            let seed = derive_seed(c.seeds.representation, (2 * ti + gi) as u64);
            let (geometry, plot, subspace) = graph_geometry(&records, g, t, r.window, r.permutations, seed)?;
            run.plot(&format!("plots/pca_{}_T{t}", g.name()), plot)?;
            geoms.push(geometry);
            subspaces.push(subspace);
        }
        let angles: Vec<f64> = principal_angles(&subspaces[0], &subspaces[1])?
            .into_iter()
            .map(f64::to_degrees)
            .collect();
        report.push(json!({ "context_len": t, "layer": r.layer, "graphs": geoms, "principal_angles_deg": angles }));
    }
    run.document("geometry.json", "geometry", &report)
}

fn stage_effects(run: &mut Run, st: &mut State) -> Result<()> {
    let c = run.config;
    let iv = &c.interventions;
    let (a, b) = st.graphs.as_ref().expect("graphs stage ran first");
    let (pairs, patch_logits, steer_logits_recs): (Vec<PromptPair>, Vec<LogitRecord>, Vec<LogitRecord>) = match &c.source {
        Source::Surrogate { .. } => {
            if !a.words().iter().any(|w| b.node_of(w).is_some()) {
                run.skip("effects", "the graphs share no words, so prompt pairs cannot be matched");
                return Ok(());
            }
            let seed = c.seeds.interventions;
            let model = ResidualModel::new(iv.toy, a, b, seed)?;
            let pairs = model.pairs(iv.pairs, iv.context_len, derive_seed(seed, 1))?;
            let mut patch = Vec::new();
            for p in &pairs {
                patch.extend(model.patch_logits(p, &iv.layers)?);
            }
            let mut steer: Vec<LogitRecord> = Vec::new();
            for (k, &direction) in iv.directions.iter().enumerate() {
                let design = SteerDesign {
                    layer: iv.steer_layer,
                    alphas: iv.alpha_grid.clone(),
                    controls: iv.controls.clone(),
                    direction,
                    train_contexts: iv.train_contexts,
                    context_len: iv.context_len,
                };
                let (v, recs) = steer_logits(&model, &pairs, &design, derive_seed(seed, 2))?;
                if k == 0 {
                    run.document("steering_vector.json", "steering_vector", &v)?;
                }
                // Clean and corrupt passes do not depend on the direction; keep one copy.
                steer.extend(recs.into_iter().filter(|r| k == 0 || r.layer.is_some()));
            }
            run.jsonl("pairs.jsonl", None, &pairs)?;
            run.jsonl("logits/patch.jsonl", Some(Schema::Logit), &patch)?;
            run.jsonl("logits/steer.jsonl", Some(Schema::Logit), &steer)?;
            (pairs, patch, steer)
        }
        Source::Ingest {
            pairs,
            patch_logits,
            steer_logits,
            ..
        } => {
            if patch_logits.is_none() && steer_logits.is_none() {
                run.skip("effects", "no logit files");
                return Ok(());
            }
            let load = |p: &Option<PathBuf>| -> Result<Vec<LogitRecord>> { p.as_ref().map_or(Ok(Vec::new()), read_jsonl) };
            let pairs: Vec<PromptPair> = pairs.as_ref().map_or(Ok(Vec::new()), read_jsonl)?;
            (pairs, load(patch_logits)?, load(steer_logits)?)
        }
    };
    let by_id: BTreeMap<String, PromptPair> = pairs.into_iter().map(|p| (p.pair_id.clone(), p)).collect();
    let inputs = EffectInputs {
        g_clean: a,
        g_corrupt: b,
        pairs: &by_id,
        floor: iv.floor,
    };
    st.patch = patch_effects(&patch_logits, &inputs)?;
    st.steer = steer_effects(&steer_logits_recs, &inputs)?;
    let (patch, steer) = (st.patch.clone(), st.steer.clone());
    run.jsonl("interventions/patch.jsonl", Some(Schema::Intervention), &patch)?;
    run.jsonl("interventions/steer.jsonl", Some(Schema::Intervention), &steer)
}

fn stage_aggregate(run: &mut Run, st: &mut State) -> Result<()> {
    if st.patch.is_empty() && st.steer.is_empty() {
        run.skip("aggregate", "no intervention records");
        return Ok(());
    }
    let mut summary = Vec::new();
    let jobs: [(&str, &[InterventionRecord], &[GroupField]); 2] = [
        ("patch", &st.patch, &[GroupField::Layer]),
        (
            "steer",
            &st.steer,
            &[GroupField::Layer, GroupField::Alpha, GroupField::Control, GroupField::Direction],
        ),
    ];
    for (kind, records, groups) in jobs {
        if records.is_empty() {
            continue;
        }
        let unique = dedup(records);
        let mut rows = aggregate(&unique, groups, Metric::NormalizedEffect)?;
        let mut notes = Vec::new();
        for metric in [Metric::SeenContrast, Metric::HeldoutContrast] {
            match aggregate(&unique, groups, metric) {
                Ok(r) => rows.extend(r),
                Err(Error::NoData(m)) => notes.push(format!("{metric:?}: {m}")),
                Err(e) => return Err(e),
            }
        }
        summary.push(json!({
            "kind": kind,
            "records": records.len(),
            "unique": unique.len(),
            "duplicates_dropped": records.len() - unique.len(),
            "rows": rows,
            "notes": notes,
        }));
        let table = aggregate_csv(&rows);
        let header = to_json_line(&run.header_for("aggregate"))?;
        write_text(run.out.join(format!("aggregates/{kind}.csv")), &format!("# {header}\n{table}"))?;
        run.record(&format!("aggregates/{kind}.csv"), None)?;
    }
    run.document("aggregates/summary.json", "aggregate", &summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::VocabMode;

    fn small(dir: &Path) -> RunConfig {
        let mut c = RunConfig::new("unit", dir);
        c.rho_grid = vec![0.0, 0.5, 1.0];
        c.n_grid = crate::surrogate::curves::log_grid(10, 400, 12);
        c.walks.walks_per_rho = 4;
        c.walks.walk_len = 400;
        c.walks.segment_len = 20;
        c.walks.p0_max_context = 1;
        c.vocab_mode = VocabMode::Overlap;
        c.restarts = Some(4);
        c.representation.permutations = 20;
        c.interventions.pairs = 6;
        c.interventions.train_contexts = 10;
        c.interventions.layers = vec![16, 31];
        c
    }

    #[test]
    fn file_names_encode_rho_and_hypothesis() {
        assert_eq!(curve_file_name(0.25, "ring"), "curves/rho-0.25_ring.jsonl");
        assert_eq!(curve_file_name(1.0, "grid"), "curves/rho-1_grid.jsonl");
    }

    #[test]
    fn small_run_completes_and_hashes_match() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_pipeline(&small(dir.path())).unwrap();
        assert_eq!(m.status, "complete");
        assert_eq!(m.stages.len(), STAGES.len());
        for e in &m.outputs {
            assert_eq!(sha256_file(dir.path().join(&e.path)).unwrap(), e.sha256, "{}", e.path);
        }
        assert_eq!(load_manifest(dir.path()).unwrap(), m);
    }
}
