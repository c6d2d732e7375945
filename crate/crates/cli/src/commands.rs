// SPDX-License-Identifier: MIT OR Apache-2.0

//! Subcommand implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use graphbelief::belief::curve::{curves_from_scores, pooled_p0, score_predictions, PredictionRecord};
use graphbelief::belief::{fit, select_model, AccuracyCurve, FitConfig, FitResult, HypothesisSpec, RhoShare, Variant, WalkScores};
use graphbelief::config::RunConfig;
use graphbelief::graph::GraphHypothesis;
use graphbelief::intervention::{
    aggregate, aggregate_csv, dedup, patch_effects, steer_effects, Deduper, EffectInputs, GroupField, InterventionRecord,
    LogitRecord, Metric,
};
use graphbelief::io::{read_document, read_jsonl, to_json_line, to_json_pretty, validate_file, Schema};
use graphbelief::pipeline::{graph_geometry, run_pipeline};
use graphbelief::repr::{principal_angles, ActivationRecord};
use graphbelief::rng::derive_seed;
use graphbelief::surrogate::curves::design_walks;
use graphbelief::surrogate::{
    agent_pair_logits, agent_walk_scores, synthetic_activations, AgentConfig, AgentKind, BayesConfig, CurveDesign, Decoding,
    PlantMode, SyntheticSpec,
};
use graphbelief::walk::{make_prompt_pair, PromptPair, WalkRecord};
use serde_json::{json, Value};

use crate::parse::{emit_document, emit_jsonl, emit_text, header, list, n_grid, named, GraphArgs};
use crate::{CliError, Command};

/// Curve construction flags.
#[derive(Debug, Clone, clap::Args)]
pub struct CurveArgs {
    /// Context lengths: `log:LO:HI:COUNT` or a comma-separated list.
    #[arg(long, default_value = "log:10:2000:30")]
    pub n_grid: String,
    /// Trailing window of positions averaged per context length.
    #[arg(long, default_value_t = 50)]
    pub window: usize,
    /// Also score transitions that cross a segment boundary.
    #[arg(long)]
    pub include_boundaries: bool,
    /// Also write the per-position scores (input to `fit --scores`).
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
}

/// `surrogate` flags.
#[derive(Debug, Clone, clap::Args)]
pub struct SurrogateArgs {
    #[command(flatten)]
    pub graphs: GraphArgs,
    /// induction or bayes.
    #[arg(long, default_value = "induction")]
    pub agent: String,
    /// curves, logits or activations.
    #[arg(long)]
    pub emit: String,
    /// argmax or sample; the agent's default when absent.
    #[arg(long)]
    pub decoding: Option<String>,
    /// Induction smoothing.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Bayes prior intercept.
    #[arg(long)]
    pub b0: Option<f64>,
    /// Bayes complexity penalty per bit.
    #[arg(long)]
    pub lambda_true: Option<f64>,
    /// Bayes evidence weight.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Walk file (curves).
    #[arg(long)]
    pub walks: Option<PathBuf>,
    #[command(flatten)]
    pub curve: CurveArgs,
    /// Prompt-pair file (logits); pairs are sampled when absent.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Sampled pairs (logits).
    #[arg(long, default_value_t = 50)]
    pub n_pairs: usize,
    /// Tokens per sampled context (logits).
    #[arg(long, default_value_t = 200)]
    pub context_len: usize,
    /// Where to write sampled pairs.
    #[arg(long)]
    pub pairs_out: Option<PathBuf>,
    /// Layer label (activations).
    #[arg(long, default_value_t = 26)]
    pub layer: usize,
    /// Ambient dimension (activations).
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Noise standard deviation (activations).
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    /// Records per word (activations).
    #[arg(long, default_value_t = 8)]
    pub samples_per_word: usize,
    /// orthogonal_subspaces or blended:MIX (activations).
    #[arg(long, default_value = "orthogonal_subspaces")]
    pub mode: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `fit` flags.
#[derive(Debug, Clone, clap::Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub graphs: GraphArgs,
    /// Training curve files.
    #[arg(long = "curves", required = true)]
    pub curves: Vec<PathBuf>,
    /// per-graph or mixture-bias.
    #[arg(long, default_value = "per-graph")]
    pub variant: String,
    /// joint or baseline bounds.
    #[arg(long, default_value = "joint")]
    pub preset: String,
    /// Uniform restarts; the preset's count when absent.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub seed: u64,
    /// Pre-transition accuracies, `name=value,...`.
    #[arg(long, conflicts_with = "scores")]
    pub p0: Option<String>,
    /// Score file to pool the pre-transition accuracies from.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Longest context counted as pre-transition.
    #[arg(long, default_value_t = 100)]
    pub p0_max_context: usize,
    /// Validation curve file.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Test curve file.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `energy` and `pca` flags.
#[derive(Debug, Clone, clap::Args)]
pub struct GeometryArgs {
    #[command(flatten)]
    pub graphs: GraphArgs,
    /// Activation file.
    #[arg(long)]
    pub activations: PathBuf,
    #[arg(long, default_value_t = 26)]
    pub layer: usize,
    /// Context lengths, comma-separated; every one present when absent.
    #[arg(long)]
    pub context_len: Option<String>,
    /// Trailing window of positions; the whole context when absent.
    #[arg(long)]
    pub window: Option<usize>,
    /// Random relabelings for the energy baseline.
    #[arg(long, default_value_t = 200)]
    pub permutations: usize,
    #[arg(long, default_value_t = 5)]
    pub seed: u64,
    /// `energy`: output file (stdout when absent). `pca`: path prefix for the SVG, CSV and JSON files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `patch-effects` and `steer-effects` flags.
#[derive(Debug, Clone, clap::Args)]
pub struct EffectArgs {
    /// Clean hypothesis first, corrupt second.
    #[command(flatten)]
    pub graphs: GraphArgs,
    /// Logit files.
    #[arg(long = "logits", required = true)]
    pub logits: Vec<PathBuf>,
    /// Prompt-pair file; needed for seen and held-out contrasts.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Smallest usable clean-minus-corrupt denominator.
    #[arg(long, default_value_t = 1e-6)]
    pub floor: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Run one subcommand.
pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenWalks {
            graphs,
            rho,
            n_walks,
            length,
            segment_len,
            seed,
            out,
        } => gen_walks(&graphs, &rho, n_walks, length, segment_len, seed, out.as_deref()),
        Command::Surrogate(a) => surrogate(&a),
        Command::Score {
            graphs,
            walks,
            predictions,
            curve,
            out,
        } => score(&graphs, &walks, &predictions, &curve, out.as_deref()),
        Command::Fit(a) => fit_cmd(&a),
        Command::SelectModel { first, second, out } => {
            let a: FitResult = read_document(&first)?;
            let b: FitResult = read_document(&second)?;
            emit_document(out.as_deref(), &header("select-model"), &select_model(&a, &b)?)
        }
        Command::Energy(a) => energy(&a),
        Command::Pca(a) => pca(&a),
        Command::PatchEffects(a) => effects(&a, false),
        Command::SteerEffects(a) => effects(&a, true),
        Command::Dedup { inputs, out } => {
            let mut d = Deduper::new();
            let mut kept = Vec::new();
            for p in &inputs {
                let records: Vec<InterventionRecord> = read_jsonl(p)?;
                kept.extend(records.into_iter().filter(|r| d.admit(r)));
            }
            emit_jsonl(out.as_deref(), &with_schema(header("dedup"), Schema::Intervention), &kept)?;
            eprintln!("kept {} records, dropped {} duplicates", kept.len(), d.dropped());
            Ok(())
        }
        Command::Aggregate {
            inputs,
            group_by,
            metric,
            keep_duplicates,
            out,
        } => {
            let mut records: Vec<InterventionRecord> = Vec::new();
            for p in &inputs {
                records.extend(read_jsonl::<InterventionRecord>(p)?);
            }
            if !keep_duplicates {
                records = dedup(&records);
            }
            let groups: Vec<GroupField> = list("group field", &group_by)?;
            let metric: Metric = named("metric", &metric)?;
            let rows = aggregate(&records, &groups, metric)?;
            let text = format!("# {}\n{}", to_json_line(&header("aggregate"))?, aggregate_csv(&rows));
            emit_text(out.as_deref(), &text)
        }
        Command::Validate { file, schema } => {
            let schema: Schema = schema.parse().map_err(|_| CliError::Usage(format!("unknown schema `{schema}`")))?;
            let report = validate_file(&file, schema)?;
            println!("{}", to_json_pretty(&report)?);
            if report.invalid > 0 {
                return Err(CliError::Data(format!("{}: {} invalid lines", file.display(), report.invalid)));
            }
            Ok(())
        }
        Command::Run { config } => {
            let config = RunConfig::load(&config)?;
            let manifest = run_pipeline(&config)?;
            for s in &manifest.skipped {
                eprintln!("skipped {}: {}", s.stage, s.reason);
            }
            println!(
                "{}: {} outputs in {}",
                manifest.status,
                manifest.outputs.len(),
                config.output_dir.display()
            );
            Ok(())
        }
    }
}

fn with_schema(mut h: Value, schema: Schema) -> Value {
    h["schema"] = schema.name().into();
    h
}

fn gen_walks(
    graphs: &GraphArgs,
    rho: &str,
    n_walks: usize,
    length: usize,
    segment_len: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (a, b) = graphs.build()?;
    let design = CurveDesign {
        rho_grid: list("rho", rho)?,
        walks_per_rho: n_walks,
        walk_len: length,
        segment_len,
        n_grid: vec![length],
        ..CurveDesign::standard(n_walks)
    };
    let walks = design_walks(&a, &b, &design, seed)?;
    emit_jsonl(out, &with_schema(header("gen-walks"), Schema::Walk), &walks)
}

fn agent_config(a: &SurrogateArgs) -> Result<AgentConfig, CliError> {
    let mut config = match a.agent.as_str() {
        "induction" => AgentConfig {
            kind: AgentKind::Induction { epsilon: a.epsilon },
            decoding: Decoding::Argmax,
        },
        "bayes" => {
            let d = BayesConfig::default();
            AgentConfig::bayes(BayesConfig {
                b0: a.b0.unwrap_or(d.b0),
                lambda_true: a.lambda_true.unwrap_or(d.lambda_true),
                beta: a.beta.unwrap_or(d.beta),
                ..d
            })
        }
        other => return Err(CliError::Usage(format!("unknown agent `{other}`: expected induction or bayes"))),
    };
    if let Some(d) = &a.decoding {
        config.decoding = named("decoding", d)?;
    }
    Ok(config)
}

fn write_curves(
    scores: &[WalkScores],
    curve: &CurveArgs,
    command: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if let Some(p) = &curve.scores_out {
        graphbelief::io::write_jsonl(p, Some(&header(command)), scores)?;
    }
    let curves = curves_from_scores(scores, &n_grid(&curve.n_grid)?, curve.window);
    emit_jsonl(out, &with_schema(header(command), Schema::AccuracyCurve), &curves)
}

fn surrogate(a: &SurrogateArgs) -> Result<(), CliError> {
    let (g_a, g_b) = a.graphs.build()?;
    let graphs = [&g_a, &g_b];
    match a.emit.as_str() {
        "curves" => {
            let config = agent_config(a)?;
            let path = a
                .walks
                .as_ref()
                .ok_or_else(|| CliError::Usage("--emit curves needs --walks".into()))?;
            let walks: Vec<WalkRecord> = read_jsonl(path)?;
            let mut scores = Vec::new();
            for w in &walks {
                scores.extend(agent_walk_scores(&config, w, &graphs, a.curve.include_boundaries)?);
            }
            write_curves(&scores, &a.curve, "surrogate", a.out.as_deref())
        }
        "logits" => {
            let config = agent_config(a)?;
            let pairs: Vec<PromptPair> = match &a.pairs {
                Some(p) => read_jsonl(p)?,
                None => {
                    let pairs = (0..a.n_pairs)
                        .map(|i| make_prompt_pair(&g_a, &g_b, a.context_len, derive_seed(a.seed, i as u64), format!("pair-{i}")))
                        .collect::<graphbelief::Result<Vec<_>>>()?;
                    if let Some(p) = &a.pairs_out {
                        graphbelief::io::write_jsonl(p, Some(&header("surrogate")), &pairs)?;
                    }
                    pairs
                }
            };
            let mut logits: Vec<LogitRecord> = Vec::new();
            for p in &pairs {
                logits.extend(agent_pair_logits(&config, p, &graphs)?);
            }
            emit_jsonl(a.out.as_deref(), &with_schema(header("surrogate"), Schema::Logit), &logits)
        }
        "activations" => {
            let mode = match a.mode.strip_prefix("blended:") {
                Some(mix) => PlantMode::Blended {
                    mix: mix.parse().map_err(|_| CliError::Usage(format!("bad mode `{}`", a.mode)))?,
                },
                None => named("mode", &a.mode)?,
            };
            let spec = SyntheticSpec {
                mode,
                sigma: a.sigma,
                dim: a.dim,
                samples_per_word: a.samples_per_word,
                layer: a.layer,
            };
            let records = synthetic_activations(&g_a, &g_b, &spec, a.seed)?;
            emit_jsonl(a.out.as_deref(), &with_schema(header("surrogate"), Schema::Activation), &records)
        }
        other => Err(CliError::Usage(format!("unknown --emit `{other}`: expected curves, logits or activations"))),
    }
}

fn score(graphs: &GraphArgs, walks: &Path, predictions: &Path, curve: &CurveArgs, out: Option<&Path>) -> Result<(), CliError> {
    let (a, b) = graphs.build()?;
    let walks: Vec<WalkRecord> = read_jsonl(walks)?;
    let mut by_walk: BTreeMap<u64, Vec<PredictionRecord>> = BTreeMap::new();
    for p in read_jsonl::<PredictionRecord>(predictions)? {
        by_walk.entry(p.walk_id).or_default().push(p);
    }
    let known: BTreeSet<u64> = walks.iter().map(|w| w.walk_id).collect();
    if let Some(id) = by_walk.keys().find(|id| !known.contains(id)) {
        return Err(CliError::Data(format!("predictions refer to walk {id}, which is not in the walk file")));
    }
    let mut scores = Vec::new();
    let mut unknown = 0;
    for w in &walks {
        let preds = by_walk.get(&w.walk_id).map(Vec::as_slice).unwrap_or(&[]);
        for (s, u) in score_predictions(w, preds, &[&a, &b], curve.include_boundaries)? {
            unknown += u;
            scores.push(s);
        }
    }
    if unknown > 0 {
        eprintln!("{unknown} scored predictions were outside the hypothesis vocabulary");
    }
    write_curves(&scores, curve, "score", out)
}

fn read_curves(paths: &[PathBuf]) -> Result<Vec<AccuracyCurve>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_jsonl::<AccuracyCurve>(p)?);
    }
    Ok(out)
}

fn fit_cmd(a: &FitArgs) -> Result<(), CliError> {
    let (g_a, g_b) = a.graphs.build()?;
    let variant: Variant = named("variant", &a.variant)?;
    let mut config = match a.preset.as_str() {
        "joint" => FitConfig::joint(a.seed),
        "baseline" => FitConfig::baseline(a.seed),
        other => return Err(CliError::Usage(format!("unknown preset `{other}`: expected joint or baseline"))),
    };
    if let Some(r) = a.restarts {
        config.restarts = r;
    }
    let p0: BTreeMap<String, f64> = match (&a.p0, &a.scores) {
        (Some(s), _) => s
            .split(',')
            .map(|kv| {
                let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("bad --p0 entry `{kv}`")))?;
                let v: f64 = v.trim().parse().map_err(|_| CliError::Usage(format!("bad --p0 value `{v}`")))?;
                Ok((k.trim().to_owned(), v))
            })
            .collect::<Result<_, CliError>>()?,
        (None, Some(path)) => {
            let scores: Vec<WalkScores> = read_jsonl(path)?;
            [g_a.name(), g_b.name()]
                .into_iter()
                .map(|h| Ok((h.to_owned(), pooled_p0(&scores, h, a.p0_max_context)?.p0)))
                .collect::<Result<_, CliError>>()?
        }
        (None, None) => return Err(CliError::Usage("fit needs --p0 or --scores".into())),
    };
    let spec = |g: &GraphHypothesis, share: RhoShare| -> Result<HypothesisSpec, CliError> {
        Ok(HypothesisSpec {
            name: g.name().to_owned(),
            complexity_bits: g.mdl_complexity() as f64,
            share,
            p0: *p0
                .get(g.name())
                .ok_or_else(|| CliError::Usage(format!("no p0 for `{}`", g.name())))?,
        })
    };
    let specs = [spec(&g_a, RhoShare::Complement)?, spec(&g_b, RhoShare::Rho)?];
    let train = read_curves(&a.curves)?;
    let val = a.val.as_ref().map(|p| read_curves(std::slice::from_ref(p))).transpose()?;
    let test = a.test.as_ref().map(|p| read_curves(std::slice::from_ref(p))).transpose()?;
    let result = fit(&train, &specs, variant, &config)?.with_holdout(val.as_deref(), test.as_deref())?;
    for p in result.saturated_parameters() {
        eprintln!("warning: `{p}` sits on a search bound");
    }
    let mut h = header("fit");
    h["fit_config"] = serde_json::to_value(config)?;
    emit_document(a.out.as_deref(), &h, &result)
}

fn geometry_inputs(a: &GeometryArgs) -> Result<(GraphHypothesis, GraphHypothesis, Vec<ActivationRecord>, Vec<usize>), CliError> {
    let (g_a, g_b) = a.graphs.build()?;
    let records: Vec<ActivationRecord> = read_jsonl(&a.activations)?;
    let records: Vec<ActivationRecord> = records.into_iter().filter(|r| r.layer == a.layer).collect();
    if records.is_empty() {
        return Err(CliError::Data(format!("no activations at layer {}", a.layer)));
    }
    let ts = match &a.context_len {
        Some(s) => list("context length", s)?,
        None => records.iter().map(|r| r.context_len).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    Ok((g_a, g_b, records, ts))
}

fn energy(a: &GeometryArgs) -> Result<(), CliError> {
    let (g_a, g_b, records, ts) = geometry_inputs(a)?;
    let mut rows = Vec::new();
    for (ti, &t) in ts.iter().enumerate() {
        for (gi, g) in [&g_a, &g_b].into_iter().enumerate() {
            let seed = derive_seed(a.seed, (2 * ti + gi) as u64);
            rows.push(graph_geometry(&records, g, t, a.window, a.permutations, seed)?.0);
        }
    }
    emit_document(a.out.as_deref(), &header("energy"), &rows)
}

fn pca(a: &GeometryArgs) -> Result<(), CliError> {
    let (g_a, g_b, records, ts) = geometry_inputs(a)?;
    let prefix = a.out.clone().unwrap_or_else(|| PathBuf::from("pca"));
    let h = header("pca");
    let desc = to_json_line(&h)?;
    let mut summary = Vec::new();
    for (ti, &t) in ts.iter().enumerate() {
        let mut subspaces = Vec::new();
        let mut explained = BTreeMap::new();
        for (gi, g) in [&g_a, &g_b].into_iter().enumerate() {
            let seed = derive_seed(a.seed, (2 * ti + gi) as u64);
            let (geometry, mut plot, subspace) = graph_geometry(&records, g, t, a.window, a.permutations, seed)?;
            plot.description = desc.clone();
            let stem = format!("{}_{}_T{t}", prefix.display(), g.name());
            graphbelief::io::write_text(format!("{stem}.svg"), &plot.to_svg())?;
            graphbelief::io::write_text(format!("{stem}.csv"), &plot.to_csv())?;
            explained.insert(g.name().to_owned(), geometry.explained_ratio);
            subspaces.push(subspace);
        }
        let angles: Vec<f64> = principal_angles(&subspaces[0], &subspaces[1])?
            .into_iter()
            .map(f64::to_degrees)
            .collect();
        summary.push(json!({ "context_len": t, "explained_ratio": explained, "principal_angles_deg": angles }));
    }
    let json_path = PathBuf::from(format!("{}.json", prefix.display()));
    emit_document(Some(&json_path), &h, &summary)
}

fn effects(a: &EffectArgs, steer: bool) -> Result<(), CliError> {
    let (g_clean, g_corrupt) = a.graphs.build()?;
    let mut logits: Vec<LogitRecord> = Vec::new();
    for p in &a.logits {
        logits.extend(read_jsonl::<LogitRecord>(p)?);
    }
    let pairs: BTreeMap<String, PromptPair> = match &a.pairs {
        Some(p) => read_jsonl::<PromptPair>(p)?.into_iter().map(|p| (p.pair_id.clone(), p)).collect(),
        None => BTreeMap::new(),
    };
    let inputs = EffectInputs {
        g_clean: &g_clean,
        g_corrupt: &g_corrupt,
        pairs: &pairs,
        floor: a.floor,
    };
    let (name, records) = if steer {
        ("steer-effects", steer_effects(&logits, &inputs)?)
    } else {
        ("patch-effects", patch_effects(&logits, &inputs)?)
    };
    emit_jsonl(a.out.as_deref(), &with_schema(header(name), Schema::Intervention), &records)
}
