// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flag value parsers and shared output helpers.

use std::io::Write;
use std::path::{Path, PathBuf};

use graphbelief::config::{GraphSpec, RunConfig};
use graphbelief::graph::{GraphHypothesis, VocabMode};
use graphbelief::io::{to_json_line, to_json_pretty, write_document, write_jsonl, DATA_KEY, HEADER_KEY};
use graphbelief::surrogate::curves::log_grid;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::CliError;

/// Parse a snake_case enum value through its serde name; `-` counts as `_`.
pub fn named<T: DeserializeOwned>(what: &str, s: &str) -> Result<T, CliError> {
    serde_json::from_value(Value::String(s.trim().replace('-', "_")))
        .map_err(|_| CliError::Usage(format!("unknown {what} `{s}`")))
}

/// `grid:RxC`, `ring:N`, either with an optional `name=` prefix, or a graph file path.
pub fn graph_spec(s: &str) -> Result<GraphSpec, CliError> {
    let (name, body) = match s.split_once('=') {
        Some((n, b)) if !n.contains(['/', '.']) => (Some(n.to_owned()), b),
        _ => (None, s),
    };
    let bad = || CliError::Usage(format!("bad graph `{s}`: expected grid:RxC, ring:N or a file path"));
    if let Some(dims) = body.strip_prefix("grid:") {
        let (r, c) = dims.split_once('x').ok_or_else(bad)?;
        return Ok(GraphSpec::Grid {
            name: name.unwrap_or_else(|| "grid".into()),
            rows: r.parse().map_err(|_| bad())?,
            cols: c.parse().map_err(|_| bad())?,
            words: None,
        });
    }
    if let Some(n) = body.strip_prefix("ring:") {
        return Ok(GraphSpec::Ring {
            name: name.unwrap_or_else(|| "ring".into()),
            n: n.parse().map_err(|_| bad())?,
            words: None,
        });
    }
    if name.is_some() {
        return Err(bad());
    }
    Ok(GraphSpec::File { path: PathBuf::from(s) })
}

/// Graph selection shared by every command that needs hypotheses.
#[derive(Debug, Clone, clap::Args)]
pub struct GraphArgs {
    /// Hypothesis, given twice: `grid:4x4`, `ring:16`, `name=ring:16` or a graph JSON file.
    /// The second one is drawn with probability rho. Defaults to grid:4x4 and ring:16.
    #[arg(long = "graph")]
    pub graphs: Vec<String>,
    /// Vocabulary condition: disjoint or overlap.
    #[arg(long, default_value = "disjoint")]
    pub vocab_mode: String,
    /// Take graphs and vocabulary mode from a run config instead.
    #[arg(long, conflicts_with_all = ["graphs"])]
    pub config: Option<PathBuf>,
}

impl GraphArgs {
    /// Build both hypotheses.
    pub fn build(&self) -> Result<(GraphHypothesis, GraphHypothesis), CliError> {
        if let Some(path) = &self.config {
            return Ok(RunConfig::load(path)?.build_graphs()?);
        }
        let mut c = RunConfig::new("cli", ".");
        if !self.graphs.is_empty() {
            if self.graphs.len() != 2 {
                return Err(CliError::Usage(format!("--graph must be given twice, got {}", self.graphs.len())));
            }
            c.graphs = self.graphs.iter().map(|s| graph_spec(s)).collect::<Result<_, _>>()?;
        }
        c.vocab_mode = named::<VocabMode>("vocab mode", &self.vocab_mode)?;
        Ok(c.build_graphs()?)
    }
}

/// Comma-separated list.
pub fn list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse().map_err(|_| CliError::Usage(format!("bad {what} `{p}`"))))
        .collect()
}

/// `log:LO:HI:COUNT` or a comma-separated list of context lengths.
pub fn n_grid(s: &str) -> Result<Vec<usize>, CliError> {
    if let Some(rest) = s.strip_prefix("log:") {
        let parts: Vec<usize> = list("log grid", &rest.replace(':', ","))?;
        if let [lo, hi, count] = parts[..] {
            if lo >= 1 && hi >= lo && count >= 1 {
                return Ok(log_grid(lo, hi, count));
            }
        }
        return Err(CliError::Usage(format!("bad grid `{s}`: expected log:LO:HI:COUNT")));
    }
    list("context length", s)
}

/// Header line echoing the invocation.
pub fn header(command: &str) -> Value {
    json!({ "command": command, "argv": std::env::args().collect::<Vec<_>>() })
}

/// Write JSON-Lines to `out`, or stdout when absent.
pub fn emit_jsonl<T: Serialize>(out: Option<&Path>, header: &Value, records: &[T]) -> Result<(), CliError> {
    match out {
        Some(p) => Ok(write_jsonl(p, Some(header), records)?),
        None => {
            let mut s = to_json_line(&wrap(&[(HEADER_KEY, header.clone())]))?;
            s.push('\n');
            for r in records {
                s.push_str(&to_json_line(r)?);
                s.push('\n');
            }
            print_out(&s)
        }
    }
}

/// Write a JSON document to `out`, or stdout when absent.
pub fn emit_document<T: Serialize + ?Sized>(out: Option<&Path>, header: &Value, value: &T) -> Result<(), CliError> {
    match out {
        Some(p) => Ok(write_document(p, header, value)?),
        None => {
            let doc = wrap(&[(HEADER_KEY, header.clone()), (DATA_KEY, serde_json::to_value(value)?)]);
            print_out(&(to_json_pretty(&doc)? + "\n"))
        }
    }
}

/// Write text to `out`, or stdout when absent.
pub fn emit_text(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => Ok(graphbelief::io::write_text(p, text)?),
        None => print_out(text),
    }
}

fn wrap(fields: &[(&str, Value)]) -> Value {
    Value::Object(fields.iter().map(|(k, v)| ((*k).to_owned(), v.clone())).collect())
}

fn print_out(s: &str) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(s.as_bytes())
        .and_then(|()| stdout.flush())
        .map_err(|e| CliError::Data(format!("stdout: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_specs_parse() {
        assert!(matches!(graph_spec("grid:3x5").unwrap(), GraphSpec::Grid { rows: 3, cols: 5, .. }));
        match graph_spec("big=ring:20").unwrap() {
            GraphSpec::Ring { name, n, .. } => assert_eq!((name.as_str(), n), ("big", 20)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(graph_spec("graphs/a.json").unwrap(), GraphSpec::File { .. }));
        assert!(graph_spec("grid:3").is_err());
        assert!(graph_spec("x=foo").is_err());
    }

    #[test]
    fn grids_and_lists_parse() {
        assert_eq!(n_grid("10,20,40").unwrap(), vec![10, 20, 40]);
        assert_eq!(n_grid("log:10:1000:3").unwrap(), vec![10, 100, 1000]);
        assert!(n_grid("log:10:5").is_err());
        assert_eq!(list::<f64>("rho", "0, 0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn enum_names_accept_dashes() {
        let v: VocabMode = named("vocab mode", "overlap").unwrap();
        assert_eq!(v, VocabMode::Overlap);
        let m: graphbelief::intervention::Metric = named("metric", "seen-contrast").unwrap();
        assert_eq!(m, graphbelief::intervention::Metric::SeenContrast);
        assert!(named::<VocabMode>("vocab mode", "mixed").is_err());
    }
}
