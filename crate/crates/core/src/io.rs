// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON-Lines and JSON document I/O, schema validation and content hashes.
//!
//! Every float is written with 17 significant digits (`{:.16e}`), so values
//! round-trip exactly and output bytes depend only on the values.
//! A JSON-Lines file may open with one header line `{"header": {...}}`;
//! readers skip it and validation does not count it.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::belief::AccuracyCurve;
use crate::error::{Error, Result};
use crate::intervention::{InterventionRecord, LogitRecord};
use crate::repr::ActivationRecord;
use crate::walk::WalkRecord;

/// Key of the optional first line of a JSON-Lines file.
pub const HEADER_KEY: &str = "header";

struct Digits17<F>(F);

impl<F: Formatter> Formatter for Digits17<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// One-line JSON with 17-digit floats.
pub fn to_json_line<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(CompactFormatter));
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Indented JSON with 17-digit floats and a trailing newline.
pub fn to_json_pretty<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// Write `records` one per line, preceded by `{"header": header}` when given.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, header: Option<&Value>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut emit = |line: String| -> Result<()> {
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    if let Some(h) = header {
        emit(to_json_line(&serde_json::json!({ HEADER_KEY: h }))?)?;
    }
    for r in records {
        emit(to_json_line(r)?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write one pretty-printed JSON document.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_text(path, &to_json_pretty(value)?)
}

/// Write a text file, creating parent directories.
pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Read one JSON document.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Key of the payload in a JSON document that carries a header.
pub const DATA_KEY: &str = "data";

/// Write `{"header": header, "data": value}`.
pub fn write_document<T: Serialize + ?Sized>(path: impl AsRef<Path>, header: &Value, value: &T) -> Result<()> {
    let data = serde_json::to_value(value)?;
    write_json(path, &serde_json::json!({ HEADER_KEY: header, DATA_KEY: data }))
}

/// Read a JSON document, unwrapping `{"header": ..., "data": ...}` when present.
pub fn read_document<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let mut value: Value = read_json(path)?;
    if let Some(o) = value.as_object_mut() {
        if o.len() == 2 && o.contains_key(HEADER_KEY) && o.contains_key(DATA_KEY) {
            value = o.remove(DATA_KEY).expect("checked");
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

fn is_header(line_no: usize, value: &Value) -> bool {
    line_no == 1 && value.as_object().is_some_and(|o| o.len() == 1 && o.contains_key(HEADER_KEY))
}

/// Read every record of a JSON-Lines file. Blank lines and a leading header
/// line are skipped; the first malformed line aborts with its line number.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |e: serde_json::Error| Error::Schema(format!("{}:{}: {e}", path.display(), i + 1));
        let value: Value = serde_json::from_str(&line).map_err(bad)?;
        if is_header(i + 1, &value) {
            continue;
        }
        out.push(serde_json::from_value(value).map_err(bad)?);
    }
    Ok(out)
}

/// Header line of a JSON-Lines file, if present.
pub fn read_header(path: impl AsRef<Path>) -> Result<Option<Value>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let Some(first) = BufReader::new(f).lines().next() else {
        return Ok(None);
    };
    let first = first.map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str::<Value>(&first)
        .ok()
        .filter(|v| is_header(1, v))
        .and_then(|mut v| v.get_mut(HEADER_KEY).map(Value::take)))
}

/// Lower-case hex SHA-256 of a file's bytes.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Lower-case hex SHA-256 of a string.
pub fn sha256_str(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Record types with a line schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    /// [`WalkRecord`].
    Walk,
    /// [`AccuracyCurve`].
    AccuracyCurve,
    /// [`ActivationRecord`].
    Activation,
    /// [`LogitRecord`].
    Logit,
    /// [`InterventionRecord`].
    Intervention,
}

impl Schema {
    /// All schemas.
    pub const ALL: [Schema; 5] = [
        Schema::Walk,
        Schema::AccuracyCurve,
        Schema::Activation,
        Schema::Logit,
        Schema::Intervention,
    ];

    /// Canonical name.
    pub fn name(self) -> &'static str {
        match self {
            Schema::Walk => "walk",
            Schema::AccuracyCurve => "accuracy_curve",
            Schema::Activation => "activation",
            Schema::Logit => "logit",
            Schema::Intervention => "intervention",
        }
    }

    /// Parse and check one line; returns the record's duplicate key.
    fn check(self, value: Value) -> std::result::Result<String, String> {
        fn typed<T: DeserializeOwned + Serialize>(value: Value) -> std::result::Result<T, String> {
            let record: T = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
            let back = serde_json::to_value(&record).map_err(|e| e.to_string())?;
            if let (Some(orig), Some(back)) = (value.as_object(), back.as_object()) {
                if let Some(k) = orig.keys().find(|k| !back.contains_key(*k) && !orig[*k].is_null()) {
                    return Err(format!("unknown field `{k}`"));
                }
            }
            Ok(record)
        }
        let bits = |x: f64| (x + 0.0).to_bits();
        match self {
            Schema::Walk => {
                let r: WalkRecord = typed(value)?;
                r.validate().map_err(|e| e.to_string())?;
                Ok(r.walk_id.to_string())
            }
            Schema::AccuracyCurve => {
                let r: AccuracyCurve = typed(value)?;
                r.validate().map_err(|e| e.to_string())?;
                Ok(format!("{}|{}", r.hypothesis, bits(r.rho)))
            }
            Schema::Activation => {
                let r: ActivationRecord = typed(value)?;
                r.validate().map_err(|e| e.to_string())?;
                Ok(format!("{}|{}|{}|{}", r.walk_id, r.position, r.layer, r.context_len))
            }
            Schema::Logit => {
                let r: LogitRecord = typed(value)?;
                r.validate().map_err(|e| e.to_string())?;
                Ok(format!(
                    "{}|{:?}|{:?}|{:?}|{:?}|{:?}",
                    r.pair_id,
                    r.condition,
                    r.layer,
                    r.alpha.map(bits),
                    r.control,
                    r.direction
                ))
            }
            Schema::Intervention => {
                let r: InterventionRecord = typed(value)?;
                r.validate().map_err(|e| e.to_string())?;
                Ok(format!("{:?}", r.key()))
            }
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Schema {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "walk" | "walks" | "walk_record" => Ok(Schema::Walk),
            "accuracy_curve" | "curve" | "curves" => Ok(Schema::AccuracyCurve),
            "activation" | "activations" | "activation_record" => Ok(Schema::Activation),
            "logit" | "logits" | "logit_record" => Ok(Schema::Logit),
            "intervention" | "interventions" | "intervention_record" => Ok(Schema::Intervention),
            other => Err(Error::InvalidArgument(format!(
                "unknown schema `{other}` (expected walk, accuracy_curve, activation, logit or intervention)"
            ))),
        }
    }
}

/// A rejected line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    /// One-based line number.
    pub line: usize,
    /// Why it was rejected.
    pub message: String,
}

/// Outcome of [`validate_file`].
///
/// `valid` counts every line that passes the schema, duplicates included;
/// `duplicates` counts valid lines whose key already appeared earlier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Schema checked against.
    pub schema: Schema,
    /// Records checked (blank and header lines excluded).
    pub records: usize,
    /// Lines passing the schema.
    pub valid: usize,
    /// Lines failing it.
    pub invalid: usize,
    /// Valid lines repeating an earlier key.
    pub duplicates: usize,
    /// A header line was present.
    pub header: bool,
    /// Rejected lines in file order.
    pub errors: Vec<LineError>,
}

impl ValidationReport {
    /// No invalid lines.
    pub fn is_clean(&self) -> bool {
        self.invalid == 0
    }
}

/// Check every line of `path` against `schema`.
pub fn validate_file(path: impl AsRef<Path>, schema: Schema) -> Result<ValidationReport> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    validate_reader(BufReader::new(f), schema).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// [`validate_file`] over any buffered reader.
pub fn validate_reader(reader: impl BufRead, schema: Schema) -> Result<ValidationReport> {
    let mut report = ValidationReport {
        schema,
        records: 0,
        valid: 0,
        invalid: 0,
        duplicates: 0,
        header: false,
        errors: Vec::new(),
    };
    let mut keys = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let checked = serde_json::from_str::<Value>(&line)
            .map_err(|e| e.to_string())
            .and_then(|v| {
                if is_header(i + 1, &v) {
                    Ok(None)
                } else {
                    schema.check(v).map(Some)
                }
            });
        match checked {
            Ok(None) => report.header = true,
            Ok(Some(key)) => {
                report.records += 1;
                report.valid += 1;
                report.duplicates += usize::from(!keys.insert(key));
            }
            Err(message) => {
                report.records += 1;
                report.invalid += 1;
                report.errors.push(LineError { line: i + 1, message });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervention::{Control, Direction};

    fn rec(id: &str, alpha: f64) -> InterventionRecord {
        InterventionRecord {
            pair_id: id.into(),
            layer: 26,
            alpha,
            control: Control::Real,
            direction: Direction::TargetToSource,
            delta_clean: 1.0,
            delta_corrupt: -1.0,
            delta_intervened: 0.1,
            normalized_effect: Some(0.55),
            usable: true,
            seen_contrast: None,
            heldout_contrast: None,
        }
    }

    fn report(text: &str, schema: Schema) -> ValidationReport {
        validate_reader(text.as_bytes(), schema).unwrap()
    }

    #[test]
    fn floats_have_seventeen_digits_and_round_trip() {
        for x in [0.1f64, 1.0 / 3.0, -2.5e-300, 6.02e23, 0.0] {
            let s = to_json_line(&x).unwrap();
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17, "{s}");
            assert_eq!(serde_json::from_str::<f64>(&s).unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn empty_input_is_clean() {
        let r = report("", Schema::Walk);
        assert_eq!((r.valid, r.invalid, r.duplicates), (0, 0, 0));
    }

    #[test]
    fn malformed_line_is_reported_with_its_number() {
        let mut lines: Vec<String> = (0..100).map(|i| to_json_line(&rec(&format!("p{i}"), 1.0)).unwrap()).collect();
        lines[41] = "{\"pair_id\": ".into();
        let r = report(&lines.join("\n"), Schema::Intervention);
        assert_eq!((r.valid, r.invalid), (99, 1));
        assert_eq!(r.errors[0].line, 42);
    }

    #[test]
    fn appended_copy_counts_as_duplicates() {
        let base: Vec<String> = (0..7).map(|i| to_json_line(&rec(&format!("p{i}"), 5.0)).unwrap()).collect();
        let text = [base.clone(), base[..3].to_vec()].concat().join("\n");
        let r = report(&text, Schema::Intervention);
        assert_eq!((r.valid, r.invalid, r.duplicates), (10, 0, 3));
    }

    #[test]
    fn unknown_fields_and_invariants_are_rejected() {
        let mut v = serde_json::to_value(rec("p", 1.0)).unwrap();
        v["surprise"] = 1.into();
        let r = report(&v.to_string(), Schema::Intervention);
        assert_eq!(r.invalid, 1);
        assert!(r.errors[0].message.contains("surprise"));

        let mut bad = rec("p", 1.0);
        bad.usable = false;
        let r = report(&to_json_line(&bad).unwrap(), Schema::Intervention);
        assert_eq!(r.invalid, 1);
    }

    #[test]
    fn header_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let h = serde_json::json!({"experiment": "t"});
        write_jsonl(&path, Some(&h), &[rec("a", 1.0), rec("b", 1.0)]).unwrap();
        let back: Vec<InterventionRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back, vec![rec("a", 1.0), rec("b", 1.0)]);
        assert_eq!(read_header(&path).unwrap(), Some(h));
        let r = validate_file(&path, Schema::Intervention).unwrap();
        assert!(r.header && r.valid == 2 && r.records == 2);
    }

    #[test]
    fn documents_unwrap_with_or_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        write_document(&a, &serde_json::json!({"x": 1}), &rec("p", 2.0)).unwrap();
        write_json(&b, &rec("p", 2.0)).unwrap();
        assert_eq!(read_document::<InterventionRecord>(&a).unwrap(), rec("p", 2.0));
        assert_eq!(read_document::<InterventionRecord>(&b).unwrap(), rec("p", 2.0));
    }

    #[test]
    fn read_error_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        write_text(&path, "{\"a\":1}\n\nnot json\n").unwrap();
        let e = read_jsonl::<Value>(&path).unwrap_err().to_string();
        assert!(e.contains(":3:"), "{e}");
    }
}
