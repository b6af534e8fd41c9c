//! On-disk formats: the line-delimited dataset, run artifacts and the
//! importer for WikiEval-style exports.
//!
//! Dataset files start with a header line followed by one record per line:
//!
//! ```text
//! {"format":"faaf-dataset","schema_version":1,"source":"...","version":"..."}
//! {"id":"q0","question":"...","answers":{"ground_truth":"...","ungrounded":"...","poor":"..."},
//!  "facts":[{"index":0,"text":"..."}],"annotations":[{"variant":"poor","fact":0,"label":"False"}]}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{AnswerVerification, EvaluationRun, RUN_SCHEMA_VERSION};
use crate::model::{AnswerKind, FactStatement, Label, QARecord};

pub const DATASET_FORMAT: &str = "faaf-dataset";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: byte {offset}: {message}")]
    ParseAt { path: PathBuf, offset: usize, message: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("unsupported schema version {found} (this build reads {supported})")]
    SchemaVersionMismatch { found: u32, supported: u32 },
    #[error("{variant} has no annotations for record {id}")]
    MissingAnnotations { variant: AnswerKind, id: String },
    #[error("checksum mismatch: expected {expected}, got {actual}")]
    Checksum { expected: String, actual: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    format: String,
    schema_version: u32,
    #[serde(flatten)]
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub variant: AnswerKind,
    pub fact: usize,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    question: String,
    answers: BTreeMap<AnswerKind, String>,
    #[serde(default)]
    facts: Vec<FactStatement>,
    #[serde(default)]
    annotations: Vec<Annotation>,
}

impl RecordLine {
    fn into_record(self) -> Result<QARecord, String> {
        let mut gold_labels = BTreeMap::new();
        for a in self.annotations {
            if gold_labels.insert((a.variant, a.fact), a.label).is_some() {
                return Err(format!("duplicate annotation for {} fact {}", a.variant, a.fact));
            }
        }
        Ok(QARecord {
            id: self.id,
            question: self.question,
            answers: self.answers,
            facts: self.facts,
            gold_labels,
        })
    }

    fn from_record(r: &QARecord) -> Self {
        Self {
            id: r.id.clone(),
            question: r.question.clone(),
            answers: r.answers.clone(),
            facts: r.facts.clone(),
            annotations: r
                .gold_labels
                .iter()
                .map(|(&(variant, fact), &label)| Annotation { variant, fact, label })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetCounts {
    pub pairs: usize,
    pub facts: usize,
    pub annotations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetFile {
    pub provenance: Provenance,
    pub records: Vec<QARecord>,
}

impl DatasetFile {
    pub fn counts(&self) -> DatasetCounts {
        DatasetCounts {
            pairs: self.records.len(),
            facts: self.records.iter().map(|r| r.facts.len()).sum(),
            annotations: self.records.iter().map(|r| r.gold_labels.len()).sum(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&QARecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut ids = BTreeSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(DatasetError::Validation(format!("duplicate qa id `{}`", r.id)));
            }
            for kind in AnswerKind::ALL {
                if r.answer(kind).is_none() {
                    return Err(DatasetError::Validation(format!("record `{}` is missing the {kind} answer", r.id)));
                }
            }
            r.validate().map_err(|e| DatasetError::Validation(e.to_string()))?;
        }
        Ok(())
    }
}

pub fn load_dataset(path: &Path) -> Result<DatasetFile, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let parse = |line: usize, message: String| DatasetError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut header: Option<Header> = None;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        match &header {
            None => {
                let h: Header = serde_json::from_str(&line).map_err(|e| parse(lineno, format!("header: {e}")))?;
                if h.format != DATASET_FORMAT {
                    return Err(parse(lineno, format!("not a dataset file (format `{}`)", h.format)));
                }
                if h.schema_version != DATASET_SCHEMA_VERSION {
                    return Err(DatasetError::SchemaVersionMismatch {
                        found: h.schema_version,
                        supported: DATASET_SCHEMA_VERSION,
                    });
                }
                header = Some(h);
            }
            Some(_) => {
                let rec: RecordLine = serde_json::from_str(&line).map_err(|e| parse(lineno, e.to_string()))?;
                records.push(rec.into_record().map_err(|m| parse(lineno, m))?);
            }
        }
    }
    let header = header.ok_or_else(|| parse(1, "empty file".into()))?;
    let dataset = DatasetFile {
        provenance: header.provenance,
        records,
    };
    dataset.validate()?;
    let c = dataset.counts();
    log::info!(
        "loaded {}: {} pairs, {} facts, {} annotations",
        path.display(),
        c.pairs,
        c.facts,
        c.annotations
    );
    Ok(dataset)
}

/// Writes `dataset` to `path` atomically (temp file then rename).
pub fn save_dataset(dataset: &DatasetFile, path: &Path) -> Result<(), DatasetError> {
    dataset.validate()?;
    let mut buf = Vec::new();
    let header = Header {
        format: DATASET_FORMAT.into(),
        schema_version: DATASET_SCHEMA_VERSION,
        provenance: dataset.provenance.clone(),
    };
    serde_json::to_writer(&mut buf, &header).expect("header serializes");
    buf.push(b'\n');
    for r in &dataset.records {
        serde_json::to_writer(&mut buf, &RecordLine::from_record(r)).expect("record serializes");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Share of facts labelled True for `variant`, as a percentage.
pub fn human_accuracy(dataset: &DatasetFile, variant: AnswerKind) -> Result<f64, DatasetError> {
    let (mut truthy, mut total) = (0usize, 0usize);
    for r in &dataset.records {
        if r.facts.is_empty() {
            continue;
        }
        if !r.is_annotated(variant) {
            return Err(DatasetError::MissingAnnotations {
                variant,
                id: r.id.clone(),
            });
        }
        let gold = r.gold(variant);
        total += gold.len();
        truthy += gold.values().filter(|&&l| l == Label::True).count();
    }
    if total == 0 {
        return Err(DatasetError::MissingAnnotations {
            variant,
            id: "<all>".into(),
        });
    }
    Ok(100.0 * truthy as f64 / total as f64)
}

pub fn save_run(run: &EvaluationRun, path: &Path) -> Result<(), DatasetError> {
    let bytes = serde_json::to_vec_pretty(run).expect("run serializes");
    write_atomic(path, &bytes)
}

fn byte_offset(src: &str, line: usize, column: usize) -> usize {
    let start: usize = src.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (start + column).min(src.len())
}

pub fn load_run(path: &Path) -> Result<EvaluationRun, DatasetError> {
    let src = fs::read_to_string(path).map_err(io_err(path))?;
    let at = |e: serde_json::Error| DatasetError::ParseAt {
        path: path.to_path_buf(),
        offset: byte_offset(&src, e.line(), e.column()),
        message: e.to_string(),
    };
    let value: Value = serde_json::from_str(&src).map_err(at)?;
    let found = value
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| DatasetError::ParseAt {
            path: path.to_path_buf(),
            offset: 0,
            message: "missing schema_version".into(),
        })? as u32;
    if found != RUN_SCHEMA_VERSION {
        return Err(DatasetError::SchemaVersionMismatch {
            found,
            supported: RUN_SCHEMA_VERSION,
        });
    }
    serde_json::from_str(&src).map_err(at)
}

/// Append-only log of verifications written while a sweep is running, so an
/// interrupted run leaves its completed work on disk.
pub struct RunJournal {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunJournal {
    pub fn create(path: &Path) -> Result<Self, DatasetError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, v: &AnswerVerification) -> Result<(), DatasetError> {
        serde_json::to_writer(&mut self.out, v).expect("verification serializes");
        self.out.write_all(b"\n").map_err(io_err(&self.path))?;
        self.out.flush().map_err(io_err(&self.path))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes the final artifact and removes the journal.
    pub fn finalize(self, run: &EvaluationRun, path: &Path) -> Result<(), DatasetError> {
        save_run(run, path)?;
        drop(self.out);
        fs::remove_file(&self.path).map_err(io_err(&self.path))
    }
}

pub fn read_journal(path: &Path) -> Result<Vec<AnswerVerification>, DatasetError> {
    let src = fs::read_to_string(path).map_err(io_err(path))?;
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DatasetError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Row of an upstream WikiEval-style export. Fact lists and labels are
/// optional; without them the imported records await fact generation.
#[derive(Debug, Clone, Deserialize)]
struct UpstreamRow {
    question: String,
    answer: String,
    ungrounded_answer: String,
    poor_answer: String,
    #[serde(default)]
    facts: Vec<String>,
    #[serde(default)]
    annotations: BTreeMap<AnswerKind, Vec<Label>>,
}

/// Converts a JSON array or JSON-lines export into the canonical dataset.
pub fn import_wikieval(
    path: &Path,
    expected_sha256: Option<&str>,
    provenance: Provenance,
) -> Result<DatasetFile, DatasetError> {
    if let Some(expected) = expected_sha256 {
        let actual = sha256_file(path)?;
        if !actual.eq_ignore_ascii_case(expected) {
            return Err(DatasetError::Checksum {
                expected: expected.to_string(),
                actual,
            });
        }
    }
    let src = fs::read_to_string(path).map_err(io_err(path))?;
    let rows: Vec<(usize, UpstreamRow)> = if src.trim_start().starts_with('[') {
        let rows: Vec<UpstreamRow> = serde_json::from_str(&src).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        rows.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect()
    } else {
        src.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map(|r| (i + 1, r)).map_err(|e| DatasetError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?
    };

    let mut records = Vec::with_capacity(rows.len());
    for (n, (line, row)) in rows.into_iter().enumerate() {
        let facts = crate::model::index_facts(row.facts).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let mut gold_labels = BTreeMap::new();
        for (variant, labels) in row.annotations {
            if labels.len() != facts.len() {
                return Err(DatasetError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("{} {variant} labels for {} facts", labels.len(), facts.len()),
                });
            }
            for (i, label) in labels.into_iter().enumerate() {
                gold_labels.insert((variant, i), label);
            }
        }
        records.push(QARecord {
            id: format!("wikieval-{n:03}"),
            question: row.question,
            answers: BTreeMap::from([
                (AnswerKind::GroundTruth, row.answer),
                (AnswerKind::Ungrounded, row.ungrounded_answer),
                (AnswerKind::Poor, row.poor_answer),
            ]),
            facts,
            gold_labels,
        });
    }
    let dataset = DatasetFile { provenance, records };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::index_facts;

    fn record(id: &str) -> QARecord {
        let facts = index_facts(["A is B.", "C is D."]).unwrap();
        let answers = AnswerKind::ALL.into_iter().map(|k| (k, format!("{id} {k} text."))).collect();
        let mut gold_labels = BTreeMap::new();
        for k in AnswerKind::ALL {
            for f in &facts {
                let label = if k == AnswerKind::GroundTruth || f.index == 0 { Label::True } else { Label::False };
                gold_labels.insert((k, f.index), label);
            }
        }
        QARecord {
            id: id.into(),
            question: "Why?".into(),
            answers,
            facts,
            gold_labels,
        }
    }

    fn dataset(ids: &[&str]) -> DatasetFile {
        DatasetFile {
            provenance: Provenance {
                source: "unit".into(),
                version: "1".into(),
                note: None,
            },
            records: ids.iter().map(|id| record(id)).collect(),
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let ds = dataset(&["a", "b"]);
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
        assert_eq!(
            ds.counts(),
            DatasetCounts {
                pairs: 2,
                facts: 4,
                annotations: 12
            }
        );
    }

    #[test]
    fn duplicate_ids_and_missing_variants() {
        assert!(matches!(dataset(&["a", "a"]).validate(), Err(DatasetError::Validation(_))));
        let mut ds = dataset(&["a", "b"]);
        ds.records[1].answers.remove(&AnswerKind::Poor);
        ds.records[1].gold_labels.retain(|&(k, _), _| k != AnswerKind::Poor);
        match ds.validate() {
            Err(DatasetError::Validation(m)) => assert!(m.contains("`b`") && m.contains("poor"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&dataset(&["a"]), &path).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{\"id\": \n");
        fs::write(&path, text).unwrap();
        match load_dataset(&path) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn accuracy_per_variant() {
        let ds = dataset(&["a", "b"]);
        assert_eq!(human_accuracy(&ds, AnswerKind::GroundTruth).unwrap(), 100.0);
        assert_eq!(human_accuracy(&ds, AnswerKind::Poor).unwrap(), 50.0);
        let mut partial = ds.clone();
        partial.records[0].gold_labels.retain(|&(k, _), _| k != AnswerKind::Ungrounded);
        assert!(matches!(
            human_accuracy(&partial, AnswerKind::Ungrounded),
            Err(DatasetError::MissingAnnotations { .. })
        ));
    }

    #[test]
    fn byte_offsets() {
        assert_eq!(byte_offset("ab\ncd", 2, 1), 4);
        assert_eq!(byte_offset("ab", 1, 2), 2);
    }

    #[test]
    fn import_accepts_array_and_lines() {
        let dir = tempfile::tempdir().unwrap();
        let row = r#"{"question":"Q?","answer":"A.","ungrounded_answer":"U.","poor_answer":"P.","facts":["F."],"annotations":{"poor":["False"],"ground_truth":["True"]}}"#;
        let lines = dir.path().join("rows.jsonl");
        fs::write(&lines, format!("{row}\n{row}\n")).unwrap();
        let array = dir.path().join("rows.json");
        fs::write(&array, format!("[{row},{row}]")).unwrap();
        let prov = Provenance {
            source: "x".into(),
            version: "1".into(),
            note: None,
        };
        let a = import_wikieval(&lines, None, prov.clone()).unwrap();
        let b = import_wikieval(&array, None, prov.clone()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records[1].id, "wikieval-001");
        assert!(a.records[0].is_annotated(AnswerKind::Poor));
        assert!(!a.records[0].is_annotated(AnswerKind::Ungrounded));

        let sum = sha256_file(&lines).unwrap();
        import_wikieval(&lines, Some(&sum.to_uppercase()), prov.clone()).unwrap();
        assert!(matches!(
            import_wikieval(&lines, Some("00"), prov),
            Err(DatasetError::Checksum { .. })
        ));
    }
}
