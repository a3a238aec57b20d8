//! Labeled, gender-annotated text datasets.
//!
//! A [`Dataset`] is immutable once built: every transform in this crate
//! returns a new value and leaves its input alone.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::perturb::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl Gender {
    /// The two genders that enter gap metrics, in table order.
    pub const BINARY: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn is_known(self) -> bool {
        !matches!(self, Gender::Unknown)
    }

    pub fn opposite(self) -> Option<Gender> {
        match self {
            Gender::Female => Some(Gender::Male),
            Gender::Male => Some(Gender::Female),
            Gender::Unknown => None,
        }
    }

    /// Row index in joint-count tables (`Female` = 0, `Male` = 1).
    pub fn index(self) -> Option<usize> {
        match self {
            Gender::Female => Some(0),
            Gender::Male => Some(1),
            Gender::Unknown => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Gender::Female),
            "male" | "m" => Ok(Gender::Male),
            "unknown" | "" => Ok(Gender::Unknown),
            other => Err(Error::Invalid(format!("unknown gender '{other}'"))),
        }
    }
}

/// One labeled text with its gender annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub label: usize,
    pub gender: Gender,
    /// Annotator agreement on the gender tag, in `[0, 1]`.
    pub gender_confidence: f64,
    /// Sample weight used by training; always positive.
    pub weight: f64,
    pub is_counterfactual: bool,
    /// For counterfactuals and resampling duplicates: the document this one derives from.
    pub source_id: Option<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: usize, gender: Gender) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            label,
            gender,
            gender_confidence: 1.0,
            weight: 1.0,
            is_counterfactual: false,
            source_id: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(Error::Invalid(format!(
                "document {}: weight must be positive and finite, got {}",
                self.id, self.weight
            )));
        }
        if !(0.0..=1.0).contains(&self.gender_confidence) {
            return Err(Error::Invalid(format!(
                "document {}: gender_confidence {} outside [0, 1]",
                self.id, self.gender_confidence
            )));
        }
        if self.is_counterfactual && self.source_id.is_none() {
            return Err(Error::Invalid(format!(
                "document {}: counterfactual without source_id",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    documents: Vec<Document>,
    class_names: Vec<String>,
    provenance: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(documents: Vec<Document>, class_names: Vec<String>) -> Result<Self> {
        Self::with_provenance(documents, class_names, BTreeMap::new())
    }

    pub fn with_provenance(
        documents: Vec<Document>,
        class_names: Vec<String>,
        provenance: BTreeMap<String, String>,
    ) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::Invalid("dataset needs at least one class".into()));
        }
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if doc.label >= class_names.len() {
                return Err(Error::Invalid(format!(
                    "document {}: label {} out of range for {} classes",
                    doc.id,
                    doc.label,
                    class_names.len()
                )));
            }
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate document id '{}'", doc.id)));
            }
            doc.validate()?;
        }
        Ok(Dataset {
            documents,
            class_names,
            provenance,
        })
    }

    /// A new dataset over `documents` sharing this one's classes and provenance.
    pub fn derive(&self, documents: Vec<Document>) -> Result<Dataset> {
        Dataset::with_provenance(documents, self.class_names.clone(), self.provenance.clone())
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn provenance(&self) -> &BTreeMap<String, String> {
        &self.provenance
    }

    pub fn with_note(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.provenance.insert(key.into(), value.into());
        self
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// Documents tagged Female or Male, in order.
    pub fn gendered(&self) -> impl Iterator<Item = &Document> {
        self.documents.iter().filter(|d| d.gender.is_known())
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.documents
    }
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct InputRecord {
    #[serde(default)]
    id: Option<Value>,
    text: String,
    label: Value,
    #[serde(default)]
    gender: Option<String>,
    #[serde(default)]
    gender_confidence: Option<f64>,
    #[serde(default)]
    weight: Option<f64>,
    #[serde(default)]
    is_counterfactual: Option<bool>,
    #[serde(default)]
    source_id: Option<String>,
}

#[derive(Debug, Serialize)]
struct OutputRecord<'a> {
    id: &'a str,
    text: &'a str,
    label: &'a str,
    gender: Option<Gender>,
    gender_confidence: f64,
    weight: f64,
    is_counterfactual: bool,
    source_id: Option<&'a str>,
}

enum RawLabel {
    Name(String),
    Index(usize),
}

fn read_lines<R: Read>(reader: R) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, chunk) in BufReader::new(reader).split(b'\n').enumerate() {
        let line_no = i + 1;
        let bytes = chunk.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = String::from_utf8(bytes).map_err(|_| Error::Parse {
            line: line_no,
            message: "text is not valid UTF-8".into(),
        })?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            continue;
        }
        out.push((line_no, trimmed.to_string()));
    }
    Ok(out)
}

/// Parse JSONL records from any reader.
///
/// Labels may be strings or integers. With `class_names`, strings must name a
/// class and integers must index one. Without it, string labels are collected
/// in first-seen order (integers mixed in are treated as their decimal
/// spelling) and all-integer labels produce classes `"0"..=max`.
pub fn read_jsonl<R: Read>(reader: R, class_names: Option<&[String]>) -> Result<Dataset> {
    let lines = read_lines(reader)?;
    let mut records = Vec::with_capacity(lines.len());
    for (line_no, line) in &lines {
        let rec: InputRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: *line_no,
            message: format!("malformed JSON: {e}"),
        })?;
        let label = match &rec.label {
            Value::String(s) => RawLabel::Name(s.clone()),
            Value::Number(n) => match n.as_u64() {
                Some(k) => RawLabel::Index(k as usize),
                None => {
                    return Err(Error::Parse {
                        line: *line_no,
                        message: format!("label {n} is not a non-negative integer"),
                    })
                }
            },
            other => {
                return Err(Error::Parse {
                    line: *line_no,
                    message: format!("label must be a string or integer, got {other}"),
                })
            }
        };
        records.push((*line_no, rec, label));
    }

    let classes: Vec<String> = match class_names {
        Some(names) => names.to_vec(),
        None => {
            let any_string = records.iter().any(|(_, _, l)| matches!(l, RawLabel::Name(_)));
            if any_string {
                let mut names: Vec<String> = Vec::new();
                for (_, _, l) in &records {
                    let name = match l {
                        RawLabel::Name(s) => s.clone(),
                        RawLabel::Index(k) => k.to_string(),
                    };
                    if !names.contains(&name) {
                        names.push(name);
                    }
                }
                names
            } else {
                let max = records
                    .iter()
                    .filter_map(|(_, _, l)| match l {
                        RawLabel::Index(k) => Some(*k),
                        RawLabel::Name(_) => None,
                    })
                    .max();
                match max {
                    Some(m) => (0..=m).map(|k| k.to_string()).collect(),
                    None => Vec::new(),
                }
            }
        }
    };
    let lookup: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let auto_strings = class_names.is_none();

    let mut documents = Vec::with_capacity(records.len());
    for (line_no, rec, label) in records {
        let label = match label {
            RawLabel::Name(s) => *lookup.get(s.as_str()).ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("unknown label '{s}'"),
            })?,
            RawLabel::Index(k) if auto_strings && lookup.contains_key(k.to_string().as_str()) => {
                lookup[k.to_string().as_str()]
            }
            RawLabel::Index(k) => {
                if k >= classes.len() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("label index {k} out of range for {} classes", classes.len()),
                    });
                }
                k
            }
        };
        let gender = match rec.gender.as_deref() {
            None => Gender::Unknown,
            Some(g) => g.parse().map_err(|e: Error| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?,
        };
        let id = match rec.id {
            None | Some(Value::Null) => format!("doc-{line_no}"),
            Some(Value::String(s)) => s,
            Some(other) => other.to_string(),
        };
        let doc = Document {
            id,
            text: rec.text,
            label,
            gender,
            gender_confidence: rec.gender_confidence.unwrap_or(1.0),
            weight: rec.weight.unwrap_or(1.0),
            is_counterfactual: rec.is_counterfactual.unwrap_or(false),
            source_id: rec.source_id,
        };
        doc.validate().map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        documents.push(doc);
    }
    Dataset::new(documents, classes)
}

pub fn load_jsonl(path: impl AsRef<Path>, class_names: Option<&[String]>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(file, class_names)
        .map(|ds| ds.with_note("source", path.display().to_string()))
}

/// Serialize documents as JSONL, one record per line, labels as class names.
pub fn write_jsonl<W: Write>(dataset: &Dataset, mut writer: W) -> Result<()> {
    for doc in dataset.documents() {
        let rec = OutputRecord {
            id: &doc.id,
            text: &doc.text,
            label: &dataset.class_names()[doc.label],
            gender: doc.gender.is_known().then_some(doc.gender),
            gender_confidence: doc.gender_confidence,
            weight: doc.weight,
            is_counterfactual: doc.is_counterfactual,
            source_id: doc.source_id.as_deref(),
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn to_jsonl_string(dataset: &Dataset) -> String {
    let mut buf = Vec::new();
    write_jsonl(dataset, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

// ---------------------------------------------------------------------------
// Toxicity-style binarization
// ---------------------------------------------------------------------------

/// A raw comment with continuous toxicity and per-gender identity scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxicityRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
    pub toxicity: f64,
    pub female: f64,
    pub male: f64,
}

/// Absorbs decimal round-off in `|female - male|` (e.g. `0.8 - 0.3`).
const AGREEMENT_EPS: f64 = 1e-9;

/// Binarize toxicity and identity scores into a two-class gendered dataset.
///
/// Class 0 is `nontoxic`, class 1 is `toxic` (strictly above the threshold).
/// Records whose identity scores differ by at most `agreement_gap` are dropped.
pub fn binarize_jigsaw_style(
    records: &[ToxicityRecord],
    toxicity_threshold: f64,
    agreement_gap: f64,
) -> Result<Dataset> {
    let mut documents = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        for (name, v) in [("toxicity", rec.toxicity), ("female", rec.female), ("male", rec.male)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invalid(format!(
                    "record {}: {name} score {v} outside [0, 1]",
                    i + 1
                )));
            }
        }
        if (rec.female - rec.male).abs() <= agreement_gap + AGREEMENT_EPS {
            continue;
        }
        let gender = if rec.female > rec.male {
            Gender::Female
        } else {
            Gender::Male
        };
        let label = usize::from(rec.toxicity > toxicity_threshold);
        let id = rec.id.clone().unwrap_or_else(|| format!("rec-{}", i + 1));
        let mut doc = Document::new(id, rec.text.clone(), label, gender);
        doc.gender_confidence = rec.female.max(rec.male);
        documents.push(doc);
    }
    Dataset::new(documents, vec!["nontoxic".into(), "toxic".into()])
}

pub fn read_toxicity_jsonl<R: Read>(reader: R) -> Result<Vec<ToxicityRecord>> {
    read_lines(reader)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line,
                message: format!("malformed JSON: {e}"),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Replace whole-token, case-insensitive occurrences of each document's own
/// class terms with `mask`. Multiword terms match as token sequences and the
/// whole matched span collapses to a single mask.
pub fn mask_label_tokens(
    dataset: &Dataset,
    label_terms: &BTreeMap<usize, Vec<String>>,
    mask: &str,
) -> Dataset {
    // Pre-tokenize terms once; longest first so multiword terms win.
    let term_tokens: BTreeMap<usize, Vec<Vec<String>>> = label_terms
        .iter()
        .map(|(&class, terms)| {
            let mut seqs: Vec<Vec<String>> = terms
                .iter()
                .map(|t| tokenize(t).into_iter().map(|tok| tok.text.to_lowercase()).collect::<Vec<_>>())
                .filter(|s: &Vec<String>| !s.is_empty())
                .collect();
            seqs.sort_by_key(|s| std::cmp::Reverse(s.len()));
            (class, seqs)
        })
        .collect();

    let documents = dataset
        .documents()
        .iter()
        .map(|doc| {
            let Some(seqs) = term_tokens.get(&doc.label).filter(|s| !s.is_empty()) else {
                return doc.clone();
            };
            let tokens = tokenize(&doc.text);
            let lowered: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
            let mut out = String::with_capacity(doc.text.len());
            let mut cursor = 0;
            let mut i = 0;
            while i < tokens.len() {
                let hit = seqs.iter().find(|seq| {
                    i + seq.len() <= tokens.len()
                        && seq.iter().zip(&lowered[i..]).all(|(a, b)| a == b)
                });
                match hit {
                    Some(seq) => {
                        let start = tokens[i].start;
                        let end = tokens[i + seq.len() - 1].end;
                        out.push_str(&doc.text[cursor..start]);
                        out.push_str(mask);
                        cursor = end;
                        i += seq.len();
                    }
                    None => i += 1,
                }
            }
            out.push_str(&doc.text[cursor..]);
            Document {
                text: out,
                ..doc.clone()
            }
        })
        .collect();
    dataset
        .derive(documents)
        .expect("masking preserves ids and labels")
}

/// Seeded shuffle-and-partition. Validation and test sizes are floors of
/// their fractions; the remainder goes to train.
pub fn split(
    dataset: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (train, val, test) = fractions;
    if [train, val, test].iter().any(|f| !(f.is_finite() && *f > 0.0))
        || ((train + val + test) - 1.0).abs() > 1e-9
    {
        return Err(Error::Invalid(format!(
            "split fractions must be positive and sum to 1, got ({train}, {val}, {test})"
        )));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let n_val = floor(val);
    let n_test = floor(test);
    let n_train = n - n_val - n_test;

    let take = |idx: &[usize]| {
        let docs = idx.iter().map(|&i| dataset.documents()[i].clone()).collect();
        dataset.derive(docs)
    };
    Ok((
        take(&order[..n_train])?,
        take(&order[n_train..n_train + n_val])?,
        take(&order[n_train + n_val..])?,
    ))
}

// ---------------------------------------------------------------------------
// Joint counts
// ---------------------------------------------------------------------------

/// `N(g, y)` over Female/Male documents, with marginals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JointCounts {
    /// `cells[y] = [N(Female, y), N(Male, y)]`.
    cells: Vec<[u64; 2]>,
}

impl JointCounts {
    pub fn from_cells(cells: Vec<[u64; 2]>) -> Self {
        JointCounts { cells }
    }

    pub fn num_classes(&self) -> usize {
        self.cells.len()
    }

    /// Zero for `Unknown`.
    pub fn cell(&self, gender: Gender, class: usize) -> u64 {
        gender.index().map_or(0, |g| self.cells[class][g])
    }

    pub fn gender_total(&self, gender: Gender) -> u64 {
        gender
            .index()
            .map_or(0, |g| self.cells.iter().map(|row| row[g]).sum())
    }

    pub fn class_total(&self, class: usize) -> u64 {
        self.cells[class].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }
}

pub fn joint_counts(dataset: &Dataset) -> JointCounts {
    let mut cells = vec![[0u64; 2]; dataset.num_classes()];
    for doc in dataset.documents() {
        if let Some(g) = doc.gender.index() {
            cells[doc.label][g] += 1;
        }
    }
    JointCounts { cells }
}
