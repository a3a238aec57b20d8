//! Statistical and causal gap metrics, aggregation and bias reports.
//!
//! Sign convention: a positive gap favors Female for the metric's event
//! (positive prediction for PPR, prediction of class `y` for TPR/FPR).
//!
//! Statistical gaps compare observed prediction rates between the Female-
//! and Male-tagged documents of a population. Causal gaps rewrite every
//! document of the population to both genders with the do-operator and
//! average the per-document difference of the event indicator. Undefined
//! per-class values are reported as missing, never as zero.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Document, Gender};
use crate::error::{Error, Result};
use crate::perturb::{perturb, GenderLexicon};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Predictions and classifiers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub predicted_class: usize,
    /// Per-class probabilities; when present, `predicted_class` is their argmax.
    pub scores: Option<Vec<f64>>,
}

impl Prediction {
    pub fn hard(doc_id: impl Into<String>, predicted_class: usize) -> Self {
        Prediction {
            doc_id: doc_id.into(),
            predicted_class,
            scores: None,
        }
    }

    /// Predicted class is the argmax of `scores`, lowest index on ties.
    pub fn from_scores(doc_id: impl Into<String>, scores: Vec<f64>) -> Self {
        Prediction {
            doc_id: doc_id.into(),
            predicted_class: argmax(&scores),
            scores: Some(scores),
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub class: usize,
    pub scores: Option<Vec<f64>>,
}

/// Anything that maps text to a class. Must be deterministic for a fixed input.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;

    fn classify(&self, text: &str) -> Classification;

    /// Whether `classify` may be called from several threads at once.
    fn concurrent_predict_safe(&self) -> bool {
        false
    }
}

fn classify_all<M: Classifier + ?Sized>(model: &M, texts: &[&str]) -> Vec<Classification> {
    if model.concurrent_predict_safe() {
        texts.par_iter().map(|t| model.classify(t)).collect()
    } else {
        texts.iter().map(|t| model.classify(t)).collect()
    }
}

pub fn predict_dataset<M: Classifier + ?Sized>(model: &M, dataset: &Dataset) -> Vec<Prediction> {
    let texts: Vec<&str> = dataset.documents().iter().map(|d| d.text.as_str()).collect();
    classify_all(model, &texts)
        .into_iter()
        .zip(dataset.documents())
        .map(|(c, d)| Prediction {
            doc_id: d.id.clone(),
            predicted_class: c.class,
            scores: c.scores,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Gap kinds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapKind {
    SgPpr,
    CgPpr,
    SgTpr,
    CgTpr,
    SgFpr,
    CgFpr,
}

impl GapKind {
    pub const ALL: [GapKind; 6] = [
        GapKind::SgPpr,
        GapKind::CgPpr,
        GapKind::SgTpr,
        GapKind::CgTpr,
        GapKind::SgFpr,
        GapKind::CgFpr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GapKind::SgPpr => "sg_ppr",
            GapKind::CgPpr => "cg_ppr",
            GapKind::SgTpr => "sg_tpr",
            GapKind::CgTpr => "cg_tpr",
            GapKind::SgFpr => "sg_fpr",
            GapKind::CgFpr => "cg_fpr",
        }
    }

    pub fn is_causal(self) -> bool {
        matches!(self, GapKind::CgPpr | GapKind::CgTpr | GapKind::CgFpr)
    }
}

/// Which population and event a gap measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapTarget {
    /// All documents; event `Ŷ = positive_class`.
    Ppr { positive_class: usize },
    /// Documents with `Y = class`; event `Ŷ = class`.
    Tpr { class: usize },
    /// Documents with `Y ≠ class`; event `Ŷ = class`.
    Fpr { class: usize },
}

impl GapTarget {
    fn in_population(self, label: usize) -> bool {
        match self {
            GapTarget::Ppr { .. } => true,
            GapTarget::Tpr { class } => label == class,
            GapTarget::Fpr { class } => label != class,
        }
    }

    fn event_class(self) -> usize {
        match self {
            GapTarget::Ppr { positive_class } => positive_class,
            GapTarget::Tpr { class } | GapTarget::Fpr { class } => class,
        }
    }

    fn class(self) -> Option<usize> {
        match self {
            GapTarget::Ppr { .. } => None,
            GapTarget::Tpr { class } | GapTarget::Fpr { class } => Some(class),
        }
    }

    fn kind(self, causal: bool) -> GapKind {
        match (self, causal) {
            (GapTarget::Ppr { .. }, false) => GapKind::SgPpr,
            (GapTarget::Ppr { .. }, true) => GapKind::CgPpr,
            (GapTarget::Tpr { .. }, false) => GapKind::SgTpr,
            (GapTarget::Tpr { .. }, true) => GapKind::CgTpr,
            (GapTarget::Fpr { .. }, false) => GapKind::SgFpr,
            (GapTarget::Fpr { .. }, true) => GapKind::CgFpr,
        }
    }

    fn describe(self) -> String {
        match self {
            GapTarget::Ppr { .. } => String::new(),
            GapTarget::Tpr { class } => format!(" with label {class}"),
            GapTarget::Fpr { class } => format!(" with label != {class}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapScore {
    pub kind: GapKind,
    /// Signed gap in `[-1, 1]`; positive favors Female.
    pub value: f64,
    /// Absent for PPR.
    pub class: Option<usize>,
    /// Population sizes on the Female and Male side.
    pub support: (usize, usize),
}

// ---------------------------------------------------------------------------
// Statistical gaps
// ---------------------------------------------------------------------------

fn prediction_index(preds: &[Prediction]) -> HashMap<&str, usize> {
    preds
        .iter()
        .map(|p| (p.doc_id.as_str(), p.predicted_class))
        .collect()
}

fn statistical_from_index(
    index: &HashMap<&str, usize>,
    dataset: &Dataset,
    target: GapTarget,
) -> Result<GapScore> {
    let event = target.event_class();
    // [female, male] x [population, hits]
    let mut counts = [[0usize; 2]; 2];
    for doc in dataset.documents() {
        let Some(g) = doc.gender.index() else { continue };
        if !target.in_population(doc.label) {
            continue;
        }
        let pred = *index.get(doc.id.as_str()).ok_or_else(|| {
            Error::Invalid(format!("no prediction for document {}", doc.id))
        })?;
        counts[g][0] += 1;
        if pred == event {
            counts[g][1] += 1;
        }
    }
    for (g, name) in [(0, "female"), (1, "male")] {
        if counts[g][0] == 0 {
            return Err(Error::EmptyGroup(format!("{name}{}", target.describe())));
        }
    }
    let rate = |g: usize| counts[g][1] as f64 / counts[g][0] as f64;
    Ok(GapScore {
        kind: target.kind(false),
        value: rate(0) - rate(1),
        class: target.class(),
        support: (counts[0][0], counts[1][0]),
    })
}

pub fn statistical_gap(preds: &[Prediction], dataset: &Dataset, target: GapTarget) -> Result<GapScore> {
    statistical_from_index(&prediction_index(preds), dataset, target)
}

/// `P(Ŷ = positive | Female) − P(Ŷ = positive | Male)`.
pub fn statistical_ppr_gap(preds: &[Prediction], dataset: &Dataset, positive_class: usize) -> Result<GapScore> {
    statistical_gap(preds, dataset, GapTarget::Ppr { positive_class })
}

/// `TPR(Female, y) − TPR(Male, y)`.
pub fn statistical_tpr_gap(preds: &[Prediction], dataset: &Dataset, class: usize) -> Result<GapScore> {
    statistical_gap(preds, dataset, GapTarget::Tpr { class })
}

/// `P(Ŷ = y | Female, Y ≠ y) − P(Ŷ = y | Male, Y ≠ y)`.
pub fn statistical_fpr_gap(preds: &[Prediction], dataset: &Dataset, class: usize) -> Result<GapScore> {
    statistical_gap(preds, dataset, GapTarget::Fpr { class })
}

// ---------------------------------------------------------------------------
// Causal gaps
// ---------------------------------------------------------------------------

/// Model decisions on both do-versions of one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DoOutcome {
    pub label: usize,
    pub gender: Gender,
    pub as_female: usize,
    pub as_male: usize,
}

/// Classify `do(G=Female)` and `do(G=Male)` for every document, in order.
pub fn do_outcomes<M: Classifier + ?Sized>(
    model: &M,
    docs: &[&Document],
    lexicon: &GenderLexicon,
) -> Result<Vec<DoOutcome>> {
    let mut texts = Vec::with_capacity(docs.len() * 2);
    for doc in docs {
        texts.push(perturb(&doc.text, Gender::Female, lexicon)?.text);
        texts.push(perturb(&doc.text, Gender::Male, lexicon)?.text);
    }
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let classes = classify_all(model, &refs);
    Ok(docs
        .iter()
        .zip(classes.chunks_exact(2))
        .map(|(doc, pair)| DoOutcome {
            label: doc.label,
            gender: doc.gender,
            as_female: pair[0].class,
            as_male: pair[1].class,
        })
        .collect())
}

/// Causal gap from precomputed do-outcomes. Integer counts keep the result
/// independent of evaluation order.
pub fn causal_from_outcomes(outcomes: &[DoOutcome], target: GapTarget) -> Result<GapScore> {
    let event = target.event_class();
    let mut n = 0usize;
    let mut support = (0usize, 0usize);
    let mut female_hits = 0i64;
    let mut male_hits = 0i64;
    for o in outcomes.iter().filter(|o| target.in_population(o.label)) {
        match o.gender {
            Gender::Female => support.0 += 1,
            Gender::Male => support.1 += 1,
            Gender::Unknown => {
                return Err(Error::Invalid(
                    "causal gap population contains an unknown-gender document".into(),
                ))
            }
        }
        n += 1;
        female_hits += i64::from(o.as_female == event);
        male_hits += i64::from(o.as_male == event);
    }
    if n == 0 {
        return Err(Error::EmptyGroup(format!("population{}", target.describe())));
    }
    Ok(GapScore {
        kind: target.kind(true),
        value: (female_hits - male_hits) as f64 / n as f64,
        class: target.class(),
        support,
    })
}

/// Average over the population of `1{event | do(Female)} − 1{event | do(Male)}`.
pub fn causal_gap<M: Classifier + ?Sized>(
    model: &M,
    dataset: &Dataset,
    lexicon: &GenderLexicon,
    target: GapTarget,
) -> Result<GapScore> {
    let population: Vec<&Document> = dataset
        .documents()
        .iter()
        .filter(|d| target.in_population(d.label))
        .collect();
    if let Some(d) = population.iter().find(|d| !d.gender.is_known()) {
        return Err(Error::Invalid(format!(
            "document {} in causal population has unknown gender",
            d.id
        )));
    }
    let outcomes = do_outcomes(model, &population, lexicon)?;
    causal_from_outcomes(&outcomes, target)
}

// ---------------------------------------------------------------------------
// Aggregates
// ---------------------------------------------------------------------------

/// Root mean square, `sqrt(mean(v²))`.
pub fn rms(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Invalid("rms of an empty list".into()));
    }
    let sum: f64 = values.iter().map(|v| v * v).sum();
    Ok((sum / values.len() as f64).sqrt())
}

/// Fraction of all documents, Unknown gender included, predicted correctly.
pub fn accuracy(preds: &[Prediction], dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Invalid("accuracy of an empty dataset".into()));
    }
    let index = prediction_index(preds);
    let mut correct = 0usize;
    for doc in dataset.documents() {
        let pred = index
            .get(doc.id.as_str())
            .ok_or_else(|| Error::Invalid(format!("no prediction for document {}", doc.id)))?;
        correct += usize::from(*pred == doc.label);
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Rank-sum AUC of `scores[positive_class]`; tied scores share their mean rank.
pub fn auc(preds: &[Prediction], dataset: &Dataset, positive_class: usize) -> Result<f64> {
    if dataset.num_classes() != 2 {
        return Err(Error::Invalid(format!(
            "auc needs a binary task, got {} classes",
            dataset.num_classes()
        )));
    }
    let index: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.doc_id.as_str(), p)).collect();
    let mut scored: Vec<(f64, bool)> = Vec::with_capacity(dataset.len());
    for doc in dataset.documents() {
        let p = index
            .get(doc.id.as_str())
            .ok_or_else(|| Error::Invalid(format!("no prediction for document {}", doc.id)))?;
        let s = p
            .scores
            .as_ref()
            .and_then(|s| s.get(positive_class))
            .ok_or_else(|| Error::Invalid(format!("prediction for {} has no scores", doc.id)))?;
        scored.push((*s, doc.label == positive_class));
    }
    let n_pos = scored.iter().filter(|(_, p)| *p).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invalid("auc needs both positive and negative documents".into()));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j + 1 < scored.len() && scored[j + 1].0 == scored[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        let positives = scored[i..=j].iter().filter(|(_, p)| *p).count();
        rank_sum += mean_rank * positives as f64;
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// A half-open gender-confidence interval; the last default bucket is closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBucket {
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub upper_inclusive: bool,
}

impl ConfidenceBucket {
    pub fn contains(&self, c: f64) -> bool {
        c >= self.lower && (c < self.upper || (self.upper_inclusive && c == self.upper))
    }

    pub fn label(&self) -> String {
        let close = if self.upper_inclusive { ']' } else { ')' };
        format!("[{},{}{close}", self.lower, self.upper)
    }
}

pub fn default_buckets() -> Vec<ConfidenceBucket> {
    vec![
        ConfidenceBucket { lower: 0.5, upper: 0.85, upper_inclusive: false },
        ConfidenceBucket { lower: 0.85, upper: 0.95, upper_inclusive: false },
        ConfidenceBucket { lower: 0.95, upper: 1.0, upper_inclusive: true },
    ]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Enables PPR gaps.
    #[serde(default)]
    pub positive_class: Option<usize>,
    #[serde(default)]
    pub confidence_buckets: Option<Vec<ConfidenceBucket>>,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub dataset_id: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub class: Option<usize>,
    pub class_name: Option<String>,
    /// `None` when the gap is undefined; see `missing`.
    pub value: Option<f64>,
    pub support_f: usize,
    pub support_m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing: Option<String>,
}

impl GapEntry {
    fn from_result(res: Result<GapScore>, class: Option<usize>, classes: &[String]) -> Self {
        let class_name = class.map(|c| classes[c].clone());
        match res {
            Ok(g) => GapEntry {
                class,
                class_name,
                value: Some(g.value),
                support_f: g.support.0,
                support_m: g.support.1,
                missing: None,
            },
            Err(e) => GapEntry {
                class,
                class_name,
                value: None,
                support_f: 0,
                support_m: 0,
                missing: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketGaps {
    pub bucket: ConfidenceBucket,
    pub label: String,
    /// Gendered documents whose confidence falls in the bucket.
    pub support: usize,
    pub sg_ppr: Option<GapEntry>,
    pub cg_ppr: Option<GapEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub model_id: Option<String>,
    pub dataset_id: Option<String>,
    pub seed: Option<u64>,
    pub positive_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub schema_version: u32,
    pub classes: Vec<String>,
    pub sg_ppr: Option<GapEntry>,
    pub cg_ppr: Option<GapEntry>,
    pub sg_tpr: Vec<GapEntry>,
    pub cg_tpr: Vec<GapEntry>,
    pub sg_fpr: Vec<GapEntry>,
    pub cg_fpr: Vec<GapEntry>,
    /// Keyed by kind name; `None` when no class has a defined value.
    pub rms: BTreeMap<String, Option<f64>>,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub buckets: Option<Vec<BucketGaps>>,
    pub metadata: ReportMetadata,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl BiasReport {
    pub fn entries(&self, kind: GapKind) -> Vec<&GapEntry> {
        match kind {
            GapKind::SgPpr => self.sg_ppr.iter().collect(),
            GapKind::CgPpr => self.cg_ppr.iter().collect(),
            GapKind::SgTpr => self.sg_tpr.iter().collect(),
            GapKind::CgTpr => self.cg_tpr.iter().collect(),
            GapKind::SgFpr => self.sg_fpr.iter().collect(),
            GapKind::CgFpr => self.cg_fpr.iter().collect(),
        }
    }

    /// Defined values of one kind, in class order.
    pub fn values(&self, kind: GapKind) -> Vec<f64> {
        self.entries(kind).iter().filter_map(|e| e.value).collect()
    }

    pub fn rms_of(&self, kind: GapKind) -> Option<f64> {
        self.rms.get(kind.as_str()).copied().flatten()
    }

    /// Any gap entry (including bucketed ones) reported as missing.
    pub fn has_missing(&self) -> bool {
        let top = GapKind::ALL
            .iter()
            .any(|k| self.entries(*k).iter().any(|e| e.value.is_none()));
        let bucketed = self.buckets.iter().flatten().any(|b| {
            b.sg_ppr.iter().chain(b.cg_ppr.iter()).any(|e| e.value.is_none())
        });
        top || bucketed
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    /// Long-form CSV: `metric,class,value,support_f,support_m`.
    ///
    /// One row per gap entry (missing values left empty), then summary rows:
    /// `rms_<kind>` for kinds with an RMS, `accuracy`, `auc` when present and
    /// one `<kind>@<bucket>` row per bucketed PPR gap.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,class,value,support_f,support_m\n");
        let mut row = |metric: &str, class: &str, value: Option<f64>, support: Option<(usize, usize)>| {
            let value = value.map(|v| v.to_string()).unwrap_or_default();
            let (sf, sm) = support
                .map(|(f, m)| (f.to_string(), m.to_string()))
                .unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", csv_field(metric), csv_field(class), value, sf, sm);
        };
        for kind in GapKind::ALL {
            for e in self.entries(kind) {
                let class = self.entry_class_name(kind, e);
                row(kind.as_str(), &class, e.value, Some((e.support_f, e.support_m)));
            }
        }
        for kind in GapKind::ALL {
            if let Some(v) = self.rms_of(kind) {
                row(&format!("rms_{}", kind.as_str()), "", Some(v), None);
            }
        }
        row("accuracy", "", Some(self.accuracy), None);
        if let Some(a) = self.auc {
            row("auc", "", Some(a), None);
        }
        for b in self.buckets.iter().flatten() {
            for (kind, entry) in [(GapKind::SgPpr, &b.sg_ppr), (GapKind::CgPpr, &b.cg_ppr)] {
                if let Some(e) = entry {
                    let class = self.entry_class_name(kind, e);
                    row(
                        &format!("{}@{}", kind.as_str(), b.label),
                        &class,
                        e.value,
                        Some((e.support_f, e.support_m)),
                    );
                }
            }
        }
        out
    }

    fn entry_class_name(&self, kind: GapKind, e: &GapEntry) -> String {
        match (kind, &e.class_name) {
            (_, Some(n)) => n.clone(),
            (GapKind::SgPpr | GapKind::CgPpr, None) => self
                .metadata
                .positive_class
                .and_then(|c| self.classes.get(c).cloned())
                .unwrap_or_default(),
            _ => String::new(),
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn rms_of_entries(entries: &[&GapEntry]) -> Option<f64> {
    let values: Vec<f64> = entries.iter().filter_map(|e| e.value).collect();
    rms(&values).ok()
}

/// Audit a classifier on a dataset.
///
/// Metric failures become missing entries with a reason; only an empty
/// dataset or a hard evaluation error aborts.
pub fn bias_report<M: Classifier + ?Sized>(
    model: &M,
    dataset: &Dataset,
    lexicon: &GenderLexicon,
    options: &ReportOptions,
) -> Result<BiasReport> {
    if dataset.is_empty() {
        return Err(Error::Invalid("cannot audit an empty dataset".into()));
    }
    let classes = dataset.class_names().to_vec();
    if let Some(p) = options.positive_class {
        if p >= classes.len() {
            return Err(Error::Invalid(format!("positive class {p} out of range")));
        }
    }
    let preds = predict_dataset(model, dataset);
    let index = prediction_index(&preds);
    let gendered: Vec<&Document> = dataset.gendered().collect();
    let outcomes = do_outcomes(model, &gendered, lexicon)?;
    let gendered_ds = dataset.derive(gendered.iter().map(|d| (*d).clone()).collect())?;

    let per_class = |make: fn(usize) -> GapTarget, causal: bool| -> Vec<GapEntry> {
        (0..classes.len())
            .map(|c| {
                let target = make(c);
                let res = if causal {
                    causal_from_outcomes(&outcomes, target)
                } else {
                    statistical_from_index(&index, &gendered_ds, target)
                };
                GapEntry::from_result(res, Some(c), &classes)
            })
            .collect()
    };
    let tpr = |c| GapTarget::Tpr { class: c };
    let fpr = |c| GapTarget::Fpr { class: c };
    let sg_tpr = per_class(tpr, false);
    let cg_tpr = per_class(tpr, true);
    let sg_fpr = per_class(fpr, false);
    let cg_fpr = per_class(fpr, true);

    let (sg_ppr, cg_ppr) = match options.positive_class {
        Some(p) => {
            let t = GapTarget::Ppr { positive_class: p };
            (
                Some(GapEntry::from_result(statistical_from_index(&index, &gendered_ds, t), None, &classes)),
                Some(GapEntry::from_result(causal_from_outcomes(&outcomes, t), None, &classes)),
            )
        }
        None => (None, None),
    };

    let mut notes = Vec::new();
    let accuracy = accuracy(&preds, dataset)?;
    let auc = if classes.len() == 2 && preds.iter().all(|p| p.scores.is_some()) {
        match auc(&preds, dataset, options.positive_class.unwrap_or(1)) {
            Ok(a) => Some(a),
            Err(e) => {
                notes.push(format!("auc unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };

    let buckets = options.confidence_buckets.as_ref().map(|buckets| {
        buckets
            .iter()
            .map(|b| {
                let members: Vec<usize> = gendered
                    .iter()
                    .enumerate()
                    .filter(|(_, d)| b.contains(d.gender_confidence))
                    .map(|(i, _)| i)
                    .collect();
                let (sg, cg) = match options.positive_class {
                    Some(p) => {
                        let t = GapTarget::Ppr { positive_class: p };
                        let sub = gendered_ds
                            .derive(members.iter().map(|&i| gendered[i].clone()).collect())
                            .expect("subset of a valid dataset");
                        let sub_out: Vec<DoOutcome> = members.iter().map(|&i| outcomes[i]).collect();
                        (
                            Some(GapEntry::from_result(statistical_from_index(&index, &sub, t), None, &classes)),
                            Some(GapEntry::from_result(causal_from_outcomes(&sub_out, t), None, &classes)),
                        )
                    }
                    None => (None, None),
                };
                BucketGaps {
                    bucket: *b,
                    label: b.label(),
                    support: members.len(),
                    sg_ppr: sg,
                    cg_ppr: cg,
                }
            })
            .collect()
    });

    let mut report = BiasReport {
        schema_version: REPORT_SCHEMA_VERSION,
        classes,
        sg_ppr,
        cg_ppr,
        sg_tpr,
        cg_tpr,
        sg_fpr,
        cg_fpr,
        rms: BTreeMap::new(),
        accuracy,
        auc,
        buckets,
        metadata: ReportMetadata {
            model_id: options.model_id.clone(),
            dataset_id: options.dataset_id.clone(),
            seed: options.seed,
            positive_class: options.positive_class,
            manifest: None,
        },
        notes,
    };
    for kind in GapKind::ALL {
        let entries = report.entries(kind);
        if kind.as_str().ends_with("ppr") && entries.is_empty() {
            continue;
        }
        let value = rms_of_entries(&entries);
        report.rms.insert(kind.as_str().to_string(), value);
    }
    Ok(report)
}
