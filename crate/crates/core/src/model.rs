//! Bag-of-words multinomial logistic regression.
//!
//! Features are raw lowercase token counts. Contractions contribute their
//! stem and their suffix as separate features (`"He's"` -> `he`, `'s`), so
//! every indicator the do-operator rewrites lands on exactly one lexicon
//! column. Training is deterministic full-batch gradient descent with an
//! Armijo backtracking line search on
//!
//! ```text
//! Σ_i weight_i · (−log softmax(W x_i + b)[y_i]) + (l2 / 2) · ‖W‖²
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Document, Gender};
use crate::error::{Error, Result};
use crate::metrics::{argmax, Classification, Classifier, Prediction};
use crate::perturb::{token_parts, tokenize, GenderLexicon};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Lowercase feature strings of a text, in order.
pub fn feature_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for tok in tokenize(text) {
        let (_, stem, suffix) = token_parts(tok.text);
        if !stem.is_empty() {
            out.push(stem.to_lowercase());
        }
        if suffix.chars().any(char::is_alphanumeric) {
            out.push(suffix.replace('\u{2019}', "'").to_lowercase());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Vocabulary and features
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_frequency: usize,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>, min_frequency: usize) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token '{t}'")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            min_frequency,
        })
    }

    /// Tokens with corpus frequency ≥ `min_frequency`, in first-occurrence order.
    pub fn build(dataset: &Dataset, min_frequency: usize) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Invalid("cannot build a vocabulary from an empty dataset".into()));
        }
        let mut order: Vec<String> = Vec::new();
        let mut freq: HashMap<String, usize> = HashMap::new();
        for doc in dataset.documents() {
            for t in feature_tokens(&doc.text) {
                let e = freq.entry(t.clone()).or_insert(0);
                if *e == 0 {
                    order.push(t);
                }
                *e += 1;
            }
        }
        let tokens: Vec<String> = order.into_iter().filter(|t| freq[t] >= min_frequency).collect();
        if tokens.is_empty() {
            return Err(Error::Invalid(format!(
                "no token reaches min_frequency {min_frequency}"
            )));
        }
        Vocabulary::from_tokens(tokens, min_frequency)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    /// Sparse count vector, sorted by feature index; OOV tokens are dropped.
    pub fn featurize(&self, text: &str) -> SparseVector {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for t in feature_tokens(text) {
            if let Some(i) = self.get(&t) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let mut v: Vec<(usize, f64)> = counts.into_iter().collect();
        v.sort_unstable_by_key(|(i, _)| *i);
        SparseVector(v)
    }
}

pub fn build_vocab(dataset: &Dataset, min_frequency: usize) -> Result<Vocabulary> {
    Vocabulary::build(dataset, min_frequency)
}

pub fn featurize(doc: &Document, vocab: &Vocabulary) -> SparseVector {
    vocab.featurize(&doc.text)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector(pub Vec<(usize, f64)>);

impl SparseVector {
    pub fn get(&self, index: usize) -> f64 {
        self.0
            .binary_search_by_key(&index, |(i, _)| *i)
            .map_or(0.0, |k| self.0[k].1)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

/// Weight matrix (row-major, `classes × features`) and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub num_classes: usize,
    pub num_features: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Params {
    pub fn zeros(num_classes: usize, num_features: usize) -> Self {
        Params {
            num_classes,
            num_features,
            weights: vec![0.0; num_classes * num_features],
            bias: vec![0.0; num_classes],
        }
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[class * self.num_features + feature]
    }

    fn logits_into(&self, x: &SparseVector, out: &mut [f64]) {
        for (c, slot) in out.iter_mut().enumerate() {
            let row = &self.weights[c * self.num_features..(c + 1) * self.num_features];
            let mut z = self.bias[c];
            for &(j, v) in &x.0 {
                z += row[j] * v;
            }
            *slot = z;
        }
    }

    pub fn logits(&self, x: &SparseVector) -> Vec<f64> {
        let mut z = vec![0.0; self.num_classes];
        self.logits_into(x, &mut z);
        z
    }

    /// All parameters as one vector: weights, then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.extend_from_slice(&self.bias);
        v
    }

    pub fn from_flat(num_classes: usize, num_features: usize, flat: &[f64]) -> Self {
        let split = num_classes * num_features;
        Params {
            num_classes,
            num_features,
            weights: flat[..split].to_vec(),
            bias: flat[split..].to_vec(),
        }
    }

    fn axpy(&self, alpha: f64, dir: &Params) -> Params {
        Params {
            num_classes: self.num_classes,
            num_features: self.num_features,
            weights: self.weights.iter().zip(&dir.weights).map(|(a, d)| a + alpha * d).collect(),
            bias: self.bias.iter().zip(&dir.bias).map(|(a, d)| a + alpha * d).collect(),
        }
    }

    fn max_abs(&self) -> f64 {
        self.weights.iter().chain(&self.bias).fold(0.0, |m, v| m.max(v.abs()))
    }

    fn norm_sq(&self) -> f64 {
        self.weights.iter().chain(&self.bias).map(|v| v * v).sum()
    }
}

/// Featurized, weighted training rows.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub rows: Vec<SparseVector>,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub num_classes: usize,
    pub num_features: usize,
}

impl TrainingData {
    pub fn new(dataset: &Dataset, vocab: &Vocabulary) -> Self {
        let docs = dataset.documents();
        TrainingData {
            rows: docs.iter().map(|d| vocab.featurize(&d.text)).collect(),
            labels: docs.iter().map(|d| d.label).collect(),
            weights: docs.iter().map(|d| d.weight).collect(),
            num_classes: dataset.num_classes(),
            num_features: vocab.len(),
        }
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn objective(data: &TrainingData, params: &Params, l2: f64) -> f64 {
    let mut z = vec![0.0; data.num_classes];
    let mut loss = 0.0;
    for ((x, &y), &w) in data.rows.iter().zip(&data.labels).zip(&data.weights) {
        params.logits_into(x, &mut z);
        loss += w * (log_sum_exp(&z) - z[y]);
    }
    loss + 0.5 * l2 * params.weights.iter().map(|v| v * v).sum::<f64>()
}

pub fn objective_and_gradient(data: &TrainingData, params: &Params, l2: f64) -> (f64, Params) {
    let nf = data.num_features;
    let mut grad = Params::zeros(data.num_classes, nf);
    let mut z = vec![0.0; data.num_classes];
    let mut loss = 0.0;
    for ((x, &y), &w) in data.rows.iter().zip(&data.labels).zip(&data.weights) {
        params.logits_into(x, &mut z);
        let lse = log_sum_exp(&z);
        loss += w * (lse - z[y]);
        for (c, zc) in z.iter().enumerate() {
            let residual = w * ((zc - lse).exp() - if c == y { 1.0 } else { 0.0 });
            grad.bias[c] += residual;
            let row = &mut grad.weights[c * nf..(c + 1) * nf];
            for &(j, v) in &x.0 {
                row[j] += residual * v;
            }
        }
    }
    loss += 0.5 * l2 * params.weights.iter().map(|v| v * v).sum::<f64>();
    for (g, p) in grad.weights.iter_mut().zip(&params.weights) {
        *g += l2 * p;
    }
    (loss, grad)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    #[default]
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub l2: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub init: Init,
    pub min_frequency: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l2: 1e-3,
            max_iters: 5000,
            tolerance: 1e-8,
            seed: 0,
            init: Init::Zeros,
            min_frequency: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub l2: f64,
    pub iterations: usize,
    pub final_loss: f64,
    pub final_grad_max: f64,
    pub converged: bool,
    pub seed: u64,
}

/// Sufficient-decrease constant of the backtracking line search.
const ARMIJO: f64 = 0.5;
/// Step growth after an accepted step.
const STEP_GROWTH: f64 = 1.1;

fn dot_diff(g: &Params, a: &Params, b: &Params) -> f64 {
    let w: f64 = g.weights.iter().zip(a.weights.iter().zip(&b.weights)).map(|(g, (a, b))| g * (a - b)).sum();
    let c: f64 = g.bias.iter().zip(a.bias.iter().zip(&b.bias)).map(|(g, (a, b))| g * (a - b)).sum();
    w + c
}

fn extrapolate(x: &Params, prev: &Params, beta: f64) -> Params {
    Params {
        num_classes: x.num_classes,
        num_features: x.num_features,
        weights: x.weights.iter().zip(&prev.weights).map(|(a, p)| a + beta * (a - p)).collect(),
        bias: x.bias.iter().zip(&prev.bias).map(|(a, p)| a + beta * (a - p)).collect(),
    }
}

/// Full-batch accelerated gradient descent with backtracking and
/// gradient-based momentum restart.
pub fn train(dataset: &Dataset, vocab: &Vocabulary, config: &TrainConfig) -> Result<BowModel> {
    if config.l2 < 0.0 || !config.l2.is_finite() {
        return Err(Error::Invalid(format!("l2 must be non-negative, got {}", config.l2)));
    }
    let mut per_class = vec![0usize; dataset.num_classes()];
    for d in dataset.documents() {
        per_class[d.label] += 1;
    }
    if let Some(c) = per_class.iter().position(|n| *n == 0) {
        return Err(Error::Invalid(format!(
            "class '{}' has no training documents",
            dataset.class_names()[c]
        )));
    }

    let data = TrainingData::new(dataset, vocab);
    let mut x = match config.init {
        Init::Zeros => Params::zeros(data.num_classes, data.num_features),
    };
    let mut y = x.clone();
    let (mut fy, mut gy) = objective_and_gradient(&data, &y, config.l2);
    if !fy.is_finite() {
        return Err(Error::Diverged { iteration: 0, loss: fy });
    }
    let mut theta = 1.0f64;
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        if gy.max_abs() < config.tolerance {
            x = y.clone();
            converged = true;
            break;
        }
        let gnorm2 = gy.norm_sq();
        let mut t = step;
        let accepted = loop {
            let cand = y.axpy(-t, &gy);
            let f = objective(&data, &cand, config.l2);
            if f.is_finite() && f <= fy - ARMIJO * t * gnorm2 {
                break Some(cand);
            }
            t *= 0.5;
            if t < 1e-30 {
                if !f.is_finite() {
                    return Err(Error::Diverged { iteration: iterations, loss: f });
                }
                break None;
            }
        };
        let Some(next) = accepted else {
            if theta > 1.0 {
                theta = 1.0;
                y = x.clone();
                (fy, gy) = objective_and_gradient(&data, &y, config.l2);
                continue;
            }
            // No representable step decreases the loss: we are at the floor.
            x = y.clone();
            break;
        };
        iterations += 1;
        if dot_diff(&gy, &next, &x) > 0.0 {
            theta = 1.0;
            y = next.clone();
        } else {
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            y = extrapolate(&next, &x, (theta - 1.0) / theta_next);
            theta = theta_next;
        }
        x = next;
        step = t * STEP_GROWTH;
        (fy, gy) = objective_and_gradient(&data, &y, config.l2);
        if !fy.is_finite() {
            theta = 1.0;
            y = x.clone();
            (fy, gy) = objective_and_gradient(&data, &y, config.l2);
        }
    }
    let (loss, grad) = objective_and_gradient(&data, &x, config.l2);
    let converged = converged || grad.max_abs() < config.tolerance;

    Ok(BowModel {
        classes: dataset.class_names().to_vec(),
        vocab: vocab.clone(),
        params: x,
        meta: TrainingMeta {
            l2: config.l2,
            iterations,
            final_loss: loss,
            final_grad_max: grad.max_abs(),
            converged,
            seed: config.seed,
        },
    })
}

/// Build the vocabulary from `dataset` and train on it.
pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<BowModel> {
    let vocab = Vocabulary::build(dataset, config.min_frequency)?;
    train(dataset, &vocab, config)
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Which indicator columns a weight adjustment touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderSelection {
    Female,
    Male,
    Both,
}

impl GenderSelection {
    fn includes(self, g: Gender) -> bool {
        match self {
            GenderSelection::Female => g == Gender::Female,
            GenderSelection::Male => g == Gender::Male,
            GenderSelection::Both => g.is_known(),
        }
    }
}

impl std::str::FromStr for GenderSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "female" => Ok(GenderSelection::Female),
            "male" => Ok(GenderSelection::Male),
            "both" => Ok(GenderSelection::Both),
            _ => Err(Error::Invalid(format!("expected female, male or both, got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BowModel {
    pub classes: Vec<String>,
    pub vocab: Vocabulary,
    pub params: Params,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    classes: Vec<String>,
    vocab: Vec<String>,
    min_frequency: usize,
    #[serde(rename = "W")]
    weights: Vec<f64>,
    b: Vec<f64>,
    meta: TrainingMeta,
}

impl BowModel {
    pub fn num_features(&self) -> usize {
        self.vocab.len()
    }

    /// Softmax class probabilities.
    pub fn scores(&self, text: &str) -> Vec<f64> {
        let z = self.params.logits(&self.vocab.featurize(text));
        softmax(&z)
    }

    pub fn predict(&self, doc: &Document) -> Prediction {
        Prediction::from_scores(doc.id.clone(), self.scores(&doc.text))
    }

    /// Training objective of this model on `dataset`.
    pub fn loss(&self, dataset: &Dataset) -> f64 {
        objective(&TrainingData::new(dataset, &self.vocab), &self.params, self.meta.l2)
    }

    /// Vocabulary columns belonging to the selected indicator set.
    pub fn gender_columns(&self, which: GenderSelection, lexicon: &GenderLexicon) -> Vec<usize> {
        self.vocab
            .tokens()
            .iter()
            .enumerate()
            .filter(|(_, t)| lexicon.gender_of(t).is_some_and(|g| which.includes(g)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        if p.num_classes != self.classes.len()
            || p.num_features != self.vocab.len()
            || p.weights.len() != p.num_classes * p.num_features
            || p.bias.len() != p.num_classes
        {
            return Err(Error::Invalid("model dimensions do not match vocabulary and classes".into()));
        }
        if p.weights.iter().chain(&p.bias).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("model contains non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            classes: self.classes.clone(),
            vocab: self.vocab.tokens().to_vec(),
            min_frequency: self.vocab.min_frequency(),
            weights: self.params.weights.clone(),
            b: self.params.bias.clone(),
            meta: self.meta.clone(),
        };
        serde_json::to_string(&file).expect("model is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        let vocab = Vocabulary::from_tokens(file.vocab, file.min_frequency)?;
        let model = BowModel {
            params: Params {
                num_classes: file.classes.len(),
                num_features: vocab.len(),
                weights: file.weights,
                bias: file.b,
            },
            classes: file.classes,
            vocab,
            meta: file.meta,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Classifier for BowModel {
    fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn classify(&self, text: &str) -> Classification {
        let scores = self.scores(text);
        Classification {
            class: argmax(&scores),
            scores: Some(scores),
        }
    }

    fn concurrent_predict_safe(&self) -> bool {
        true
    }
}

/// Copy of `model` with every selected indicator column of `W` multiplied by `w`.
pub fn adjust_gender_weights(
    model: &BowModel,
    w: f64,
    which: GenderSelection,
    lexicon: &GenderLexicon,
) -> BowModel {
    let mut out = model.clone();
    let nf = model.num_features();
    for j in model.gender_columns(which, lexicon) {
        for c in 0..model.classes.len() {
            out.params.weights[c * nf + j] *= w;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderWeightSummary {
    pub class: usize,
    pub female: f64,
    pub male: f64,
}

/// Per class `y`: Σ over gender-g vocabulary tokens `t` of
/// `W[y, t] · count(t in documents labeled y)`.
pub fn gender_weight_summary(
    model: &BowModel,
    dataset: &Dataset,
    lexicon: &GenderLexicon,
) -> Vec<GenderWeightSummary> {
    let nf = model.num_features();
    let mut freq = vec![vec![0.0f64; nf]; model.classes.len()];
    for doc in dataset.documents() {
        if doc.label >= freq.len() {
            continue;
        }
        for &(j, v) in &model.vocab.featurize(&doc.text).0 {
            freq[doc.label][j] += v;
        }
    }
    (0..model.classes.len())
        .map(|y| {
            let mut s = GenderWeightSummary {
                class: y,
                female: 0.0,
                male: 0.0,
            };
            for (j, tok) in model.vocab.tokens().iter().enumerate() {
                let contrib = model.params.weight(y, j) * freq[y][j];
                match lexicon.gender_of(tok) {
                    Some(Gender::Female) => s.female += contrib,
                    Some(Gender::Male) => s.male += contrib,
                    _ => {}
                }
            }
            s
        })
        .collect()
}
