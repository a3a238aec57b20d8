//! Pre-processing debiasers.
//!
//! Statistical methods (over/undersampling, reweighting) balance gender
//! within each class; the causal method (CDA) adds gender-swapped twins.
//! The composed methods chain the two. Unknown-gender documents pass through
//! every method untouched.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{joint_counts, Dataset, Document, Gender, JointCounts};
use crate::error::{Error, Result};
use crate::perturb::{augment_cda, GenderLexicon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    None,
    Os,
    Us,
    Rw,
    Cda,
    OsCda,
    UsCda,
    RwCda,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::None,
        Method::Os,
        Method::Us,
        Method::Rw,
        Method::Cda,
        Method::OsCda,
        Method::UsCda,
        Method::RwCda,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Os => "os",
            Method::Us => "us",
            Method::Rw => "rw",
            Method::Cda => "cda",
            Method::OsCda => "os-cda",
            Method::UsCda => "us-cda",
            Method::RwCda => "rw-cda",
        }
    }

    pub fn is_composed(self) -> bool {
        matches!(self, Method::OsCda | Method::UsCda | Method::RwCda)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown debias method '{s}'")))
    }
}

/// Order of resampling and augmentation for OS-CDA / US-CDA.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompositionOrder {
    /// Resample originals, then augment; counterfactuals inherit the balance.
    #[default]
    #[serde(rename = "resample-first")]
    ResampleThenCda,
    /// Augment, then resample originals by original gender and
    /// counterfactuals by counterfactual gender, independently.
    #[serde(rename = "cda-first")]
    CdaThenResample,
}

impl FromStr for CompositionOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resample-first" => Ok(CompositionOrder::ResampleThenCda),
            "cda-first" => Ok(CompositionOrder::CdaThenResample),
            _ => Err(Error::Invalid(format!("unknown composition order '{s}'"))),
        }
    }
}

/// Counterfactual weights for RW-CDA.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CfWeightStrategy {
    /// Copy the original's reweighting value.
    #[serde(rename = "same")]
    SameAsOriginal,
    /// Reweight using the counterfactual's own (flipped) gender cell.
    #[serde(rename = "cf-gender")]
    CounterfactualGender,
    #[default]
    #[serde(rename = "unit")]
    UnitWeight,
}

impl FromStr for CfWeightStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(CfWeightStrategy::SameAsOriginal),
            "cf-gender" => Ok(CfWeightStrategy::CounterfactualGender),
            "unit" => Ok(CfWeightStrategy::UnitWeight),
            _ => Err(Error::Invalid(format!("unknown counterfactual weight strategy '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebiasPlan {
    pub method: Method,
    #[serde(default)]
    pub order: CompositionOrder,
    #[serde(default)]
    pub cf_weight: CfWeightStrategy,
    #[serde(default)]
    pub seed: u64,
    /// Display name; defaults to [`DebiasPlan::label`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl DebiasPlan {
    pub fn new(method: Method) -> Self {
        DebiasPlan {
            method,
            order: CompositionOrder::default(),
            cf_weight: CfWeightStrategy::default(),
            seed: 0,
            name: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_order(mut self, order: CompositionOrder) -> Self {
        self.order = order;
        self
    }

    pub fn with_cf_weight(mut self, cf_weight: CfWeightStrategy) -> Self {
        self.cf_weight = cf_weight;
        self
    }

    /// Method name plus any non-default variant.
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let mut s = self.method.as_str().to_string();
        match self.method {
            Method::OsCda | Method::UsCda if self.order == CompositionOrder::CdaThenResample => {
                s.push_str("+cda-first")
            }
            Method::RwCda => match self.cf_weight {
                CfWeightStrategy::SameAsOriginal => s.push_str("+same"),
                CfWeightStrategy::CounterfactualGender => s.push_str("+cf-gender"),
                CfWeightStrategy::UnitWeight => {}
            },
            _ => {}
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Positions of Female and Male documents of each class.
fn cells_by_class(dataset: &Dataset) -> Vec<[Vec<usize>; 2]> {
    let mut cells: Vec<[Vec<usize>; 2]> = (0..dataset.num_classes()).map(|_| [vec![], vec![]]).collect();
    for (i, doc) in dataset.documents().iter().enumerate() {
        if let Some(g) = doc.gender.index() {
            cells[doc.label][g].push(i);
        }
    }
    cells
}

fn check_balanceable(dataset: &Dataset, cells: &[[Vec<usize>; 2]]) -> Result<()> {
    let bad: Vec<String> = cells
        .iter()
        .enumerate()
        .filter(|(_, [f, m])| f.is_empty() != m.is_empty())
        .map(|(y, _)| dataset.class_names()[y].clone())
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Unbalanceable(bad))
    }
}

/// Duplicate minority-gender documents of each class (with replacement)
/// until both genders match the majority count. Duplicates are appended
/// after the originals with fresh ids.
pub fn oversample(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    let cells = cells_by_class(dataset);
    check_balanceable(dataset, &cells)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = dataset.documents().to_vec();
    let mut ids: HashSet<String> = docs.iter().map(|d| d.id.clone()).collect();
    for [f, m] in &cells {
        let (minority, need) = match f.len().cmp(&m.len()) {
            std::cmp::Ordering::Less => (f, m.len() - f.len()),
            std::cmp::Ordering::Greater => (m, f.len() - m.len()),
            std::cmp::Ordering::Equal => continue,
        };
        for _ in 0..need {
            let orig = &dataset.documents()[minority[rng.gen_range(0..minority.len())]];
            let mut k = 0;
            let id = loop {
                let candidate = format!("{}#os{k}", orig.id);
                if !ids.contains(&candidate) {
                    break candidate;
                }
                k += 1;
            };
            ids.insert(id.clone());
            docs.push(Document {
                id,
                source_id: Some(orig.source_id.clone().unwrap_or_else(|| orig.id.clone())),
                ..orig.clone()
            });
        }
    }
    dataset.derive(docs)
}

/// Drop majority-gender documents of each class (without replacement) down
/// to the minority count. Survivors keep their original order.
pub fn undersample(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    let cells = cells_by_class(dataset);
    check_balanceable(dataset, &cells)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropped = vec![false; dataset.len()];
    for [f, m] in &cells {
        let (majority, keep) = match f.len().cmp(&m.len()) {
            std::cmp::Ordering::Less => (m, f.len()),
            std::cmp::Ordering::Greater => (f, m.len()),
            std::cmp::Ordering::Equal => continue,
        };
        let mut kept = vec![false; majority.len()];
        for i in sample(&mut rng, majority.len(), keep) {
            kept[i] = true;
        }
        for (pos, &doc_idx) in majority.iter().enumerate() {
            if !kept[pos] {
                dropped[doc_idx] = true;
            }
        }
    }
    let docs = dataset
        .documents()
        .iter()
        .zip(&dropped)
        .filter(|(_, d)| !**d)
        .map(|(doc, _)| doc.clone())
        .collect();
    dataset.derive(docs)
}

// ---------------------------------------------------------------------------
// Reweighting
// ---------------------------------------------------------------------------

/// `N(g) · N(y) / (N · N(g, y))` over Female/Male documents.
pub fn kamiran_weight(counts: &JointCounts, gender: Gender, class: usize) -> Result<f64> {
    let cell = counts.cell(gender, class);
    if cell == 0 || !gender.is_known() {
        return Err(Error::EmptyCell {
            gender: gender.to_string(),
            class: class.to_string(),
        });
    }
    let ng = counts.gender_total(gender) as f64;
    let ny = counts.class_total(class) as f64;
    let n = counts.total() as f64;
    Ok(ng * ny / (n * cell as f64))
}

/// Replace every gendered document's weight so that the weighted
/// gender-by-class distribution factorizes. Unknown documents are untouched.
pub fn reweight(dataset: &Dataset) -> Result<Dataset> {
    let counts = joint_counts(dataset);
    for y in 0..dataset.num_classes() {
        for g in Gender::BINARY {
            if counts.cell(g, y) == 0 {
                return Err(Error::EmptyCell {
                    gender: g.to_string(),
                    class: dataset.class_names()[y].clone(),
                });
            }
        }
    }
    let docs = dataset
        .documents()
        .iter()
        .map(|doc| {
            let mut d = doc.clone();
            if doc.gender.is_known() {
                d.weight = kamiran_weight(&counts, doc.gender, doc.label)?;
            }
            Ok(d)
        })
        .collect::<Result<Vec<_>>>()?;
    dataset.derive(docs)
}

// ---------------------------------------------------------------------------
// Composition
// ---------------------------------------------------------------------------

fn resample(dataset: &Dataset, method: Method, seed: u64) -> Result<Dataset> {
    match method {
        Method::OsCda | Method::Os => oversample(dataset, seed),
        Method::UsCda | Method::Us => undersample(dataset, seed),
        _ => unreachable!("resample called for {method}"),
    }
}

/// Run a composed plan (OS-CDA, US-CDA or RW-CDA).
pub fn compose(dataset: &Dataset, plan: &DebiasPlan, lexicon: &GenderLexicon) -> Result<Dataset> {
    match plan.method {
        Method::OsCda | Method::UsCda => match plan.order {
            CompositionOrder::ResampleThenCda => {
                let balanced = resample(dataset, plan.method, plan.seed)?;
                augment_cda(&balanced, lexicon)
            }
            CompositionOrder::CdaThenResample => {
                let augmented = augment_cda(dataset, lexicon)?;
                let mut docs = augmented.into_documents();
                let cfs = docs.split_off(dataset.len());
                let originals = resample(&dataset.derive(docs)?, plan.method, plan.seed)?;
                let cfs = resample(&dataset.derive(cfs)?, plan.method, plan.seed.wrapping_add(1))?;
                let mut all = originals.into_documents();
                all.extend(cfs.into_documents());
                dataset.derive(all)
            }
        },
        Method::RwCda => {
            let counts = joint_counts(dataset);
            let weighted = reweight(dataset)?;
            let augmented = augment_cda(&weighted, lexicon)?;
            let docs = augmented
                .documents()
                .iter()
                .map(|doc| {
                    let mut d = doc.clone();
                    if doc.is_counterfactual {
                        d.weight = match plan.cf_weight {
                            // counterfactual() already copied the original's weight
                            CfWeightStrategy::SameAsOriginal => doc.weight,
                            CfWeightStrategy::CounterfactualGender => {
                                kamiran_weight(&counts, doc.gender, doc.label)?
                            }
                            CfWeightStrategy::UnitWeight => 1.0,
                        };
                    }
                    Ok(d)
                })
                .collect::<Result<Vec<_>>>()?;
            dataset.derive(docs)
        }
        other => Err(Error::Invalid(format!("{other} is not a composed method"))),
    }
}

/// Apply any plan, single-family or composed.
pub fn apply(dataset: &Dataset, plan: &DebiasPlan, lexicon: &GenderLexicon) -> Result<Dataset> {
    match plan.method {
        Method::None => Ok(dataset.clone()),
        Method::Os => oversample(dataset, plan.seed),
        Method::Us => undersample(dataset, plan.seed),
        Method::Rw => reweight(dataset),
        Method::Cda => augment_cda(dataset, lexicon),
        _ => compose(dataset, plan, lexicon),
    }
}
