//! Gender-bias auditing for text classifiers.
//!
//! The crate pairs statistical gap metrics (computed on observed predictions)
//! with causal gap metrics (computed on gender-intervened twins of every
//! input), offers the usual pre-processing debiasers plus their compositions
//! with counterfactual augmentation, and ships a bag-of-words logistic
//! regression model whose gender-token weights can be rescaled to dial bias
//! up and down.
//!
//! Module map:
//!
//! - [`corpus`]: documents, datasets, JSONL ingestion, splitting, joint counts
//! - [`perturb`]: tokenizer, gender lexicon, detection and the do-operator
//! - [`metrics`]: SG/CG gaps, RMS, accuracy, AUC and [`metrics::BiasReport`]
//! - [`debias`]: resampling, reweighting, CDA and composed strategies
//! - [`model`]: bag-of-words softmax regression with weight surgery
//! - [`synth`]: seeded synthetic corpora with a controllable confounder

pub mod corpus;
pub mod debias;
pub mod error;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod synth;

pub use corpus::{Dataset, Document, Gender, JointCounts};
pub use error::{Error, Result};
pub use metrics::{BiasReport, Classifier, GapKind, GapScore, Prediction};
pub use model::{BowModel, TrainConfig, Vocabulary};
pub use perturb::GenderLexicon;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
