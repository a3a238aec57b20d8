//! One experiment end to end: load or synthesize a corpus, split it, then
//! for every debiasing plan debias the training split, train, and audit on
//! the test split.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.json
//! comparison.csv
//! data/{train,val,test}.jsonl
//! plans/<plan>/{train.jsonl,model.json,report.json,report.csv}
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use fairgap::corpus::{binarize_jigsaw_style, read_toxicity_jsonl, split, to_jsonl_string};
use fairgap::debias::{apply, DebiasPlan};
use fairgap::metrics::{bias_report, ReportOptions};
use fairgap::model::fit;
use fairgap::synth::{generate, SynthConfig};
use fairgap::{BiasReport, Dataset, GapKind, TrainConfig};

use crate::commands::{load_dataset, recorder, report_outcome};
use crate::manifest::{FileRecord, PlanRecord};
use crate::output::{sanitize, sha256_hex, write_atomic};
use crate::{read_json, Context, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synth(SynthConfig),
    Jsonl {
        path: PathBuf,
        #[serde(default)]
        classes: Option<Vec<String>>,
    },
    /// Continuous toxicity and identity scores, binarized on load.
    Toxicity {
        path: PathBuf,
        #[serde(default = "half")]
        threshold: f64,
        #[serde(default = "half")]
        agreement_gap: f64,
    },
}

fn half() -> f64 {
    0.5
}

fn default_split() -> (f64, f64, f64) {
    (0.6, 0.1, 0.3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub source: Source,
    /// Train, validation and test fractions.
    #[serde(default = "default_split")]
    pub split: (f64, f64, f64),
    /// Split seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub plans: Vec<DebiasPlan>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub report: ReportOptions,
}

impl PipelineConfig {
    /// A global seed replaces every seed in the config.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        if let Source::Synth(s) = &mut self.source {
            s.seed = seed;
        }
        for p in &mut self.plans {
            p.seed = seed;
        }
    }

    pub fn plan_dirs(&self) -> Result<Vec<String>> {
        let mut seen = HashSet::new();
        let mut dirs = Vec::with_capacity(self.plans.len());
        for plan in &self.plans {
            let dir = sanitize(&plan.label());
            if !seen.insert(dir.clone()) {
                bail!("two plans share the name '{dir}'; set a distinct \"name\" on one of them");
            }
            dirs.push(dir);
        }
        Ok(dirs)
    }
}

/// One row per (plan, metric): RMS of every enabled gap kind, then accuracy and AUC.
pub fn comparison_csv(rows: &[(String, &BiasReport)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["plan", "metric", "value"])?;
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for (plan, report) in rows {
        for kind in GapKind::ALL {
            if !report.entries(kind).is_empty() {
                w.write_record([plan.as_str(), &format!("rms_{}", kind.as_str()), &fmt(report.rms_of(kind))])?;
            }
        }
        w.write_record([plan.as_str(), "accuracy", &fmt(Some(report.accuracy))])?;
        if report.auc.is_some() {
            w.write_record([plan.as_str(), "auc", &fmt(report.auc)])?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn load_source(source: &Source, base: &Path) -> Result<(Dataset, Option<PathBuf>)> {
    match source {
        Source::Synth(cfg) => Ok((generate(cfg)?, None)),
        Source::Jsonl { path, classes } => {
            let p = base.join(path);
            Ok((load_dataset(&p, classes.as_deref())?, Some(p)))
        }
        Source::Toxicity { path, threshold, agreement_gap } => {
            let p = base.join(path);
            let file = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
            let records = read_toxicity_jsonl(file)?;
            Ok((binarize_jigsaw_style(&records, *threshold, *agreement_gap)?, Some(p)))
        }
    }
}

struct PlanRun {
    outputs: Vec<FileRecord>,
    result: Result<BiasReport>,
}

fn write_recorded(outputs: &mut Vec<FileRecord>, path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)?;
    outputs.push(FileRecord {
        path: path.display().to_string(),
        sha256: sha256_hex(bytes),
    });
    Ok(())
}

fn run_plan(ctx: &Context, cfg: &PipelineConfig, plan: &DebiasPlan, dir: &str, train: &Dataset, test: &Dataset) -> PlanRun {
    let mut outputs = Vec::new();
    let result = (|| {
        let rel = format!("plans/{dir}");
        let root = ctx.global.out_dir.join(&rel);
        let debiased = apply(train, plan, &ctx.lexicon).context("debias")?;
        write_recorded(&mut outputs, &root.join("train.jsonl"), to_jsonl_string(&debiased).as_bytes())?;
        let model = fit(&debiased, &cfg.train).context("train")?;
        write_recorded(&mut outputs, &root.join("model.json"), model.to_json().as_bytes())?;
        let opts = ReportOptions {
            model_id: Some(format!("{rel}/model.json")),
            dataset_id: Some("data/test.jsonl".into()),
            seed: Some(plan.seed),
            ..cfg.report.clone()
        };
        let mut report = bias_report(&model, test, &ctx.lexicon, &opts).context("audit")?;
        report.metadata.manifest = Some("../../manifest.json".into());
        write_recorded(&mut outputs, &root.join("report.json"), (report.to_json() + "\n").as_bytes())?;
        write_recorded(&mut outputs, &root.join("report.csv"), report.to_csv().as_bytes())?;
        Ok(report)
    })();
    PlanRun { outputs, result }
}

pub fn run(ctx: &Context, config_path: &Path) -> Result<Outcome> {
    let mut cfg: PipelineConfig = read_json(config_path)?;
    if let Some(seed) = ctx.global.seed {
        cfg.reseed(seed);
    }
    let dirs = cfg.plan_dirs()?;
    let out_dir = &ctx.global.out_dir;
    let manifest_path = out_dir.join("manifest.json");

    let mut rec = recorder(ctx, "pipeline", json!(cfg))?;
    rec.input(config_path)?;
    rec.seed("split", cfg.seed);
    rec.seed("train", cfg.train.seed);
    if cfg.plans.is_empty() {
        rec.finish(&manifest_path)?;
        eprintln!("no plans; wrote {}", manifest_path.display());
        return Ok(Outcome::Success);
    }

    let base = config_path.parent().unwrap_or(Path::new("."));
    let (corpus, source_path) = load_source(&cfg.source, base)?;
    if let Some(p) = &source_path {
        rec.input(p)?;
    }
    if let Source::Synth(s) = &cfg.source {
        rec.seed("synth", s.seed);
    }
    let (train, val, test) = split(&corpus, cfg.split, cfg.seed)?;
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        rec.write(&out_dir.join(format!("data/{name}.jsonl")), to_jsonl_string(part).as_bytes())?;
    }

    let runs: Vec<PlanRun> = cfg
        .plans
        .par_iter()
        .zip(dirs.par_iter())
        .map(|(plan, dir)| run_plan(ctx, &cfg, plan, dir, &train, &test))
        .collect();

    let mut completed = Vec::new();
    for ((plan, dir), run) in cfg.plans.iter().zip(&dirs).zip(runs) {
        rec.seed(&format!("plan:{dir}"), plan.seed);
        for o in run.outputs {
            rec.record_output(o);
        }
        match run.result {
            Ok(report) => {
                rec.plan(PlanRecord { name: dir.clone(), completed: true, error: None });
                completed.push((dir.clone(), report));
            }
            Err(e) => {
                eprintln!("plan {dir} failed: {e:#}");
                rec.plan(PlanRecord { name: dir.clone(), completed: false, error: Some(format!("{e:#}")) });
            }
        }
    }

    let rows: Vec<(String, &BiasReport)> = completed.iter().map(|(d, r)| (d.clone(), r)).collect();
    rec.write(&out_dir.join("comparison.csv"), comparison_csv(&rows)?.as_bytes())?;
    let failed = completed.len() < cfg.plans.len();
    let manifest = rec.finish(&manifest_path)?;
    eprintln!(
        "{} of {} plans completed ({:?}); wrote {}",
        completed.len(),
        cfg.plans.len(),
        manifest.status,
        manifest_path.display()
    );
    if failed {
        return Ok(Outcome::PlanFailures);
    }
    let reports: Vec<BiasReport> = completed.into_iter().map(|(_, r)| r).collect();
    Ok(report_outcome(&reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fairgap::debias::{CfWeightStrategy, Method};

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"source": {"synth": {"docs_per_class": 10}}}"#).unwrap();
        assert_eq!(cfg.split, (0.6, 0.1, 0.3));
        assert!(cfg.plans.is_empty());
        assert_eq!(cfg.train, TrainConfig::default());
        match cfg.source {
            Source::Synth(s) => assert_eq!(s.docs_per_class, 10),
            _ => unreachable!(),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"source": {"synth": {}}, "plan": []}"#).is_err());
    }

    #[test]
    fn duplicate_plan_names_are_rejected() {
        let mut cfg: PipelineConfig = serde_json::from_str(r#"{"source": {"synth": {}}}"#).unwrap();
        cfg.plans = vec![DebiasPlan::new(Method::Cda), DebiasPlan::new(Method::Cda)];
        assert!(cfg.plan_dirs().is_err());
        cfg.plans[1] = DebiasPlan::new(Method::RwCda).with_cf_weight(CfWeightStrategy::SameAsOriginal);
        assert_eq!(cfg.plan_dirs().unwrap(), vec!["cda", "rw-cda+same"]);
    }

    #[test]
    fn reseed_reaches_every_stage() {
        let mut cfg: PipelineConfig = serde_json::from_str(
            r#"{"source": {"synth": {}}, "plans": [{"method": "os", "seed": 3}], "train": {"seed": 1}}"#,
        )
        .unwrap();
        cfg.reseed(11);
        assert_eq!((cfg.seed, cfg.train.seed, cfg.plans[0].seed), (11, 11, 11));
        assert!(matches!(cfg.source, Source::Synth(ref s) if s.seed == 11));
    }
}
