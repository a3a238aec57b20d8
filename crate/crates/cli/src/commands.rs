use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use fairgap::corpus::{load_jsonl, read_jsonl, to_jsonl_string};
use fairgap::debias::{apply, DebiasPlan};
use fairgap::metrics::{accuracy, bias_report, predict_dataset, ReportOptions};
use fairgap::model::{adjust_gender_weights, fit, GenderSelection};
use fairgap::perturb::{counterfactual, detect_gender, perturb};
use fairgap::synth::{generate, SynthConfig};
use fairgap::{BiasReport, BowModel, Dataset, Gender, GenderLexicon};

use crate::manifest::Recorder;
use crate::output::{ensure_distinct, manifest_path_for};
use crate::{read_json, Command, Context, Format, Outcome, ReportArgs, Target, TrainArgs};

pub fn dispatch(ctx: &Context, command: Command) -> Result<Outcome> {
    match command {
        Command::Synth { config, out } => synth(ctx, config.as_deref(), &out),
        Command::Perturb { target, input, out } => perturb_cmd(ctx, target, input.as_deref(), out.as_deref()),
        Command::Debias { input, out, method, order, cf_weight, classes } => {
            let plan = DebiasPlan::new(method)
                .with_order(order)
                .with_cf_weight(cf_weight)
                .with_seed(ctx.global.seed.unwrap_or(0));
            debias(ctx, &input, &out, &plan, classes.classes.as_deref())
        }
        Command::Train { input, out, train, classes } => train_cmd(ctx, &input, &out, &train, classes.classes.as_deref()),
        Command::Eval { model, input, out } => eval(ctx, &model, &input, out.as_deref()),
        Command::AdjustWeights { model, w, which, out } => adjust(ctx, &model, w, which, &out),
        Command::Audit { model, input, name, report } => audit(ctx, &model, &input, &name, &report),
        Command::Sweep { input, model, train_input, grid, which, name, train, report } => {
            let source = match model {
                Some(m) => ModelSource::File(m),
                None => ModelSource::Train(train_input.unwrap_or_else(|| input.clone()), train),
            };
            sweep(ctx, &input, source, &grid, which, &name, &report)
        }
        Command::Pipeline { config } => crate::pipeline::run(ctx, &config),
    }
}

/// A recorder with the lexicon file (when one is given) already logged as an input.
pub fn recorder(ctx: &Context, command: &str, config: serde_json::Value) -> Result<Recorder> {
    let mut rec = Recorder::new(command, &ctx.command_line, config);
    if let Some(p) = &ctx.global.lexicon {
        rec.input(p)?;
    }
    Ok(rec)
}

pub fn load_dataset(path: &Path, classes: Option<&[String]>) -> Result<Dataset> {
    load_jsonl(path, classes).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<BowModel> {
    BowModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

/// Load a dataset under the model's class names.
fn load_for_model(path: &Path, model: &BowModel) -> Result<Dataset> {
    load_jsonl(path, Some(&model.classes)).with_context(|| {
        format!(
            "dataset {} does not match the model's classes [{}]",
            path.display(),
            model.classes.join(", ")
        )
    })
}

fn synth(ctx: &Context, config: Option<&Path>, out: &Path) -> Result<Outcome> {
    let mut cfg: SynthConfig = match config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = ctx.global.seed {
        cfg.seed = s;
    }
    let ds = generate(&cfg)?;
    let out = ctx.out_path(out);
    let mut rec = recorder(ctx, "synth", json!({ "synth": cfg }))?;
    if let Some(p) = config {
        rec.input(p)?;
    }
    rec.seed("synth", cfg.seed);
    rec.write(&out, to_jsonl_string(&ds).as_bytes())?;
    rec.finish(&manifest_path_for(&out))?;
    eprintln!("wrote {} documents to {}", ds.len(), out.display());
    Ok(Outcome::Success)
}

/// Female/Male targets rewrite the text in place and retag documents that
/// carry indicators afterwards. Flip replaces each tagged document with its
/// counterfactual; untagged documents pass through unchanged.
pub fn perturb_dataset(ds: &Dataset, target: Target, lexicon: &GenderLexicon) -> Result<Dataset> {
    let mut docs = Vec::with_capacity(ds.len());
    for d in ds.documents() {
        let doc = match target {
            Target::Flip if d.gender.is_known() => counterfactual(d, lexicon)?,
            Target::Flip => d.clone(),
            Target::Female | Target::Male => {
                let g = if target == Target::Female { Gender::Female } else { Gender::Male };
                let mut doc = d.clone();
                doc.text = perturb(&d.text, g, lexicon)?.text;
                if detect_gender(&doc.text, lexicon).total() > 0 {
                    doc.gender = g;
                }
                doc
            }
        };
        docs.push(doc);
    }
    Ok(ds.derive(docs)?)
}

fn perturb_cmd(ctx: &Context, target: Target, input: Option<&Path>, out: Option<&Path>) -> Result<Outcome> {
    let ds = match input {
        Some(p) => load_dataset(p, None)?,
        None => {
            let mut buf = Vec::new();
            io::stdin().read_to_end(&mut buf).context("reading stdin")?;
            read_jsonl(buf.as_slice(), None).context("parsing stdin")?
        }
    };
    let text = to_jsonl_string(&perturb_dataset(&ds, target, &ctx.lexicon)?);
    match out {
        None => {
            io::stdout().lock().write_all(text.as_bytes())?;
        }
        Some(out) => {
            let out = ctx.out_path(out);
            if let Some(p) = input {
                ensure_distinct(p, &out)?;
            }
            let mut rec = recorder(ctx, "perturb", json!({ "target": format!("{target:?}").to_lowercase() }))?;
            if let Some(p) = input {
                rec.input(p)?;
            }
            rec.write(&out, text.as_bytes())?;
            rec.finish(&manifest_path_for(&out))?;
        }
    }
    Ok(Outcome::Success)
}

fn debias(ctx: &Context, input: &Path, out: &Path, plan: &DebiasPlan, classes: Option<&[String]>) -> Result<Outcome> {
    let ds = load_dataset(input, classes)?;
    let out = ctx.out_path(out);
    ensure_distinct(input, &out)?;
    let result = apply(&ds, plan, &ctx.lexicon).with_context(|| format!("applying {}", plan.label()))?;
    let mut rec = recorder(ctx, "debias", json!({ "plan": plan, "classes": ds.class_names() }))?;
    rec.input(input)?;
    rec.seed("debias", plan.seed);
    rec.write(&out, to_jsonl_string(&result).as_bytes())?;
    rec.finish(&manifest_path_for(&out))?;
    eprintln!("{}: {} -> {} documents", plan.label(), ds.len(), result.len());
    Ok(Outcome::Success)
}

fn train_cmd(ctx: &Context, input: &Path, out: &Path, args: &TrainArgs, classes: Option<&[String]>) -> Result<Outcome> {
    let cfg = args.resolve(ctx.global.seed)?;
    let ds = load_dataset(input, classes)?;
    let out = ctx.out_path(out);
    ensure_distinct(input, &out)?;
    let model = fit(&ds, &cfg)?;
    let mut rec = recorder(ctx, "train", json!({ "train": cfg, "classes": ds.class_names() }))?;
    rec.input(input)?;
    if let Some(p) = &args.train_config {
        rec.input(p)?;
    }
    rec.seed("train", cfg.seed);
    rec.write(&out, model.to_json().as_bytes())?;
    rec.finish(&manifest_path_for(&out))?;
    eprintln!(
        "trained on {} documents: {} iterations, loss {:.6}, converged {}",
        ds.len(),
        model.meta.iterations,
        model.meta.final_loss,
        model.meta.converged
    );
    Ok(Outcome::Success)
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    documents: usize,
    accuracy: f64,
    objective: f64,
}

fn eval(ctx: &Context, model_path: &Path, input: &Path, out: Option<&Path>) -> Result<Outcome> {
    let model = load_model(model_path)?;
    let ds = load_for_model(input, &model)?;
    let preds = predict_dataset(&model, &ds);
    let summary = EvalSummary {
        documents: ds.len(),
        accuracy: accuracy(&preds, &ds)?,
        objective: model.loss(&ds),
    };
    let format = ctx.global.format;
    let body = match format {
        Format::Json => serde_json::to_string_pretty(&summary)? + "\n",
        Format::Csv => format!(
            "metric,value\ndocuments,{}\naccuracy,{}\nobjective,{}\n",
            summary.documents, summary.accuracy, summary.objective
        ),
    };
    let default = PathBuf::from(format!("eval.{}", format.extension()));
    let out = ctx.out_path(out.unwrap_or(&default));
    let mut rec = recorder(ctx, "eval", json!({ "format": format.extension() }))?;
    rec.input(model_path)?;
    rec.input(input)?;
    rec.write(&out, body.as_bytes())?;
    rec.finish(&manifest_path_for(&out))?;
    eprintln!("accuracy {:.4} on {} documents", summary.accuracy, summary.documents);
    Ok(Outcome::Success)
}

fn adjust(ctx: &Context, model_path: &Path, w: f64, which: GenderSelection, out: &Path) -> Result<Outcome> {
    let model = load_model(model_path)?;
    let out = ctx.out_path(out);
    ensure_distinct(model_path, &out)?;
    let adjusted = adjust_gender_weights(&model, w, which, &ctx.lexicon);
    let mut rec = recorder(ctx, "adjust-weights", json!({ "w": w, "which": which }))?;
    rec.input(model_path)?;
    rec.write(&out, adjusted.to_json().as_bytes())?;
    rec.finish(&manifest_path_for(&out))?;
    Ok(Outcome::Success)
}

impl ReportArgs {
    pub fn resolve(&self, seed: Option<u64>) -> Result<ReportOptions> {
        let mut opts: ReportOptions = match &self.report_options {
            Some(p) => read_json(p)?,
            None => ReportOptions::default(),
        };
        if self.positive_class.is_some() {
            opts.positive_class = self.positive_class;
        }
        if seed.is_some() {
            opts.seed = seed;
        }
        Ok(opts)
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn audit(ctx: &Context, model_path: &Path, input: &Path, name: &str, args: &ReportArgs) -> Result<Outcome> {
    let model = load_model(model_path)?;
    let ds = load_for_model(input, &model)?;
    let mut opts = args.resolve(ctx.global.seed)?;
    opts.model_id.get_or_insert_with(|| model_path.display().to_string());
    opts.dataset_id.get_or_insert_with(|| input.display().to_string());

    let json_path = ctx.out_path(Path::new(&format!("{name}.json")));
    let csv_path = ctx.out_path(Path::new(&format!("{name}.csv")));
    let manifest_path = manifest_path_for(&json_path);
    let mut report = bias_report(&model, &ds, &ctx.lexicon, &opts)?;
    report.metadata.manifest = Some(file_name(&manifest_path));

    let mut rec = recorder(ctx, "audit", json!({ "report": opts }))?;
    rec.input(model_path)?;
    rec.input(input)?;
    if let Some(p) = &args.report_options {
        rec.input(p)?;
    }
    if let Some(s) = opts.seed {
        rec.seed("report", s);
    }
    rec.write(&json_path, (report.to_json() + "\n").as_bytes())?;
    rec.write(&csv_path, report.to_csv().as_bytes())?;
    rec.finish(&manifest_path)?;
    Ok(report_outcome(std::slice::from_ref(&report)))
}

pub fn report_outcome(reports: &[BiasReport]) -> Outcome {
    if reports.iter().any(BiasReport::has_missing) {
        for r in reports {
            for note in r.notes.iter() {
                eprintln!("note: {note}");
            }
        }
        eprintln!("some gap values are missing; see the report");
        Outcome::MissingValues
    } else {
        Outcome::Success
    }
}

pub enum ModelSource {
    File(PathBuf),
    Train(PathBuf, TrainArgs),
}

/// Sweep rows: every audit CSV row prefixed with its multiplier.
pub fn sweep_csv(points: &[(f64, BiasReport)]) -> String {
    let mut out = String::from("w,metric,class,value,support_f,support_m\n");
    for (w, report) in points {
        for line in report.to_csv().lines().skip(1) {
            out.push_str(&format!("{w},{line}\n"));
        }
    }
    out
}

fn sweep(
    ctx: &Context,
    input: &Path,
    source: ModelSource,
    grid: &[f64],
    which: GenderSelection,
    name: &str,
    args: &ReportArgs,
) -> Result<Outcome> {
    let format = ctx.global.format;
    let out = ctx.out_path(Path::new(&format!("{name}.{}", format.extension())));
    let manifest_path = manifest_path_for(&out);
    let mut opts = args.resolve(ctx.global.seed)?;
    opts.dataset_id.get_or_insert_with(|| input.display().to_string());

    let mut config = json!({ "grid": grid, "which": which, "report": opts });
    let mut inputs = vec![input.to_path_buf()];
    let (model, trained) = match &source {
        ModelSource::File(p) => {
            inputs.push(p.clone());
            (load_model(p)?, false)
        }
        ModelSource::Train(p, train_args) => {
            let cfg = train_args.resolve(ctx.global.seed)?;
            config["train"] = json!(cfg);
            if p != input {
                inputs.push(p.clone());
            }
            if let Some(c) = &train_args.train_config {
                inputs.push(c.clone());
            }
            (fit(&load_dataset(p, None)?, &cfg)?, true)
        }
    };
    let ds = load_for_model(input, &model)?;
    if grid.iter().any(|w| !w.is_finite()) {
        return Err(anyhow!("grid values must be finite"));
    }

    let points: Vec<(f64, BiasReport)> = grid
        .par_iter()
        .map(|&w| {
            let scaled = adjust_gender_weights(&model, w, which, &ctx.lexicon);
            let mut o = opts.clone();
            o.model_id = Some(format!("{}@w={w}", o.model_id.as_deref().unwrap_or("model")));
            let mut r = bias_report(&scaled, &ds, &ctx.lexicon, &o)?;
            r.metadata.manifest = Some(file_name(&manifest_path));
            Ok((w, r))
        })
        .collect::<Result<_>>()?;

    let body = match format {
        Format::Csv => sweep_csv(&points),
        Format::Json => {
            let rows: Vec<_> = points.iter().map(|(w, r)| json!({ "w": w, "report": r })).collect();
            serde_json::to_string_pretty(&rows)? + "\n"
        }
    };

    let mut rec = recorder(ctx, "sweep", config)?;
    for p in &inputs {
        rec.input(p)?;
    }
    if let Some(p) = &args.report_options {
        rec.input(p)?;
    }
    if trained {
        rec.seed("train", model.meta.seed);
        let model_out = ctx.out_path(Path::new(&format!("{name}.model.json")));
        rec.write(&model_out, model.to_json().as_bytes())?;
    }
    rec.write(&out, body.as_bytes())?;
    rec.finish(&manifest_path)?;
    let reports: Vec<BiasReport> = points.into_iter().map(|(_, r)| r).collect();
    Ok(report_outcome(&reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fairgap::Document;

    fn tiny() -> Dataset {
        Dataset::new(
            vec![
                Document::new("a", "she is here", 0, Gender::Female),
                Document::new("b", "nobody is here", 1, Gender::Unknown),
            ],
            vec!["x".into(), "y".into()],
        )
        .unwrap()
    }

    #[test]
    fn flip_pairs_tagged_documents_only() {
        let out = perturb_dataset(&tiny(), Target::Flip, &GenderLexicon::default()).unwrap();
        assert_eq!(out.documents()[0].text, "he is here");
        assert_eq!(out.documents()[0].gender, Gender::Male);
        assert_eq!(out.documents()[1], tiny().documents()[1]);
    }

    #[test]
    fn targeting_retags_only_indicated_documents() {
        let out = perturb_dataset(&tiny(), Target::Male, &GenderLexicon::default()).unwrap();
        assert_eq!(out.documents()[0].gender, Gender::Male);
        assert_eq!(out.documents()[0].id, "a");
        assert_eq!(out.documents()[1].gender, Gender::Unknown);
    }
}
