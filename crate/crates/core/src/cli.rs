//! Command-line front end. Each subcommand returns a [`CommandResult`];
//! with `--json` it is printed as one JSON object on stdout.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::aggregation::{matching_score, voted_list, PatientBundle, ScreeningMode, Strategy, TieRule, COHORT_KIND};
use crate::client::{ImageRef, SystemClock};
use crate::dataset::{
    build_corpus, read_corpus, read_jsonl, subsample, write_corpus, write_jsonl, AnnotationSet, BuildOptions,
    QuestionTemplates,
};
use crate::domain::{Language, LocationVocabulary, TaskRegistry};
use crate::inference::{Adapter, ModelEndpoint, Protocol};
use crate::metrics::{evaluate, CiMethod, EvaluationReport, MetricKind};
use crate::study::{http, Study, StudyDesign, StudyItem};
use crate::synthetic;
use crate::training::{emit_manifest, run_toy_training, synthetic_corpus, Stage, StageConfig, ToyConfig, ToyModel};

pub const STUDY_ITEMS_KIND: &str = "dentvqa.study_items";

#[derive(Debug, Parser)]
#[command(
    name = "dentvqa",
    version,
    about = "Dental VQA dataset, evaluation, screening, reader-study and training tools"
)]
pub struct Cli {
    /// Print a machine-readable summary object on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a bilingual VQA corpus from an annotation file.
    Build(BuildArgs),
    /// Run a model endpoint over a corpus and write a metrics report.
    Eval(EvalArgs),
    /// Patient-level screening score of a cohort of per-image predictions.
    Screen(ScreenArgs),
    /// Serve, plan or export a reader study.
    Study(StudyArgs),
    /// Train the toy model on a synthetic corpus and emit trainer manifests.
    TrainToy(TrainToyArgs),
    /// Render bar and radar charts from a saved report.
    Plot(PlotArgs),
    /// Generate synthetic inputs for the other commands.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Annotation set (JSON: images, boxes, reports).
    #[arg(long)]
    pub annotations: PathBuf,
    /// Task registry TOML; the built-in registry when omitted.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Output languages, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "en,zh")]
    pub languages: Vec<Language>,
    /// Seed for question-template choice and subsampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep this fraction of each task's question lineages, in (0, 1].
    #[arg(long, value_parser = parse_fraction)]
    pub fraction: Option<f64>,
    /// Output corpus (JSONL).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CiArg {
    Fixed,
    StudentT,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Corpus JSONL written by `build`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Endpoint TOML (local script or remote chat API).
    #[arg(long)]
    pub endpoint: PathBuf,
    /// `direct` or `two-step`.
    #[arg(long, default_value = "direct")]
    pub protocol: Protocol,
    /// Report JSON path; a CSV with the same stem is written next to it.
    #[arg(long)]
    pub report: PathBuf,
    /// Directory for SVG charts.
    #[arg(long)]
    pub plots: Option<PathBuf>,
    /// Task registry TOML; the built-in registry when omitted.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Send image bytes read from this directory instead of image URIs.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Cohort label stored in the report.
    #[arg(long, default_value = "eval")]
    pub cohort: String,
    /// 95% interval: `fixed` uses 1.96, `student-t` the t quantile for n - 1 degrees of freedom.
    #[arg(long, value_enum, default_value = "fixed")]
    pub ci: CiArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TieArg {
    PreferAbnormal,
    PreferNormal,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    /// Cohort JSONL of patient bundles.
    #[arg(long)]
    pub cohort: PathBuf,
    /// `home` (seven intraoral tasks) or `hospital` (malocclusion tasks).
    #[arg(long, default_value = "home")]
    pub mode: ScreeningMode,
    /// `majority` or `matching`.
    #[arg(long, default_value = "majority")]
    pub strategy: Strategy,
    /// Winner among tied answers.
    #[arg(long, value_enum, default_value = "prefer-abnormal")]
    pub tie: TieArg,
    /// Task registry TOML; the built-in registry when omitted.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Also write per-patient voted lists (JSONL).
    #[arg(long)]
    pub voted: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(subcommand)]
    pub action: StudyAction,
}

#[derive(Debug, Subcommand)]
pub enum StudyAction {
    /// Run the reader-study HTTP service.
    Serve {
        /// TCP port to listen on.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Address to bind.
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Event logs; existing studies here are replayed on start.
        #[arg(long, default_value = "study-logs")]
        log_dir: PathBuf,
        /// Where the export endpoint writes its files.
        #[arg(long)]
        export: Option<PathBuf>,
        /// Task registry TOML; the built-in registry when omitted.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Check a design against an item pool and print the planned set sizes.
    Plan {
        /// Design JSON; the default design when omitted.
        #[arg(long)]
        design: Option<PathBuf>,
        /// Study item pool (JSONL).
        #[arg(long)]
        items: PathBuf,
        /// Seed for item selection.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export a finished study from its event log.
    Export {
        /// Study event log (JSONL) written by `serve`.
        #[arg(long)]
        log: PathBuf,
        /// Output directory.
        #[arg(long)]
        export: PathBuf,
        /// Task registry TOML; the built-in registry when omitted.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// 1 (answers, encoder and decoder trainable) or 2 (answer, rationale and location; encoder frozen).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// Size of the synthetic training corpus.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Passes over the corpus.
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    /// Seed for the corpus, initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the loss trace (JSON).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write the full-scale trainer manifest for this stage (TOML).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Report JSON written by `eval`.
    #[arg(long)]
    pub report: PathBuf,
    /// Output directory for the SVG charts.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub what: SynthWhat,
}

#[derive(Debug, Subcommand)]
pub enum SynthWhat {
    /// Annotation set JSON.
    Annotations {
        /// Number of synthetic patients (2 to 4 images each).
        #[arg(long, default_value_t = 50)]
        patients: usize,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output annotation set (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Screening cohort JSONL.
    Cohort {
        /// `home` or `hospital`; decides which tasks and modalities are generated.
        #[arg(long, default_value = "home")]
        mode: ScreeningMode,
        /// Number of patients.
        #[arg(long, default_value_t = 100)]
        patients: usize,
        /// Probability that an image-level prediction is wrong.
        #[arg(long, default_value_t = 0.0, value_parser = parse_probability)]
        error_rate: f64,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output cohort (JSONL).
        #[arg(long)]
        out: PathBuf,
    },
    /// Local endpoint (script.json + endpoint.toml) answering a corpus with a known flip rate.
    Endpoint {
        /// Corpus JSONL the endpoint will be asked about.
        #[arg(long)]
        corpus: PathBuf,
        /// Probability that a scripted answer is wrong.
        #[arg(long, default_value_t = 0.2, value_parser = parse_probability)]
        flip_rate: f64,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Task registry TOML; the built-in registry when omitted.
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reader-study item pool JSONL.
    StudyItems {
        /// Items generated per task.
        #[arg(long, default_value_t = 100)]
        per_task: usize,
        /// Probability that an item's model answer equals gold.
        #[arg(long, default_value_t = 0.8, value_parser = parse_probability)]
        model_accuracy: f64,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output item pool (JSONL).
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let f: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if f > 0.0 && f <= 1.0 {
        Ok(f)
    } else {
        Err(format!("{f} is outside (0, 1]"))
    }
}

fn parse_probability(s: &str) -> Result<f64, String> {
    let f: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&f) {
        Ok(f)
    } else {
        Err(format!("{f} is outside [0, 1]"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommandResult {
    pub exit_code: i32,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub data: serde_json::Value,
}

impl CommandResult {
    fn ok(summary: String, artifacts: Vec<PathBuf>, data: serde_json::Value) -> Self {
        CommandResult { exit_code: 0, summary, artifacts, data }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CliError(pub String);

fn fail<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError(format!("{context}: {e}"))
}

fn load_registry(path: Option<&Path>) -> Result<TaskRegistry, CliError> {
    match path {
        None => Ok(TaskRegistry::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(fail(&p.display().to_string()))?;
            TaskRegistry::from_toml(&text).map_err(fail(&p.display().to_string()))
        }
    }
}

pub fn execute(cli: &Cli) -> Result<CommandResult, CliError> {
    match &cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Screen(a) => cmd_screen(a),
        Command::Study(a) => cmd_study(a),
        Command::TrainToy(a) => cmd_train_toy(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn cmd_build(a: &BuildArgs) -> Result<CommandResult, CliError> {
    let registry = load_registry(a.registry.as_deref())?;
    let set = AnnotationSet::load(&a.annotations).map_err(fail("annotations"))?;
    let templates = QuestionTemplates::from_registry(&registry);
    let options = BuildOptions { languages: a.languages.clone(), seed: a.seed };
    let built = build_corpus(&set, &registry, &templates, &options).map_err(fail("build"))?;
    let mut records = built.records;
    let mut empty_tasks = Vec::new();
    if let Some(f) = a.fraction {
        let s = subsample(&records, f, a.seed).map_err(CliError)?;
        records = s.records;
        empty_tasks = s.empty_tasks;
    }
    write_corpus(&a.out, &records).map_err(fail("write corpus"))?;
    Ok(CommandResult::ok(
        format!("built {} records ({} flagged for review) -> {}", records.len(), built.review.len(), a.out.display()),
        vec![a.out.clone()],
        serde_json::json!({
            "records": records.len(),
            "review": built.review,
            "warnings": built.warnings,
            "empty_tasks": empty_tasks,
        }),
    ))
}

fn cmd_eval(a: &EvalArgs) -> Result<CommandResult, CliError> {
    let registry = load_registry(a.registry.as_deref())?;
    let records = read_corpus(&a.corpus).map_err(fail("corpus"))?;
    let endpoint = ModelEndpoint::load(&a.endpoint).map_err(fail("endpoint"))?;
    let adapter = Adapter::for_endpoint(&endpoint, Arc::new(SystemClock::new())).map_err(fail("endpoint"))?;
    let images = a.images.clone();
    let image_for = move |r: &crate::dataset::VQARecord| {
        let uri = format!("images/{}.png", r.image_id);
        match &images {
            Some(dir) => std::fs::read(dir.join(format!("{}.png", r.image_id)))
                .map(ImageRef::Bytes)
                .unwrap_or(ImageRef::Uri(uri)),
            None => ImageRef::Uri(uri),
        }
    };
    let (responses, failures) = adapter.infer_records(&records, &registry, image_for, a.protocol);
    let ci = match a.ci {
        CiArg::Fixed => CiMethod::Fixed,
        CiArg::StudentT => CiMethod::StudentT,
    };
    let report = evaluate(&records, &responses, &registry, &a.cohort, ci).map_err(fail("metrics"))?;
    let mut artifacts = vec![a.report.clone()];
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(fail("report"))?;
    }
    report.write_json(&a.report).map_err(fail("report"))?;
    let csv_path = a.report.with_extension("csv");
    report.write_csv(&csv_path).map_err(fail("report"))?;
    artifacts.push(csv_path);
    if let Some(dir) = &a.plots {
        artifacts.extend(report.write_plots(dir).map_err(fail("plots"))?);
    }
    let accuracy = report.pooled(MetricKind::Accuracy);
    let hit_rate = report.pooled(MetricKind::HitRate);
    let failed: BTreeMap<String, String> = failures.iter().map(|(id, e)| (id.clone(), e.to_string())).collect();
    Ok(CommandResult::ok(
        format!(
            "evaluated {} records ({} failed): accuracy {} (multi-class), hit rate {} (multi-label)",
            records.len(),
            failures.len(),
            accuracy.map_or("n/a".into(), |v| format!("{v:.4}")),
            hit_rate.map_or("n/a".into(), |v| format!("{v:.4}")),
        ),
        artifacts,
        serde_json::json!({ "records": records.len(), "accuracy": accuracy, "hit_rate": hit_rate, "failed": failed }),
    ))
}

fn cmd_screen(a: &ScreenArgs) -> Result<CommandResult, CliError> {
    let registry = load_registry(a.registry.as_deref())?;
    let cohort: Vec<PatientBundle> = read_jsonl(&a.cohort, COHORT_KIND).map_err(fail("cohort"))?;
    for b in &cohort {
        b.validate(&registry).map_err(fail("cohort"))?;
    }
    let tasks = a.mode.tasks(&registry).map_err(fail("screen"))?;
    let tie = match a.tie {
        TieArg::PreferAbnormal => TieRule::PreferAbnormal,
        TieArg::PreferNormal => TieRule::PreferNormal,
    };
    let score = matching_score(&cohort, &tasks, a.strategy, tie).map_err(fail("screen"))?;
    let mut artifacts = Vec::new();
    if let Some(p) = &a.voted {
        let lists: Vec<_> = cohort.iter().map(|b| voted_list(b, &tasks, a.strategy, tie)).collect();
        write_jsonl(p, "dentvqa.voted", &lists).map_err(fail("voted lists"))?;
        artifacts.push(p.clone());
    }
    Ok(CommandResult::ok(
        format!("matching score {score:.4} over {} patients", cohort.len()),
        artifacts,
        serde_json::json!({ "score": score, "patients": cohort.len(), "tasks": tasks.len() }),
    ))
}

fn cmd_study(a: &StudyArgs) -> Result<CommandResult, CliError> {
    match &a.action {
        StudyAction::Serve { port, host, log_dir, export, registry } => {
            let registry = load_registry(registry.as_deref())?;
            let mut state = http::ServiceState::new(Arc::new(SystemClock::new()), registry)
                .with_log_dir(log_dir.clone())
                .map_err(fail("study logs"))?;
            if let Some(dir) = export {
                state = state.with_export_dir(dir.clone());
            }
            let addr: SocketAddr = format!("{host}:{port}").parse().map_err(fail("address"))?;
            let rt = tokio::runtime::Runtime::new().map_err(fail("runtime"))?;
            rt.block_on(http::serve(Arc::new(state), addr, |bound| eprintln!("listening on http://{bound}")))
                .map_err(fail("serve"))?;
            Ok(CommandResult::ok("service stopped".into(), vec![], serde_json::Value::Null))
        }
        StudyAction::Plan { design, items, seed } => {
            let design: StudyDesign = match design {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(fail("design"))?;
                    serde_json::from_str(&text).map_err(fail("design"))?
                }
                None => StudyDesign::default(),
            };
            let pool: Vec<StudyItem> = read_jsonl(items, STUDY_ITEMS_KIND).map_err(fail("items"))?;
            let sets = design.plan(&pool, *seed).map_err(fail("plan"))?;
            let gv: Vec<usize> = sets.gv.iter().map(Vec::len).collect();
            Ok(CommandResult::ok(
                format!("{} independent-diagnosis items; group-validation subsets {gv:?}", sets.idp.len()),
                vec![],
                serde_json::json!({ "idp": sets.idp.len(), "gv": gv }),
            ))
        }
        StudyAction::Export { log, export, registry } => {
            let registry = load_registry(registry.as_deref())?;
            let study = Study::open(log, Arc::new(SystemClock::new())).map_err(fail("study log"))?;
            let files = study.export_to(&registry, export).map_err(fail("export"))?;
            Ok(CommandResult::ok(
                format!("exported {} files to {}", files.len(), export.display()),
                files,
                serde_json::Value::Null,
            ))
        }
    }
}

fn cmd_train_toy(a: &TrainToyArgs) -> Result<CommandResult, CliError> {
    let stage = Stage::try_from(a.stage).map_err(CliError)?;
    let (dims, corpus) = synthetic_corpus(a.samples, a.seed);
    let mut model = ToyModel::new(dims, a.seed);
    let config = ToyConfig { epochs: a.epochs, ..ToyConfig::for_stage(stage) };
    let trace = run_toy_training(&config, &corpus, &mut model, a.seed).map_err(fail("training"))?;
    let mut artifacts = Vec::new();
    if let Some(p) = &a.trace {
        std::fs::write(p, serde_json::to_string_pretty(&trace).expect("trace serializes")).map_err(fail("trace"))?;
        artifacts.push(p.clone());
    }
    if let Some(p) = &a.manifest {
        let text = emit_manifest(&StageConfig::defaults(stage)).map_err(fail("manifest"))?;
        std::fs::write(p, text).map_err(fail("manifest"))?;
        artifacts.push(p.clone());
    }
    Ok(CommandResult::ok(
        format!(
            "stage {stage}: loss {:.4} -> {:.4} over {} epochs",
            trace.initial_loss,
            trace.final_loss(),
            trace.epoch_losses.len()
        ),
        artifacts,
        serde_json::to_value(&trace).expect("trace serializes"),
    ))
}

fn cmd_plot(a: &PlotArgs) -> Result<CommandResult, CliError> {
    let text = std::fs::read_to_string(&a.report).map_err(fail("report"))?;
    let report: EvaluationReport = serde_json::from_str(&text).map_err(fail("report"))?;
    let files = report.write_plots(&a.out).map_err(fail("plots"))?;
    Ok(CommandResult::ok(
        format!("wrote {} charts to {}", files.len(), a.out.display()),
        files,
        serde_json::Value::Null,
    ))
}

fn cmd_synth(a: &SynthArgs) -> Result<CommandResult, CliError> {
    let registry = TaskRegistry::default();
    match &a.what {
        SynthWhat::Annotations { patients, seed, out } => {
            let set = synthetic::annotations(&registry, *patients, *seed);
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(fail("annotations"))?;
            }
            std::fs::write(out, serde_json::to_string_pretty(&set).expect("annotations serialize"))
                .map_err(fail("annotations"))?;
            Ok(CommandResult::ok(
                format!("{} images -> {}", set.images.len(), out.display()),
                vec![out.clone()],
                serde_json::Value::Null,
            ))
        }
        SynthWhat::Cohort { mode, patients, error_rate, seed, out } => {
            let c = synthetic::cohort(&registry, *mode, *patients, *error_rate, *seed);
            write_jsonl(out, COHORT_KIND, &c).map_err(fail("cohort"))?;
            Ok(CommandResult::ok(
                format!("{} patients -> {}", c.len(), out.display()),
                vec![out.clone()],
                serde_json::Value::Null,
            ))
        }
        SynthWhat::Endpoint { corpus, flip_rate, seed, registry: reg, out } => {
            let registry = load_registry(reg.as_deref())?;
            let records = read_corpus(corpus).map_err(fail("corpus"))?;
            let fs = synthetic::flip_script(&records, &registry, &LocationVocabulary::default(), *flip_rate, *seed);
            std::fs::create_dir_all(out).map_err(fail("endpoint"))?;
            let script = out.join("script.json");
            std::fs::write(&script, serde_json::to_string_pretty(&fs.script).expect("script serializes"))
                .map_err(fail("endpoint"))?;
            let endpoint = out.join("endpoint.toml");
            let ep = ModelEndpoint::local("scripted", "script.json");
            std::fs::write(&endpoint, toml::to_string(&ep).expect("endpoint serializes")).map_err(fail("endpoint"))?;
            Ok(CommandResult::ok(
                format!("{} scripted responses, {} flipped -> {}", records.len(), fs.flipped.len(), endpoint.display()),
                vec![script, endpoint],
                serde_json::json!({ "flipped": fs.flipped.len() }),
            ))
        }
        SynthWhat::StudyItems { per_task, model_accuracy, seed, out } => {
            let pool = synthetic::study_pool(&registry, *per_task, *model_accuracy, *seed);
            write_jsonl(out, STUDY_ITEMS_KIND, &pool).map_err(fail("items"))?;
            Ok(CommandResult::ok(
                format!("{} study items -> {}", pool.len(), out.display()),
                vec![out.clone()],
                serde_json::Value::Null,
            ))
        }
    }
}

/// Parse, run and report; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = execute(&cli).unwrap_or_else(|e| CommandResult {
        exit_code: 1,
        summary: format!("error: {e}"),
        artifacts: vec![],
        data: serde_json::Value::Null,
    });
    if cli.json {
        println!("{}", serde_json::to_string(&result).expect("result serializes"));
    } else if result.exit_code == 0 {
        println!("{}", result.summary);
    } else {
        eprintln!("{}", result.summary);
    }
    result.exit_code
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("dentvqa").chain(args.iter().copied()))
    }

    #[test]
    fn usage_errors_exit_2_and_help_exits_0() {
        assert_eq!(run(["dentvqa", "build"]), 2);
        assert_eq!(
            run(["dentvqa", "eval", "--corpus", "c", "--endpoint", "e", "--report", "r", "--protocol", "three-step"]),
            2
        );
        assert_eq!(run(["dentvqa", "--help"]), 0);
        assert_eq!(
            parse(&["build", "--annotations", "a", "--out", "o", "--fraction", "1.5"]).unwrap_err().exit_code(),
            2
        );
        assert_eq!(parse(&["train-toy", "--stage", "3"]).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn flags_parse() {
        let c = parse(&[
            "--json",
            "build",
            "--annotations",
            "a.json",
            "--out",
            "c.jsonl",
            "--languages",
            "en",
            "--fraction",
            "0.1",
        ])
        .unwrap();
        assert!(c.json);
        match c.command {
            Command::Build(b) => {
                assert_eq!(b.languages, vec![Language::En]);
                assert_eq!(b.fraction, Some(0.1));
            }
            other => panic!("{other:?}"),
        }
        let c = parse(&["screen", "--cohort", "x", "--mode", "hospital", "--strategy", "matching"]).unwrap();
        assert!(matches!(
            c.command,
            Command::Screen(ScreenArgs { mode: ScreeningMode::Hospital, strategy: Strategy::Matching, .. })
        ));
    }

    #[test]
    fn missing_input_is_a_runtime_error() {
        assert_eq!(run(["dentvqa", "build", "--annotations", "/nonexistent/a.json", "--out", "/tmp/x.jsonl"]), 1);
    }
}
