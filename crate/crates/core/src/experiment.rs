//! Config-driven searches: load, encode, split, then propose, materialize,
//! train and report until the trial budget or the space runs out.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, load_table, DataError, PreparedData, Schema, VocabOptions};
use crate::graph::{
    build_space, materialize_model, validate_graph, GraphError, GraphSpec, HpOverride,
};
use crate::hash::derive_seed;
use crate::recipes::{build_recipe, RecipeError};
use crate::space::{Assignment, HpValue};
use crate::trainer::{train_trial, TrainConfig};
use crate::tuners::{Oracle, Outcome, Proposal, Tuner, TunerError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("pipeline: {0}")]
    Graph(#[from] GraphError),
    #[error("recipe: {0}")]
    Recipe(#[from] RecipeError),
    #[error("tuner: {0}")]
    Tuner(#[from] TunerError),
    #[error("report: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// Whether the failure is in the user's configuration rather than at
    /// run time.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Self::Config(_)
                | Self::Graph(_)
                | Self::Recipe(_)
                | Self::Data(DataError::Schema(_))
                | Self::Tuner(TunerError::UnknownTuner(_))
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// `movielens`, `criteo`, `avazu`, or `custom` with an explicit schema.
    #[serde(default = "custom")]
    pub format: String,
    #[serde(default)]
    pub schema: Option<Schema>,
    /// Keep only the first rows of the file.
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default = "one")]
    pub min_count: usize,
    #[serde(default)]
    pub hash_buckets: Option<usize>,
}

fn custom() -> String {
    "custom".into()
}

fn one() -> usize {
    1
}

impl DatasetConfig {
    pub fn schema(&self) -> Result<Schema, ExperimentError> {
        match (&self.schema, Schema::preset(&self.format)) {
            (Some(s), _) => Ok(s.clone()),
            (None, Some(s)) => Ok(s),
            (None, None) => Err(ExperimentError::Config(format!(
                "dataset format `{}` needs an explicit [dataset.schema]",
                self.format
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub recipe: Option<String>,
    #[serde(default)]
    pub blocks: Option<Vec<crate::graph::BlockSpec>>,
    #[serde(default)]
    pub learning_rate: Option<HpOverride>,
    #[serde(default)]
    pub embedding_dim: Option<HpOverride>,
    /// Block hyperparameter overrides keyed `"<block id>/<name>"`.
    #[serde(default)]
    pub overrides: IndexMap<String, HpOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunerConfig {
    pub name: String,
    #[serde(default = "ten")]
    pub max_trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn ten() -> usize {
    10
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            name: "random".into(),
            max_trials: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "ten")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "one")]
    pub early_stop_patience: usize,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
}

fn default_batch() -> usize {
    1024
}

fn default_eval_batch() -> usize {
    8192
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: default_batch(),
            early_stop_patience: 1,
            eval_batch_size: default_eval_batch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Fill the `seconds` column of `trials.csv`. Off by default so reruns
    /// produce identical bytes; wall time always goes to `trials.log`.
    #[serde(default)]
    pub timings: bool,
    /// Write one metrics file per trial.
    #[serde(default)]
    pub metrics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub tuner: TunerConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Reads a config; a relative dataset path is resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.dataset.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset.path = dir.join(&cfg.dataset.path);
            }
        }
        Ok(cfg)
    }

    pub fn tuner(&self) -> Result<Tuner, ExperimentError> {
        Ok(self.tuner.name.parse()?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            early_stop_patience: self.training.early_stop_patience,
            eval_batch_size: self.training.eval_batch_size,
            seed: 0,
        }
    }

    /// Recipe name or `"custom"`.
    pub fn pipeline_name(&self) -> &str {
        self.pipeline.recipe.as_deref().unwrap_or("custom")
    }

    /// The searchable graph described by the pipeline section.
    pub fn graph(&self, schema: &Schema) -> Result<GraphSpec, ExperimentError> {
        let p = &self.pipeline;
        let mut graph = match (&p.recipe, &p.blocks) {
            (Some(r), None) => build_recipe(r, schema)?,
            (None, Some(blocks)) => GraphSpec::new(blocks.clone()),
            _ => {
                return Err(ExperimentError::Config(
                    "pipeline needs exactly one of `recipe` and `blocks`".into(),
                ))
            }
        };
        if let Some(o) = &p.learning_rate {
            graph.learning_rate = o.clone().into_kind();
        }
        if let Some(o) = &p.embedding_dim {
            graph.embedding_dim = o.clone().into_kind();
        }
        for (key, o) in &p.overrides {
            let (block, name) = key.split_once('/').ok_or_else(|| {
                ExperimentError::Config(format!("override `{key}` is not `<block>/<name>`"))
            })?;
            let b = graph
                .blocks
                .iter_mut()
                .find(|b| b.id == block)
                .ok_or_else(|| {
                    ExperimentError::Config(format!("override `{key}`: no block `{block}`"))
                })?;
            b.hyperparameters.insert(name.to_string(), o.clone());
        }
        validate_graph(&graph)?;
        Ok(graph)
    }

    /// Checks everything that can be checked without training.
    pub fn check(&self) -> Result<GraphSpec, ExperimentError> {
        self.tuner()?;
        self.train_config()
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        if !self.dataset.path.exists() {
            return Err(ExperimentError::Config(format!(
                "dataset {} does not exist",
                self.dataset.path.display()
            )));
        }
        let schema = self.schema()?;
        let graph = self.graph(&schema)?;
        build_space(&graph)?;
        Ok(graph)
    }

    fn schema(&self) -> Result<Schema, ExperimentError> {
        let s = self.dataset.schema()?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: usize,
    /// Output directory for the report and trial log.
    pub out_dir: Option<PathBuf>,
    /// Replay `trials.log` from `out_dir` before searching.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    pub assignment: Assignment,
    pub val_score: Option<f64>,
    pub test_score: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub tuner: String,
    pub recipe: String,
    pub dataset: String,
    pub metric: String,
    /// Sorted by trial id.
    pub rows: Vec<TrialRow>,
    pub best_trial: Option<usize>,
    pub timings: bool,
}

impl Report {
    pub fn best(&self) -> Option<&TrialRow> {
        self.best_trial
            .and_then(|id| self.rows.iter().find(|r| r.trial == id))
    }
}

/// One line of `trials.log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub trial: usize,
    pub tuner: String,
    pub assignment: String,
    pub values: Assignment,
    pub score: Option<f64>,
    pub test_score: Option<f64>,
    pub seconds: f64,
}

pub fn read_trial_log(path: &Path) -> Result<Vec<LogRecord>, ExperimentError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(&line).map_err(|e| {
            ExperimentError::Config(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Result of one trial on a worker.
struct Finished {
    trial: usize,
    val: Option<f64>,
    test: Option<f64>,
    seconds: f64,
}

fn run_one(
    graph: &GraphSpec,
    data: &PreparedData,
    assignment: &Assignment,
    train_cfg: &TrainConfig,
    seed: u64,
    trial: usize,
    metrics: Option<PathBuf>,
) -> Finished {
    let start = Instant::now();
    let trial_seed = derive_seed(seed, &format!("trial/{trial}"));
    let result = materialize_model(graph, assignment, trial_seed, &data.info)
        .map_err(|e| e.to_string())
        .and_then(|mut model| {
            let cfg = TrainConfig {
                seed: trial_seed,
                ..*train_cfg
            };
            train_trial(
                &mut model,
                &data.train,
                &data.val,
                Some(&data.test),
                &cfg,
                metrics.as_deref(),
            )
            .map_err(|e| e.to_string())
        });
    let seconds = start.elapsed().as_secs_f64();
    match result {
        Ok(r) => Finished {
            trial,
            val: Some(r.best_val),
            test: r.test_score,
            seconds,
        },
        Err(e) => {
            log::warn!("trial {trial} failed: {e}");
            Finished {
                trial,
                val: None,
                test: None,
                seconds,
            }
        }
    }
}

/// Loads, encodes and splits the configured dataset.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedData, ExperimentError> {
    let schema = cfg.schema()?;
    let table = load_table(&cfg.dataset.path, &schema, cfg.dataset.limit)?;
    let opts = VocabOptions {
        min_count: cfg.dataset.min_count,
        hash_buckets: cfg.dataset.hash_buckets,
    };
    Ok(data::prepare(
        &schema,
        &table,
        derive_seed(seed, "data"),
        opts,
    )?)
}

/// Runs the search described by `cfg`, writing the report and trial log
/// when `opts.out_dir` is set.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<Report, ExperimentError> {
    let graph = cfg.check()?;
    let tuner = cfg.tuner()?;
    let seed = cfg.tuner.seed;
    let data = prepare_data(cfg, seed)?;
    if data.info.task != cfg.schema()?.task()? {
        return Err(ExperimentError::Config(
            "schema task changed during encoding".into(),
        ));
    }
    let space = build_space(&graph)?;
    let mut oracle = Oracle::new(space, seed, cfg.tuner.max_trials);
    let train_cfg = cfg.train_config();

    let mut rows: HashMap<usize, TrialRow> = HashMap::new();
    let mut log = None;
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("trials.log");
        if opts.resume && path.exists() {
            for rec in read_trial_log(&path)? {
                let outcome = rec.score.map_or(Outcome::Failed, Outcome::Completed);
                oracle.restore(rec.trial, rec.values.clone(), outcome)?;
                rows.insert(
                    rec.trial,
                    TrialRow {
                        trial: rec.trial,
                        assignment: rec.values,
                        val_score: rec.score,
                        test_score: rec.test_score,
                        seconds: rec.seconds,
                    },
                );
            }
        }
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .append(opts.resume)
            .truncate(!opts.resume)
            .open(&path)
            .map_err(io_err(&path))?;
        log = Some((path, f));
    }

    let workers = opts.workers.max(1);
    let metrics_dir = match (&opts.out_dir, cfg.report.metrics) {
        (Some(d), true) => {
            let m = d.join("metrics");
            fs::create_dir_all(&m).map_err(io_err(&m))?;
            Some(m)
        }
        _ => None,
    };

    let mut record = |oracle: &mut Oracle, f: Finished| -> Result<(), ExperimentError> {
        let outcome = f.val.map_or(Outcome::Failed, Outcome::Completed);
        oracle.report_completion(f.trial, outcome)?;
        let assignment = oracle
            .trial(f.trial)
            .map(|t| t.assignment.clone())
            .unwrap_or_default();
        log::info!(
            "trial {} {}: val={:?} test={:?} ({:.1}s)",
            f.trial,
            assignment.canonical_key(),
            f.val,
            f.test,
            f.seconds
        );
        if let Some((path, file)) = log.as_mut() {
            let rec = LogRecord {
                trial: f.trial,
                tuner: tuner.name().into(),
                assignment: assignment.canonical_key(),
                values: assignment.clone(),
                score: f.val,
                test_score: f.test,
                seconds: f.seconds,
            };
            let line = serde_json::to_string(&rec).expect("log record serializes");
            writeln!(file, "{line}").map_err(io_err(path))?;
        }
        rows.insert(
            f.trial,
            TrialRow {
                trial: f.trial,
                assignment,
                val_score: f.val,
                test_score: f.test,
                seconds: f.seconds,
            },
        );
        Ok(())
    };

    let metrics_path = |trial: usize| {
        metrics_dir
            .as_ref()
            .map(|d| d.join(format!("trial_{trial:04}.jsonl")))
    };

    if workers == 1 {
        while let Proposal::Trial(id) = tuner.next_trial(&mut oracle) {
            oracle.mark_running(id)?;
            let a = oracle.trial(id).expect("registered").assignment.clone();
            let f = run_one(&graph, &data, &a, &train_cfg, seed, id, metrics_path(id));
            record(&mut oracle, f)?;
        }
    } else {
        std::thread::scope(|scope| -> Result<(), ExperimentError> {
            let (tx, rx) = mpsc::channel::<Finished>();
            let mut running = 0;
            let mut open = true;
            loop {
                while open && running < workers {
                    match tuner.next_trial(&mut oracle) {
                        Proposal::Trial(id) => {
                            oracle.mark_running(id)?;
                            let a = oracle.trial(id).expect("registered").assignment.clone();
                            let tx = tx.clone();
                            let (graph, data, train_cfg) = (&graph, &data, &train_cfg);
                            let metrics = metrics_path(id);
                            scope.spawn(move || {
                                let f = run_one(graph, data, &a, train_cfg, seed, id, metrics);
                                let _ = tx.send(f);
                            });
                            running += 1;
                        }
                        _ => open = false,
                    }
                }
                if running == 0 {
                    break;
                }
                let f = rx.recv().expect("a worker is running");
                running -= 1;
                record(&mut oracle, f)?;
            }
            Ok(())
        })?;
    }

    let mut rows: Vec<TrialRow> = rows.into_values().collect();
    rows.sort_by_key(|r| r.trial);
    let report = Report {
        tuner: tuner.name().into(),
        recipe: cfg.pipeline_name().into(),
        dataset: cfg.dataset.path.display().to_string(),
        metric: data.info.task.metric().into(),
        best_trial: oracle.best().map(|t| t.id),
        rows,
        timings: cfg.report.timings,
    };
    if let Some(dir) = &opts.out_dir {
        write_report(&report, dir)?;
    }
    Ok(report)
}

fn fixed6(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.6}"),
        None => String::new(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn json_number(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.6}"),
        _ => "null".into(),
    }
}

fn json_value(v: &HpValue) -> String {
    match v {
        HpValue::Float(x) => format!("{x:.6}"),
        other => serde_json::to_string(other).expect("value serializes"),
    }
}

/// The `trials.csv` text.
pub fn trials_csv(report: &Report) -> String {
    let mut out = String::from("trial,assignment,val_score,test_score,seconds\n");
    for r in &report.rows {
        let seconds = if report.timings {
            format!("{:.6}", r.seconds)
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.trial,
            csv_field(&r.assignment.canonical_key()),
            fixed6(r.val_score),
            fixed6(r.test_score),
            seconds
        );
    }
    out
}

/// The `summary.json` text.
pub fn summary_json(report: &Report) -> String {
    let best = report.best();
    let str_json = |s: &str| serde_json::to_string(s).expect("string serializes");
    let assignment = match best {
        Some(b) => {
            let fields: Vec<String> = b
                .assignment
                .iter()
                .map(|(k, v)| format!("    {}: {}", str_json(k), json_value(v)))
                .collect();
            if fields.is_empty() {
                "{}".to_string()
            } else {
                format!("{{\n{}\n  }}", fields.join(",\n"))
            }
        }
        None => "null".into(),
    };
    let completed = report.rows.iter().filter(|r| r.val_score.is_some()).count();
    format!(
        "{{\n  \"tuner\": {},\n  \"recipe\": {},\n  \"dataset\": {},\n  \"metric\": {},\n  \"trials\": {},\n  \"completed\": {},\n  \"failed\": {},\n  \"best_trial\": {},\n  \"best_val\": {},\n  \"best_test\": {},\n  \"best_assignment\": {}\n}}\n",
        str_json(&report.tuner),
        str_json(&report.recipe),
        str_json(&report.dataset),
        str_json(&report.metric),
        report.rows.len(),
        completed,
        report.rows.len() - completed,
        best.map_or("null".into(), |b| b.trial.to_string()),
        json_number(best.and_then(|b| b.val_score)),
        json_number(best.and_then(|b| b.test_score)),
        assignment,
    )
}

/// Writes `trials.csv` and `summary.json` into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv = dir.join("trials.csv");
    fs::write(&csv, trials_csv(report)).map_err(io_err(&csv))?;
    let summary = dir.join("summary.json");
    fs::write(&summary, summary_json(report)).map_err(io_err(&summary))?;
    Ok(())
}
