//! Batch commands behind the `epicast` binary: `validate`, `run` and `score`.
//!
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 runtime failure.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::forecast::ForecastDoc;
use crate::harness::{
    cross_validate, ensemble_cases, relative_mae, rolling_origin_test, score_cases, select_models, train_ensemble,
    CaseForecast, CvMode, CvResult, ModelEntry, ModelTest, SplitSpec, SpreadRule,
};
use crate::ingest::{read_incidence_csv, Diagnostic};
use crate::models::{ForecasterRegistry, ForecasterSpec};
use crate::nowcast::{
    estimate_completeness, nowcast_recent, read_vintage_csv, triangles, truncate_incomplete, CompletenessProfile,
    NowcastRow,
};
use crate::scoring::{write_score_csv, CaseId, CaseScore, Metric, MetricRegistry, ScoreReport};
use crate::series::{realized_target, Target, TimeSeries};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// A failed command: exit code, the stage that failed, and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub stage: &'static str,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    fn config(stage: &'static str, message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            stage,
            message: message.into(),
        }
    }

    fn data(stage: &'static str, message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            stage,
            message: message.into(),
        }
    }

    /// Classify a library error raised during `stage`.
    fn from_error(stage: &'static str, e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::UnknownName { .. } | Error::Json(_) => EXIT_CONFIG,
            Error::Data(_) | Error::Csv(_) | Error::UnknownSeason(_) => EXIT_DATA,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            stage,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn stage<T>(name: &'static str, r: crate::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::from_error(name, e))
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Incidence CSV, relative to the config file.
    pub incidence: PathBuf,
    pub cycle_length: usize,
    /// Calendar position of time index 1.
    #[serde(default = "one")]
    pub t0: i64,
}

fn one() -> i64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    pub spec: ForecasterSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default = "ensemble_id")]
    pub id: String,
    pub components: Vec<String>,
    /// Train weights by EM on cross-validated forecasts; uniform otherwise.
    #[serde(default = "yes")]
    pub trained: bool,
}

fn ensemble_id() -> String {
    "ensemble".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NowcastConfig {
    /// Vintage CSV, relative to the config file.
    pub vintages: PathBuf,
    /// Number of most recent event times treated as incomplete.
    pub k: usize,
    /// Defaults to the latest report time in the vintages.
    #[serde(default)]
    pub report_time: Option<i64>,
    /// Fixed completeness profile; estimated from matured events otherwise.
    #[serde(default)]
    pub profile: Option<Vec<f64>>,
    /// Also drop the last `k` observations of every incidence series
    /// before model fitting.
    #[serde(default)]
    pub truncate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub split: SplitSpec,
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub ensemble: Option<EnsembleConfig>,
    /// Metrics for test-phase score CSVs.
    pub metrics: Vec<String>,
    /// Metric for cross-validation error.
    #[serde(default = "default_cv_metric")]
    pub cv_metric: String,
    #[serde(default)]
    pub cv_mode: CvMode,
    #[serde(default)]
    pub spread_rule: SpreadRule,
    /// Model id used as the rMAE reference.
    #[serde(default)]
    pub baseline: Option<String>,
    #[serde(default)]
    pub nowcast: Option<NowcastConfig>,
    /// Required; `--seed` overrides it.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_cv_metric() -> String {
    "log_mae".into()
}

/// Command-line overrides for `run`.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

/// A config ready to execute: overrides applied, references checked.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub seed: u64,
    pub base_dir: PathBuf,
    pub output_dir: PathBuf,
    pub config_sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load_config(path: &Path, opts: &RunOptions) -> CliResult<ResolvedConfig> {
    const STAGE: &str = "load_config";
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(STAGE, format!("cannot read {}: {e}", path.display())))?;
    let mut config: RunConfig =
        serde_json::from_str(&text).map_err(|e| CliError::config(STAGE, format!("{}: {e}", path.display())))?;
    let seed = opts
        .seed
        .or(config.seed)
        .ok_or_else(|| CliError::config(STAGE, "seed is required (set \"seed\" or pass --seed)"))?;
    config.seed = Some(seed);
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let output_dir = opts
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(|p| base_dir.join(p)))
        .ok_or_else(|| CliError::config(STAGE, "no output directory (set \"output_dir\" or pass --out)"))?;

    let exists = |p: &Path| -> CliResult<()> {
        if base_dir.join(p).is_file() {
            Ok(())
        } else {
            Err(CliError::config(STAGE, format!("referenced file {} does not exist", p.display())))
        }
    };
    exists(&config.data.incidence)?;
    if let Some(n) = &config.nowcast {
        exists(&n.vintages)?;
        if let Some(p) = &n.profile {
            stage(STAGE, CompletenessProfile::new(p.clone()).map_err(|e| Error::Config(e.to_string())))?;
        }
    }
    if config.data.cycle_length == 0 {
        return Err(CliError::config(STAGE, "cycle_length must be at least 1"));
    }
    if config.models.is_empty() {
        return Err(CliError::config(STAGE, "no models configured"));
    }
    let metrics = MetricRegistry::default();
    for m in config.metrics.iter().chain(std::iter::once(&config.cv_metric)) {
        stage(STAGE, metrics.get(m).map(|_| ()))?;
    }
    let registry = ForecasterRegistry::default();
    let mut ids = std::collections::BTreeSet::new();
    for m in &config.models {
        if !ids.insert(m.id.as_str()) {
            return Err(CliError::config(STAGE, format!("duplicate model id '{}'", m.id)));
        }
        stage(STAGE, registry.build(&m.spec).map(|_| ()).map_err(|e| Error::Config(format!("model '{}': {e}", m.id))))?;
    }
    let known = |id: &str| config.models.iter().any(|m| m.id == id);
    if let Some(b) = &config.baseline {
        if !known(b) {
            return Err(CliError::config(STAGE, format!("baseline '{b}' is not a configured model")));
        }
    }
    if let Some(e) = &config.ensemble {
        if e.components.len() < 2 {
            return Err(CliError::config(STAGE, "ensemble needs at least 2 components"));
        }
        if let Some(c) = e.components.iter().find(|c| !known(c)) {
            return Err(CliError::config(STAGE, format!("ensemble component '{c}' is not a configured model")));
        }
        if known(&e.id) {
            return Err(CliError::config(STAGE, format!("ensemble id '{}' clashes with a model id", e.id)));
        }
    }
    stage(
        STAGE,
        SplitSpec::new(config.split.training_seasons.clone(), config.split.testing_seasons.clone())
            .map_err(|e| Error::Config(e.to_string())),
    )?;

    // hash the effective configuration, independent of where outputs go
    let mut canonical = config.clone();
    canonical.output_dir = None;
    let config_sha256 = sha256_hex(serde_json::to_string(&canonical).expect("config serializes").as_bytes());
    Ok(ResolvedConfig {
        config,
        seed,
        base_dir,
        output_dir,
        config_sha256,
    })
}

// ---------------------------------------------------------------- run

/// Everything a run produced, before it is written out.
#[derive(Debug)]
pub struct RunArtifacts {
    pub files: BTreeMap<String, Vec<u8>>,
}

fn csv_bytes(comment: &str, header: &[&str], rows: Vec<Vec<String>>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    writeln!(buf, "# {comment}").expect("write to memory");
    let mut w = csv::Writer::from_writer(&mut buf);
    let io = |e: csv::Error| CliError::from_error("write_outputs", e.into());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::from_error("write_outputs", e.into()))?;
    drop(w);
    Ok(buf)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn json_bytes(value: &serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("json serializes");
    s.push('\n');
    s.into_bytes()
}

fn load_series(rc: &ResolvedConfig) -> CliResult<Vec<TimeSeries>> {
    let path = rc.base_dir.join(&rc.config.data.incidence);
    let file = fs::File::open(&path).map_err(|e| CliError::data("ingest", format!("{}: {e}", path.display())))?;
    let series = read_incidence_csv(file, rc.config.data.cycle_length, rc.config.data.t0).map_err(|d| {
        CliError::data(
            "ingest",
            d.iter().map(Diagnostic::to_string).collect::<Vec<_>>().join("; "),
        )
    })?;
    if series.is_empty() {
        return Err(CliError::data("ingest", "incidence file has no rows"));
    }
    match &rc.config.nowcast {
        Some(n) if n.truncate => series
            .iter()
            .map(|s| stage("nowcast", truncate_incomplete(s, n.k)))
            .collect(),
        _ => Ok(series),
    }
}

fn run_nowcast(rc: &ResolvedConfig, n: &NowcastConfig) -> CliResult<Vec<NowcastRow>> {
    const STAGE: &str = "nowcast";
    let path = rc.base_dir.join(&n.vintages);
    let file = fs::File::open(&path).map_err(|e| CliError::data(STAGE, format!("{}: {e}", path.display())))?;
    let records = read_vintage_csv(file).map_err(|p| CliError::data(STAGE, p.join("; ")))?;
    let latest = records.iter().map(|r| r.report_time).max();
    let report_time = n
        .report_time
        .or(latest)
        .ok_or_else(|| CliError::data(STAGE, "vintage file has no rows"))?;
    let mut rows = Vec::new();
    for tri in stage(STAGE, triangles(&records))?.values() {
        let profile = match &n.profile {
            Some(p) => stage(STAGE, CompletenessProfile::new(p.clone()))?,
            None => {
                let (first, _) = tri.event_span().expect("triangle built from records");
                let matured = report_time - tri.max_delay() as i64;
                stage(STAGE, estimate_completeness(tri, first..=matured))?
            }
        };
        rows.extend(stage(STAGE, nowcast_recent(tri, &profile, report_time, n.k))?);
    }
    Ok(rows)
}

fn report(metric: &dyn Metric, model_id: &str, cases: &[CaseForecast]) -> CliResult<ScoreReport> {
    Ok(ScoreReport::new(model_id, metric.name(), stage("scoring", score_cases(metric, cases))?))
}

/// Execute a resolved config and return the output files (name → bytes).
pub fn execute(rc: &ResolvedConfig) -> CliResult<RunArtifacts> {
    let cfg = &rc.config;
    let hash_line = format!("config_sha256={}", rc.config_sha256);
    let data = load_series(rc)?;
    for s in &data {
        stage("ingest", cfg.split.resolve(s))?;
    }

    let registry = ForecasterRegistry::default();
    let models: Vec<ModelEntry> = cfg
        .models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let spec = m.spec.clone().with_seed(rc.seed.wrapping_add(i as u64));
            stage("load_config", ModelEntry::from_spec(m.id.clone(), &spec, &registry))
        })
        .collect::<CliResult<_>>()?;
    let metrics_reg = MetricRegistry::default();
    let cv_metric = stage("load_config", metrics_reg.get(&cfg.cv_metric))?;
    let mut metric_names = cfg.metrics.clone();
    if !metric_names.contains(&cfg.cv_metric) {
        metric_names.push(cfg.cv_metric.clone());
    }
    let metrics: Vec<Arc<dyn Metric>> = metric_names
        .iter()
        .map(|m| stage("load_config", metrics_reg.get(m)))
        .collect::<CliResult<_>>()?;

    // cross-validation and selection
    let cv: Vec<CvResult> = models
        .iter()
        .map(|m| stage("cross_validation", cross_validate(m, &data, &cfg.split, cv_metric.as_ref(), cfg.cv_mode)))
        .collect::<CliResult<_>>()?;
    let selection = stage("selection", select_models(&cv, cfg.spread_rule))?;

    // prospective testing
    let tests: Vec<ModelTest> = stage("rolling_origin_test", rolling_origin_test(&models, &data, &cfg.split))?;
    let mut test_cases: Vec<(String, usize, Vec<CaseForecast>)> =
        tests.iter().map(|t| (t.model_id.clone(), t.size, t.cases.clone())).collect();

    // ensemble
    let mut ensemble_json = None;
    if let Some(e) = &cfg.ensemble {
        let idx = |id: &String| models.iter().position(|m| &m.id == id).expect("validated");
        let cv_sets: Vec<&[CaseForecast]> = e.components.iter().map(|c| cv[idx(c)].cases.as_slice()).collect();
        let (weights, degenerate, iterations) = if e.trained {
            let t = stage("ensemble", train_ensemble(&cv_sets))?;
            (t.weights, t.degenerate, t.iterations)
        } else {
            (vec![1.0 / e.components.len() as f64; e.components.len()], false, 0)
        };
        let test_sets: Vec<&[CaseForecast]> = e.components.iter().map(|c| tests[idx(c)].cases.as_slice()).collect();
        let mixed = stage("ensemble", ensemble_cases(&test_sets, &weights))?;
        let spec = stage("ensemble", crate::ensemble::EnsembleSpec::new(e.components.clone(), weights))?;
        ensemble_json = Some(serde_json::json!({
            "config_sha256": rc.config_sha256,
            "id": e.id,
            "trained": e.trained,
            "degenerate": degenerate,
            "iterations": iterations,
            "weights": spec.weights_json(),
        }));
        test_cases.push((e.id.clone(), 0, mixed));
    }

    let mut reports = Vec::new();
    for metric in &metrics {
        for (id, _, cases) in &test_cases {
            reports.push(report(metric.as_ref(), id, cases)?);
        }
    }

    let mut files = BTreeMap::new();
    let mut scores = Vec::new();
    writeln!(scores, "# {hash_line}").expect("write to memory");
    stage("write_outputs", write_score_csv(&mut scores, &reports))?;
    files.insert("scores_test.csv".to_string(), scores);

    let mut cv_rows = Vec::new();
    for r in &cv {
        for f in &r.folds {
            cv_rows.push(vec![
                r.model_id.clone(),
                r.size.to_string(),
                f.season.clone(),
                fmt_opt(f.score),
                f.error.clone().map_or("ok".to_string(), |e| format!("failed: {e}")),
            ]);
        }
    }
    files.insert(
        "cv_table.csv".into(),
        csv_bytes(&hash_line, &["model", "size", "fold", "score", "status"], cv_rows)?,
    );
    let summary_rows = cv
        .iter()
        .map(|r| {
            vec![
                r.model_id.clone(),
                r.size.to_string(),
                r.metric.clone(),
                r.cv_error.to_string(),
                r.cv_sd.to_string(),
                r.cv_se.to_string(),
                (r.folds.len() - r.failed_folds()).to_string(),
                r.failed_folds().to_string(),
                fmt_opt(r.training_error),
            ]
        })
        .collect();
    files.insert(
        "cv_summary.csv".into(),
        csv_bytes(
            &hash_line,
            &["model", "size", "metric", "cv_error", "cv_sd", "cv_se", "folds_ok", "folds_failed", "training_error"],
            summary_rows,
        )?,
    );

    let cv_metric_name = cv_metric.name();
    let test_error = |id: &str| {
        reports
            .iter()
            .find(|r| r.model_id == id && r.metric == cv_metric_name)
            .map(|r| r.aggregate)
    };
    let plot_rows = cv
        .iter()
        .map(|r| {
            vec![
                r.model_id.clone(),
                r.size.to_string(),
                fmt_opt(r.training_error),
                r.cv_error.to_string(),
                fmt_opt(test_error(&r.model_id)),
            ]
        })
        .collect();
    files.insert(
        "plot_error_by_size.csv".into(),
        csv_bytes(&hash_line, &["model", "size", "training_error", "cv_error", "test_error"], plot_rows)?,
    );

    let mut rmae = serde_json::Map::new();
    if let Some(b) = &cfg.baseline {
        let base = tests.iter().find(|t| &t.model_id == b).expect("validated");
        for t in &tests {
            let v = relative_mae(t, base).ok().filter(|v| v.is_finite());
            rmae.insert(t.model_id.clone(), serde_json::json!(v));
        }
    }
    let refit_failures: Vec<_> = tests
        .iter()
        .flat_map(|t| t.refits.iter().filter(|r| r.error.is_some()).map(move |r| (t.model_id.clone(), r)))
        .map(|(id, r)| serde_json::json!({"model": id, "season": r.season, "location": r.location, "error": r.error}))
        .collect();
    let selection_json = serde_json::json!({
        "config_sha256": rc.config_sha256,
        "cv_metric": cv_metric_name,
        "spread_rule": cfg.spread_rule,
        "best": selection.best,
        "parsimonious": selection.parsimonious,
        "models": cv.iter().map(|r| serde_json::json!({
            "id": r.model_id,
            "size": r.size,
            "cv_error": r.cv_error,
            "cv_se": r.cv_se,
        })).collect::<Vec<_>>(),
        "baseline": cfg.baseline,
        "rmae": rmae,
        "test_refit_failures": refit_failures,
    });
    files.insert("selection.json".into(), json_bytes(&selection_json));
    if let Some(e) = ensemble_json {
        files.insert("ensemble_weights.json".into(), json_bytes(&e));
    }

    if let Some(n) = &cfg.nowcast {
        let rows = run_nowcast(rc, n)?
            .into_iter()
            .map(|r| {
                vec![
                    r.location,
                    r.event_time.to_string(),
                    r.delay.to_string(),
                    r.partial.to_string(),
                    r.completeness.to_string(),
                    r.point.to_string(),
                    r.mean.to_string(),
                ]
            })
            .collect();
        files.insert(
            "nowcast.csv".into(),
            csv_bytes(
                &hash_line,
                &["location", "event_time", "delay", "partial", "completeness", "point", "mean"],
                rows,
            )?,
        );
    }

    let mut inputs = serde_json::Map::new();
    let mut input_paths = vec![cfg.data.incidence.clone()];
    if let Some(n) = &cfg.nowcast {
        input_paths.push(n.vintages.clone());
    }
    for p in input_paths {
        let bytes = fs::read(rc.base_dir.join(&p)).map_err(|e| CliError::data("write_outputs", e.to_string()))?;
        inputs.insert(p.display().to_string(), serde_json::json!(sha256_hex(&bytes)));
    }
    let outputs: serde_json::Map<String, serde_json::Value> = files
        .iter()
        .map(|(name, bytes)| (name.clone(), serde_json::json!(sha256_hex(bytes))))
        .collect();
    let manifest = serde_json::json!({
        "config_sha256": rc.config_sha256,
        "seed": rc.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "inputs": inputs,
        "outputs": outputs,
    });
    files.insert("run_manifest.json".into(), json_bytes(&manifest));
    Ok(RunArtifacts { files })
}

/// `run`: execute the config and write every artifact to the output directory.
pub fn cmd_run(config_path: &Path, opts: &RunOptions) -> CliResult<ResolvedConfig> {
    let rc = load_config(config_path, opts)?;
    let artifacts = match opts.jobs {
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| CliError::config("load_config", format!("thread pool: {e}")))?;
            pool.install(|| execute(&rc))?
        }
        None => execute(&rc)?,
    };
    fs::create_dir_all(&rc.output_dir).map_err(|e| CliError::from_error("write_outputs", e.into()))?;
    for (name, bytes) in &artifacts.files {
        fs::write(rc.output_dir.join(name), bytes).map_err(|e| CliError::from_error("write_outputs", e.into()))?;
    }
    Ok(rc)
}

// ---------------------------------------------------------------- validate

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileProblem {
    pub file: String,
    pub line: usize,
    pub message: String,
}

/// `validate`: schema-check incidence and vintage CSVs (detected by header).
/// Returns every problem; empty means clean.
pub fn cmd_validate(paths: &[PathBuf]) -> Vec<FileProblem> {
    let mut out = Vec::new();
    for p in paths {
        let file = p.display().to_string();
        let text = match fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => {
                out.push(FileProblem {
                    file,
                    line: 0,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let header = text.lines().next().unwrap_or_default();
        if header.split(',').any(|h| h.trim() == "report_time") {
            if let Err(problems) = read_vintage_csv(text.as_bytes()) {
                for msg in problems {
                    let (line, message) = split_line_prefix(&msg);
                    out.push(FileProblem {
                        file: file.clone(),
                        line,
                        message,
                    });
                }
            }
        } else if let Err(diags) = read_incidence_csv(text.as_bytes(), 1, 1) {
            out.extend(diags.into_iter().map(|d| FileProblem {
                file: file.clone(),
                line: d.line,
                message: d.message,
            }));
        }
    }
    out
}

fn split_line_prefix(msg: &str) -> (usize, String) {
    msg.strip_prefix("line ")
        .and_then(|rest| rest.split_once(": "))
        .and_then(|(n, m)| Some((n.parse().ok()?, m.to_string())))
        .unwrap_or((0, msg.to_string()))
}

// ---------------------------------------------------------------- score

fn read_forecast_docs(path: &Path) -> crate::Result<Vec<ForecastDoc>> {
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let docs = match value {
        serde_json::Value::Array(items) => items,
        other => vec![other],
    };
    docs.iter()
        .map(|d| ForecastDoc::from_json(d).map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
        .collect()
}

/// `score`: score exchange-format forecast files against a truth incidence
/// CSV. Each file's stem is its model id. Returns score CSV bytes.
pub fn cmd_score(
    forecast_files: &[PathBuf],
    truth_file: &Path,
    metrics: &[String],
    cycle_length: usize,
) -> CliResult<Vec<u8>> {
    const STAGE: &str = "score";
    let registry = MetricRegistry::default();
    let metrics: Vec<Arc<dyn Metric>> = metrics
        .iter()
        .map(|m| stage(STAGE, registry.get(m)))
        .collect::<CliResult<_>>()?;
    if metrics.is_empty() {
        return Err(CliError::config(STAGE, "no metrics requested"));
    }
    let truth_text =
        fs::read_to_string(truth_file).map_err(|e| CliError::data(STAGE, format!("{}: {e}", truth_file.display())))?;
    let truth: BTreeMap<String, TimeSeries> = read_incidence_csv(truth_text.as_bytes(), cycle_length.max(1), 1)
        .map_err(|d| CliError::data(STAGE, d.iter().map(Diagnostic::to_string).collect::<Vec<_>>().join("; ")))?
        .into_iter()
        .map(|s| (s.location_id().to_string(), s))
        .collect();

    let mut reports = Vec::new();
    let mut unmatched = Vec::new();
    for path in forecast_files {
        let model = path.file_stem().map_or("forecast".into(), |s| s.to_string_lossy().into_owned());
        let docs = stage(STAGE, read_forecast_docs(path))?;
        let mut paired = Vec::new();
        for d in docs {
            let target = Target {
                kind: d.target.clone(),
                origin_t: d.origin_t,
            };
            let realized = truth
                .get(&d.location)
                .ok_or_else(|| Error::Data(format!("no truth for location '{}'", d.location)))
                .and_then(|s| realized_target(s, &target));
            match realized {
                Ok(r) => paired.push((d, target, r)),
                Err(e) => unmatched.push(format!("{model}: {} {} ({e})", d.location, target.descriptor())),
            }
        }
        for metric in &metrics {
            let per_case = paired
                .iter()
                .map(|(d, target, r)| {
                    Ok(CaseScore {
                        case: CaseId {
                            location: d.location.clone(),
                            origin_t: d.origin_t,
                            target: target.descriptor(),
                        },
                        score: metric.score(&d.repr, r)?,
                    })
                })
                .collect::<crate::Result<Vec<_>>>();
            let per_case = stage(STAGE, per_case)?;
            if !per_case.is_empty() {
                reports.push(ScoreReport::new(model.clone(), metric.name(), per_case));
            }
        }
    }
    if !unmatched.is_empty() {
        return Err(CliError::data(
            STAGE,
            format!("forecasts without matching truth: {}", unmatched.join("; ")),
        ));
    }
    if reports.is_empty() {
        return Err(CliError::data(STAGE, "no forecast/truth pairs to score"));
    }
    let mut out = Vec::new();
    stage(STAGE, write_score_csv(&mut out, &reports))?;
    Ok(out)
}
