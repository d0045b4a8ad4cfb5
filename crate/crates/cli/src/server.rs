//! HTTP service for interactive planning.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hybridcast::combine::{interpolate, optimize, pre_average, MeanDefinition};
use hybridcast::evaluate::{nemenyi_ranks, run_benchmark, score_table, BenchmarkConfig, OriginRunner};
use hybridcast::forecasters::DemographicInputs;
use hybridcast::ingest::{load_csv, DatasetManifest};
use hybridcast::{
    DemandSeries, DistributionCurve, HybridSolution, PointForecast, PointSource, QuantileForecast,
    Variant, YearMonth,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{Mutex, OnceCell};

use crate::commands::complete_rows;
use crate::config::JobConfig;
use crate::error::{CliError, Result};

pub const BIND_ENV: &str = "HYBRIDCAST_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
const CURVE_RESOLUTION: usize = 199;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitEntry {
    pub key: String,
    pub origin: YearMonth,
    pub variant: Variant,
    pub point_values: Vec<f64>,
    #[serde(default)]
    pub note: Option<String>,
    /// Seconds since the Unix epoch, set by the server.
    #[serde(default)]
    pub committed_at: u64,
}

/// Append-only JSON-lines log of committed forecasts.
pub struct CommitLog {
    path: PathBuf,
    entries: Vec<CommitEntry>,
    seen: HashSet<(String, YearMonth)>,
}

impl CommitLog {
    pub fn open(path: PathBuf) -> Result<Self> {
        let mut entries = Vec::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let entry: CommitEntry = serde_json::from_str(line).map_err(|e| {
                    CliError::Input(format!("{}:{}: {e}", path.display(), i + 1))
                })?;
                entries.push(entry);
            }
        }
        let seen = entries.iter().map(|e| (e.key.clone(), e.origin)).collect();
        Ok(Self { path, entries, seen })
    }

    pub fn entries(&self) -> &[CommitEntry] {
        &self.entries
    }

    /// Returns `false` when the (key, origin) pair was already committed.
    pub fn append(&mut self, entry: CommitEntry) -> Result<bool> {
        if !self.seen.insert((entry.key.clone(), entry.origin)) {
            return Ok(false);
        }
        if let Some(dir) = self.path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| CliError::io(&self.path, e))?;
        file.write_all(line.as_bytes()).map_err(|e| CliError::io(&self.path, e))?;
        self.entries.push(entry);
        Ok(true)
    }
}

pub struct AppState {
    series: BTreeMap<String, DemandSeries>,
    manifest: DatasetManifest,
    bench: BenchmarkConfig,
    pre_average: bool,
    demographic: Option<DemographicInputs>,
    methods: Vec<hybridcast::evaluate::BenchMethod>,
    evaluation: OnceCell<Value>,
    commits: Mutex<CommitLog>,
}

impl AppState {
    pub fn load(config: &JobConfig) -> Result<Self> {
        let (series, manifest) = load_csv(&config.dataset, &config.schema)?;
        let log = config
            .commit_log
            .clone()
            .unwrap_or_else(|| config.output_dir.join("commits.jsonl"));
        Ok(Self {
            series: series.into_iter().map(|s| (s.key().id(), s)).collect(),
            manifest,
            bench: config.benchmark_config()?,
            pre_average: config.pre_average,
            demographic: config.demographic_inputs()?,
            methods: config.bench_methods(),
            evaluation: OnceCell::new(),
            commits: Mutex::new(CommitLog::open(log)?),
        })
    }

    fn pooled(&self, series: &DemandSeries) -> Result<QuantileForecast, ApiError> {
        let mut runner = OriginRunner::new(series.clone(), &self.bench, None);
        let pooled = runner.pooled().map_err(ApiError::unprocessable)?;
        Ok(pooled.quantiles.expect("pooled forecasts carry quantiles"))
    }
}

#[derive(Debug, Serialize)]
struct FieldError {
    path: String,
    message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    fields: Vec<FieldError>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl ToString) -> Self {
        Self {
            status,
            message: message.to_string(),
            fields: Vec::new(),
        }
    }

    fn field(path: impl Into<String>, message: impl ToString) -> Self {
        let message = message.to_string();
        Self {
            status: StatusCode::BAD_REQUEST,
            message: "invalid request body".into(),
            fields: vec![FieldError {
                path: path.into(),
                message,
            }],
        }
    }

    fn unknown_key(key: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown series key {key:?}"))
    }

    fn unprocessable(e: impl ToString) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e)
    }

    fn internal(e: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.message, "fields": self.fields });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> std::result::Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::field(path, e.into_inner())
    })
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> std::result::Result<T, ApiError> + Send + 'static,
) -> std::result::Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

#[derive(Serialize)]
struct SeriesSummary<'a> {
    id: String,
    key: &'a hybridcast::SeriesKey,
    start: YearMonth,
    end: YearMonth,
    length: usize,
    values: &'a [f64],
}

async fn list_series(State(state): State<Arc<AppState>>) -> Json<Value> {
    let series: Vec<SeriesSummary> = state
        .series
        .values()
        .map(|s| SeriesSummary {
            id: s.key().id(),
            key: s.key(),
            start: s.start(),
            end: s.end(),
            length: s.len(),
            values: s.values(),
        })
        .collect();
    Json(json!({ "series": series, "manifest": state.manifest }))
}

#[derive(Serialize)]
struct ForecastResponse {
    key: String,
    origin: YearMonth,
    levels: Vec<f64>,
    quantiles: Vec<Vec<f64>>,
    mean: Vec<f64>,
}

async fn get_forecast(
    State(state): State<Arc<AppState>>,
    Path(key): Path<String>,
) -> ApiResult<ForecastResponse> {
    if !state.series.contains_key(&key) {
        return Err(ApiError::unknown_key(&key));
    }
    let q = blocking(move || state.pooled(&state.series[&key])).await?;
    Ok(Json(ForecastResponse {
        key: q.key().id(),
        origin: q.origin(),
        levels: q.grid().levels().to_vec(),
        mean: q.grid_means(),
        quantiles: q.values().to_vec(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombineRequest {
    pub key: String,
    #[serde(default)]
    pub origin: Option<YearMonth>,
    pub point_values: Vec<f64>,
    #[serde(default)]
    pub variant: Option<Variant>,
    #[serde(default)]
    pub mean_definition: Option<MeanDefinition>,
}

#[derive(Serialize)]
struct CombineResponse {
    key: String,
    origin: YearMonth,
    method: &'static str,
    /// Point the weights were fitted against, after optional pre-averaging.
    point_used: Vec<f64>,
    solution: HybridSolution,
    curves: Vec<DistributionCurve>,
}

fn check_point(values: &[f64], horizon: usize) -> std::result::Result<(), ApiError> {
    if values.len() != horizon {
        return Err(ApiError::field(
            "point_values",
            format!("expected {horizon} values, got {}", values.len()),
        ));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(ApiError::field(
            format!("point_values[{i}]"),
            "must be a finite non-negative number",
        ));
    }
    Ok(())
}

fn check_origin(requested: Option<YearMonth>, series: &DemandSeries) -> std::result::Result<(), ApiError> {
    match requested {
        Some(o) if o != series.end() => Err(ApiError::field(
            "origin",
            format!("forecasts are issued from {}, not {o}", series.end()),
        )),
        _ => Ok(()),
    }
}

async fn post_combine(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<CombineResponse> {
    let req: CombineRequest = parse_body(&body)?;
    let series = state.series.get(&req.key).ok_or_else(|| ApiError::unknown_key(&req.key))?;
    check_origin(req.origin, series)?;
    check_point(&req.point_values, state.bench.plan.horizon)?;
    let response = blocking(move || {
        let series = &state.series[&req.key];
        let prob = state.pooled(series)?;
        let expert = PointForecast::new(series.key().clone(), series.end(), req.point_values, PointSource::Expert)
            .map_err(ApiError::unprocessable)?;
        let point = if state.pre_average {
            pre_average(&expert, &prob).map_err(ApiError::unprocessable)?
        } else {
            expert
        };
        let variant = req.variant.unwrap_or(Variant::WeightedAverage);
        let mut hybrid = state.bench.hybrid;
        if let Some(m) = req.mean_definition {
            hybrid.mean_definition = m;
        }
        let solution = optimize(&prob, &point, variant, &hybrid).map_err(ApiError::unprocessable)?;
        let resolution = CURVE_RESOLUTION.max(prob.grid().len());
        let curves = interpolate(&solution.adjusted_quantiles, resolution).map_err(ApiError::unprocessable)?;
        Ok(CombineResponse {
            key: series.key().id(),
            origin: series.end(),
            method: variant.display_name(),
            point_used: point.values().to_vec(),
            solution,
            curves,
        })
    })
    .await?;
    Ok(Json(response))
}

async fn get_evaluation(State(state): State<Arc<AppState>>) -> ApiResult<Value> {
    let value = state
        .evaluation
        .get_or_try_init(|| {
            let state = state.clone();
            blocking(move || {
                let series: Vec<DemandSeries> = state.series.values().cloned().collect();
                let result = run_benchmark(&series, &state.methods, &state.bench, state.demographic.as_ref())
                    .map_err(ApiError::unprocessable)?;
                let (table, incomplete) = complete_rows(&score_table(&result.records, |r| r.mase_q));
                let nemenyi = nemenyi_ranks(&table, 0.05).ok();
                Ok(json!({
                    "summary": result.summary,
                    "records": result.records.len(),
                    "failures": result.failures,
                    "warnings": result.warnings,
                    "nemenyi": nemenyi,
                    "incomplete_series_dropped": incomplete,
                }))
            })
        })
        .await?;
    Ok(Json(value.clone()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitRequest {
    pub key: String,
    pub origin: YearMonth,
    pub variant: Variant,
    pub point_values: Vec<f64>,
    #[serde(default)]
    pub note: Option<String>,
}

async fn post_commit(State(state): State<Arc<AppState>>, body: Bytes) -> std::result::Result<Response, ApiError> {
    let req: CommitRequest = parse_body(&body)?;
    let series = state.series.get(&req.key).ok_or_else(|| ApiError::unknown_key(&req.key))?;
    check_origin(Some(req.origin), series)?;
    check_point(&req.point_values, state.bench.plan.horizon)?;
    let entry = CommitEntry {
        key: req.key,
        origin: req.origin,
        variant: req.variant,
        point_values: req.point_values,
        note: req.note,
        committed_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let mut log = state.commits.lock().await;
    if !log.append(entry.clone()).map_err(ApiError::internal)? {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("already committed: {} @ {}", entry.key, entry.origin),
        ));
    }
    Ok((StatusCode::CREATED, Json(entry)).into_response())
}

async fn get_commits(State(state): State<Arc<AppState>>) -> Json<Vec<CommitEntry>> {
    Json(state.commits.lock().await.entries().to_vec())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/series", get(list_series))
        .route("/forecast/{key}", get(get_forecast))
        .route("/combine", post(post_combine))
        .route("/evaluation", get(get_evaluation))
        .route("/commit", post(post_commit))
        .route("/commits", get(get_commits))
        .with_state(state)
}

pub fn bind_address() -> Result<SocketAddr> {
    let raw = std::env::var(BIND_ENV).unwrap_or_else(|_| DEFAULT_BIND.to_string());
    raw.parse()
        .map_err(|e| CliError::Input(format!("{BIND_ENV}={raw:?}: {e}")))
}

pub fn serve(config: &JobConfig) -> Result<()> {
    let state = Arc::new(AppState::load(config)?);
    let addr = bind_address()?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io("tokio runtime", e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::io(addr.to_string(), e))?;
        eprintln!("listening on http://{addr}");
        axum::serve(listener, router(state))
            .await
            .map_err(|e| CliError::io(addr.to_string(), e))
    })
}
