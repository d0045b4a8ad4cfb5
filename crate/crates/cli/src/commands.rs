//! Batch subcommands.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use hybridcast::combine::{optimize, pre_average, HybridConfig};
use hybridcast::evaluate::{
    nemenyi_ranks, run_benchmark, score_table, write_records_csv, write_summary_csv,
    BenchmarkFailure, OriginRunner, ScoreTable,
};
use hybridcast::forecasters::Method;
use hybridcast::ingest::load_csv;
use hybridcast::{HybridSolution, QuantileForecast, Variant, YearMonth};
use serde::Serialize;
use serde_json::json;

use crate::config::JobConfig;
use crate::error::{CliError, Result};
use crate::files;

#[derive(Debug, Serialize)]
struct SeriesFailure {
    key: String,
    message: String,
}

#[derive(Serialize)]
struct EnsembleMeta<'a> {
    seed: u64,
    paths: usize,
    horizon: usize,
    members: &'a [Method],
    levels: &'a [f64],
    series: Vec<EnsembleEntry>,
}

#[derive(Serialize)]
struct EnsembleEntry {
    key: String,
    origin: YearMonth,
    file: String,
}

fn finish(failed: usize, total: usize) -> Result<()> {
    if failed > 0 {
        Err(CliError::Partial { failed, total })
    } else {
        Ok(())
    }
}

/// Bootstraps and pools the configured methods from the end of every series.
///
/// Writes `forecasts/<series>.csv`, `quantiles.csv`, `ensembles.json`,
/// `manifest.json`, `failures.json` and, when enabled, `paths.csv`.
pub fn forecast(config: &JobConfig) -> Result<()> {
    let out = config.prepare_output()?;
    let (series, manifest) = load_csv(&config.dataset, &config.schema)?;
    let bench = config.benchmark_config()?;
    let per_series = out.join("forecasts");
    fs::create_dir_all(&per_series).map_err(|e| CliError::io(&per_series, e))?;

    let mut quantiles = Vec::new();
    let mut ensembles = Vec::new();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for s in &series {
        let mut runner = OriginRunner::new(s.clone(), &bench, None);
        match runner.pooled() {
            Ok(pooled) => {
                let q = pooled.quantiles.expect("pooled forecasts carry quantiles");
                let name = format!("{}.csv", files::file_stem(s.key()));
                files::write_quantiles(&per_series.join(&name), std::slice::from_ref(&q))?;
                entries.push(EnsembleEntry {
                    key: s.key().id(),
                    origin: s.end(),
                    file: format!("forecasts/{name}"),
                });
                quantiles.push(q);
                if config.dump_paths {
                    ensembles.push(pooled.ensemble.expect("pooled forecasts carry paths"));
                }
            }
            Err(e) => failures.push(SeriesFailure {
                key: s.key().id(),
                message: e.to_string(),
            }),
        }
    }

    files::write_quantiles(&out.join("quantiles.csv"), &quantiles)?;
    files::write_json(
        &out.join("ensembles.json"),
        &EnsembleMeta {
            seed: bench.seed,
            paths: bench.paths,
            horizon: bench.plan.horizon,
            members: &bench.pool_members,
            levels: bench.grid.levels(),
            series: entries,
        },
    )?;
    files::write_json(&out.join("manifest.json"), &manifest)?;
    files::write_json(&out.join("failures.json"), &failures)?;
    if config.dump_paths {
        files::write_paths(&out.join("paths.csv"), &ensembles)?;
    }
    for f in &failures {
        eprintln!("warning: {}: {}", f.key, f.message);
    }
    finish(failures.len(), series.len())
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    key: String,
    origin: YearMonth,
    method: &'static str,
    expert: &'a [f64],
    weight_sum: f64,
    #[serde(flatten)]
    solution: &'a HybridSolution,
}

/// Options for [`combine`] that do not come from the input files.
#[derive(Debug, Clone)]
pub struct CombineOptions {
    pub variant: Variant,
    pub hybrid: HybridConfig,
    pub pre_average: bool,
}

/// Fuses every point forecast with the matching quantile forecast.
///
/// Writes `hybrid.csv` (long-form final quantiles) and `audit.json`.
pub fn combine(prob: &Path, point: &Path, out: &Path, options: &CombineOptions) -> Result<()> {
    let probs = files::read_quantiles(prob)?;
    let points = files::read_points(point)?;

    let prob_keys: BTreeSet<_> = probs.keys().collect();
    let point_keys: BTreeSet<_> = points.keys().collect();
    if prob_keys != point_keys {
        let list = |keys: Vec<&&(String, YearMonth)>| {
            keys.iter()
                .map(|(k, o)| format!("{k} @ {o}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let only_prob: Vec<_> = prob_keys.difference(&point_keys).collect();
        let only_point: Vec<_> = point_keys.difference(&prob_keys).collect();
        let mut msg = String::from("series in the two files do not match");
        if !only_prob.is_empty() {
            msg.push_str(&format!("; only in {}: {}", prob.display(), list(only_prob)));
        }
        if !only_point.is_empty() {
            msg.push_str(&format!("; only in {}: {}", point.display(), list(only_point)));
        }
        return Err(CliError::Input(msg));
    }

    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut solved: Vec<(QuantileForecast, HybridSolution, Vec<f64>)> = Vec::new();
    let mut failures = Vec::new();
    for (id, q) in &probs {
        let expert = &points[id];
        let result = if options.pre_average {
            pre_average(expert, q)
        } else {
            Ok(expert.clone())
        }
        .and_then(|p| optimize(q, &p, options.variant, &options.hybrid));
        match result {
            Ok(sol) => solved.push((q.clone(), sol, expert.values().to_vec())),
            Err(e) => failures.push(SeriesFailure {
                key: format!("{} @ {}", id.0, id.1),
                message: e.to_string(),
            }),
        }
    }

    let finals: Vec<QuantileForecast> = solved.iter().map(|(_, s, _)| s.adjusted_quantiles.clone()).collect();
    files::write_quantiles(&out.join("hybrid.csv"), &finals)?;
    let audit: Vec<AuditEntry> = solved
        .iter()
        .map(|(q, s, expert)| AuditEntry {
            key: q.key().id(),
            origin: q.origin(),
            method: s.variant.display_name(),
            expert,
            weight_sum: s.weights.iter().sum(),
            solution: s,
        })
        .collect();
    files::write_json(
        &out.join("audit.json"),
        &json!({
            "variant": options.variant,
            "mean_definition": options.hybrid.mean_definition,
            "pre_average": options.pre_average,
            "solutions": audit,
            "failures": failures,
        }),
    )?;
    for f in &failures {
        eprintln!("warning: {}: {}", f.key, f.message);
    }
    finish(failures.len(), probs.len())
}

/// Keeps only the series with a score for every method.
pub fn complete_rows(table: &ScoreTable) -> (ScoreTable, usize) {
    let mut out = ScoreTable {
        methods: table.methods.clone(),
        series: Vec::new(),
        scores: Vec::new(),
    };
    for (s, row) in table.series.iter().zip(&table.scores) {
        if row.iter().all(|c| c.is_some()) {
            out.series.push(s.clone());
            out.scores.push(row.clone());
        }
    }
    let dropped = table.series.len() - out.series.len();
    (out, dropped)
}

/// Rolling-origin benchmark of the configured methods.
///
/// Writes `records.csv`, `records.json`, `summary.csv`, `summary.json`,
/// `nemenyi.json` and `failures.json`; per-method timings go to stderr.
pub fn evaluate(config: &JobConfig) -> Result<()> {
    let out = config.prepare_output()?;
    let (series, _) = load_csv(&config.dataset, &config.schema)?;
    let demographic = config.demographic_inputs()?;
    let bench = config.benchmark_config()?;
    let result = run_benchmark(&series, &config.bench_methods(), &bench, demographic.as_ref())?;

    write_records_csv(out.join("records.csv"), &result.records, &bench.score_levels)?;
    files::write_json(&out.join("records.json"), &result.records)?;
    write_summary_csv(out.join("summary.csv"), &result.summary)?;
    files::write_json(&out.join("summary.json"), &result.summary)?;

    let (table, incomplete) = complete_rows(&score_table(&result.records, |r| r.mase_q));
    let nemenyi = match nemenyi_ranks(&table, 0.05) {
        Ok(n) => json!({ "metric": "mase", "incomplete_series_dropped": incomplete, "result": n }),
        Err(e) => json!({ "metric": "mase", "incomplete_series_dropped": incomplete, "error": e.to_string() }),
    };
    files::write_json(&out.join("nemenyi.json"), &nemenyi)?;
    files::write_json(&out.join("failures.json"), &result.failures)?;

    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    for (method, secs) in &result.timings {
        eprintln!("timing: {method} {secs:.3}s");
    }
    report_failures(&result.failures);
    let failed: BTreeSet<&str> = result.failures.iter().map(|f| f.series.as_str()).collect();
    finish(failed.len(), series.len())
}

fn report_failures(failures: &[BenchmarkFailure]) {
    for f in failures {
        let origin = f.origin.map(|o| format!(" @ {o}")).unwrap_or_default();
        let method = f.method.as_deref().map(|m| format!(" [{m}]")).unwrap_or_default();
        eprintln!("warning: {}{origin}{method}: {}", f.series, f.message);
    }
}
