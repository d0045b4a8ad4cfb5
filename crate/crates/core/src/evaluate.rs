//! Rolling-origin evaluation and scoring.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{fit_residuals_from, simulate_paths, to_quantiles, DEFAULT_PATHS};
use crate::combine::{interpolate_at, optimize, pinball, pool_equal, pre_average, HybridConfig};
use crate::error::{Error, Result};
use crate::forecasters::{DemographicInputs, Method};
use crate::types::{
    DemandSeries, EnsembleForecast, PointForecast, PointSource, QuantileForecast, QuantileGrid,
    SeriesKey, Variant, YearMonth,
};

pub const MASE_SEASON: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvPlan {
    pub origins: usize,
    pub horizon: usize,
    pub min_train: usize,
    pub step: usize,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self {
            origins: 3,
            horizon: 3,
            min_train: MASE_SEASON + 1,
            step: 1,
        }
    }
}

/// One expanding-window split: train on `values[..train_len]`, test on the
/// next `horizon` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CvSplit {
    pub train_len: usize,
    pub horizon: usize,
}

impl CvSplit {
    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.train_len..self.train_len + self.horizon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvSchedule {
    pub splits: Vec<CvSplit>,
    /// Set when fewer origins than requested fit in the series.
    pub warning: Option<String>,
}

/// Expanding-window splits whose last test window ends at the series end.
pub fn plan_cv(len: usize, plan: &CvPlan) -> Result<CvSchedule> {
    if plan.origins == 0 || plan.horizon == 0 || plan.step == 0 {
        return Err(Error::invalid("cv plan", "origins, horizon and step must be at least 1"));
    }
    let min_train = plan.min_train.max(1);
    let required = min_train + plan.horizon;
    if len < required {
        return Err(Error::TooShort {
            required,
            actual: len,
        });
    }
    let fit = (len - required) / plan.step + 1;
    let origins = plan.origins.min(fit);
    let warning = (origins < plan.origins).then(|| {
        format!(
            "only {origins} of {} origins fit; full plan needs {} observations, series has {len}",
            plan.origins,
            required + (plan.origins - 1) * plan.step
        )
    });
    let last_train = len - plan.horizon;
    let splits = (0..origins)
        .rev()
        .map(|back| CvSplit {
            train_len: last_train - back * plan.step,
            horizon: plan.horizon,
        })
        .collect();
    Ok(CvSchedule { splits, warning })
}

/// In-sample mean absolute seasonal-naive error, or `None` when the training
/// window is too short or the error is zero.
pub fn mase_scale(train: &[f64], season: usize) -> Option<f64> {
    if train.len() <= season {
        return None;
    }
    let scale = train
        .windows(season + 1)
        .map(|w| (w[season] - w[0]).abs())
        .sum::<f64>()
        / (train.len() - season) as f64;
    (scale > 0.0).then_some(scale)
}

pub fn mase(train: &[f64], actuals: &[f64], forecasts: &[f64], season: usize) -> Result<f64> {
    if actuals.len() != forecasts.len() || actuals.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} actuals vs {} forecasts",
            actuals.len(),
            forecasts.len()
        )));
    }
    if train.len() <= season {
        return Err(Error::TooShort {
            required: season + 1,
            actual: train.len(),
        });
    }
    let scale = mase_scale(train, season)
        .ok_or_else(|| Error::invalid("MASE", "seasonal-naive denominator is zero"))?;
    let mae = actuals
        .iter()
        .zip(forecasts)
        .map(|(a, f)| (a - f).abs())
        .sum::<f64>()
        / actuals.len() as f64;
    Ok(mae / scale)
}

/// Energy-form CRPS of an ensemble against a scalar outcome:
/// `mean|X - y| - ½ mean|X - X'|`, computed from sorted members.
pub fn crps_ensemble(members: &[f64], actual: f64) -> f64 {
    let b = members.len();
    assert!(b > 0, "CRPS needs at least one ensemble member");
    let mut xs = members.to_vec();
    xs.sort_by(f64::total_cmp);
    let bf = b as f64;
    let spread_to_actual = xs.iter().map(|x| (x - actual).abs()).sum::<f64>() / bf;
    // Σ_{i<j} (x_j - x_i) = Σ_k x_k (2k - b + 1)
    let pairwise: f64 = xs
        .iter()
        .enumerate()
        .map(|(k, x)| x * (2.0 * k as f64 - bf + 1.0))
        .sum();
    (spread_to_actual - pairwise / (bf * bf)).max(0.0)
}

pub const DEFAULT_CRPS_RESOLUTION: usize = 199;

/// CRPS of a quantile forecast row, treating the piecewise-linear quantile
/// function sampled at `resolution` evenly spaced probabilities over
/// `[q_1, q_n]` as an equally weighted ensemble.
pub fn crps_quantiles(grid: &QuantileGrid, values: &[f64], actual: f64, resolution: usize) -> f64 {
    let levels = grid.levels();
    if levels.len() == 1 || resolution < 2 {
        return crps_ensemble(values, actual);
    }
    let (lo, hi) = (levels[0], levels[levels.len() - 1]);
    let members: Vec<f64> = (0..resolution)
        .map(|j| {
            let x = lo + (hi - lo) * j as f64 / (resolution - 1) as f64;
            interpolate_at(levels, values, x).0
        })
        .collect();
    crps_ensemble(&members, actual)
}

/// Pinball score at each requested level, reading the quantile function by
/// linear interpolation on the grid.
pub fn quantile_score(
    grid: &QuantileGrid,
    values: &[f64],
    actual: f64,
    levels: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let knots = grid.levels();
    let (lo, hi) = (knots[0], knots[knots.len() - 1]);
    levels
        .iter()
        .map(|&q| {
            if q < lo || q > hi {
                return Err(Error::invalid(
                    "score level",
                    format!("{q} outside grid span [{lo}, {hi}]"),
                ));
            }
            let (v, _) = interpolate_at(knots, values, q);
            Ok((q, pinball(q, actual, v)))
        })
        .collect()
}

/// Studentized range quantiles q(0.05; k, ∞) for k = 2..=20.
const STUDENTIZED_RANGE_05: [f64; 19] = [
    2.772, 3.314, 3.633, 3.858, 4.030, 4.170, 4.286, 4.387, 4.474, 4.552, 4.622, 4.685, 4.743,
    4.796, 4.845, 4.891, 4.934, 4.974, 5.012,
];

/// Critical value for `k` methods at the 5% level.
pub fn nemenyi_q_alpha(k: usize, alpha: f64) -> Result<f64> {
    if (alpha - 0.05).abs() > 1e-12 {
        return Err(Error::invalid("alpha", format!("only 0.05 is tabulated, got {alpha}")));
    }
    if !(2..=20).contains(&k) {
        return Err(Error::invalid("method count", format!("{k} outside 2..=20")));
    }
    Ok(STUDENTIZED_RANGE_05[k - 2])
}

/// Per-series scores by method; lower is better.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreTable {
    pub methods: Vec<String>,
    pub series: Vec<String>,
    /// `scores[s][m]`
    pub scores: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NemenyiResult {
    pub methods: Vec<String>,
    pub mean_ranks: Vec<f64>,
    pub q_alpha: f64,
    pub critical_distance: f64,
    pub series_count: usize,
    /// Pairs whose mean ranks differ by more than the critical distance.
    pub significant_pairs: Vec<(String, String)>,
}

/// Ranks within one row, 1 = smallest, ties share their average rank.
pub fn average_ranks(row: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    let mut ranks = vec![0.0; row.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && row[order[j + 1]] == row[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn nemenyi_ranks(table: &ScoreTable, alpha: f64) -> Result<NemenyiResult> {
    let k = table.methods.len();
    let n = table.series.len();
    if k < 2 || n < 2 {
        return Err(Error::invalid(
            "score table",
            format!("need at least 2 methods and 2 series, got {k} and {n}"),
        ));
    }
    let mut missing = Vec::new();
    for (s, row) in table.scores.iter().enumerate() {
        for (m, cell) in row.iter().enumerate() {
            if !matches!(cell, Some(v) if v.is_finite()) {
                missing.push(format!("{}/{}", table.series[s], table.methods[m]));
            }
        }
        if row.len() != k {
            missing.push(format!("{}/<row has {} cells>", table.series[s], row.len()));
        }
    }
    if table.scores.len() != n {
        missing.push(format!("<{} rows for {n} series>", table.scores.len()));
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteScores(missing));
    }

    let mut sums = vec![0.0; k];
    for row in &table.scores {
        let values: Vec<f64> = row.iter().map(|v| v.unwrap()).collect();
        for (s, r) in sums.iter_mut().zip(average_ranks(&values)) {
            *s += r;
        }
    }
    let mean_ranks: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let q_alpha = nemenyi_q_alpha(k, alpha)?;
    let critical_distance = q_alpha * ((k * (k + 1)) as f64 / (12.0 * n as f64)).sqrt();
    let mut significant_pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            if (mean_ranks[a] - mean_ranks[b]).abs() > critical_distance {
                significant_pairs.push((table.methods[a].clone(), table.methods[b].clone()));
            }
        }
    }
    Ok(NemenyiResult {
        methods: table.methods.clone(),
        mean_ranks,
        q_alpha,
        critical_distance,
        series_count: n,
        significant_pairs,
    })
}

/// Methods the benchmark knows how to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchMethod {
    Base(Method),
    Demographic,
    /// Equal-weight pool of the configured bootstrapped members.
    Pooled,
    Hybrid(Variant),
}

impl BenchMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BenchMethod::Base(m) => m.name(),
            BenchMethod::Demographic => "demographic",
            BenchMethod::Pooled => "pooled",
            BenchMethod::Hybrid(Variant::WeightedAverage) => "hybrid_weighted_average",
            BenchMethod::Hybrid(Variant::BiasAdjustment) => "hybrid_bias_adjustment",
        }
    }

    pub fn all() -> Vec<BenchMethod> {
        vec![
            BenchMethod::Base(Method::snaive()),
            BenchMethod::Base(Method::moving_average()),
            BenchMethod::Base(Method::ses()),
            BenchMethod::Base(Method::croston_sba()),
            BenchMethod::Demographic,
            BenchMethod::Pooled,
            BenchMethod::Hybrid(Variant::WeightedAverage),
            BenchMethod::Hybrid(Variant::BiasAdjustment),
        ]
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BenchMethod::all()
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = BenchMethod::all().iter().map(|m| m.name()).collect();
                Error::invalid("method", format!("{s:?} is not one of {}", known.join(", ")))
            })
    }
}

/// Where the hybrid methods take their point forecast from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HybridPoint {
    Demographic,
    Method(Method),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub plan: CvPlan,
    pub grid: QuantileGrid,
    pub paths: usize,
    pub seed: u64,
    pub season: usize,
    pub pool_members: Vec<Method>,
    pub hybrid: HybridConfig,
    pub hybrid_point: HybridPoint,
    pub pre_average: bool,
    pub crps_resolution: usize,
    pub score_levels: Vec<f64>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            plan: CvPlan::default(),
            grid: QuantileGrid::percentiles(),
            paths: DEFAULT_PATHS,
            seed: 0,
            season: MASE_SEASON,
            pool_members: vec![Method::snaive(), Method::moving_average(), Method::ses()],
            hybrid: HybridConfig::default(),
            hybrid_point: HybridPoint::Demographic,
            pre_average: true,
            crps_resolution: DEFAULT_CRPS_RESOLUTION,
            score_levels: vec![0.5, 0.95],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationRecord {
    pub key: SeriesKey,
    pub method: String,
    /// Last training month.
    pub origin: YearMonth,
    pub horizon: usize,
    pub actual: f64,
    pub point: f64,
    /// Scaled absolute error; `None` when the MASE denominator is undefined.
    pub mase_q: Option<f64>,
    /// `None` for point-only methods.
    pub crps: Option<f64>,
    pub pinball_by_level: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_mase: f64,
    pub median_mase: f64,
    pub mean_crps: Option<f64>,
    pub median_crps: Option<f64>,
    pub records: usize,
    pub mase_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkFailure {
    pub series: String,
    pub origin: Option<YearMonth>,
    pub method: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkResult {
    pub records: Vec<EvaluationRecord>,
    pub summary: Vec<MethodSummary>,
    pub failures: Vec<BenchmarkFailure>,
    pub warnings: Vec<String>,
    /// Wall-clock seconds per method, summed over series and origins.
    #[serde(skip)]
    pub timings: BTreeMap<String, f64>,
}

/// Everything one method produced at one origin.
#[derive(Debug, Clone)]
pub struct OriginForecast {
    pub point: Vec<f64>,
    pub ensemble: Option<EnsembleForecast>,
    pub quantiles: Option<QuantileForecast>,
}

/// Produces forecasts for every method at one origin from the training prefix.
pub struct OriginRunner<'a> {
    pub train: DemandSeries,
    pub config: &'a BenchmarkConfig,
    pub demographic: Option<&'a DemographicInputs>,
    cache: HashMap<String, OriginForecast>,
}

impl<'a> OriginRunner<'a> {
    pub fn new(
        train: DemandSeries,
        config: &'a BenchmarkConfig,
        demographic: Option<&'a DemographicInputs>,
    ) -> Self {
        Self {
            train,
            config,
            demographic,
            cache: HashMap::new(),
        }
    }

    fn horizon(&self) -> usize {
        self.config.plan.horizon
    }

    fn bootstrapped(&mut self, method: &Method) -> Result<OriginForecast> {
        let tag = format!("base:{method:?}");
        if let Some(hit) = self.cache.get(&tag) {
            return Ok(hit.clone());
        }
        let base = method.forecast_series(&self.train, self.horizon())?;
        let (ensemble, quantiles) = if method.is_probabilistic() {
            let pool = fit_residuals_from(self.train.values(), method)?;
            let ensemble = simulate_paths(&base, &pool, self.config.paths, self.config.seed)?;
            let quantiles = to_quantiles(&ensemble, &self.config.grid)?;
            (Some(ensemble), Some(quantiles))
        } else {
            (None, None)
        };
        let out = OriginForecast {
            point: base.values().to_vec(),
            ensemble,
            quantiles,
        };
        self.cache.insert(tag, out.clone());
        Ok(out)
    }

    fn demographic_point(&self) -> Result<PointForecast> {
        let inputs = self
            .demographic
            .ok_or_else(|| Error::MissingFactor("demographic inputs".into()))?;
        let origin = self.train.end();
        let months: Vec<YearMonth> = (1..=self.horizon() as i64).map(|h| origin.plus(h)).collect();
        crate::forecasters::demographic_forecast(inputs, self.train.key(), &months)
    }

    pub fn pooled(&mut self) -> Result<OriginForecast> {
        if let Some(hit) = self.cache.get("pooled") {
            return Ok(hit.clone());
        }
        let members = self.config.pool_members.clone();
        if members.is_empty() {
            return Err(Error::Empty("pool members"));
        }
        let mut ensembles = Vec::new();
        let mut point = vec![0.0; self.horizon()];
        for m in &members {
            let f = self.bootstrapped(m)?;
            let e = f.ensemble.ok_or_else(|| {
                Error::invalid("pool member", format!("{m} does not produce an ensemble"))
            })?;
            for (p, v) in point.iter_mut().zip(&f.point) {
                *p += v / members.len() as f64;
            }
            ensembles.push(e);
        }
        let pooled = pool_equal(&ensembles)?;
        let quantiles = to_quantiles(&pooled, &self.config.grid)?;
        let out = OriginForecast {
            point,
            ensemble: Some(pooled),
            quantiles: Some(quantiles),
        };
        self.cache.insert("pooled".into(), out.clone());
        Ok(out)
    }

    /// Hybrid combination of the pooled distribution with `expert`.
    pub fn hybrid_with(&mut self, variant: Variant, expert: &[f64]) -> Result<OriginForecast> {
        let pooled = self.pooled()?;
        let prob = pooled.quantiles.expect("pooled forecasts carry quantiles");
        let expert = PointForecast::new(
            self.train.key().clone(),
            self.train.end(),
            expert.to_vec(),
            PointSource::Expert,
        )?;
        let point = if self.config.pre_average {
            pre_average(&expert, &prob)?
        } else {
            expert
        };
        let solution = optimize(&prob, &point, variant, &self.config.hybrid)?;
        let quantiles = solution.adjusted_quantiles;
        Ok(OriginForecast {
            point: quantiles.grid_means(),
            ensemble: None,
            quantiles: Some(quantiles),
        })
    }

    pub fn run(&mut self, method: &BenchMethod) -> Result<OriginForecast> {
        match method {
            BenchMethod::Base(m) => self.bootstrapped(m),
            BenchMethod::Demographic => Ok(OriginForecast {
                point: self.demographic_point()?.values().to_vec(),
                ensemble: None,
                quantiles: None,
            }),
            BenchMethod::Pooled => self.pooled(),
            BenchMethod::Hybrid(variant) => {
                let expert = match self.config.hybrid_point {
                    HybridPoint::Demographic => self.demographic_point()?.values().to_vec(),
                    HybridPoint::Method(m) => m.forecast(self.train.values(), self.horizon())?,
                };
                self.hybrid_with(*variant, &expert)
            }
        }
    }
}

/// Scores one method's output against the realized test values.
pub fn score_forecast(
    key: &SeriesKey,
    method: &str,
    origin: YearMonth,
    train: &[f64],
    actuals: &[f64],
    forecast: &OriginForecast,
    config: &BenchmarkConfig,
) -> Result<Vec<EvaluationRecord>> {
    let scale = mase_scale(train, config.season);
    actuals
        .iter()
        .enumerate()
        .map(|(h, &actual)| {
            let point = forecast.point[h];
            let crps = match (&forecast.ensemble, &forecast.quantiles) {
                (Some(e), _) => Some(crps_ensemble(&e.at_horizon(h), actual)),
                (None, Some(q)) => Some(crps_quantiles(
                    q.grid(),
                    &q.values()[h],
                    actual,
                    config.crps_resolution,
                )),
                (None, None) => None,
            };
            let pinball_by_level = match &forecast.quantiles {
                Some(q) => quantile_score(q.grid(), &q.values()[h], actual, &config.score_levels)?
                    .into_iter()
                    .map(|(l, s)| (format!("{l}"), s))
                    .collect(),
                None => BTreeMap::new(),
            };
            Ok(EvaluationRecord {
                key: key.clone(),
                method: method.to_string(),
                origin,
                horizon: h + 1,
                actual,
                point,
                mase_q: scale.map(|s| (actual - point).abs() / s),
                crps,
                pinball_by_level,
            })
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Mean and median MASE and CRPS per method, sorted by mean MASE.
pub fn summarize(records: &[EvaluationRecord]) -> Vec<MethodSummary> {
    let mut by_method: BTreeMap<&str, Vec<&EvaluationRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(&r.method).or_default().push(r);
    }
    let mut out: Vec<MethodSummary> = by_method
        .into_iter()
        .map(|(method, rs)| {
            let mase: Vec<f64> = rs.iter().filter_map(|r| r.mase_q).collect();
            let crps: Vec<f64> = rs.iter().filter_map(|r| r.crps).collect();
            MethodSummary {
                method: method.to_string(),
                mean_mase: mean(&mase),
                median_mase: median(&mase),
                mean_crps: (!crps.is_empty()).then(|| mean(&crps)),
                median_crps: (!crps.is_empty()).then(|| median(&crps)),
                records: rs.len(),
                mase_excluded: rs.len() - mase.len(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.mean_mase.total_cmp(&b.mean_mase).then(a.method.cmp(&b.method)));
    out
}

/// Per-series mean of a record metric, one column per method.
pub fn score_table(
    records: &[EvaluationRecord],
    metric: impl Fn(&EvaluationRecord) -> Option<f64>,
) -> ScoreTable {
    let mut methods: Vec<String> = records.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();
    let mut cells: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for r in records {
        let m = methods.iter().position(|x| *x == r.method).unwrap();
        let row = cells
            .entry(r.key.id())
            .or_insert_with(|| vec![Vec::new(); methods.len()]);
        if let Some(v) = metric(r) {
            row[m].push(v);
        }
    }
    let series: Vec<String> = cells.keys().cloned().collect();
    let scores = cells
        .into_values()
        .map(|row| {
            row.into_iter()
                .map(|v| (!v.is_empty()).then(|| mean(&v)))
                .collect()
        })
        .collect();
    ScoreTable {
        methods,
        series,
        scores,
    }
}

struct SeriesOutcome {
    records: Vec<EvaluationRecord>,
    failures: Vec<BenchmarkFailure>,
    warnings: Vec<String>,
    timings: BTreeMap<String, f64>,
}

fn run_series(
    series: &DemandSeries,
    methods: &[BenchMethod],
    config: &BenchmarkConfig,
    demographic: Option<&DemographicInputs>,
) -> SeriesOutcome {
    let mut outcome = SeriesOutcome {
        records: Vec::new(),
        failures: Vec::new(),
        warnings: Vec::new(),
        timings: BTreeMap::new(),
    };
    let id = series.key().id();
    let schedule = match plan_cv(series.len(), &config.plan) {
        Ok(s) => s,
        Err(e) => {
            outcome.failures.push(BenchmarkFailure {
                series: id,
                origin: None,
                method: None,
                message: e.to_string(),
            });
            return outcome;
        }
    };
    if let Some(w) = schedule.warning {
        outcome.warnings.push(format!("{id}: {w}"));
    }
    for split in schedule.splits {
        let train = series
            .truncated(split.train_len)
            .expect("split lies inside the series");
        let origin = train.end();
        let actuals = &series.values()[split.test_range()];
        let mut runner = OriginRunner::new(train, config, demographic);
        for method in methods {
            let started = Instant::now();
            let result = runner.run(method).and_then(|f| {
                score_forecast(
                    series.key(),
                    method.name(),
                    origin,
                    runner.train.values(),
                    actuals,
                    &f,
                    config,
                )
            });
            *outcome.timings.entry(method.name().to_string()).or_default() +=
                started.elapsed().as_secs_f64();
            match result {
                Ok(records) => outcome.records.extend(records),
                Err(e) => outcome.failures.push(BenchmarkFailure {
                    series: id.clone(),
                    origin: Some(origin),
                    method: Some(method.name().to_string()),
                    message: e.to_string(),
                }),
            }
        }
    }
    outcome
}

/// Rolling-origin evaluation of `methods` over every series.
///
/// Series are processed in parallel; RNG streams are keyed by series,
/// origin and method, so results do not depend on scheduling.
pub fn run_benchmark(
    dataset: &[DemandSeries],
    methods: &[BenchMethod],
    config: &BenchmarkConfig,
    demographic: Option<&DemographicInputs>,
) -> Result<BenchmarkResult> {
    if methods.is_empty() {
        return Err(Error::Empty("method list"));
    }
    let outcomes: Vec<SeriesOutcome> = dataset
        .par_iter()
        .map(|s| run_series(s, methods, config, demographic))
        .collect();
    let mut result = BenchmarkResult {
        records: Vec::new(),
        summary: Vec::new(),
        failures: Vec::new(),
        warnings: Vec::new(),
        timings: BTreeMap::new(),
    };
    for o in outcomes {
        result.records.extend(o.records);
        result.failures.extend(o.failures);
        result.warnings.extend(o.warnings);
        for (m, t) in o.timings {
            *result.timings.entry(m).or_default() += t;
        }
    }
    result.summary = summarize(&result.records);
    Ok(result)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_records_csv(path: impl AsRef<Path>, records: &[EvaluationRecord], levels: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "key".to_string(),
        "method".into(),
        "origin".into(),
        "horizon".into(),
        "actual".into(),
        "point".into(),
        "mase_q".into(),
        "crps".into(),
    ];
    header.extend(levels.iter().map(|l| format!("pinball_{l}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.key.id(),
            r.method.clone(),
            r.origin.to_string(),
            r.horizon.to_string(),
            r.actual.to_string(),
            r.point.to_string(),
            opt(r.mase_q),
            opt(r.crps),
        ];
        row.extend(levels.iter().map(|l| opt(r.pinball_by_level.get(&format!("{l}")).copied())));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_summary_csv(path: impl AsRef<Path>, summary: &[MethodSummary]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "mean_mase", "median_mase", "mean_crps", "median_crps"])?;
    for s in summary {
        w.write_record([
            s.method.clone(),
            s.mean_mase.to_string(),
            s.median_mase.to_string(),
            opt(s.mean_crps),
            opt(s.median_crps),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plan_48_months() {
        let s = plan_cv(48, &CvPlan::default()).unwrap();
        let ends: Vec<usize> = s.splits.iter().map(|x| x.train_len).collect();
        assert_eq!(ends, vec![43, 44, 45]);
        assert_eq!(s.splits[2].test_range(), 45..48);
        assert_eq!(s.splits[0].test_range(), 43..46);
        assert!(s.warning.is_none());
    }

    #[test]
    fn plan_single_origin() {
        let plan = CvPlan {
            origins: 1,
            ..CvPlan::default()
        };
        let s = plan_cv(30, &plan).unwrap();
        assert_eq!(s.splits.len(), 1);
        assert_eq!(s.splits[0].test_range(), 27..30);
    }

    #[test]
    fn plan_boundary_truncates_with_warning() {
        let plan = CvPlan::default();
        let s = plan_cv(plan.min_train + plan.horizon, &plan).unwrap();
        assert_eq!(s.splits.len(), 1);
        assert!(s.warning.is_some());
        assert!(matches!(
            plan_cv(plan.min_train + plan.horizon - 1, &plan),
            Err(Error::TooShort { required: 16, .. })
        ));
    }

    #[test]
    fn mase_examples() {
        let train: Vec<f64> = (1..=24).map(f64::from).collect();
        assert_eq!(mase(&train, &[30.0], &[30.0], 12).unwrap(), 0.0);
        let m = mase(&train, &[30.0], &[24.0], 12).unwrap();
        assert!((m - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn mase_zero_denominator() {
        let train: Vec<f64> = (1..=12).chain(1..=12).map(f64::from).collect();
        assert!(mase(&train, &[1.0], &[2.0], 12).is_err());
        assert_eq!(mase_scale(&train, 12), None);
    }

    #[test]
    fn snaive_repeating_season_scores_zero() {
        let mut train: Vec<f64> = (1..=12).map(f64::from).collect();
        train.extend((1..=12).map(|x| x as f64 * 2.0));
        let f = crate::forecasters::snaive(&train, 3, 12).unwrap();
        let actual = &train[12..15].to_vec();
        assert_eq!(mase(&train, actual, &f, 12).unwrap(), 0.0);
    }

    #[test]
    fn crps_examples() {
        assert_eq!(crps_ensemble(&[3.0, 3.0, 3.0], 3.0), 0.0);
        assert_eq!(crps_ensemble(&[7.5], 2.0), 5.5);
        assert_eq!(crps_ensemble(&[0.0, 1.0], 0.0), 0.25);
    }

    #[test]
    fn quantile_score_examples() {
        let grid = QuantileGrid::new(vec![0.05, 0.5, 0.95]).unwrap();
        let values = [2.0, 5.0, 9.0];
        let s = quantile_score(&grid, &values, 9.0, &[0.95]).unwrap();
        assert_eq!(s[0].1, 0.0);
        // actual 7 against the table: q=0.05 -> 0.05*5, q=0.5 -> 0.5*2, q=0.95 -> 0.05*2
        let s = quantile_score(&grid, &values, 7.0, &[0.05, 0.5, 0.95]).unwrap();
        let expected = [0.25, 1.0, 0.1];
        for ((_, got), want) in s.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(quantile_score(&grid, &values, 7.0, &[0.99]).is_err());
    }

    #[test]
    fn pinball_symmetry() {
        let d = 3.0;
        for q in [0.1, 0.25, 0.9] {
            assert!((pinball(q, 10.0 + d, 10.0) - pinball(1.0 - q, 10.0 - d, 10.0)).abs() < 1e-12);
        }
    }

    fn table(methods: &[&str], rows: Vec<Vec<f64>>) -> ScoreTable {
        ScoreTable {
            methods: methods.iter().map(|s| s.to_string()).collect(),
            series: (0..rows.len()).map(|i| format!("s{i}")).collect(),
            scores: rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect(),
        }
    }

    #[test]
    fn nemenyi_dominant_method() {
        let t = table(&["a", "b"], (0..5).map(|i| vec![i as f64, i as f64 + 1.0]).collect());
        let r = nemenyi_ranks(&t, 0.05).unwrap();
        assert_eq!(r.mean_ranks, vec![1.0, 2.0]);
    }

    #[test]
    fn nemenyi_all_ties() {
        let t = table(&["a", "b", "c", "d"], vec![vec![1.0; 4]; 6]);
        let r = nemenyi_ranks(&t, 0.05).unwrap();
        assert!(r.mean_ranks.iter().all(|x| *x == 2.5));
        assert!(r.significant_pairs.is_empty());
    }

    #[test]
    fn nemenyi_incomplete() {
        let mut t = table(&["a", "b"], vec![vec![1.0, 2.0]; 3]);
        t.scores[1][0] = None;
        match nemenyi_ranks(&t, 0.05).unwrap_err() {
            Error::IncompleteScores(cells) => assert_eq!(cells, vec!["s1/a".to_string()]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn average_rank_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    proptest! {
        #[test]
        fn crps_translation_invariant(
            xs in prop::collection::vec(-1000i32..1000, 1..40),
            y in -1000i32..1000,
            c in -1000i32..1000,
        ) {
            let members: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
            let shifted: Vec<f64> = xs.iter().map(|&x| (x + c) as f64).collect();
            let a = crps_ensemble(&members, y as f64);
            let b = crps_ensemble(&shifted, (y + c) as f64);
            prop_assert!(a >= 0.0);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn crps_positively_homogeneous(
            xs in prop::collection::vec(-100.0f64..100.0, 1..40),
            y in -100.0f64..100.0,
            lambda in 0.01f64..50.0,
        ) {
            let a = crps_ensemble(&xs, y);
            let scaled: Vec<f64> = xs.iter().map(|x| x * lambda).collect();
            let b = crps_ensemble(&scaled, y * lambda);
            prop_assert!((b - lambda * a).abs() <= 1e-9 * (1.0 + b.abs()));
        }

        #[test]
        fn crps_matches_pairwise_definition(
            xs in prop::collection::vec(-50.0f64..50.0, 1..30),
            y in -50.0f64..50.0,
        ) {
            let b = xs.len() as f64;
            let first = xs.iter().map(|x| (x - y).abs()).sum::<f64>() / b;
            let mut pair = 0.0;
            for x in &xs {
                for z in &xs {
                    pair += (x - z).abs();
                }
            }
            let brute = first - 0.5 * pair / (b * b);
            prop_assert!((crps_ensemble(&xs, y) - brute.max(0.0)).abs() <= 1e-9);
        }

        #[test]
        fn snaive_in_sample_mase_is_one(values in prop::collection::vec(0u32..500, 13..60)) {
            let train: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            prop_assume!(mase_scale(&train, 12).is_some());
            let actual = &train[12..];
            let fitted = &train[..train.len() - 12];
            let m = mase(&train, actual, fitted, 12).unwrap();
            prop_assert!((m - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn nemenyi_ranks_invariant_under_monotone_transform(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 3), 2..12),
        ) {
            let t = table(&["a", "b", "c"], rows.clone());
            let transformed = table(&["a", "b", "c"], rows.iter().map(|r| r.iter().map(|x| (x * 3.0).exp()).collect()).collect());
            let a = nemenyi_ranks(&t, 0.05).unwrap();
            let b = nemenyi_ranks(&transformed, 0.05).unwrap();
            prop_assert_eq!(a.mean_ranks, b.mean_ranks);
        }
    }
}
