//! Base point-forecast methods.
//!
//! Every method works on a plain history slice and produces `horizon` values
//! by recursive multi-step forecasting. The `*_forecast` wrappers attach the
//! series key and origin.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DemandSeries, PointForecast, PointSource, SeriesKey, YearMonth};

pub const DEFAULT_SEASON: usize = 12;
pub const DEFAULT_MA_WINDOW: usize = 3;
pub const DEFAULT_SBA_ALPHA: f64 = 0.1;

/// Seasonal naive: the value one season back, reusing earlier forecasts
/// once the horizon exceeds the season length.
pub fn snaive(history: &[f64], horizon: usize, season: usize) -> Result<Vec<f64>> {
    if season == 0 {
        return Err(Error::invalid("season", "must be at least 1"));
    }
    if history.len() < season {
        return Err(Error::TooShort {
            required: season,
            actual: history.len(),
        });
    }
    let mut extended = history.to_vec();
    for _ in 0..horizon {
        extended.push(extended[extended.len() - season]);
    }
    Ok(extended.split_off(history.len()))
}

/// Mean of the last `window` values, with each forecast fed back as history.
pub fn moving_average(history: &[f64], horizon: usize, window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::invalid("window", "must be at least 1"));
    }
    if history.len() < window {
        return Err(Error::TooShort {
            required: window,
            actual: history.len(),
        });
    }
    let mut extended = history.to_vec();
    for _ in 0..horizon {
        let tail = &extended[extended.len() - window..];
        let next = tail.iter().sum::<f64>() / window as f64;
        extended.push(next);
    }
    Ok(extended.split_off(history.len()))
}

/// Smoothing parameter choice for [`ses`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alpha {
    Fixed(f64),
    /// Grid search over 0.05, 0.10, ..., 0.95 minimizing in-sample SSE.
    Fitted,
}

fn ses_levels(history: &[f64], alpha: f64) -> Vec<f64> {
    let mut levels = Vec::with_capacity(history.len());
    let mut level = history[0];
    levels.push(level);
    for &y in &history[1..] {
        level = alpha * y + (1.0 - alpha) * level;
        levels.push(level);
    }
    levels
}

fn ses_sse(history: &[f64], alpha: f64) -> f64 {
    let levels = ses_levels(history, alpha);
    history[1..]
        .iter()
        .zip(&levels)
        .map(|(y, l)| (y - l).powi(2))
        .sum()
}

/// The smoothing parameter [`ses`] will use for `history`.
pub fn ses_alpha(history: &[f64], alpha: Alpha) -> Result<f64> {
    match alpha {
        Alpha::Fixed(a) if a > 0.0 && a <= 1.0 => Ok(a),
        Alpha::Fixed(a) => Err(Error::invalid("alpha", format!("{a} outside (0, 1]"))),
        Alpha::Fitted => {
            if history.len() < 2 {
                return Err(Error::TooShort {
                    required: 2,
                    actual: history.len(),
                });
            }
            let mut best = (f64::INFINITY, 0.05);
            for step in 1..=19 {
                let a = step as f64 * 0.05;
                let sse = ses_sse(history, a);
                if sse < best.0 {
                    best = (sse, a);
                }
            }
            Ok(best.1)
        }
    }
}

/// Simple exponential smoothing with the level initialized at the first
/// observation; the forecast is flat at the final level.
pub fn ses(history: &[f64], horizon: usize, alpha: Alpha) -> Result<Vec<f64>> {
    if history.len() < 2 {
        return Err(Error::TooShort {
            required: 2,
            actual: history.len(),
        });
    }
    let a = ses_alpha(history, alpha)?;
    let level = *ses_levels(history, a).last().unwrap();
    Ok(vec![level; horizon])
}

/// Croston state: smoothed demand size and smoothed inter-demand interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbaState {
    pub demand_size_estimate: f64,
    pub interval_estimate: f64,
    pub alpha: f64,
}

impl SbaState {
    /// Bias-corrected demand rate `(1 - alpha/2) * z / p`.
    pub fn rate(&self) -> f64 {
        (1.0 - self.alpha / 2.0) * self.demand_size_estimate / self.interval_estimate
    }

    fn update(&mut self, demand: f64, interval: f64) {
        self.demand_size_estimate += self.alpha * (demand - self.demand_size_estimate);
        self.interval_estimate += self.alpha * (interval - self.interval_estimate);
    }
}

/// Runs the Croston recursion and returns the state after the last period,
/// or `None` for an all-zero history.
///
/// The first nonzero demand initializes the state: with `init = None` it sets
/// `z = demand` and `p = ` its 1-based position; otherwise `init` is used as
/// given. Later nonzero demands update `z` and `p` with the number of periods
/// since the previous demand.
pub fn croston_state(history: &[f64], alpha: f64, init: Option<SbaState>) -> Result<Option<SbaState>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", format!("{alpha} outside [0, 1]")));
    }
    let mut demands = history.iter().enumerate().filter(|(_, d)| **d > 0.0);
    let Some((first, &d0)) = demands.next() else {
        return Ok(None);
    };
    let mut state = init.unwrap_or(SbaState {
        demand_size_estimate: d0,
        interval_estimate: (first + 1) as f64,
        alpha,
    });
    state.alpha = alpha;
    let mut last = first;
    for (t, &d) in demands {
        state.update(d, (t - last) as f64);
        last = t;
    }
    Ok(Some(state))
}

/// Syntetos-Boylan approximation; flat across the horizon. An all-zero
/// history forecasts zero.
pub fn croston_sba(history: &[f64], horizon: usize, alpha: f64) -> Result<Vec<f64>> {
    let rate = croston_state(history, alpha, None)?.map_or(0.0, |s| s.rate());
    Ok(vec![rate; horizon])
}

/// A registered point forecaster and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Snaive {
        #[serde(default = "default_season")]
        season: usize,
    },
    MovingAverage {
        #[serde(default = "default_window")]
        window: usize,
    },
    Ses {
        #[serde(default = "default_alpha")]
        alpha: Alpha,
    },
    CrostonSba {
        #[serde(default = "default_sba_alpha")]
        alpha: f64,
    },
}

fn default_season() -> usize {
    DEFAULT_SEASON
}
fn default_window() -> usize {
    DEFAULT_MA_WINDOW
}
fn default_alpha() -> Alpha {
    Alpha::Fitted
}
fn default_sba_alpha() -> f64 {
    DEFAULT_SBA_ALPHA
}

impl Method {
    pub fn snaive() -> Self {
        Method::Snaive {
            season: DEFAULT_SEASON,
        }
    }

    pub fn moving_average() -> Self {
        Method::MovingAverage {
            window: DEFAULT_MA_WINDOW,
        }
    }

    pub fn ses() -> Self {
        Method::Ses {
            alpha: Alpha::Fitted,
        }
    }

    pub fn croston_sba() -> Self {
        Method::CrostonSba {
            alpha: DEFAULT_SBA_ALPHA,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Snaive { .. } => "snaive",
            Method::MovingAverage { .. } => "ma",
            Method::Ses { .. } => "ses",
            Method::CrostonSba { .. } => "croston_sba",
        }
    }

    /// Whether the method is bootstrapped into a distribution in the default
    /// pipeline. SBA stays point-only.
    pub fn is_probabilistic(&self) -> bool {
        !matches!(self, Method::CrostonSba { .. })
    }

    /// Smallest history the method accepts.
    pub fn min_history(&self) -> usize {
        match *self {
            Method::Snaive { season } => season,
            Method::MovingAverage { window } => window,
            Method::Ses { .. } => 2,
            Method::CrostonSba { .. } => 1,
        }
    }

    pub fn forecast(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>> {
        match *self {
            Method::Snaive { season } => snaive(history, horizon, season),
            Method::MovingAverage { window } => moving_average(history, horizon, window),
            Method::Ses { alpha } => ses(history, horizon, alpha),
            Method::CrostonSba { alpha } => {
                if history.is_empty() {
                    return Err(Error::TooShort {
                        required: 1,
                        actual: 0,
                    });
                }
                croston_sba(history, horizon, alpha)
            }
        }
    }

    /// One-step-ahead in-sample forecasts for `history[t]`, `t >= min_history`.
    ///
    /// Parameters that are fitted (the SES smoothing constant) are fitted once
    /// on the full history.
    pub fn fitted(&self, history: &[f64]) -> Result<Vec<(usize, f64)>> {
        let start = self.min_history();
        match *self {
            Method::Ses { alpha } => {
                if history.len() < 2 {
                    return Err(Error::TooShort {
                        required: 2,
                        actual: history.len(),
                    });
                }
                let a = ses_alpha(history, alpha)?;
                let levels = ses_levels(history, a);
                Ok((1..history.len()).map(|t| (t, levels[t - 1])).collect())
            }
            _ => (start..history.len())
                .map(|t| Ok((t, self.forecast(&history[..t], 1)?[0])))
                .collect(),
        }
    }

    pub fn forecast_series(&self, series: &DemandSeries, horizon: usize) -> Result<PointForecast> {
        let values = self.forecast(series.values(), horizon)?;
        PointForecast::new(series.key().clone(), series.end(), values, PointSource::Model)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Five-year age buckets of women of reproductive age, 15-19 through 45-49.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeGroup {
    #[serde(rename = "15-19")]
    A15To19,
    #[serde(rename = "20-24")]
    A20To24,
    #[serde(rename = "25-29")]
    A25To29,
    #[serde(rename = "30-34")]
    A30To34,
    #[serde(rename = "35-39")]
    A35To39,
    #[serde(rename = "40-44")]
    A40To44,
    #[serde(rename = "45-49")]
    A45To49,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 7] = [
        AgeGroup::A15To19,
        AgeGroup::A20To24,
        AgeGroup::A25To29,
        AgeGroup::A30To34,
        AgeGroup::A35To39,
        AgeGroup::A40To44,
        AgeGroup::A45To49,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AgeGroup::A15To19 => "15-19",
            AgeGroup::A20To24 => "20-24",
            AgeGroup::A25To29 => "25-29",
            AgeGroup::A30To34 => "30-34",
            AgeGroup::A35To39 => "35-39",
            AgeGroup::A40To44 => "40-44",
            AgeGroup::A45To49 => "45-49",
        }
    }
}

/// Factors of the demographic demand equation, as read from a JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemographicInputs {
    /// Women per age group, keyed by site.
    pub women_population: BTreeMap<String, BTreeMap<AgeGroup, f64>>,
    /// Modern contraceptive prevalence per age group.
    pub mcpr: BTreeMap<AgeGroup, f64>,
    /// Share of users per product category.
    pub method_mix: BTreeMap<String, f64>,
    /// Couple-years-of-protection factor per product.
    pub cyp: BTreeMap<String, f64>,
    /// Brand share of each product within its category.
    pub brand_mix: BTreeMap<String, f64>,
    pub source_share: f64,
    /// Share of the annual estimate falling in each calendar month, January first.
    #[serde(default = "uniform_monthly_weights")]
    pub monthly_weights: Vec<f64>,
}

pub fn uniform_monthly_weights() -> Vec<f64> {
    vec![1.0 / 12.0; 12]
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(
            "demographic inputs",
            format!("{name} = {p} is not a probability"),
        ));
    }
    Ok(())
}

impl DemographicInputs {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let inputs: Self = serde_json::from_str(s)?;
        inputs.check()?;
        Ok(inputs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn check(&self) -> Result<()> {
        for (g, p) in &self.mcpr {
            check_probability(&format!("mcpr[{}]", g.label()), *p)?;
        }
        for (c, p) in &self.method_mix {
            check_probability(&format!("method_mix[{c}]"), *p)?;
        }
        if self.method_mix.values().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::invalid("demographic inputs", "method_mix sums above 1"));
        }
        for (p, v) in &self.brand_mix {
            check_probability(&format!("brand_mix[{p}]"), *v)?;
        }
        for (p, v) in &self.cyp {
            if !(*v > 0.0) {
                return Err(Error::invalid(
                    "demographic inputs",
                    format!("cyp[{p}] = {v} must be positive"),
                ));
            }
        }
        check_probability("source_share", self.source_share)?;
        if self.monthly_weights.len() != 12 {
            return Err(Error::invalid(
                "demographic inputs",
                format!("monthly_weights has {} entries, expected 12", self.monthly_weights.len()),
            ));
        }
        for (i, w) in self.monthly_weights.iter().enumerate() {
            check_probability(&format!("monthly_weights[{i}]"), *w)?;
        }
        if (self.monthly_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("demographic inputs", "monthly_weights must sum to 1"));
        }
        for (site, groups) in &self.women_population {
            for (g, n) in groups {
                if !(*n >= 0.0) {
                    return Err(Error::invalid(
                        "demographic inputs",
                        format!("women_population[{site}][{}] = {n} is negative", g.label()),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Annual estimate before the monthly weighting.
    pub fn annual_estimate(&self, key: &SeriesKey) -> Result<f64> {
        let population = self
            .women_population
            .get(&key.site)
            .ok_or_else(|| Error::MissingFactor(format!("women_population[{}]", key.site)))?;
        let mut users = 0.0;
        for (group, women) in population {
            let mcpr = self
                .mcpr
                .get(group)
                .ok_or_else(|| Error::MissingFactor(format!("mcpr[{}]", group.label())))?;
            users += mcpr * women;
        }
        let method_mix = self
            .method_mix
            .get(&key.product_category)
            .ok_or_else(|| Error::MissingFactor(format!("method_mix[{}]", key.product_category)))?;
        let cyp = self
            .cyp
            .get(&key.product)
            .ok_or_else(|| Error::MissingFactor(format!("cyp[{}]", key.product)))?;
        let brand_mix = self
            .brand_mix
            .get(&key.product)
            .ok_or_else(|| Error::MissingFactor(format!("brand_mix[{}]", key.product)))?;
        Ok(users * method_mix * cyp * brand_mix * self.source_share)
    }

    /// Monthly estimates for the given calendar months.
    pub fn monthly_estimates(&self, key: &SeriesKey, months: &[YearMonth]) -> Result<Vec<f64>> {
        let annual = self.annual_estimate(key)?;
        Ok(months
            .iter()
            .map(|m| annual * self.monthly_weights[m.month() as usize - 1])
            .collect())
    }
}

/// Demographic point forecast for `months`; the origin is the month before the first.
pub fn demographic_forecast(
    inputs: &DemographicInputs,
    key: &SeriesKey,
    months: &[YearMonth],
) -> Result<PointForecast> {
    let first = months.first().ok_or(Error::Empty("forecast months"))?;
    let values = inputs.monthly_estimates(key, months)?;
    PointForecast::new(key.clone(), first.plus(-1), values, PointSource::Demographic)
}
