//! Domain types shared by every stage of the pipeline.
//!
//! All types are plain immutable values once constructed. Constructors enforce
//! the invariants the rest of the crate relies on: non-negative demand,
//! contiguous monthly indices and monotone quantile rows.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A calendar month. Only monthly data is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct YearMonth {
    year: i32,
    month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::invalid("month", format!("{month} is not in 1..=12")));
        }
        Ok(Self { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    /// Calendar month, 1 = January.
    pub fn month(self) -> u8 {
        self.month
    }

    /// Months since year 0, used for index arithmetic.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        Self {
            year: ordinal.div_euclid(12) as i32,
            month: (ordinal.rem_euclid(12) + 1) as u8,
        }
    }

    pub fn plus(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }

    /// Signed number of months from `self` to `other`.
    pub fn months_until(self, other: YearMonth) -> i64 {
        other.ordinal() - self.ordinal()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("year-month", format!("expected YYYY-MM, got {s:?}"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year = y.parse::<i32>().map_err(|_| bad())?;
        let month = m.parse::<u8>().map_err(|_| bad())?;
        YearMonth::new(year, month)
    }
}

impl TryFrom<String> for YearMonth {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<YearMonth> for String {
    fn from(ym: YearMonth) -> String {
        ym.to_string()
    }
}

/// Position of a series in the supply hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub region: String,
    pub district: String,
    pub site: String,
    pub site_type: String,
    pub product_category: String,
    pub product: String,
}

impl SeriesKey {
    pub fn new(
        region: impl Into<String>,
        district: impl Into<String>,
        site: impl Into<String>,
        site_type: impl Into<String>,
        product_category: impl Into<String>,
        product: impl Into<String>,
    ) -> Result<Self> {
        let key = Self {
            region: region.into(),
            district: district.into(),
            site: site.into(),
            site_type: site_type.into(),
            product_category: product_category.into(),
            product: product.into(),
        };
        key.check()?;
        Ok(key)
    }

    pub fn check(&self) -> Result<()> {
        let labels = [
            ("region", &self.region),
            ("district", &self.district),
            ("site", &self.site),
            ("site_type", &self.site_type),
            ("product_category", &self.product_category),
            ("product", &self.product),
        ];
        for (name, value) in labels {
            if value.trim().is_empty() {
                return Err(Error::invalid("series key", format!("label `{name}` is empty")));
            }
        }
        Ok(())
    }

    /// Compact `site:product` identifier used in files and URLs.
    pub fn id(&self) -> String {
        format!("{}:{}", self.site, self.product)
    }

    /// Key for a bare `site:product` identifier whose hierarchy is not known.
    pub fn from_id(id: &str) -> Result<Self> {
        let (site, product) = id
            .split_once(':')
            .ok_or_else(|| Error::invalid("series id", format!("{id:?} is not site:product")))?;
        Self::new(UNKNOWN_LABEL, UNKNOWN_LABEL, site, UNKNOWN_LABEL, UNKNOWN_LABEL, product)
    }
}

pub const UNKNOWN_LABEL: &str = "unknown";

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// A contiguous monthly demand history for one site and product.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemandSeries {
    key: SeriesKey,
    start: YearMonth,
    values: Vec<f64>,
}

impl DemandSeries {
    pub fn new(key: SeriesKey, start: YearMonth, values: Vec<f64>) -> Result<Self> {
        key.check()?;
        if values.is_empty() {
            return Err(Error::Empty("demand series"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "demand series",
                format!("{key}: value {} at index {i} is not a non-negative count", values[i]),
            ));
        }
        Ok(Self { key, start, values })
    }

    pub fn key(&self) -> &SeriesKey {
        &self.key
    }

    pub fn start(&self) -> YearMonth {
        self.start
    }

    /// Last observed month.
    pub fn end(&self) -> YearMonth {
        self.start.plus(self.values.len() as i64 - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The first `len` observations as a new series.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.values.len() {
            return Err(Error::invalid(
                "truncation",
                format!("length {len} outside 1..={}", self.values.len()),
            ));
        }
        Ok(Self {
            key: self.key.clone(),
            start: self.start,
            values: self.values[..len].to_vec(),
        })
    }
}

/// Rejects datasets where two series share a (site, product) pair.
pub fn ensure_unique_keys(series: &[DemandSeries]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for s in series {
        if !seen.insert((s.key.site.as_str(), s.key.product.as_str())) {
            return Err(Error::invalid(
                "dataset",
                format!("duplicate series key {}", s.key),
            ));
        }
    }
    Ok(())
}

/// Observations as read from a source file, before gap and stockout checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub key: SeriesKey,
    /// Sorted by month, months unique.
    pub observations: Vec<(YearMonth, f64)>,
    pub stockout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub length: usize,
    /// Offsets from the first month where no observation exists.
    pub gaps: Vec<usize>,
    /// Offsets from the first month holding a negative or non-finite value.
    pub negatives: Vec<usize>,
    pub all_zero: bool,
    pub valid: bool,
}

pub fn validate_series(series: &RawSeries) -> ValidationReport {
    let obs = &series.observations;
    let Some(&(first, _)) = obs.first() else {
        return ValidationReport {
            length: 0,
            gaps: Vec::new(),
            negatives: Vec::new(),
            all_zero: false,
            valid: false,
        };
    };
    let span = first.months_until(obs[obs.len() - 1].0) as usize + 1;
    let present: BTreeSet<usize> = obs
        .iter()
        .map(|(m, _)| first.months_until(*m) as usize)
        .collect();
    let gaps: Vec<usize> = (0..span).filter(|i| !present.contains(i)).collect();
    let negatives: Vec<usize> = obs
        .iter()
        .filter(|(_, v)| !v.is_finite() || *v < 0.0)
        .map(|(m, _)| first.months_until(*m) as usize)
        .collect();
    let all_zero = obs.iter().all(|(_, v)| *v == 0.0);
    ValidationReport {
        length: span,
        valid: gaps.is_empty() && negatives.is_empty(),
        gaps,
        negatives,
        all_zero,
    }
}

impl RawSeries {
    pub fn validate(&self) -> ValidationReport {
        validate_series(self)
    }

    /// Converts to a contiguous series; fails on gaps or negative values.
    pub fn into_demand_series(self) -> Result<DemandSeries> {
        let report = self.validate();
        if !report.gaps.is_empty() {
            return Err(Error::invalid(
                "demand series",
                format!("{}: gap at index {}", self.key, report.gaps[0]),
            ));
        }
        let start = self
            .observations
            .first()
            .map(|(m, _)| *m)
            .ok_or(Error::Empty("demand series"))?;
        let values = self.observations.into_iter().map(|(_, v)| v).collect();
        DemandSeries::new(self.key, start, values)
    }
}

/// Strictly increasing probability levels inside [0.01, 0.99].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct QuantileGrid {
    levels: Vec<f64>,
}

impl QuantileGrid {
    pub const MIN_LEVEL: f64 = 0.01;
    pub const MAX_LEVEL: f64 = 0.99;

    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Empty("quantile grid"));
        }
        for &q in &levels {
            if !(Self::MIN_LEVEL..=Self::MAX_LEVEL).contains(&q) {
                return Err(Error::invalid(
                    "quantile grid",
                    format!("level {q} outside [0.01, 0.99]"),
                ));
            }
        }
        if let Some(w) = levels.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "quantile grid",
                format!("levels must be strictly increasing ({} then {})", w[0], w[1]),
            ));
        }
        Ok(Self { levels })
    }

    /// The 99 percentiles 0.01, 0.02, ..., 0.99.
    pub fn percentiles() -> Self {
        Self {
            levels: (1..=99).map(|i| i as f64 / 100.0).collect(),
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

fn check_row(row: &[f64], width: usize, what: &'static str) -> Result<Vec<f64>> {
    if row.len() != width {
        return Err(Error::ShapeMismatch(format!(
            "{what}: row has {} values, grid has {width}",
            row.len()
        )));
    }
    if let Some(v) = row.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(what, format!("non-finite value {v}")));
    }
    Ok(row.iter().map(|v| v.max(0.0)).collect())
}

/// Quantile values per horizon on a fixed grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileForecast {
    key: SeriesKey,
    origin: YearMonth,
    grid: QuantileGrid,
    /// `values[h][i]` is the level-`i` quantile at horizon `h + 1`.
    values: Vec<Vec<f64>>,
}

impl QuantileForecast {
    /// Clamps negatives to zero, then rejects any row that is not
    /// non-decreasing along the grid.
    pub fn new(
        key: SeriesKey,
        origin: YearMonth,
        grid: QuantileGrid,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("quantile forecast"));
        }
        let mut rows = Vec::with_capacity(values.len());
        for (h, row) in values.iter().enumerate() {
            let row = check_row(row, grid.len(), "quantile forecast")?;
            if let Some(i) = row.windows(2).position(|w| w[1] < w[0]) {
                return Err(Error::invalid(
                    "quantile forecast",
                    format!("horizon {} crosses between levels {} and {}", h + 1, i, i + 1),
                ));
            }
            rows.push(row);
        }
        Ok(Self {
            key,
            origin,
            grid,
            values: rows,
        })
    }

    /// Like [`QuantileForecast::new`] but repairs crossing by sorting each row.
    pub fn rearranged(
        key: SeriesKey,
        origin: YearMonth,
        grid: QuantileGrid,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut rows = Vec::with_capacity(values.len());
        for row in &values {
            let mut row = check_row(row, grid.len(), "quantile forecast")?;
            row.sort_by(f64::total_cmp);
            rows.push(row);
        }
        Self::new(key, origin, grid, rows)
    }

    pub fn key(&self) -> &SeriesKey {
        &self.key
    }

    pub fn origin(&self) -> YearMonth {
        self.origin
    }

    pub fn grid(&self) -> &QuantileGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    /// Uniform average over the grid for each horizon.
    pub fn grid_means(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointSource {
    Expert,
    Demographic,
    Model,
    PreAveraged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointForecast {
    key: SeriesKey,
    origin: YearMonth,
    values: Vec<f64>,
    source: PointSource,
}

impl PointForecast {
    /// Negative values are clamped to zero.
    pub fn new(
        key: SeriesKey,
        origin: YearMonth,
        values: Vec<f64>,
        source: PointSource,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("point forecast"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("point forecast", format!("non-finite value {v}")));
        }
        Ok(Self {
            key,
            origin,
            values: values.into_iter().map(|v| v.max(0.0)).collect(),
            source,
        })
    }

    pub fn key(&self) -> &SeriesKey {
        &self.key
    }

    pub fn origin(&self) -> YearMonth {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn source(&self) -> PointSource {
        self.source
    }
}

/// Sampled future paths, `paths[b][h]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleForecast {
    key: SeriesKey,
    origin: YearMonth,
    paths: Vec<Vec<f64>>,
}

impl EnsembleForecast {
    pub fn new(key: SeriesKey, origin: YearMonth, paths: Vec<Vec<f64>>) -> Result<Self> {
        let horizon = paths.first().map(Vec::len).ok_or(Error::Empty("ensemble"))?;
        if horizon == 0 {
            return Err(Error::Empty("ensemble horizon"));
        }
        let mut clamped = Vec::with_capacity(paths.len());
        for (b, path) in paths.into_iter().enumerate() {
            if path.len() != horizon {
                return Err(Error::ShapeMismatch(format!(
                    "path {b} has {} steps, expected {horizon}",
                    path.len()
                )));
            }
            if path.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("ensemble", format!("path {b} has non-finite values")));
            }
            clamped.push(path.into_iter().map(|v| v.max(0.0)).collect());
        }
        Ok(Self {
            key,
            origin,
            paths: clamped,
        })
    }

    pub fn key(&self) -> &SeriesKey {
        &self.key
    }

    pub fn origin(&self) -> YearMonth {
        self.origin
    }

    pub fn paths(&self) -> &[Vec<f64>] {
        &self.paths
    }

    /// Number of paths.
    pub fn size(&self) -> usize {
        self.paths.len()
    }

    pub fn horizon(&self) -> usize {
        self.paths[0].len()
    }

    /// All path values at horizon step `h` (0-based).
    pub fn at_horizon(&self, h: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p[h]).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.horizon())
            .map(|h| self.paths.iter().map(|p| p[h]).sum::<f64>() / self.size() as f64)
            .collect()
    }
}

/// The two hybrid combination variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Hybrid Weighted Average: weights on the simplex.
    WeightedAverage,
    /// Hybrid Bias Adjustment: weights in [0, upper], joint bias, mean realignment.
    BiasAdjustment,
}

impl Variant {
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::WeightedAverage => "Hybrid Weighted Average",
            Variant::BiasAdjustment => "Hybrid Bias Adjustment",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::WeightedAverage => "weighted_average",
            Variant::BiasAdjustment => "bias_adjustment",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted_average" | "A" | "a" => Ok(Variant::WeightedAverage),
            "bias_adjustment" | "B" | "b" => Ok(Variant::BiasAdjustment),
            other => Err(Error::invalid(
                "variant",
                format!("{other:?} (expected weighted_average or bias_adjustment)"),
            )),
        }
    }
}

/// Optimized combination of a point forecast with a quantile forecast.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridSolution {
    pub variant: Variant,
    pub weights: Vec<f64>,
    /// Additive bias; always 0 for the weighted-average variant.
    pub bias: f64,
    /// Multiplicative realignment per horizon; all 1 for the weighted-average variant.
    pub adjustment: Vec<f64>,
    pub adjusted_quantiles: QuantileForecast,
    /// Loss at the returned weights, excluding the tie-break penalty.
    pub objective: f64,
    /// The point forecast the weights were fitted against.
    pub point: Vec<f64>,
    /// Whether the grid mean of the final quantiles equals the point, per horizon.
    pub mean_aligned: Vec<bool>,
    /// Horizons whose weighted mean was zero, realigned by an additive shift.
    pub shifted_horizons: Vec<usize>,
    /// All input quantiles were zero, so weights are undetermined (uniform returned).
    pub degenerate: bool,
}

/// Piecewise-linear quantile function sampled at increasing probabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionCurve {
    points: Vec<(f64, f64)>,
}

impl DistributionCurve {
    /// Probabilities must be strictly increasing; values are sorted if they cross.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("distribution curve"));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid(
                "distribution curve",
                "probabilities must be strictly increasing",
            ));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::invalid("distribution curve", "non-finite point"));
        }
        let mut values: Vec<f64> = points.iter().map(|p| p.1).collect();
        values.sort_by(f64::total_cmp);
        let points = points.iter().zip(values).map(|(p, v)| (p.0, v)).collect();
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }
}
