//! CSV loading, series filtering and hierarchy aggregation.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DemandSeries, RawSeries, SeriesKey, YearMonth};

/// Maps logical fields onto CSV header names.
///
/// When `year` is `None` the month column must hold `YYYY-MM`; otherwise it
/// holds the calendar month number and the year comes from `year`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub region: String,
    pub district: String,
    pub site: String,
    pub site_type: String,
    pub product_category: String,
    pub product: String,
    pub year: Option<String>,
    pub month: String,
    pub stock_distributed: String,
    pub stockout: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            region: "region".into(),
            district: "district".into(),
            site: "site".into(),
            site_type: "site_type".into(),
            product_category: "product_category".into(),
            product: "product".into(),
            year: None,
            month: "month".into(),
            stock_distributed: "stock_distributed".into(),
            stockout: Some("stockout".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Gap,
    Stockout,
    TooShort,
    Negative,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Gap => "gap",
            DropReason::Stockout => "stockout",
            DropReason::TooShort => "too_short",
            DropReason::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedSeries {
    pub key: SeriesKey,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub row_count: usize,
    pub loaded: usize,
    pub series_count: usize,
    pub dropped: Vec<DroppedSeries>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterPolicy {
    pub drop_gaps: bool,
    pub drop_stockout_flagged: bool,
    pub min_length: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            drop_gaps: true,
            drop_stockout_flagged: true,
            min_length: 1,
        }
    }
}

struct Columns {
    labels: [usize; 6],
    year: Option<usize>,
    month: usize,
    value: usize,
    stockout: Option<usize>,
}

fn resolve_columns(headers: &csv::StringRecord, schema: &CsvSchema, path: &Path) -> Result<Columns> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require = |name: &str| {
        find(name).ok_or_else(|| Error::Row {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing required column `{name}`"),
        })
    };
    let year = match &schema.year {
        Some(name) => Some(require(name)?),
        None => None,
    };
    Ok(Columns {
        labels: [
            require(&schema.region)?,
            require(&schema.district)?,
            require(&schema.site)?,
            require(&schema.site_type)?,
            require(&schema.product_category)?,
            require(&schema.product)?,
        ],
        year,
        month: require(&schema.month)?,
        value: require(&schema.stock_distributed)?,
        stockout: schema.stockout.as_deref().and_then(find),
    })
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "no" | "n" => Some(false),
        "1" | "true" | "yes" | "y" => Some(true),
        _ => None,
    }
}

/// Reads rows into per-(site, product) observation lists without filtering.
///
/// Returns the series sorted by (site, product) and the number of data rows.
pub fn read_raw_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(Vec<RawSeries>, usize)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let cols = resolve_columns(&headers, schema, path)?;

    let mut groups: BTreeMap<(String, String), RawSeries> = BTreeMap::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row_err = |message: String| Error::Row {
            path: path.to_path_buf(),
            line,
            message,
        };
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        rows += 1;

        let l = cols.labels;
        let key = SeriesKey::new(field(l[0]), field(l[1]), field(l[2]), field(l[3]), field(l[4]), field(l[5]))
            .map_err(|e| row_err(e.to_string()))?;
        let month = match cols.year {
            None => field(cols.month)
                .parse::<YearMonth>()
                .map_err(|e| row_err(e.to_string()))?,
            Some(yc) => {
                let year = field(yc)
                    .parse::<i32>()
                    .map_err(|_| row_err(format!("bad year {:?}", field(yc))))?;
                let m = field(cols.month)
                    .parse::<u8>()
                    .map_err(|_| row_err(format!("bad month {:?}", field(cols.month))))?;
                YearMonth::new(year, m).map_err(|e| row_err(e.to_string()))?
            }
        };
        let value = field(cols.value)
            .parse::<f64>()
            .map_err(|_| row_err(format!("bad stock_distributed {:?}", field(cols.value))))?;
        if !value.is_finite() {
            return Err(row_err(format!("non-finite stock_distributed {value}")));
        }
        let stockout = match cols.stockout {
            Some(c) => parse_bool(field(c))
                .ok_or_else(|| row_err(format!("bad stockout flag {:?}", field(c))))?,
            None => false,
        };

        let group_key = (key.site.clone(), key.product.clone());
        let entry = groups.entry(group_key).or_insert_with(|| RawSeries {
            key: key.clone(),
            observations: Vec::new(),
            stockout: false,
        });
        if entry.key != key {
            return Err(row_err(format!(
                "hierarchy labels for {} disagree with an earlier row",
                key.id()
            )));
        }
        entry.stockout |= stockout;
        entry.observations.push((month, value));
    }

    let mut out = Vec::with_capacity(groups.len());
    for (_, mut raw) in groups {
        raw.observations.sort_by_key(|(m, _)| *m);
        if let Some(w) = raw.observations.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateObservation {
                key: raw.key.id(),
                month: w[0].0.to_string(),
            });
        }
        out.push(raw);
    }
    Ok((out, rows))
}

/// Loads a dataset, dropping series with gaps or stockout flags.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
) -> Result<(Vec<DemandSeries>, DatasetManifest)> {
    let path = path.as_ref();
    let (raw, row_count) = read_raw_csv(path, schema)?;
    let loaded = raw.len();
    let (series, dropped) = filter_series(raw, &FilterPolicy::default());
    let manifest = DatasetManifest {
        path: path.to_path_buf(),
        row_count,
        loaded,
        series_count: series.len(),
        dropped,
    };
    Ok((series, manifest))
}

/// Writes series in the default schema (ISO month column, no stockout column).
pub fn write_csv(path: impl AsRef<Path>, series: &[DemandSeries]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "region",
        "district",
        "site",
        "site_type",
        "product_category",
        "product",
        "month",
        "stock_distributed",
    ])?;
    for s in series {
        let k = s.key();
        for (i, v) in s.values().iter().enumerate() {
            w.write_record([
                k.region.as_str(),
                &k.district,
                &k.site,
                &k.site_type,
                &k.product_category,
                &k.product,
                &s.start().plus(i as i64).to_string(),
                &v.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Applies `policy`, returning the surviving series and a drop report.
///
/// The first failing check in the order gap, stockout, negative, length
/// determines the reported reason. When gaps are tolerated only the run
/// after the last gap survives.
pub fn filter_series(
    series: Vec<RawSeries>,
    policy: &FilterPolicy,
) -> (Vec<DemandSeries>, Vec<DroppedSeries>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for raw in series {
        let report = raw.validate();
        let reason = if !report.gaps.is_empty() && policy.drop_gaps {
            Some(DropReason::Gap)
        } else if raw.stockout && policy.drop_stockout_flagged {
            Some(DropReason::Stockout)
        } else if !report.negatives.is_empty() {
            Some(DropReason::Negative)
        } else if report.length - report.gaps.len() < policy.min_length.max(1) {
            Some(DropReason::TooShort)
        } else {
            None
        };
        if let Some(reason) = reason {
            dropped.push(DroppedSeries {
                key: raw.key,
                reason,
            });
            continue;
        }
        // With gaps tolerated, only the trailing contiguous run is kept.
        let key = raw.key.clone();
        let tail_start = report.gaps.last().map_or(0, |g| g + 1);
        let first = raw.observations[0].0;
        let start = first.plus(tail_start as i64);
        let values = raw
            .observations
            .into_iter()
            .filter(|(m, _)| *m >= start)
            .map(|(_, v)| v)
            .collect::<Vec<_>>();
        if values.len() < policy.min_length.max(1) {
            dropped.push(DroppedSeries {
                key,
                reason: DropReason::TooShort,
            });
            continue;
        }
        match DemandSeries::new(key.clone(), start, values) {
            Ok(s) => kept.push(s),
            Err(_) => dropped.push(DroppedSeries {
                key,
                reason: DropReason::Negative,
            }),
        }
    }
    (kept, dropped)
}

/// Hierarchy level to aggregate to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Country,
    Region,
    District,
    Site,
    Product,
}

pub const ALL_LABEL: &str = "ALL";

fn level_key(key: &SeriesKey, level: Level) -> SeriesKey {
    let all = || ALL_LABEL.to_string();
    match level {
        Level::Country => SeriesKey {
            region: all(),
            district: all(),
            site: all(),
            site_type: all(),
            product_category: all(),
            product: all(),
        },
        Level::Region => SeriesKey {
            region: key.region.clone(),
            district: all(),
            site: all(),
            site_type: all(),
            product_category: all(),
            product: all(),
        },
        Level::District => SeriesKey {
            region: key.region.clone(),
            district: key.district.clone(),
            site: all(),
            site_type: all(),
            product_category: all(),
            product: all(),
        },
        Level::Site => SeriesKey {
            region: key.region.clone(),
            district: key.district.clone(),
            site: key.site.clone(),
            site_type: key.site_type.clone(),
            product_category: all(),
            product: all(),
        },
        Level::Product => SeriesKey {
            region: all(),
            district: all(),
            site: all(),
            site_type: all(),
            product_category: key.product_category.clone(),
            product: key.product.clone(),
        },
    }
}

/// Sums series sharing the same label at `level` over their common span.
pub fn aggregate(series: &[DemandSeries], level: Level) -> Result<Vec<DemandSeries>> {
    if series.is_empty() {
        return Err(Error::Empty("aggregation input"));
    }
    let start = series.iter().map(|s| s.start()).max().unwrap();
    let end = series.iter().map(|s| s.end()).min().unwrap();
    if end < start {
        return Err(Error::invalid(
            "aggregation input",
            "series share no common monthly span",
        ));
    }
    let span = start.months_until(end) as usize + 1;

    let mut sums: BTreeMap<SeriesKey, Vec<f64>> = BTreeMap::new();
    for s in series {
        let offset = s.start().months_until(start) as usize;
        let acc = sums
            .entry(level_key(s.key(), level))
            .or_insert_with(|| vec![0.0; span]);
        for (a, v) in acc.iter_mut().zip(&s.values()[offset..offset + span]) {
            *a += v;
        }
    }
    sums.into_iter()
        .map(|(key, values)| DemandSeries::new(key, start, values))
        .collect()
}
