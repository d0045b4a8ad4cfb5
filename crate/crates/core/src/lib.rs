//! Probabilistic demand forecasting for sparse contraceptive logistics data,
//! with hybrid combination of model distributions and expert point forecasts.

pub mod bootstrap;
pub mod combine;
pub mod error;
pub mod evaluate;
pub mod forecasters;
pub mod ingest;
pub mod lp;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    DemandSeries, DistributionCurve, EnsembleForecast, HybridSolution, PointForecast, PointSource,
    QuantileForecast, QuantileGrid, SeriesKey, Variant, YearMonth,
};
