//! Residual bootstrap: turns any point forecaster into an ensemble.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forecasters::Method;
use crate::types::{
    DemandSeries, EnsembleForecast, PointForecast, QuantileForecast, QuantileGrid, SeriesKey,
};

pub const DEFAULT_PATHS: usize = 1000;

/// One-step in-sample residuals `y_t - ŷ_t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualPool {
    residuals: Vec<f64>,
    method: String,
}

impl ResidualPool {
    pub fn new(residuals: Vec<f64>, method: impl Into<String>) -> Result<Self> {
        if residuals.is_empty() {
            return Err(Error::Empty("residual pool"));
        }
        if residuals.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("residual pool", "non-finite residual"));
        }
        Ok(Self {
            residuals,
            method: method.into(),
        })
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn method(&self) -> &str {
        &self.method
    }
}

pub fn fit_residuals_from(history: &[f64], method: &Method) -> Result<ResidualPool> {
    let fitted = method.fitted(history)?;
    let residuals: Vec<f64> = fitted.iter().map(|&(t, f)| history[t] - f).collect();
    if residuals.len() < 2 {
        return Err(Error::TooShort {
            required: method.min_history() + 2,
            actual: history.len(),
        });
    }
    ResidualPool::new(residuals, method.name())
}

pub fn fit_residuals(series: &DemandSeries, method: &Method) -> Result<ResidualPool> {
    fit_residuals_from(series.values(), method)
}

/// Derives an RNG stream from the run seed and a stream label (typically the
/// series key plus origin and method), so series can run in any order.
pub fn stream_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

pub fn stream_label(key: &SeriesKey, extra: &str) -> String {
    format!(
        "{}\u{1f}{}\u{1f}{}\u{1f}{}\u{1f}{}\u{1f}{}\u{1f}{extra}",
        key.region, key.district, key.site, key.site_type, key.product_category, key.product
    )
}

/// Adds residuals drawn uniformly with replacement to the base forecast.
/// Each (path, horizon) cell draws independently; results are clamped at zero.
pub fn simulate_paths_with(
    base: &PointForecast,
    pool: &ResidualPool,
    paths: usize,
    rng: &mut impl Rng,
) -> Result<EnsembleForecast> {
    if paths == 0 {
        return Err(Error::invalid("path count", "must be at least 1"));
    }
    let r = pool.residuals();
    let out: Vec<Vec<f64>> = (0..paths)
        .map(|_| {
            base.values()
                .iter()
                .map(|&f| (f + r[rng.random_range(0..r.len())]).max(0.0))
                .collect()
        })
        .collect();
    EnsembleForecast::new(base.key().clone(), base.origin(), out)
}

/// [`simulate_paths_with`] on the stream derived from `(seed, key, origin)`.
pub fn simulate_paths(
    base: &PointForecast,
    pool: &ResidualPool,
    paths: usize,
    seed: u64,
) -> Result<EnsembleForecast> {
    let label = stream_label(base.key(), &format!("{}|{}", base.origin(), pool.method()));
    simulate_paths_with(base, pool, paths, &mut stream_rng(seed, &label))
}

/// Type-7 empirical quantile of ascending `sorted` at probability `p`:
/// linear interpolation between order statistics at position `(n - 1) p`.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn to_quantiles(ensemble: &EnsembleForecast, grid: &QuantileGrid) -> Result<QuantileForecast> {
    if ensemble.size() < 2 {
        return Err(Error::invalid(
            "ensemble",
            "at least two paths are needed for empirical quantiles",
        ));
    }
    let rows = (0..ensemble.horizon())
        .map(|h| {
            let mut xs = ensemble.at_horizon(h);
            xs.sort_by(f64::total_cmp);
            grid.levels()
                .iter()
                .map(|&q| empirical_quantile(&xs, q))
                .collect()
        })
        .collect();
    QuantileForecast::new(ensemble.key().clone(), ensemble.origin(), grid.clone(), rows)
}

/// Point forecast plus bootstrap ensemble for one method on one history.
pub fn bootstrap_method(
    series: &DemandSeries,
    method: &Method,
    horizon: usize,
    paths: usize,
    seed: u64,
) -> Result<(PointForecast, EnsembleForecast)> {
    let base = method.forecast_series(series, horizon)?;
    let pool = fit_residuals(series, method)?;
    let ensemble = simulate_paths(&base, &pool, paths, seed)?;
    Ok((base, ensemble))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{PointSource, YearMonth};
    use proptest::prelude::*;

    fn key() -> SeriesKey {
        SeriesKey::new("R", "D", "S1", "clinic", "pills", "P1").unwrap()
    }

    fn origin() -> YearMonth {
        YearMonth::new(2019, 9).unwrap()
    }

    fn base(values: Vec<f64>) -> PointForecast {
        PointForecast::new(key(), origin(), values, PointSource::Model).unwrap()
    }

    #[test]
    fn periodic_snaive_residuals_are_zero() {
        let h: Vec<f64> = (1..=12).chain(1..=12).map(f64::from).collect();
        let pool = fit_residuals_from(&h, &Method::snaive()).unwrap();
        assert_eq!(pool.residuals(), &[0.0; 12]);
    }

    #[test]
    fn ma3_residuals_hand_computed() {
        let h = [2.0, 4.0, 6.0, 10.0, 5.0, 7.0];
        // forecasts: mean(2,4,6)=4, mean(4,6,10)=20/3, mean(6,10,5)=7
        let pool = fit_residuals_from(&h, &Method::moving_average()).unwrap();
        let expected = [10.0 - 4.0, 5.0 - 20.0 / 3.0, 7.0 - 7.0];
        for (r, e) in pool.residuals().iter().zip(expected) {
            assert!((r - e).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_residuals() {
        assert!(fit_residuals_from(&[1.0, 2.0, 3.0, 4.0], &Method::moving_average()).is_err());
    }

    #[test]
    fn zero_pool_reproduces_base() {
        let pool = ResidualPool::new(vec![0.0], "zero").unwrap();
        let b = base(vec![4.0, 5.5, 7.0]);
        let e = simulate_paths(&b, &pool, 50, 1).unwrap();
        assert!(e.paths().iter().all(|p| p == b.values()));
    }

    #[test]
    fn single_path_reproducible() {
        let pool = ResidualPool::new(vec![-2.0, 1.0, 3.0], "m").unwrap();
        let b = base(vec![10.0, 10.0]);
        let a = simulate_paths(&b, &pool, 1, 42).unwrap();
        let c = simulate_paths(&b, &pool, 1, 42).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.size(), 1);
    }

    #[test]
    fn symmetric_pool_mean_converges() {
        let pool = ResidualPool::new(vec![-1.0, 1.0], "m").unwrap();
        let e = simulate_paths(&base(vec![10.0, 10.0, 10.0]), &pool, 10_000, 7).unwrap();
        for m in e.means() {
            assert!((m - 10.0).abs() <= 0.05, "mean {m}");
        }
    }

    #[test]
    fn paths_clamped_at_zero() {
        let pool = ResidualPool::new(vec![-5.0], "m").unwrap();
        let e = simulate_paths(&base(vec![2.0]), &pool, 3, 0).unwrap();
        assert!(e.paths().iter().all(|p| p[0] == 0.0));
    }

    #[test]
    fn degenerate_ensemble_quantiles() {
        let e = EnsembleForecast::new(key(), origin(), vec![vec![3.0]; 5]).unwrap();
        let q = to_quantiles(&e, &QuantileGrid::percentiles()).unwrap();
        assert!(q.values()[0].iter().all(|v| *v == 3.0));
    }

    #[test]
    fn type7_two_points_median() {
        let e = EnsembleForecast::new(key(), origin(), vec![vec![0.0], vec![10.0]]).unwrap();
        let q = to_quantiles(&e, &QuantileGrid::new(vec![0.5]).unwrap()).unwrap();
        assert_eq!(q.values()[0][0], 5.0);
    }

    #[test]
    fn type7_extreme_levels_on_1_to_100() {
        let paths = (1..=100).map(|i| vec![i as f64]).collect();
        let e = EnsembleForecast::new(key(), origin(), paths).unwrap();
        let q = to_quantiles(&e, &QuantileGrid::new(vec![0.01, 0.99]).unwrap()).unwrap();
        // positions 0.99 and 98.01 in 0-based order statistics
        assert!((q.values()[0][0] - 1.99).abs() < 1e-12);
        assert!((q.values()[0][1] - 99.01).abs() < 1e-12);
    }

    #[test]
    fn single_path_rejected_for_quantiles() {
        let e = EnsembleForecast::new(key(), origin(), vec![vec![1.0]]).unwrap();
        assert!(to_quantiles(&e, &QuantileGrid::percentiles()).is_err());
    }

    #[test]
    fn streams_differ_by_label() {
        let mut a = stream_rng(1, "a");
        let mut b = stream_rng(1, "b");
        let xa = rand::RngCore::next_u64(&mut a);
        let xb = rand::RngCore::next_u64(&mut b);
        assert_ne!(xa, xb);
    }

    proptest! {
        #[test]
        fn quantiles_monotone(values in prop::collection::vec(0.0f64..1000.0, 2..200)) {
            let paths = values.iter().map(|v| vec![*v]).collect();
            let e = EnsembleForecast::new(key(), origin(), paths).unwrap();
            let q = to_quantiles(&e, &QuantileGrid::percentiles()).unwrap();
            prop_assert!(q.values()[0].windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
