//! Forecast combination.
//!
//! Two families live here: equal-weight pooling of bootstrap ensembles, and
//! the hybrid fusion of a point forecast with a quantile forecast. The hybrid
//! treats the point forecast as the observation and chooses one weight per
//! quantile level by linear programming, minimizing the pinball loss of the
//! weighted quantiles plus `n` times the absolute gap between the point and
//! the weighted mean, summed over the horizons of one origin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpProblem, Relation};
use crate::types::{
    DistributionCurve, EnsembleForecast, HybridSolution, PointForecast, PointSource,
    QuantileForecast, QuantileGrid, Variant,
};

/// Pinball loss of `predicted` as the `q` quantile when `actual` is observed.
pub fn pinball(q: f64, actual: f64, predicted: f64) -> f64 {
    let indicator = if actual < predicted { 1.0 } else { 0.0 };
    (actual - predicted) * (q - indicator)
}

/// Equal-weight mixture: concatenates the member paths.
pub fn pool_equal(ensembles: &[EnsembleForecast]) -> Result<EnsembleForecast> {
    let first = ensembles.first().ok_or(Error::Empty("ensemble list"))?;
    for (i, e) in ensembles.iter().enumerate().skip(1) {
        if e.key() != first.key()
            || e.origin() != first.origin()
            || e.horizon() != first.horizon()
            || e.size() != first.size()
        {
            return Err(Error::ShapeMismatch(format!(
                "ensemble {i} ({} @ {}, {}x{}) does not match ensemble 0 ({} @ {}, {}x{})",
                e.key(),
                e.origin(),
                e.size(),
                e.horizon(),
                first.key(),
                first.origin(),
                first.size(),
                first.horizon()
            )));
        }
    }
    let paths = ensembles
        .iter()
        .flat_map(|e| e.paths().iter().cloned())
        .collect();
    EnsembleForecast::new(first.key().clone(), first.origin(), paths)
}

/// How the weighted mean inside the loss is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanDefinition {
    /// `(1/n) Σ w_i F_i`, the uniform average of the weighted quantiles.
    #[default]
    PaperLiteral,
    /// `Σ w_i F_i`, the mean of the weight-mixture of quantile values.
    Mixture,
}

impl MeanDefinition {
    fn factor(self, n: usize) -> f64 {
        match self {
            MeanDefinition::PaperLiteral => 1.0 / n as f64,
            MeanDefinition::Mixture => 1.0,
        }
    }
}

impl std::str::FromStr for MeanDefinition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_literal" => Ok(MeanDefinition::PaperLiteral),
            "mixture" => Ok(MeanDefinition::Mixture),
            other => Err(Error::invalid(
                "mean definition",
                format!("{other:?} (expected paper_literal or mixture)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridConfig {
    pub mean_definition: MeanDefinition,
    /// Upper weight bound for the bias-adjustment variant.
    pub upper_bound: f64,
    /// The bias is confined to `±bias_bound_factor · max|F|`.
    pub bias_bound_factor: f64,
    /// Coefficient of the `Σ i·w_i` tie-break penalty.
    pub tie_break: f64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            mean_definition: MeanDefinition::PaperLiteral,
            upper_bound: 5.0,
            bias_bound_factor: 10.0,
            tie_break: 1e-9,
        }
    }
}

/// Averages the expert point with the grid mean of the quantile forecast.
pub fn pre_average(expert: &PointForecast, prob: &QuantileForecast) -> Result<PointForecast> {
    if expert.horizon() != prob.horizon() {
        return Err(Error::ShapeMismatch(format!(
            "point has {} horizons, quantile forecast has {}",
            expert.horizon(),
            prob.horizon()
        )));
    }
    let values = expert
        .values()
        .iter()
        .zip(prob.grid_means())
        .map(|(p, m)| (p + m) / 2.0)
        .collect();
    PointForecast::new(
        expert.key().clone(),
        expert.origin(),
        values,
        PointSource::PreAveraged,
    )
}

/// Total hybrid loss at given weights and bias, without any tie-break term.
pub fn hybrid_loss(
    grid: &QuantileGrid,
    quantiles: &[Vec<f64>],
    point: &[f64],
    weights: &[f64],
    bias: f64,
    mean_definition: MeanDefinition,
) -> f64 {
    let n = grid.len();
    let k = mean_definition.factor(n);
    quantiles
        .iter()
        .zip(point)
        .map(|(row, &p)| {
            let weighted: Vec<f64> = row.iter().zip(weights).map(|(f, w)| w * f + bias).collect();
            let mean = k * row.iter().zip(weights).map(|(f, w)| w * f).sum::<f64>() + bias;
            let gap = n as f64 * (p - mean).abs();
            let pin: f64 = grid
                .levels()
                .iter()
                .zip(&weighted)
                .map(|(&q, &y)| pinball(q, p, y).max(0.0))
                .sum();
            gap + pin
        })
        .sum()
}

fn check_aligned(prob: &QuantileForecast, point: &PointForecast) -> Result<()> {
    if prob.key() != point.key() || prob.origin() != point.origin() {
        return Err(Error::ShapeMismatch(format!(
            "quantile forecast {} @ {} vs point forecast {} @ {}",
            prob.key(),
            prob.origin(),
            point.key(),
            point.origin()
        )));
    }
    if prob.horizon() != point.horizon() {
        return Err(Error::ShapeMismatch(format!(
            "quantile forecast has {} horizons, point forecast has {}",
            prob.horizon(),
            point.horizon()
        )));
    }
    Ok(())
}

/// Column layout of the hybrid LP.
struct Layout {
    n: usize,
    horizons: usize,
    bias: Option<usize>,
}

impl Layout {
    fn weight(&self, i: usize) -> usize {
        i
    }
    fn gap_pos(&self, t: usize) -> usize {
        self.n + self.bias.map_or(0, |_| 1) + 2 * t
    }
    fn gap_neg(&self, t: usize) -> usize {
        self.gap_pos(t) + 1
    }
    fn pin_pos(&self, t: usize, i: usize) -> usize {
        self.gap_pos(self.horizons) + 2 * (t * self.n + i)
    }
    fn pin_neg(&self, t: usize, i: usize) -> usize {
        self.pin_pos(t, i) + 1
    }
    fn total(&self) -> usize {
        self.pin_pos(self.horizons, 0)
    }
}

/// Builds the linear program for either variant.
///
/// Each absolute or pinball term is split into non-negative parts
/// `P - ŷ = e⁺ - e⁻` with costs `(q, 1 - q)` for pinball and `(n, n)` for the
/// mean gap, which is exact because both costs are positive.
pub fn build_hybrid_lp(
    prob: &QuantileForecast,
    point: &[f64],
    variant: Variant,
    config: &HybridConfig,
) -> LpProblem {
    let grid = prob.grid();
    let n = grid.len();
    let horizons = prob.horizon();
    let layout = Layout {
        n,
        horizons,
        bias: (variant == Variant::BiasAdjustment).then_some(n),
    };
    let mut lp = LpProblem::new(layout.total());
    let k = config.mean_definition.factor(n);

    let upper = match variant {
        Variant::WeightedAverage => 1.0,
        Variant::BiasAdjustment => config.upper_bound,
    };
    for i in 0..n {
        lp.set_bounds(layout.weight(i), 0.0, upper);
        lp.set_cost(layout.weight(i), config.tie_break * (i + 1) as f64);
    }
    if let Some(b) = layout.bias {
        let max_abs = prob
            .values()
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let bound = config.bias_bound_factor * max_abs;
        lp.set_bounds(b, -bound, bound);
    }

    for (t, row) in prob.values().iter().enumerate() {
        let p = point[t];
        let mut mean_row: Vec<(usize, f64)> = (0..n).map(|i| (layout.weight(i), k * row[i])).collect();
        if let Some(b) = layout.bias {
            mean_row.push((b, 1.0));
        }
        mean_row.push((layout.gap_pos(t), 1.0));
        mean_row.push((layout.gap_neg(t), -1.0));
        lp.add_constraint(mean_row, Relation::Eq, p);
        lp.set_cost(layout.gap_pos(t), n as f64);
        lp.set_cost(layout.gap_neg(t), n as f64);

        for (i, &q) in grid.levels().iter().enumerate() {
            let mut pin_row = vec![(layout.weight(i), row[i])];
            if let Some(b) = layout.bias {
                pin_row.push((b, 1.0));
            }
            pin_row.push((layout.pin_pos(t, i), 1.0));
            pin_row.push((layout.pin_neg(t, i), -1.0));
            lp.add_constraint(pin_row, Relation::Eq, p);
            lp.set_cost(layout.pin_pos(t, i), q);
            lp.set_cost(layout.pin_neg(t, i), 1.0 - q);
        }
    }

    if variant == Variant::WeightedAverage {
        lp.add_constraint((0..n).map(|i| (layout.weight(i), 1.0)).collect(), Relation::Eq, 1.0);
    }
    lp
}

/// Solver residue below this is treated as an exact zero weight.
const WEIGHT_SNAP: f64 = 1e-9;

/// Zeroes solver residue; on the simplex the remaining weights are rescaled to sum to one.
fn snap_weights(weights: &mut [f64], variant: Variant) {
    for w in weights.iter_mut() {
        if w.abs() <= WEIGHT_SNAP {
            *w = 0.0;
        }
    }
    if variant == Variant::WeightedAverage {
        let sum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= sum;
        }
    }
}

fn aligned(mean: f64, point: f64) -> bool {
    (mean - point).abs() <= 1e-9 * point.abs().max(1.0)
}

/// Hybrid Weighted Average: weights on the unit simplex, final quantiles
/// `w_i · F_i` (rearranged if they cross).
pub fn optimize_weights_a(
    prob: &QuantileForecast,
    point: &PointForecast,
    config: &HybridConfig,
) -> Result<HybridSolution> {
    optimize(prob, point, Variant::WeightedAverage, config)
}

/// Hybrid Bias Adjustment: weights in `[0, upper_bound]` and a bias solved
/// jointly, then each horizon rescaled so the grid mean of `w_i · F_i`
/// equals the point.
pub fn optimize_weights_b(
    prob: &QuantileForecast,
    point: &PointForecast,
    config: &HybridConfig,
) -> Result<HybridSolution> {
    optimize(prob, point, Variant::BiasAdjustment, config)
}

pub fn optimize(
    prob: &QuantileForecast,
    point: &PointForecast,
    variant: Variant,
    config: &HybridConfig,
) -> Result<HybridSolution> {
    check_aligned(prob, point)?;
    let grid = prob.grid();
    let n = grid.len();
    let p = point.values();
    let degenerate = prob.values().iter().flatten().all(|v| *v == 0.0);

    let (weights, bias) = if degenerate && variant == Variant::WeightedAverage {
        (vec![1.0 / n as f64; n], 0.0)
    } else {
        let lp = build_hybrid_lp(prob, p, variant, config);
        let solution = solve_lp(&lp)?;
        let mut weights = solution.x[..n].to_vec();
        snap_weights(&mut weights, variant);
        let bias = match variant {
            Variant::WeightedAverage => 0.0,
            Variant::BiasAdjustment => solution.x[n],
        };
        (weights, bias)
    };
    let objective = hybrid_loss(grid, prob.values(), p, &weights, bias, config.mean_definition);

    let mut rows = Vec::with_capacity(prob.horizon());
    let mut adjustment = Vec::with_capacity(prob.horizon());
    let mut shifted = Vec::new();
    for (t, row) in prob.values().iter().enumerate() {
        let weighted: Vec<f64> = row.iter().zip(&weights).map(|(f, w)| w * f).collect();
        match variant {
            Variant::WeightedAverage => {
                adjustment.push(1.0);
                rows.push(weighted);
            }
            Variant::BiasAdjustment => {
                let mean = weighted.iter().sum::<f64>() / n as f64;
                if mean > 0.0 {
                    let adj = p[t] / mean;
                    adjustment.push(adj);
                    rows.push(weighted.iter().map(|y| y * adj).collect());
                } else {
                    adjustment.push(1.0);
                    shifted.push(t + 1);
                    rows.push(weighted.iter().map(|y| y + (p[t] - mean)).collect());
                }
            }
        }
    }
    let adjusted_quantiles =
        QuantileForecast::rearranged(prob.key().clone(), prob.origin(), grid.clone(), rows)?;
    let mean_aligned = adjusted_quantiles
        .grid_means()
        .iter()
        .zip(p)
        .map(|(m, pt)| aligned(*m, *pt))
        .collect();

    Ok(HybridSolution {
        variant,
        weights,
        bias,
        adjustment,
        adjusted_quantiles,
        objective,
        point: p.to_vec(),
        mean_aligned,
        shifted_horizons: shifted,
        degenerate,
    })
}

/// Value of the piecewise-linear quantile function at `x`, and whether `x`
/// fell outside `[q_1, q_n]` and was clamped to the boundary value.
pub fn interpolate_at(levels: &[f64], values: &[f64], x: f64) -> (f64, bool) {
    let n = levels.len();
    if x <= levels[0] {
        return (values[0], x < levels[0]);
    }
    if x >= levels[n - 1] {
        return (values[n - 1], x > levels[n - 1]);
    }
    // First knot strictly greater than x; x lies in [q_{i}, q_{i+1}).
    let upper = levels.partition_point(|&q| q <= x);
    let i = upper - 1;
    let (q0, q1) = (levels[i], levels[i + 1]);
    let (y0, y1) = (values[i], values[i + 1]);
    (y0 + (x - q0) / (q1 - q0) * (y1 - y0), false)
}

/// Evaluation points: `resolution` evenly spaced probabilities over
/// `[q_1, q_n]` merged with the knots themselves.
pub fn curve_points(grid: &QuantileGrid, resolution: usize) -> Vec<f64> {
    let levels = grid.levels();
    let (lo, hi) = (levels[0], levels[levels.len() - 1]);
    let mut xs: Vec<f64> = (0..resolution)
        .map(|j| {
            if j + 1 == resolution {
                hi
            } else {
                lo + (hi - lo) * j as f64 / (resolution - 1) as f64
            }
        })
        .chain(levels.iter().copied())
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
    // Keep exact knot values where a sample landed within rounding of one.
    for x in &mut xs {
        if let Some(&k) = levels.iter().find(|&&k| (k - *x).abs() <= 1e-15) {
            *x = k;
        }
    }
    xs
}

/// Linear interpolation between quantile levels, one curve per horizon.
pub fn interpolate(adjusted: &QuantileForecast, resolution: usize) -> Result<Vec<DistributionCurve>> {
    let grid = adjusted.grid();
    if grid.len() < 2 {
        return Err(Error::invalid("interpolation", "need at least two quantile levels"));
    }
    if resolution < grid.len() {
        return Err(Error::invalid(
            "interpolation",
            format!("resolution {resolution} below grid size {}", grid.len()),
        ));
    }
    let xs = curve_points(grid, resolution);
    adjusted
        .values()
        .iter()
        .map(|row| {
            let points = xs
                .iter()
                .map(|&x| (x, interpolate_at(grid.levels(), row, x).0))
                .collect();
            DistributionCurve::new(points)
        })
        .collect()
}
