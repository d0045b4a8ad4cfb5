//! Dense two-phase primal simplex with Bland's anti-cycling rule.
//!
//! Sized for the combination problems in this crate (a few hundred rows at
//! most). Variables carry lower/upper bounds which are folded into the
//! standard form before solving.

use serde::Serialize;

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `min c·x` subject to linear rows and per-variable bounds.
///
/// Variables default to `[0, +inf)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpProblem {
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

impl LpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
            lower: vec![0.0; num_vars],
            upper: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn set_cost(&mut self, var: usize, cost: f64) {
        self.objective[var] = cost;
    }

    pub fn add_cost(&mut self, var: usize, cost: f64) {
        self.objective[var] += cost;
    }

    /// Use `f64::NEG_INFINITY` / `f64::INFINITY` for free directions.
    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let gap = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst
    }

    fn check(&self) -> Result<()> {
        let n = self.num_vars();
        for (j, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::invalid("LP bounds", format!("variable {j}: [{lo}, {hi}]")));
            }
            if lo > hi {
                return Err(Error::Infeasible);
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("LP objective", "non-finite coefficient"));
        }
        for c in &self.constraints {
            if !c.rhs.is_finite() || c.coeffs.iter().any(|&(j, a)| j >= n || !a.is_finite()) {
                return Err(Error::invalid("LP constraint", "bad coefficient or index"));
            }
        }
        Ok(())
    }
}

/// How an original variable maps onto non-negative standard-form columns:
/// `x = offset + sign * y[col]` (plus `- y[neg]` for free variables).
#[derive(Debug, Clone, Copy)]
struct VarMap {
    offset: f64,
    col: usize,
    sign: f64,
    neg: Option<usize>,
}

struct Tableau {
    /// `(rows + 1) x (cols + 1)`; the last row holds reduced costs, the last
    /// column the right-hand side.
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn width(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width() + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width();
        let p = self.data[pr * w + pc];
        for c in 0..w {
            self.data[pr * w + c] /= p;
        }
        self.data[pr * w + pc] = 1.0;
        let (before, rest) = self.data.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[pc];
            if f != 0.0 {
                for (x, &y) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * y;
                }
                row[pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    /// Bland's rule: lowest-index improving column, ties in the ratio test
    /// broken by lowest basic index.
    fn optimize(&mut self, allowed: impl Fn(usize) -> bool) -> Result<()> {
        let obj = self.rows;
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::IterationLimit(MAX_PIVOTS));
            }
            let Some(enter) = (0..self.cols).find(|&c| allowed(c) && self.at(obj, c) < -COST_TOL) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, enter);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((br, best)) => {
                            let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                            if ratio < best && !tie || tie && self.basis[r] < self.basis[br] {
                                Some((r, ratio))
                            } else {
                                Some((br, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Unbounded);
            };
            self.pivot(r, enter);
        }
    }

    fn set_costs(&mut self, costs: &[f64]) {
        let obj = self.rows;
        let w = self.width();
        for c in 0..w {
            let base = if c < self.cols { costs[c] } else { 0.0 };
            let reduced: f64 = (0..self.rows)
                .map(|r| costs[self.basis[r]] * self.at(r, c))
                .sum();
            self.data[obj * w + c] = base - reduced;
        }
    }

    fn drop_rows(&mut self, drop: &[usize]) {
        let w = self.width();
        let keep: Vec<usize> = (0..=self.rows).filter(|r| !drop.contains(r)).collect();
        let mut data = Vec::with_capacity(keep.len() * w);
        for &r in &keep {
            data.extend_from_slice(&self.data[r * w..(r + 1) * w]);
        }
        self.basis = keep[..keep.len() - 1].iter().map(|&r| self.basis[r]).collect();
        self.rows = keep.len() - 1;
        self.data = data;
    }
}

/// Solves the problem to an optimal vertex.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    problem.check()?;
    let n = problem.num_vars();

    // Standard-form columns for the original variables.
    let mut maps = Vec::with_capacity(n);
    let mut std_cols = 0usize;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = problem.bounds(j);
        let map = if lo.is_finite() {
            if hi.is_finite() {
                bound_rows.push((std_cols, hi - lo));
            }
            VarMap { offset: lo, col: std_cols, sign: 1.0, neg: None }
        } else if hi.is_finite() {
            VarMap { offset: hi, col: std_cols, sign: -1.0, neg: None }
        } else {
            std_cols += 1;
            VarMap { offset: 0.0, col: std_cols - 1, sign: 1.0, neg: Some(std_cols) }
        };
        std_cols += 1;
        maps.push(map);
    }

    // Rows in standard-form columns with non-negative right-hand sides.
    struct Row {
        coeffs: Vec<f64>,
        relation: Relation,
        rhs: f64,
    }
    let mut rows: Vec<Row> = Vec::new();
    for c in problem.constraints() {
        let mut coeffs = vec![0.0; std_cols];
        let mut rhs = c.rhs;
        for &(j, a) in &c.coeffs {
            let m = maps[j];
            rhs -= a * m.offset;
            coeffs[m.col] += a * m.sign;
            if let Some(neg) = m.neg {
                coeffs[neg] -= a;
            }
        }
        rows.push(Row { coeffs, relation: c.relation, rhs });
    }
    for &(col, width) in &bound_rows {
        let mut coeffs = vec![0.0; std_cols];
        coeffs[col] = 1.0;
        rows.push(Row { coeffs, relation: Relation::Le, rhs: width });
    }
    for row in &mut rows {
        if row.rhs < 0.0 {
            row.rhs = -row.rhs;
            row.coeffs.iter_mut().for_each(|a| *a = -*a);
            row.relation = match row.relation {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let m = rows.len();
    let slack_count = rows.iter().filter(|r| r.relation != Relation::Eq).count();

    // Structural columns that appear in exactly one row with a positive
    // coefficient can start basic in an equality or >= row.
    let mut crash: Vec<Option<usize>> = vec![None; m];
    let mut used = vec![false; std_cols];
    for (r, row) in rows.iter().enumerate() {
        if row.relation == Relation::Le {
            continue;
        }
        for c in 0..std_cols {
            if used[c] || row.coeffs[c] <= PIVOT_TOL {
                continue;
            }
            if rows.iter().enumerate().all(|(o, other)| o == r || other.coeffs[c] == 0.0) {
                crash[r] = Some(c);
                used[c] = true;
                break;
            }
        }
    }
    let needs_art: Vec<bool> = rows
        .iter()
        .zip(&crash)
        .map(|(row, cr)| row.relation != Relation::Le && cr.is_none())
        .collect();
    let art_count = needs_art.iter().filter(|b| **b).count();
    let cols = std_cols + slack_count + art_count;
    let art_start = std_cols + slack_count;

    let mut tab = Tableau {
        data: vec![0.0; (m + 1) * (cols + 1)],
        rows: m,
        cols,
        basis: vec![0; m],
        pivots: 0,
    };
    let w = cols + 1;
    let mut slack = std_cols;
    let mut art = art_start;
    for (r, row) in rows.iter().enumerate() {
        let scale = crash[r].map_or(1.0, |c| row.coeffs[c]);
        for c in 0..std_cols {
            tab.data[r * w + c] = row.coeffs[c] / scale;
        }
        tab.data[r * w + cols] = row.rhs / scale;
        match row.relation {
            Relation::Le => {
                tab.data[r * w + slack] = 1.0;
                tab.basis[r] = slack;
                slack += 1;
            }
            Relation::Ge => {
                tab.data[r * w + slack] = -1.0 / scale;
                slack += 1;
            }
            Relation::Eq => {}
        }
        if let Some(c) = crash[r] {
            tab.basis[r] = c;
        } else if needs_art[r] {
            tab.data[r * w + art] = 1.0;
            tab.basis[r] = art;
            art += 1;
        }
    }

    // Phase 1.
    if art_count > 0 {
        let mut costs = vec![0.0; cols];
        costs[art_start..].iter_mut().for_each(|c| *c = 1.0);
        tab.set_costs(&costs);
        tab.optimize(|_| true)?;
        let infeasibility = -tab.rhs(m);
        let scale = 1.0 + rows.iter().map(|r| r.rhs).fold(0.0, f64::max);
        if infeasibility > 1e-9 * scale {
            return Err(Error::Infeasible);
        }
        let mut redundant = Vec::new();
        for r in 0..tab.rows {
            if tab.basis[r] < art_start {
                continue;
            }
            match (0..art_start).find(|&c| tab.at(r, c).abs() > PIVOT_TOL) {
                Some(c) => tab.pivot(r, c),
                None => redundant.push(r),
            }
        }
        if !redundant.is_empty() {
            tab.drop_rows(&redundant);
        }
    }

    // Phase 2.
    let mut costs = vec![0.0; cols];
    for (j, map) in maps.iter().enumerate() {
        let c = problem.objective()[j];
        costs[map.col] += c * map.sign;
        if let Some(neg) = map.neg {
            costs[neg] -= c;
        }
    }
    tab.set_costs(&costs);
    tab.optimize(|c| c < art_start)?;

    let mut y = vec![0.0; cols];
    for r in 0..tab.rows {
        y[tab.basis[r]] = tab.rhs(r).max(0.0);
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|m| {
            let mut v = m.offset + m.sign * y[m.col];
            if let Some(neg) = m.neg {
                v -= y[neg];
            }
            v
        })
        .collect();
    Ok(LpSolution {
        objective: problem.evaluate(&x),
        x,
        pivots: tab.pivots,
    })
}
