//! Lagrangian dual of the budget-rate constrained coupon allocation.
//!
//! Primal: choose one coupon per opportunity to maximize expected completions
//! `sum z_ij` subject to `sum g_i z_ij d_j <= B * sum g_i z_ij`. Relaxing the
//! budget row with multiplier `lambda >= 0` separates the problem per
//! opportunity; each row picks `argmin_j z_ij (lambda g_i d_j - lambda g_i B - 1)`
//! and the dual value is the sum of those minima, a concave piecewise-linear
//! function of `lambda`.

use std::io::Write;

use crate::error::{Error, Result};

/// One allocation instance: `z` is `N x H`, `g` has `N` prices, `coupons`
/// holds `H` increasing levels starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    pub z: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub coupons: Vec<f64>,
    pub budget_rate: f64,
}

impl AllocationProblem {
    pub fn new(z: Vec<Vec<f64>>, g: Vec<f64>, coupons: Vec<f64>, budget_rate: f64) -> Result<Self> {
        let p = Self { z, g, coupons, budget_rate };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.coupons.len();
        if h == 0 {
            return Err(Error::Argument("empty coupon set".into()));
        }
        if self.coupons.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Argument("coupon levels must be strictly increasing".into()));
        }
        if self.z.len() != self.g.len() {
            return Err(Error::Argument(format!("{} rows of z for {} prices", self.z.len(), self.g.len())));
        }
        if self.z.iter().any(|row| row.len() != h || row.iter().any(|v| !v.is_finite())) {
            return Err(Error::Argument("z rows must have H finite entries".into()));
        }
        if self.g.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(Error::Argument("base prices must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn num_coupons(&self) -> usize {
        self.coupons.len()
    }

    /// Totals of an integral assignment.
    pub fn evaluate(&self, assignment: &[usize]) -> AssignmentTotals {
        let mut t = AssignmentTotals::default();
        for (i, &j) in assignment.iter().enumerate() {
            let zg = self.z[i][j] * self.g[i];
            t.completions += self.z[i][j];
            t.cost += zg * self.coupons[j];
            t.gmv += zg;
        }
        t
    }

    /// Default search interval for the multiplier. Beyond the upper end every
    /// coupon above the budget rate scores positive for every row, so the
    /// dual can only decrease.
    pub fn default_lambda_bounds(&self) -> (f64, f64) {
        let g_min = self.g.iter().copied().fold(f64::INFINITY, f64::min);
        let d_min = self.coupons.iter().copied().filter(|&d| d > 0.0).fold(f64::INFINITY, f64::min);
        let b = self.budget_rate;
        let mut ub = if d_min.is_finite() && b > 0.0 { 10.0 / (b * g_min * d_min) } else { 1.0 };
        let over = self.coupons.iter().copied().filter(|&d| d > b).map(|d| d - b).fold(f64::INFINITY, f64::min);
        if over.is_finite() {
            ub = ub.max(2.0 / (g_min * over));
        }
        (0.0, ub)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AssignmentTotals {
    pub completions: f64,
    pub cost: f64,
    pub gmv: f64,
}

impl AssignmentTotals {
    /// Budget row `cost - B * gmv`; nonpositive when feasible.
    pub fn slack(&self, budget_rate: f64) -> f64 {
        self.cost - budget_rate * self.gmv
    }

    pub fn cost_rate(&self) -> f64 {
        if self.gmv > 0.0 {
            self.cost / self.gmv
        } else {
            0.0
        }
    }
}

/// `z (lambda g d - lambda g B - 1)`.
pub fn decision_score(z: f64, g: f64, d: f64, budget_rate: f64, lambda: f64) -> f64 {
    z * (lambda * g * d - lambda * g * budget_rate - 1.0)
}

/// Best coupon for one row; ties go to the cheaper coupon.
pub fn optimal_coupon_row(z: &[f64], g: f64, coupons: &[f64], budget_rate: f64, lambda: f64) -> (usize, f64) {
    let mut best = (0, decision_score(z[0], g, coupons[0], budget_rate, lambda));
    for j in 1..coupons.len() {
        let s = decision_score(z[j], g, coupons[j], budget_rate, lambda);
        if s < best.1 {
            best = (j, s);
        }
    }
    best
}

pub fn optimal_coupon(problem: &AllocationProblem, i: usize, lambda: f64) -> usize {
    optimal_coupon_row(&problem.z[i], problem.g[i], &problem.coupons, problem.budget_rate, lambda).0
}

pub fn assign_all(problem: &AllocationProblem, lambda: f64) -> Vec<usize> {
    (0..problem.len()).map(|i| optimal_coupon(problem, i, lambda)).collect()
}

/// `sum_i min_j score(i, j, lambda)`.
pub fn dual_value(problem: &AllocationProblem, lambda: f64) -> f64 {
    problem
        .z
        .iter()
        .zip(&problem.g)
        .map(|(z, &g)| optimal_coupon_row(z, g, &problem.coupons, problem.budget_rate, lambda).1)
        .sum()
}

/// Lagrangian `L(v, lambda) = -completions + lambda * (cost - B gmv)`.
pub fn lagrangian(problem: &AllocationProblem, assignment: &[usize], lambda: f64) -> f64 {
    let t = problem.evaluate(assignment);
    -t.completions + lambda * t.slack(problem.budget_rate)
}

/// Maximizes the concave dual over `[lb, ub]` by ternary search. Equal probe
/// values shrink the interval from the right, so a flat optimum resolves to
/// its left end.
pub fn ternary_search_lambda(problem: &AllocationProblem, lb: f64, ub: f64, tol: f64) -> Result<f64> {
    if !(lb < ub) || !(tol > 0.0) {
        return Err(Error::Argument(format!("need lb < ub and tol > 0, got [{lb}, {ub}], tol {tol}")));
    }
    let eval = |l: f64| -> Result<f64> {
        let v = dual_value(problem, l);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("dual value {v} at lambda {l}")))
        }
    };
    let (mut lo, mut hi) = (lb, ub);
    while hi - lo > tol {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if eval(m1)? < eval(m2)? {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let mut best = (lo, eval(lo)?);
    for cand in [0.5 * (lo + hi), hi] {
        let v = eval(cand)?;
        if v > best.1 {
            best = (cand, v);
        }
    }
    Ok(best.0)
}

/// Ternary search over the default bounds at tolerance `1e-8`.
pub fn solve_lambda(problem: &AllocationProblem) -> Result<f64> {
    let (lb, ub) = problem.default_lambda_bounds();
    ternary_search_lambda(problem, lb, ub, 1e-8)
}

/// Largest instance the exhaustive oracle accepts (`H^N`).
pub const ORACLE_LIMIT: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub assignment: Vec<usize>,
    pub completions: f64,
}

/// Exhaustive search over all one-coupon-per-row assignments satisfying the
/// budget row. The first assignment in lexicographic order wins ties, so the
/// all-zero assignment is preferred when nothing beats it.
pub fn brute_force_oracle(problem: &AllocationProblem) -> Result<OracleSolution> {
    let n = problem.len();
    let h = problem.num_coupons();
    let total = (h as u64).checked_pow(n as u32).filter(|&c| c <= ORACLE_LIMIT);
    let Some(total) = total else {
        return Err(Error::Size(format!("{h}^{n} assignments exceed {ORACLE_LIMIT}")));
    };
    let mut current = vec![0usize; n];
    let mut best: Option<OracleSolution> = None;
    for _ in 0..total {
        let t = problem.evaluate(&current);
        if t.slack(problem.budget_rate) <= 1e-12 && best.as_ref().is_none_or(|b| t.completions > b.completions) {
            best = Some(OracleSolution { assignment: current.clone(), completions: t.completions });
        }
        // odometer increment, last row fastest
        for k in (0..n).rev() {
            current[k] += 1;
            if current[k] < h {
                break;
            }
            current[k] = 0;
        }
    }
    // d = 0 everywhere is always feasible
    Ok(best.expect("all-zero assignment is feasible"))
}

/// A solved instance, dumpable as one CSV row for debugging.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRecord {
    pub instance_hash: u64,
    pub lambda: f64,
    pub primal: f64,
    pub dual: f64,
}

pub fn instance_hash(problem: &AllocationProblem) -> u64 {
    let mut words = vec![problem.len() as u64, problem.num_coupons() as u64, problem.budget_rate.to_bits()];
    words.extend(problem.coupons.iter().map(|d| d.to_bits()));
    words.extend(problem.g.iter().map(|g| g.to_bits()));
    words.extend(problem.z.iter().flatten().map(|z| z.to_bits()));
    crate::rng::mix(0, &words)
}

pub fn write_oracle_csv<W: Write>(records: &[OracleRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["instance_hash", "lambda", "primal", "dual"])?;
    for r in records {
        wr.write_record([
            format!("{:016x}", r.instance_hash),
            format!("{:.10}", r.lambda),
            format!("{:.10}", r.primal),
            format!("{:.10}", r.dual),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
