//! Multiquadric shape parameter search: a log-spaced scan followed by
//! golden-section refinement around the best scan point.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::CaseSpec;
use crate::error::{Error, Result};
use crate::geometry::NodeCloud;

pub const SCAN_POINTS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub c_min: f64,
    pub c_max: f64,
    pub max_evals: usize,
    /// Relative width of the final bracket in c.
    pub rel_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            c_min: 0.05,
            c_max: 50.0,
            max_evals: 60,
            rel_tol: 1e-3,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_min > 0.0 && self.c_max > self.c_min) {
            return Err(Error::InvalidCase(format!(
                "shape parameter bounds [{}, {}] are not 0 < c_min < c_max",
                self.c_min, self.c_max
            )));
        }
        if self.max_evals < 3 || !(self.rel_tol > 0.0) {
            return Err(Error::InvalidCase("search needs max_evals ≥ 3 and rel_tol > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub c_star: f64,
    pub rmse_at_c_star: f64,
    /// Every evaluation in order; failed solves are recorded as infinity.
    pub trace: Vec<(f64, f64)>,
}

impl OptResult {
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["c", "rmse"])?;
        for (c, r) in &self.trace {
            w.write_record([c.to_string(), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Budget<'a> {
    objective: &'a mut dyn FnMut(f64) -> Result<f64>,
    trace: Vec<(f64, f64)>,
    max_evals: usize,
}

impl Budget<'_> {
    fn eval(&mut self, c: f64) -> Option<f64> {
        if self.trace.len() >= self.max_evals {
            return None;
        }
        let v = match (self.objective)(c) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        };
        self.trace.push((c, v));
        Some(v)
    }
}

/// Minimizes `objective` over `[c_min, c_max]`. Objective errors and
/// non-finite values count as failed evaluations.
pub fn minimize(objective: &mut dyn FnMut(f64) -> Result<f64>, cfg: &SearchConfig) -> Result<OptResult> {
    cfg.validate()?;
    let mut b = Budget {
        objective,
        trace: Vec::new(),
        max_evals: cfg.max_evals,
    };
    let (lo, hi) = (cfg.c_min.ln(), cfg.c_max.ln());
    let n_scan = SCAN_POINTS.min(cfg.max_evals);
    let grid: Vec<f64> = (0..n_scan)
        .map(|i| lo + (hi - lo) * i as f64 / (n_scan - 1) as f64)
        .collect();
    let mut scan = Vec::with_capacity(n_scan);
    for &s in &grid {
        scan.push(b.eval(s.exp()).unwrap_or(f64::INFINITY));
    }
    let best = (0..n_scan)
        .min_by(|&i, &j| scan[i].total_cmp(&scan[j]))
        .ok_or(Error::AllSolvesFailed)?;
    if !scan[best].is_finite() {
        return Err(Error::AllSolvesFailed);
    }

    // golden-section search in log c on the neighbouring scan interval
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut d) = (grid[best.saturating_sub(1)], grid[(best + 1).min(n_scan - 1)]);
    let mut x1 = d - inv_phi * (d - a);
    let mut x2 = a + inv_phi * (d - a);
    let mut f1 = b.eval(x1.exp());
    let mut f2 = b.eval(x2.exp());
    while let (Some(v1), Some(v2)) = (f1, f2) {
        if (d - a).exp() - 1.0 <= cfg.rel_tol {
            break;
        }
        if v1 <= v2 {
            d = x2;
            x2 = x1;
            f2 = f1;
            x1 = d - inv_phi * (d - a);
            f1 = b.eval(x1.exp());
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (d - a);
            f2 = b.eval(x2.exp());
        }
    }

    let (c_star, rmse_at_c_star) = b
        .trace
        .iter()
        .copied()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .ok_or(Error::AllSolvesFailed)?;
    Ok(OptResult {
        c_star,
        rmse_at_c_star,
        trace: b.trace,
    })
}

/// Shape parameter minimizing the nodal RMSE of an MQ run of `case` on
/// `cloud` (for Stokes, the sum of the two velocity RMSEs).
pub fn optimize_shape_parameter(case: &CaseSpec, cloud: &NodeCloud, cfg: &SearchConfig) -> Result<OptResult> {
    let mut objective = |c: f64| crate::bench::mq_objective(case, cloud, c);
    minimize(&mut objective, cfg)
}
