//! Dense least-squares solves through the SVD pseudo-inverse.

use std::time::Instant;

use faer::Mat;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition numbers above this are reported as overflow.
pub const CONDITION_OVERFLOW: f64 = 1e300;

pub const REFINE_STEPS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// σ_max / σ_min; `f64::INFINITY` when the ratio overflows.
    pub condition_number: f64,
    pub rank: usize,
    pub truncated_singular_values: usize,
    pub wall_time: f64,
}

impl SolveReport {
    pub fn condition_overflowed(&self) -> bool {
        self.condition_number.is_infinite()
    }
}

fn ratio(s_max: f64, s_min: f64) -> f64 {
    if s_min <= 0.0 {
        return f64::INFINITY;
    }
    let r = s_max / s_min;
    if r > CONDITION_OVERFLOW {
        f64::INFINITY
    } else {
        r
    }
}

fn to_faer(a: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn check_nonempty(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        Err(Error::EmptyMatrix)
    } else {
        Ok(())
    }
}

/// Thin SVD of a matrix, reusable for many right-hand sides.
#[derive(Clone, Debug)]
pub struct PinvFactor {
    u: DMatrix<f64>,
    /// Reciprocal singular values, zero where truncated.
    s_inv: DVector<f64>,
    v: DMatrix<f64>,
    pub condition_number: f64,
    pub rank: usize,
    pub truncated: usize,
}

impl PinvFactor {
    pub fn new(a: &DMatrix<f64>, rtol: Option<f64>) -> Result<Self> {
        check_nonempty(a)?;
        let (m, n) = a.shape();
        let rtol = rtol.unwrap_or(m.max(n) as f64 * f64::EPSILON);
        let svd = to_faer(a)
            .thin_svd()
            .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
        let k = m.min(n);
        let s: Vec<f64> = (0..k).map(|i| svd.S()[i]).collect();
        let s_max = s.iter().cloned().fold(0.0, f64::max);
        let s_min = s.iter().cloned().fold(f64::INFINITY, f64::min);
        let cutoff = rtol * s_max;
        let s_inv = DVector::from_iterator(k, s.iter().map(|&x| if x > cutoff { 1.0 / x } else { 0.0 }));
        let rank = s_inv.iter().filter(|&&x| x != 0.0).count();
        let (fu, fv) = (svd.U(), svd.V());
        Ok(Self {
            u: DMatrix::from_fn(m, k, |i, j| fu[(i, j)]),
            s_inv,
            v: DMatrix::from_fn(n, k, |i, j| fv[(i, j)]),
            condition_number: ratio(s_max, s_min),
            rank,
            truncated: k - rank,
        })
    }

    /// `V Σ⁺ Uᵀ b`, without forming the pseudo-inverse.
    pub fn apply(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.u.nrows() {
            return Err(Error::LengthMismatch {
                left: self.u.nrows(),
                right: b.len(),
            });
        }
        let mut c = self.u.tr_mul(b);
        c.component_mul_assign(&self.s_inv);
        Ok(&self.v * c)
    }

    pub fn n_rows(&self) -> usize {
        self.u.nrows()
    }

    /// Pseudo-inverse solve followed by up to `REFINE_STEPS` rounds of
    /// iterative refinement against `a`, keeping the iterate with the smallest
    /// residual.
    pub fn solve_refined(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = self.apply(b)?;
        let mut r = b - a * &x;
        let mut best = r.amax();
        for _ in 0..REFINE_STEPS {
            let cand = &x + self.apply(&r)?;
            let rc = b - a * &cand;
            let norm = rc.amax();
            if !(norm < best) {
                break;
            }
            (x, r, best) = (cand, rc, norm);
        }
        Ok(x)
    }
}

/// Solves `A x = b` in the least-squares sense through the pseudo-inverse.
/// Singular values below `rtol·σ_max` are discarded; the default `rtol` is
/// `max(m, n)·ε`.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>, rtol: Option<f64>) -> Result<(DVector<f64>, SolveReport)> {
    check_nonempty(a)?;
    if b.len() != a.nrows() {
        return Err(Error::LengthMismatch {
            left: a.nrows(),
            right: b.len(),
        });
    }
    let t0 = Instant::now();
    let f = PinvFactor::new(a, rtol)?;
    let x = f.solve_refined(a, b)?;
    let report = SolveReport {
        condition_number: f.condition_number,
        rank: f.rank,
        truncated_singular_values: f.truncated,
        wall_time: t0.elapsed().as_secs_f64(),
    };
    Ok((x, report))
}

/// 2-norm condition number σ_max/σ_min (`f64::INFINITY` on overflow).
pub fn condition_number(a: &DMatrix<f64>) -> Result<f64> {
    check_nonempty(a)?;
    let s = to_faer(a)
        .singular_values()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let s_max = s.iter().cloned().fold(0.0, f64::max);
    let s_min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ratio(s_max, s_min))
}
