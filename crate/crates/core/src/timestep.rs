//! Backward Euler integration of `M u' + K u = F(t)`.
//!
//! Rows whose mass row is identically zero are algebraic (boundary
//! conditions, continuity, pressure pins): they keep the unscaled `K` row and
//! right-hand side. All other rows solve `(M + δt K) uⁿ = δt Fⁿ + M uⁿ⁻¹`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsolve::PinvFactor;

pub use crate::bench::run_transient;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeConfig {
    pub dt: f64,
    pub tf: f64,
}

impl TimeConfig {
    pub fn new(dt: f64, tf: f64) -> Result<Self> {
        let cfg = Self { dt, tf };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.tf > 0.0) {
            return Err(Error::InvalidTimeConfig(format!(
                "dt = {} and tf = {} must be positive",
                self.dt, self.tf
            )));
        }
        let n = self.tf / self.dt;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) || n.round() < 1.0 {
            return Err(Error::InvalidTimeConfig(format!(
                "tf / dt = {n} is not a positive integer"
            )));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.tf / self.dt).round() as usize
    }

    /// Time at the end of step `n` (1-based).
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }
}

/// Factored implicit step, reused for every step of a run.
#[derive(Clone, Debug)]
pub struct BackwardEuler {
    mass: DMatrix<f64>,
    algebraic: Vec<bool>,
    dt: f64,
    factor: PinvFactor,
    system: DMatrix<f64>,
}

impl BackwardEuler {
    pub fn new(mass: &DMatrix<f64>, stiffness: &DMatrix<f64>, dt: f64, rtol: Option<f64>) -> Result<Self> {
        if mass.shape() != stiffness.shape() || !mass.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "mass {:?} vs stiffness {:?}",
                mass.shape(),
                stiffness.shape()
            )));
        }
        let algebraic: Vec<bool> = mass.row_iter().map(|r| r.iter().all(|&v| v == 0.0)).collect();
        let mut system = stiffness.clone();
        for (i, &alg) in algebraic.iter().enumerate() {
            if !alg {
                let row = mass.row(i) + stiffness.row(i) * dt;
                system.set_row(i, &row);
            }
        }
        let factor = PinvFactor::new(&system, rtol)?;
        Ok(Self {
            mass: mass.clone(),
            algebraic,
            dt,
            factor,
            system,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn system(&self) -> &DMatrix<f64> {
        &self.system
    }

    pub fn condition_number(&self) -> f64 {
        self.factor.condition_number
    }

    pub fn rhs(&self, load: &DVector<f64>, prev: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.algebraic.len();
        for v in [load, prev] {
            if v.len() != n {
                return Err(Error::ShapeMismatch(format!("vector of length {} for a {n}-row system", v.len())));
            }
        }
        let history = &self.mass * prev;
        Ok(DVector::from_fn(n, |i, _| {
            if self.algebraic[i] {
                load[i]
            } else {
                self.dt * load[i] + history[i]
            }
        }))
    }

    /// One step from `prev` with the load evaluated at the new time level.
    pub fn step(&self, load: &DVector<f64>, prev: &DVector<f64>) -> Result<DVector<f64>> {
        self.factor.solve_refined(&self.system, &self.rhs(load, prev)?)
    }
}

/// Single Poisson step `(M + δt K) uⁿ = δt F + M uⁿ⁻¹`; boundary rows carry
/// zero mass rows, identity `K` rows and boundary values in `F`.
pub fn step_poisson(
    mass: &DMatrix<f64>,
    stiffness: &DMatrix<f64>,
    load: &DVector<f64>,
    prev: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    BackwardEuler::new(mass, stiffness, dt, None)?.step(load, prev)
}

/// Single Stokes step on the block layout ⟨u_x, u_y, p⟩. `mass` is the block
/// mass `diag(M, M, 0)` with constrained rows zeroed, so continuity and pin
/// rows stay time independent.
pub fn step_stokes(
    mass: &DMatrix<f64>,
    stiffness: &DMatrix<f64>,
    load: &DVector<f64>,
    prev: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    step_poisson(mass, stiffness, load, prev, dt)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub rmse: f64,
}

pub fn write_trace_csv(path: &Path, trace: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
