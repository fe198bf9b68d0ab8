//! Radial kernels and Kansa collocation.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{FluxFn, PressurePin, ScalarFn, VectorFn};
use crate::geometry::{dist, NodeCloud, NodeTag, Point};
use crate::linsolve::pinv_solve;

pub const DEFAULT_TPS_BETA: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RbfKind {
    /// Multiquadric √(r² + c²).
    Mq { c: f64 },
    /// Thin plate spline r^β ln r, β even.
    Tps { beta: u32 },
}

impl RbfKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RbfKind::Mq { c } if !(c > 0.0) => Err(Error::InvalidCase(format!("MQ shape parameter {c} must be positive"))),
            RbfKind::Tps { beta } if beta == 0 || beta % 2 != 0 => {
                Err(Error::InvalidCase(format!("TPS exponent {beta} must be a positive even integer")))
            }
            _ => Ok(()),
        }
    }
}

pub fn rbf_eval(kind: RbfKind, r: f64) -> f64 {
    match kind {
        RbfKind::Mq { c } => (r * r + c * c).sqrt(),
        RbfKind::Tps { beta } => {
            if r == 0.0 {
                0.0
            } else {
                r.powi(beta as i32) * r.ln()
            }
        }
    }
}

/// Kernel value and derivatives with respect to the evaluation point, for
/// the offset (dx, dy) = x − center.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KernelDerivs {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxx: f64,
    pub dyy: f64,
}

impl KernelDerivs {
    pub fn laplacian(&self) -> f64 {
        self.dxx + self.dyy
    }

    pub fn normal(&self, n: Point) -> f64 {
        self.dx * n[0] + self.dy * n[1]
    }
}

pub fn rbf_derivs(kind: RbfKind, dx: f64, dy: f64) -> Result<KernelDerivs> {
    let r2 = dx * dx + dy * dy;
    match kind {
        RbfKind::Mq { c } => {
            let c2 = c * c;
            let phi = (r2 + c2).sqrt();
            let phi3 = phi * phi * phi;
            Ok(KernelDerivs {
                value: phi,
                dx: dx / phi,
                dy: dy / phi,
                dxx: (dy * dy + c2) / phi3,
                dyy: (dx * dx + c2) / phi3,
            })
        }
        RbfKind::Tps { beta } => {
            if r2 == 0.0 {
                if beta <= 2 {
                    return Err(Error::SingularDerivative([dx, dy]));
                }
                return Ok(KernelDerivs::default());
            }
            let b = beta as f64;
            let r = r2.sqrt();
            let ln = r.ln();
            let rb2 = r.powi(beta as i32 - 2);
            let rb4 = rb2 / r2;
            let first = rb2 * (b * ln + 1.0);
            let along = b * (b - 1.0) * ln + 2.0 * b - 1.0;
            let across = b * ln + 1.0;
            Ok(KernelDerivs {
                value: rb2 * r2 * ln,
                dx: dx * first,
                dy: dy * first,
                dxx: rb4 * (dx * dx * along + dy * dy * across),
                dyy: rb4 * (dy * dy * along + dx * dx * across),
            })
        }
    }
}

/// Expansion `u(x) = Σ_j α_j φ(‖x − x_j‖)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub alpha: Vec<f64>,
    pub centers: Vec<Point>,
    pub kind: RbfKind,
}

impl Coefficients {
    pub fn new(alpha: Vec<f64>, centers: Vec<Point>, kind: RbfKind) -> Result<Self> {
        if alpha.len() != centers.len() {
            return Err(Error::LengthMismatch {
                left: alpha.len(),
                right: centers.len(),
            });
        }
        Ok(Self { alpha, centers, kind })
    }

    pub fn value_at(&self, p: Point) -> f64 {
        self.alpha
            .iter()
            .zip(&self.centers)
            .map(|(a, &c)| a * rbf_eval(self.kind, dist(p, c)))
            .sum()
    }
}

pub fn evaluate_solution(coeffs: &Coefficients, points: &[Point]) -> Vec<f64> {
    points.iter().map(|&p| coeffs.value_at(p)).collect()
}

/// Interpolation matrix `A_ij = φ(‖x_i − x_j‖)`.
pub fn interpolation_matrix(kind: RbfKind, points: &[Point], centers: &[Point]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), centers.len(), |i, j| rbf_eval(kind, dist(points[i], centers[j])))
}

/// Coefficients interpolating `values` at `centers`.
pub fn interpolate(kind: RbfKind, centers: &[Point], values: &[f64]) -> Result<Coefficients> {
    kind.validate()?;
    let a = interpolation_matrix(kind, centers, centers);
    let (alpha, _) = pinv_solve(&a, &DVector::from_column_slice(values), None)?;
    Coefficients::new(alpha.iter().copied().collect(), centers.to_vec(), kind)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RowKind {
    Dirichlet,
    Neumann { normal: Point },
    Interior,
}

/// Collocation plan: which equation each node contributes and where its
/// rows go. Rows are ordered Dirichlet, Neumann, interior.
#[derive(Clone, Debug)]
pub struct RowPlan {
    pub centers: Vec<Point>,
    /// (node index, row kind) in row order.
    pub rows: Vec<(usize, RowKind)>,
    pub blocks: RowBlocks,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowBlocks {
    pub dirichlet: Range<usize>,
    pub neumann: Range<usize>,
    pub interior: Range<usize>,
}

impl RowPlan {
    /// Mixed Dirichlet/Neumann corners receive Dirichlet rows.
    pub fn new(cloud: &NodeCloud) -> Result<Self> {
        let centers = cloud.points();
        let tags = cloud.tags();
        let (mut d, mut n, mut i) = (Vec::new(), Vec::new(), Vec::new());
        for (idx, (&p, tag)) in centers.iter().zip(&tags).enumerate() {
            match tag {
                NodeTag::Interior => i.push((idx, RowKind::Interior)),
                _ if cloud.domain.on_dirichlet(p) => d.push((idx, RowKind::Dirichlet)),
                _ => n.push((
                    idx,
                    RowKind::Neumann {
                        normal: cloud.domain.neumann_normal(p)?,
                    },
                )),
            }
        }
        let blocks = RowBlocks {
            dirichlet: 0..d.len(),
            neumann: d.len()..d.len() + n.len(),
            interior: d.len() + n.len()..d.len() + n.len() + i.len(),
        };
        let mut rows = d;
        rows.extend(n);
        rows.extend(i);
        Ok(Self { centers, rows, blocks })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    fn derivs(&self, kind: RbfKind, i: usize, j: usize) -> Result<KernelDerivs> {
        let (a, b) = (self.centers[i], self.centers[j]);
        rbf_derivs(kind, a[0] - b[0], a[1] - b[1])
    }
}

/// Square collocation system over the coefficient vector. `mass` holds the
/// kernel values on rows carrying a time derivative and zeros elsewhere.
#[derive(Clone, Debug)]
pub struct KansaSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub mass: DMatrix<f64>,
    pub row_blocks: RowBlocks,
    /// Number of scalar fields (1 for Poisson, 3 for Stokes).
    pub n_fields: usize,
}

pub fn kansa_poisson_matrices(plan: &RowPlan, kind: RbfKind, k: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    kind.validate()?;
    let n = plan.len();
    let mut a = DMatrix::zeros(n, n);
    let mut m = DMatrix::zeros(n, n);
    for (row, &(i, rk)) in plan.rows.iter().enumerate() {
        for j in 0..n {
            let d = plan.derivs(kind, i, j)?;
            a[(row, j)] = match rk {
                RowKind::Dirichlet => d.value,
                RowKind::Neumann { normal } => k * d.normal(normal),
                RowKind::Interior => {
                    m[(row, j)] = d.value;
                    -k * d.laplacian()
                }
            };
        }
    }
    Ok((a, m))
}

pub fn kansa_poisson_rhs(plan: &RowPlan, source: ScalarFn, dirichlet: ScalarFn, flux: Option<FluxFn>) -> DVector<f64> {
    DVector::from_iterator(
        plan.len(),
        plan.rows.iter().map(|&(i, rk)| {
            let p = plan.centers[i];
            match rk {
                RowKind::Dirichlet => dirichlet(p),
                RowKind::Neumann { normal } => flux.map_or(0.0, |g| g(p, normal)),
                RowKind::Interior => source(p),
            }
        }),
    )
}

/// Collocation of `-k Δu = f` with `u = u_D` on Dirichlet nodes and
/// `k ∂u/∂n = g` on Neumann nodes.
pub fn assemble_kansa_poisson(
    cloud: &NodeCloud,
    kind: RbfKind,
    k: f64,
    source: ScalarFn,
    dirichlet: ScalarFn,
    flux: Option<FluxFn>,
) -> Result<KansaSystem> {
    let plan = RowPlan::new(cloud)?;
    let (matrix, mass) = kansa_poisson_matrices(&plan, kind, k)?;
    Ok(KansaSystem {
        matrix,
        rhs: kansa_poisson_rhs(&plan, source, dirichlet, flux),
        mass,
        row_blocks: plan.blocks,
        n_fields: 1,
    })
}

fn pin_node(plan: &RowPlan, pin: Option<PressurePin>) -> Result<Option<usize>> {
    pin.map(|pin| {
        plan.centers
            .iter()
            .position(|&c| dist(c, pin.point) <= 1e-9)
            .ok_or(Error::PinNodeNotFound(pin.point))
    })
    .transpose()
}

/// Stokes collocation matrices over ⟨α_ux, α_uy, α_p⟩. Row blocks: x-momentum
/// (or boundary) rows, y-momentum rows, continuity rows, each in plan order.
/// The continuity row of the pinned node fixes the pressure instead.
pub fn kansa_stokes_matrices(
    plan: &RowPlan,
    kind: RbfKind,
    pin: Option<PressurePin>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    kind.validate()?;
    let pinned = pin_node(plan, pin)?;
    let n = plan.len();
    let mut a = DMatrix::zeros(3 * n, 3 * n);
    let mut m = DMatrix::zeros(3 * n, 3 * n);
    for (row, &(i, rk)) in plan.rows.iter().enumerate() {
        let (rx, ry, rc) = (row, n + row, 2 * n + row);
        for j in 0..n {
            let d = plan.derivs(kind, i, j)?;
            let (cx, cy, cp) = (j, n + j, 2 * n + j);
            match rk {
                RowKind::Dirichlet => {
                    a[(rx, cx)] = d.value;
                    a[(ry, cy)] = d.value;
                }
                RowKind::Neumann { normal } => {
                    a[(rx, cx)] = d.normal(normal);
                    a[(rx, cp)] = -normal[0] * d.value;
                    a[(ry, cy)] = d.normal(normal);
                    a[(ry, cp)] = -normal[1] * d.value;
                }
                RowKind::Interior => {
                    a[(rx, cx)] = -d.laplacian();
                    a[(rx, cp)] = d.dx;
                    a[(ry, cy)] = -d.laplacian();
                    a[(ry, cp)] = d.dy;
                    m[(rx, cx)] = d.value;
                    m[(ry, cy)] = d.value;
                }
            }
            if pinned == Some(i) {
                a[(rc, cp)] = d.value;
            } else {
                a[(rc, cx)] = d.dx;
                a[(rc, cy)] = d.dy;
            }
        }
    }
    Ok((a, m))
}

pub fn kansa_stokes_rhs(
    plan: &RowPlan,
    source: VectorFn,
    dirichlet: VectorFn,
    pin: Option<PressurePin>,
) -> Result<DVector<f64>> {
    let pinned = pin_node(plan, pin)?;
    let n = plan.len();
    let mut b = DVector::zeros(3 * n);
    for (row, &(i, rk)) in plan.rows.iter().enumerate() {
        let p = plan.centers[i];
        let v = match rk {
            RowKind::Dirichlet => dirichlet(p),
            RowKind::Neumann { .. } => [0.0, 0.0],
            RowKind::Interior => source(p),
        };
        b[row] = v[0];
        b[n + row] = v[1];
        if pinned == Some(i) {
            b[2 * n + row] = pin.map_or(0.0, |p| p.value);
        }
    }
    Ok(b)
}

/// Collocation of `-Δu + ∇p = f`, `∇·u = 0`. Neumann-tagged nodes carry the
/// natural condition `∂u/∂n − p n = 0`.
pub fn assemble_kansa_stokes(
    cloud: &NodeCloud,
    kind: RbfKind,
    source: VectorFn,
    dirichlet: VectorFn,
    pin: Option<PressurePin>,
) -> Result<KansaSystem> {
    if pin.is_none() && cloud.domain.neumann_segments.is_empty() {
        return Err(Error::MissingPressureClosure);
    }
    let plan = RowPlan::new(cloud)?;
    let (matrix, mass) = kansa_stokes_matrices(&plan, kind, pin)?;
    Ok(KansaSystem {
        matrix,
        rhs: kansa_stokes_rhs(&plan, source, dirichlet, pin)?,
        mass,
        row_blocks: plan.blocks,
        n_fields: 3,
    })
}

/// Splits a Stokes coefficient vector into (u_x, u_y, p) expansions.
pub fn split_stokes(alpha: &DVector<f64>, centers: &[Point], kind: RbfKind) -> Result<[Coefficients; 3]> {
    let n = centers.len();
    if alpha.len() != 3 * n {
        return Err(Error::LengthMismatch {
            left: alpha.len(),
            right: 3 * n,
        });
    }
    let part = |k: usize| Coefficients::new(alpha.rows(k * n, n).iter().copied().collect(), centers.to_vec(), kind);
    Ok([part(0)?, part(1)?, part(2)?])
}
