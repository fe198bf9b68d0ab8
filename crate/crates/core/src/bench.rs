//! Manufactured-solution benchmark catalogue, case execution and table
//! output.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_mass, assemble_poisson, poisson_rhs, quad_rule, stokes_rhs, zero_constrained_rows, FemField,
    PressurePin, StokesOperators, VOLUME_QUADRATURE_DEGREE,
};
use crate::geometry::{
    build_node_cloud, build_random_cloud, build_structured_mesh, triangulate_cloud, DomainSpec, NodeCloud, Point,
    RandomCloudConfig, TriMesh,
};
use crate::linsolve::pinv_solve;
use crate::metrics::{lse, max_relative_error, rmse, ErrorReport, LseMode, NumericSurface, MRE_FLOOR};
use crate::rbf::{
    interpolate, kansa_poisson_matrices, kansa_poisson_rhs, kansa_stokes_matrices, kansa_stokes_rhs, split_stokes,
    Coefficients, RbfKind, RowPlan, DEFAULT_TPS_BETA,
};
use crate::shapeopt::{optimize_shape_parameter, OptResult, SearchConfig};
use crate::timestep::{BackwardEuler, StepRecord, TimeConfig};

/// Condition number above which a Kansa residual is flagged instead of
/// checked.
pub const RESIDUAL_CHECK_MAX_CONDITION: f64 = 1e14;
pub const RESIDUAL_TOL: f64 = 1e-8;

const PI: f64 = std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Example {
    /// Steady Poisson, unit square, Dirichlet boundary.
    PDir,
    /// Steady Poisson, L-shape, mixed boundary.
    PDirneuL,
    /// Unsteady Poisson, unit square, Dirichlet boundary.
    PUnsteady,
    /// Steady colliding-flow Stokes on (−1, 1)², pressure pinned at (1, 1).
    SColliding,
    /// Unsteady Stokes, L-shape, natural outflow at x = 1.
    SUnsteadyL,
}

impl Example {
    pub const ALL: [Example; 5] = [
        Example::PDir,
        Example::PDirneuL,
        Example::PUnsteady,
        Example::SColliding,
        Example::SUnsteadyL,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Example::PDir => "p-dir",
            Example::PDirneuL => "p-dirneu-l",
            Example::PUnsteady => "p-unsteady",
            Example::SColliding => "s-colliding",
            Example::SUnsteadyL => "s-unsteady-l",
        }
    }

    pub fn domain(self) -> DomainSpec {
        match self {
            Example::PDir | Example::PUnsteady => DomainSpec::unit_square_dirichlet(),
            Example::PDirneuL => DomainSpec::l_shape_mixed(),
            Example::SColliding => DomainSpec::bi_unit_square_dirichlet(),
            Example::SUnsteadyL => DomainSpec::l_shape_outflow(),
        }
    }

    pub fn is_stokes(self) -> bool {
        matches!(self, Example::SColliding | Example::SUnsteadyL)
    }

    pub fn is_unsteady(self) -> bool {
        matches!(self, Example::PUnsteady | Example::SUnsteadyL)
    }

    /// Ratio of physical node spacing to the tabulated δh label. The colliding
    /// flow domain is twice as wide, so its labels map to doubled spacings.
    pub fn spacing_scale(self) -> f64 {
        if self == Example::SColliding {
            2.0
        } else {
            1.0
        }
    }

    pub fn supports_random_nodes(self) -> bool {
        matches!(self, Example::PDirneuL | Example::SUnsteadyL)
    }

    /// Step size and final time used for the published tables.
    pub fn default_time(self) -> Option<TimeConfig> {
        self.is_unsteady().then_some(TimeConfig { dt: 0.01, tf: 50.0 })
    }

    fn pin_point(self) -> Option<Point> {
        (self == Example::SColliding).then_some([1.0, 1.0])
    }

    pub fn pressure_pin(self, t: f64) -> Option<PressurePin> {
        self.pin_point().map(|point| PressurePin {
            point,
            value: self.exact(point, t)[2],
        })
    }

    pub fn field_names(self) -> &'static [Field] {
        if self.is_stokes() {
            &[Field::Ux, Field::Uy, Field::P]
        } else {
            &[Field::U]
        }
    }

    /// Analytic field(s): `[u]` or `[u_x, u_y, p]`.
    fn exact(self, [x, y]: Point, t: f64) -> Vec<f64> {
        match self {
            Example::PDir => vec![(PI * x).sin() * (PI * y / 2.0).cos()],
            Example::PDirneuL => vec![y * (-x * x).exp() + (PI * x).sin() * (PI * y).cos()],
            Example::PUnsteady => vec![(-x / (y + 1.0)).exp() + 0.8 * t],
            Example::SColliding => vec![
                20.0 * x * y.powi(3),
                5.0 * x.powi(4) - 5.0 * y.powi(4),
                60.0 * x * x * y - 20.0 * y.powi(3),
            ],
            Example::SUnsteadyL => vec![
                t + 1.0 - y.powi(3),
                -x.powi(3) + 3.0 * x * x - 3.0 * x,
                -6.0 * x * y - x + 6.0 * y + 1.0,
            ],
        }
    }

    /// Gradient of the scalar Poisson solution.
    fn gradient(self, [x, y]: Point, _t: f64) -> [f64; 2] {
        match self {
            Example::PDir => [
                PI * (PI * x).cos() * (PI * y / 2.0).cos(),
                -PI / 2.0 * (PI * x).sin() * (PI * y / 2.0).sin(),
            ],
            Example::PDirneuL => {
                let g = (-x * x).exp();
                [
                    -2.0 * x * y * g + PI * (PI * x).cos() * (PI * y).cos(),
                    g - PI * (PI * x).sin() * (PI * y).sin(),
                ]
            }
            Example::PUnsteady => {
                let s = y + 1.0;
                let e = (-x / s).exp();
                [-e / s, e * x / (s * s)]
            }
            Example::SColliding | Example::SUnsteadyL => [f64::NAN, f64::NAN],
        }
    }

    /// Source `∂u/∂t − kΔu` (Poisson) or `∂u/∂t − Δu + ∇p` (Stokes).
    fn source(self, [x, y]: Point, _t: f64, k: f64) -> Vec<f64> {
        match self {
            Example::PDir => vec![k * 1.25 * PI * PI * (PI * x).sin() * (PI * y / 2.0).cos()],
            Example::PDirneuL => vec![
                k * (y * (-x * x).exp() * (2.0 - 4.0 * x * x) + 2.0 * PI * PI * (PI * x).sin() * (PI * y).cos()),
            ],
            Example::PUnsteady => {
                let s = y + 1.0;
                let e = (-x / s).exp();
                vec![0.8 + k * (-e / (s * s) - x * e * (x - 2.0 * y - 2.0) / s.powi(4))]
            }
            Example::SColliding => {
                let lap = [120.0 * x * y, 60.0 * x * x - 60.0 * y * y];
                let grad_p = [120.0 * x * y, 60.0 * x * x - 60.0 * y * y];
                vec![-lap[0] + grad_p[0], -lap[1] + grad_p[1]]
            }
            Example::SUnsteadyL => {
                let dt_ux = 1.0;
                let lap = [-6.0 * y, -6.0 * x + 6.0];
                let grad_p = [-6.0 * y - 1.0, -6.0 * x + 6.0];
                vec![dt_ux - lap[0] + grad_p[0], -lap[1] + grad_p[1]]
            }
        }
    }

    fn check_point(self, p: Point) -> Result<()> {
        if self.domain().shape.contains(p) {
            Ok(())
        } else {
            Err(Error::OutsideDomain(p))
        }
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Example {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Example::ALL
            .into_iter()
            .find(|e| e.id() == s)
            .ok_or_else(|| Error::InvalidCase(format!("unknown example '{s}'")))
    }
}

/// Exact solution at `(x, y, t)`: `[u]` for Poisson, `[u_x, u_y, p]` for
/// Stokes.
pub fn analytic_solution(example: Example, p: Point, t: f64) -> Result<Vec<f64>> {
    example.check_point(p)?;
    Ok(example.exact(p, t))
}

/// Manufactured source with unit material coefficient.
pub fn source_term(example: Example, p: Point, t: f64) -> Result<Vec<f64>> {
    example.check_point(p)?;
    Ok(example.source(p, t, 1.0))
}

pub fn analytic_gradient(example: Example, p: Point, t: f64) -> Result<[f64; 2]> {
    example.check_point(p)?;
    if example.is_stokes() {
        return Err(Error::InvalidCase(format!("{example} has a vector solution")));
    }
    Ok(example.gradient(p, t))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fem1,
    /// Order-2 elements; Taylor–Hood (P2 velocity, P1 pressure) for Stokes.
    Fem2,
    RbfMq,
    RbfTps,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Fem1, Method::Fem2, Method::RbfMq, Method::RbfTps];

    pub fn id(self) -> &'static str {
        match self {
            Method::Fem1 => "fem1",
            Method::Fem2 => "fem2",
            Method::RbfMq => "rbf-mq",
            Method::RbfTps => "rbf-tps",
        }
    }

    pub fn is_rbf(self) -> bool {
        matches!(self, Method::RbfMq | Method::RbfTps)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::InvalidCase(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    U,
    Ux,
    Uy,
    P,
}

impl Field {
    pub fn id(self) -> &'static str {
        match self {
            Field::U => "u",
            Field::Ux => "u_x",
            Field::Uy => "u_y",
            Field::P => "p",
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_beta() -> u32 {
    DEFAULT_TPS_BETA
}

fn default_mre_floor() -> f64 {
    MRE_FLOOR
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub example: Example,
    pub method: Method,
    /// Tabulated mesh size label; the physical spacing is
    /// `dh · example.spacing_scale()`.
    pub dh: f64,
    #[serde(default)]
    pub random_nodes: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub time: Option<TimeConfig>,
    #[serde(default = "one")]
    pub k: f64,
    #[serde(default = "default_beta")]
    pub tps_beta: u32,
    /// Fixed MQ shape parameter; `None` runs the optimizer.
    #[serde(default)]
    pub fixed_c: Option<f64>,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub lse_mode: LseMode,
    /// Pseudo-inverse cutoff relative to σ_max.
    #[serde(default)]
    pub rtol: Option<f64>,
    /// Absolute guard on `|exact|` in the maximum relative error.
    #[serde(default = "default_mre_floor")]
    pub mre_floor: f64,
    /// Record RMSE after every time step.
    #[serde(default)]
    pub trace: bool,
}

impl CaseSpec {
    /// A case with default options; unsteady examples get the published
    /// time configuration.
    pub fn new(example: Example, method: Method, dh: f64) -> Self {
        Self {
            example,
            method,
            dh,
            random_nodes: false,
            seed: 0,
            time: example.default_time(),
            k: 1.0,
            tps_beta: DEFAULT_TPS_BETA,
            fixed_c: None,
            search: SearchConfig::default(),
            lse_mode: LseMode::default(),
            rtol: None,
            mre_floor: MRE_FLOOR,
            trace: false,
        }
    }

    pub fn physical_spacing(&self) -> f64 {
        self.dh * self.example.spacing_scale()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidCase(m));
        if !(self.dh > 0.0) {
            return bad(format!("dh = {} must be positive", self.dh));
        }
        if self.random_nodes && !(self.method.is_rbf() && self.example.supports_random_nodes()) {
            return bad(format!(
                "random nodes are only available for RBF methods on p-dirneu-l and s-unsteady-l, not {} with {}",
                self.example, self.method
            ));
        }
        match (self.example.is_unsteady(), self.time) {
            (true, None) => return bad(format!("{} needs a time configuration", self.example)),
            (false, Some(_)) => return bad(format!("{} is steady; remove the time configuration", self.example)),
            (true, Some(t)) => t.validate()?,
            _ => {}
        }
        if self.example.is_stokes() && self.method == Method::Fem1 {
            return bad("Stokes cases use Taylor–Hood elements: choose fem2".into());
        }
        if !(self.k > 0.0) || (self.example.is_stokes() && self.k != 1.0) {
            return bad(format!("material coefficient {} not supported for {}", self.k, self.example));
        }
        if !(self.mre_floor > 0.0) {
            return bad(format!("mre_floor = {} must be positive", self.mre_floor));
        }
        if let Some(c) = self.fixed_c {
            RbfKind::Mq { c }.validate()?;
        }
        RbfKind::Tps { beta: self.tps_beta }.validate()?;
        self.search.validate()
    }

    /// Key used to order suite output: example, δh from coarse to fine,
    /// method, uniform before random.
    fn sort_key(&self) -> (Example, i64, Method, bool) {
        (self.example, (1e9 / self.dh) as i64, self.method, self.random_nodes)
    }

    pub fn label(&self) -> String {
        format!(
            "{} {} dh={}{}",
            self.example,
            self.method,
            dh_label(self.dh),
            if self.random_nodes { " random" } else { "" }
        )
    }

    fn final_time(&self) -> f64 {
        self.time.map_or(0.0, |t| t.tf)
    }

    fn kind_for(&self, c: Option<f64>) -> RbfKind {
        match self.method {
            Method::RbfTps => RbfKind::Tps { beta: self.tps_beta },
            _ => RbfKind::Mq { c: c.unwrap_or(1.0) },
        }
    }
}

/// Discretization built for a case: a real mesh, a Taylor–Hood pair, or a
/// node cloud with its imaginary elements.
#[derive(Clone, Debug)]
pub enum CaseGeometry {
    Mesh(TriMesh),
    TaylorHood { velocity: TriMesh, pressure: TriMesh },
    Cloud { cloud: NodeCloud, imaginary: TriMesh },
}

impl CaseGeometry {
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CaseGeometry::Mesh(m) => m.to_json(),
            CaseGeometry::TaylorHood { velocity, pressure } => serde_json::json!({
                "velocity": velocity.to_json(),
                "pressure": pressure.to_json(),
            }),
            CaseGeometry::Cloud { cloud, imaginary } => {
                let mut v = imaginary.to_json();
                v["layout"] = serde_json::to_value(cloud.layout).unwrap_or_default();
                v
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            CaseGeometry::Mesh(m) => m.n_nodes(),
            CaseGeometry::TaylorHood { velocity, .. } => velocity.n_nodes(),
            CaseGeometry::Cloud { cloud, .. } => cloud.len(),
        }
    }
}

pub fn build_geometry(spec: &CaseSpec) -> Result<CaseGeometry> {
    spec.validate()?;
    let domain = spec.example.domain();
    let h = spec.physical_spacing();
    Ok(match spec.method {
        Method::Fem1 => CaseGeometry::Mesh(build_structured_mesh(&domain, h, 1)?),
        Method::Fem2 if spec.example.is_stokes() => CaseGeometry::TaylorHood {
            velocity: build_structured_mesh(&domain, h, 2)?,
            pressure: build_structured_mesh(&domain, h, 1)?,
        },
        Method::Fem2 => CaseGeometry::Mesh(build_structured_mesh(&domain, h, 2)?),
        Method::RbfMq | Method::RbfTps => {
            let cloud = if spec.random_nodes {
                build_random_cloud(&domain, h, RandomCloudConfig::new(spec.seed))?
            } else {
                build_node_cloud(&domain, h)?
            };
            let imaginary = triangulate_cloud(&cloud)?;
            CaseGeometry::Cloud { cloud, imaginary }
        }
    })
}

enum Solved {
    Fem(DVector<f64>),
    RbfScalar(Coefficients),
    RbfStokes([Coefficients; 3]),
}

struct Outcome {
    solved: Solved,
    condition_number: f64,
    relative_residual: f64,
    trace: Vec<StepRecord>,
}

fn relative_residual(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let r = (a * x - b).amax();
    let scale = b.amax();
    if scale > 0.0 {
        r / scale
    } else {
        r
    }
}

type Observer<'a> = &'a dyn Fn(&DVector<f64>, f64) -> f64;

/// Steady solve or backward-Euler run of `a x = load(t)` with mass `m`.
/// `observe` maps an iterate to the RMSE recorded in the trace.
#[allow(clippy::too_many_arguments)]
fn drive(
    spec: &CaseSpec,
    a: &DMatrix<f64>,
    m: &DMatrix<f64>,
    load: &dyn Fn(f64) -> Result<DVector<f64>>,
    initial: &dyn Fn() -> Result<DVector<f64>>,
    observe: Option<Observer>,
) -> Result<(DVector<f64>, f64, f64, Vec<StepRecord>)> {
    let Some(time) = spec.time else {
        let b = load(0.0)?;
        let (x, rep) = pinv_solve(a, &b, spec.rtol)?;
        let res = relative_residual(a, &x, &b);
        return Ok((x, rep.condition_number, res, Vec::new()));
    };
    let be = BackwardEuler::new(m, a, time.dt, spec.rtol)?;
    let mut x = initial()?;
    let mut trace = Vec::new();
    let mut res = 0.0;
    for n in 1..=time.n_steps() {
        let t = time.time(n);
        let f = load(t)?;
        let b = be.rhs(&f, &x)?;
        x = be.step(&f, &x)?;
        if n == time.n_steps() {
            res = relative_residual(be.system(), &x, &b);
        }
        if let Some(obs) = observe {
            trace.push(StepRecord {
                step: n,
                t,
                rmse: obs(&x, t),
            });
        }
    }
    Ok((x, be.condition_number(), res, trace))
}

fn nodal(example: Example, pts: &[Point], t: f64, field: usize) -> Vec<f64> {
    pts.iter().map(|&p| example.exact(p, t)[field]).collect()
}

fn solve_fem_poisson(spec: &CaseSpec, mesh: &TriMesh) -> Result<Outcome> {
    let ex = spec.example;
    let k = spec.k;
    let src = |t: f64| move |p: Point| ex.source(p, t, k)[0];
    let dir = |t: f64| move |p: Point| ex.exact(p, t)[0];
    let flux = |t: f64| {
        move |p: Point, n: Point| {
            let g = ex.gradient(p, t);
            k * (g[0] * n[0] + g[1] * n[1])
        }
    };
    let sys = assemble_poisson(mesh, k, &src(0.0), &dir(0.0), Some(&flux(0.0)))?;
    let mut m = assemble_mass(mesh)?;
    zero_constrained_rows(&mut m, &sys.constrained);
    let load = |t: f64| poisson_rhs(mesh, &src(t), &dir(t), Some(&flux(t)));
    let initial = || Ok(DVector::from_vec(nodal(ex, &mesh.nodes, 0.0, 0)));
    let observe = |x: &DVector<f64>, t: f64| rmse(x.as_slice(), &nodal(ex, &mesh.nodes, t, 0)).unwrap_or(f64::NAN);
    let (x, cn, res, trace) = drive(
        spec,
        &sys.matrix,
        &m,
        &load,
        &initial,
        spec.trace.then_some(&observe as Observer),
    )?;
    Ok(Outcome {
        solved: Solved::Fem(x),
        condition_number: cn,
        relative_residual: res,
        trace,
    })
}

fn stokes_initial(ex: Example, mv: &TriMesh, mp: &TriMesh, t: f64) -> DVector<f64> {
    let mut v = nodal(ex, &mv.nodes, t, 0);
    v.extend(nodal(ex, &mv.nodes, t, 1));
    v.extend(nodal(ex, &mp.nodes, t, 2));
    DVector::from_vec(v)
}

fn solve_fem_stokes(spec: &CaseSpec, mv: &TriMesh, mp: &TriMesh) -> Result<Outcome> {
    let ex = spec.example;
    let src = |t: f64| move |p: Point| -> [f64; 2] {
        let f = ex.source(p, t, 1.0);
        [f[0], f[1]]
    };
    let dir = |t: f64| move |p: Point| -> [f64; 2] {
        let u = ex.exact(p, t);
        [u[0], u[1]]
    };
    let ops = StokesOperators::assemble(mv, mp, &src(0.0))?;
    let sys = ops.system(mv, mp, &dir(0.0), ex.pressure_pin(0.0))?;
    let mut m = ops.block_mass();
    zero_constrained_rows(&mut m, &sys.constrained);
    let load = |t: f64| stokes_rhs(mv, mp, &src(t), &dir(t), ex.pressure_pin(t));
    let initial = || Ok(stokes_initial(ex, mv, mp, 0.0));
    let nu = mv.n_nodes();
    let observe = |x: &DVector<f64>, t: f64| {
        rmse(&x.as_slice()[..nu], &nodal(ex, &mv.nodes, t, 0)).unwrap_or(f64::NAN)
    };
    let (x, cn, res, trace) = drive(
        spec,
        &sys.matrix,
        &m,
        &load,
        &initial,
        spec.trace.then_some(&observe as Observer),
    )?;
    Ok(Outcome {
        solved: Solved::Fem(x),
        condition_number: cn,
        relative_residual: res,
        trace,
    })
}

fn solve_rbf(spec: &CaseSpec, cloud: &NodeCloud, kind: RbfKind) -> Result<Outcome> {
    let ex = spec.example;
    let k = spec.k;
    let plan = RowPlan::new(cloud)?;
    let centers = plan.centers.clone();
    let n = centers.len();
    let nodal_matrix = spec.trace.then(|| crate::rbf::interpolation_matrix(kind, &centers, &centers));
    let observe = |x: &DVector<f64>, t: f64| {
        let phi = nodal_matrix.as_ref().expect("trace matrix");
        let u = phi * x.rows(0, n);
        rmse(u.as_slice(), &nodal(ex, &centers, t, 0)).unwrap_or(f64::NAN)
    };
    let observe = spec.trace.then_some(&observe as Observer);

    if ex.is_stokes() {
        let src = |t: f64| move |p: Point| -> [f64; 2] {
            let f = ex.source(p, t, 1.0);
            [f[0], f[1]]
        };
        let dir = |t: f64| move |p: Point| -> [f64; 2] {
            let u = ex.exact(p, t);
            [u[0], u[1]]
        };
        let (a, m) = kansa_stokes_matrices(&plan, kind, ex.pressure_pin(0.0))?;
        let load = |t: f64| kansa_stokes_rhs(&plan, &src(t), &dir(t), ex.pressure_pin(t));
        let initial = || {
            let mut alpha = Vec::with_capacity(3 * n);
            for field in 0..3 {
                alpha.extend(interpolate(kind, &centers, &nodal(ex, &centers, 0.0, field))?.alpha);
            }
            Ok(DVector::from_vec(alpha))
        };
        let (x, cn, res, trace) = drive(spec, &a, &m, &load, &initial, observe)?;
        Ok(Outcome {
            solved: Solved::RbfStokes(split_stokes(&x, &centers, kind)?),
            condition_number: cn,
            relative_residual: res,
            trace,
        })
    } else {
        let src = |t: f64| move |p: Point| ex.source(p, t, k)[0];
        let dir = |t: f64| move |p: Point| ex.exact(p, t)[0];
        let flux = |t: f64| {
            move |p: Point, nrm: Point| {
                let g = ex.gradient(p, t);
                k * (g[0] * nrm[0] + g[1] * nrm[1])
            }
        };
        let (a, m) = kansa_poisson_matrices(&plan, kind, k)?;
        let load = |t: f64| Ok(kansa_poisson_rhs(&plan, &src(t), &dir(t), Some(&flux(t))));
        let initial = || {
            let c = interpolate(kind, &centers, &nodal(ex, &centers, 0.0, 0))?;
            Ok(DVector::from_vec(c.alpha))
        };
        let (x, cn, res, trace) = drive(spec, &a, &m, &load, &initial, observe)?;
        Ok(Outcome {
            solved: Solved::RbfScalar(Coefficients::new(x.iter().copied().collect(), centers.clone(), kind)?),
            condition_number: cn,
            relative_residual: res,
            trace,
        })
    }
}

/// Nodal RMSE of an MQ run with shape parameter `c`; for Stokes, the sum of
/// the two velocity RMSEs.
pub fn mq_objective(spec: &CaseSpec, cloud: &NodeCloud, c: f64) -> Result<f64> {
    let quiet = CaseSpec {
        trace: false,
        ..spec.clone()
    };
    let out = solve_rbf(&quiet, cloud, RbfKind::Mq { c })?;
    let pts = cloud.points();
    let t = spec.final_time();
    let ex = spec.example;
    match out.solved {
        Solved::RbfScalar(coeffs) => rmse(&crate::rbf::evaluate_solution(&coeffs, &pts), &nodal(ex, &pts, t, 0)),
        Solved::RbfStokes([ux, uy, _]) => Ok(rmse(&crate::rbf::evaluate_solution(&ux, &pts), &nodal(ex, &pts, t, 0))?
            + rmse(&crate::rbf::evaluate_solution(&uy, &pts), &nodal(ex, &pts, t, 1))?),
        Solved::Fem(_) => Err(Error::InvalidCase("shape optimization needs an RBF case".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldReport {
    pub field: Field,
    pub report: ErrorReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualStatus {
    Pass,
    Fail,
    /// Condition number too large for the residual bound to be meaningful.
    Flagged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub case: CaseSpec,
    pub physical_spacing: f64,
    pub n_nodes: usize,
    pub fields: Vec<FieldReport>,
    /// `‖Ax − b‖∞ / ‖b‖∞` of the (final) solve.
    pub relative_residual: f64,
    pub optimization: Option<OptResult>,
    pub trace: Vec<StepRecord>,
}

impl ResultRow {
    pub fn field(&self, f: Field) -> Option<&ErrorReport> {
        self.fields.iter().find(|r| r.field == f).map(|r| &r.report)
    }

    pub fn condition_number(&self) -> f64 {
        self.fields.first().map_or(f64::NAN, |r| r.report.condition_number)
    }

    pub fn runtime_s(&self) -> f64 {
        self.fields.first().map_or(f64::NAN, |r| r.report.runtime_s)
    }

    pub fn residual_status(&self) -> ResidualStatus {
        if self.condition_number() >= RESIDUAL_CHECK_MAX_CONDITION {
            ResidualStatus::Flagged
        } else if self.relative_residual <= RESIDUAL_TOL {
            ResidualStatus::Pass
        } else {
            ResidualStatus::Fail
        }
    }
}

struct FieldErrors {
    rmse: f64,
    mre: f64,
    lse: f64,
}

fn errors_on(
    numeric_nodal: &[f64],
    exact_nodal: &[f64],
    mesh: &TriMesh,
    surface: NumericSurface,
    exact: &dyn Fn(Point) -> f64,
    mode: LseMode,
    floor: f64,
) -> Result<FieldErrors> {
    let rule = quad_rule(VOLUME_QUADRATURE_DEGREE)?;
    Ok(FieldErrors {
        rmse: rmse(numeric_nodal, exact_nodal)?,
        mre: max_relative_error(numeric_nodal, exact_nodal, floor)?,
        lse: lse(mesh, surface, exact, &rule, mode)?,
    })
}

fn field_errors(spec: &CaseSpec, geometry: &CaseGeometry, solved: &Solved) -> Result<Vec<FieldErrors>> {
    let ex = spec.example;
    let t = spec.final_time();
    let exact = |f: usize| move |p: Point| ex.exact(p, t)[f];
    let mode = spec.lse_mode;
    match (geometry, solved) {
        (CaseGeometry::Mesh(mesh), Solved::Fem(x)) => {
            let field = FemField { mesh, values: x.as_slice() };
            Ok(vec![errors_on(
                x.as_slice(),
                &nodal(ex, &mesh.nodes, t, 0),
                mesh,
                NumericSurface::Fem(field),
                &exact(0),
                mode,
                spec.mre_floor,
            )?])
        }
        (CaseGeometry::TaylorHood { velocity, pressure }, Solved::Fem(x)) => {
            let nu = velocity.n_nodes();
            let parts = [
                (velocity, &x.as_slice()[..nu], 0),
                (velocity, &x.as_slice()[nu..2 * nu], 1),
                (pressure, &x.as_slice()[2 * nu..], 2),
            ];
            parts
                .into_iter()
                .map(|(mesh, values, f)| {
                    errors_on(
                        values,
                        &nodal(ex, &mesh.nodes, t, f),
                        mesh,
                        NumericSurface::Fem(FemField { mesh, values }),
                        &exact(f),
                        mode,
                        spec.mre_floor,
                    )
                })
                .collect()
        }
        (CaseGeometry::Cloud { cloud, imaginary }, Solved::RbfScalar(c)) => {
            let pts = cloud.points();
            Ok(vec![errors_on(
                &crate::rbf::evaluate_solution(c, &pts),
                &nodal(ex, &pts, t, 0),
                imaginary,
                NumericSurface::Rbf(c),
                &exact(0),
                mode,
                spec.mre_floor,
            )?])
        }
        (CaseGeometry::Cloud { cloud, imaginary }, Solved::RbfStokes(cs)) => {
            let pts = cloud.points();
            cs.iter()
                .enumerate()
                .map(|(f, c)| {
                    errors_on(
                        &crate::rbf::evaluate_solution(c, &pts),
                        &nodal(ex, &pts, t, f),
                        imaginary,
                        NumericSurface::Rbf(c),
                        &exact(f),
                        mode,
                        spec.mre_floor,
                    )
                })
                .collect()
        }
        _ => Err(Error::InvalidCase("geometry does not match the solution type".into())),
    }
}

/// Runs one case on an already built geometry.
pub fn run_on_geometry(spec: &CaseSpec, geometry: &CaseGeometry) -> Result<ResultRow> {
    spec.validate()?;
    let t0 = Instant::now();
    let mut optimization = None;
    let mut shape_parameter = None;
    let outcome = match geometry {
        CaseGeometry::Mesh(mesh) if !spec.example.is_stokes() && !spec.method.is_rbf() => solve_fem_poisson(spec, mesh)?,
        CaseGeometry::TaylorHood { velocity, pressure } => solve_fem_stokes(spec, velocity, pressure)?,
        CaseGeometry::Cloud { cloud, .. } => {
            let c = match (spec.method, spec.fixed_c) {
                (Method::RbfMq, Some(c)) => Some(c),
                (Method::RbfMq, None) => {
                    let opt = optimize_shape_parameter(spec, cloud, &spec.search)?;
                    let c = opt.c_star;
                    optimization = Some(opt);
                    Some(c)
                }
                _ => None,
            };
            shape_parameter = c;
            solve_rbf(spec, cloud, spec.kind_for(c))?
        }
        _ => return Err(Error::InvalidCase("geometry does not match the case".into())),
    };
    let runtime_s = t0.elapsed().as_secs_f64();
    let errors = field_errors(spec, geometry, &outcome.solved)?;
    let tps_beta = (spec.method == Method::RbfTps).then_some(spec.tps_beta);
    let fields = spec
        .example
        .field_names()
        .iter()
        .zip(errors)
        .map(|(&field, e)| FieldReport {
            field,
            report: ErrorReport {
                lse: e.lse,
                rmse: e.rmse,
                mre: e.mre,
                condition_number: outcome.condition_number,
                runtime_s,
                shape_parameter,
                tps_beta,
            },
        })
        .collect();
    Ok(ResultRow {
        case: spec.clone(),
        physical_spacing: spec.physical_spacing(),
        n_nodes: geometry.n_nodes(),
        fields,
        relative_residual: outcome.relative_residual,
        optimization,
        trace: outcome.trace,
    })
}

/// Builds the discretization, solves (optimizing the MQ shape parameter when
/// none is fixed) and measures errors. The reported runtime covers assembly,
/// optimization and solves only.
pub fn run_case(spec: &CaseSpec) -> Result<ResultRow> {
    let geometry = build_geometry(spec)?;
    run_on_geometry(spec, &geometry)
}

/// Runs an unsteady case to its final time.
pub fn run_transient(spec: &CaseSpec) -> Result<ResultRow> {
    if !spec.example.is_unsteady() {
        return Err(Error::InvalidTimeConfig(format!("{} is a steady example", spec.example)));
    }
    run_case(spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_trend(points: &[(f64, f64)]) -> Result<TrendFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientPoints(points.len()));
    }
    for &(x, y) in points {
        for v in [x, y] {
            if !(v > 0.0) {
                return Err(Error::NonPositiveValue(v));
            }
        }
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Numerical("all x values coincide".into()));
    }
    let slope = sxy / sxx;
    Ok(TrendFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// Scientific notation with four significant digits and a two-digit
/// exponent, e.g. `4.091e-02`. Non-finite values print as `overflow`.
pub fn sci4(x: f64) -> String {
    if !x.is_finite() {
        return "overflow".into();
    }
    let s = format!("{x:.3e}");
    let (mantissa, exp) = s.split_once('e').unwrap_or((&s, "0"));
    let e: i32 = exp.parse().unwrap_or(0);
    format!("{mantissa}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
}

/// `1/n` when `dh` is the reciprocal of an integer.
pub fn dh_label(dh: f64) -> String {
    let inv = 1.0 / dh;
    if (inv - inv.round()).abs() < 1e-9 * inv && inv.round() >= 1.0 {
        format!("1/{}", inv.round() as u64)
    } else {
        format!("{dh}")
    }
}

/// Parses a JSON list of cases, reporting syntax and type errors with their
/// line number.
pub fn parse_config(text: &str) -> Result<Vec<CaseSpec>> {
    let cases: Vec<CaseSpec> = serde_json::from_str(text).map_err(|e| Error::ConfigParse {
        line: e.line(),
        message: e.to_string(),
    })?;
    for c in &cases {
        c.validate()?;
    }
    Ok(cases)
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub rows: Vec<ResultRow>,
    pub tables: Vec<PathBuf>,
    pub bundle: PathBuf,
}

pub const TABLE_HEADER: [&str; 9] = ["dh", "method", "field", "LSE", "RMSE", "MRE", "CN", "RT", "OSP"];

fn method_label(case: &CaseSpec) -> String {
    format!("{}{}", case.method, if case.random_nodes { "*" } else { "" })
}

pub fn write_table(path: &Path, rows: &[&ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TABLE_HEADER)?;
    for row in rows {
        for f in &row.fields {
            let r = &f.report;
            w.write_record([
                dh_label(row.case.dh),
                method_label(&row.case),
                f.field.id().to_string(),
                sci4(r.lse),
                sci4(r.rmse),
                sci4(r.mre),
                sci4(r.condition_number),
                format!("{:.2}", r.runtime_s),
                r.shape_parameter.map_or(String::new(), |c| format!("{c:.3}")),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSeries {
    pub example: Example,
    pub method: String,
    pub field: Field,
    pub dh: Vec<f64>,
    pub lse: Vec<f64>,
    pub rmse: Vec<f64>,
    /// Slope of ln LSE against ln δh, when at least three points exist.
    pub lse_slope: Option<f64>,
    pub rmse_slope: Option<f64>,
}

pub fn convergence_series(rows: &[ResultRow]) -> Vec<ConvergenceSeries> {
    // (dh, lse, rmse) per series
    let mut groups = BTreeMap::<_, Vec<(f64, f64, f64)>>::new();
    for row in rows {
        for f in &row.fields {
            groups
                .entry((row.case.example, method_label(&row.case), f.field))
                .or_default()
                .push((row.case.dh, f.report.lse, f.report.rmse));
        }
    }
    groups
        .into_iter()
        .map(|((example, method, field), mut pts)| {
            pts.sort_by(|a, b| b.0.total_cmp(&a.0));
            let slope = |i: usize| {
                let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, if i == 0 { p.1 } else { p.2 })).collect();
                fit_trend(&xy).ok().map(|t| t.slope)
            };
            ConvergenceSeries {
                example,
                method,
                field,
                dh: pts.iter().map(|p| p.0).collect(),
                lse: pts.iter().map(|p| p.1).collect(),
                rmse: pts.iter().map(|p| p.2).collect(),
                lse_slope: slope(0),
                rmse_slope: slope(1),
            }
        })
        .collect()
}

/// Runs every case, then writes one CSV table per example and a JSON
/// convergence bundle into `out_dir`.
pub fn run_cases(cases: &[CaseSpec], out_dir: &Path) -> Result<SuiteReport> {
    fs::create_dir_all(out_dir)?;
    let mut ordered = cases.to_vec();
    ordered.sort_by_key(|c| c.sort_key());
    let rows = ordered.iter().map(run_case).collect::<Result<Vec<_>>>()?;
    let mut tables = Vec::new();
    for ex in Example::ALL {
        let subset: Vec<&ResultRow> = rows.iter().filter(|r| r.case.example == ex).collect();
        if subset.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("{ex}.csv"));
        write_table(&path, &subset)?;
        tables.push(path);
    }
    let bundle = out_dir.join("convergence.json");
    fs::write(&bundle, serde_json::to_string_pretty(&convergence_series(&rows))?)?;
    Ok(SuiteReport { rows, tables, bundle })
}

pub fn run_suite(config_path: &Path, out_dir: &Path) -> Result<SuiteReport> {
    let text = fs::read_to_string(config_path)?;
    run_cases(&parse_config(&text)?, out_dir)
}
