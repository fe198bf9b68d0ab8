use nalgebra::{DMatrix, DVector};

use super::{AssembledSystem, ElementLoop, ElementMap, Layout, ReferenceElement};
use crate::error::{Error, Result};
use crate::geometry::{dist, Point, TriMesh};

const PIN_TOL: f64 = 1e-9;

pub type VectorFn<'a> = &'a dyn Fn(Point) -> [f64; 2];

/// Fixes the pressure at the order-1 node located at `point`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PressurePin {
    pub point: Point,
    pub value: f64,
}

/// Unconstrained Taylor–Hood operators. `lx[(a, b)] = ∫ ψ_b ∂φ_a/∂x` couples
/// velocity test function `a` with pressure basis function `b`.
#[derive(Clone, Debug)]
pub struct StokesOperators {
    pub stiffness: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    pub lx: DMatrix<f64>,
    pub ly: DMatrix<f64>,
    pub fx: DVector<f64>,
    pub fy: DVector<f64>,
}

/// Maps each pressure node to the velocity node at the same position.
fn pressure_to_velocity(mesh_v: &TriMesh, mesh_p: &TriMesh) -> Result<Vec<usize>> {
    if mesh_v.order != 2 || mesh_p.order != 1 {
        return Err(Error::MeshMismatch(format!(
            "expected orders (2, 1), got ({}, {})",
            mesh_v.order, mesh_p.order
        )));
    }
    if mesh_v.n_triangles() != mesh_p.n_triangles() {
        return Err(Error::MeshMismatch(format!(
            "{} velocity triangles vs {} pressure triangles",
            mesh_v.n_triangles(),
            mesh_p.n_triangles()
        )));
    }
    let mut map = vec![usize::MAX; mesh_p.n_nodes()];
    for (tv, tp) in mesh_v.triangles.iter().zip(&mesh_p.triangles) {
        for k in 0..3 {
            let (iv, ip) = (tv[k], tp[k]);
            if dist(mesh_v.nodes[iv], mesh_p.nodes[ip]) > PIN_TOL {
                return Err(Error::MeshMismatch(format!(
                    "vertex {:?} vs {:?}",
                    mesh_v.nodes[iv], mesh_p.nodes[ip]
                )));
            }
            map[ip] = iv;
        }
    }
    if map.contains(&usize::MAX) {
        return Err(Error::MeshMismatch("pressure node not used by any triangle".into()));
    }
    Ok(map)
}

impl StokesOperators {
    pub fn assemble(mesh_v: &TriMesh, mesh_p: &TriMesh, source: VectorFn) -> Result<Self> {
        pressure_to_velocity(mesh_v, mesh_p)?;
        let lp = ElementLoop::new(2)?;
        let p1 = ReferenceElement { order: 1 };
        let psi: Vec<Vec<f64>> = lp.rule.points.iter().map(|&q| p1.eval(q).values).collect();
        let (nu, np) = (mesh_v.n_nodes(), mesh_p.n_nodes());
        let mut ops = Self {
            stiffness: DMatrix::zeros(nu, nu),
            mass: DMatrix::zeros(nu, nu),
            lx: DMatrix::zeros(nu, np),
            ly: DMatrix::zeros(nu, np),
            fx: DVector::zeros(nu),
            fy: DVector::zeros(nu),
        };
        let mut grads = [[0.0; 2]; 6];
        for (e, (tv, tp)) in mesh_v.triangles.iter().zip(&mesh_p.triangles).enumerate() {
            let map = ElementMap::new(mesh_v.vertices(e));
            let jw = map.det.abs();
            for (q, (xi, w)) in lp.rule.iter().enumerate() {
                let s = &lp.shapes[q];
                for (g, rg) in grads.iter_mut().zip(&s.grads) {
                    *g = map.grad(*rg);
                }
                let f = source(map.to_physical(xi));
                let ww = w * jw;
                for a in 0..6 {
                    let ia = tv[a];
                    for b in 0..6 {
                        let ib = tv[b];
                        ops.stiffness[(ia, ib)] += ww * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                        ops.mass[(ia, ib)] += ww * s.values[a] * s.values[b];
                    }
                    for b in 0..3 {
                        ops.lx[(ia, tp[b])] += ww * psi[q][b] * grads[a][0];
                        ops.ly[(ia, tp[b])] += ww * psi[q][b] * grads[a][1];
                    }
                    ops.fx[ia] += ww * f[0] * s.values[a];
                    ops.fy[ia] += ww * f[1] * s.values[a];
                }
            }
        }
        Ok(ops)
    }

    pub fn n_u(&self) -> usize {
        self.stiffness.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.lx.ncols()
    }

    /// Block mass matrix: `M` on both velocity blocks, zero on pressure rows.
    pub fn block_mass(&self) -> DMatrix<f64> {
        let (nu, np) = (self.n_u(), self.n_p());
        let mut m = DMatrix::zeros(2 * nu + np, 2 * nu + np);
        m.view_mut((0, 0), (nu, nu)).copy_from(&self.mass);
        m.view_mut((nu, nu), (nu, nu)).copy_from(&self.mass);
        m
    }

    /// Square block system with velocity Dirichlet rows and optional pressure
    /// pin applied.
    pub fn system(
        &self,
        mesh_v: &TriMesh,
        mesh_p: &TriMesh,
        dirichlet: VectorFn,
        pin: Option<PressurePin>,
    ) -> Result<AssembledSystem> {
        let (nu, np) = (self.n_u(), self.n_p());
        if pin.is_none() && mesh_v.domain.neumann_segments.is_empty() {
            return Err(Error::MissingPressureClosure);
        }
        let n = 2 * nu + np;
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (nu, nu)).copy_from(&self.stiffness);
        a.view_mut((nu, nu), (nu, nu)).copy_from(&self.stiffness);
        a.view_mut((0, 2 * nu), (nu, np)).copy_from(&(-&self.lx));
        a.view_mut((nu, 2 * nu), (nu, np)).copy_from(&(-&self.ly));
        a.view_mut((2 * nu, 0), (np, nu)).copy_from(&self.lx.transpose());
        a.view_mut((2 * nu, nu), (np, nu)).copy_from(&self.ly.transpose());
        let mut b = DVector::zeros(n);
        b.rows_mut(0, nu).copy_from(&self.fx);
        b.rows_mut(nu, nu).copy_from(&self.fy);

        let mut constrained = vec![false; n];
        for (i, &p) in mesh_v.nodes.iter().enumerate() {
            if !mesh_v.domain.on_dirichlet(p) {
                continue;
            }
            let u = dirichlet(p);
            for (c, row) in [i, nu + i].into_iter().enumerate() {
                a.row_mut(row).fill(0.0);
                a[(row, row)] = 1.0;
                b[row] = u[c];
                constrained[row] = true;
            }
        }
        if let Some(pin) = pin {
            let row = pin_row(mesh_p, nu, pin)?;
            a.row_mut(row).fill(0.0);
            a[(row, row)] = 1.0;
            b[row] = pin.value;
            constrained[row] = true;
        }
        let dof_map = (0..nu).collect();
        Ok(AssembledSystem {
            matrix: a,
            rhs: b,
            layout: Layout::StokesBlock { n_u: nu, n_p: np },
            constrained,
            dof_map,
        })
    }
}

/// Load vectors `(∫ f_x φ_a, ∫ f_y φ_a)` on the velocity space.
pub fn stokes_load(mesh_v: &TriMesh, source: VectorFn) -> Result<(DVector<f64>, DVector<f64>)> {
    let lp = ElementLoop::new(mesh_v.order)?;
    let nu = mesh_v.n_nodes();
    let (mut fx, mut fy) = (DVector::zeros(nu), DVector::zeros(nu));
    for (e, tv) in mesh_v.triangles.iter().enumerate() {
        let map = ElementMap::new(mesh_v.vertices(e));
        let jw = map.det.abs();
        for (q, (xi, w)) in lp.rule.iter().enumerate() {
            let f = source(map.to_physical(xi));
            for (a, v) in lp.shapes[q].values.iter().enumerate() {
                fx[tv[a]] += w * jw * f[0] * v;
                fy[tv[a]] += w * jw * f[1] * v;
            }
        }
    }
    Ok((fx, fy))
}

fn pin_row(mesh_p: &TriMesh, n_u: usize, pin: PressurePin) -> Result<usize> {
    mesh_p
        .nodes
        .iter()
        .position(|&q| dist(q, pin.point) <= PIN_TOL)
        .map(|node| 2 * n_u + node)
        .ok_or(Error::PinNodeNotFound(pin.point))
}

/// Right-hand side of the constrained block system for the given data.
pub fn stokes_rhs(
    mesh_v: &TriMesh,
    mesh_p: &TriMesh,
    source: VectorFn,
    dirichlet: VectorFn,
    pin: Option<PressurePin>,
) -> Result<DVector<f64>> {
    let (fx, fy) = stokes_load(mesh_v, source)?;
    let nu = mesh_v.n_nodes();
    let mut b = DVector::zeros(2 * nu + mesh_p.n_nodes());
    b.rows_mut(0, nu).copy_from(&fx);
    b.rows_mut(nu, nu).copy_from(&fy);
    for (i, &p) in mesh_v.nodes.iter().enumerate() {
        if mesh_v.domain.on_dirichlet(p) {
            let u = dirichlet(p);
            b[i] = u[0];
            b[nu + i] = u[1];
        }
    }
    if let Some(pin) = pin {
        b[pin_row(mesh_p, nu, pin)?] = pin.value;
    }
    Ok(b)
}

/// Taylor–Hood Stokes system `-Δu + ∇p = f`, `∇·u = 0`, with unknowns
/// ordered ⟨u_x, u_y, p⟩.
pub fn assemble_stokes(
    mesh_v: &TriMesh,
    mesh_p: &TriMesh,
    source: VectorFn,
    dirichlet: VectorFn,
    pin: Option<PressurePin>,
) -> Result<AssembledSystem> {
    StokesOperators::assemble(mesh_v, mesh_p, source)?.system(mesh_v, mesh_p, dirichlet, pin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_structured_mesh, DomainSpec};
    use crate::linsolve::pinv_solve;

    fn meshes(domain: &DomainSpec, dh: f64) -> (TriMesh, TriMesh) {
        (
            build_structured_mesh(domain, dh, 2).unwrap(),
            build_structured_mesh(domain, dh, 1).unwrap(),
        )
    }

    fn solve(sys: &AssembledSystem) -> DVector<f64> {
        pinv_solve(&sys.matrix, &sys.rhs, None).unwrap().0
    }

    #[test]
    fn pin_is_exact() {
        let d = DomainSpec::bi_unit_square_dirichlet();
        let (mv, mp) = meshes(&d, 0.5);
        let u = |p: Point| {
            let [x, y] = p;
            [20.0 * x * y.powi(3), 5.0 * x.powi(4) - 5.0 * y.powi(4)]
        };
        let p_exact = |p: Point| 60.0 * p[0] * p[0] * p[1] - 20.0 * p[1].powi(3);
        let pin = PressurePin { point: [1.0, 1.0], value: p_exact([1.0, 1.0]) };
        let sys = assemble_stokes(&mv, &mp, &|_| [0.0, 0.0], &u, Some(pin)).unwrap();
        let sol = solve(&sys);
        let nu = mv.n_nodes();
        let node = mp.nodes.iter().position(|&q| q == [1.0, 1.0]).unwrap();
        assert!((sol[2 * nu + node] - 40.0).abs() < 1e-9);
    }

    #[test]
    fn reproduces_linear_velocity_and_constant_pressure() {
        // u = (x + 2y, 3x - y) is divergence free and harmonic; p = 7.
        let d = DomainSpec::unit_square_dirichlet();
        let (mv, mp) = meshes(&d, 0.25);
        let u = |p: Point| [p[0] + 2.0 * p[1], 3.0 * p[0] - p[1]];
        let pin = PressurePin { point: [1.0, 1.0], value: 7.0 };
        let sys = assemble_stokes(&mv, &mp, &|_| [0.0, 0.0], &u, Some(pin)).unwrap();
        let sol = solve(&sys);
        let nu = mv.n_nodes();
        for (i, &p) in mv.nodes.iter().enumerate() {
            let e = u(p);
            assert!((sol[i] - e[0]).abs() < 1e-10);
            assert!((sol[nu + i] - e[1]).abs() < 1e-10);
        }
        for j in 0..mp.n_nodes() {
            assert!((sol[2 * nu + j] - 7.0).abs() < 1e-9);
        }
    }

    #[test]
    fn divergence_blocks_annihilate_constants() {
        let (mv, mp) = meshes(&DomainSpec::unit_square_dirichlet(), 0.25);
        let ops = StokesOperators::assemble(&mv, &mp, &|_| [0.0, 0.0]).unwrap();
        // Σ_a ∫ ψ_b ∂φ_a = 0 since the velocity basis sums to one.
        for b in 0..ops.n_p() {
            assert!(ops.lx.column(b).sum().abs() < 1e-13);
            assert!(ops.ly.column(b).sum().abs() < 1e-13);
        }
        assert!((ops.mass.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pressure_closure_required() {
        let (mv, mp) = meshes(&DomainSpec::unit_square_dirichlet(), 0.5);
        let r = assemble_stokes(&mv, &mp, &|_| [0.0, 0.0], &|_| [0.0, 0.0], None);
        assert!(matches!(r, Err(Error::MissingPressureClosure)));
        let pin = PressurePin { point: [0.3, 0.3], value: 0.0 };
        let r = assemble_stokes(&mv, &mp, &|_| [0.0, 0.0], &|_| [0.0, 0.0], Some(pin));
        assert!(matches!(r, Err(Error::PinNodeNotFound(_))));
    }

    #[test]
    fn rhs_matches_assembled_system() {
        let d = DomainSpec::l_shape_outflow();
        let (mv, mp) = meshes(&d, 0.25);
        let f = |p: Point| [p[0] * p[1], 1.0 - p[0]];
        let g = |p: Point| [p[1], -p[0]];
        let sys = assemble_stokes(&mv, &mp, &f, &g, None).unwrap();
        let b = stokes_rhs(&mv, &mp, &f, &g, None).unwrap();
        assert!((b - &sys.rhs).amax() < 1e-14);
    }

    #[test]
    fn mismatched_meshes_rejected() {
        let d = DomainSpec::unit_square_dirichlet();
        let mv = build_structured_mesh(&d, 0.25, 2).unwrap();
        let mp = build_structured_mesh(&d, 0.5, 1).unwrap();
        let r = StokesOperators::assemble(&mv, &mp, &|_| [0.0, 0.0]);
        assert!(matches!(r, Err(Error::MeshMismatch(_))));
    }
}
