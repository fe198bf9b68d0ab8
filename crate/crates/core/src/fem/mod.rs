//! Galerkin finite elements on triangles: reference elements, quadrature,
//! Poisson and Taylor–Hood Stokes assembly.

mod element;
mod quadrature;
mod stokes;

pub use element::{ElementMap, ReferenceElement, ShapeValues};
pub use quadrature::{edge_rule, quad_rule, QuadratureRule};
pub use stokes::{assemble_stokes, stokes_load, stokes_rhs, PressurePin, StokesOperators, VectorFn};

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::geometry::{Point, TriMesh};

/// Degree used for all volume integrals; exact for P2×P2 products.
pub const VOLUME_QUADRATURE_DEGREE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    PoissonScalar,
    /// Unknowns ordered ⟨u_x (n_u), u_y (n_u), p (n_p)⟩.
    StokesBlock { n_u: usize, n_p: usize },
}

#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub layout: Layout,
    /// Rows replaced by an essential condition (identity or pin rows).
    pub constrained: Vec<bool>,
    /// Row of the first (or only) field component for each mesh node.
    pub dof_map: Vec<usize>,
}

impl AssembledSystem {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }
}

/// Scalar source or boundary value as a function of position.
pub type ScalarFn<'a> = &'a dyn Fn(Point) -> f64;
/// Boundary flux `k∇u·n` as a function of position and outward normal.
pub type FluxFn<'a> = &'a dyn Fn(Point, Point) -> f64;

struct ElementLoop {
    element: ReferenceElement,
    rule: QuadratureRule,
    shapes: Vec<ShapeValues>,
}

impl ElementLoop {
    fn new(order: usize) -> Result<Self> {
        let element = ReferenceElement::new(order)?;
        let rule = quad_rule(VOLUME_QUADRATURE_DEGREE)?;
        let shapes = rule.points.iter().map(|&p| element.eval(p)).collect();
        Ok(Self { element, rule, shapes })
    }
}

/// Stiffness matrix `∫ k ∇φ_i·∇φ_j` before boundary conditions.
pub fn assemble_stiffness(mesh: &TriMesh, k: f64) -> Result<DMatrix<f64>> {
    let lp = ElementLoop::new(mesh.order)?;
    let n = mesh.n_nodes();
    let nl = lp.element.n_nodes();
    let mut a = DMatrix::zeros(n, n);
    let mut grads = vec![[0.0; 2]; nl];
    for (e, tri) in mesh.triangles.iter().enumerate() {
        let map = ElementMap::new(mesh.vertices(e));
        let jw = map.det.abs();
        for (q, w) in lp.rule.weights.iter().enumerate() {
            for (g, rg) in grads.iter_mut().zip(&lp.shapes[q].grads) {
                *g = map.grad(*rg);
            }
            let scale = k * w * jw;
            for i in 0..nl {
                for j in 0..nl {
                    a[(tri[i], tri[j])] += scale * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                }
            }
        }
    }
    Ok(a)
}

/// Consistent mass matrix `∫ φ_i φ_j`.
pub fn assemble_mass(mesh: &TriMesh) -> Result<DMatrix<f64>> {
    let lp = ElementLoop::new(mesh.order)?;
    let n = mesh.n_nodes();
    let nl = lp.element.n_nodes();
    let mut m = DMatrix::zeros(n, n);
    for (e, tri) in mesh.triangles.iter().enumerate() {
        let jw = ElementMap::new(mesh.vertices(e)).det.abs();
        for (q, w) in lp.rule.weights.iter().enumerate() {
            let v = &lp.shapes[q].values;
            for i in 0..nl {
                for j in 0..nl {
                    m[(tri[i], tri[j])] += w * jw * v[i] * v[j];
                }
            }
        }
    }
    Ok(m)
}

/// Load vector `∫ f φ_i + ∫_{Γ_N} g φ_i`.
pub fn assemble_load(mesh: &TriMesh, source: ScalarFn, flux: Option<FluxFn>) -> Result<DVector<f64>> {
    let lp = ElementLoop::new(mesh.order)?;
    let mut b = DVector::zeros(mesh.n_nodes());
    for (e, tri) in mesh.triangles.iter().enumerate() {
        let map = ElementMap::new(mesh.vertices(e));
        let jw = map.det.abs();
        for (q, (xi, w)) in lp.rule.iter().enumerate() {
            let fx = source(map.to_physical(xi));
            for (i, v) in lp.shapes[q].values.iter().enumerate() {
                b[tri[i]] += w * jw * fx * v;
            }
        }
    }
    if let Some(g) = flux {
        add_neumann_terms(mesh, &lp.element, g, &mut b);
    }
    Ok(b)
}

/// Reference parametrization of local edge `k` (vertex k to vertex k+1).
fn edge_reference_point(k: usize, s: f64) -> Point {
    match k {
        0 => [s, 0.0],
        1 => [1.0 - s, s],
        _ => [0.0, 1.0 - s],
    }
}

fn add_neumann_terms(mesh: &TriMesh, element: &ReferenceElement, g: FluxFn, b: &mut DVector<f64>) {
    let rule = edge_rule();
    for (e, tri) in mesh.triangles.iter().enumerate() {
        let verts = mesh.vertices(e);
        let map = ElementMap::new(verts);
        for k in 0..3 {
            let (pa, pb) = (verts[k], verts[(k + 1) % 3]);
            let Some(seg) = mesh
                .domain
                .neumann_segments
                .iter()
                .find(|s| s.contains(pa) && s.contains(pb))
            else {
                continue;
            };
            let normal = seg.normal();
            let len = crate::geometry::dist(pa, pb);
            for &(s, w) in &rule {
                let xi = edge_reference_point(k, s);
                let gx = g(map.to_physical(xi), normal);
                for (i, v) in element.eval(xi).values.iter().enumerate() {
                    b[tri[i]] += w * len * gx * v;
                }
            }
        }
    }
}

/// Replaces rows of nodes on the closed Dirichlet boundary by identity rows
/// carrying `u_d`.
pub fn apply_dirichlet(
    matrix: &mut DMatrix<f64>,
    rhs: &mut DVector<f64>,
    mesh: &TriMesh,
    u_d: ScalarFn,
) -> Vec<bool> {
    let mut constrained = vec![false; mesh.n_nodes()];
    for (i, &p) in mesh.nodes.iter().enumerate() {
        if mesh.domain.on_dirichlet(p) {
            matrix.row_mut(i).fill(0.0);
            matrix[(i, i)] = 1.0;
            rhs[i] = u_d(p);
            constrained[i] = true;
        }
    }
    constrained
}

/// Load vector with Dirichlet rows overwritten by boundary values, matching
/// the rows produced by [`apply_dirichlet`].
pub fn poisson_rhs(mesh: &TriMesh, source: ScalarFn, dirichlet: ScalarFn, flux: Option<FluxFn>) -> Result<DVector<f64>> {
    let mut b = assemble_load(mesh, source, flux)?;
    for (i, &p) in mesh.nodes.iter().enumerate() {
        if mesh.domain.on_dirichlet(p) {
            b[i] = dirichlet(p);
        }
    }
    Ok(b)
}

/// Zeroes the rows of `mass` belonging to constrained nodes so they drop out
/// of the time derivative.
pub fn zero_constrained_rows(mass: &mut DMatrix<f64>, constrained: &[bool]) {
    for (i, &c) in constrained.iter().enumerate() {
        if c {
            mass.row_mut(i).fill(0.0);
        }
    }
}

/// Global Poisson system `-∇·(k∇u) = f` with Dirichlet rows replaced and
/// Neumann fluxes integrated along boundary edges.
pub fn assemble_poisson(
    mesh: &TriMesh,
    k: f64,
    source: ScalarFn,
    dirichlet: ScalarFn,
    flux: Option<FluxFn>,
) -> Result<AssembledSystem> {
    let mut matrix = assemble_stiffness(mesh, k)?;
    let mut rhs = assemble_load(mesh, source, flux)?;
    let constrained = apply_dirichlet(&mut matrix, &mut rhs, mesh, dirichlet);
    Ok(AssembledSystem {
        matrix,
        rhs,
        layout: Layout::PoissonScalar,
        constrained,
        dof_map: (0..mesh.n_nodes()).collect(),
    })
}

/// A finite element field: nodal values on a mesh, evaluated through the
/// element basis.
#[derive(Clone, Copy, Debug)]
pub struct FemField<'a> {
    pub mesh: &'a TriMesh,
    pub values: &'a [f64],
}

impl FemField<'_> {
    pub fn value_in_element(&self, e: usize, xi: Point) -> f64 {
        let element = ReferenceElement { order: self.mesh.order };
        let tri = &self.mesh.triangles[e];
        element
            .eval(xi)
            .values
            .iter()
            .zip(tri)
            .map(|(phi, &node)| phi * self.values[node])
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_structured_mesh, DomainSpec};
    use crate::linsolve::pinv_solve;

    fn solve(sys: &AssembledSystem) -> Vec<f64> {
        pinv_solve(&sys.matrix, &sys.rhs, None).unwrap().0.iter().copied().collect()
    }

    #[test]
    fn constant_solution() {
        let mesh = build_structured_mesh(&DomainSpec::unit_square_dirichlet(), 0.25, 1).unwrap();
        let sys = assemble_poisson(&mesh, 1.0, &|_| 0.0, &|_| 5.0, None).unwrap();
        assert!(solve(&sys).iter().all(|u| (u - 5.0).abs() < 1e-12));
    }

    #[test]
    fn p1_patch_test() {
        let exact = |p: Point| p[0] + p[1];
        for dh in [0.25, 0.125] {
            let mesh = build_structured_mesh(&DomainSpec::unit_square_dirichlet(), dh, 1).unwrap();
            let sys = assemble_poisson(&mesh, 1.0, &|_| 0.0, &exact, None).unwrap();
            for (u, &p) in solve(&sys).iter().zip(&mesh.nodes) {
                assert!((u - exact(p)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn p2_reproduces_quadratics_with_neumann_data() {
        // u = x² + xy, -Δu = -2, ∇u = (2x + y, x)
        let exact = |p: Point| p[0] * p[0] + p[0] * p[1];
        let flux = |p: Point, n: Point| (2.0 * p[0] + p[1]) * n[0] + p[0] * n[1];
        let mesh = build_structured_mesh(&DomainSpec::l_shape_mixed(), 0.25, 2).unwrap();
        let sys = assemble_poisson(&mesh, 1.0, &|_| -2.0, &exact, Some(&flux)).unwrap();
        for (u, &p) in solve(&sys).iter().zip(&mesh.nodes) {
            assert!((u - exact(p)).abs() < 1e-10, "{p:?}");
        }
    }

    #[test]
    fn stiffness_rows_sum_to_zero() {
        for order in [1, 2] {
            let mesh = build_structured_mesh(&DomainSpec::l_shape_mixed(), 0.25, order).unwrap();
            let k = assemble_stiffness(&mesh, 2.0).unwrap();
            for r in 0..k.nrows() {
                assert!(k.row(r).sum().abs() < 1e-12);
            }
            assert!((&k - k.transpose()).amax() < 1e-13);
        }
    }

    #[test]
    fn mass_totals_domain_area() {
        let mesh = build_structured_mesh(&DomainSpec::unit_square_dirichlet(), 0.25, 1).unwrap();
        let m = assemble_mass(&mesh).unwrap();
        assert!((m.sum() - 1.0).abs() < 1e-12);
        let mesh2 = build_structured_mesh(&DomainSpec::l_shape_mixed(), 0.25, 2).unwrap();
        assert!((assemble_mass(&mesh2).unwrap().sum() - 0.75).abs() < 1e-12);
        assert!(m.clone().cholesky().is_some());
    }

    #[test]
    fn single_triangle_mass_matches_closed_form() {
        let domain = DomainSpec::unit_square_dirichlet();
        let mesh = TriMesh {
            domain,
            nodes: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles: vec![vec![0, 1, 2]],
            node_tags: vec![crate::geometry::NodeTag::Dirichlet; 3],
            order: 1,
        };
        let m = assemble_mass(&mesh).unwrap();
        // Exact: ∫ λ_i λ_j = area (1 + δ_ij) / 12
        let area = 0.5;
        for i in 0..3 {
            for j in 0..3 {
                let exact = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                assert!((m[(i, j)] - exact).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn element_order_does_not_change_solution() {
        let f = |p: Point| (p[0] * 3.0).sin() + p[1];
        let g = |p: Point| p[0] * p[1];
        let mesh = build_structured_mesh(&DomainSpec::unit_square_dirichlet(), 0.25, 2).unwrap();
        let mut shuffled = mesh.clone();
        shuffled.triangles.reverse();
        shuffled.triangles.swap(3, 17);
        let a = solve(&assemble_poisson(&mesh, 1.0, &f, &g, None).unwrap());
        let b = solve(&assemble_poisson(&shuffled, 1.0, &f, &g, None).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
