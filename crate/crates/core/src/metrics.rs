//! Error measures: root mean square, maximum relative and element-wise
//! least square error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{ElementMap, FemField, QuadratureRule};
use crate::geometry::{Point, TriMesh};
use crate::rbf::Coefficients;

pub const MRE_FLOOR: f64 = 1e-6;
pub const COVERAGE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub lse: f64,
    pub rmse: f64,
    pub mre: f64,
    pub condition_number: f64,
    pub runtime_s: f64,
    pub shape_parameter: Option<f64>,
    pub tps_beta: Option<u32>,
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

pub fn rmse(numeric: &[f64], exact: &[f64]) -> Result<f64> {
    check_lengths(numeric, exact)?;
    let s: f64 = numeric.iter().zip(exact).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / numeric.len() as f64).sqrt())
}

/// `max_i |numeric_i − exact_i| / max(|exact_i|, floor)`.
pub fn max_relative_error(numeric: &[f64], exact: &[f64], floor: f64) -> Result<f64> {
    check_lengths(numeric, exact)?;
    Ok(numeric
        .iter()
        .zip(exact)
        .map(|(a, b)| (a - b).abs() / b.abs().max(floor))
        .fold(0.0, f64::max))
}

/// How per-element quadrature values are combined into the least square
/// error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LseMode {
    /// `√(Σ_e Σ_k w_k |J_e| (u_A − u)²)`: the L2 norm of the error.
    #[default]
    SquaredDifference,
    /// `√(Σ_e (V_e^num − V_e^exact)²)` with `V_e = Σ_k w_k |J_e| u(x_k)`.
    VolumeDifference,
}

/// A numerical solution that can be sampled inside mesh elements.
#[derive(Clone, Copy)]
pub enum NumericSurface<'a> {
    /// Finite element field on the same triangulation as the error mesh.
    Fem(FemField<'a>),
    Rbf(&'a Coefficients),
    Function(&'a dyn Fn(Point) -> f64),
}

impl NumericSurface<'_> {
    fn value(&self, e: usize, xi: Point, x: Point) -> f64 {
        match self {
            NumericSurface::Fem(f) => f.value_in_element(e, xi),
            NumericSurface::Rbf(c) => c.value_at(x),
            NumericSurface::Function(f) => f(x),
        }
    }
}

/// Least square error over the elements of `mesh` (real elements for FEM,
/// imaginary elements for a node cloud).
pub fn lse(
    mesh: &TriMesh,
    numeric: NumericSurface,
    exact: &dyn Fn(Point) -> f64,
    rule: &QuadratureRule,
    mode: LseMode,
) -> Result<f64> {
    if rule.degree < 2 {
        return Err(Error::UnsupportedDegree(rule.degree));
    }
    let covered = mesh.total_area();
    let expected = mesh.domain.area();
    if (covered - expected).abs() > COVERAGE_TOL {
        return Err(Error::UncoveredDomain { covered, expected });
    }
    if let NumericSurface::Fem(f) = numeric {
        if f.mesh.n_triangles() != mesh.n_triangles() {
            return Err(Error::MeshMismatch(format!(
                "field has {} elements, error mesh has {}",
                f.mesh.n_triangles(),
                mesh.n_triangles()
            )));
        }
    }
    let mut total = 0.0;
    for e in 0..mesh.n_triangles() {
        let map = ElementMap::new(mesh.vertices(e));
        let jw = map.det.abs();
        let (mut v_num, mut v_ex, mut sq) = (0.0, 0.0, 0.0);
        for (xi, w) in rule.iter() {
            let x = map.to_physical(xi);
            let (a, b) = (numeric.value(e, xi, x), exact(x));
            v_num += w * jw * a;
            v_ex += w * jw * b;
            sq += w * jw * (a - b) * (a - b);
        }
        total += match mode {
            LseMode::SquaredDifference => sq,
            LseMode::VolumeDifference => (v_num - v_ex).powi(2),
        };
    }
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::quad_rule;
    use crate::geometry::{build_node_cloud, build_structured_mesh, triangulate_cloud, DomainSpec};
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let r = rmse(&[1.1, 2.1, 3.1], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 0.1).abs() < 1e-15);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn mre_examples() {
        assert_eq!(max_relative_error(&[1.0, -3.0], &[1.0, -3.0], MRE_FLOOR).unwrap(), 0.0);
        assert!((max_relative_error(&[2.2], &[2.0], MRE_FLOOR).unwrap() - 0.1).abs() < 1e-12);
        assert!((max_relative_error(&[1e-6], &[0.0], 1e-12).unwrap() - 1e6).abs() < 1e-6);
        assert!(max_relative_error(&[], &[], MRE_FLOOR).is_err());
    }

    fn quarter_cloud_mesh() -> TriMesh {
        triangulate_cloud(&build_node_cloud(&DomainSpec::unit_square_dirichlet(), 0.25).unwrap()).unwrap()
    }

    #[test]
    fn exact_match_is_zero() {
        let mesh = quarter_cloud_mesh();
        let u = |p: Point| p[0].sin() * p[1];
        let rule = quad_rule(5).unwrap();
        for mode in [LseMode::SquaredDifference, LseMode::VolumeDifference] {
            assert_eq!(lse(&mesh, NumericSurface::Function(&u), &u, &rule, mode).unwrap(), 0.0);
        }
    }

    #[test]
    fn constant_offset_closed_form() {
        let mesh = quarter_cloud_mesh();
        assert_eq!(mesh.n_triangles(), 32);
        let u = |p: Point| p[0] * p[1];
        let shifted = |p: Point| u(p) + 0.01;
        let rule = quad_rule(5).unwrap();
        let v = lse(&mesh, NumericSurface::Function(&shifted), &u, &rule, LseMode::VolumeDifference).unwrap();
        assert!((v - 0.01 / 32f64.sqrt()).abs() <= 1e-12);
        // L2 norm of a constant offset over the unit square is the offset.
        let s = lse(&mesh, NumericSurface::Function(&shifted), &u, &rule, LseMode::SquaredDifference).unwrap();
        assert!((s - 0.01).abs() <= 1e-12);
    }

    #[test]
    fn fem_field_surface_matches_interpolated_function() {
        let mesh = build_structured_mesh(&DomainSpec::unit_square_dirichlet(), 0.25, 2).unwrap();
        // a quadratic is represented exactly by its P2 interpolant
        let u = |p: Point| p[0] * p[0] - 2.0 * p[0] * p[1] + 0.5;
        let values: Vec<f64> = mesh.nodes.iter().map(|&p| u(p)).collect();
        let field = FemField { mesh: &mesh, values: &values };
        let rule = quad_rule(5).unwrap();
        let e = lse(&mesh, NumericSurface::Fem(field), &u, &rule, LseMode::SquaredDifference).unwrap();
        assert!(e < 1e-14);
    }

    #[test]
    fn uncovered_domain_rejected() {
        let mut mesh = quarter_cloud_mesh();
        mesh.triangles.pop();
        let u = |_: Point| 0.0;
        let rule = quad_rule(5).unwrap();
        let r = lse(&mesh, NumericSurface::Function(&u), &u, &rule, LseMode::default());
        assert!(matches!(r, Err(Error::UncoveredDomain { .. })));
        let r = lse(&quarter_cloud_mesh(), NumericSurface::Function(&u), &u, &quad_rule(1).unwrap(), LseMode::default());
        assert!(r.is_err());
    }

    proptest! {
        #[test]
        fn lse_is_linear_in_offset(delta in -1.0f64..1.0) {
            let mesh = quarter_cloud_mesh();
            let u = |p: Point| p[0] + p[1] * p[1];
            let shifted = move |p: Point| u(p) + delta;
            let rule = quad_rule(5).unwrap();
            let v = lse(&mesh, NumericSurface::Function(&shifted), &u, &rule, LseMode::VolumeDifference).unwrap();
            prop_assert!((v - delta.abs() / 32f64.sqrt()).abs() < 1e-12);
        }

        #[test]
        fn metrics_permutation_invariant(
            pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..30),
            rot in 0usize..29,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
            let k = rot % a.len();
            let (mut pa, mut pb) = (a.clone(), b.clone());
            pa.rotate_left(k);
            pb.rotate_left(k);
            prop_assert!((rmse(&a, &b).unwrap() - rmse(&pa, &pb).unwrap()).abs() < 1e-12);
            prop_assert_eq!(
                max_relative_error(&a, &b, MRE_FLOOR).unwrap(),
                max_relative_error(&pa, &pb, MRE_FLOOR).unwrap()
            );
        }
    }
}
