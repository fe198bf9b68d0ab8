use crate::error::{Error, Result};
use crate::geometry::Point;

const REFERENCE_TOL: f64 = 1e-12;

/// Lagrange basis of order 1 (vertices) or 2 (vertices, then midpoints of
/// edges 0-1, 1-2, 2-0) on the unit reference triangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReferenceElement {
    pub order: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeValues {
    pub values: Vec<f64>,
    /// Gradients with respect to (ξ, η).
    pub grads: Vec<[f64; 2]>,
}

impl ReferenceElement {
    pub fn new(order: usize) -> Result<Self> {
        match order {
            1 | 2 => Ok(Self { order }),
            o => Err(Error::InvalidCase(format!("element order {o} not supported"))),
        }
    }

    pub fn n_nodes(&self) -> usize {
        if self.order == 1 {
            3
        } else {
            6
        }
    }

    /// Reference coordinates of the element nodes.
    pub fn nodes(&self) -> Vec<Point> {
        let mut n = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        if self.order == 2 {
            n.extend([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]);
        }
        n
    }

    pub fn shape_eval(&self, xi: Point) -> Result<ShapeValues> {
        let [x, y] = xi;
        if x < -REFERENCE_TOL || y < -REFERENCE_TOL || x + y > 1.0 + REFERENCE_TOL {
            return Err(Error::OutsideReferenceElement(xi));
        }
        Ok(self.eval(xi))
    }

    /// Unchecked evaluation.
    pub(crate) fn eval(&self, [x, y]: Point) -> ShapeValues {
        let l0 = 1.0 - x - y;
        match self.order {
            1 => ShapeValues {
                values: vec![l0, x, y],
                grads: vec![[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]],
            },
            _ => ShapeValues {
                values: vec![
                    l0 * (2.0 * l0 - 1.0),
                    x * (2.0 * x - 1.0),
                    y * (2.0 * y - 1.0),
                    4.0 * l0 * x,
                    4.0 * x * y,
                    4.0 * y * l0,
                ],
                grads: vec![
                    [1.0 - 4.0 * l0, 1.0 - 4.0 * l0],
                    [4.0 * x - 1.0, 0.0],
                    [0.0, 4.0 * y - 1.0],
                    [4.0 * (l0 - x), -4.0 * x],
                    [4.0 * y, 4.0 * x],
                    [-4.0 * y, 4.0 * (l0 - y)],
                ],
            },
        }
    }
}

/// Affine map from the reference triangle onto a physical triangle.
#[derive(Clone, Copy, Debug)]
pub struct ElementMap {
    origin: Point,
    jac: [[f64; 2]; 2],
    inv: [[f64; 2]; 2],
    pub det: f64,
}

impl ElementMap {
    pub fn new([a, b, c]: [Point; 3]) -> Self {
        let jac = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let inv = [
            [jac[1][1] / det, -jac[0][1] / det],
            [-jac[1][0] / det, jac[0][0] / det],
        ];
        Self { origin: a, jac, inv, det }
    }

    pub fn to_physical(&self, xi: Point) -> Point {
        [
            self.origin[0] + self.jac[0][0] * xi[0] + self.jac[0][1] * xi[1],
            self.origin[1] + self.jac[1][0] * xi[0] + self.jac[1][1] * xi[1],
        ]
    }

    pub fn to_reference(&self, x: Point) -> Point {
        let d = [x[0] - self.origin[0], x[1] - self.origin[1]];
        [
            self.inv[0][0] * d[0] + self.inv[0][1] * d[1],
            self.inv[1][0] * d[0] + self.inv[1][1] * d[1],
        ]
    }

    /// Physical gradient from a reference gradient: J⁻ᵀ ∇̂.
    pub fn grad(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv[0][0] * g[0] + self.inv[1][0] * g[1],
            self.inv[0][1] * g[0] + self.inv[1][1] * g[1],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLES: [Point; 5] = [[0.1, 0.2], [0.3, 0.3], [0.05, 0.9], [0.6, 0.15], [0.25, 0.5]];

    #[test]
    fn p1_centroid() {
        let s = ReferenceElement::new(1).unwrap().shape_eval([1.0 / 3.0, 1.0 / 3.0]).unwrap();
        for v in s.values {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn p2_nodal_basis() {
        let el = ReferenceElement::new(2).unwrap();
        let s = el.shape_eval([0.0, 0.0]).unwrap();
        assert_eq!(s.values, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        for (b, node) in el.nodes().into_iter().enumerate() {
            let s = el.shape_eval(node).unwrap();
            for (a, v) in s.values.iter().enumerate() {
                assert!((v - if a == b { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        for order in [1, 2] {
            let el = ReferenceElement::new(order).unwrap();
            for p in SAMPLES {
                let s = el.shape_eval(p).unwrap();
                assert!((s.values.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                let gsum = s.grads.iter().fold([0.0, 0.0], |acc, g| [acc[0] + g[0], acc[1] + g[1]]);
                assert!(gsum[0].abs() < 1e-14 && gsum[1].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-6;
        for order in [1, 2] {
            let el = ReferenceElement::new(order).unwrap();
            for p in SAMPLES {
                let s = el.eval(p);
                let xp = el.eval([p[0] + h, p[1]]).values;
                let xm = el.eval([p[0] - h, p[1]]).values;
                let yp = el.eval([p[0], p[1] + h]).values;
                let ym = el.eval([p[0], p[1] - h]).values;
                for a in 0..el.n_nodes() {
                    let fx = (xp[a] - xm[a]) / (2.0 * h);
                    let fy = (yp[a] - ym[a]) / (2.0 * h);
                    assert!((fx - s.grads[a][0]).abs() < 1e-6);
                    assert!((fy - s.grads[a][1]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn outside_reference_rejected() {
        let el = ReferenceElement::new(1).unwrap();
        assert!(matches!(el.shape_eval([0.8, 0.8]), Err(Error::OutsideReferenceElement(_))));
        assert!(matches!(el.shape_eval([-0.1, 0.2]), Err(Error::OutsideReferenceElement(_))));
    }

    #[test]
    fn map_round_trip() {
        let m = ElementMap::new([[0.25, 0.0], [0.5, 0.0], [0.5, 0.25]]);
        assert!((m.det - 0.0625).abs() < 1e-15);
        let x = m.to_physical([0.2, 0.3]);
        let back = m.to_reference(x);
        assert!((back[0] - 0.2).abs() < 1e-14 && (back[1] - 0.3).abs() < 1e-14);
    }
}
