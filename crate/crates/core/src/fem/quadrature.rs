use crate::error::{Error, Result};
use crate::geometry::Point;

/// Symmetric rule on the reference triangle {ξ ≥ 0, η ≥ 0, ξ + η ≤ 1}.
/// Weights sum to 1/2, the reference area.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    /// Highest total polynomial degree integrated exactly.
    pub degree: usize,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Point, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Orbit of barycentric coordinates (a, b, b) under permutation, returned as
/// (ξ, η) = (λ1, λ2).
fn orbit3(a: f64, b: f64) -> [Point; 3] {
    [[b, b], [a, b], [b, a]]
}

pub fn quad_rule(degree: usize) -> Result<QuadratureRule> {
    let (degree, points, weights) = match degree {
        1 => (1, vec![[1.0 / 3.0, 1.0 / 3.0]], vec![0.5]),
        2 => {
            let pts = orbit3(2.0 / 3.0, 1.0 / 6.0).to_vec();
            (2, pts, vec![1.0 / 6.0; 3])
        }
        3 | 4 => {
            // Dunavant, 6 points.
            let (a1, w1) = (0.445_948_490_915_965, 0.223_381_589_678_011);
            let (a2, w2) = (0.091_576_213_509_771, 0.109_951_743_655_322);
            let mut pts = orbit3(1.0 - 2.0 * a1, a1).to_vec();
            pts.extend(orbit3(1.0 - 2.0 * a2, a2));
            let mut w = vec![0.5 * w1; 3];
            w.extend([0.5 * w2; 3]);
            (4, pts, w)
        }
        5 => {
            // Radon's 7-point rule.
            let s = 15f64.sqrt();
            let b1 = (6.0 + s) / 21.0;
            let b2 = (6.0 - s) / 21.0;
            let mut pts = vec![[1.0 / 3.0, 1.0 / 3.0]];
            pts.extend(orbit3(1.0 - 2.0 * b1, b1));
            pts.extend(orbit3(1.0 - 2.0 * b2, b2));
            let mut w = vec![0.5 * 9.0 / 40.0];
            w.extend([0.5 * (155.0 + s) / 1200.0; 3]);
            w.extend([0.5 * (155.0 - s) / 1200.0; 3]);
            (5, pts, w)
        }
        d => return Err(Error::UnsupportedDegree(d)),
    };
    Ok(QuadratureRule {
        degree,
        points,
        weights,
    })
}

/// Three-point Gauss–Legendre rule on [0, 1], used along boundary edges.
pub fn edge_rule() -> [(f64, f64); 3] {
    let d = 0.5 * (0.6f64).sqrt();
    [(0.5 - d, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + d, 5.0 / 18.0)]
}
