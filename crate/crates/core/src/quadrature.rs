//! Quadrature rules on triangles (barycentric form) and on segments.

use thiserror::Error;

use crate::mesh::Point;

#[derive(Debug, Error, PartialEq)]
pub enum QuadratureError {
    #[error("no triangle rule of degree {0} (supported degrees: 1 to 5)")]
    UnsupportedDegree(u32),
}

/// A rule `sum_q w_q f(x_q)` approximating `(1/|T|) int_T f`; weights sum to 1.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    degree: u32,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl TriangleRule {
    /// Smallest built-in rule exact for polynomials of the given degree.
    /// All nodes lie strictly inside the element.
    pub fn with_degree(degree: u32) -> Result<TriangleRule, QuadratureError> {
        match degree {
            1 => Ok(TriangleRule {
                degree: 1,
                points: vec![[1.0 / 3.0; 3]],
                weights: vec![1.0],
            }),
            2 => Ok(TriangleRule {
                degree: 2,
                points: vec![
                    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
                    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
                    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
                ],
                weights: vec![1.0 / 3.0; 3],
            }),
            3..=5 => Ok(Self::seven_point()),
            d => Err(QuadratureError::UnsupportedDegree(d)),
        }
    }

    /// The 7-point degree-5 rule (Radon).
    pub fn seven_point() -> TriangleRule {
        let s15 = 15f64.sqrt();
        let a1 = (9.0 - 2.0 * s15) / 21.0;
        let b1 = (6.0 + s15) / 21.0;
        let a2 = (9.0 + 2.0 * s15) / 21.0;
        let b2 = (6.0 - s15) / 21.0;
        let w1 = (155.0 + s15) / 1200.0;
        let w2 = (155.0 - s15) / 1200.0;
        TriangleRule {
            degree: 5,
            points: vec![
                [1.0 / 3.0; 3],
                [a1, b1, b1],
                [b1, a1, b1],
                [b1, b1, a1],
                [a2, b2, b2],
                [b2, a2, b2],
                [b2, b2, a2],
            ],
            weights: vec![9.0 / 40.0, w1, w1, w1, w2, w2, w2],
        }
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn barycentric(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Physical nodes and weights (scaled by `area`) on the given triangle.
    pub fn nodes<'a>(&'a self, tri: &'a [Point; 3], area: f64) -> impl Iterator<Item = (Point, [f64; 3], f64)> + 'a {
        self.points.iter().zip(&self.weights).map(move |(l, &w)| {
            let x = l[0] * tri[0][0] + l[1] * tri[1][0] + l[2] * tri[2][0];
            let y = l[0] * tri[0][1] + l[1] * tri[1][1] + l[2] * tri[2][1];
            ([x, y], *l, w * area)
        })
    }
}

/// Three-point Gauss rule on `[0, 1]`: (parameter, weight) pairs, weights sum to 1.
pub fn gauss3_unit() -> [(f64, f64); 3] {
    let d = 0.5 * (0.6f64).sqrt();
    [(0.5 - d, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + d, 5.0 / 18.0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate_monomial(rule: &TriangleRule, p: i32, q: i32) -> f64 {
        // reference triangle (0,0),(1,0),(0,1) with area 1/2
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        rule.nodes(&tri, 0.5)
            .map(|(x, _, w)| w * x[0].powi(p) * x[1].powi(q))
            .sum()
    }

    fn factorial(n: i32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn exact_up_to_degree() {
        for d in 1..=5 {
            let rule = TriangleRule::with_degree(d).unwrap();
            assert!((rule.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
            for p in 0..=d as i32 {
                for q in 0..=(d as i32 - p) {
                    // int_T x^p y^q = p! q! / (p+q+2)!
                    let exact = factorial(p) * factorial(q) / factorial(p + q + 2);
                    let got = integrate_monomial(&rule, p, q);
                    assert!((got - exact).abs() < 1e-15, "deg {d}: x^{p} y^{q}");
                }
            }
        }
    }

    #[test]
    fn nodes_are_interior() {
        let rule = TriangleRule::seven_point();
        assert!(rule.barycentric().iter().flatten().all(|&l| l > 0.0 && l < 1.0));
    }

    #[test]
    fn unsupported_degree() {
        assert_eq!(
            TriangleRule::with_degree(0).unwrap_err(),
            QuadratureError::UnsupportedDegree(0)
        );
        assert!(TriangleRule::with_degree(6).is_err());
    }

    #[test]
    fn gauss3_integrates_quintics() {
        let got: f64 = gauss3_unit().iter().map(|&(s, w)| w * s.powi(5)).sum();
        assert!((got - 1.0 / 6.0).abs() < 1e-15);
    }
}
