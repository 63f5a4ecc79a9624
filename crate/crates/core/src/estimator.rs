//! Residual a posteriori estimator of the Kacanov-linearized problem.
//!
//! For each element `T` with `H_T = |T|^{1/2}`:
//!
//! ```text
//! eta(T)^2 = H_T^2 ||R||_T^2 + H_T sum_{S interior side of T} ||J||_S^2
//! R = -f - grad_x alpha . grad u_curr
//! J = 1/2 [alpha_T grad u_curr|_T . n_T + alpha_T' grad u_curr|_T' . n_T']
//! ```
//!
//! The weight `alpha` is evaluated at `|grad u_prev|^2`; boundary sides carry
//! no jump.

use std::io::Write;

use thiserror::Error;

use crate::assembly::{apply_form, load_functional, AssemblyError};
use crate::mesh::{Mesh, Point, Refinement};
use crate::problems::Problem;
use crate::quadrature::{gauss3_unit, QuadratureError, TriangleRule};
use crate::space::{gradients, h1_seminorm_on, prolong, P1Function, SpaceError};
use crate::sum;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("right-hand side f is not finite at a quadrature node of element {0}")]
    NonFiniteLoad(usize),
    #[error("coefficient alpha is not finite on element {0}")]
    NonFiniteCoefficient(usize),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalEstimates {
    pub eta: Vec<f64>,
    pub global: f64,
}

impl LocalEstimates {
    pub fn from_local(eta: Vec<f64>) -> Self {
        let global = sum::compensated(eta.iter().map(|e| e * e)).sqrt();
        LocalEstimates { eta, global }
    }

    pub fn max(&self) -> f64 {
        self.eta.iter().copied().fold(0.0, f64::max)
    }

    /// One `element_index eta_value` line per element.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (t, e) in self.eta.iter().enumerate() {
            writeln!(w, "{t} {e:.16e}")?;
        }
        Ok(())
    }
}

/// Outward unit normal and length of local edge `i` of a counter-clockwise
/// triangle.
fn edge_normal(tri: &[Point; 3], i: usize) -> ([f64; 2], f64) {
    let a = tri[(i + 1) % 3];
    let b = tri[(i + 2) % 3];
    let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
    let len = ex.hypot(ey);
    ([ey / len, -ex / len], len)
}

pub fn estimate(
    mesh: &Mesh,
    u_prev: &P1Function,
    u_curr: &P1Function,
    problem: &Problem,
    quad_degree: u32,
) -> Result<LocalEstimates, EstimatorError> {
    let rule = TriangleRule::with_degree(quad_degree)?;
    let grad_prev = gradients(mesh, u_prev)?;
    let grad_curr = gradients(mesh, u_curr)?;
    let alpha = problem.alpha.as_ref();
    let x_dependent = alpha.depends_on_x();
    let s: Vec<f64> = grad_prev.iter().map(|g| g[0] * g[0] + g[1] * g[1]).collect();

    // Elementwise flux for the x-independent case.
    let mut flux = Vec::with_capacity(mesh.num_elements());
    for (t, g) in grad_curr.iter().enumerate() {
        let a = alpha.value(mesh.point(mesh.elements()[t].v[0]), s[t]);
        if !a.is_finite() {
            return Err(EstimatorError::NonFiniteCoefficient(t));
        }
        flux.push([a * g[0], a * g[1]]);
    }

    let mut eta = Vec::with_capacity(mesh.num_elements());
    for (t, el) in mesh.elements().iter().enumerate() {
        let tri = mesh.element_points(t);
        let area = mesh.area(t);
        let h = area.sqrt();
        let g = grad_curr[t];

        let mut interior = 0.0;
        for (x, _, w) in rule.nodes(&tri, area) {
            let mut r = -(problem.f)(x);
            if x_dependent {
                let dx = alpha.spatial_gradient(x, s[t]);
                r -= dx[0] * g[0] + dx[1] * g[1];
            }
            if !r.is_finite() {
                return Err(EstimatorError::NonFiniteLoad(t));
            }
            interior += w * r * r;
        }

        let mut jumps = 0.0;
        for i in 0..3 {
            let Some(other) = el.neighbor[i] else { continue };
            let (n, len) = edge_normal(&tri, i);
            if x_dependent {
                let a = tri[(i + 1) % 3];
                let b = tri[(i + 2) % 3];
                let go = grad_curr[other];
                for (p, w) in gauss3_unit() {
                    let x = [a[0] + p * (b[0] - a[0]), a[1] + p * (b[1] - a[1])];
                    let at = alpha.value(x, s[t]);
                    let ao = alpha.value(x, s[other]);
                    let j = 0.5 * ((at * g[0] - ao * go[0]) * n[0] + (at * g[1] - ao * go[1]) * n[1]);
                    jumps += w * len * j * j;
                }
            } else {
                let (ft, fo) = (flux[t], flux[other]);
                let j = 0.5 * ((ft[0] - fo[0]) * n[0] + (ft[1] - fo[1]) * n[1]);
                jumps += len * j * j;
            }
        }
        eta.push((h * h * interior + h * jumps).sqrt());
    }
    Ok(LocalEstimates::from_local(eta))
}

/// `<R(u_curr), v> = a(u_prev; u_curr, v) - L(v)` for `v` living on a
/// refinement of `mesh`; `u_prev` and `u_curr` are prolonged first.
#[allow(clippy::too_many_arguments)]
pub fn residual_pairing(
    mesh: &Mesh,
    fine: &Mesh,
    map: &Refinement,
    u_prev: &P1Function,
    u_curr: &P1Function,
    problem: &Problem,
    v: &P1Function,
    quad_degree: u32,
) -> Result<f64, EstimatorError> {
    let up = prolong(u_prev, mesh, fine, map)?;
    let uc = prolong(u_curr, mesh, fine, map)?;
    Ok(apply_form(fine, &up, &uc, v, problem, quad_degree)? - load_functional(fine, v, problem, quad_degree)?)
}

/// `max_T eta(T) / (||grad u_curr||_{patch(T)} + ||f||_T)`, the quantity whose
/// boundedness under refinement expresses estimator stability.
pub fn stability_ratio(
    mesh: &Mesh,
    est: &LocalEstimates,
    u_curr: &P1Function,
    problem: &Problem,
    quad_degree: u32,
) -> Result<f64, EstimatorError> {
    let rule = TriangleRule::with_degree(quad_degree)?;
    let grads = gradients(mesh, u_curr)?;
    let mut worst = 0.0f64;
    for t in 0..mesh.num_elements() {
        let tri = mesh.element_points(t);
        let f_norm = rule
            .nodes(&tri, mesh.area(t))
            .map(|(x, _, w)| w * (problem.f)(x).powi(2))
            .sum::<f64>()
            .sqrt();
        let denom = h1_seminorm_on(mesh, &grads, mesh.patch(t)) + f_norm;
        if denom > 0.0 {
            worst = worst.max(est.eta[t] / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_lshape_mesh, make_square_mesh};
    use crate::problems::catalog;
    use crate::space::interpolate;
    use std::sync::Arc;

    fn poisson_with(f: f64) -> Problem {
        let mut p = catalog("poisson").unwrap();
        p.f = Arc::new(move |_| f);
        p
    }

    #[test]
    fn zero_data_zero_estimate() {
        let mesh = make_lshape_mesh();
        let z = P1Function::zeros(&mesh);
        let est = estimate(&mesh, &z, &z, &poisson_with(0.0), 5).unwrap();
        assert!(est.eta.iter().all(|&e| e == 0.0));
        assert_eq!(est.global, 0.0);
    }

    #[test]
    fn single_element_interior_term() {
        let mesh = Mesh::new(&[[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]], &[[0, 1, 2]]).unwrap();
        let z = P1Function::zeros(&mesh);
        let est = estimate(&mesh, &z, &z, &poisson_with(1.0), 5).unwrap();
        let area = 1.0;
        assert!((est.eta[0].powi(2) - area * area).abs() < 1e-14);
    }

    #[test]
    fn jump_of_a_kink() {
        // u = |x| on the square mesh has gradient jumps across x = 0.
        let mesh = make_square_mesh();
        let u = interpolate(&mesh, |p| p[0].abs()).unwrap();
        let est = estimate(&mesh, &u, &u, &poisson_with(0.0), 5).unwrap();
        assert!(est.eta.iter().all(|e| e.is_finite() && *e >= 0.0));
        let sq: f64 = est.eta.iter().map(|e| e * e).sum();
        assert!((est.global.powi(2) - sq).abs() <= 1e-12 * sq);
        // An affine function has no jumps.
        let v = interpolate(&mesh, |p| 3.0 * p[0] - p[1]).unwrap();
        let est = estimate(&mesh, &v, &v, &poisson_with(0.0), 5).unwrap();
        assert!(est.global < 1e-14);
    }

    #[test]
    fn dump_format() {
        let est = LocalEstimates::from_local(vec![0.5, 2.0]);
        let mut buf = Vec::new();
        est.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("1 2.0"));
    }

    #[test]
    fn rejects_functions_from_other_meshes() {
        let mesh = make_lshape_mesh();
        let other = make_lshape_mesh();
        let z = P1Function::zeros(&other);
        assert!(matches!(
            estimate(&mesh, &z, &z, &poisson_with(1.0), 5),
            Err(EstimatorError::Space(SpaceError::MeshMismatch))
        ));
    }
}
