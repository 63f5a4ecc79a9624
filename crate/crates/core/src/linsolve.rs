//! Jacobi-preconditioned conjugate gradients and the Kacanov step built on it.

use thiserror::Error;

use crate::assembly::{assemble, AssemblyError, LinearSystem, SparseSymMatrix};
use crate::mesh::Mesh;
use crate::problems::Problem;
use crate::space::{h1_seminorm, P1Function, SpaceError};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("dimension mismatch: matrix {matrix}, vector {vector}")]
    Dimension { matrix: usize, vector: usize },
    #[error("non-positive diagonal entry at row {0}; matrix is not SPD")]
    NotPositiveDefinite(usize),
    #[error("CG did not converge: relative residual {:.3e} after {} iterations", .0.final_relative_residual, .0.iterations)]
    NotConverged(SolveReport),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
}

/// Parameters of one linear solve inside a Kacanov step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSettings {
    pub tol: f64,
    /// `None` means `10 * dofs`.
    pub max_iter: Option<usize>,
    pub quad_degree: u32,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings {
            tol: 1e-10,
            max_iter: None,
            quad_degree: 5,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned CG on `A x = b` from the initial guess `x`. The stopping
/// test uses the recomputed true residual `||b - A x|| / ||b||`.
pub fn pcg(
    matrix: &SparseSymMatrix,
    rhs: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport, SolveError> {
    let n = matrix.dim();
    for len in [rhs.len(), x.len()] {
        if len != n {
            return Err(SolveError::Dimension { matrix: n, vector: len });
        }
    }
    let b_norm = dot(rhs, rhs).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport {
            iterations: 0,
            final_relative_residual: 0.0,
            converged: true,
        });
    }
    let inv_diag = matrix
        .diagonal()
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if d > 0.0 {
                Ok(1.0 / d)
            } else {
                Err(SolveError::NotPositiveDefinite(i))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut ax = vec![0.0; n];
    let true_residual = |x: &[f64], ax: &mut [f64]| {
        matrix.mul_into(x, ax);
        rhs.iter()
            .zip(ax.iter())
            .map(|(b, a)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
            / b_norm
    };

    let mut r: Vec<f64> = {
        matrix.mul_into(x, &mut ax);
        rhs.iter().zip(&ax).map(|(b, a)| b - a).collect()
    };
    let mut rel = dot(&r, &r).sqrt() / b_norm;
    if rel <= tol {
        return Ok(SolveReport {
            iterations: 0,
            final_relative_residual: rel,
            converged: true,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        matrix.mul_into(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            break;
        }
        let step = rz / pq;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * q[i];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= tol {
            // Guard against drift of the recursively updated residual.
            rel = true_residual(x, &mut ax);
            if rel <= tol {
                return Ok(SolveReport {
                    iterations,
                    final_relative_residual: rel,
                    converged: true,
                });
            }
            for i in 0..n {
                r[i] = rhs[i] - ax[i];
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = true_residual(x, &mut ax);
    Ok(SolveReport {
        iterations,
        final_relative_residual: rel,
        converged: rel <= tol,
    })
}

/// Solve the reduced system from a zero initial guess.
pub fn cg_solve(system: &LinearSystem, tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport), SolveError> {
    let mut x = vec![0.0; system.rhs.len()];
    let report = pcg(&system.matrix, &system.rhs, &mut x, tol, max_iter)?;
    Ok((x, report))
}

/// One Kacanov step: freeze the weight at `u_prev`, solve, and return the
/// full nodal function (lift plus free-dof correction). The CG iteration
/// starts from the free values of `u_prev`.
pub fn kacanov_step(
    mesh: &Mesh,
    u_prev: &P1Function,
    problem: &Problem,
    settings: &SolveSettings,
) -> Result<(P1Function, SolveReport), SolveError> {
    u_prev.check_mesh(mesh)?;
    let system = assemble(mesh, u_prev, problem, settings.quad_degree)?;
    let mut x = system.dofs.restrict(u_prev.coeffs());
    let max_iter = settings.max_iter.unwrap_or(10 * x.len().max(1));
    let report = pcg(&system.matrix, &system.rhs, &mut x, settings.tol, max_iter)?;
    if !report.converged {
        return Err(SolveError::NotConverged(report));
    }
    Ok((system.expand(mesh, &x)?, report))
}

/// Repeated Kacanov steps on a fixed mesh, returning all iterates including
/// the start. Used to study the fixed-mesh contraction, not by the adaptive
/// loop.
pub fn kacanov_iterate(
    mesh: &Mesh,
    start: &P1Function,
    problem: &Problem,
    steps: usize,
    settings: &SolveSettings,
) -> Result<Vec<P1Function>, SolveError> {
    let mut iterates = vec![start.clone()];
    for _ in 0..steps {
        let (next, _) = kacanov_step(mesh, iterates.last().unwrap(), problem, settings)?;
        iterates.push(next);
    }
    Ok(iterates)
}

/// `||grad (a - b)||` for two functions on the same mesh.
pub fn h1_distance(mesh: &Mesh, a: &P1Function, b: &P1Function) -> Result<f64, SpaceError> {
    h1_seminorm(mesh, &a.axpy(-1.0, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::energy;
    use crate::mesh::make_lshape_mesh;
    use crate::problems::catalog;

    #[test]
    fn one_by_one() {
        let m = SparseSymMatrix::from_triplets(1, &[(0, 0, 2.0)]);
        let mut x = [0.0];
        let rep = pcg(&m, &[4.0], &mut x, 1e-12, 10).unwrap();
        assert_eq!(x[0], 2.0);
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
    }

    #[test]
    fn zero_rhs() {
        let m = SparseSymMatrix::from_triplets(2, &[(0, 0, 2.0), (1, 1, 3.0)]);
        let mut x = [5.0, -1.0];
        let rep = pcg(&m, &[0.0, 0.0], &mut x, 1e-12, 10).unwrap();
        assert_eq!(x, [0.0, 0.0]);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn iteration_cap_reports_failure() {
        let trip: Vec<_> = (0..50)
            .flat_map(|i| {
                let mut v = vec![(i, i, 2.0)];
                if i > 0 {
                    v.push((i, i - 1, -1.0));
                    v.push((i - 1, i, -1.0));
                }
                v
            })
            .collect();
        let m = SparseSymMatrix::from_triplets(50, &trip);
        let mut x = vec![0.0; 50];
        let rep = pcg(&m, &vec![1.0; 50], &mut x, 1e-12, 3).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
    }

    #[test]
    fn rejects_non_spd_diagonal() {
        let m = SparseSymMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 1, -1.0)]);
        let mut x = [0.0; 2];
        assert!(matches!(
            pcg(&m, &[1.0, 1.0], &mut x, 1e-10, 10),
            Err(SolveError::NotPositiveDefinite(1))
        ));
    }

    #[test]
    fn linear_problem_is_a_fixed_point() {
        let (mesh, _) = make_lshape_mesh().uniform_refine(4).unwrap();
        let p = catalog("poisson").unwrap();
        let s = SolveSettings::default();
        let (u1, _) = kacanov_step(&mesh, &P1Function::zeros(&mesh), &p, &s).unwrap();
        let (u2, _) = kacanov_step(&mesh, &u1, &p, &s).unwrap();
        assert!(h1_distance(&mesh, &u1, &u2).unwrap() < 1e-9);
    }

    #[test]
    fn fixed_mesh_contraction_and_energy_decrease() {
        let (mesh, _) = make_lshape_mesh().uniform_refine(4).unwrap();
        let p = catalog("ex1").unwrap().homogenized();
        let s = SolveSettings::default();
        let iterates = kacanov_iterate(&mesh, &P1Function::zeros(&mesh), &p, 30, &s).unwrap();
        let diffs: Vec<f64> = iterates
            .windows(2)
            .map(|w| h1_distance(&mesh, &w[0], &w[1]).unwrap())
            .collect();
        for w in diffs.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-8) + 1e-13, "{} > {}", w[1], w[0]);
        }
        assert!(diffs[29] < 1e-6 * diffs[0]);
        let energies: Vec<f64> = iterates.iter().map(|u| energy(&mesh, u, &p, 5).unwrap()).collect();
        for w in energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()));
        }
    }
}
