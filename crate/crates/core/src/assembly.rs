//! Kacanov-linearized systems: the stiffness operator weighted by
//! `alpha(x, |grad w|^2)` frozen on each element, the load vector, and the
//! Dirichlet lift.

use std::io::Write;

use thiserror::Error;

use crate::mesh::Mesh;
use crate::problems::Problem;
use crate::quadrature::{QuadratureError, TriangleRule};
use crate::space::{element_gradient, DofMap, P1Function, SpaceError};
use crate::sum;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("coefficient alpha is not finite on element {0}")]
    NonFiniteCoefficient(usize),
    #[error("right-hand side f is not finite at a quadrature node of element {0}")]
    NonFiniteLoad(usize),
    #[error("problem `{0}` has no closed-form primitive of alpha; register one to evaluate energies")]
    MissingPrimitive(String),
    #[error("matrix/vector dimensions disagree: {0}")]
    Dimension(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Symmetric sparse matrix in compressed-row storage (both triangles stored).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    dim: usize,
    row_offsets: Vec<usize>,
    columns: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; dim + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for i in 0..dim {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut entries = vec![(0usize, 0.0f64); triplets.len()];
        for &(i, j, v) in triplets {
            entries[fill[i]] = (j, v);
            fill[i] += 1;
        }
        let mut row_offsets = Vec::with_capacity(dim + 1);
        let mut columns = Vec::with_capacity(triplets.len() / 2);
        let mut values = Vec::with_capacity(triplets.len() / 2);
        row_offsets.push(0);
        for i in 0..dim {
            let row = &mut entries[counts[i]..counts[i + 1]];
            row.sort_by_key(|e| e.0);
            let mut last = usize::MAX;
            for &(j, v) in row.iter() {
                if j == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    columns.push(j);
                    values.push(v);
                    last = j;
                }
            }
            row_offsets.push(columns.len());
        }
        SparseSymMatrix {
            dim,
            row_offsets,
            columns,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        self.columns[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.columns[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`.
    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.dim) {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.columns[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.mul_into(x, &mut y);
        y
    }

    /// `x^T A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        sum::dot(x, &self.mul(x))
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest `|a_ij - a_ji|` relative to `max |a_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    /// Keep only rows and columns listed in `keep`, renumbered in order.
    pub fn submatrix(&self, dofs: &DofMap) -> SparseSymMatrix {
        let n = dofs.num_free();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut columns = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for &v in dofs.free() {
            for (j, a) in self.row(v) {
                if let Some(jj) = dofs.index_of(j) {
                    columns.push(jj);
                    values.push(a);
                }
            }
            row_offsets.push(columns.len());
        }
        SparseSymMatrix {
            dim: n,
            row_offsets,
            columns,
            values,
        }
    }

    /// Coordinate text dump, one `i j value` line per stored entry.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                writeln!(w, "{i} {j} {v:.16e}")?;
            }
        }
        Ok(())
    }
}

/// Stiffness operator and load over all vertices, before boundary conditions.
#[derive(Debug, Clone)]
pub struct FullOperator {
    pub matrix: SparseSymMatrix,
    pub load: Vec<f64>,
    /// The frozen coefficient `alpha_T` of each element.
    pub weights: Vec<f64>,
}

/// The reduced system for the free dofs plus the Dirichlet lift.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: SparseSymMatrix,
    pub rhs: Vec<f64>,
    /// Interpolates `g` at boundary vertices, zero at free dofs.
    pub lift: P1Function,
    pub dofs: DofMap,
}

impl LinearSystem {
    /// Full nodal function `lift + correction`.
    pub fn expand(&self, mesh: &Mesh, free: &[f64]) -> Result<P1Function, SpaceError> {
        let mut coeffs = self.lift.coeffs().to_vec();
        for (slot, &v) in self.dofs.free().iter().enumerate() {
            coeffs[v] = free[slot];
        }
        P1Function::from_coeffs(mesh, coeffs)
    }
}

/// `alpha_T` for every element with `grad w` frozen. Without x-dependence this
/// is a single evaluation; otherwise `alpha` is averaged over the quadrature
/// nodes.
pub fn element_weights(
    mesh: &Mesh,
    w: &P1Function,
    problem: &Problem,
    quad_degree: u32,
) -> Result<Vec<f64>, AssemblyError> {
    w.check_mesh(mesh)?;
    let rule = TriangleRule::with_degree(quad_degree)?;
    let alpha = problem.alpha.as_ref();
    (0..mesh.num_elements())
        .map(|t| {
            let geo = mesh.geometry(t).ok_or(SpaceError::DegenerateElement(t))?;
            let g = element_gradient(mesh, w.coeffs(), t, &geo.basis_gradients);
            let s = g[0] * g[0] + g[1] * g[1];
            let a = if alpha.depends_on_x() {
                let tri = mesh.element_points(t);
                rule.nodes(&tri, 1.0).map(|(x, _, wq)| wq * alpha.value(x, s)).sum()
            } else {
                alpha.value(mesh.point(mesh.elements()[t].v[0]), s)
            };
            if a.is_finite() {
                Ok(a)
            } else {
                Err(AssemblyError::NonFiniteCoefficient(t))
            }
        })
        .collect()
}

/// `int f phi_i` for every vertex.
pub fn load_vector(mesh: &Mesh, problem: &Problem, quad_degree: u32) -> Result<Vec<f64>, AssemblyError> {
    let rule = TriangleRule::with_degree(quad_degree)?;
    let mut load = vec![0.0; mesh.num_vertices()];
    for (t, el) in mesh.elements().iter().enumerate() {
        let tri = mesh.element_points(t);
        let mut local = [0.0; 3];
        for (x, l, wq) in rule.nodes(&tri, mesh.area(t)) {
            let fx = (problem.f)(x);
            if !fx.is_finite() {
                return Err(AssemblyError::NonFiniteLoad(t));
            }
            for i in 0..3 {
                local[i] += wq * fx * l[i];
            }
        }
        for i in 0..3 {
            load[el.v[i]] += local[i];
        }
    }
    Ok(load)
}

/// Weighted stiffness matrix over all vertices and the load vector.
pub fn assemble_full(
    mesh: &Mesh,
    w: &P1Function,
    problem: &Problem,
    quad_degree: u32,
) -> Result<FullOperator, AssemblyError> {
    let weights = element_weights(mesh, w, problem, quad_degree)?;
    let mut triplets = Vec::with_capacity(9 * mesh.num_elements());
    for (t, el) in mesh.elements().iter().enumerate() {
        let geo = mesh.geometry(t).ok_or(SpaceError::DegenerateElement(t))?;
        let scale = weights[t] * geo.area;
        let g = &geo.basis_gradients;
        for i in 0..3 {
            for j in 0..3 {
                let k = scale * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                triplets.push((el.v[i], el.v[j], k));
            }
        }
    }
    Ok(FullOperator {
        matrix: SparseSymMatrix::from_triplets(mesh.num_vertices(), &triplets),
        load: load_vector(mesh, problem, quad_degree)?,
        weights,
    })
}

/// The linear system of one Kacanov step with the weight frozen at `w`.
pub fn assemble(
    mesh: &Mesh,
    w: &P1Function,
    problem: &Problem,
    quad_degree: u32,
) -> Result<LinearSystem, AssemblyError> {
    let full = assemble_full(mesh, w, problem, quad_degree)?;
    let dofs = DofMap::new(mesh);
    let lift_coeffs: Vec<f64> = mesh
        .vertices()
        .iter()
        .map(|v| if v.on_boundary { (problem.g)(v.point()) } else { 0.0 })
        .collect();
    let lift = P1Function::from_coeffs(mesh, lift_coeffs)?;
    let a_lift = full.matrix.mul(lift.coeffs());
    let rhs = dofs.free().iter().map(|&v| full.load[v] - a_lift[v]).collect();
    Ok(LinearSystem {
        matrix: full.matrix.submatrix(&dofs),
        rhs,
        lift,
        dofs,
    })
}

/// `a(w; u, v) = int alpha(x, |grad w|^2) grad u . grad v`.
pub fn apply_form(
    mesh: &Mesh,
    w: &P1Function,
    u: &P1Function,
    v: &P1Function,
    problem: &Problem,
    quad_degree: u32,
) -> Result<f64, AssemblyError> {
    u.check_mesh(mesh)?;
    v.check_mesh(mesh)?;
    let weights = element_weights(mesh, w, problem, quad_degree)?;
    form_with_weights(mesh, &weights, u, v)
}

pub(crate) fn form_with_weights(
    mesh: &Mesh,
    weights: &[f64],
    u: &P1Function,
    v: &P1Function,
) -> Result<f64, AssemblyError> {
    let terms = (0..mesh.num_elements()).map(|t| {
        let geo = mesh.geometry(t).ok_or(SpaceError::DegenerateElement(t))?;
        let gu = element_gradient(mesh, u.coeffs(), t, &geo.basis_gradients);
        let gv = element_gradient(mesh, v.coeffs(), t, &geo.basis_gradients);
        Ok(weights[t] * geo.area * (gu[0] * gv[0] + gu[1] * gv[1]))
    });
    let terms: Vec<f64> = terms.collect::<Result<_, AssemblyError>>()?;
    Ok(sum::compensated(terms))
}

/// `L(v) = int f v`, with the same quadrature as the load vector.
pub fn load_functional(mesh: &Mesh, v: &P1Function, problem: &Problem, quad_degree: u32) -> Result<f64, AssemblyError> {
    v.check_mesh(mesh)?;
    let load = load_vector(mesh, problem, quad_degree)?;
    Ok(sum::dot(&load, v.coeffs()))
}

/// `J(u) = (1/2) int A(x, |grad u|^2)` with `A` the primitive of `alpha`.
pub fn dirichlet_potential(
    mesh: &Mesh,
    u: &P1Function,
    problem: &Problem,
    quad_degree: u32,
) -> Result<f64, AssemblyError> {
    u.check_mesh(mesh)?;
    let rule = TriangleRule::with_degree(quad_degree)?;
    let alpha = problem.alpha.as_ref();
    let missing = || AssemblyError::MissingPrimitive(problem.name.clone());
    let mut terms = Vec::with_capacity(mesh.num_elements());
    for t in 0..mesh.num_elements() {
        let geo = mesh.geometry(t).ok_or(SpaceError::DegenerateElement(t))?;
        let g = element_gradient(mesh, u.coeffs(), t, &geo.basis_gradients);
        let s = g[0] * g[0] + g[1] * g[1];
        let integral = if alpha.depends_on_x() {
            let tri = mesh.element_points(t);
            let mut acc = 0.0;
            for (x, _, wq) in rule.nodes(&tri, geo.area) {
                acc += wq * alpha.primitive(x, s).ok_or_else(missing)?;
            }
            acc
        } else {
            geo.area
                * alpha
                    .primitive(mesh.point(mesh.elements()[t].v[0]), s)
                    .ok_or_else(missing)?
        };
        terms.push(0.5 * integral);
    }
    Ok(sum::compensated(terms))
}

/// `F(u) = J(u) - L(u)`, evaluated for the full function including boundary
/// values.
pub fn energy(mesh: &Mesh, u: &P1Function, problem: &Problem, quad_degree: u32) -> Result<f64, AssemblyError> {
    Ok(dirichlet_potential(mesh, u, problem, quad_degree)? - load_functional(mesh, u, problem, quad_degree)?)
}
