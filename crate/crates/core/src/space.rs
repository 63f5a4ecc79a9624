//! Continuous piecewise-linear functions on a mesh.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::mesh::{Mesh, MeshId, Point, Refinement};
use crate::quadrature::{QuadratureError, TriangleRule};
use crate::sum;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("function lives on a different mesh")]
    MeshMismatch,
    #[error("expected {expected} nodal values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at vertex {0}")]
    NonFinite(usize),
    #[error("element {0} is degenerate")]
    DegenerateElement(usize),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("malformed function dump: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Nodal coefficients of a P1 function on a specific mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct P1Function {
    mesh_id: MeshId,
    coeffs: Vec<f64>,
}

impl P1Function {
    pub fn zeros(mesh: &Mesh) -> Self {
        P1Function {
            mesh_id: mesh.id(),
            coeffs: vec![0.0; mesh.num_vertices()],
        }
    }

    pub fn from_coeffs(mesh: &Mesh, coeffs: Vec<f64>) -> Result<Self, SpaceError> {
        if coeffs.len() != mesh.num_vertices() {
            return Err(SpaceError::LengthMismatch {
                expected: mesh.num_vertices(),
                got: coeffs.len(),
            });
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(SpaceError::NonFinite(i));
        }
        Ok(P1Function {
            mesh_id: mesh.id(),
            coeffs,
        })
    }

    pub fn mesh_id(&self) -> MeshId {
        self.mesh_id
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<(), SpaceError> {
        if self.mesh_id == mesh.id() && self.coeffs.len() == mesh.num_vertices() {
            Ok(())
        } else {
            Err(SpaceError::MeshMismatch)
        }
    }

    /// `self + s * other`, both on the same mesh.
    pub fn axpy(&self, s: f64, other: &P1Function) -> Result<P1Function, SpaceError> {
        if self.mesh_id != other.mesh_id {
            return Err(SpaceError::MeshMismatch);
        }
        Ok(P1Function {
            mesh_id: self.mesh_id,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + s * b).collect(),
        })
    }

    /// Value on element `t` at barycentric coordinates `bary`.
    pub fn eval_bary(&self, mesh: &Mesh, t: usize, bary: [f64; 3]) -> f64 {
        let v = mesh.elements()[t].v;
        bary[0] * self.coeffs[v[0]] + bary[1] * self.coeffs[v[1]] + bary[2] * self.coeffs[v[2]]
    }

    pub fn max_value(&self) -> f64 {
        self.coeffs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Write as `p1 N` followed by one value per line.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "p1 {}", self.coeffs.len())?;
        for c in &self.coeffs {
            writeln!(w, "{c:.16e}")?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(mesh: &Mesh, r: R) -> Result<Self, SpaceError> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| SpaceError::Parse("empty input".into()))??;
        let n: usize = header
            .strip_prefix("p1 ")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| SpaceError::Parse(format!("bad header `{header}`")))?;
        let mut coeffs = Vec::with_capacity(n);
        for line in lines.take(n) {
            let line = line?;
            coeffs.push(
                line.trim()
                    .parse()
                    .map_err(|_| SpaceError::Parse(format!("bad value `{line}`")))?,
            );
        }
        if coeffs.len() != n {
            return Err(SpaceError::Parse(format!("expected {n} values, got {}", coeffs.len())));
        }
        P1Function::from_coeffs(mesh, coeffs)
    }
}

/// Free (interior) degrees of freedom in ascending vertex order.
#[derive(Debug, Clone)]
pub struct DofMap {
    free: Vec<usize>,
    index_of: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Self {
        let mut free = Vec::new();
        let index_of = mesh
            .vertices()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if v.on_boundary {
                    None
                } else {
                    free.push(i);
                    Some(free.len() - 1)
                }
            })
            .collect();
        DofMap { free, index_of }
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    /// Free-dof slot of a vertex, `None` if it is constrained.
    pub fn index_of(&self, vertex: usize) -> Option<usize> {
        self.index_of[vertex]
    }

    /// Restrict nodal values to the free dofs.
    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&v| nodal[v]).collect()
    }
}

/// Constant gradient of `u` on element `t`.
pub fn gradient_on_element(mesh: &Mesh, u: &P1Function, t: usize) -> Result<[f64; 2], SpaceError> {
    u.check_mesh(mesh)?;
    let geo = mesh.geometry(t).ok_or(SpaceError::DegenerateElement(t))?;
    Ok(element_gradient(mesh, &u.coeffs, t, &geo.basis_gradients))
}

pub(crate) fn element_gradient(mesh: &Mesh, coeffs: &[f64], t: usize, grads: &[[f64; 2]; 3]) -> [f64; 2] {
    let v = mesh.elements()[t].v;
    let mut g = [0.0; 2];
    for i in 0..3 {
        g[0] += coeffs[v[i]] * grads[i][0];
        g[1] += coeffs[v[i]] * grads[i][1];
    }
    g
}

/// Elementwise gradients of `u`, one per element.
pub fn gradients(mesh: &Mesh, u: &P1Function) -> Result<Vec<[f64; 2]>, SpaceError> {
    u.check_mesh(mesh)?;
    (0..mesh.num_elements())
        .map(|t| {
            let geo = mesh.geometry(t).ok_or(SpaceError::DegenerateElement(t))?;
            Ok(element_gradient(mesh, &u.coeffs, t, &geo.basis_gradients))
        })
        .collect()
}

/// Nodal interpolant of `g`.
pub fn interpolate(mesh: &Mesh, g: impl Fn(Point) -> f64) -> Result<P1Function, SpaceError> {
    let coeffs: Vec<f64> = mesh.vertices().iter().map(|v| g(v.point())).collect();
    P1Function::from_coeffs(mesh, coeffs)
}

/// Exact representation of `u` on a refinement of its mesh.
pub fn prolong(u: &P1Function, old_mesh: &Mesh, new_mesh: &Mesh, map: &Refinement) -> Result<P1Function, SpaceError> {
    u.check_mesh(old_mesh)?;
    if map.old_mesh() != old_mesh.id()
        || map.new_mesh() != new_mesh.id()
        || map.old_vertex_count() + map.midpoints().len() != new_mesh.num_vertices()
    {
        return Err(SpaceError::MeshMismatch);
    }
    let mut coeffs = Vec::with_capacity(new_mesh.num_vertices());
    coeffs.extend_from_slice(&u.coeffs);
    for &[a, b] in map.midpoints() {
        coeffs.push(0.5 * (coeffs[a] + coeffs[b]));
    }
    Ok(P1Function {
        mesh_id: new_mesh.id(),
        coeffs,
    })
}

/// `||grad u||_{L2}` over the whole mesh.
pub fn h1_seminorm(mesh: &Mesh, u: &P1Function) -> Result<f64, SpaceError> {
    let grads = gradients(mesh, u)?;
    Ok(sum::compensated(
        grads
            .iter()
            .enumerate()
            .map(|(t, g)| mesh.area(t) * (g[0] * g[0] + g[1] * g[1])),
    )
    .sqrt())
}

/// `||grad u||_{L2}` restricted to a set of elements.
pub fn h1_seminorm_on(mesh: &Mesh, grads: &[[f64; 2]], elements: impl IntoIterator<Item = usize>) -> f64 {
    sum::compensated(elements.into_iter().map(|t| {
        let g = grads[t];
        mesh.area(t) * (g[0] * g[0] + g[1] * g[1])
    }))
    .sqrt()
}

/// `(sum_T int_T |grad u_h - grad_exact|^2)^{1/2}` with the quadrature rule of
/// the given degree. Nodes are interior, so `grad_exact` may be singular at
/// vertices.
pub fn h1_seminorm_error(
    mesh: &Mesh,
    u_h: &P1Function,
    grad_exact: impl Fn(Point) -> [f64; 2],
    quad_degree: u32,
) -> Result<f64, SpaceError> {
    let rule = TriangleRule::with_degree(quad_degree)?;
    let grads = gradients(mesh, u_h)?;
    let total = sum::compensated((0..mesh.num_elements()).map(|t| {
        let tri = mesh.element_points(t);
        let g = grads[t];
        rule.nodes(&tri, mesh.area(t))
            .map(|(x, _, w)| {
                let e = grad_exact(x);
                let (dx, dy) = (g[0] - e[0], g[1] - e[1]);
                w * (dx * dx + dy * dy)
            })
            .sum::<f64>()
    }));
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_lshape_mesh, make_square_mesh};

    fn affine(p: Point) -> f64 {
        2.0 * p[0] + 3.0 * p[1] - 1.0
    }

    #[test]
    fn gradients_reproduce_affine_functions() {
        let (mesh, _) = make_lshape_mesh().uniform_refine(3).unwrap();
        let x = interpolate(&mesh, |p| p[0]).unwrap();
        let u = interpolate(&mesh, affine).unwrap();
        let z = P1Function::zeros(&mesh);
        for t in 0..mesh.num_elements() {
            let gx = gradient_on_element(&mesh, &x, t).unwrap();
            assert!((gx[0] - 1.0).abs() < 1e-13 && gx[1].abs() < 1e-13);
            let g = gradient_on_element(&mesh, &u, t).unwrap();
            assert!((g[0] - 2.0).abs() < 1e-13 && (g[1] - 3.0).abs() < 1e-13);
            assert_eq!(gradient_on_element(&mesh, &z, t).unwrap(), [0.0, 0.0]);
        }
    }

    #[test]
    fn interpolation() {
        let mesh = make_square_mesh();
        let c = interpolate(&mesh, |_| 4.5).unwrap();
        assert!(c.coeffs().iter().all(|&v| v == 4.5));
        let u = interpolate(&mesh, affine).unwrap();
        for t in 0..mesh.num_elements() {
            let [a, b, cc] = mesh.element_points(t);
            let bc = [(a[0] + b[0] + cc[0]) / 3.0, (a[1] + b[1] + cc[1]) / 3.0];
            assert!((u.eval_bary(&mesh, t, [1.0 / 3.0; 3]) - affine(bc)).abs() < 1e-14);
        }
        assert!(matches!(
            interpolate(&mesh, |p| 1.0 / p[0]),
            Err(SpaceError::NonFinite(0))
        ));
    }

    #[test]
    fn prolong_constant_and_affine() {
        let mesh = make_lshape_mesh();
        let (fine, map) = mesh.bisect(&[0, 2, 5], 2).unwrap();
        let one = interpolate(&mesh, |_| 1.0).unwrap();
        let p = prolong(&one, &mesh, &fine, &map).unwrap();
        assert!(p.coeffs().iter().all(|&v| v == 1.0));
        let u = interpolate(&mesh, affine).unwrap();
        let p = prolong(&u, &mesh, &fine, &map).unwrap();
        for (i, v) in fine.vertices().iter().enumerate() {
            assert!((p.coeffs()[i] - affine(v.point())).abs() < 1e-14);
        }
        assert!(matches!(prolong(&u, &fine, &fine, &map), Err(SpaceError::MeshMismatch)));
    }

    #[test]
    fn h1_error_of_exact_interpolant_is_zero() {
        let (mesh, _) = make_lshape_mesh().uniform_refine(2).unwrap();
        let u = interpolate(&mesh, affine).unwrap();
        let e = h1_seminorm_error(&mesh, &u, |_| [2.0, 3.0], 5).unwrap();
        assert!(e < 1e-12);
        let z = P1Function::zeros(&mesh);
        let e = h1_seminorm_error(&mesh, &z, |_| [1.0, 0.0], 5).unwrap();
        assert!((e - 3f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn dofmap_partitions_vertices() {
        let (mesh, _) = make_square_mesh().uniform_refine(3).unwrap();
        let d = DofMap::new(&mesh);
        for (i, v) in mesh.vertices().iter().enumerate() {
            assert_eq!(d.index_of(i).is_none(), v.on_boundary);
        }
        assert!(d.free().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn dump_round_trip() {
        let (mesh, _) = make_square_mesh().uniform_refine(2).unwrap();
        let u = interpolate(&mesh, |p| (p[0] * 3.1).sin() / 7.0).unwrap();
        let mut buf = Vec::new();
        u.write_dump(&mut buf).unwrap();
        assert!(buf.starts_with(format!("p1 {}\n", mesh.num_vertices()).as_bytes()));
        let back = P1Function::read_dump(&mesh, &buf[..]).unwrap();
        assert_eq!(back, u);
    }
}
