//! Conforming triangulations of polygonal domains refined by newest-vertex
//! bisection.
//!
//! Every element stores its vertices so that the refinement edge is the edge
//! opposite local vertex 0. Local edge `i` is the edge opposite local vertex
//! `i`, and `neighbor[i]` is the element across it (or `None` on the
//! boundary). Meshes are immutable once built; refinement produces a new mesh
//! together with a [`Refinement`] map used for transferring functions.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

/// A point in the plane.
pub type Point = [f64; 2];

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a mesh value. Every constructed or refined mesh gets a fresh id;
/// clones share it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MeshId(u64);

impl MeshId {
    fn fresh() -> Self {
        MeshId(NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed))
    }
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("element {0} is degenerate (zero or non-finite area)")]
    DegenerateElement(usize),
    #[error("vertex {0} has non-finite coordinates")]
    NonFiniteVertex(usize),
    #[error("element {element} references vertex {vertex}, but the mesh has {count} vertices")]
    VertexOutOfRange {
        element: usize,
        vertex: usize,
        count: usize,
    },
    #[error("edge ({0}, {1}) is shared by more than two elements")]
    NonManifoldEdge(usize, usize),
    #[error("number of bisections must be at least 1")]
    ZeroBisections,
    #[error("marked element {index} out of range (mesh has {count} elements)")]
    ElementOutOfRange { index: usize, count: usize },
    #[error("refinement maps do not chain: {0}")]
    MapMismatch(&'static str),
    #[error("malformed mesh dump at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub x: f64,
    pub y: f64,
    pub on_boundary: bool,
}

impl Vertex {
    pub fn point(&self) -> Point {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Element {
    /// Vertex indices; the refinement edge is opposite `v[0]`.
    pub v: [usize; 3],
    /// Element across the edge opposite `v[i]`.
    pub neighbor: [Option<usize>; 3],
    /// Bisection depth relative to the initial mesh.
    pub generation: u32,
}

impl Element {
    /// Endpoints of local edge `i` (the edge opposite `v[i]`).
    pub fn edge(&self, i: usize) -> [usize; 2] {
        [self.v[(i + 1) % 3], self.v[(i + 2) % 3]]
    }

    /// Local index of the edge shared with element `other`, if adjacent.
    pub fn local_edge_towards(&self, other: usize) -> Option<usize> {
        self.neighbor.iter().position(|n| *n == Some(other))
    }
}

/// Constant-per-element geometric data of a P1 element.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub area: f64,
    /// Gradients of the three barycentric coordinates.
    pub basis_gradients: [[f64; 2]; 3],
}

#[derive(Debug, Clone)]
pub struct Mesh {
    id: MeshId,
    vertices: Vec<Vertex>,
    elements: Vec<Element>,
    boundary_edges: Vec<[usize; 2]>,
}

/// Parent/child relation between a mesh and its refinement.
///
/// Vertex numbering is preserved by refinement: the refined mesh keeps the old
/// vertices in place and appends midpoints. `midpoints[i]` holds the endpoints
/// of the edge whose midpoint is vertex `old_vertex_count + i`; endpoints may
/// themselves be earlier midpoints.
#[derive(Debug, Clone)]
pub struct Refinement {
    old_mesh: MeshId,
    new_mesh: MeshId,
    old_vertex_count: usize,
    old_element_count: usize,
    midpoints: Vec<[usize; 2]>,
    parent: Vec<usize>,
}

impl Refinement {
    pub fn old_mesh(&self) -> MeshId {
        self.old_mesh
    }

    pub fn new_mesh(&self) -> MeshId {
        self.new_mesh
    }

    pub fn old_vertex_count(&self) -> usize {
        self.old_vertex_count
    }

    pub fn midpoints(&self) -> &[[usize; 2]] {
        &self.midpoints
    }

    /// Ancestor in the old mesh of each element of the new mesh.
    pub fn parents(&self) -> &[usize] {
        &self.parent
    }

    /// Descendants in the new mesh of each element of the old mesh.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.old_element_count];
        for (child, &p) in self.parent.iter().enumerate() {
            children[p].push(child);
        }
        children
    }

    /// Chain `self` (A -> B) with `next` (B -> C) into A -> C.
    pub fn compose(&self, next: &Refinement) -> Result<Refinement, MeshError> {
        if self.new_mesh != next.old_mesh {
            return Err(MeshError::MapMismatch("mesh ids differ"));
        }
        if self.old_vertex_count + self.midpoints.len() != next.old_vertex_count {
            return Err(MeshError::MapMismatch("vertex counts differ"));
        }
        let mut midpoints = self.midpoints.clone();
        midpoints.extend_from_slice(&next.midpoints);
        Ok(Refinement {
            old_mesh: self.old_mesh,
            new_mesh: next.new_mesh,
            old_vertex_count: self.old_vertex_count,
            old_element_count: self.old_element_count,
            midpoints,
            parent: next.parent.iter().map(|&p| self.parent[p]).collect(),
        })
    }
}

fn signed_double_area(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Fill in neighbor links and return the boundary edges.
fn build_topology(elements: &mut [Element]) -> Result<Vec<[usize; 2]>, MeshError> {
    let mut seen: HashMap<(usize, usize), (usize, usize)> = HashMap::with_capacity(elements.len() * 2);
    for el in elements.iter_mut() {
        el.neighbor = [None; 3];
    }
    for t in 0..elements.len() {
        for i in 0..3 {
            let [a, b] = elements[t].edge(i);
            match seen.entry(edge_key(a, b)) {
                Entry::Vacant(e) => {
                    e.insert((t, i));
                }
                Entry::Occupied(e) => {
                    let (s, j) = *e.get();
                    if elements[s].neighbor[j].is_some() {
                        return Err(MeshError::NonManifoldEdge(a, b));
                    }
                    elements[s].neighbor[j] = Some(t);
                    elements[t].neighbor[i] = Some(s);
                }
            }
        }
    }
    let mut boundary = Vec::new();
    for el in elements.iter() {
        for i in 0..3 {
            if el.neighbor[i].is_none() {
                boundary.push(el.edge(i));
            }
        }
    }
    Ok(boundary)
}

impl Mesh {
    /// Build a mesh from triangles whose first vertex is already opposite the
    /// desired refinement edge. Orientation is normalized to counter-clockwise
    /// by swapping the last two vertices, which keeps the refinement edge.
    /// Boundary flags are derived from edges that have a single element.
    pub fn from_labeled(points: &[Point], triangles: &[[usize; 3]]) -> Result<Mesh, MeshError> {
        for (i, p) in points.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(MeshError::NonFiniteVertex(i));
            }
        }
        let mut elements = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= points.len() {
                    return Err(MeshError::VertexOutOfRange {
                        element: t,
                        vertex: v,
                        count: points.len(),
                    });
                }
            }
            let mut v = *tri;
            let a2 = signed_double_area(points[v[0]], points[v[1]], points[v[2]]);
            if a2 == 0.0 || !a2.is_finite() {
                return Err(MeshError::DegenerateElement(t));
            }
            if a2 < 0.0 {
                v.swap(1, 2);
            }
            elements.push(Element {
                v,
                neighbor: [None; 3],
                generation: 0,
            });
        }
        let boundary_edges = build_topology(&mut elements)?;
        let mut vertices: Vec<Vertex> = points
            .iter()
            .map(|p| Vertex {
                x: p[0],
                y: p[1],
                on_boundary: false,
            })
            .collect();
        for &[a, b] in &boundary_edges {
            vertices[a].on_boundary = true;
            vertices[b].on_boundary = true;
        }
        Ok(Mesh {
            id: MeshId::fresh(),
            vertices,
            elements,
            boundary_edges,
        })
    }

    /// Build a mesh labeling the longest edge of every triangle as its
    /// refinement edge (ties go to the lowest local position).
    pub fn new(points: &[Point], triangles: &[[usize; 3]]) -> Result<Mesh, MeshError> {
        let mut labeled = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&v) = tri.iter().find(|&&v| v >= points.len()) {
                return Err(MeshError::VertexOutOfRange {
                    element: t,
                    vertex: v,
                    count: points.len(),
                });
            }
            let len = |i: usize| dist(points[tri[(i + 1) % 3]], points[tri[(i + 2) % 3]]);
            let mut best = 0;
            for i in 1..3 {
                if len(i) > len(best) {
                    best = i;
                }
            }
            labeled.push([tri[best], tri[(best + 1) % 3], tri[(best + 2) % 3]]);
        }
        Mesh::from_labeled(points, &labeled)
    }

    pub fn id(&self) -> MeshId {
        self.id
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn point(&self, v: usize) -> Point {
        self.vertices[v].point()
    }

    pub fn element_points(&self, t: usize) -> [Point; 3] {
        let v = self.elements[t].v;
        [self.point(v[0]), self.point(v[1]), self.point(v[2])]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.element_points(t);
        0.5 * signed_double_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        crate::sum::compensated((0..self.num_elements()).map(|t| self.area(t)))
    }

    /// Local mesh size `|T|^{1/2}`.
    pub fn mesh_size(&self, t: usize) -> f64 {
        self.area(t).sqrt()
    }

    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.element_points(t);
        dist(a, b).max(dist(b, c)).max(dist(c, a))
    }

    /// Inradius `2|T| / perimeter(T)`.
    pub fn inradius(&self, t: usize) -> f64 {
        let [a, b, c] = self.element_points(t);
        2.0 * self.area(t) / (dist(a, b) + dist(b, c) + dist(c, a))
    }

    pub fn edge_length(&self, t: usize, i: usize) -> f64 {
        let [a, b] = self.elements[t].edge(i);
        dist(self.point(a), self.point(b))
    }

    /// Area and barycentric gradients, or `None` for a degenerate element.
    pub fn geometry(&self, t: usize) -> Option<ElementGeometry> {
        let [p0, p1, p2] = self.element_points(t);
        let det = signed_double_area(p0, p1, p2);
        if det <= 0.0 || !det.is_finite() {
            return None;
        }
        let inv = 1.0 / det;
        Some(ElementGeometry {
            area: 0.5 * det,
            basis_gradients: [
                [(p1[1] - p2[1]) * inv, (p2[0] - p1[0]) * inv],
                [(p2[1] - p0[1]) * inv, (p0[0] - p2[0]) * inv],
                [(p0[1] - p1[1]) * inv, (p1[0] - p0[0]) * inv],
            ],
        })
    }

    /// `t` together with its edge neighbors, sorted.
    pub fn patch(&self, t: usize) -> Vec<usize> {
        let mut out: Vec<usize> = std::iter::once(t)
            .chain(self.elements[t].neighbor.iter().flatten().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// `diam(T) / rho_T` of one element.
    pub fn shape_ratio(&self, t: usize) -> f64 {
        self.diameter(t) / self.inradius(t)
    }

    /// Largest `diam(T) / rho_T` over the mesh.
    pub fn audit_shape_regularity(&self) -> f64 {
        (0..self.num_elements())
            .map(|t| self.shape_ratio(t))
            .fold(0.0, f64::max)
    }

    pub fn max_generation(&self) -> u32 {
        self.elements.iter().map(|e| e.generation).max().unwrap_or(0)
    }

    /// Bisect every marked element at least `n` times, closing the mesh to
    /// conformity after each sweep.
    pub fn bisect(&self, marked: &[usize], n: usize) -> Result<(Mesh, Refinement), MeshError> {
        if n == 0 {
            return Err(MeshError::ZeroBisections);
        }
        let mut flags = vec![false; self.num_elements()];
        for &t in marked {
            if t >= self.num_elements() {
                return Err(MeshError::ElementOutOfRange {
                    index: t,
                    count: self.num_elements(),
                });
            }
            flags[t] = true;
        }
        let (mut mesh, mut map) = self.bisect_sweep(&flags);
        for _ in 1..n {
            let flags: Vec<bool> = map.parent.iter().map(|&p| flags[p]).collect();
            let (next, step) = mesh.bisect_sweep(&flags);
            map = map.compose(&step)?;
            mesh = next;
        }
        Ok((mesh, map))
    }

    /// Bisect every element at least `n` times.
    pub fn uniform_refine(&self, n: usize) -> Result<(Mesh, Refinement), MeshError> {
        let all: Vec<usize> = (0..self.num_elements()).collect();
        self.bisect(&all, n)
    }

    /// One sweep of newest-vertex bisection.
    ///
    /// Closure works on edge marks: an element with any marked edge must have
    /// its refinement edge marked, and marks are shared across neighbors. At
    /// the fixed point each element is split through its refinement edge, and
    /// each child is split once more if its own refinement edge (one of the
    /// parent's other two edges) is marked. Every marked edge is then bisected
    /// from both sides, so no hanging nodes remain.
    fn bisect_sweep(&self, marked: &[bool]) -> (Mesh, Refinement) {
        let ne = self.num_elements();
        let mut edge_marks = vec![[false; 3]; ne];
        let mut stack = Vec::new();
        for t in (0..ne).filter(|&t| marked[t]) {
            self.mark_edge(&mut edge_marks, &mut stack, t, 0);
        }
        while let Some(t) = stack.pop() {
            if !edge_marks[t][0] && edge_marks[t].iter().any(|&m| m) {
                self.mark_edge(&mut edge_marks, &mut stack, t, 0);
            }
        }

        let mut vertices = self.vertices.clone();
        let mut midpoints = Vec::new();
        let mut mid_of = vec![[usize::MAX; 3]; ne];
        for t in 0..ne {
            for i in 0..3 {
                if !edge_marks[t][i] || mid_of[t][i] != usize::MAX {
                    continue;
                }
                let el = &self.elements[t];
                let [a, b] = el.edge(i);
                let (pa, pb) = (self.point(a), self.point(b));
                let m = vertices.len();
                vertices.push(Vertex {
                    x: 0.5 * (pa[0] + pb[0]),
                    y: 0.5 * (pa[1] + pb[1]),
                    on_boundary: el.neighbor[i].is_none(),
                });
                midpoints.push([a, b]);
                mid_of[t][i] = m;
                if let Some(s) = el.neighbor[i] {
                    let j = self.elements[s]
                        .local_edge_towards(t)
                        .expect("neighbor relation is symmetric");
                    mid_of[s][j] = m;
                }
            }
        }

        let mut elements = Vec::with_capacity(ne + 2 * midpoints.len());
        let mut parent = Vec::with_capacity(elements.capacity());
        let leaf = |v: [usize; 3], generation: u32| Element {
            v,
            neighbor: [None; 3],
            generation,
        };
        for (t, el) in self.elements.iter().enumerate() {
            let g = el.generation;
            if !edge_marks[t][0] {
                elements.push(leaf(el.v, g));
                parent.push(t);
                continue;
            }
            let [v0, v1, v2] = el.v;
            let m = mid_of[t][0];
            // child (m, v0, v1) has refinement edge v0-v1 = parent edge 2,
            // child (m, v2, v0) has refinement edge v2-v0 = parent edge 1.
            for (child, edge) in [([m, v0, v1], 2), ([m, v2, v0], 1)] {
                if edge_marks[t][edge] {
                    let q = mid_of[t][edge];
                    let [p0, p1, p2] = child;
                    elements.push(leaf([q, p0, p1], g + 2));
                    elements.push(leaf([q, p2, p0], g + 2));
                    parent.extend([t, t]);
                } else {
                    elements.push(leaf(child, g + 1));
                    parent.push(t);
                }
            }
        }
        let boundary_edges = build_topology(&mut elements).expect("bisection preserves conformity");
        let mesh = Mesh {
            id: MeshId::fresh(),
            vertices,
            elements,
            boundary_edges,
        };
        let map = Refinement {
            old_mesh: self.id,
            new_mesh: mesh.id,
            old_vertex_count: self.num_vertices(),
            old_element_count: ne,
            midpoints,
            parent,
        };
        (mesh, map)
    }

    fn mark_edge(&self, marks: &mut [[bool; 3]], stack: &mut Vec<usize>, t: usize, i: usize) {
        if marks[t][i] {
            return;
        }
        marks[t][i] = true;
        stack.push(t);
        if let Some(s) = self.elements[t].neighbor[i] {
            let j = self.elements[s]
                .local_edge_towards(t)
                .expect("neighbor relation is symmetric");
            marks[s][j] = true;
            stack.push(s);
        }
    }

    /// Write the mesh in the line-oriented dump format.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "vertices {}", self.num_vertices())?;
        writeln!(w, "elements {}", self.num_elements())?;
        for v in &self.vertices {
            writeln!(w, "{:.16e} {:.16e} {}", v.x, v.y, u8::from(v.on_boundary))?;
        }
        for e in &self.elements {
            writeln!(w, "{} {} {} {}", e.v[0], e.v[1], e.v[2], e.generation)?;
        }
        Ok(())
    }

    /// Read a mesh written by [`Mesh::write_dump`]. Element vertex order (and
    /// therefore the refinement-edge labels) is kept as written.
    pub fn read_dump<R: BufRead>(r: R) -> Result<Mesh, MeshError> {
        let mut lines = r.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String), MeshError> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(MeshError::Parse {
                    line: 0,
                    msg: format!("unexpected end of input, expected {what}"),
                }),
            }
        };
        let header = |line: usize, text: &str, key: &str| -> Result<usize, MeshError> {
            let mut it = text.split_whitespace();
            match (it.next(), it.next().and_then(|n| n.parse().ok()), it.next()) {
                (Some(k), Some(n), None) if k == key => Ok(n),
                _ => Err(MeshError::Parse {
                    line,
                    msg: format!("expected `{key} N`"),
                }),
            }
        };
        let (ln, l) = next("vertex header")?;
        let nv = header(ln, &l, "vertices")?;
        let (ln, l) = next("element header")?;
        let ne = header(ln, &l, "elements")?;
        let bad = |line: usize, msg: &str| MeshError::Parse {
            line,
            msg: msg.to_string(),
        };

        let mut points = Vec::with_capacity(nv);
        let mut flags = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = next("vertex line")?;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad(ln, "expected `x y boundary_flag`"));
            }
            let x: f64 = f[0].parse().map_err(|_| bad(ln, "bad x"))?;
            let y: f64 = f[1].parse().map_err(|_| bad(ln, "bad y"))?;
            let b = match f[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad(ln, "boundary flag must be 0 or 1")),
            };
            points.push([x, y]);
            flags.push(b);
        }
        let mut tris = Vec::with_capacity(ne);
        let mut gens = Vec::with_capacity(ne);
        for _ in 0..ne {
            let (ln, l) = next("element line")?;
            let f: Vec<usize> = l
                .split_whitespace()
                .map(|s| s.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| bad(ln, "expected four non-negative integers"))?;
            if f.len() != 4 {
                return Err(bad(ln, "expected `v0 v1 v2 generation`"));
            }
            tris.push([f[0], f[1], f[2]]);
            gens.push(f[3] as u32);
        }
        let mut mesh = Mesh::from_labeled(&points, &tris)?;
        for (v, b) in mesh.vertices.iter_mut().zip(flags) {
            v.on_boundary = b;
        }
        for (e, g) in mesh.elements.iter_mut().zip(gens) {
            e.generation = g;
        }
        Ok(mesh)
    }
}

/// The L-shaped domain `(-1,1)^2 \ [0,1]x[-1,0]` split into six right
/// isosceles triangles; every hypotenuse is a refinement edge and all
/// diagonals pass through the re-entrant corner at the origin.
pub fn make_lshape_mesh() -> Mesh {
    let points = [
        [0.0, 0.0],   // 0 re-entrant corner
        [1.0, 0.0],   // 1
        [1.0, 1.0],   // 2
        [0.0, 1.0],   // 3
        [-1.0, 1.0],  // 4
        [-1.0, 0.0],  // 5
        [-1.0, -1.0], // 6
        [0.0, -1.0],  // 7
    ];
    // Each entry lists the right-angle vertex first.
    let tris = [[1, 0, 2], [3, 2, 0], [3, 0, 4], [5, 4, 0], [5, 0, 6], [7, 6, 0]];
    Mesh::from_labeled(&points, &tris).expect("L-shape mesh is valid")
}

/// The square `(-1,1)^2` split into eight right isosceles triangles whose
/// hypotenuses (the refinement edges) all end at the center.
pub fn make_square_mesh() -> Mesh {
    let points = [
        [0.0, 0.0],
        [1.0, 0.0],
        [1.0, 1.0],
        [0.0, 1.0],
        [-1.0, 1.0],
        [-1.0, 0.0],
        [-1.0, -1.0],
        [0.0, -1.0],
        [1.0, -1.0],
    ];
    let tris = [
        [1, 0, 2],
        [3, 2, 0],
        [3, 0, 4],
        [5, 4, 0],
        [5, 0, 6],
        [7, 6, 0],
        [7, 0, 8],
        [1, 8, 0],
    ];
    Mesh::from_labeled(&points, &tris).expect("square mesh is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_triangle() -> Mesh {
        Mesh::new(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &[[0, 1, 2]]).unwrap()
    }

    #[test]
    fn lshape_minimal_mesh() {
        let m = make_lshape_mesh();
        assert_eq!(m.num_vertices(), 8);
        assert_eq!(m.num_elements(), 6);
        assert!((m.total_area() - 3.0).abs() < 1e-15);
        assert!(m.vertices().iter().all(|v| v.on_boundary));
        let expected = 2.0 * 2f64.sqrt() / (2.0 - 2f64.sqrt());
        assert!((m.audit_shape_regularity() - expected).abs() < 1e-12);
        assert_eq!(m.boundary_edges().len(), 8);
    }

    #[test]
    fn square_mesh() {
        let m = make_square_mesh();
        assert_eq!(m.num_elements(), 8);
        assert!((m.total_area() - 4.0).abs() < 1e-15);
        assert!(!m.vertices()[0].on_boundary);
        assert_eq!(m.vertices().iter().filter(|v| v.on_boundary).count(), 8);
        let (fine, _) = m.uniform_refine(1).unwrap();
        assert_eq!(fine.num_elements(), 16);
        assert_eq!(fine.vertices().iter().filter(|v| !v.on_boundary).count(), 5);
    }

    #[test]
    fn bisect_unit_triangle() {
        let m = unit_triangle();
        let (fine, map) = m.bisect(&[0], 1).unwrap();
        assert_eq!(fine.num_elements(), 2);
        for t in 0..2 {
            assert!((fine.area(t) - 0.25).abs() < 1e-15);
            assert!(fine.elements()[t].v.contains(&3));
            assert_eq!(
                fine.elements()[t].v[0],
                3,
                "newest vertex is opposite the refinement edge"
            );
        }
        assert_eq!(fine.point(3), [0.5, 0.5]);
        assert!(fine.vertices()[3].on_boundary);
        assert_eq!(map.parents(), &[0, 0]);
        assert_eq!(map.children(), vec![vec![0, 1]]);
    }

    #[test]
    fn empty_marking_is_identity() {
        let m = make_lshape_mesh();
        let (fine, map) = m.bisect(&[], 1).unwrap();
        assert_eq!(fine.vertices(), m.vertices());
        assert_eq!(fine.elements(), m.elements());
        assert!(map.midpoints().is_empty());
    }

    #[test]
    fn bisect_rejects_bad_input() {
        let m = make_lshape_mesh();
        assert!(matches!(m.bisect(&[0], 0), Err(MeshError::ZeroBisections)));
        assert!(matches!(
            m.bisect(&[6], 1),
            Err(MeshError::ElementOutOfRange { index: 6, count: 6 })
        ));
    }

    #[test]
    fn mesh_size_values() {
        let m = unit_triangle();
        assert!((m.mesh_size(0) - 0.5f64.sqrt()).abs() < 1e-15);
        let big = Mesh::new(&[[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]], &[[0, 1, 2]]).unwrap();
        assert!((big.mesh_size(0) - 1.0).abs() < 1e-15);
        let (fine, map) = m.bisect(&[0], 1).unwrap();
        for (c, &p) in map.parents().iter().enumerate() {
            assert!((fine.mesh_size(c) - m.mesh_size(p) / 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_ratio_of_equilateral_triangle() {
        let m = Mesh::new(&[[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]], &[[0, 1, 2]]).unwrap();
        assert!((m.audit_shape_regularity() - 2.0 * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn patches() {
        let (m, _) = make_square_mesh().uniform_refine(4).unwrap();
        let mut saw_interior = false;
        for t in 0..m.num_elements() {
            let p = m.patch(t);
            let nbrs = m.elements()[t].neighbor.iter().flatten().count();
            assert_eq!(p.len(), nbrs + 1);
            saw_interior |= nbrs == 3;
            for &s in &p {
                assert!(m.patch(s).contains(&t));
            }
        }
        assert!(saw_interior);
        let corner = Mesh::new(
            &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            &[[0, 1, 2], [1, 3, 2]],
        )
        .unwrap();
        assert_eq!(corner.patch(0), vec![0, 1]);
    }

    #[test]
    fn longest_edge_labeling() {
        let m = Mesh::new(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &[[1, 2, 0]]).unwrap();
        assert_eq!(m.elements()[0].v[0], 0);
    }

    #[test]
    fn rejects_degenerate_and_nonmanifold() {
        let e = Mesh::new(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], &[[0, 1, 2]]);
        assert!(matches!(e, Err(MeshError::DegenerateElement(0))));
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [1.0, 1.0]];
        let e = Mesh::new(&pts, &[[0, 1, 2], [0, 1, 3], [0, 1, 4]]);
        assert!(matches!(e, Err(MeshError::NonManifoldEdge(..))));
    }

    #[test]
    fn dump_round_trip() {
        let (m, _) = make_lshape_mesh().bisect(&[0, 3], 2).unwrap();
        let mut buf = Vec::new();
        m.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&format!(
            "vertices {}\nelements {}\n",
            m.num_vertices(),
            m.num_elements()
        )));
        let back = Mesh::read_dump(&buf[..]).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.elements(), m.elements());
    }

    #[test]
    fn read_dump_reports_line() {
        let text = "vertices 1\nelements 0\n0.0 zero 1\n";
        match Mesh::read_dump(text.as_bytes()) {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn compose_rejects_unrelated_maps() {
        let m = make_lshape_mesh();
        let (_, a) = m.bisect(&[0], 1).unwrap();
        let (_, b) = m.bisect(&[1], 1).unwrap();
        assert!(a.compose(&b).is_err());
    }
}
