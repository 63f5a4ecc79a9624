//! Independent oracles shared by the integration tests. Nothing here calls the
//! library's own geometry, quadrature or estimator code.

#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::PI;

use afem::assembly::SparseSymMatrix;
use afem::mesh::Mesh;
use afem::space::P1Function;

/// Dense lower-triangular Cholesky factor, row-major.
pub fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                assert!(d > 0.0, "matrix is not positive definite");
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

pub fn dense(m: &SparseSymMatrix) -> Vec<Vec<f64>> {
    let n = m.dim();
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in m.row(i) {
            row[j] += v;
        }
    }
    a
}

pub fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let l = cholesky(a);
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

pub fn a_norm(a: &[Vec<f64>], x: &[f64]) -> f64 {
    a.iter()
        .zip(x)
        .map(|(row, xi)| xi * row.iter().zip(x).map(|(aij, xj)| aij * xj).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn sorted(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn signed_area(p: [[f64; 2]; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}

fn triangle(mesh: &Mesh, t: usize) -> [[f64; 2]; 3] {
    let v = mesh.elements()[t].v;
    v.map(|i| {
        let p = &mesh.vertices()[i];
        [p.x, p.y]
    })
}

/// Gradient of the linear interpolant of `vals` on a triangle, by Cramer's rule.
pub fn linear_gradient(p: [[f64; 2]; 3], vals: [f64; 3]) -> [f64; 2] {
    let (ax, ay) = (p[1][0] - p[0][0], p[1][1] - p[0][1]);
    let (bx, by) = (p[2][0] - p[0][0], p[2][1] - p[0][1]);
    let (du, dv) = (vals[1] - vals[0], vals[2] - vals[0]);
    let det = ax * by - ay * bx;
    [(du * by - dv * ay) / det, (ax * dv - bx * du) / det]
}

/// Uniform bucket grid over the vertices; `near` returns every vertex whose
/// cell meets the bounding box of a segment, so pairwise tests stay exhaustive.
struct Grid {
    origin: [f64; 2],
    cell: f64,
    n: usize,
    buckets: Vec<Vec<usize>>,
}

impl Grid {
    fn new(pts: &[[f64; 2]]) -> Grid {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pts {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let n = ((pts.len() as f64).sqrt().ceil() as usize).max(1);
        let cell = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-300) / n as f64;
        let mut grid = Grid {
            origin: lo,
            cell,
            n,
            buckets: vec![Vec::new(); n * n],
        };
        for (i, p) in pts.iter().enumerate() {
            let (cx, cy) = (grid.index(p[0], 0), grid.index(p[1], 1));
            grid.buckets[cy * n + cx].push(i);
        }
        grid
    }

    fn index(&self, x: f64, d: usize) -> usize {
        (((x - self.origin[d]) / self.cell).floor().max(0.0) as usize).min(self.n - 1)
    }

    fn near(&self, a: [f64; 2], b: [f64; 2]) -> Vec<usize> {
        let (x0, x1) = (self.index(a[0].min(b[0]), 0), self.index(a[0].max(b[0]), 0));
        let (y0, y1) = (self.index(a[1].min(b[1]), 1), self.index(a[1].max(b[1]), 1));
        let mut out = Vec::new();
        for cy in y0.saturating_sub(1)..=(y1 + 1).min(self.n - 1) {
            for cx in x0.saturating_sub(1)..=(x1 + 1).min(self.n - 1) {
                out.extend_from_slice(&self.buckets[cy * self.n + cx]);
            }
        }
        out
    }
}

/// Conformity by edge counting: every edge is shared by at most two
/// triangles, edges with one triangle lie on `on_boundary`, every triangle is
/// positively oriented and no vertex sits strictly inside an edge. Returns
/// the list of problems found.
pub fn conformity_problems(mesh: &Mesh, on_boundary: impl Fn([f64; 2]) -> bool) -> Vec<String> {
    let mut bad = Vec::new();
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for (t, el) in mesh.elements().iter().enumerate() {
        if signed_area(triangle(mesh, t)) <= 0.0 {
            bad.push(format!("element {t} is not positively oriented"));
        }
        for i in 0..3 {
            *count.entry(sorted(el.v[i], el.v[(i + 1) % 3])).or_default() += 1;
        }
    }
    let pts: Vec<[f64; 2]> = mesh.vertices().iter().map(|v| [v.x, v.y]).collect();
    let grid = Grid::new(&pts);
    for (&(a, b), &c) in &count {
        let mid = [0.5 * (pts[a][0] + pts[b][0]), 0.5 * (pts[a][1] + pts[b][1])];
        match c {
            1 if !on_boundary(mid) => bad.push(format!("edge {a}-{b} has one element but is interior")),
            1 | 2 => {}
            _ => bad.push(format!("edge {a}-{b} is shared by {c} elements")),
        }
        let (pa, pb) = (pts[a], pts[b]);
        let len2 = (pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2);
        for v in grid.near(pa, pb) {
            if v == a || v == b {
                continue;
            }
            let q = pts[v];
            let cross = (pb[0] - pa[0]) * (q[1] - pa[1]) - (pb[1] - pa[1]) * (q[0] - pa[0]);
            let s = ((q[0] - pa[0]) * (pb[0] - pa[0]) + (q[1] - pa[1]) * (pb[1] - pa[1])) / len2;
            if cross.abs() <= 1e-12 * len2 && s > 1e-12 && s < 1.0 - 1e-12 {
                bad.push(format!("vertex {v} hangs on edge {a}-{b}"));
            }
        }
    }
    bad
}

pub fn on_lshape_boundary(p: [f64; 2]) -> bool {
    let eq = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let (x, y) = (p[0], p[1]);
    eq(x.abs(), 1.0) || eq(y.abs(), 1.0) || (eq(x, 0.0) && y <= 0.0) || (eq(y, 0.0) && x >= 0.0)
}

pub fn on_square_boundary(p: [f64; 2]) -> bool {
    (p[0].abs() - 1.0).abs() < 1e-12 || (p[1].abs() - 1.0).abs() < 1e-12
}

pub fn total_area(mesh: &Mesh) -> f64 {
    (0..mesh.num_elements()).map(|t| signed_area(triangle(mesh, t))).sum()
}

/// Textbook residual estimator for `-Laplace u = f` with constant `f`:
/// `eta_T^2 = |T| |T| f^2 + |T|^{1/2} sum_S |S| (1/2 [grad u . n])^2`.
pub fn laplace_estimator(mesh: &Mesh, u: &P1Function, f: f64) -> Vec<f64> {
    let c = u.coeffs();
    let grads: Vec<[f64; 2]> = (0..mesh.num_elements())
        .map(|t| {
            let v = mesh.elements()[t].v;
            linear_gradient(triangle(mesh, t), [c[v[0]], c[v[1]], c[v[2]]])
        })
        .collect();
    let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (t, el) in mesh.elements().iter().enumerate() {
        for i in 0..3 {
            owners.entry(sorted(el.v[i], el.v[(i + 1) % 3])).or_default().push(t);
        }
    }
    let mut jump_sum = vec![0.0; mesh.num_elements()];
    for (&(a, b), ts) in &owners {
        if ts.len() != 2 {
            continue;
        }
        let pa = mesh.vertices()[a];
        let pb = mesh.vertices()[b];
        let (ex, ey) = (pb.x - pa.x, pb.y - pa.y);
        let len = ex.hypot(ey);
        let n = [ey / len, -ex / len];
        let d = [grads[ts[0]][0] - grads[ts[1]][0], grads[ts[0]][1] - grads[ts[1]][1]];
        let j = 0.5 * (d[0] * n[0] + d[1] * n[1]);
        for &t in ts {
            jump_sum[t] += len * j * j;
        }
    }
    (0..mesh.num_elements())
        .map(|t| {
            let area = signed_area(triangle(mesh, t));
            (area * area * f * f + area.sqrt() * jump_sum[t]).sqrt()
        })
        .collect()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// `int_0^tau alpha(t) dt` via the substitution `t = s^2`, which removes the
/// square-root behaviour some coefficients have at the origin.
pub fn primitive_by_quadrature(alpha: impl Fn(f64) -> f64, tau: f64, rule: &[(f64, f64)]) -> f64 {
    let half = 0.5 * tau.sqrt();
    rule.iter()
        .map(|&(x, w)| {
            let s = half * (x + 1.0);
            w * half * 2.0 * s * alpha(s * s)
        })
        .sum()
}

/// `-div(alpha(|grad u|^2) grad u)` for `u = r^{2/3} sin(2 phi / 3)` by central
/// differences of the flux, with the gradient written out in polar form.
pub fn fd_divergence(alpha: impl Fn(f64) -> f64, p: [f64; 2], h: f64) -> f64 {
    let flux = |q: [f64; 2]| {
        let r = q[0].hypot(q[1]);
        let mut phi = q[1].atan2(q[0]);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        let ur = 2.0 / 3.0 * r.powf(-1.0 / 3.0) * (2.0 * phi / 3.0).sin();
        let uphi = 2.0 / 3.0 * r.powf(-1.0 / 3.0) * (2.0 * phi / 3.0).cos();
        let g = [ur * phi.cos() - uphi * phi.sin(), ur * phi.sin() + uphi * phi.cos()];
        let a = alpha(g[0] * g[0] + g[1] * g[1]);
        [a * g[0], a * g[1]]
    };
    let dx = (flux([p[0] + h, p[1]])[0] - flux([p[0] - h, p[1]])[0]) / (2.0 * h);
    let dy = (flux([p[0], p[1] + h])[1] - flux([p[0], p[1] - h])[1]) / (2.0 * h);
    -(dx + dy)
}

/// Point of the L-shape away from the re-entrant corner and from the branch cut.
pub fn lshape_sample(u: f64, v: f64) -> [f64; 2] {
    let r = 0.1 + 0.85 * u;
    let phi = 0.05 + (1.5 * PI - 0.1) * v;
    [r * phi.cos(), r * phi.sin()]
}

/// Value of `u` at a physical point of element `t`, from barycentric coordinates
/// computed here.
pub fn eval_at(mesh: &Mesh, u: &P1Function, t: usize, x: [f64; 2]) -> f64 {
    let p = triangle(mesh, t);
    let total = signed_area(p);
    let l1 = signed_area([p[0], x, p[2]]) / total;
    let l2 = signed_area([p[0], p[1], x]) / total;
    let l0 = 1.0 - l1 - l2;
    let v = mesh.elements()[t].v;
    let c = u.coeffs();
    l0 * c[v[0]] + l1 * c[v[1]] + l2 * c[v[2]]
}

pub fn point_in(mesh: &Mesh, t: usize, bary: [f64; 3]) -> [f64; 2] {
    let p = triangle(mesh, t);
    [
        bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
        bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
    ]
}
