//! Runtime invariant suites on small instances. Each suite returns one
//! outcome per subject; `Fail` carries the first counterexample.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::assembly::{apply_form, assemble_full, dirichlet_potential, energy, AssemblyError};
use crate::driver::{run_problem, DriverError, RunConfig};
use crate::estimator::{estimate, residual_pairing, stability_ratio, EstimatorError};
use crate::linsolve::{kacanov_step, SolveError, SolveSettings};
use crate::marking::MarkingRule;
use crate::mesh::{make_lshape_mesh, make_square_mesh, Mesh, MeshError, Point};
use crate::problems::{catalog, exact_polar, Problem, ProblemError, ScalarAlpha};
use crate::quadrature::TriangleRule;
use crate::space::{gradients, h1_seminorm, prolong, DofMap, P1Function, SpaceError};
use crate::sum;

pub const SUITES: [&str; 14] = [
    "conformity",
    "shape-regularity",
    "prolongation",
    "problem-consistency",
    "ellipticity",
    "coercivity",
    "lemma-key-property",
    "energy-monotonicity",
    "galerkin-orthogonality",
    "successive-differences",
    "boundedness",
    "estimator-stability",
    "residual-upper-bound",
    "estimator-scaling",
];

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("unknown audit suite `{0}`")]
    UnknownSuite(String),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// The hypothesis of the invariant does not hold for this subject.
    Skip,
    /// A documented, intended violation.
    ExpectedFail,
}

impl Status {
    pub fn is_ok(self) -> bool {
        self != Status::Fail
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub suite: &'static str,
    pub subject: String,
    pub status: Status,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
            Status::ExpectedFail => "XFAIL",
        };
        write!(f, "{tag:<5} {}[{}] {}", self.suite, self.subject, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub samples: usize,
    pub seed: u64,
    /// Adaptive iterations for run-based suites.
    pub iterations: usize,
    pub max_dofs: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            samples: 500,
            seed: 20_240_617,
            iterations: 25,
            max_dofs: 20_000,
        }
    }
}

fn outcome(suite: &'static str, subject: &str, ok: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        suite,
        subject: subject.to_string(),
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

pub fn run_suite(name: &str, opts: &AuditOptions) -> Result<Vec<CheckOutcome>, AuditError> {
    match name {
        "conformity" => conformity_suite(opts),
        "shape-regularity" => shape_regularity_suite(opts),
        "prolongation" => prolongation_suite(opts),
        "problem-consistency" => problem_consistency_suite(opts),
        "ellipticity" => Ok(ellipticity_suite()),
        "coercivity" => coercivity_suite(opts),
        "lemma-key-property" => key_property_suite(opts),
        "energy-monotonicity" => energy_monotonicity_suite(opts),
        "galerkin-orthogonality" => galerkin_suite(opts),
        "successive-differences" => successive_differences_suite(opts),
        "boundedness" => boundedness_suite(opts),
        "estimator-stability" => estimator_stability_suite(opts),
        "residual-upper-bound" => residual_bound_suite(opts),
        "estimator-scaling" => estimator_scaling_suite(),
        other => Err(AuditError::UnknownSuite(other.to_string())),
    }
}

// ---------------------------------------------------------------- mesh

fn bbox(tri: &[Point; 3]) -> [f64; 4] {
    let xs = tri.iter().map(|p| p[0]);
    let ys = tri.iter().map(|p| p[1]);
    [
        xs.clone().fold(f64::INFINITY, f64::min),
        xs.fold(f64::NEG_INFINITY, f64::max),
        ys.clone().fold(f64::INFINITY, f64::min),
        ys.fold(f64::NEG_INFINITY, f64::max),
    ]
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn in_closed_triangle(p: Point, tri: &[Point; 3], tol: f64) -> bool {
    let d = orient(tri[0], tri[1], tri[2]);
    (0..3).all(|i| orient(tri[(i + 1) % 3], tri[(i + 2) % 3], p) / d >= -tol)
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// Brute-force pairwise conformity check. Returns human-readable
/// counterexamples (empty when conforming). Quadratic in the element count.
pub fn conformity_violations(mesh: &Mesh) -> Vec<String> {
    let mut out = Vec::new();
    let mut coords: Vec<(u64, u64, usize)> = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, v)| (v.x.to_bits(), v.y.to_bits(), i))
        .collect();
    coords.sort_unstable();
    for w in coords.windows(2) {
        if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
            out.push(format!("vertices {} and {} coincide", w[0].2, w[1].2));
        }
    }
    let n = mesh.num_elements();
    let tris: Vec<[Point; 3]> = (0..n).map(|t| mesh.element_points(t)).collect();
    let boxes: Vec<[f64; 4]> = tris.iter().map(bbox).collect();
    let els = mesh.elements();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (boxes[i], boxes[j]);
            if a[1] < b[0] || b[1] < a[0] || a[3] < b[2] || b[3] < a[2] {
                continue;
            }
            let shared = els[i].v.iter().filter(|v| els[j].v.contains(v)).count();
            if shared == 3 {
                out.push(format!("elements {i} and {j} have the same vertices"));
                continue;
            }
            for (p, q, vs) in [(i, j, els[j].v), (j, i, els[i].v)] {
                for (k, &v) in vs.iter().enumerate() {
                    if !els[p].v.contains(&v) && in_closed_triangle(tris[q][k], &tris[p], 1e-12) {
                        out.push(format!("vertex {v} of element {q} lies in element {p}"));
                    }
                }
            }
            for ei in 0..3 {
                for ej in 0..3 {
                    let [a0, a1] = els[i].edge(ei);
                    let [b0, b1] = els[j].edge(ej);
                    if [a0, a1].iter().any(|v| *v == b0 || *v == b1) {
                        continue;
                    }
                    if segments_cross(mesh.point(a0), mesh.point(a1), mesh.point(b0), mesh.point(b1)) {
                        out.push(format!("edges of elements {i} and {j} cross"));
                    }
                }
            }
        }
    }
    out
}

fn random_refinements(
    start: Mesh,
    steps: usize,
    max_elements: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Mesh>, AuditError> {
    let mut meshes = vec![start];
    for _ in 0..steps {
        let m = meshes.last().unwrap();
        let marked: Vec<usize> = (0..m.num_elements()).filter(|_| rng.gen_bool(0.15)).collect();
        let marked = if marked.is_empty() {
            vec![rng.gen_range(0..m.num_elements())]
        } else {
            marked
        };
        let (fine, _) = m.bisect(&marked, rng.gen_range(1..=2))?;
        if fine.num_elements() > max_elements {
            break;
        }
        meshes.push(fine);
    }
    Ok(meshes)
}

fn conformity_suite(opts: &AuditOptions) -> Result<Vec<CheckOutcome>, AuditError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    for (name, start, area) in [("lshape", make_lshape_mesh(), 3.0), ("square", make_square_mesh(), 4.0)] {
        let meshes = random_refinements(start, 12, 1000, &mut rng)?;
        let mut failure = None;
        for m in &meshes {
            if let Some(v) = conformity_violations(m).into_iter().next() {
                failure = Some(v);
                break;
            }
            let err = (m.total_area() - area).abs() / area;
            if err > 1e-12 {
                failure = Some(format!("area drift {err:.2e} at {} elements", m.num_elements()));
                break;
            }
        }
        let last = meshes.last().unwrap().num_elements();
        out.push(match failure {
            None => outcome(
                "conformity",
                name,
                true,
                format!("{} meshes up to {last} elements", meshes.len()),
            ),
            Some(f) => outcome("conformity", name, false, f),
        });
    }
    Ok(out)
}

fn shape_regularity_suite(opts: &AuditOptions) -> Result<Vec<CheckOutcome>, AuditError> {
    let mut out = Vec::new();
    for (mark, subject) in [
        (MarkingRule::Maximum(0.7), "ex1 max:0.7"),
        (MarkingRule::Doerfler(0.5), "ex1 doerfler:0.5"),
    ] {
        let problem = catalog("ex1")?;
        let initial = problem.initial_mesh().audit_shape_regularity();
        let mut worst = initial;
        let mut cfg = RunConfig::new("ex1");
        cfg.marking = mark;
        cfg.max_iterations = opts.iterations;
        cfg.max_dofs = opts.max_dofs;
        run_problem(&problem, &cfg, |s| worst = worst.max(s.mesh.audit_shape_regularity()))?;
        out.push(outcome(
            "shape-regularity",
            subject,
            worst <= 2.0 * initial,
            format!("max diam/inradius {worst:.4} vs initial {initial:.4}"),
        ));
    }
    Ok(out)
}

/// Barycentric coordinates of `p` in `tri`.
fn barycentric(p: Point, tri: &[Point; 3]) -> [f64; 3] {
    let d = orient(tri[0], tri[1], tri[2]);
    let l1 = orient(tri[2], tri[0], p) / d;
    let l2 = orient(tri[0], tri[1], p) / d;
    [1.0 - l1 - l2, l1, l2]
}

fn prolongation_suite(opts: &AuditOptions) -> Result<Vec<CheckOutcome>, AuditError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for round in 0..8 {
        let (coarse, _) = make_lshape_mesh().uniform_refine(1 + round % 3)?;
        let u = P1Function::from_coeffs(
            &coarse,
            (0..coarse.num_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )?;
        let marked: Vec<usize> = (0..coarse.num_elements()).filter(|_| rng.gen_bool(0.3)).collect();
        let (fine, map) = coarse.bisect(&marked, rng.gen_range(1..=3))?;
        let uf = prolong(&u, &coarse, &fine, &map)?;
        for t in 0..fine.num_elements() {
            let tri = fine.element_points(t);
            for _ in 0..3 {
                let (a, b): (f64, f64) = (rng.gen(), rng.gen());
                let (a, b) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
                let l = [1.0 - a - b, a, b];
                let x = [
                    l[0] * tri[0][0] + l[1] * tri[1][0] + l[2] * tri[2][0],
                    l[0] * tri[0][1] + l[1] * tri[1][1] + l[2] * tri[2][1],
                ];
                let parent = map.parents()[t];
                let lc = barycentric(x, &coarse.element_points(parent));
                let diff = (uf.eval_bary(&fine, t, l) - u.eval_bary(&coarse, parent, lc)).abs();
                worst = worst.max(diff);
                checked += 1;
            }
        }
    }
    Ok(vec![outcome(
        "prolongation",
        "lshape",
        worst <= 1e-12,
        format!("max pointwise difference {worst:.2e} over {checked} points"),
    )])
}

// ---------------------------------------------------------------- problems

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Largest relative mismatch of `A' = alpha` and of `alpha'` against central
/// differences at `samples` log-uniform points in `[1e-3, 1e3]`.
pub fn derivative_mismatch(alpha: ScalarAlpha, samples: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (mut prim, mut deriv) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let t = log_uniform(rng, 1e-3, 1e3);
        let h = 1e-5 * t;
        let fd_a = (alpha.primitive(t + h) - alpha.primitive(t - h)) / (2.0 * h);
        prim = prim.max((fd_a - alpha.alpha(t)).abs() / alpha.alpha(t).abs().max(1e-300));
        let fd_d = (alpha.alpha(t + h) - alpha.alpha(t - h)) / (2.0 * h);
        let d = alpha.d_alpha(t);
        if d != 0.0 || fd_d != 0.0 {
            // alpha/t is the natural scale of alpha'; it keeps the rounding
            // error of the difference quotient out of the ratio where alpha' is tiny.
            deriv = deriv.max((fd_d - d).abs() / (d.abs() + alpha.alpha(t).abs() / t));
        }
    }
    (prim, deriv)
}

/// `-div(alpha(|grad u|^2) grad u)` by central differences of the exact flux.
pub fn fd_flux_divergence(alpha: ScalarAlpha, p: Point, h: f64) -> f64 {
    let flux = |q: Point| {
        let g = exact_polar(q).1.expect("away from the corner");
        let a = alpha.alpha(g[0] * g[0] + g[1] * g[1]);
        [a * g[0], a * g[1]]
    };
    let dx = (flux([p[0] + h, p[1]])[0] - flux([p[0] - h, p[1]])[0]) / (2.0 * h);
    let dy = (flux([p[0], p[1] + h])[1] - flux([p[0], p[1] - h])[1]) / (2.0 * h);
    -(dx + dy)
}

/// A random point of the L-shape with `r` in `[0.1, 1]` and at angular
/// distance at least 0.05 from the legs through the corner.
pub fn random_lshape_point(rng: &mut ChaCha8Rng) -> Point {
    loop {
        let r = rng.gen_range(0.1..1.0);
        let phi: f64 = rng.gen_range(0.05..1.5 * PI - 0.05);
        let p = [r * phi.cos(), r * phi.sin()];
        if p[0].abs() < 0.999 && p[1].abs() < 0.999 {
            return p;
        }
    }
}

fn problem_consistency_suite(opts: &AuditOptions) -> Result<Vec<CheckOutcome>, AuditError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x51);
    let mut out = Vec::new();
    for name in crate::problems::PROBLEM_NAMES {
        let p = catalog(name)?;
        let Some(alpha) = p.scalar_alpha else { continue };
        let (prim, deriv) = derivative_mismatch(alpha, 100, &mut rng);
        let mut detail = format!("A'=alpha rel {prim:.1e}, alpha' rel {deriv:.1e}");
        let mut ok = prim <= 1e-6 && deriv <= 1e-6;

        let mut sign_ok = true;
        for _ in 0..100 {
            // Bounded above so that exponentially decaying derivatives stay
            // representable.
            let t = log_uniform(&mut rng, 1e-4, 1e2);
            let d = alpha.d_alpha(t);
            sign_ok &= if p.is_decreasing { d <= 0.0 } else { d > 0.0 };
        }
        detail += if sign_ok {
            ", monotonicity flag consistent"
        } else {
            ", monotonicity flag WRONG"
        };
        ok &= sign_ok;

        if p.exact.is_some() {
            let (mut f_err, mut q_err) = (0.0f64, 0.0f64);
            for _ in 0..100 {
                let x = random_lshape_point(&mut rng);
                let r = x[0].hypot(x[1]);
                f_err = f_err.max(((p.f)(x) - fd_flux_divergence(alpha, x, 1e-4 * r)).abs());
                let g = exact_polar(x).1.unwrap();
                let q = 4.0 / 9.0 * r.powf(-2.0 / 3.0);
                q_err = q_err.max(((g[0] * g[0] + g[1] * g[1]) - q).abs() / q);
            }
            detail += &format!(", f vs FD divergence {f_err:.1e}, |grad u|^2 identity {q_err:.1e}");
            ok &= f_err <= 1e-4 && q_err <= 1e-12;
        }
        if name == "curvature" {
            let tail = alpha.alpha(1e8);
            let bounded = (0..200).all(|i| {
                let t = 10f64.powf(-4.0 + 0.06 * i as f64);
                alpha.alpha(t) * t.sqrt() <= 1.0
            });
            detail += &format!(", alpha(1e8) = {tail:.1e}");
            ok &= tail < 1e-3 && bounded;
        }
        out.push(outcome("problem-consistency", name, ok, detail));
    }
    Ok(out)
}

/// Minimum and maximum of the flux slope over `[0, 10]` (fine grid) and a
/// logarithmic grid up to `1e6`.
pub fn flux_slope_range(alpha: ScalarAlpha) -> (f64, f64) {
    let linear = (0..=100_000).map(|i| 1e-4 * i as f64);
    let log = (0..=2000).map(|i| 10f64.powf(-6.0 + 0.006 * i as f64));
    linear
        .chain(log)
        .map(|t| alpha.flux_slope(t))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)))
}

fn ellipticity_suite() -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for name in crate::problems::PROBLEM_NAMES {
        let p = catalog(name).expect("catalog name");
        let Some(alpha) = p.scalar_alpha else { continue };
        let (lo, hi) = flux_slope_range(alpha);
        let found_ok = lo > 1e-6;
        let detail = format!("flux slope range [{lo:.4}, {hi:.4}]");
        let o = match (p.satisfies_ellipticity, p.bounds) {
            (true, Some(b)) => {
                let ok = found_ok && lo >= b.lower - 1e-9 && hi <= b.upper + 1e-9;
                outcome(
                    "ellipticity",
                    name,
                    ok,
                    format!("{detail} within [{}, {}]", b.lower, b.upper),
                )
            }
            (true, None) => outcome("ellipticity", name, false, "flagged elliptic without bounds".into()),
            (false, _) if !found_ok => CheckOutcome {
                suite: "ellipticity",
                subject: name.to_string(),
                status: Status::ExpectedFail,
                detail: format!("{detail}: no positive lower bound, as documented"),
            },
            (false, _) => outcome(
                "ellipticity",
                name,
                false,
                format!("{detail}: flagged non-elliptic but scan finds bounds"),
            ),
        };
        out.push(o);
    }
    out
}

fn coercivity_suite(opts: &AuditOptions) -> Result<Vec<CheckOutcome>, AuditError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xc0);
    let mut out = Vec::new();
    for name in crate::problems::PROBLEM_NAMES {
        let p = catalog(name)?;
        let Some(alpha) = p.scalar_alpha else { continue };
        let Some(b) = p.bounds else {
            out.push(CheckOutcome {
                suite: "coercivity",
                subject: name.into(),
                status: Status::Skip,
                detail: "no structural bounds claimed".into(),
            });
            continue;
        };
        let flux = |v: [f64; 2]| {
            let a = alpha.alpha(v[0] * v[0] + v[1] * v[1]);
            [a * v[0], a * v[1]]
        };
        let mut counter = None;
        for _ in 0..opts.samples {
            let mut rand_vec = || {
                let m = log_uniform(&mut rng, 1e-3, 1e2);
                let th: f64 = rng.gen_range(0.0..2.0 * PI);
                [m * th.cos(), m * th.sin()]
            };
            let (v, w) = (rand_vec(), rand_vec());
            let (fv, fw) = (flux(v), flux(w));
            let d = [v[0] - w[0], v[1] - w[1]];
            let df = [fv[0] - fw[0], fv[1] - fw[1]];
            let dd = d[0] * d[0] + d[1] * d[1];
            let mono = df[0] * d[0] + df[1] * d[1];
            let lip = (df[0] * df[0] + df[1] * df[1]).sqrt();
            let tol = 1e-10 * (1.0 + dd);
            if mono < b.lower * dd - tol || lip > b.upper * dd.sqrt() * (1.0 + 1e-10) + 1e-12 {
                counter = Some(format!(
                    "v = {v:?}, w = {w:?}: monotonicity {mono:.3e}, |diff| {dd:.3e}"
                ));
                break;
            }
        }
        out.push(match counter {
            None => outcome(
                "coercivity",
                name,
                true,
                format!(
                    "strong monotonicity c_a = {} and Lipschitz C_a = {} on {} pairs",
                    b.lower, b.upper, opts.samples
                ),
            ),
            Some(c) => outcome("coercivity", name, false, c),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------- Kacanov theory

/// `(J(v) - J(w)) - (a(w; v, v) - a(w; w, w)) / 2`; nonpositive when alpha is
/// decreasing.
pub fn key_property_gap(mesh: &Mesh, problem: &Problem, v: &P1Function, w: &P1Function) -> Result<f64, AuditError> {
    let jv = dirichlet_potential(mesh, v, problem, 5)?;
    let jw = dirichlet_potential(mesh, w, problem, 5)?;
    let avv = apply_form(mesh, w, v, v, problem, 5)?;
    let aww = apply_form(mesh, w, w, w, problem, 5)?;
    Ok((jv - jw) - 0.5 * (avv - aww))
}

fn random_function(mesh: &Mesh, rng: &mut ChaCha8Rng) -> Result<P1Function, SpaceError> {
    let scale = log_uniform(rng, 1e-2, 1.0);
    P1Function::from_coeffs(
        mesh,
        (0..mesh.num_vertices())
            .map(|_| scale * rng.gen_range(-1.0..1.0))
            .collect(),
    )
}

fn key_property_suite(opts: &AuditOptions) -> Result<Vec<CheckOutcome>, AuditError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4b);
    // 6 * 2^5 = 192 elements
    let (mesh, _) = make_lshape_mesh().uniform_refine(5)?;
    let mut out = Vec::new();
    for name in ["ex1", "ex2", "ex3", "ex4"] {
        let p = catalog(name)?;
        if !p.is_decreasing {
            out.push(CheckOutcome {
                suite: "lemma-key-property",
                subject: name.into(),
                status: Status::Skip,
                detail: "alpha is increasing; the inequality is not claimed".into(),
            });
            continue;
        }
        let mut worst = f64::NEG_INFINITY;
        let mut counter = None;
        for _ in 0..opts.samples {
            let v = random_function(&mesh, &mut rng)?;
            let w = random_function(&mesh, &mut rng)?;
            let gap = key_property_gap(&mesh, &p, &v, &w)?;
            worst = worst.max(gap);
            if gap > 1e-10 && counter.is_none() {
                counter = Some(format!("gap {gap:.3e} for a pair on {} elements", mesh.num_elements()));
            }
        }
        out.push(match counter {
            None => outcome(
                "lemma-key-property",
                name,
                true,
                format!(
                    "{} pairs on {} elements, max gap {worst:.2e}",
                    opts.samples,
                    mesh.num_elements()
                ),
            ),
            Some(c) => outcome("lemma-key-property", name, false, c),
        });
    }
    Ok(out)
}

fn audit_config(name: &str, opts: &AuditOptions) -> RunConfig {
    let mut cfg = RunConfig::new(name);
    cfg.max_iterations = opts.iterations;
    cfg.max_dofs = opts.max_dofs;
    cfg
}

/// Consecutive energies must not increase beyond `1e-10 (1 + |F|)`. Returns
/// the first violation as `(k, F_{k-1}, F_k)`.
pub fn energy_violation(energies: &[f64]) -> Option<(usize, f64, f64)> {
    energies
        .windows(2)
        .enumerate()
        .find_map(|(i, w)| (w[1] > w[0] + 1e-10 * (1.0 + w[0].abs())).then_some((i + 2, w[0], w[1])))
}

fn energy_monotonicity_suite(opts: &AuditOptions) -> Result<Vec<CheckOutcome>, AuditError> {
    let mut out = Vec::new();
    for name in ["ex1-g0", "ex2-g0", "ex4-g0", "curvature", "ex3-g0"] {
        let p = catalog(name)?;
        if !p.is_decreasing {
            out.push(CheckOutcome {
                suite: "energy-monotonicity",
                subject: name.into(),
                status: Status::Skip,
                detail: "alpha is increasing; monotone decrease is not claimed".into(),
            });
            continue;
        }
        // Same-mesh pair: F_k(u_k) against F_k(u_{k-1}), both with the load
        // quadrature of mesh k.
        let mut same_mesh: Option<(usize, f64, f64)> = None;
        let mut err = None;
        let records = run_problem(&p, &audit_config(name, opts), |s| {
            let pair = energy(s.mesh, s.u_prev, &p, 5).and_then(|e0| Ok((e0, energy(s.mesh, s.u_curr, &p, 5)?)));
            match pair {
                Ok((e0, e1)) => {
                    if same_mesh.is_none() && e1 > e0 + 1e-10 * (1.0 + e0.abs()) {
                        same_mesh = Some((s.record.k, e0, e1));
                    }
                }
                Err(e) => err = Some(e),
            }
        })?;
        if let Some(e) = err {
            return Err(e.into());
        }
        let energies: Vec<f64> = records.iter().filter_map(|r| r.energy).collect();
        out.push(match same_mesh {
            None => outcome(
                "energy-monotonicity",
                name,
                true,
                format!("{} Kacanov steps, F_k(u_k) <= F_k(u_{{k-1}})", records.len()),
            ),
            Some((k, a, b)) => outcome(
                "energy-monotonicity",
                name,
                false,
                format!("same-mesh energy rose at k = {k}: {a:.15e} -> {b:.15e}"),
            ),
        });
        let subject = format!("{name} across meshes");
        out.push(match energy_violation(&energies) {
            None => outcome(
                "energy-monotonicity",
                &subject,
                true,
                format!(
                    "{} iterations, F from {:.10e} to {:.10e}",
                    energies.len(),
                    energies[0],
                    energies[energies.len() - 1]
                ),
            ),
            // The load quadrature of a discontinuous f changes with the mesh.
            Some((k, a, b)) if name == "curvature" => CheckOutcome {
                suite: "energy-monotonicity",
                subject,
                status: Status::ExpectedFail,
                detail: format!(
                    "F rose at k = {k} ({a:.6e} -> {b:.6e}); quadrature of the discontinuous f differs between meshes"
                ),
            },
            Some((k, a, b)) => outcome(
                "energy-monotonicity",
                &subject,
                false,
                format!("F rose at k = {k}: {a:.15e} -> {b:.15e}"),
            ),
        });
    }
    Ok(out)
}

/// `|a(u_prev; u_curr, v) - L(v)|` and the scale `||A|| ||u|| + ||L||`, for
/// `v` with unit Euclidean norm over the free dofs.
pub fn galerkin_residual(
    mesh: &Mesh,
    u_prev: &P1Function,
    u_curr: &P1Function,
    problem: &Problem,
    v: &P1Function,
    quad_degree: u32,
) -> Result<(f64, f64), AuditError> {
    let full = assemble_full(mesh, u_prev, problem, quad_degree)?;
    let dofs = DofMap::new(mesh);
    let load_free = dofs.restrict(&full.load);
    let residual = apply_form(mesh, u_prev, u_curr, v, problem, quad_degree)?
        - crate::assembly::load_functional(mesh, v, problem, quad_degree)?;
    let scale = full.matrix.norm_inf() * sum::norm(u_curr.coeffs()) + sum::norm(&load_free);
    Ok((residual.abs(), scale))
}

/// Random discrete function vanishing on the boundary with unit Euclidean
/// norm of its free values.
pub fn random_unit_test_function(mesh: &Mesh, rng: &mut ChaCha8Rng) -> Result<P1Function, SpaceError> {
    let dofs = DofMap::new(mesh);
    let mut c = vec![0.0; mesh.num_vertices()];
    for &v in dofs.free() {
        c[v] = rng.gen_range(-1.0..1.0);
    }
    let n = sum::norm(&c);
    if n > 0.0 {
        c.iter_mut().for_each(|x| *x /= n);
    }
    P1Function::from_coeffs(mesh, c)
}

fn galerkin_suite(opts: &AuditOptions) -> Result<Vec<CheckOutcome>, AuditError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6a);
    let mut out = Vec::new();
    for name in ["ex1", "ex4", "curvature"] {
        let p = catalog(name)?;
        let mut worst = 0.0f64;
        let mut steps = 0;
        let mut err: Option<AuditError> = None;
        run_problem(&p, &audit_config(name, opts), |s| {
            if err.is_some() {
                return;
            }
            steps += 1;
            for _ in 0..20 {
                let r = random_unit_test_function(s.mesh, &mut rng)
                    .map_err(AuditError::from)
                    .and_then(|v| galerkin_residual(s.mesh, s.u_prev, s.u_curr, &p, &v, 5));
                match r {
                    Ok((res, scale)) => worst = worst.max(res / scale),
                    Err(e) => err = Some(e),
                }
            }
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        out.push(outcome(
            "galerkin-orthogonality",
            name,
            worst <= 1e-8,
            format!("max relative residual {worst:.2e} over {steps} steps x 20 test functions"),
        ));
    }
    Ok(out)
}

fn successive_differences_suite(opts: &AuditOptions) -> Result<Vec<CheckOutcome>, AuditError> {
    let p = catalog("ex1")?;
    let mut cfg = audit_config("ex1", opts);
    cfg.max_dofs = usize::MAX;
    let records = run_problem(&p, &cfg, |_| {})?;
    let n = records.len();
    if n < 3 {
        return Ok(vec![outcome(
            "successive-differences",
            "ex1",
            false,
            format!("only {n} iterations"),
        )]);
    }
    let (first, last) = (records[1].succ_diff, records[n - 1].succ_diff);
    Ok(vec![outcome(
        "successive-differences",
        "ex1",
        last <= first / 50.0,
        format!(
            "|grad(u_{n} - u_{})| = {last:.3e} vs |grad(u_2 - u_1)| = {first:.3e} (ratio {:.1})",
            n - 1,
            first / last
        ),
    )])
}

/// `||f||_{L2}` by the quadrature rule of the given degree.
pub fn rhs_l2_norm(mesh: &Mesh, problem: &Problem, quad_degree: u32) -> f64 {
    let rule = TriangleRule::with_degree(quad_degree).expect("valid degree");
    sum::compensated((0..mesh.num_elements()).map(|t| {
        let tri = mesh.element_points(t);
        rule.nodes(&tri, mesh.area(t))
            .map(|(x, _, w)| w * (problem.f)(x).powi(2))
            .sum::<f64>()
    }))
    .sqrt()
}

fn boundedness_suite(opts: &AuditOptions) -> Result<Vec<CheckOutcome>, AuditError> {
    let mut out = Vec::new();
    for name in ["ex1-g0", "ex3-g0", "ex4-g0", "poisson"] {
        let p = catalog(name)?;
        let c_a = p.bounds.map(|b| b.lower).expect("elliptic problems carry bounds");
        let c_p = p.domain.bounding_side() / (PI * 2f64.sqrt());
        let mut norms = Vec::new();
        let mut f_norm = 0.0;
        let mut err = None;
        run_problem(&p, &audit_config(name, opts), |s| match h1_seminorm(s.mesh, s.u_curr) {
            Ok(n) => {
                norms.push(n);
                f_norm = rhs_l2_norm(s.mesh, &p, 5);
            }
            Err(e) => err = Some(e),
        })?;
        if let Some(e) = err {
            return Err(e.into());
        }
        let bound = f_norm * c_p / c_a;
        let max = norms.iter().copied().fold(0.0, f64::max);
        // Discrete energy norms climb towards the continuous one as the mesh
        // resolves the solution, so the trend test asks for saturation: the
        // last five iterates gain at most 1% over everything before them.
        let split = norms.len().saturating_sub(5);
        let before = norms[..split].iter().copied().fold(0.0, f64::max);
        let last = norms[split..].iter().copied().fold(0.0, f64::max);
        let ok = max <= bound && split > 0 && last <= 1.01 * before;
        out.push(outcome(
            "boundedness",
            name,
            ok,
            format!("max |grad u_k| = {max:.6}, last five {last:.6} vs earlier {before:.6}, bound {bound:.4}"),
        ));
    }
    Ok(out)
}

fn estimator_stability_suite(opts: &AuditOptions) -> Result<Vec<CheckOutcome>, AuditError> {
    let p = catalog("ex1")?;
    let mut cfg = audit_config("ex1", opts);
    cfg.max_iterations = opts.iterations + 1;
    cfg.max_dofs = usize::MAX;
    let mut ratios = Vec::new();
    let mut marked_eta = Vec::new();
    let mut marked_h = Vec::new();
    let mut err = None;
    run_problem(&p, &cfg, |s| {
        match stability_ratio(s.mesh, s.estimates, s.u_curr, &p, 5) {
            Ok(r) => ratios.push(r),
            Err(e) => err = Some(e),
        }
        if !s.marked.is_empty() {
            marked_eta.push(s.max_marked_eta());
            marked_h.push(s.max_marked_size());
        }
    })?;
    if let Some(e) = err {
        return Err(e.into());
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let n = marked_eta.len();
    let eta_drop = marked_eta[0] / marked_eta[n - 1];
    let half = n / 2;
    let early_h = marked_h[..half].iter().copied().fold(0.0, f64::max);
    let late_h = marked_h[half..].iter().copied().fold(0.0, f64::max);
    Ok(vec![
        outcome(
            "estimator-stability",
            "ex1 stability",
            max_ratio <= 2.0 * ratios[0],
            format!(
                "max eta/(|grad u|_patch + |f|) = {max_ratio:.4}, initial {:.4}",
                ratios[0]
            ),
        ),
        outcome(
            "estimator-stability",
            "ex1 marked eta",
            eta_drop >= 50.0,
            format!("max marked eta fell by {eta_drop:.1}x over {n} iterations"),
        ),
        outcome(
            "estimator-stability",
            "ex1 marked size",
            late_h < early_h,
            format!("max H over marked elements: {early_h:.4} early, {late_h:.4} late"),
        ),
    ])
}

/// Upper-bound constant `max |<R, v>| / sum_T eta(T) |grad v|_{patch(T)}`
/// over random `v` on a two-sweep uniform refinement.
pub fn residual_bound_constant(
    mesh: &Mesh,
    u_prev: &P1Function,
    u_curr: &P1Function,
    problem: &Problem,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, AuditError> {
    let est = estimate(mesh, u_prev, u_curr, problem, 5)?;
    let (fine, map) = mesh.uniform_refine(2)?;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let v = random_unit_test_function(&fine, rng)?;
        let pairing = residual_pairing(mesh, &fine, &map, u_prev, u_curr, problem, &v, 5)?;
        let grads = gradients(&fine, &v)?;
        let mut local = vec![0.0; mesh.num_elements()];
        for (t, g) in grads.iter().enumerate() {
            local[map.parents()[t]] += fine.area(t) * (g[0] * g[0] + g[1] * g[1]);
        }
        let bound = sum::compensated(
            (0..mesh.num_elements()).map(|t| est.eta[t] * mesh.patch(t).iter().map(|&s| local[s]).sum::<f64>().sqrt()),
        );
        worst = worst.max(pairing.abs() / bound);
    }
    Ok(worst)
}

fn residual_bound_suite(opts: &AuditOptions) -> Result<Vec<CheckOutcome>, AuditError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7e);
    let p = catalog("ex1")?;
    let mut cfg = audit_config("ex1", opts);
    cfg.max_iterations = 14;
    cfg.max_dofs = usize::MAX;
    let mut constants = Vec::new();
    let mut err = None;
    run_problem(&p, &cfg, |s| {
        if [4, 9, 14].contains(&s.record.k) {
            match residual_bound_constant(s.mesh, s.u_prev, s.u_curr, &p, 10, &mut rng) {
                Ok(c) => constants.push(c),
                Err(e) => err = Some(e),
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let first = constants[0];
    let max = constants.iter().copied().fold(0.0, f64::max);
    Ok(vec![outcome(
        "residual-upper-bound",
        "ex1",
        max <= 2.0 * first,
        format!("fitted constants {constants:.3?}"),
    )])
}

fn estimator_scaling_suite() -> Result<Vec<CheckOutcome>, AuditError> {
    let mut p = catalog("poisson")?;
    p.g = std::sync::Arc::new(|x| (x[0] + 2.0 * x[1]).sin());
    p.homogeneous_boundary = false;
    let (mesh, _) = make_square_mesh().uniform_refine(3)?;
    let settings = SolveSettings::default();
    let zero = P1Function::zeros(&mesh);
    let (u, _) = kacanov_step(&mesh, &zero, &p, &settings)?;
    let base = estimate(&mesh, &zero, &u, &p, 5)?;
    let mut worst = 0.0f64;
    for s in [3.7, -0.25, 40.0] {
        let ps = p.scaled_data(s);
        let (us, _) = kacanov_step(&mesh, &zero, &ps, &settings)?;
        let est = estimate(&mesh, &zero, &us, &ps, 5)?;
        for (a, b) in est.eta.iter().zip(&base.eta) {
            worst = worst.max((a - s.abs() * b).abs() / (s.abs() * base.global));
        }
    }
    Ok(vec![outcome(
        "estimator-scaling",
        "poisson",
        worst <= 1e-12,
        format!("max |eta(s data) - |s| eta(data)| / (|s| eta) = {worst:.2e}"),
    )])
}
