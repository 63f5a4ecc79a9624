//! Benchmark problems `-div(alpha(x, |grad u|^2) grad u) = f`, `u = g` on the
//! boundary.
//!
//! The four L-shape examples share the singular solution
//! `u(r, phi) = r^{2/3} sin(2 phi / 3)`; `f` and `g` are manufactured from it.
//! The curvature problem has no known solution.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::mesh::{make_lshape_mesh, make_square_mesh, Mesh, Point};

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("unknown problem `{0}` (expected one of ex1, ex2, ex3, ex4, curvature, poisson)")]
    Unknown(String),
    #[error("manufactured right-hand side evaluated too close to the corner (r = {0:e})")]
    AtCorner(f64),
}

/// The coefficient `alpha(x, t)`, with `t = |grad u|^2`.
pub trait Diffusivity: Send + Sync {
    fn value(&self, x: Point, t: f64) -> f64;

    /// Partial derivative with respect to `t`.
    fn derivative(&self, x: Point, t: f64) -> f64;

    /// `A(x, tau) = int_0^tau alpha(x, t) dt`, when a closed form is known.
    fn primitive(&self, _x: Point, _tau: f64) -> Option<f64> {
        None
    }

    fn depends_on_x(&self) -> bool {
        false
    }

    /// Spatial gradient `grad_x alpha(x, t)`; only consulted when
    /// [`Diffusivity::depends_on_x`] is true.
    fn spatial_gradient(&self, _x: Point, _t: f64) -> [f64; 2] {
        [0.0, 0.0]
    }
}

/// The x-independent coefficients used by the catalog.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarAlpha {
    /// `1/(1+t) + 1/2`
    Ex1,
    /// `1/(1+t) + 1/10`
    Ex2,
    /// `1 - exp(-3t/2)/2`
    Ex3,
    /// `2 - sqrt(t)/(1+sqrt(t))`
    Ex4,
    /// `1/sqrt(1+t)`
    Curvature,
    Constant(f64),
}

impl ScalarAlpha {
    pub fn alpha(self, t: f64) -> f64 {
        match self {
            ScalarAlpha::Ex1 => 1.0 / (1.0 + t) + 0.5,
            ScalarAlpha::Ex2 => 1.0 / (1.0 + t) + 0.1,
            ScalarAlpha::Ex3 => 1.0 - 0.5 * (-1.5 * t).exp(),
            ScalarAlpha::Ex4 => {
                let s = t.sqrt();
                2.0 - s / (1.0 + s)
            }
            ScalarAlpha::Curvature => 1.0 / (1.0 + t).sqrt(),
            ScalarAlpha::Constant(c) => c,
        }
    }

    /// `alpha'(t)`; for `Ex4` this diverges to `-inf` at `t = 0`.
    pub fn d_alpha(self, t: f64) -> f64 {
        match self {
            ScalarAlpha::Ex1 | ScalarAlpha::Ex2 => -1.0 / ((1.0 + t) * (1.0 + t)),
            ScalarAlpha::Ex3 => 0.75 * (-1.5 * t).exp(),
            ScalarAlpha::Ex4 => {
                let s = t.sqrt();
                -0.5 / (s * (1.0 + s) * (1.0 + s))
            }
            ScalarAlpha::Curvature => -0.5 * (1.0 + t).powf(-1.5),
            ScalarAlpha::Constant(_) => 0.0,
        }
    }

    /// `A(tau) = int_0^tau alpha`.
    pub fn primitive(self, tau: f64) -> f64 {
        match self {
            ScalarAlpha::Ex1 => tau.ln_1p() + 0.5 * tau,
            ScalarAlpha::Ex2 => tau.ln_1p() + 0.1 * tau,
            ScalarAlpha::Ex3 => tau + ((-1.5 * tau).exp() - 1.0) / 3.0,
            ScalarAlpha::Ex4 => {
                let s = tau.sqrt();
                tau + 2.0 * s - 2.0 * s.ln_1p()
            }
            ScalarAlpha::Curvature => 2.0 * ((1.0 + tau).sqrt() - 1.0),
            ScalarAlpha::Constant(c) => c * tau,
        }
    }

    /// `alpha(t^2) + 2 t^2 alpha'(t^2)`, the derivative of the flux magnitude
    /// `t -> alpha(t^2) t`.
    pub fn flux_slope(self, t: f64) -> f64 {
        let s = t * t;
        if s == 0.0 {
            return self.alpha(0.0);
        }
        self.alpha(s) + 2.0 * s * self.d_alpha(s)
    }
}

impl Diffusivity for ScalarAlpha {
    fn value(&self, _x: Point, t: f64) -> f64 {
        self.alpha(t)
    }

    fn derivative(&self, _x: Point, t: f64) -> f64 {
        self.d_alpha(t)
    }

    fn primitive(&self, _x: Point, tau: f64) -> Option<f64> {
        Some(ScalarAlpha::primitive(*self, tau))
    }
}

pub type ScalarField = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    LShape,
    Square,
}

impl Domain {
    pub fn initial_mesh(self) -> Mesh {
        match self {
            Domain::LShape => make_lshape_mesh(),
            Domain::Square => make_square_mesh(),
        }
    }

    pub fn area(self) -> f64 {
        match self {
            Domain::LShape => 3.0,
            Domain::Square => 4.0,
        }
    }

    /// Side length of an axis-aligned square containing the domain.
    pub fn bounding_side(self) -> f64 {
        2.0
    }

    pub fn contains(self, p: Point) -> bool {
        let inside_square = p[0].abs() < 1.0 && p[1].abs() < 1.0;
        match self {
            Domain::Square => inside_square,
            Domain::LShape => inside_square && !(p[0] >= 0.0 && p[1] <= 0.0),
        }
    }
}

/// `c_a <= alpha(t^2) + 2 t^2 alpha'(t^2) <= C_a` for all `t > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralBounds {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub domain: Domain,
    pub alpha: Arc<dyn Diffusivity>,
    /// Set for catalog problems whose coefficient has no x-dependence.
    pub scalar_alpha: Option<ScalarAlpha>,
    pub f: ScalarField,
    pub g: ScalarField,
    /// True when `g` is identically zero.
    pub homogeneous_boundary: bool,
    pub exact: Option<ScalarField>,
    pub exact_grad: Option<VectorField>,
    pub bounds: Option<StructuralBounds>,
    pub satisfies_ellipticity: bool,
    pub is_decreasing: bool,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("scalar_alpha", &self.scalar_alpha)
            .field("bounds", &self.bounds)
            .field("satisfies_ellipticity", &self.satisfies_ellipticity)
            .field("is_decreasing", &self.is_decreasing)
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn initial_mesh(&self) -> Mesh {
        self.domain.initial_mesh()
    }

    /// Same coefficient and right-hand side, with `g = 0` and no exact solution.
    pub fn homogenized(&self) -> Problem {
        let mut p = self.clone();
        if !p.homogeneous_boundary {
            p.name = format!("{}-g0", self.name);
        }
        p.g = Arc::new(|_| 0.0);
        p.homogeneous_boundary = true;
        p.exact = None;
        p.exact_grad = None;
        p
    }

    /// Same problem with every datum scaled: `f -> s f`, `g -> s g`.
    pub fn scaled_data(&self, s: f64) -> Problem {
        let mut p = self.clone();
        let (f, g) = (self.f.clone(), self.g.clone());
        p.f = Arc::new(move |x| s * f(x));
        p.g = Arc::new(move |x| s * g(x));
        p.exact = self.exact.clone().map(|u| Arc::new(move |x| s * u(x)) as ScalarField);
        p.exact_grad = self.exact_grad.clone().map(|du| {
            Arc::new(move |x| {
                let d = du(x);
                [s * d[0], s * d[1]]
            }) as VectorField
        });
        p
    }
}

pub const PROBLEM_NAMES: [&str; 6] = ["ex1", "ex2", "ex3", "ex4", "curvature", "poisson"];

/// Angle in `[0, 2 pi)` measured from the positive x axis.
fn polar(p: Point) -> (f64, f64) {
    let r = p[0].hypot(p[1]);
    let mut phi = p[1].atan2(p[0]);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    (r, phi)
}

/// `u = r^{2/3} sin(2 phi / 3)` and its Cartesian gradient; the gradient is
/// `None` at the origin, where it is singular.
pub fn exact_polar(p: Point) -> (f64, Option<[f64; 2]>) {
    let (r, phi) = polar(p);
    if r == 0.0 {
        return (0.0, None);
    }
    let u = r.powf(2.0 / 3.0) * (2.0 * phi / 3.0).sin();
    // u_r e_r + (u_phi / r) e_phi collapses to (2/3) r^{-1/3} (-sin(phi/3), cos(phi/3)).
    let c = 2.0 / 3.0 * r.powf(-1.0 / 3.0);
    (u, Some([-c * (phi / 3.0).sin(), c * (phi / 3.0).cos()]))
}

/// Right-hand side making `r^{2/3} sin(2 phi / 3)` the solution:
/// `f = alpha'(q) (16/81) r^{-2} sin(2 phi / 3)` with `q = |grad u|^2 = (4/9) r^{-2/3}`.
pub fn manufactured_f(alpha_prime: impl Fn(f64) -> f64, p: Point) -> Result<f64, ProblemError> {
    let (r, phi) = polar(p);
    if r < 1e-14 {
        return Err(ProblemError::AtCorner(r));
    }
    let q = 4.0 / 9.0 * r.powf(-2.0 / 3.0);
    Ok(alpha_prime(q) * (16.0 / 81.0) * (2.0 * phi / 3.0).sin() / (r * r))
}

fn lshape_problem(
    name: &str,
    alpha: ScalarAlpha,
    bounds: Option<StructuralBounds>,
    ellip: bool,
    decr: bool,
) -> Problem {
    Problem {
        name: name.to_string(),
        domain: Domain::LShape,
        alpha: Arc::new(alpha),
        scalar_alpha: Some(alpha),
        // NaN at the corner itself; quadrature nodes never land there.
        f: Arc::new(move |p| manufactured_f(|t| alpha.d_alpha(t), p).unwrap_or(f64::NAN)),
        g: Arc::new(|p| exact_polar(p).0),
        homogeneous_boundary: false,
        exact: Some(Arc::new(|p| exact_polar(p).0)),
        exact_grad: Some(Arc::new(|p| exact_polar(p).1.unwrap_or([f64::NAN; 2]))),
        bounds,
        satisfies_ellipticity: ellip,
        is_decreasing: decr,
    }
}

/// Right-hand side of the curvature problem: 5 on the inner disk, -3 on the
/// ring `1/3 < |x| <= 2/3`, 0 outside.
pub fn curvature_f(p: Point) -> f64 {
    let r = p[0].hypot(p[1]);
    if r <= 1.0 / 3.0 {
        5.0
    } else if r <= 2.0 / 3.0 {
        -3.0
    } else {
        0.0
    }
}

/// Look up a problem by name. A `-g0` suffix (e.g. `ex1-g0`) selects the
/// homogenized variant with zero boundary data.
pub fn catalog(name: &str) -> Result<Problem, ProblemError> {
    if let Some(base) = name.strip_suffix("-g0") {
        if PROBLEM_NAMES.contains(&base) {
            return catalog(base).map(|p| p.homogenized());
        }
    }
    let b = |lower, upper| Some(StructuralBounds { lower, upper });
    let p = match name {
        // flux slope (1-s)/(1+s)^2 + 1/2 has its minimum 3/8 at s = 3
        "ex1" => lshape_problem(name, ScalarAlpha::Ex1, b(0.375, 1.5), true, true),
        "ex2" => lshape_problem(name, ScalarAlpha::Ex2, None, false, true),
        // 1 + exp(-3s/2)(3s/2 - 1/2) ranges over [1/2, 1 + e^{-3/2}]
        "ex3" => lshape_problem(name, ScalarAlpha::Ex3, b(0.5, 1.0 + (-1.5f64).exp()), true, false),
        // 2 - t/(1+t) - t/(1+t)^2 decreases from 2 to 1
        "ex4" => lshape_problem(name, ScalarAlpha::Ex4, b(1.0, 2.0), true, true),
        "curvature" => Problem {
            name: name.to_string(),
            domain: Domain::Square,
            alpha: Arc::new(ScalarAlpha::Curvature),
            scalar_alpha: Some(ScalarAlpha::Curvature),
            f: Arc::new(curvature_f),
            g: Arc::new(|_| 0.0),
            homogeneous_boundary: true,
            exact: None,
            exact_grad: None,
            bounds: None,
            satisfies_ellipticity: false,
            is_decreasing: true,
        },
        "poisson" => Problem {
            name: name.to_string(),
            domain: Domain::Square,
            alpha: Arc::new(ScalarAlpha::Constant(1.0)),
            scalar_alpha: Some(ScalarAlpha::Constant(1.0)),
            f: Arc::new(|_| 1.0),
            g: Arc::new(|_| 0.0),
            homogeneous_boundary: true,
            exact: None,
            exact_grad: None,
            bounds: b(1.0, 1.0),
            satisfies_ellipticity: true,
            is_decreasing: true,
        },
        other => return Err(ProblemError::Unknown(other.to_string())),
    };
    Ok(p)
}
