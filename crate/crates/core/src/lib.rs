//! Adaptive P1 finite elements for quasi-linear elliptic problems
//! `-div(alpha(x, |grad u|^2) grad u) = f` in 2D, driven by an inexact
//! Kacanov iteration: one linear solve per mesh, a residual estimator,
//! marking and newest-vertex bisection.

pub mod assembly;
pub mod audit;
pub mod cli;
pub mod driver;
pub mod estimator;
pub mod linsolve;
pub mod marking;
pub mod mesh;
pub mod problems;
pub mod quadrature;
pub mod space;
pub mod sum;
