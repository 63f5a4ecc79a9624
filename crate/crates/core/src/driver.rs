//! The adaptive loop: SOLVE, ESTIMATE, MARK, REFINE, with one Kacanov step
//! per mesh, plus CSV output and rate fitting.

use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::assembly::{energy, AssemblyError};
use crate::estimator::{estimate, EstimatorError, LocalEstimates};
use crate::linsolve::{h1_distance, kacanov_step, SolveError, SolveSettings};
use crate::marking::{mark, MarkingError, MarkingRule};
use crate::mesh::{Mesh, MeshError};
use crate::problems::{catalog, Problem, ProblemError};
use crate::space::{h1_seminorm_error, prolong, DofMap, P1Function, SpaceError};

pub const CSV_HEADER: &str = "k,dofs,elements,eta,energy,h1_error,succ_diff,solve_iters";

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("linear solve failed at iteration {k}: {source}")]
    Solver {
        k: usize,
        records: Vec<IterationRecord>,
        #[source]
        source: SolveError,
    },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Marking(#[from] MarkingError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub marking: MarkingRule,
    pub n_bisect: usize,
    pub eta_tol: f64,
    pub max_dofs: usize,
    pub max_iterations: usize,
    pub quad_degree: u32,
    pub cg_tol: f64,
    /// Directory for `records.csv` and dumps; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Iterations at which mesh, solution and estimator are dumped.
    pub dump_at: Vec<usize>,
}

impl RunConfig {
    pub fn new(problem: &str) -> Self {
        RunConfig {
            problem: problem.to_string(),
            marking: MarkingRule::Maximum(0.7),
            n_bisect: 2,
            eta_tol: 1e-6,
            max_dofs: 500_000,
            max_iterations: 60,
            quad_degree: 5,
            cg_tol: 1e-10,
            out_dir: None,
            dump_at: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        let bad = |m: &str| Err(DriverError::Config(m.to_string()));
        if self.eta_tol.is_nan() || self.eta_tol <= 0.0 {
            return bad("eta tolerance must be positive");
        }
        if self.cg_tol.is_nan() || self.cg_tol <= 0.0 {
            return bad("solver tolerance must be positive");
        }
        if self.n_bisect == 0 {
            return bad("at least one bisection per marked element is required");
        }
        if self.max_iterations == 0 {
            return bad("max iterations must be positive");
        }
        crate::quadrature::TriangleRule::with_degree(self.quad_degree)
            .map_err(|e| DriverError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub dofs: usize,
    pub elements: usize,
    pub global_eta: f64,
    /// `None` when the coefficient has no registered primitive.
    pub energy: Option<f64>,
    pub h1_error: Option<f64>,
    pub succ_diff: f64,
    pub solve_iters: usize,
}

impl IterationRecord {
    pub fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        format!(
            "{},{},{},{:.16e},{},{},{:.16e},{}",
            self.k,
            self.dofs,
            self.elements,
            self.global_eta,
            opt(self.energy),
            opt(self.h1_error),
            self.succ_diff,
            self.solve_iters
        )
    }
}

/// Everything known at the end of one adaptive iteration, handed to the
/// observer of [`run_problem`].
pub struct StepView<'a> {
    pub record: &'a IterationRecord,
    pub mesh: &'a Mesh,
    /// The previous iterate prolonged onto `mesh`.
    pub u_prev: &'a P1Function,
    pub u_curr: &'a P1Function,
    pub estimates: &'a LocalEstimates,
    /// Empty on the final iteration.
    pub marked: &'a [usize],
}

impl StepView<'_> {
    pub fn max_value(&self) -> f64 {
        self.u_curr.max_value()
    }

    /// Largest estimate over the marked elements.
    pub fn max_marked_eta(&self) -> f64 {
        self.marked.iter().map(|&t| self.estimates.eta[t]).fold(0.0, f64::max)
    }

    /// Largest `H_T` over the marked elements.
    pub fn max_marked_size(&self) -> f64 {
        self.marked.iter().map(|&t| self.mesh.mesh_size(t)).fold(0.0, f64::max)
    }
}

/// Run the catalog problem named in `config`.
pub fn run_adaptive(config: &RunConfig) -> Result<Vec<IterationRecord>, DriverError> {
    let problem = catalog(&config.problem)?;
    run_problem(&problem, config, |_| {})
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DriverError + '_ {
    move |source| DriverError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn dump_to(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), DriverError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Run the adaptive loop for an explicit problem. `observe` sees every
/// iteration after its record is formed. With an output directory the CSV is
/// written row by row, so a solver failure leaves the completed rows behind.
pub fn run_problem(
    problem: &Problem,
    config: &RunConfig,
    mut observe: impl FnMut(&StepView),
) -> Result<Vec<IterationRecord>, DriverError> {
    config.validate()?;
    let settings = SolveSettings {
        tol: config.cg_tol,
        max_iter: None,
        quad_degree: config.quad_degree,
    };

    let mut csv = match &config.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join("records.csv");
            let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
            writeln!(w, "{CSV_HEADER}").map_err(io_err(&path))?;
            Some((path, w))
        }
        None => None,
    };

    let mut mesh = problem.initial_mesh();
    let mut u_prev = P1Function::zeros(&mesh);
    let mut records = Vec::new();

    for k in 1..=config.max_iterations {
        let (u, report) = match kacanov_step(&mesh, &u_prev, problem, &settings) {
            Ok(step) => step,
            Err(source) => return Err(DriverError::Solver { k, records, source }),
        };
        let est = estimate(&mesh, &u_prev, &u, problem, config.quad_degree)?;
        let energy = match energy(&mesh, &u, problem, config.quad_degree) {
            Ok(e) => Some(e),
            Err(AssemblyError::MissingPrimitive(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let h1_error = match &problem.exact_grad {
            Some(grad) => Some(h1_seminorm_error(&mesh, &u, |x| grad(x), config.quad_degree)?),
            None => None,
        };
        let record = IterationRecord {
            k,
            dofs: DofMap::new(&mesh).num_free(),
            elements: mesh.num_elements(),
            global_eta: est.global,
            energy,
            h1_error,
            succ_diff: h1_distance(&mesh, &u, &u_prev)?,
            solve_iters: report.iterations,
        };
        let stop = record.global_eta <= config.eta_tol || record.dofs > config.max_dofs || k == config.max_iterations;
        let marked = if stop {
            Vec::new()
        } else {
            mark(&est.eta, config.marking)?
        };

        if let Some((path, w)) = csv.as_mut() {
            writeln!(w, "{}", record.to_csv_line())
                .and_then(|_| w.flush())
                .map_err(io_err(path))?;
        }
        if let Some(dir) = &config.out_dir {
            if config.dump_at.contains(&k) {
                dump_to(&dir.join(format!("mesh_{k:03}.txt")), |w| mesh.write_dump(w))?;
                dump_to(&dir.join(format!("solution_{k:03}.txt")), |w| u.write_dump(w))?;
                dump_to(&dir.join(format!("eta_{k:03}.txt")), |w| est.write_dump(w))?;
            }
        }
        observe(&StepView {
            record: &record,
            mesh: &mesh,
            u_prev: &u_prev,
            u_curr: &u,
            estimates: &est,
            marked: &marked,
        });
        records.push(record);
        if stop {
            break;
        }
        let (fine, map) = mesh.bisect(&marked, config.n_bisect)?;
        u_prev = prolong(&u, &mesh, &fine, &map)?;
        mesh = fine;
    }
    Ok(records)
}

#[derive(Debug, Error, PartialEq)]
pub enum RateError {
    #[error("need at least 3 records with values in the window, found {0}")]
    InsufficientData(usize),
    #[error("non-positive value cannot enter a log-log fit")]
    NonPositive,
}

/// Which records enter a rate fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateWindow {
    All,
    LastN(usize),
    /// Records with `dofs >= final dofs / 10`.
    FinalDecade,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateQuantity {
    H1Error,
    Eta,
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64, RateError> {
    if points.len() < 3 {
        return Err(RateError::InsufficientData(points.len()));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(RateError::NonPositive);
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(RateError::InsufficientData(1));
    }
    Ok(sxy / sxx)
}

/// Slope of the chosen quantity against dofs over the window.
pub fn fit_rate_of(records: &[IterationRecord], window: RateWindow, quantity: RateQuantity) -> Result<f64, RateError> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| {
            let y = match quantity {
                RateQuantity::H1Error => r.h1_error?,
                RateQuantity::Eta => r.global_eta,
            };
            (r.dofs > 0).then_some((r.dofs as f64, y))
        })
        .collect();
    let selected: Vec<(f64, f64)> = match window {
        RateWindow::All => pts,
        RateWindow::LastN(n) => pts[pts.len().saturating_sub(n)..].to_vec(),
        RateWindow::FinalDecade => {
            let last = pts.last().map_or(0.0, |p| p.0);
            pts.into_iter().filter(|p| p.0 >= last / 10.0).collect()
        }
    };
    fit_slope(&selected)
}

/// Slope of the H1 error against dofs.
pub fn fit_rate(records: &[IterationRecord], window: RateWindow) -> Result<f64, RateError> {
    fit_rate_of(records, window, RateQuantity::H1Error)
}

#[derive(Debug, Error, PartialEq)]
pub enum CsvError {
    #[error("missing or wrong header")]
    Header,
    #[error("line {line}: {msg}")]
    Row { line: usize, msg: String },
    #[error("read failure: {0}")]
    Io(String),
}

pub fn write_records<W: Write>(mut w: W, records: &[IterationRecord]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.to_csv_line())?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<IterationRecord>, CsvError> {
    let mut lines = r.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == CSV_HEADER => {}
        Some((_, Err(e))) => return Err(CsvError::Io(e.to_string())),
        _ => return Err(CsvError::Header),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| CsvError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = |msg: &str| CsvError::Row {
            line: i + 1,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 8 {
            return Err(row("expected 8 fields"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| row(&format!("bad integer `{s}`")));
        let real = |s: &str| s.parse::<f64>().map_err(|_| row(&format!("bad number `{s}`")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { real(s).map(Some) };
        out.push(IterationRecord {
            k: int(fields[0])?,
            dofs: int(fields[1])?,
            elements: int(fields[2])?,
            global_eta: real(fields[3])?,
            energy: opt(fields[4])?,
            h1_error: opt(fields[5])?,
            succ_diff: real(fields[6])?,
            solve_iters: int(fields[7])?,
        });
    }
    Ok(out)
}
