//! Command-line front end. Exit codes: 0 success, 1 audit failure, 2 solver
//! failure, 64 usage error, 65 malformed input data.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::audit::{run_suite, AuditOptions, SUITES};
use crate::driver::{
    fit_rate_of, read_records, run_problem, write_records, DriverError, RateQuantity, RateWindow, RunConfig,
};
use crate::marking::MarkingRule;
use crate::problems::catalog;

pub const EXIT_OK: i32 = 0;
pub const EXIT_AUDIT_FAILED: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;

#[derive(Debug, Parser)]
#[command(
    name = "afem",
    version,
    about = "Adaptive Kacanov finite elements for quasi-linear elliptic problems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the adaptive loop and write records.csv.
    Run(RunArgs),
    /// Fit convergence rates from a records.csv.
    Rates(RatesArgs),
    /// Run the invariant suites.
    Audit(AuditArgs),
    /// Write the initial (optionally refined) mesh of a problem.
    DumpMesh(DumpMeshArgs),
}

fn parse_problem(s: &str) -> Result<String, String> {
    catalog(s).map(|_| s.to_string()).map_err(|e| e.to_string())
}

fn parse_mark(s: &str) -> Result<MarkingRule, String> {
    s.parse().map_err(|e: crate::marking::MarkingError| e.to_string())
}

fn parse_window(s: &str) -> Result<RateWindow, String> {
    match s {
        "all" => Ok(RateWindow::All),
        "final-decade" => Ok(RateWindow::FinalDecade),
        _ => s
            .strip_prefix("last:")
            .and_then(|n| n.parse().ok())
            .map(RateWindow::LastN)
            .ok_or_else(|| format!("unknown window `{s}`; expected all, final-decade or last:N")),
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// ex1, ex2, ex3, ex4, curvature or poisson; append -g0 for zero boundary data.
    #[arg(long, value_parser = parse_problem)]
    pub problem: String,
    /// global | max:THETA | doerfler:THETA
    #[arg(long, default_value = "max:0.7", value_parser = parse_mark)]
    pub mark: MarkingRule,
    /// Bisections applied to each marked element.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_bisect: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub eta_tol: f64,
    #[arg(long, default_value_t = 500_000)]
    pub max_dofs: usize,
    #[arg(long, default_value_t = 60)]
    pub max_iters: usize,
    /// Degree of the triangle quadrature (1 to 5).
    #[arg(long, default_value_t = 5)]
    pub quad_order: u32,
    #[arg(long, default_value_t = 1e-10)]
    pub cg_tol: f64,
    /// Output directory; without it the CSV goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated iterations to dump mesh, solution and estimator at.
    #[arg(long, value_delimiter = ',')]
    pub dump_meshes: Vec<usize>,
    /// Suppress per-iteration progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct RatesArgs {
    /// Path to records.csv, or a directory containing it.
    pub csv: PathBuf,
    /// all | final-decade | last:N
    #[arg(long, default_value = "final-decade", value_parser = parse_window)]
    pub window: RateWindow,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Run a single suite.
    #[arg(long)]
    pub only: Option<String>,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = AuditOptions::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = 25)]
    pub iterations: usize,
    #[arg(long, default_value_t = 20_000)]
    pub max_dofs: usize,
}

#[derive(Debug, Args)]
pub struct DumpMeshArgs {
    #[arg(long, value_parser = parse_problem)]
    pub problem: String,
    /// Uniform bisection sweeps applied before writing.
    #[arg(long, default_value_t = 0)]
    pub refine: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `args` (including the program name) and execute; returns the exit
/// code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Rates(a) => cmd_rates(a),
        Command::Audit(a) => cmd_audit(a),
        Command::DumpMesh(a) => cmd_dump_mesh(a),
    }
}

fn cmd_run(a: RunArgs) -> i32 {
    let config = RunConfig {
        problem: a.problem.clone(),
        marking: a.mark,
        n_bisect: a.n_bisect as usize,
        eta_tol: a.eta_tol,
        max_dofs: a.max_dofs,
        max_iterations: a.max_iters,
        quad_degree: a.quad_order,
        cg_tol: a.cg_tol,
        out_dir: a.out.clone(),
        dump_at: a.dump_meshes.clone(),
    };
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    let problem = match catalog(&a.problem) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let quiet = a.quiet;
    let result = run_problem(&problem, &config, |s| {
        if !quiet {
            let r = s.record;
            let err = r.h1_error.map(|e| format!(" err={e:.4e}")).unwrap_or_default();
            eprintln!(
                "k={:3} dofs={:8} eta={:.4e}{err} max_u={:.6} cg={}",
                r.k,
                r.dofs,
                r.global_eta,
                s.max_value(),
                r.solve_iters
            );
        }
    });
    match result {
        Ok(records) => {
            match &config.out_dir {
                None => {
                    if let Err(e) = write_records(std::io::stdout().lock(), &records) {
                        eprintln!("error: {e}");
                        return EXIT_DATA;
                    }
                }
                Some(dir) if !quiet => eprintln!("wrote {}", dir.join("records.csv").display()),
                Some(_) => {}
            }
            EXIT_OK
        }
        Err(DriverError::Solver { k, records, source }) => {
            eprintln!("error: linear solve failed at iteration {k}: {source}");
            if config.out_dir.is_none() {
                let _ = write_records(std::io::stdout().lock(), &records);
            }
            EXIT_SOLVER
        }
        Err(DriverError::Config(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_SOLVER
        }
    }
}

fn cmd_rates(a: RatesArgs) -> i32 {
    let path = if a.csv.is_dir() {
        a.csv.join("records.csv")
    } else {
        a.csv.clone()
    };
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot open {}: {e}", path.display());
            return EXIT_USAGE;
        }
    };
    let records = match read_records(BufReader::new(file)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return EXIT_DATA;
        }
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:>4} {:>9} {:>24} {:>24}", "k", "dofs", "eta", "h1_error");
    for r in &records {
        let err = r.h1_error.map(|e| format!("{e:.16e}")).unwrap_or_default();
        let _ = writeln!(out, "{:>4} {:>9} {:>24.16e} {:>24}", r.k, r.dofs, r.global_eta, err);
    }
    let eta = fit_rate_of(&records, a.window, RateQuantity::Eta);
    let err = fit_rate_of(&records, a.window, RateQuantity::H1Error);
    if let Ok(s) = err {
        let _ = writeln!(out, "slope h1_error vs dofs: {s:.6}");
    }
    match eta {
        Ok(s) => {
            let _ = writeln!(out, "slope eta vs dofs: {s:.6}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn cmd_audit(a: AuditArgs) -> i32 {
    let opts = AuditOptions {
        samples: a.samples,
        seed: a.seed,
        iterations: a.iterations,
        max_dofs: a.max_dofs,
    };
    let suites: Vec<&str> = match &a.only {
        Some(name) if SUITES.contains(&name.as_str()) => vec![name.as_str()],
        Some(name) => {
            eprintln!("error: unknown suite `{name}`; available: {}", SUITES.join(", "));
            return EXIT_USAGE;
        }
        None => SUITES.to_vec(),
    };
    let mut failed = false;
    for suite in suites {
        match run_suite(suite, &opts) {
            Ok(outcomes) => {
                for o in outcomes {
                    println!("{o}");
                    failed |= !o.status.is_ok();
                }
            }
            Err(e) => {
                println!("FAIL  {suite} aborted: {e}");
                failed = true;
            }
        }
    }
    if failed {
        EXIT_AUDIT_FAILED
    } else {
        EXIT_OK
    }
}

fn cmd_dump_mesh(a: DumpMeshArgs) -> i32 {
    let problem = match catalog(&a.problem) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let mut mesh = problem.initial_mesh();
    if a.refine > 0 {
        mesh = match mesh.uniform_refine(a.refine) {
            Ok((m, _)) => m,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        };
    }
    let written = match &a.out {
        Some(path) => File::create(path).and_then(|f| {
            let mut w = BufWriter::new(f);
            mesh.write_dump(&mut w)?;
            w.flush()
        }),
        None => mesh.write_dump(std::io::stdout().lock()),
    };
    match written {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}
