//! `hjb`: command-line front end for the monotone HJB solver.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use monotone_hjb::assembly::{assemble, certify_monotonicity, Part};
use monotone_hjb::config::RunConfig;
use monotone_hjb::control::{compute_diffusion_budget, SplittingMode};
use monotone_hjb::diagnostics::{consistency_experiment, eikonal_benchmark, write_consistency_csv};
use monotone_hjb::field::SmoothField;
use monotone_hjb::mesh::{equilateral_mesh, interval_mesh, patterned_rectangle_mesh, read_mesh_file, Mesh, Pattern, Rect};
use monotone_hjb::solver::{final_nodal_values, solve_with_operators, SolverOptions, TimeGrid};
use monotone_hjb::HjbError;

#[derive(Parser)]
#[command(version, about = "Monotone P1 finite element solver for parabolic HJB equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify, solve and dump the run described by a TOML config.
    Solve {
        config: PathBuf,
        /// Output directory (overrides the config and HJB_OUTPUT_DIR).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print size and acuteness information for a mesh.
    CheckMesh {
        /// Mesh file; omit to use a generator.
        file: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Generator::Rectangle)]
        generator: Generator,
        #[arg(long, default_value = "equilateral")]
        pattern: Pattern,
        /// Elements per side.
        #[arg(short, long, default_value_t = 8)]
        n: usize,
    },
    /// Eikonal benchmark on (-1, 1) against min(1 - t, 1 - |x|).
    BenchEikonal {
        #[arg(long, value_enum, default_value_t = Mode::Explicit)]
        mode: Mode,
        /// Inverse node spacings, e.g. 8,16,32.
        #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
        levels: Vec<u32>,
        /// Write the table as CSV here as well.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Stiffness consistency probe of sin(πx) sin(πy) at the unit-square centre.
    ConsistencyDemo {
        #[arg(long, default_value = "inconsistent")]
        pattern: Pattern,
        /// Inverse mesh spacings, e.g. 8,16,32.
        #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
        levels: Vec<u32>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Interval,
    Rectangle,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Explicit,
    Implicit,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_CERTIFICATION: u8 = 3;
const EXIT_NONCONVERGENCE: u8 = 4;
const EXIT_IO: u8 = 5;

fn exit_code(e: &HjbError) -> u8 {
    match e {
        HjbError::Config(_)
        | HjbError::Parse(_)
        | HjbError::Mesh(_)
        | HjbError::DimensionMismatch { .. }
        | HjbError::Query(_) => EXIT_PARSE,
        HjbError::Certification(_) | HjbError::NotAcute { .. } | HjbError::MMatrix(_) => EXIT_CERTIFICATION,
        HjbError::NonConvergence { .. } | HjbError::LinearSolver { .. } => EXIT_NONCONVERGENCE,
        HjbError::Io(_) => EXIT_IO,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve { config, output } => solve(&config, output),
        Command::CheckMesh {
            file,
            generator,
            pattern,
            n,
        } => check_mesh(file, generator, pattern, n),
        Command::BenchEikonal { mode, levels, output } => bench_eikonal(mode, &levels, output),
        Command::ConsistencyDemo { pattern, levels, output } => consistency_demo(pattern, &levels, output),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            if let HjbError::NonConvergence { residuals, .. } = &e {
                eprintln!("residual history: {residuals:?}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, HjbError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn solve(config: &Path, output: Option<PathBuf>) -> Result<u8, HjbError> {
    let start = Instant::now();
    let (cfg, base) = RunConfig::from_file(config)?;
    let mesh = Arc::new(cfg.build_mesh(&base)?);
    let problem = cfg.build_problem(&mesh, &base)?;
    let splitting = cfg.build_splitting(&problem)?;
    problem.validate(&mesh)?;

    let budget = compute_diffusion_budget(&mesh, &splitting, &mesh.acuteness_certificate())?;
    let ops = assemble(&mesh, &splitting, &budget)?;
    let max_stable_h = certify_monotonicity(&ops, 1.0)?.max_stable_h;
    let (h, warning) = cfg.time_step(problem.horizon(), max_stable_h)?;
    if let Some(w) = warning {
        eprintln!("warning: {w}");
    }
    let timegrid = TimeGrid::new(problem.horizon(), h)?;
    let report = certify_monotonicity(&ops, timegrid.h())?;
    if let Some(reason) = report.failure() {
        eprintln!("certification failed: {reason}");
        return Ok(EXIT_CERTIFICATION);
    }

    let options: SolverOptions = cfg.solver_options();
    let (solution, iterations) = solve_with_operators(&ops, &mesh, final_nodal_values(&problem, &mesh), timegrid, options)?;

    let dir = output.unwrap_or_else(|| cfg.output_directory(&base));
    fs::create_dir_all(&dir)?;
    if cfg.output.solution {
        solution.write_csv(create(&dir.join("solution.csv"))?)?;
    }
    if cfg.output.policy {
        iterations.write_policy_csv(create(&dir.join("policy.csv"))?)?;
    }
    if cfg.output.report {
        iterations.write_csv(create(&dir.join("report.csv"))?)?;
    }
    if cfg.output.matrices {
        for alpha in 0..ops.control_count() {
            ops.dump(alpha, Part::Explicit, create(&dir.join(format!("explicit_{alpha}.txt")))?)?;
            ops.dump(alpha, Part::Implicit, create(&dir.join(format!("implicit_{alpha}.txt")))?)?;
        }
    }

    let total_iterations: usize = iterations.steps.iter().map(|s| s.iterations).sum();
    let summary = format!(
        "nodes = {}\ninterior_nodes = {}\nmesh_size = {:.16e}\nh = {:.16e}\nsteps = {}\nmax_stable_h = {:.16e}\n\
         policy_iterations_total = {}\npolicy_iterations_max = {}\nfinal_residual = {:.16e}\nmin_value = {:.16e}\n\
         wall_time_s = {:.3}\n",
        mesh.node_count(),
        mesh.interior_count(),
        mesh.mesh_size(),
        timegrid.h(),
        timegrid.steps(),
        max_stable_h,
        total_iterations,
        iterations.max_iterations(),
        iterations.final_residual(),
        solution.min_value(),
        start.elapsed().as_secs_f64()
    );
    fs::write(dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(0)
}

fn check_mesh(file: Option<PathBuf>, generator: Generator, pattern: Pattern, n: usize) -> Result<u8, HjbError> {
    let mesh: Mesh = match (file, generator) {
        (Some(path), _) => read_mesh_file(path)?,
        (None, Generator::Interval) => interval_mesh(0.0, 1.0, n)?,
        (None, Generator::Rectangle) => match pattern {
            Pattern::Equilateral => equilateral_mesh(Rect::unit(), n, n)?,
            p => patterned_rectangle_mesh(Rect::unit(), n, n, p)?,
        },
    };
    let cert = mesh.acuteness_certificate();
    println!("dim = {}", mesh.dim());
    println!("nodes = {}", mesh.node_count());
    println!("interior_nodes = {}", mesh.interior_count());
    println!("elements = {}", mesh.elements().len());
    println!("mesh_size = {:.16e}", mesh.mesh_size());
    println!("sin_theta = {:.16e}", cert.sin_theta);
    println!("strictly_acute = {}", cert.strictly_acute);
    if let Some((element, a, b)) = cert.worst_pair {
        println!("worst_pair = element {element}, nodes {a} and {b}");
    }
    Ok(0)
}

fn spacings(levels: &[u32]) -> Result<Vec<f64>, HjbError> {
    if levels.len() < 2 {
        return Err(HjbError::Config("at least two levels are required".into()));
    }
    if levels.contains(&0) {
        return Err(HjbError::Config("levels must be positive".into()));
    }
    Ok(levels.iter().map(|&n| 1.0 / n as f64).collect())
}

fn bench_eikonal(mode: Mode, levels: &[u32], output: Option<PathBuf>) -> Result<u8, HjbError> {
    let dx = spacings(levels)?;
    let mode = match mode {
        Mode::Explicit => SplittingMode::Explicit,
        Mode::Implicit => SplittingMode::Implicit,
    };
    let table = eikonal_benchmark(mode, &dx, SolverOptions::default())?;
    table.write_csv(std::io::stdout().lock())?;
    if let Some(path) = output {
        table.write_csv(create(&path)?)?;
    }
    let errors = table.linf_errors();
    let non_increasing = errors.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    if non_increasing {
        Ok(0)
    } else {
        eprintln!("L-infinity errors increased under refinement: {errors:?}");
        Ok(EXIT_FAILURE)
    }
}

fn consistency_demo(pattern: Pattern, levels: &[u32], output: Option<PathBuf>) -> Result<u8, HjbError> {
    let dx = spacings(levels)?;
    if pattern == Pattern::Equilateral {
        return Err(HjbError::Config("the consistency demo uses the consistent or inconsistent pattern".into()));
    }
    let probes = consistency_experiment(pattern, &SmoothField::sine_product(), [0.5, 0.5], &dx)?;
    write_consistency_csv(&probes, std::io::stdout().lock())?;
    if let Some(path) = output {
        write_consistency_csv(&probes, create(&path)?)?;
    }
    Ok(0)
}
