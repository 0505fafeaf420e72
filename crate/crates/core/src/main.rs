use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nvem::bench;
use nvem::io::{self, NodalFields, RunManifest, RunStatus};
use nvem::solver::{run_analysis, AnalysisConfig, Method, StabilizationModuli};
use nvem::{BoundaryConditions, Execution, Material, Mesh, Problem};

#[derive(Parser)]
#[command(name = "nvem", version, about = "Elastoplastic analysis with node-based virtual elements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a built-in benchmark or a mesh + boundary-condition pair.
    Run(RunArgs),
    /// Check a mesh file and report the first problem found.
    Validate {
        #[arg(long)]
        mesh: PathBuf,
    },
    /// Evaluate a closed-form reference value.
    Oracle(OracleArgs),
    /// Write the mesh of a built-in problem.
    Mesh {
        #[arg(long)]
        problem: String,
        /// Generator resolution; defaults to the problem's own.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Built-in problem name.
    #[arg(long, conflicts_with_all = ["mesh", "bc"], required_unless_present = "mesh")]
    problem: Option<String>,
    #[arg(long, requires = "bc")]
    mesh: Option<PathBuf>,
    /// Boundary conditions and material as JSON.
    #[arg(long, requires = "mesh")]
    bc: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Nvem)]
    method: Method,
    /// Generator resolution for --problem.
    #[arg(long, requires = "problem")]
    size: Option<usize>,
    /// Load steps; defaults to the problem's own count.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 30)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = StabilizationModuli::Full)]
    vem_stabilization: StabilizationModuli,
    #[arg(long)]
    serial: bool,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Write a VTK file every K converged steps (the last step is always written).
    #[arg(long, default_value_t = 1)]
    write_every: usize,
}

#[derive(Args)]
struct OracleArgs {
    /// lame, cyl-limit or punch-limit.
    #[arg(long)]
    name: String,
    #[arg(long, default_value_t = 240.0)]
    sigma_y: f64,
    /// Outer to inner radius ratio.
    #[arg(long, default_value_t = 2.0)]
    ratio: f64,
    #[arg(long, default_value_t = 210000.0)]
    youngs: f64,
    #[arg(long, default_value_t = 0.3)]
    nu: f64,
    #[arg(long, default_value_t = 50.0)]
    pressure: f64,
    #[arg(long, default_value_t = 100.0)]
    r_inner: f64,
    /// Radius at which to evaluate the displacement; defaults to the inner radius.
    #[arg(long)]
    r: Option<f64>,
}

enum Failure {
    Input(String),
    Solver(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Validate { mesh } => validate(&mesh),
        Command::Oracle(args) => oracle(args),
        Command::Mesh { problem, size, out } => export_mesh(&problem, size, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_mesh(path: &Path) -> Result<Mesh, Failure> {
    Mesh::parse(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn validate(path: &Path) -> Result<(), Failure> {
    let mesh = load_mesh(path)?;
    println!(
        "{}: ok, {} nodes, {} elements, {} boundary edges, area {:?}",
        path.display(),
        mesh.num_nodes(),
        mesh.num_elements(),
        mesh.boundary_edges().len(),
        mesh.total_area()
    );
    Ok(())
}

fn export_mesh(name: &str, size: Option<usize>, out: &Path) -> Result<(), Failure> {
    let problem = bench::by_name_sized(name, size).map_err(|e| Failure::Input(e.to_string()))?;
    io::write_text(out, &problem.mesh.to_text()).map_err(|e| Failure::Solver(e.to_string()))
}

fn oracle(a: OracleArgs) -> Result<(), Failure> {
    let value = match a.name.as_str() {
        "cyl-limit" => bench::cylinder_limit_pressure(a.sigma_y, 1.0, a.ratio),
        "punch-limit" => bench::punch_limit_pressure(a.sigma_y),
        "lame" => {
            let m = Material::perfectly_plastic(a.youngs, a.nu, a.sigma_y).map_err(|e| Failure::Input(e.to_string()))?;
            let r_o = a.ratio * a.r_inner;
            bench::lame_solution(&m, a.r_inner, r_o, a.pressure, a.r.unwrap_or(a.r_inner)).map_err(|e| Failure::Input(e.to_string()))?
        }
        other => return Err(Failure::Input(format!("unknown oracle '{other}', expected lame, cyl-limit or punch-limit"))),
    };
    println!("{value:.2}");
    Ok(())
}

fn run(a: RunArgs) -> Result<(), Failure> {
    if a.write_every == 0 {
        return Err(Failure::Input("--write-every must be at least 1".into()));
    }
    let (problem, source) = match (&a.problem, &a.mesh, &a.bc) {
        (Some(name), _, _) => (bench::by_name_sized(name, a.size).map_err(|e| Failure::Input(e.to_string()))?, format!("generator:{name}")),
        (None, Some(mesh), Some(bc)) => {
            let m = load_mesh(mesh)?;
            let b = BoundaryConditions::from_json(&read(bc)?).map_err(|e| Failure::Input(e.to_string()))?;
            let stem = mesh.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
            (Problem::new(stem, m, b).map_err(|e| Failure::Input(e.to_string()))?, mesh.display().to_string())
        }
        _ => return Err(Failure::Input("either --problem or --mesh with --bc is required".into())),
    };

    let mut config = AnalysisConfig::new(a.method, a.steps.unwrap_or(problem.bc.num_steps));
    config.newton_tol = a.tol;
    config.newton_max_iter = a.max_iter;
    config.vem_stabilization = a.vem_stabilization;
    if a.serial {
        config.execution = Execution::Serial;
    }
    config.validate().map_err(|e| Failure::Input(e.to_string()))?;

    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Input(format!("{}: {e}", a.out.display())))?;
    let result = run_analysis(&problem, &config).map_err(|e| Failure::Input(e.to_string()))?;

    let io_err = |e: io::IoError| Failure::Solver(e.to_string());
    let mut files = vec!["curves.csv".to_string()];
    io::write_curves(&problem, &result.steps, &a.out.join("curves.csv")).map_err(io_err)?;
    let last = result.steps.len();
    for (k, step) in result.steps.iter().enumerate() {
        if (k + 1) % a.write_every == 0 || k + 1 == last {
            let name = format!("step_{:04}.vtk", step.step);
            io::write_vtk(&problem.mesh, &NodalFields::from_step(step), &a.out.join(&name)).map_err(io_err)?;
            files.push(name);
        }
    }
    if let Some(step) = result.last() {
        let (lo, hi) = step
            .nodal_pressure
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        eprintln!("final step {}: load factor {:?}, pressure range [{lo:.4e}, {hi:.4e}]", step.step, step.load_factor);
    }

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        problem: problem.name.clone(),
        mesh_source: source,
        num_nodes: problem.mesh.num_nodes(),
        num_elements: problem.mesh.num_elements(),
        num_dofs: problem.mesh.num_dofs(),
        config,
        write_every: a.write_every,
        status: if result.completed() { RunStatus::Completed } else { RunStatus::LimitReached },
        steps_converged: result.steps.len(),
        last_converged_load_factor: result.last_converged_load(),
        halvings: result.halvings,
        failure: result.failure.as_ref().map(|f| format!("load factor {:?}: {}", f.load_factor, f.reason)),
        files,
    };
    io::write_text(&a.out.join("run.json"), &manifest.to_json()).map_err(io_err)?;

    match &result.failure {
        None => Ok(()),
        Some(f) => Err(Failure::Solver(format!(
            "limit reached: no equilibrium at load factor {:?} ({}); last converged {:?}",
            f.load_factor,
            f.reason,
            result.last_converged_load()
        ))),
    }
}
