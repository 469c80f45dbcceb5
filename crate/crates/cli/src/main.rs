//! Command-line front end: meshes, complex checks, projections, time-domain
//! runs, and refinement studies, emitting CSV/JSON artifacts.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 validation failure (arguments,
//! config schema, mesh/coefficient data), 3 solver failure (partial CSV is
//! flushed first).

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::{
    BInitSpec, CoefficientSpec, ConvergenceConfig, DtPolicySpec, InitialSpec, RunConfig,
    SourceSpec, StepperSpec,
};
use maxwell_fem::assembly::{AssemblyError, SourceField, TensorField, VectorField};
use maxwell_fem::derham::build_complex;
use maxwell_fem::experiments::{
    convergence_study_threaded, BInitMode, CavitySolution, DtPolicy, ExperimentError,
};
use maxwell_fem::mesh::{
    generate_box_mesh, mesh_size, read_mesh, write_mesh, BoxExtents, MeshError, TetMesh,
};
use maxwell_fem::projections::{
    constrained_project_rt, l2_project_nedelec, l2_project_rt, potential_init_rt,
    riesz_project_nedelec, ProjectionError, ProjectionReport,
};
use maxwell_fem::semidiscrete::{
    build_system, initial_state, records_to_csv, run, BInit, RunResult, SemiDiscreteError, Stepper,
};
use maxwell_fem::sparse::SparseError;

#[derive(Parser)]
#[command(
    name = "maxwell-fem",
    about = "Structure-preserving Nedelec/Raviart-Thomas solver for time-domain Maxwell",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a structured box mesh, write it, and print a JSON summary.
    Mesh(MeshArgs),
    /// Build the discrete de Rham complex and report exactness residuals.
    CheckComplex(CheckComplexArgs),
    /// Project cavity data with one of the projection operators.
    Project(ProjectArgs),
    /// Integrate the semi-discrete system from a JSON config.
    Run(ConfigArg),
    /// Run a mesh-refinement convergence study from a JSON config.
    Convergence(ConfigArg),
}

#[derive(Args)]
struct MeshArgs {
    /// Subdivisions per axis.
    #[arg(long)]
    n: usize,
    /// Box extents as six comma-separated floats min_x,min_y,min_z,max_x,max_y,max_z.
    #[arg(long)]
    r#box: Option<String>,
    /// Output mesh file (omit to print the summary only).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckComplexArgs {
    /// Mesh file to load.
    #[arg(long, conflicts_with = "n")]
    mesh: Option<PathBuf>,
    /// Generate a unit-cube box mesh instead of loading one.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct ProjectArgs {
    /// Projector: l2-rt | l2-nedelec | riesz | constrained | potential.
    #[arg(long)]
    projector: String,
    /// Subdivisions per axis of the unit-cube mesh.
    #[arg(long)]
    n: usize,
    /// Cavity phase time for the projected data.
    #[arg(long, default_value_t = 0.176_776_695_296_636_88)]
    t0: f64,
    /// Linear-solver tolerance.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the JSON configuration.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug)]
enum CliError {
    /// Exit 1: the environment failed (file I/O).
    Io(String),
    /// Exit 2: the inputs are invalid.
    Validation(String),
    /// Exit 3: a solver failed on valid inputs.
    Solver(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Validation(m) | CliError::Solver(m) => m,
        }
    }
}

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::Io(format!("{context}: {e}"))
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SparseError> for CliError {
    fn from(e: SparseError) -> Self {
        match e {
            SparseError::CgStalled { .. }
            | SparseError::CgBreakdown
            | SparseError::Saddle(_)
            | SparseError::BadDiagonal { .. } => CliError::Solver(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<AssemblyError> for CliError {
    fn from(e: AssemblyError) -> Self {
        match e {
            AssemblyError::Sparse(inner) => inner.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ProjectionError> for CliError {
    fn from(e: ProjectionError) -> Self {
        match e {
            ProjectionError::Assembly(inner) => inner.into(),
            ProjectionError::Sparse(inner) => inner.into(),
        }
    }
}

impl From<SemiDiscreteError> for CliError {
    fn from(e: SemiDiscreteError) -> Self {
        match e {
            SemiDiscreteError::InvalidArgument(m) => CliError::Validation(m),
            SemiDiscreteError::Assembly(inner) => inner.into(),
            SemiDiscreteError::Projection(inner) => inner.into(),
            SemiDiscreteError::Sparse(inner) => inner.into(),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidArgument(m) => CliError::Validation(m),
            ExperimentError::OutsideDomain(_) => CliError::Validation(e.to_string()),
            ExperimentError::Mesh(inner) => inner.into(),
            ExperimentError::Assembly(inner) => inner.into(),
            ExperimentError::Projection(inner) => inner.into(),
            ExperimentError::SemiDiscrete(inner) => inner.into(),
            ExperimentError::Sparse(inner) => inner.into(),
            ExperimentError::Run(failure) => failure.error.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Mesh(args) => cmd_mesh(args),
        Command::CheckComplex(args) => cmd_check_complex(args),
        Command::Project(args) => cmd_project(args),
        Command::Run(args) => cmd_run(&args.config),
        Command::Convergence(args) => cmd_convergence(&args.config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// JSON float with 17 significant digits; exact zeros stay `0`.
fn jf(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn jopt(v: Option<f64>) -> String {
    match v {
        Some(x) => jf(x),
        None => "null".to_string(),
    }
}

fn parse_box(text: &str) -> Result<BoxExtents, CliError> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Validation(format!("bad box extents `{text}`: {e}")))?;
    if parts.len() != 6 {
        return Err(CliError::Validation(format!(
            "box extents need 6 comma-separated values, got {}",
            parts.len()
        )));
    }
    Ok(BoxExtents {
        min: [parts[0], parts[1], parts[2]],
        max: [parts[3], parts[4], parts[5]],
    })
}

fn mesh_summary_json(mesh: &TetMesh) -> String {
    format!(
        "{{\"V\": {}, \"E\": {}, \"F\": {}, \"C\": {}, \"h\": {}, \"euler\": {}}}\n",
        mesh.vertex_count(),
        mesh.edge_count(),
        mesh.face_count(),
        mesh.cell_count(),
        jf(mesh_size(mesh)),
        mesh.euler_characteristic()
    )
}

fn cmd_mesh(args: MeshArgs) -> Result<(), CliError> {
    let extents = match &args.r#box {
        Some(text) => parse_box(text)?,
        None => BoxExtents::unit_cube(),
    };
    let mesh = generate_box_mesh(args.n, extents)?;
    if let Some(path) = &args.out {
        std::fs::write(path, write_mesh(&mesh))
            .map_err(|e| io_err(&format!("writing {}", path.display()), e))?;
    }
    print!("{}", mesh_summary_json(&mesh));
    Ok(())
}

fn load_mesh_file(path: &Path) -> Result<TetMesh, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| io_err(&format!("reading {}", path.display()), e))?;
    Ok(read_mesh(&text)?)
}

fn cmd_check_complex(args: CheckComplexArgs) -> Result<(), CliError> {
    let mesh = match (&args.mesh, args.n) {
        (Some(path), None) => load_mesh_file(path)?,
        (None, Some(n)) => generate_box_mesh(n, BoxExtents::unit_cube())?,
        _ => {
            return Err(CliError::Validation(
                "check-complex needs exactly one of --mesh or --n".into(),
            ))
        }
    };
    let cx = build_complex(&mesh);
    let dc = cx.div_matrix().matmul(cx.curl_matrix())?.max_abs();
    let cg = cx.curl_matrix().matmul(cx.grad_matrix())?.max_abs();
    let topo = mesh.topology();
    let count = |flags: &[bool]| flags.iter().filter(|&&b| b).count();
    println!(
        "{{\"V\": {}, \"E\": {}, \"F\": {}, \"C\": {}, \"DC_max\": {}, \"CG_max\": {}, \
         \"interior_edges\": {}, \"boundary_edges\": {}, \"boundary_faces\": {}, \
         \"boundary_vertices\": {}}}",
        mesh.vertex_count(),
        mesh.edge_count(),
        mesh.face_count(),
        mesh.cell_count(),
        jf(dc),
        jf(cg),
        cx.interior_edge_count(),
        count(&topo.boundary_edge_flags),
        count(&topo.boundary_face_flags),
        count(&topo.boundary_vertex_flags),
    );
    Ok(())
}

fn projection_json(dofs: usize, report: &ProjectionReport) -> String {
    format!(
        "{{\"dofs\": {}, \"iterations\": {}, \"residual\": {}, \"l2_error\": {}, \
         \"hcurl_error\": {}, \"div_residual\": {}}}",
        dofs,
        report.iterations,
        jf(report.residual),
        jf(report.l2_error),
        jopt(report.hcurl_error),
        jopt(report.div_residual),
    )
}

fn cmd_project(args: ProjectArgs) -> Result<(), CliError> {
    if args.tol <= 0.0 || !args.tol.is_finite() {
        return Err(CliError::Validation(format!(
            "tolerance must be positive, got {}",
            args.tol
        )));
    }
    let mesh = generate_box_mesh(args.n, BoxExtents::unit_cube())?;
    let cx = build_complex(&mesh);
    let t0 = args.t0;
    let (dofs, report) = match args.projector.as_str() {
        "l2-rt" => (
            cx.face_dofs(),
            l2_project_rt(&cx, &CavitySolution::magnetic_field(t0), args.tol)?,
        ),
        "l2-nedelec" => (
            cx.interior_edge_count(),
            l2_project_nedelec(&cx, &CavitySolution::electric_field(t0), args.tol)?,
        ),
        "riesz" => (
            cx.interior_edge_count(),
            riesz_project_nedelec(
                &cx,
                &CavitySolution::potential_field(t0),
                &CavitySolution::magnetic_field(t0),
                args.tol,
            )?,
        ),
        "constrained" => (
            cx.face_dofs(),
            constrained_project_rt(&cx, &CavitySolution::magnetic_field(t0), args.tol)?,
        ),
        "potential" => (
            cx.face_dofs(),
            potential_init_rt(
                &cx,
                &CavitySolution::potential_field(t0),
                &CavitySolution::magnetic_field(t0),
                args.tol,
            )?,
        ),
        other => {
            return Err(CliError::Validation(format!(
                "unknown projector `{other}` (expected l2-rt, l2-nedelec, riesz, constrained, potential)"
            )))
        }
    };
    println!("{}", projection_json(dofs, &report));
    Ok(())
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| io_err(&format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
}

/// Per-cell tensor file: one line per cell with the six upper-triangle
/// entries `xx xy xz yy yz zz`; `#` starts a comment.
fn read_per_cell_tensors(path: &Path) -> Result<TensorField, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| io_err(&format!("reading {}", path.display()), e))?;
    let mut cells = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = trimmed
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| {
                CliError::Validation(format!(
                    "{}:{}: bad tensor entry: {e}",
                    path.display(),
                    i + 1
                ))
            })?;
        if vals.len() != 6 {
            return Err(CliError::Validation(format!(
                "{}:{}: expected 6 entries (xx xy xz yy yz zz), found {}",
                path.display(),
                i + 1,
                vals.len()
            )));
        }
        cells.push([
            [vals[0], vals[1], vals[2]],
            [vals[1], vals[3], vals[4]],
            [vals[2], vals[4], vals[5]],
        ]);
    }
    Ok(TensorField::per_cell(cells))
}

fn coefficient_field(spec: &CoefficientSpec, what: &str) -> Result<TensorField, CliError> {
    match spec {
        CoefficientSpec::Keyword(word) if word == "identity" => Ok(TensorField::identity()),
        CoefficientSpec::Keyword(word) => Err(CliError::Validation(format!(
            "{what}: unknown keyword `{word}` (expected \"identity\", a number, or a per-cell file)"
        ))),
        CoefficientSpec::Scalar(s) => Ok(TensorField::scalar(*s)),
        CoefficientSpec::PerCellFile(f) => read_per_cell_tensors(&f.per_cell_file),
    }
}

fn build_mesh(spec: &config::MeshSpec) -> Result<TetMesh, CliError> {
    match (&spec.n, &spec.file) {
        (Some(n), None) => Ok(generate_box_mesh(*n, BoxExtents::unit_cube())?),
        (None, Some(path)) => load_mesh_file(path),
        _ => Err(CliError::Validation(
            "mesh spec needs exactly one of `n` or `file`".into(),
        )),
    }
}

fn initial_fields(spec: &InitialSpec, b_init: BInitSpec) -> (f64, VectorField, BInit) {
    match spec {
        InitialSpec::Zero => {
            let b = match b_init {
                BInitSpec::Potential => BInit::Potential {
                    a0: VectorField::zero(),
                    curl_a0: VectorField::zero(),
                },
                BInitSpec::Constrained => BInit::Constrained {
                    b0: VectorField::zero(),
                },
            };
            (0.0, VectorField::zero(), b)
        }
        InitialSpec::Cavity { t0 } => {
            let mode = match b_init {
                BInitSpec::Potential => BInitMode::Potential,
                BInitSpec::Constrained => BInitMode::Constrained,
            };
            (
                *t0,
                CavitySolution::electric_field(*t0),
                CavitySolution::b_init(mode, *t0),
            )
        }
    }
}

fn resolve_dt(dt: Option<f64>, policy: Option<DtPolicySpec>, mesh: &TetMesh, t_final: f64) -> f64 {
    match (dt, policy) {
        (Some(v), _) => v,
        (None, Some(DtPolicySpec::HOverEight)) => {
            DtPolicy::HOverEight.dt_for(mesh_size(mesh), t_final)
        }
        (None, None) => unreachable!("validated"),
    }
}

fn run_summary_json(result: &RunResult, wall_seconds: f64) -> String {
    let mut out = String::from("{");
    let _ = write!(out, "\"initial_energy\": {}", jf(result.initial_energy));
    let _ = write!(out, ", \"final_energy\": {}", jf(result.final_energy()));
    let _ = write!(out, ", \"steps\": {}", result.records.len());
    let _ = write!(
        out,
        ", \"max_gauss_residual\": {}",
        jf(result.max_gauss_residual())
    );
    let _ = write!(
        out,
        ", \"max_energy_identity_residual\": {}",
        jf(result.max_energy_identity_residual())
    );
    let _ = write!(
        out,
        ", \"max_cumulative_energy_residual\": {}",
        jf(result.max_cumulative_energy_residual())
    );
    let _ = write!(out, ", \"wall_time\": {}", jf(wall_seconds));
    out.push_str("}\n");
    out
}

fn cmd_run(config_path: &Path) -> Result<(), CliError> {
    let config: RunConfig = read_config(config_path)?;
    config.validate().map_err(CliError::Validation)?;

    let mesh = build_mesh(&config.mesh)?;
    let complex = build_complex(&mesh);
    let eps = coefficient_field(&config.epsilon, "epsilon")?;
    let mu_inv = coefficient_field(&config.mu_inv, "mu_inv")?;
    let sigma = coefficient_field(&config.sigma, "sigma")?;
    let sys = build_system(&complex, &eps, &mu_inv, &sigma)?;

    let source = match config.source {
        SourceSpec::Zero => SourceField::zero(),
        SourceSpec::CavityConsistent => CavitySolution::sigma_compensating_source(),
    };
    let (t0, e0, b_init) = initial_fields(&config.initial, config.b_init);
    let state0 = initial_state(&sys, &e0, &b_init, t0, config.tolerances.schur)?;
    let stepper = match config.stepper {
        StepperSpec::CrankNicolson => Stepper::CrankNicolson,
        StepperSpec::BackwardEuler => Stepper::BackwardEuler,
    };
    let dt = resolve_dt(config.dt, config.dt_policy, &mesh, config.t_final);

    let started = Instant::now();
    let outcome = run(
        &sys,
        &state0,
        config.t_final,
        dt,
        &source,
        stepper,
        config.tolerances.cg,
    );
    let wall = started.elapsed().as_secs_f64();

    match outcome {
        Ok(result) => {
            std::fs::write(&config.output.csv, records_to_csv(&result.records))
                .map_err(|e| io_err(&format!("writing {}", config.output.csv.display()), e))?;
            let summary = run_summary_json(&result, wall);
            match &config.output.summary {
                Some(path) => std::fs::write(path, summary)
                    .map_err(|e| io_err(&format!("writing {}", path.display()), e))?,
                None => print!("{summary}"),
            }
            Ok(())
        }
        Err(failure) => {
            // Flush whatever completed before reporting the failure.
            let _ = std::fs::write(&config.output.csv, records_to_csv(&failure.partial.records));
            Err(failure.error.into())
        }
    }
}

fn thread_count() -> Result<usize, CliError> {
    match std::env::var("MAXWELL_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(1),
        Err(e) => Err(CliError::Validation(format!("MAXWELL_THREADS: {e}"))),
        Ok(text) => match text.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Validation(format!(
                "MAXWELL_THREADS must be a positive integer, got `{text}`"
            ))),
        },
    }
}

fn cmd_convergence(config_path: &Path) -> Result<(), CliError> {
    let config: ConvergenceConfig = read_config(config_path)?;
    config.validate().map_err(CliError::Validation)?;
    let policy = match (config.dt, config.dt_policy) {
        (Some(dt), _) => DtPolicy::Fixed(dt),
        (None, Some(DtPolicySpec::HOverEight)) => DtPolicy::HOverEight,
        (None, None) => unreachable!("validated"),
    };
    let threads = thread_count()?;
    let table = convergence_study_threaded(&config.levels, config.t_final, policy, threads)?;
    std::fs::write(&config.output.csv, table.to_csv())
        .map_err(|e| io_err(&format!("writing {}", config.output.csv.display()), e))?;
    Ok(())
}
