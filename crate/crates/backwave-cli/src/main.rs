//! Command line front end. Four entry points: pointwise special-function
//! evaluation, a forward solve on a preset example, inversion of a stored
//! observation pair, and full study sweeps from a TOML config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use backwave::backward::{invert_fully_discrete, ObservationPair, RegularizationConfig};
use backwave::fem::FemSystem;
use backwave::forward::evolve_cq_fem;
use backwave::harness::{run_study, ExampleId, StudyFile};
use backwave::specfun::{ml_eval_with_branch, BranchChoice, MlParams};
use backwave::FractionalOrder;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "backwave", version, about = "Time-fractional diffusion-wave solvers, forward and backward")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate E_{alpha,beta}(z) with the branch and error estimate used
    Ml(MlArgs),
    /// Run the forward stepper on a preset example, writing the final state
    Forward(ForwardArgs),
    /// Recover both initial states from two stored terminal observations
    Backward(BackwardArgs),
    /// Run study sweeps from a TOML config and write reports
    Study(StudyArgs),
}

#[derive(Args)]
struct MlArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    beta: f64,
    /// Argument; the solvers only ever need z <= 0 but positive values work
    #[arg(long, allow_hyphen_values = true)]
    z: f64,
    #[arg(long, value_enum, default_value_t = BranchArg::Auto)]
    branch: BranchArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    Auto,
    Series,
    Asymptotic,
    Integral,
}

impl From<BranchArg> for BranchChoice {
    fn from(b: BranchArg) -> Self {
        match b {
            BranchArg::Auto => BranchChoice::Auto,
            BranchArg::Series => BranchChoice::Series,
            BranchArg::Asymptotic => BranchChoice::Asymptotic,
            BranchArg::Integral => BranchChoice::Integral,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ExampleArg {
    #[value(name = "smooth-1d")]
    Smooth1d,
    #[value(name = "nonsmooth-1d")]
    Nonsmooth1d,
    #[value(name = "smooth-2d")]
    Smooth2d,
}

impl From<ExampleArg> for ExampleId {
    fn from(e: ExampleArg) -> Self {
        match e {
            ExampleArg::Smooth1d => ExampleId::Smooth1D,
            ExampleArg::Nonsmooth1d => ExampleId::Nonsmooth1D,
            ExampleArg::Smooth2d => ExampleId::Smooth2D,
        }
    }
}

#[derive(Args)]
struct ForwardArgs {
    #[arg(long, value_enum)]
    example: ExampleArg,
    #[arg(long)]
    alpha: f64,
    /// Mesh width (1 / number of intervals per side)
    #[arg(long)]
    h: f64,
    /// Time step; the end time must be an integer multiple
    #[arg(long)]
    tau: f64,
    /// End time of the evolution
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    /// Destination for the final state (CSV, coordinates then value)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BackwardArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    h: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    t1: f64,
    #[arg(long, default_value_t = 1.2)]
    t2: f64,
    /// Observation at t1, one dof per line (last comma-separated field)
    #[arg(long)]
    g1: PathBuf,
    /// Observation at t2, same layout and mesh as --g1
    #[arg(long)]
    g2: PathBuf,
    /// Spatial dimension of the mesh the observations live on
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Destination for the recovered initial displacement
    #[arg(long)]
    out_a: PathBuf,
    /// Destination for the recovered initial velocity
    #[arg(long)]
    out_b: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ml(args) => run_ml(&args),
        Command::Forward(args) => run_forward(&args),
        Command::Backward(args) => run_backward(&args),
        Command::Study(args) => run_studies(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run_ml(args: &MlArgs) -> Result<(), String> {
    let p = MlParams::new(args.alpha, args.beta).map_err(|e| e.to_string())?;
    let v = ml_eval_with_branch(&p, args.z, args.branch.into()).map_err(|e| e.to_string())?;
    println!(
        "{}",
        serde_json::json!({
            "alpha": args.alpha,
            "beta": args.beta,
            "z": args.z,
            "value": v.value,
            "est_abs_error": v.est_abs_error,
            "branch": format!("{:?}", v.branch),
        })
    );
    Ok(())
}

fn steps(t: f64, tau: f64) -> Result<usize, String> {
    let raw = t / tau;
    let n = raw.round();
    if n < 1.0 || (raw - n).abs() > 1e-9 * n.max(1.0) {
        return Err(format!("end time {t} is not an integer multiple of tau {tau}"));
    }
    Ok(n as usize)
}

fn write_nodal_csv(path: &Path, sys: &FemSystem, v: &[f64]) -> Result<(), String> {
    let mut body = String::new();
    for (i, val) in v.iter().enumerate() {
        let c = sys.node_coord(i);
        if sys.dim() == 1 {
            writeln!(body, "{},{val:.12e}", c[0]).unwrap();
        } else {
            writeln!(body, "{},{},{val:.12e}", c[0], c[1]).unwrap();
        }
    }
    std::fs::write(path, body).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_nodal_csv(path: &Path, expected: usize) -> Result<Vec<f64>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        let v: f64 = field
            .parse()
            .map_err(|e| format!("{} line {}: {e}", path.display(), ln + 1))?;
        out.push(v);
    }
    if out.len() != expected {
        return Err(format!(
            "{}: got {} values, mesh has {} dofs",
            path.display(),
            out.len(),
            expected
        ));
    }
    Ok(out)
}

fn run_forward(args: &ForwardArgs) -> Result<(), String> {
    let order = FractionalOrder::new(args.alpha).map_err(|e| e.to_string())?;
    let example: ExampleId = args.example.into();
    let sys = FemSystem::assemble(example.dim(), args.h).map_err(|e| e.to_string())?;
    let (a, b) = example.project_nodal(&sys).map_err(|e| e.to_string())?;
    let n = steps(args.t, args.tau)?;
    let traj = evolve_cq_fem(&sys, &a, &b, order, args.tau, n, None).map_err(|e| e.to_string())?;
    write_nodal_csv(&args.out, &sys, traj.final_state())?;
    println!(
        "{}",
        serde_json::json!({
            "example": example.name(),
            "alpha": args.alpha,
            "h": sys.mesh_width(),
            "tau": args.tau,
            "steps": n,
            "dofs": sys.dof_count(),
            "out": args.out.display().to_string(),
        })
    );
    Ok(())
}

fn run_backward(args: &BackwardArgs) -> Result<(), String> {
    let order = FractionalOrder::new(args.alpha).map_err(|e| e.to_string())?;
    let sys = FemSystem::assemble(args.dim, args.h).map_err(|e| e.to_string())?;
    let g1 = read_nodal_csv(&args.g1, sys.dof_count())?;
    let g2 = read_nodal_csv(&args.g2, sys.dof_count())?;
    let obs = ObservationPair::new(g1, g2, args.t1, args.t2).map_err(|e| e.to_string())?;
    let cfg = RegularizationConfig::with_gamma(args.gamma);
    let rec = invert_fully_discrete(&obs, order, args.tau, &cfg, &sys, false)
        .map_err(|e| e.to_string())?;
    write_nodal_csv(&args.out_a, &sys, &rec.a)?;
    write_nodal_csv(&args.out_b, &sys, &rec.b)?;
    let d = rec.diagnostics;
    println!(
        "{}",
        serde_json::json!({
            "gamma": args.gamma,
            "dofs": sys.dof_count(),
            "min_abs_psi_tilde": d.min_abs_psi_tilde,
            "sign_violations": d.sign_violations,
            "krylov_iterations": d.krylov_iterations,
            "residual_g1": d.residual_g1,
            "residual_g2": d.residual_g2,
            "out_a": args.out_a.display().to_string(),
            "out_b": args.out_b.display().to_string(),
        })
    );
    Ok(())
}

fn run_studies(args: &StudyArgs) -> Result<(), String> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| format!("{}: {e}", args.config.display()))?;
    let file = StudyFile::from_toml(&text).map_err(|e| e.to_string())?;
    for (i, cfg) in file.run.iter().enumerate() {
        let label = cfg.name.clone().unwrap_or_else(|| format!("run-{i}"));
        let dir = args.out_dir.join(&label);
        let report = run_study(cfg, Some(&dir)).map_err(|e| format!("{label}: {e}"))?;
        println!("{label}: {} rows -> {}", report.rows.len(), dir.display());
        for o in &report.orders {
            println!("  alpha={} {} fitted order {:.3} ({} points)", o.alpha, o.metric, o.order, o.points);
        }
    }
    Ok(())
}
