//! Command-line front end: configuration, subcommand dispatch and result
//! files.

pub mod commands;
pub mod config;
pub mod output;
pub mod parse;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] stablesde::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_UNRELIABLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "stablesde", version, about = "Simulate and estimate dX = A(X-) dZ with stable drivers")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed (falls back to the config file, then STABLE_SDE_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of paths or samples.
    #[arg(long, global = true)]
    pub n: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Record wall-clock time in summaries (breaks bit-identical reruns).
    #[arg(long, global = true)]
    pub timing: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Stability index in (0, 2).
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Dimension d.
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Row-major matrix entries separated by ';'.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub entries: Option<String>,
    /// fixed-step or jump-adapted.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Jump truncation threshold (jump-adapted mode).
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub max_steps: Option<u64>,
    /// Time after which a path counts as capped.
    #[arg(long, global = true)]
    pub t_cap: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw driver increments and check their characteristic function.
    Sample(SampleArgs),
    /// Record sample paths as CSV.
    Simulate(SimulateArgs),
    /// Mean exit time and exit-time tail.
    ExitTime(ExitArgs),
    /// Expected time spent in a sub-region before exit.
    Occupation(OccupationArgs),
    /// Probability of being steered along one column by a single jump.
    Steering(SteeringArgs),
    /// Probability of staying in a tube around a polygonal path.
    Tube(TubeArgs),
    /// Probability of hitting a target before leaving a container.
    Hitting(HittingArgs),
    /// Harmonic function values on a grid.
    Harmonic(HarmonicArgs),
    /// Hölder exponent fit of a harmonic function.
    Hoelder(HoelderArgs),
    /// Harnack counterexample ratio curve in R³.
    Harnack(HarnackArgs),
    /// Distributional scaling check via a two-sample KS test.
    ScalingCheck(ScalingArgs),
    /// Quadrature generator against the symbol for constant fields.
    GeneratorCheck(GeneratorArgs),
    /// Re-check the hashes in an output directory's manifest.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Increment duration.
    #[arg(long)]
    pub time: Option<f64>,
    /// Frequencies for the characteristic function, comma-separated.
    #[arg(long)]
    pub u: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Stop each path at its first exit from this domain.
    #[arg(long)]
    pub domain: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExitArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long)]
    pub domain: Option<String>,
    /// Largest m in the table of P(tau > m).
    #[arg(long)]
    pub max_m: Option<u32>,
    /// Repeat at dt/2 and report both.
    #[arg(long)]
    pub refine: bool,
}

#[derive(Debug, Args)]
pub struct OccupationArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long)]
    pub domain: Option<String>,
    /// Sub-region C in domain syntax.
    #[arg(long)]
    pub region: Option<String>,
    #[arg(long)]
    pub refine: bool,
}

#[derive(Debug, Args)]
pub struct SteeringArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// 1-based axis.
    #[arg(long)]
    pub axis: Option<usize>,
    /// Signed jump length along A(x0) e_axis.
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub t0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TubeArgs {
    /// Vertices as "x,y;x,y;...".
    #[arg(long, allow_hyphen_values = true)]
    pub vertices: Option<String>,
    /// Vertex times, comma-separated, starting at 0.
    #[arg(long)]
    pub times: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub t0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct HittingArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub container: Option<String>,
}

#[derive(Debug, Args)]
pub struct HarmonicArgs {
    #[arg(long)]
    pub domain: Option<String>,
    /// const:c, upper:k, right-of:k:a or expr:<expression>.
    #[arg(long, allow_hyphen_values = true)]
    pub boundary: Option<String>,
    /// Points as "x,y;x,y;...".
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct HoelderArgs {
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub boundary: Option<String>,
    /// Defaults to the center and 12 points on a ray along the first axis.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub center: Option<String>,
    #[arg(long)]
    pub radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct HarnackArgs {
    /// Strictly decreasing eps values, comma-separated.
    #[arg(long)]
    pub eps: Option<String>,
    /// Gaussian sub-step of the jump-adapted scheme.
    #[arg(long)]
    pub substep: Option<f64>,
    /// Also fit the occupation-time scaling of the (Y, Z) pair.
    #[arg(long)]
    pub occupation: bool,
    /// Truncation horizon of the occupation integral.
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
}

#[derive(Debug, Args)]
pub struct GeneratorArgs {
    #[arg(long)]
    pub probes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub dir: PathBuf,
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_UNRELIABLE,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}
