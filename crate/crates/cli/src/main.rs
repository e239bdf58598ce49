//! `silforge`: simulation and analysis front end for emitter-registration data.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use silforge_core::image::Roi;

use crate::output::UsageError;

#[derive(Debug, Parser)]
#[command(name = "silforge", version, about = "Simulate and analyse PL maps, photon streams and yield data")]
#[command(propagate_version = true, arg_required_else_help = true)]
struct Cli {
    /// Worker threads for parallel work; 0 picks one per core.
    #[arg(long, global = true, env = "SILFORGE_THREADS", default_value_t = 0, value_name = "N")]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic PL map from a scene spec (JSON).
    SimulateMap(SimulateMapArgs),
    /// Simulate a two-detector photon stream from an HBT spec (JSON).
    SimulateHbt(SimulateHbtArgs),
    /// Draw Poisson emitter counts for an array of written sites.
    SimulateArray(SimulateArrayArgs),
    /// Generate a noisy saturation-model sweep as CSV.
    SimulateSaturation(SimulateSaturationArgs),
    /// Fit I(E) = aE^n/(1+kE^n) to a pulse-energy sweep.
    FitSaturation(FitSaturationArgs),
    /// Locate the SIL centre in a PL map.
    DetectSil(DetectSilArgs),
    /// Fit a 2D Gaussian to the emitter inside a region of interest.
    LocateEmitter(LocateEmitterArgs),
    /// Emitter-to-SIL displacement corrected for lens magnification.
    Displace(DisplaceArgs),
    /// Build the g2 histogram of a photon stream and classify the source.
    G2(G2Args),
    /// Fit C(P) = I_sat·P/(P+P_sat) + c·P to a power sweep.
    FitPowerSaturation(FitPowerSaturationArgs),
    /// Collection and intensification enhancement from two saturation fits.
    Enhance(EnhanceArgs),
    /// Displacement statistics and Rayleigh scale of a set of offsets.
    Rayleigh(RayleighArgs),
    /// Choose the pulse energy that maximises single-emitter yield.
    PlanYield(PlanYieldArgs),
    /// Assign a zero-phonon-line wavelength to a defect species.
    ClassifyZpl(ClassifyZplArgs),
}

/// Destination flags shared by the analysis subcommands.
#[derive(Debug, Args)]
struct ReportArgs {
    /// Write the JSON report here instead of stdout (a directory with --batch).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Write CSV plot data into this directory.
    #[arg(long, value_name = "DIR")]
    plot_data: Option<PathBuf>,
}

/// Destination flags that additionally allow batch processing.
#[derive(Debug, Args)]
struct BatchArgs {
    /// Process every file in this directory in parallel; --out names the report directory.
    #[arg(long, value_name = "DIR", requires = "out")]
    batch: Option<PathBuf>,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Debug, Args)]
struct SimulateMapArgs {
    /// Scene spec (JSON).
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,
    /// Output map file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Write the JSON manifest here instead of stdout.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// RNG seed; overrides any seed in the spec.
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SimulateHbtArgs {
    /// HBT spec (JSON).
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,
    /// Output stream file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Write the JSON manifest here instead of stdout.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// RNG seed; overrides any seed in the spec.
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SimulateArrayArgs {
    /// Number of written sites.
    #[arg(long, value_name = "N")]
    sites: usize,
    /// Expected emitters per site.
    #[arg(long, value_name = "L")]
    lambda: f64,
    /// RNG seed.
    #[arg(long)]
    seed: u64,
    /// Confidence level of the recovered interval.
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateSaturationArgs {
    /// Model amplitude a.
    #[arg(long)]
    amplitude: f64,
    /// Power-law exponent n.
    #[arg(long)]
    exponent: f64,
    /// Saturation parameter k.
    #[arg(long)]
    saturation_param: f64,
    /// Pulse energies in nJ, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    energies: Vec<f64>,
    /// Relative Gaussian noise on each point.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// RNG seed.
    #[arg(long)]
    seed: u64,
    /// Output CSV (energy_nj,intensity,sigma).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Write the JSON manifest here instead of stdout.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitSaturationArgs {
    /// CSV with columns energy_nj,intensity[,sigma].
    #[arg(long, value_name = "FILE", required_unless_present = "batch")]
    data: Option<PathBuf>,
    /// Writing photon energy in eV.
    #[arg(long, default_value_t = silforge_core::physics::WRITING_PHOTON_ENERGY_EV)]
    photon_energy_ev: f64,
    #[command(flatten)]
    dest: BatchArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Circle,
    Ellipse,
    Profile,
    All,
}

#[derive(Debug, Args)]
struct DetectSilArgs {
    /// PL map file.
    #[arg(long, value_name = "FILE", required_unless_present = "batch")]
    map: Option<PathBuf>,
    /// Centre-finding method.
    #[arg(long, value_enum, default_value_t = MethodArg::All)]
    method: MethodArg,
    #[command(flatten)]
    dest: BatchArgs,
}

#[derive(Debug, Args)]
struct LocateEmitterArgs {
    /// PL map file.
    #[arg(long, value_name = "FILE", required_unless_present = "batch")]
    map: Option<PathBuf>,
    /// Region of interest in µm.
    #[arg(long, value_name = "X0,Y0,X1,Y1", value_parser = parse_roi)]
    roi: Roi,
    #[command(flatten)]
    dest: BatchArgs,
}

#[derive(Debug, Args)]
struct DisplaceArgs {
    /// SIL fit (detect-sil report or bare JSON).
    #[arg(long, value_name = "FILE")]
    sil: PathBuf,
    /// Emitter fit (locate-emitter report or bare JSON).
    #[arg(long, value_name = "FILE")]
    emitter: PathBuf,
    /// Lens magnification dividing the apparent offset.
    #[arg(long, default_value_t = silforge_core::image::DEFAULT_MAGNIFICATION)]
    magnification: f64,
    /// Which fit to use when the SIL report holds all methods.
    #[arg(long, value_enum, default_value_t = SingleMethod::Circle)]
    sil_method: SingleMethod,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SingleMethod {
    Circle,
    Ellipse,
    Profile,
}

#[derive(Debug, Args)]
struct G2Args {
    /// Photon stream file.
    #[arg(long, value_name = "FILE", required_unless_present = "batch")]
    stream: Option<PathBuf>,
    /// Histogram bin width, ps.
    #[arg(long, value_name = "PS", default_value_t = 1000)]
    bin_ps: u64,
    /// Largest delay either side of zero, ps.
    #[arg(long, value_name = "PS", default_value_t = 50_000)]
    max_delay_ps: u64,
    /// Signal fraction S/(S+B) for background correction.
    #[arg(long, value_name = "R")]
    rho: Option<f64>,
    #[command(flatten)]
    dest: BatchArgs,
}

#[derive(Debug, Args)]
struct FitPowerSaturationArgs {
    /// CSV with columns power_mw,counts.
    #[arg(long, value_name = "FILE", required_unless_present = "batch")]
    data: Option<PathBuf>,
    /// Drop the linear background term.
    #[arg(long)]
    no_background: bool,
    #[command(flatten)]
    dest: BatchArgs,
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    /// Power-saturation fit of the SIL emitter.
    #[arg(long, value_name = "FILE")]
    sil: PathBuf,
    /// Power-saturation fit of the planar reference emitter.
    #[arg(long, value_name = "FILE")]
    bulk: PathBuf,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Debug, Args)]
struct RayleighArgs {
    /// CSV with columns dx,dy in µm.
    #[arg(long, value_name = "FILE", required_unless_present = "batch")]
    data: Option<PathBuf>,
    #[command(flatten)]
    dest: BatchArgs,
}

#[derive(Debug, Args)]
struct PlanYieldArgs {
    /// CSV with columns energy_nj,lambda.
    #[arg(long, value_name = "FILE")]
    curve: PathBuf,
    /// Largest acceptable share of occupied sites holding several emitters.
    #[arg(long, value_name = "F")]
    max_multi: f64,
    /// Interpolated candidates inside each gap of the curve.
    #[arg(long, default_value_t = 0)]
    subdivisions: usize,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Debug, Args)]
struct ClassifyZplArgs {
    /// Zero-phonon-line wavelength, nm.
    #[arg(long, value_name = "W")]
    wavelength_nm: f64,
    /// Line catalog file; defaults to V1', V1 and V2.
    #[arg(long, value_name = "FILE")]
    catalog: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn parse_roi(text: &str) -> Result<Roi, String> {
    let values: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("{t:?} is not a number")))
        .collect::<Result<_, _>>()?;
    match values[..] {
        [x0, y0, x1, y1] if values.iter().all(|v| v.is_finite()) => {
            if x0 == x1 || y0 == y1 {
                Err("region of interest has zero area".into())
            } else {
                Ok(Roi::new(x0, y0, x1, y1))
            }
        }
        _ => Err(format!("expected four finite numbers x0,y0,x1,y1, got {text:?}")),
    }
}

/// Prints the help of the subcommand named in `args`, or the top-level help.
fn print_help_for(args: &[String]) {
    let mut cmd = Cli::command();
    let sub = args.iter().skip(1).find_map(|a| cmd.find_subcommand(a).map(|s| s.get_name().to_string()));
    let help = match sub {
        Some(name) => cmd.find_subcommand_mut(&name).expect("found above").render_help(),
        None => cmd.render_help(),
    };
    eprintln!("\n{help}");
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    ExitCode::from(2)
                }
                _ => {
                    eprint!("{}", e.render());
                    print_help_for(&args);
                    ExitCode::from(2)
                }
            };
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::FAILURE;
    }
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            print_help_for(&args);
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
