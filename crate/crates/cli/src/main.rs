mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use refkit::reference::MedianPool;
use refkit::registration::RegistrationConfig;
use refkit::Band;

const EXIT_PARTIAL: u8 = 2;
const EXIT_FATAL: u8 = 1;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "misr-refkit", version, about = "Reference recovery, baseline super-resolution and cPSNR evaluation for multi-image scene series")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Dataset root holding <BAND>/<scene_id>/ directories
    #[arg(long, global = true, default_value = ".")]
    pub root: PathBuf,
    #[arg(long, global = true, default_value = "NIR", value_parser = parse_band)]
    pub band: Band,
    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "MISR_REFKIT_JOBS")]
    pub jobs: Option<usize>,
    /// Replace existing outputs
    #[arg(long, global = true)]
    pub force: bool,
    /// Enforce view-count and clearance rules when loading scenes
    #[arg(long, global = true)]
    pub validate: bool,
    /// Status maps use zero for clear pixels
    #[arg(long, global = true)]
    pub invert_status: bool,
}

fn parse_band(s: &str) -> Result<Band, String> {
    s.parse().map_err(|e: refkit::Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with a truth manifest
    Gen(GenArgs),
    /// Recover the reference view of each scene by registration to its target
    FindRef(FindRefArgs),
    /// Guess the reference view from status maps and medians
    HeuristicRef(HeuristicRefArgs),
    /// Produce baseline super-resolved images
    Sr(SrArgs),
    /// Score super-resolved images with cPSNR
    Eval(EvalArgs),
    /// Tabulate mean cPSNR by super-resolution and reference method
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub n_scenes: usize,
    #[arg(long, default_value_t = 12)]
    pub n_views: usize,
    #[arg(long, default_value_t = 128)]
    pub lr_size: usize,
    #[arg(long, default_value_t = 0.6)]
    pub shift_sigma: f64,
    #[arg(long, default_value_t = 0.005)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0.35)]
    pub cloud_coverage_max: f64,
    #[arg(long, default_value_t = 0.25)]
    pub clear_probability: f64,
    #[arg(long, default_value_t = 0.15)]
    pub temporal_amplitude: f64,
    #[arg(long, default_value_t = 0.02)]
    pub bias_range: f64,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct RegistrationArgs {
    #[arg(long, default_value_t = 50)]
    pub reg_max_iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub reg_tol: f64,
    #[arg(long, default_value_t = 3)]
    pub reg_pyramid_levels: usize,
}

impl RegistrationArgs {
    pub fn config(&self) -> RegistrationConfig {
        RegistrationConfig {
            max_iters: self.reg_max_iters,
            tol: self.reg_tol,
            pyramid_levels: self.reg_pyramid_levels,
            ..RegistrationConfig::default()
        }
    }
}

#[derive(Args, Debug, Clone, Copy)]
pub struct SimilarityArgs {
    /// Remove the mean difference before comparing a view to the target
    #[arg(long)]
    pub bias_corrected: bool,
    #[command(flatten)]
    pub registration: RegistrationArgs,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum PoolArg {
    Pooled,
    MedianOfMedians,
}

impl From<PoolArg> for MedianPool {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::Pooled => MedianPool::Pooled,
            PoolArg::MedianOfMedians => MedianPool::MedianOfMedians,
        }
    }
}

#[derive(Args, Debug, Clone, Copy)]
pub struct HeuristicArgs {
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.3)]
    pub beta: f64,
    /// Use the raw mask L1 distance and clear-pixel count
    #[arg(long)]
    pub heuristic_raw_terms: bool,
    /// Subtract the clearance term instead of adding it
    #[arg(long)]
    pub reward_clearance: bool,
    #[arg(long, value_enum, default_value = "pooled")]
    pub median_pool: PoolArg,
    /// Take medians over clear pixels only
    #[arg(long)]
    pub median_clear_only: bool,
}

#[derive(Args, Debug, Clone)]
pub struct FindRefArgs {
    /// Output CSV (default: standard output)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ground truth to score against (default: <root>/truth.csv when present)
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub similarity: SimilarityArgs,
}

#[derive(Args, Debug, Clone)]
pub struct HeuristicRefArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub heuristic: HeuristicArgs,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SrMethod {
    ShiftAndAdd,
    Bicubic,
}

impl SrMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SrMethod::ShiftAndAdd => "shift-and-add",
            SrMethod::Bicubic => "bicubic",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SrArgs {
    /// similarity | clearance | median | heuristic | fixed:N | csv:PATH
    #[arg(long, default_value = "clearance", value_parser = commands::parse_ref_spec)]
    pub ref_method: commands::RefSpec,
    #[arg(long, value_enum, default_value = "shift-and-add")]
    pub sr_method: SrMethod,
    /// Output directory (default: <root>/sr/<band>/<sr-method>_<ref-method>)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub similarity: SimilarityArgs,
    #[command(flatten)]
    pub heuristic: HeuristicArgs,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Directory holding <scene_id>_SR.png files
    #[arg(long)]
    pub sr_dir: PathBuf,
    /// Output CSV (default: <sr-dir>/eval.csv)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub cpsnr_border: usize,
    #[arg(long, default_value_t = 7)]
    pub cpsnr_window: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Directory searched for evaluation summaries (default: <root>/sr)
    #[arg(long)]
    pub eval_dir: Option<PathBuf>,
    /// Also write the table as CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    if let Some(jobs) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            log::warn!("could not size the worker pool: {e}");
        }
    }

    let g = &cli.global;
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(g, a),
        Command::FindRef(a) => commands::find_ref(g, a),
        Command::HeuristicRef(a) => commands::heuristic_ref(g, a),
        Command::Sr(a) => commands::sr(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::Report(a) => commands::report(g, a),
    };
    match result {
        Ok(commands::Outcome::Complete) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Partial) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}
