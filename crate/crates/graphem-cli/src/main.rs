//! `graphem` command-line tool: generate synthetic linear-Gaussian datasets,
//! estimate sparse transition matrices, tune the prior weight, reproduce the
//! benchmark table, and export estimated graphs as DOT.

mod config;
mod dot;
mod run;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{resolve, FileConfig, Method, Overrides};
use graphem::model::Preset;

#[derive(Parser)]
#[command(
    name = "graphem",
    version,
    about = "Sparse transition-matrix estimation for linear-Gaussian state-space models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (trajectory, ground truth, manifest)
    Generate(GenerateArgs),
    /// Fit a transition matrix over seeded realizations
    Fit(FitArgs),
    /// Grid-search the prior weight on a single realization
    GammaSearch(GammaSearchArgs),
    /// Run GraphEM and MLEM across presets and emit the score table
    Bench(BenchArgs),
    /// Convert an estimated matrix CSV into a DOT graph
    ExportGraph(ExportGraphArgs),
}

#[derive(Args, Clone, Default)]
struct SharedArgs {
    /// TOML config file; command-line flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named dataset preset
    #[arg(long, value_parser = ["A", "B", "C", "D"])]
    preset: Option<String>,
    /// Base seed; realization r uses seed + r
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for realizations / grid points
    #[arg(long)]
    jobs: Option<usize>,
    /// Edge-detection magnitude threshold
    #[arg(long)]
    threshold: Option<f64>,
    /// EM stopping tolerance on the objective change
    #[arg(long)]
    em_tolerance: Option<f64>,
    /// EM iteration cap
    #[arg(long)]
    em_max_iters: Option<usize>,
    /// Scale of the diagonal initializer A0 = alpha I
    #[arg(long)]
    init_alpha: Option<f64>,
    /// Inner-solver relaxation, in (0, 2)
    #[arg(long)]
    dr_theta: Option<f64>,
    /// Inner-solver stopping tolerance
    #[arg(long)]
    dr_tolerance: Option<f64>,
    /// Inner-solver iteration cap
    #[arg(long)]
    dr_max_iters: Option<usize>,
}

impl SharedArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset.clone(),
            seed: self.seed,
            out: self.out.clone(),
            jobs: self.jobs,
            threshold: self.threshold,
            em_tolerance: self.em_tolerance,
            em_max_iters: self.em_max_iters,
            init_alpha: self.init_alpha,
            dr_theta: self.dr_theta,
            dr_tolerance: self.dr_tolerance,
            dr_max_iters: self.dr_max_iters,
            ..Default::default()
        }
    }

    fn file_config(&self) -> Result<FileConfig> {
        match &self.config {
            Some(path) => FileConfig::load(path),
            None => Ok(FileConfig::default()),
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    shared: SharedArgs,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Estimation method
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Prior weight (required for graphem)
    #[arg(long)]
    gamma: Option<f64>,
    /// Number of independent realizations
    #[arg(long)]
    realizations: Option<u64>,
    /// Fit a dataset previously written by `generate`
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GammaSearchArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Comma-separated grid of prior weights (default: fractions of gamma_max)
    #[arg(long, value_delimiter = ',')]
    gamma_grid: Option<Vec<f64>>,
    /// Search a dataset previously written by `generate`
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Presets to benchmark (comma-separated; default all four)
    #[arg(long = "presets", value_delimiter = ',', value_parser = ["A", "B", "C", "D"])]
    presets: Option<Vec<String>>,
    /// Fixed prior weight; when absent, tuned per dataset by grid search
    #[arg(long)]
    gamma: Option<f64>,
    /// Comma-separated grid for the per-dataset tuning
    #[arg(long, value_delimiter = ',')]
    gamma_grid: Option<Vec<f64>>,
    /// Realizations per dataset and method
    #[arg(long)]
    realizations: Option<u64>,
}

#[derive(Args)]
struct ExportGraphArgs {
    /// Matrix CSV to convert (as written by `fit` or `generate`)
    input: PathBuf,
    /// Output DOT path
    #[arg(long)]
    out: PathBuf,
    /// Edge-detection magnitude threshold
    #[arg(long, default_value_t = graphem::metrics::DEFAULT_EDGE_THRESHOLD)]
    threshold: f64,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(args) => {
            let experiment = resolve(args.shared.file_config()?, args.shared.overrides())?;
            run::run_generate(&experiment)
        }
        Command::Fit(args) => {
            let mut overrides = args.shared.overrides();
            overrides.method = args.method;
            overrides.gamma = args.gamma;
            overrides.realizations = args.realizations;
            overrides.data_dir = args.data_dir.clone();
            let experiment = resolve(args.shared.file_config()?, overrides)?;
            run::run_fit(&experiment)
        }
        Command::GammaSearch(args) => {
            let mut overrides = args.shared.overrides();
            overrides.gamma_grid = args.gamma_grid.clone();
            overrides.data_dir = args.data_dir.clone();
            let experiment = resolve(args.shared.file_config()?, overrides)?;
            run::run_gamma_search(&experiment, false).map(|_| ())
        }
        Command::Bench(args) => {
            let mut overrides = args.shared.overrides();
            overrides.gamma = args.gamma;
            overrides.gamma_grid = args.gamma_grid.clone();
            overrides.realizations = args.realizations;
            // bench iterates presets itself; satisfy the dataset resolver.
            if overrides.preset.is_none() {
                overrides.preset = Some("A".into());
            }
            let experiment = resolve(args.shared.file_config()?, overrides)?;
            let presets = match args.presets {
                Some(names) => names
                    .iter()
                    .map(|n| Preset::from_name(n))
                    .collect::<graphem::Result<Vec<_>>>()?,
                None => Preset::ALL.to_vec(),
            };
            run::run_bench(&experiment, &presets).map(|_| ())
        }
        Command::ExportGraph(args) => run::run_export_graph(&args.input, &args.out, args.threshold),
    }
}
