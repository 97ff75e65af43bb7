use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sim_cellfree::channel::{PropagationSet, WaveMatrices};
use sim_cellfree::complexity::{cost_table, write_cost_table, CostPoint};
use sim_cellfree::fusion::WeightDesign;
use sim_cellfree::harness::{
    run_experiment_with_threads, write_cost_csv, write_sweep_csv, Experiment, ExperimentSpec, Scale,
};
use sim_cellfree::rng::StreamKey;
use sim_cellfree::scenario::{build_layout, convert_units_onto, load_config, write_positions_csv, RawConfig, SystemConfig};
use sim_cellfree::validation::invariant_suite;
use sim_cellfree::{Error, Result};

#[derive(Parser)]
#[command(name = "simcf", version, about = "Cell-free uplink with stacked metasurfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a parameter sweep and write its CSV.
    Run(RunArgs),
    /// Print multiplication counts for grids of (N, M, K, L, T).
    Cost(CostArgs),
    /// Run the built-in invariant checks.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the transfer matrices and UE channels of one realization.
    DumpChannels(DumpArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the reduced deployment (default).
    #[arg(long, conflicts_with = "paper_scale")]
    desk: bool,
    /// Start from the full reference deployment.
    #[arg(long)]
    paper_scale: bool,
    /// Overrides as `--key=value`, applied after the config file. Must come
    /// after all other options.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn scale(&self) -> Scale {
        if self.paper_scale {
            Scale::Reference
        } else {
            Scale::Desk
        }
    }

    fn resolve(&self) -> Result<SystemConfig> {
        let mut raw = match &self.config {
            Some(p) => load_config(p)?,
            None => RawConfig::new(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .strip_prefix("--")
                .and_then(|s| s.split_once('='))
                .ok_or_else(|| Error::Config(format!("override `{o}` is not `--key=value`")))?;
            raw.insert(k.to_string(), v.to_string());
        }
        convert_units_onto(self.scale().base_config(), &raw)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    experiment: Experiment,
    /// Master seed; defaults to the config's `rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated sweep values replacing the default grid.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Design fusion weights as if the hardware were ideal.
    #[arg(long)]
    hwi_unaware: bool,
    /// Give every grid point its own trial streams.
    #[arg(long)]
    independent_streams: bool,
    /// Stop the phase iterations once the relative gain change is below this.
    #[arg(long)]
    early_stop: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [16u64, 64, 256])]
    n: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = [16u64])]
    m: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = [8u64])]
    k: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = [16u64])]
    l: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = [4u64])]
    t: Vec<u64>,
    #[arg(long, default_value_t = 10)]
    iterations: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(args: RunArgs) -> Result<()> {
    let base = args.config.resolve()?;
    let mut spec = ExperimentSpec::new(args.experiment, args.config.scale());
    spec.seed = args.seed.unwrap_or(base.rng_seed);
    spec.base = base;
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if let Some(g) = args.grid {
        spec.grid = g;
    }
    if args.hwi_unaware {
        spec.options.weight_design = WeightDesign::HardwareUnaware;
    }
    spec.options.early_stop = args.early_stop;
    spec.common_random_numbers = !args.independent_streams;
    let out = output(args.out.as_deref())?;
    if spec.experiment == Experiment::CostTable {
        return write_cost_csv(out, &spec);
    }
    let report = run_experiment_with_threads(&spec, args.threads)?;
    write_sweep_csv(out, &report)?;
    match report.points.into_iter().find_map(|p| p.err()) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cost(args: CostArgs) -> Result<()> {
    let mut points = Vec::new();
    for &n in &args.n {
        for &m in &args.m {
            for &k in &args.k {
                for &l in &args.l {
                    for &t in &args.t {
                        points.push(CostPoint { n, m, k, l, t });
                    }
                }
            }
        }
    }
    let rows = cost_table(&points, args.iterations)?;
    write_cost_table(output(args.out.as_deref())?, &rows)
}

fn validate(seed: u64) -> Result<bool> {
    let checks = invariant_suite(seed)?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn dump(args: DumpArgs) -> Result<()> {
    let mut config = args.config.resolve()?;
    if let Some(s) = args.seed {
        config.rng_seed = s;
    }
    std::fs::create_dir_all(&args.out)?;
    let layout = build_layout(&config)?;
    let waves = WaveMatrices::from_config(&config)?;
    let props = PropagationSet::build(&config, &layout, &waves, StreamKey::root(config.rng_seed))?;
    props.dump_csv(&args.out)?;
    write_positions_csv(File::create(args.out.join("ap_positions.csv"))?, &layout.ap_positions)?;
    write_positions_csv(File::create(args.out.join("ue_positions.csv"))?, &layout.ue_positions)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Cost(a) => cost(a),
        Command::Validate { seed } => match validate(seed) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(5),
            Err(e) => Err(e),
        },
        Command::DumpChannels(a) => dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
