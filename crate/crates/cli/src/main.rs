use std::path::PathBuf;
use std::process::ExitCode;

use apmc_cli::{run, CliError, Command, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "apmc", version, about = "Asymptotic-preserving particle simulation and multilevel Monte Carlo experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Flat `key = value` configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed of all random streams.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output CSV path (standard output when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: available parallelism). Never changes results.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Any configuration key, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[command(flatten)]
    keys: KeyFlags,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Coupled fine/coarse trace, plus variance curves when samples > 1.
    DemoPaths,
    /// Level statistics over a geometric time-step grid, with the bound overlay.
    VarianceScan,
    /// Adaptive multilevel Monte Carlo run.
    Mlmc,
    /// Coarse-level threshold roots over an (ε, t*) grid.
    ThresholdMap,
    /// Fitted decay rates of the level differences in the small-step tail.
    Rates,
}

macro_rules! key_flags {
    ($($field:ident),* $(,)?) => {
        /// Shorthand flags for the most used configuration keys.
        #[derive(Args, Default)]
        struct KeyFlags {
            $(
                #[arg(long, global = true, value_name = "VALUE", allow_hyphen_values = true)]
                $field: Option<String>,
            )*
        }

        impl KeyFlags {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

key_flags!(
    epsilon, v_char, dist, init, t_end, m_factor, dt, dt_fine, dt0, rmse, strategy, bias_rule, max_levels,
    initial_samples, qoi, samples, trace, coupled, level_min, level_max, k_x, k_v, epsilons,
);

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for (key, value) in cli.keys.pairs() {
        config.set(key, value)?;
    }
    for item in &cli.set {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::invalid(item, "expected KEY=VALUE after --set"))?;
        config.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        config.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        config.set("out_path", &out.display().to_string())?;
    }
    Ok(config)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut config = resolve(cli)?;
    let command = match cli.command {
        Cmd::DemoPaths => Command::DemoPaths,
        Cmd::VarianceScan => Command::VarianceScan,
        Cmd::Mlmc => Command::Mlmc,
        Cmd::ThresholdMap => Command::ThresholdMap,
        Cmd::Rates => Command::Rates,
    };
    let out = config.raw("out_path").map(PathBuf::from);

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::invalid("threads", "must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::invalid("threads", e.to_string()))?;
    let outcome = pool.install(|| run(command, &mut config))?;

    outcome.csv.write(out.as_deref())?;
    if let Some(summary) = &outcome.summary {
        // keep standard output clean when it carries the CSV
        if out.is_some() {
            print!("{summary}");
        } else {
            eprint!("{summary}");
        }
    }
    if outcome.converged { Ok(()) } else { Err(CliError::NotConverged) }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("apmc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
