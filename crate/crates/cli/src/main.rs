//! `cohvac` command-line front end: train, evaluate, compare, simulate.
//!
//! Exit codes: 0 success, 1 runtime failure (including invariant
//! violations), 2 configuration error or missing checkpoint.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cohvac::ddpg::DdpgAgent;
use cohvac::harness::{self, slotlog, ExperimentConfig, MetricsReport, Scenario};
use log::info;

#[derive(Debug, Parser)]
#[command(name = "cohvac", version, about = "Building HVAC and microgrid co-simulation with MPC and DDPG controllers")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a learning scenario's agent and write its checkpoint and log.
    Train(TrainArgs),
    /// Evaluate a scenario on the held-out days and write its report.
    Evaluate(EvaluateArgs),
    /// Merge run reports into one comparison table plus RMSE series.
    Compare(CompareArgs),
    /// Step the plant open loop with constant commands and print the slot log.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Mpc,
    Combo,
    Drl,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Mpc => Scenario::Mpc,
            ScenarioArg::Combo => Scenario::Combo,
            ScenarioArg::Drl => Scenario::Drl,
        }
    }
}

/// Flags shared by every subcommand that builds an experiment config.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(short, long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Weather CSV (timestamp, t_out_c, irradiance_kw_m2).
    #[arg(long, value_name = "CSV", requires = "prices")]
    weather: Option<PathBuf>,

    /// Price CSV (timestamp, buy_price).
    #[arg(long, value_name = "CSV", requires = "weather")]
    prices: Option<PathBuf>,
}

/// Flags that select and place a run.
#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario to run, overriding the config.
    #[arg(short, long, value_enum)]
    scenario: Option<ScenarioArg>,

    /// Single seed, overriding the config's seed list.
    #[arg(long)]
    seed: Option<u64>,

    /// Root directory for run subdirectories.
    #[arg(short, long, value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,

    #[command(flatten)]
    run: RunArgs,

    /// Training episodes, overriding the config.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,

    #[command(flatten)]
    run: RunArgs,

    /// Number of held-out days to evaluate, overriding the config.
    #[arg(long)]
    days: Option<usize>,

    /// Agent checkpoint; defaults to the run directory's checkpoint.json.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Run directories (or summary.json files) to compare.
    #[arg(required = true, num_args = 2.., value_name = "RUN")]
    runs: Vec<PathBuf>,

    /// Directory for comparison.csv, comparison.json and rmse_windows.csv.
    #[arg(short, long, value_name = "DIR", default_value = "runs/comparison")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Day index into the dataset.
    #[arg(long, default_value_t = 0)]
    day: usize,

    /// Airflow applied to every zone, kg/s.
    #[arg(long, default_value_t = 0.0)]
    mdot: f64,

    /// Battery power, kW (positive charges).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    p_ess: f64,

    /// Diesel command, kW.
    #[arg(long, default_value_t = 0.0)]
    u_dg: f64,

    /// Write the slot log here instead of stdout.
    #[arg(short, long, value_name = "PATH")]
    output: Option<PathBuf>,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl From<cohvac::Error> for Failure {
    fn from(e: cohvac::Error) -> Self {
        use cohvac::Error::*;
        let code = match e {
            Config(_) | Validation(_) | Parse { .. } => 2,
            _ => 1,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(args: &ConfigArgs, run: Option<&RunArgs>) -> CliResult<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let (Some(w), Some(p)) = (&args.weather, &args.prices) {
        cfg.data.weather = Some(w.clone());
        cfg.data.prices = Some(p.clone());
    }
    if let Some(run) = run {
        if let Some(s) = run.scenario {
            cfg.scenario = s.into();
        }
        if let Some(seed) = run.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &run.output {
            cfg.output_dir = out.clone();
        }
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Failure {
        code: 1,
        msg: format!("writing {}: {e}", path.display()),
    })
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure {
        code: 1,
        msg: format!("creating {}: {e}", dir.display()),
    })
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let mut cfg = load_config(&args.config, Some(&args.run))?;
    if args.epochs.is_some() {
        cfg.epochs = args.epochs;
    }
    cfg.validate()?;
    if !cfg.scenario.is_learning() {
        return Err(config_error("train needs a learning scenario (combo or drl); the mpc scenario has nothing to train"));
    }
    let data = cfg.load_dataset()?;
    for &seed in &cfg.seeds {
        info!("training {} seed {seed} for {} episodes", cfg.scenario, cfg.epochs());
        let (agent, log) = harness::train(&cfg, data.clone(), seed)?;
        let dir = harness::run_dir(&cfg, seed);
        create_dir(&dir)?;
        write_text(&dir.join("config.toml"), &harness::snapshot(&cfg, seed).to_toml()?)?;
        agent.save(&dir.join("checkpoint.json"))?;
        log.write_csv(&dir.join("training_log.csv"))?;
        println!("{}: trained {} episodes, last-10 mean return {:.4}", dir.display(), log.episodes.len(), log.tail_mean(10));
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult<()> {
    let mut cfg = load_config(&args.config, Some(&args.run))?;
    if let Some(days) = args.days {
        cfg.test_days = days;
    }
    cfg.validate()?;
    if args.checkpoint.is_some() && cfg.seeds.len() > 1 {
        return Err(config_error("--checkpoint needs a single seed; pass --seed"));
    }
    let data = cfg.load_dataset()?;
    let days = cfg.test_day_indices();
    for &seed in &cfg.seeds {
        let dir = harness::run_dir(&cfg, seed);
        let agent = if cfg.scenario.is_learning() {
            let path = args.checkpoint.clone().unwrap_or_else(|| dir.join("checkpoint.json"));
            if !path.is_file() {
                return Err(config_error(format!(
                    "scenario {} needs a trained agent but checkpoint {} does not exist (run `cohvac train` first)",
                    cfg.scenario,
                    path.display()
                )));
            }
            Some(DdpgAgent::load(&path).map_err(|e| config_error(e.to_string()))?)
        } else {
            None
        };
        let slots = harness::evaluate(&cfg, data.clone(), agent.as_ref(), &days)?;
        harness::check_invariants(&cfg.build_plant()?, &slots)?;
        let report = MetricsReport::new(&cfg, seed, &data, days.clone(), slots)?;
        harness::write_report(&dir, &cfg, &report)?;
        let s = &report.summary;
        println!(
            "{}: power {:.4} ± {:.4} kW, temperature {:.3} ± {:.3} °C, RMSE {:.3} ± {:.3} °C",
            dir.display(),
            s.power_mean_kw,
            s.power_std_kw,
            s.temp_mean_c,
            s.temp_std_c,
            s.rmse_mean_c,
            s.rmse_std_c
        );
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> CliResult<()> {
    let table = harness::compare(&args.runs, &args.output)?;
    print!("{}", table.to_csv()?);
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let cfg = load_config(&args.config, None)?;
    cfg.validate()?;
    let slots = harness::simulate(&cfg, args.day, args.mdot, args.p_ess, args.u_dg)?;
    let text = slotlog::slots_to_string(&slots)?;
    match &args.output {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
