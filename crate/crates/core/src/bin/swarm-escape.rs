use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use swarm_escape::scenario::{configured_escape_time, run_with, ScenarioConfig, SimOptions};
use swarm_escape::Error;

#[derive(Parser)]
#[command(name = "swarm-escape", version, about = "Multi-UAV mission simulator with GPS-spoofing escape")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace.csv and summary.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        ticks: Option<u64>,
        /// Record every escape-controller rollout.
        #[arg(long)]
        verbose_rollouts: bool,
    },
    /// Print the escape time for the configured tolerance.
    EscapeTime { config: PathBuf },
    /// Re-run the scenario once per effective range.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "15,50,60,70")]
        r_effect: Vec<f64>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        config: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_SAFETY: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            ticks,
            verbose_rollouts,
        } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = ticks {
                cfg.max_ticks = t;
            }
            let opts = SimOptions {
                verbose_rollouts,
                ..SimOptions::default()
            };
            run_and_report(&cfg, &opts, &out)
        }
        Command::EscapeTime { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            println!("{}", configured_escape_time(&cfg)?);
            Ok(0)
        }
        Command::Sweep { r_effect, out, config } => {
            let base = ScenarioConfig::load(&config)?;
            let mut worst = 0;
            for r in r_effect {
                let mut cfg = base.clone();
                cfg.attacker.enabled = true;
                cfg.attacker.r_effect = r;
                cfg.validate()?;
                println!("r_effect = {r}");
                worst = worst.max(run_and_report(&cfg, &SimOptions::default(), &out.join(format!("r{r}")))?);
            }
            Ok(worst)
        }
    }
}

fn run_and_report(cfg: &ScenarioConfig, opts: &SimOptions, out: &std::path::Path) -> Result<u8, Error> {
    let trace = run_with(cfg, opts)?;
    trace.emit(out)?;
    let s = &trace.summary;
    println!(
        "ticks {}  completed {}  arrival spread {}  episodes {}  min margin {}",
        s.ticks,
        s.completed,
        s.arrival_spread.map_or("-".into(), |v| v.to_string()),
        s.episodes.len(),
        s.min_margin.map_or("-".into(), |m| format!("{m:.2}")),
    );
    println!("wrote {}", out.display());
    Ok(if s.safety_violated() { EXIT_SAFETY } else { 0 })
}
