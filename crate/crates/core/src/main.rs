use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use safe_mppi::harness::{
    generate_field, persist, summarize, sweep, tracking_comparison, write_field, write_summary, Config, ControllerId,
    Scenario, TrialSetup,
};
use safe_mppi::Result;

#[derive(Parser)]
#[command(version, about = "Safe sampling-based MPC experiments")]
struct Cli {
    /// Print the default configuration as TOML and exit.
    #[arg(long)]
    print_default_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo runs of one controller at one disturbance variance.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        controller: Option<String>,
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Safety and RMSE table over a list of variances.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        sigma2: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        controllers: Option<Vec<String>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Noisy tracking of an unsafe reference past one obstacle.
    CompareTracking {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Generate an obstacle field; prints the scenario section.
    Field {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn controllers(names: &[String]) -> Result<Vec<ControllerId>> {
    names.iter().map(|s| s.parse()).collect()
}

fn print_summary_header() {
    println!("controller,sigma2,trials,safety_pct,reach_pct,rmse_m");
}

fn execute(cli: Cli) -> Result<()> {
    if cli.print_default_config {
        print!("{}", Config::default().to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        eprintln!("no command given; see --help");
        return Ok(());
    };
    match command {
        Command::Run {
            config,
            controller,
            sigma2,
            trials,
            seed,
            out,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(c) = controller {
                cfg.run.controller = c.parse()?;
            }
            if let Some(s) = sigma2 {
                cfg.run.sigma2 = s;
            }
            if let Some(t) = trials {
                cfg.run.trials = t;
            }
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            cfg.validate()?;
            let scenario = Scenario::from_config(&cfg)?;
            let setup = TrialSetup::new(&cfg, &scenario, cfg.run.sigma2);
            let id = cfg.run.controller;
            let records = safe_mppi::harness::run_monte_carlo(&setup, id, &scenario.seeds, cfg.run.threads)?;
            std::fs::create_dir_all(&out)?;
            persist(&out, &cfg, &records, "")?;
            let summary = summarize(&records);
            write_summary(&out.join("summary.csv"), std::slice::from_ref(&summary))?;
            write_field(&out.join("field.csv"), &scenario.field)?;
            print_summary_header();
            println!(
                "{},{},{},{},{},{}",
                summary.controller, summary.sigma2, summary.trials, summary.safety_pct, summary.reach_pct, summary.rmse_m
            );
        }
        Command::Sweep {
            config,
            sigma2,
            controllers: ids,
            trials,
            seed,
            out,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = sigma2 {
                cfg.run.sweep = s;
            }
            if let Some(c) = ids {
                cfg.run.sweep_controllers = controllers(&c)?;
            }
            if let Some(t) = trials {
                cfg.run.trials = t;
            }
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            cfg.validate()?;
            let scenario = Scenario::from_config(&cfg)?;
            let rows = sweep(&cfg, &scenario, &cfg.run.sweep, &cfg.run.sweep_controllers, Some(&out))?;
            print_summary_header();
            for s in rows {
                println!("{},{},{},{},{},{}", s.controller, s.sigma2, s.trials, s.safety_pct, s.reach_pct, s.rmse_m);
            }
        }
        Command::CompareTracking { config, trials, out } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(t) = trials {
                cfg.scenario.tracking.trials = t;
            }
            std::fs::create_dir_all(&out)?;
            let mut w = csv::Writer::from_path(out.join("tracking_summary.csv"))?;
            w.write_record(["controller", "trials", "violation_pct", "reach_pct", "failure_pct"])?;
            println!("controller,trials,violation_pct,reach_pct,failure_pct");
            for id in [ControllerId::CbfFilter, ControllerId::BasIlqg, ControllerId::AlIlqg] {
                let s = tracking_comparison(&cfg.scenario.tracking, id, &cfg.barrier, &cfg.trajopt)?;
                let fields = [
                    s.controller.to_string(),
                    s.trials.to_string(),
                    format!("{:?}", s.violation_pct),
                    format!("{:?}", s.reach_pct),
                    format!("{:?}", s.failure_pct),
                ];
                println!("{}", fields.join(","));
                w.write_record(&fields)?;
            }
            w.flush()?;
        }
        Command::Field { config, seed, out } => {
            let mut cfg = load(config.as_deref())?;
            let field = generate_field(seed, &cfg.scenario)?;
            cfg.scenario.field_seed = seed;
            cfg.scenario.obstacles = Some(field.obstacles.clone());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                write_field(&dir.join("field.csv"), &field)?;
            }
            #[derive(serde::Serialize)]
            struct Doc<'a> {
                scenario: &'a safe_mppi::harness::ScenarioSpec,
            }
            print!(
                "{}",
                toml::to_string(&Doc {
                    scenario: &cfg.scenario
                })
                .expect("scenario serializes")
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
