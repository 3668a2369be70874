use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pirl::harness::{self, exit, ExperimentConfig, HarnessError, OracleStatus};

#[derive(Parser)]
#[command(name = "pirl", version, about = "Physics-informed deep Q-learning of long-term safety probabilities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed.
    Train {
        /// Experiment file or recipe name.
        #[arg(long)]
        config: String,
        /// Run only this seed (overrides `$SEED` and the file's list).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the file's `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid error and probe safety probabilities of trained checkpoints.
    Eval {
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Checkpoint to evaluate (defaults to `<out>/seed_<seed>/checkpoint.qnet`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Monte-Carlo vs analytic survival self-test.
    OracleCheck {
        #[arg(long, default_value_t = 100_000)]
        n_paths: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0, hide = true)]
        inject_bias: f64,
    },
    /// Shipped experiment recipes.
    Recipes {
        #[command(subcommand)]
        action: RecipesAction,
    },
}

#[derive(Subcommand)]
enum RecipesAction {
    /// Print the recipe names.
    List,
    /// Print one recipe.
    Show { name: String },
}

fn setup(config: &str, seed: Option<u64>, out: Option<PathBuf>) -> Result<(ExperimentConfig, Vec<u64>, PathBuf), HarnessError> {
    let cfg = harness::load_config(config)?;
    let env = std::env::var("SEED").ok();
    let seeds = harness::resolve_seeds(&cfg, seed, env.as_deref())?;
    let out = out.unwrap_or_else(|| cfg.out_dir.clone());
    Ok((cfg, seeds, out))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let (cfg, seeds, out) = setup(&config, seed, out)?;
            for s in harness::run_train(&cfg, &seeds, &out)? {
                println!(
                    "seed {}: {} episodes, {} unsafe, final return {:.3} -> {}",
                    s.seed,
                    s.episodes,
                    s.cum_unsafe_events,
                    s.final_return_mean,
                    harness::seed_dir(&out, s.seed).display()
                );
            }
        }
        Command::Eval { config, seed, out, checkpoint } => {
            let (cfg, seeds, out) = setup(&config, seed, out)?;
            if checkpoint.is_some() && seeds.len() > 1 {
                return Err(HarnessError::Config {
                    origin: "--checkpoint".into(),
                    line: None,
                    msg: "an explicit checkpoint needs a single seed (--seed)".into(),
                });
            }
            let mut mses = Vec::new();
            for seed in seeds {
                let dir = harness::seed_dir(&out, seed);
                let ck = checkpoint.clone().unwrap_or_else(|| dir.join("checkpoint.qnet"));
                let e = harness::run_eval_seed(&cfg, seed, &ck, &dir)?;
                println!("seed {seed}: grid MSE {:.5}", e.mse);
                for p in &e.probes {
                    println!(
                        "  x = {:?}: learned {:.4} ± {:.4}, nominal {:.4} ± {:.4}",
                        p.x, p.learned.mean, p.learned.std_error, p.nominal.mean, p.nominal.std_error
                    );
                }
                mses.push(e.mse);
            }
            if mses.len() > 1 {
                let (m, s) = pirl::eval::mean_and_std(&mses);
                println!("MSE over {} seeds: {m:.5} ± {s:.5}", mses.len());
            }
        }
        Command::OracleCheck { n_paths, dt, seed, inject_bias } => {
            let rows = harness::run_oracle_check(n_paths, dt, seed, inject_bias);
            print!("{}", harness::format_oracle_table(&rows));
            let fails = rows.iter().filter(|r| r.status == OracleStatus::Fail).count();
            let passes = rows.iter().filter(|r| r.status == OracleStatus::Pass).count();
            println!("{passes}/{} pass, {fails} fail", rows.len());
            if fails > 0 {
                return Err(HarnessError::OracleFailed);
            }
        }
        Command::Recipes { action: RecipesAction::List } => {
            for (name, _) in harness::RECIPES {
                println!("{name}");
            }
        }
        Command::Recipes { action: RecipesAction::Show { name } } => match harness::recipe(&name) {
            Some(src) => print!("{src}"),
            None => return Err(HarnessError::MissingFile(name.into())),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
