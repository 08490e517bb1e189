use std::net::TcpStream;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ddrl_core::league::{League, Pairing};
use ddrl_runtime::actor::ActorSettings;
use ddrl_runtime::bench::{bench_topologies, parse_matrix};
use ddrl_runtime::config::ExperimentConfig;
use ddrl_runtime::experiment::{run_experiment, RunError, RunOptions, MAIN_PLAYER};
use ddrl_runtime::link::serve_actor;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CRASH: u8 = 3;

#[derive(Parser)]
#[command(name = "ddrl", version, about = "Distributed actor-learner training runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train according to a config file.
    Run { config: PathBuf },
    /// Play an all-pairs evaluation round and save the league.
    Eval {
        league: PathBuf,
        #[arg(long, default_value_t = 20)]
        games: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run every row of a config matrix and print the comparison table.
    Bench { matrix: PathBuf },
    /// Print ratings and the empirical win-rate matrix of a league file.
    Inspect { league: PathBuf },
    /// Socket actor worker (spawned by `run`).
    #[command(hide = true)]
    Actor {
        #[arg(long)]
        connect: String,
        #[arg(long)]
        worker_id: usize,
        #[arg(long)]
        config: PathBuf,
    },
}

fn run_error_code(e: &RunError) -> u8 {
    match e {
        RunError::ConfigInvalid(_) => EXIT_CONFIG,
        RunError::WorkerCrashed { .. } => EXIT_CRASH,
        _ => EXIT_FAILURE,
    }
}

fn cmd_run(path: PathBuf) -> Result<(), RunError> {
    let cfg = ExperimentConfig::load(&path)?;
    let opts = RunOptions {
        actor_exe: None,
        write_files: true,
    };
    match run_experiment(cfg, &opts) {
        Ok(report) => {
            print!("{}", report.summary);
            let eval = &report.evaluation;
            if !eval.is_empty() {
                let n = eval.len() as f64;
                let ret = eval.iter().map(|e| e.ret).sum::<f64>() / n;
                let len = eval.iter().map(|e| e.length as f64).sum::<f64>() / n;
                println!("evaluation: {} episodes, mean return {ret:.4}, mean length {len:.3}", eval.len());
            }
            Ok(())
        }
        Err(e) => {
            if let RunError::WorkerCrashed { partial, .. } | RunError::Deadlock { partial, .. } = &e {
                print!("{partial}");
            }
            Err(e)
        }
    }
}

fn print_league(league: &League) {
    let ratings = league.ratings_or_initial();
    println!("{:<24}  {:>9}", "generation", "rating");
    for (g, r) in &ratings {
        println!("{:<24}  {:>9.2}", g.to_string(), r);
    }
    let gens = league.all_generations();
    println!();
    println!("win rate (row vs column), {} matches", league.matches().len());
    print!("{:<24}", "");
    for g in &gens {
        print!("  {:>10}", g.to_string());
    }
    println!();
    for a in &gens {
        print!("{:<24}", a.to_string());
        for b in &gens {
            match league.win_rate(a, b) {
                Some(w) if a != b => print!("  {w:>10.3}"),
                _ => print!("  {:>10}", "-"),
            }
        }
        println!();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), (u8, String)> = match cli.command {
        Command::Run { config } => cmd_run(config).map_err(|e| (run_error_code(&e), e.to_string())),
        Command::Eval { league, games, seed } => (|| {
            let mut l = League::load(&league)?;
            l.evaluation_round(&Pairing::AllPairs, games, seed)?;
            l.save(&league)?;
            print_league(&l);
            Ok::<_, ddrl_core::league::LeagueError>(())
        })()
        .map_err(|e| (EXIT_FAILURE, e.to_string())),
        Command::Inspect { league } => League::load(&league)
            .map(|l| print_league(&l))
            .map_err(|e| (EXIT_FAILURE, e.to_string())),
        Command::Bench { matrix } => (|| {
            let text = std::fs::read_to_string(&matrix).map_err(RunError::io)?;
            let rows = parse_matrix(&text, std::env::vars())?;
            print!("{}", bench_topologies(&rows)?);
            Ok(())
        })()
        .map_err(|e: RunError| (run_error_code(&e), e.to_string())),
        Command::Actor {
            connect,
            worker_id,
            config,
        } => (|| {
            let cfg = ExperimentConfig::load(&config).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            let settings = ActorSettings::from_config(&cfg, worker_id, MAIN_PLAYER.into());
            let stream = TcpStream::connect(&connect).map_err(|e| (EXIT_FAILURE, e.to_string()))?;
            serve_actor(stream, settings).map_err(|e| (EXIT_FAILURE, e.to_string()))
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
