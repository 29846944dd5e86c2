use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgm_cli::pipeline::{cmd_bench, cmd_cluster, cmd_er_oracle, cmd_gen, cmd_graph, cmd_train};
use sgm_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "sgm", version, about = "Graph-sampled PINN training and benchmarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration; `SGM_<SECTION>_<KEY>` variables override it.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the collocation cloud.
    Gen(Common),
    /// Build the kNN graph over the interior points.
    Graph(Common),
    /// Estimate resistances and decompose the graph into clusters.
    Cluster(Common),
    /// Compare estimated resistances with the dense oracle.
    ErOracle(Common),
    /// Train with the configured sampler for every seed.
    Train(Common),
    /// Train every method in `run.methods` and write the comparison report.
    Bench(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (Command::Gen(c) | Command::Graph(c) | Command::Cluster(c) | Command::ErOracle(c) | Command::Train(c) | Command::Bench(c)) =
        &cli.command;
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(dir) = &c.output_dir {
        cfg.run.output_dir = dir.clone();
    }
    let json = match cli.command {
        Command::Gen(_) => serde_json::json!({ "cloud": cmd_gen(&cfg)? }),
        Command::Graph(_) => serde_json::to_value(cmd_graph(&cfg)?)?,
        Command::Cluster(_) => serde_json::to_value(cmd_cluster(&cfg)?)?,
        Command::ErOracle(_) => serde_json::to_value(cmd_er_oracle(&cfg)?)?,
        Command::Train(_) => {
            let runs = cmd_train(&cfg)?;
            serde_json::to_value(runs.iter().map(|r| &r.record).collect::<Vec<_>>())?
        }
        Command::Bench(_) => {
            let report = cmd_bench(&cfg)?;
            println!("{}", report.markdown());
            return Ok(());
        }
    };
    println!("{}", serde_json::to_string_pretty(&json)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SGM_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
