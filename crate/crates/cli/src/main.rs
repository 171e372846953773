use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pens_cli::{commands, report, ConfigFile};

#[derive(Parser)]
#[command(name = "pens", version, about = "Decentralized learning simulator with performance-based neighbor selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set protocol.lr=0.02`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<ConfigFile> {
        ConfigFile::load(&self.config, &self.sets, self.seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Partition the raw dataset and write client shards.
    Prepare(ConfigArgs),
    /// Run the configured regime for every seed.
    Run(ConfigArgs),
    /// Aggregate run files below a directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => a.load().and_then(|cfg| {
            let m = commands::prepare(&cfg)?;
            println!(
                "prepared {} clients ({} train / {} val each) in {}",
                m.clients.len(),
                m.n_train_per_client,
                m.n_val_per_client,
                cfg.shard_dir().display()
            );
            Ok(())
        }),
        Command::Run(a) => a
            .load()
            .and_then(|cfg| commands::run(&cfg, &mut std::io::stdout().lock()).map(|_| ())),
        Command::Report { dir } => report::report(&dir).map(|(_, tables)| print!("{tables}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
