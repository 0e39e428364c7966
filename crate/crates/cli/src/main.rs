use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use navlab::harness::{self, ExperimentConfig, MazeSource, TRAIN_REQUIRED};
use navlab::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "navlab", version, about = "Train and dissect recurrent maze-navigation agents")]
struct Cli {
    /// Flat key=value config file; unspecified keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct MazeArgs {
    /// Maze file in `maze v1` format.
    #[arg(long, conflicts_with = "maze_index")]
    maze: Option<PathBuf>,
    /// Index into the generated analysis mazes (default 0).
    #[arg(long)]
    maze_index: Option<usize>,
}

impl MazeArgs {
    fn source(&self) -> MazeSource {
        match &self.maze {
            Some(p) => MazeSource::File(p.clone()),
            None => MazeSource::Generated(self.maze_index.unwrap_or(0)),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train a network with evolution strategies.
    Train,
    /// Run one lifespan and write the episode.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        maze: MazeArgs,
    },
    /// Hybrid trace, limit cycle, Lyapunov exponents and cyclic stimulation.
    Hds {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        maze: MazeArgs,
    },
    /// Ridge images of each completed trial in an episode.
    Ridge {
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        maze: PathBuf,
    },
    /// CCA between paired neural and behavior matrices.
    Cca {
        #[arg(long)]
        neural: PathBuf,
        #[arg(long)]
        behavior: PathBuf,
        /// Reduce each block to k principal components first.
        #[arg(long)]
        pca_first: Option<usize>,
    },
    /// Matched plain and intervened rollouts.
    Intervene {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        mazes: Option<usize>,
    },
    /// Trace, ridge images and CCA for one checkpoint.
    Pipeline {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pca_first: Option<usize>,
    },
    /// Summarize a run directory.
    Report { run_dir: PathBuf },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let required: &[&str] = if matches!(cli.command, Command::Train) {
        TRAIN_REQUIRED
    } else {
        &[]
    };
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_text(&std::fs::read_to_string(path)?, &path.display().to_string(), required)?,
        None if !required.is_empty() => {
            return Err(Error::Config("train needs --config with the training keys".into()));
        }
        None => ExperimentConfig::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required".into()))
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    if let Command::Report { run_dir } = &cli.command {
        print!("{}", harness::cmd_report(run_dir)?);
        return Ok(());
    }
    let mut cfg = load_config(cli)?;
    let out = out_dir(cli)?;
    match &cli.command {
        Command::Train => harness::cmd_train(&cfg, out)?,
        Command::Rollout { checkpoint, maze } => harness::cmd_rollout(&cfg, checkpoint, &maze.source(), out)?,
        Command::Hds { checkpoint, maze } => harness::cmd_hds(&cfg, checkpoint, &maze.source(), out)?,
        Command::Ridge { episode, maze } => harness::cmd_ridge(&cfg, episode, maze, out)?,
        Command::Cca {
            neural,
            behavior,
            pca_first,
        } => {
            if pca_first.is_some() {
                cfg.cca.pca_first = *pca_first;
            }
            harness::cmd_cca(&cfg, neural, behavior, out)?
        }
        Command::Intervene { checkpoint, spec, mazes } => harness::cmd_intervene(&cfg, checkpoint, spec, *mazes, out)?,
        Command::Pipeline { checkpoint, pca_first } => {
            if pca_first.is_some() {
                cfg.cca.pca_first = *pca_first;
            }
            harness::cmd_pipeline(&cfg, checkpoint, out)?
        }
        Command::Report { .. } => unreachable!("handled above"),
    };
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}
