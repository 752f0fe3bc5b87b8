use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use distill_lab::harness::{
    defaults_help, parse_config, run_experiment, summary_table, write_outputs, ExperimentKind,
};

#[derive(Debug, Parser)]
#[command(
    name = "distill-lab",
    version,
    about = "Entropy-controlled distillation experiments on Gaussian mixtures and Markov token models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Direct vs distilled student at a single β.
    GmmRepro(RunArgs),
    /// Distilled student across `beta_list`.
    BetaSweep(RunArgs),
    /// Low-rank token student across `tau_list`.
    TokenSweep(RunArgs),
    /// Log-density tables of every model on a 2-D grid.
    DensityExport(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON experiment config; its `kind` must match the subcommand.
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: the config's `output_dir`].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed [default: the config's `master_seed`].
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "DISTILL_LAB_JOBS", default_value_t = 0)]
    jobs: usize,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::GmmRepro(a) => (ExperimentKind::GmmRepro, a),
            Command::BetaSweep(a) => (ExperimentKind::BetaSweep, a),
            Command::TokenSweep(a) => (ExperimentKind::TokenSweep, a),
            Command::DensityExport(a) => (ExperimentKind::DensityExport, a),
        }
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<bool, distill_lab::Error> {
    let mut cfg = parse_config(&args.config)?;
    if cfg.kind != kind {
        return Err(distill_lab::Error::Config {
            field: "kind".into(),
            message: format!(
                "config is for `{}` but the subcommand is `{kind}`",
                cfg.kind
            ),
        });
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let dir = args.out.unwrap_or_else(|| cfg.output_dir.clone());
    let outcome = run_experiment(&cfg, args.jobs)?;
    for path in write_outputs(&cfg, &outcome, &dir)? {
        println!("wrote {}", path.display());
    }
    if !outcome.rows.is_empty() {
        print!("{}", summary_table(&outcome.rows));
    }
    for failure in &outcome.failures {
        eprintln!("failed: {failure}");
    }
    Ok(outcome.succeeded())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let help = defaults_help();
    let command = Cli::command()
        .after_help(help.clone())
        .mut_subcommands(|sub| sub.after_help(help.clone()));
    let cli = match Cli::from_arg_matches(&command.get_matches()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let (kind, args) = cli.command.split();
    match run(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
