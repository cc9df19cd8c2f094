use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use defend_cli::commands;
use defend_cli::config::{load_run_config, load_sweep_spec};
use defend_cli::error::CliResult;
use defend_core::Reduction;

#[derive(Parser)]
#[command(
    name = "defend",
    version,
    about = "Fair unsupervised graph anomaly detection"
)]
struct Cli {
    /// JSON config (a run config, or a sweep spec for `sweep`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    reduction: Option<ReductionArg>,
    /// Worker threads for `ablate` and `sweep`; defaults to the core count.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    Mean,
    Sum,
}

impl From<ReductionArg> for Reduction {
    fn from(r: ReductionArg) -> Self {
        match r {
            ReductionArg::Mean => Reduction::Mean,
            ReductionArg::Sum => Reduction::Sum,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic biased graph with planted anomalies.
    Generate,
    /// Train one model and score every node.
    Train {
        /// Dataset directory; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Re-score a dataset with the model in the `--out` run directory.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train every variant over the configured seeds.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train over the cartesian product of the sweep axes.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the autoencoder baseline with one fairness regularizer.
    Baseline {
        #[arg(long)]
        data: Option<PathBuf>,
        /// none, fairod, correlation or hin.
        #[arg(long)]
        reg: String,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let reduction = cli.reduction.map(Reduction::from);
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Command::Sweep { data } = &cli.command {
        let mut spec = load_sweep_spec(cli.config.as_deref())?;
        spec.base.apply_overrides(cli.seed, reduction);
        if cli.seed.is_some() {
            spec.seeds = None;
        }
        let runs = commands::sweep(&spec, data.as_deref(), &cli.out, jobs)?;
        println!(
            "wrote {runs} runs to {}",
            cli.out.join("tradeoff.csv").display()
        );
        return Ok(());
    }
    let mut cfg = load_run_config(cli.config.as_deref())?;
    cfg.apply_overrides(cli.seed, reduction);
    match &cli.command {
        Command::Generate => {
            let s = commands::generate(&cfg, &cli.out)?;
            println!(
                "N={} E={} d={} gamma_G={:.4} gamma_A={:.4}",
                s.n_nodes, s.n_edges, s.n_attrs, s.gamma_g, s.gamma_a
            );
        }
        Command::Train { data } => match commands::train(&cfg, data.as_deref(), &cli.out)? {
            Some(r) => println!(
                "{}: auc_roc={:.4} auc_pr={:.4} delta_dp={:.4} delta_eo={}",
                r.variant.name(),
                r.metrics.auc_roc,
                r.metrics.auc_pr,
                r.metrics.delta_dp,
                r.metrics
                    .delta_eo
                    .map_or("n/a".into(), |e| format!("{e:.4}"))
            ),
            None => println!("trained; dataset has no labels, so no report"),
        },
        Command::Eval { data } => {
            let r = commands::eval(data.as_deref(), &cli.out)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&r).expect("reports serialise")
            );
        }
        Command::Ablate { data } => {
            let path = commands::ablate(&cfg, data.as_deref(), &cli.out, jobs)?;
            println!("wrote {}", path.display());
        }
        Command::Baseline { data, reg } => {
            let r = commands::baseline(&cfg, data.as_deref(), reg, &cli.out)?;
            println!("{reg}: auc_roc={:.4} delta_dp={:.4}", r.auc_roc, r.delta_dp);
        }
        Command::Sweep { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
