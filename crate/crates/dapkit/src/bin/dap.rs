use clap::{Parser, Subcommand};
use dapkit::cli::{
    cmd_ablate, cmd_eval, cmd_flops, cmd_gen_data, cmd_train, cmd_visualize, load_run_config,
    paper_scale_config, EvalTask, SweepKind,
};
use dapkit::error::DapError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dap", about = "Cross-lingual sentence embedding experiments")]
struct Cli {
    /// Flat dotted-key JSON config file (e.g. {"model.d": 64}).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config overrides: --set train.rho=0.5 (repeatable; wins over file).
    #[arg(long = "set", value_parser = parse_kv, global = true)]
    set: Vec<(String, String)>,
    #[command(subcommand)]
    command: Command,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic parallel corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        n_pairs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Train a model; writes config.json, metrics.jsonl, ckpt.bin.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the held-out split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = ["retrieval", "mining", "token-align"])]
        task: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one knob, training a model per value; emits a CSV.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = ["direction", "rho", "klayers"])]
        sweep: String,
    },
    /// PCA scatter of token representations from held-out pairs.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 100)]
        n_pairs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analytic per-sample FLOPs table.
    Flops {
        /// Use published mBERT-base scale constants.
        #[arg(long)]
        paper_scale: bool,
        #[arg(long, default_value_t = 32)]
        seq_len: usize,
    },
}

fn run(cli: Cli) -> dapkit::error::Result<bool> {
    let cfg = load_run_config(cli.config.as_deref(), &cli.set)?;
    match cli.command {
        Command::GenData {
            out,
            n_pairs,
            seed,
            force,
        } => {
            cmd_gen_data(&cfg, n_pairs, seed, &out, force)?;
            println!("wrote {}", out.display());
        }
        Command::Train { corpus, out } => {
            let outcome = cmd_train(&cfg, &corpus, &out)?;
            println!(
                "trained {} steps: total {} -> {} ({})",
                cfg.train.steps,
                outcome.first_total,
                outcome.last_total,
                outcome.checkpoint.display()
            );
        }
        Command::Eval {
            checkpoint,
            corpus,
            task,
            out,
        } => {
            let task = match task.as_str() {
                "retrieval" => EvalTask::Retrieval,
                "mining" => EvalTask::Mining,
                _ => EvalTask::TokenAlign,
            };
            let report = cmd_eval(&checkpoint, &corpus, task, &cfg.eval, out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate { corpus, out, sweep } => {
            let sweep = match sweep.as_str() {
                "direction" => SweepKind::Direction,
                "rho" => SweepKind::Rho,
                _ => SweepKind::KLayers,
            };
            let all_ok = cmd_ablate(&cfg, sweep, &corpus, &out)?;
            println!("wrote {}", out.join("ablation.csv").display());
            return Ok(all_ok);
        }
        Command::Visualize {
            checkpoint,
            corpus,
            n_pairs,
            out,
        } => {
            let n = cmd_visualize(&checkpoint, &corpus, n_pairs, &out)?;
            println!("plotted {n} tokens into {}", out.display());
        }
        Command::Flops {
            paper_scale,
            seq_len,
        } => {
            let model = if paper_scale {
                paper_scale_config()
            } else {
                cfg.model.clone()
            };
            cmd_flops(&model, seq_len)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e @ DapError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e @ DapError::Diverged { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
