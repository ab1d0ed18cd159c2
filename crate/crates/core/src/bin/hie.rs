use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hie_kge::cli::{self, RunConfig, SweepGrid, GRADCHECK_TOLERANCE};
use hie_kge::evaluator::{MetricBundle, TieBreak};
use hie_kge::hie::{Norm, TransformKind};
use hie_kge::kg_data::Split;
use hie_kge::model::ModelKind;
use hie_kge::trainer::AdversarialSign;
use hie_kge::{Error, Result};

#[derive(Parser)]
#[command(name = "hie", version, about = "Train and evaluate HIE knowledge graph embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint, loss log and validation metrics
    Train(Common),
    /// Evaluate a checkpoint on a split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Classify relations as 1-to-1 / 1-to-N / N-to-1 / N-to-N
    Classify(Common),
    /// Train and validate every point of a hyperparameter grid
    Sweep {
        /// JSON grid, e.g. {"levels": [1, 2, 3, 4]}
        #[arg(long)]
        grid: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic gradients with central finite differences
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        batches: usize,
        #[arg(long, default_value_t = 1e-6)]
        fd_step: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Train the full model and each ablated variant and compare them
    Ablate(Common),
}

/// Flags shared by every command. Each overrides the `--config` file.
#[derive(Args)]
struct Common {
    /// JSON config file with the same keys as the flags
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha_temp: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    norm: Option<Norm>,
    #[arg(long)]
    transform: Option<TransformKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_distance: bool,
    #[arg(long)]
    no_semantic: bool,
    #[arg(long)]
    no_distance_deep: bool,
    #[arg(long)]
    no_semantic_deep: bool,
    #[arg(long)]
    tie_break: Option<TieBreak>,
    #[arg(long)]
    adversarial_sign: Option<AdversarialSign>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    log_every: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                })*
            };
        }
        set!(model, dim, levels, gamma, alpha_temp, negatives, batch_size, steps, lr, norm, transform, seed, out);
        set!(tie_break, adversarial_sign, eta, split, log_every);
        if self.data_dir.is_some() {
            cfg.data_dir = self.data_dir.clone();
        }
        if self.lambda1.is_some() {
            cfg.lambda1 = self.lambda1;
        }
        cfg.no_distance |= self.no_distance;
        cfg.no_semantic |= self.no_semantic;
        cfg.no_distance_deep |= self.no_distance_deep;
        cfg.no_semantic_deep |= self.no_semantic_deep;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_metrics(label: &str, m: &MetricBundle) {
    println!(
        "{label}: MR {:.2}  MRR {:.4}  Hits@1 {:.4}  Hits@3 {:.4}  Hits@10 {:.4}  ({} triples)",
        m.mr, m.mrr, m.hits1, m.hits3, m.hits10, m.count
    );
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let summary = cli::cmd_train(&cfg)?;
            println!("checkpoint: {}", summary.checkpoint.display());
            if let Some(report) = &summary.valid {
                print_metrics("valid", &report.overall);
            }
        }
        Command::Eval { checkpoint, common } => {
            let cfg = common.resolve()?;
            let report = cli::cmd_eval(&checkpoint, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Classify(common) => {
            let cfg = common.resolve()?;
            println!("relation,hco,tcs,category");
            for row in cli::cmd_classify(&cfg)? {
                println!("{},{:.4},{:.4},{}", row.relation, row.hco, row.tcs, row.category);
            }
        }
        Command::Sweep { grid, common } => {
            let cfg = common.resolve()?;
            let grid = SweepGrid::from_json_file(grid)?;
            let rows = cli::cmd_sweep(&cfg, &grid)?;
            for row in &rows {
                match row.mrr {
                    Some(mrr) => println!("point {}: MRR {mrr:.4}", row.point),
                    None => println!("point {}: error: {}", row.point, row.error),
                }
            }
            println!("wrote {}", cfg.out.join("sweep.csv").display());
        }
        Command::Gradcheck { batches, fd_step, common } => {
            let cfg = common.resolve()?;
            let summary = cli::cmd_gradcheck(&cfg, batches, fd_step)?;
            let pass = summary.max_rel_error < GRADCHECK_TOLERANCE;
            println!(
                "max relative error {:.3e} over {} batches: {}",
                summary.max_rel_error,
                summary.batches.len(),
                if pass { "ok" } else { "FAILED" }
            );
            if !pass {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Ablate(common) => {
            let cfg = common.resolve()?;
            let rows = cli::cmd_ablate(&cfg)?;
            println!("{:<18} {:>9} {:>7} {:>7} {:>7} {:>7}", "variant", "MR", "MRR", "H@1", "H@3", "H@10");
            for r in &rows {
                println!(
                    "{:<18} {:>9.2} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
                    r.variant, r.mr, r.mrr, r.hits1, r.hits3, r.hits10
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Error::exit_code(&e) as u8)
        }
    }
}
