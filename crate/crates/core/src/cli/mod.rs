//! Command-line front end.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::*;
pub use config::{Profile, RunConfig};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "cscnet", version, about = "Cascaded attribute/object networks for compositional zero-shot learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// `key = value` run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the model/shuffle seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic embeddings, features and labels.
    GenData(Common),
    /// Train and write a checkpoint plus the per-epoch loss log.
    Train(Common),
    /// Score the test split with a checkpoint and run the bias sweep.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every branch and classifier variant.
    Ablate(Common),
    /// Re-score one checkpoint across fusion weights.
    BetaSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated weights in [0, 1].
        #[arg(long)]
        betas: Option<String>,
    },
    /// Compare tape gradients with finite differences on a tiny model.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Shift the analytic gradient of this parameter block.
        #[arg(long, value_name = "BLOCK")]
        corrupt: Option<String>,
    },
}

fn build_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&c.overrides)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses arguments and runs one command, printing results to stdout.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            return Err(Error::Config(first.to_string()));
        }
    };
    match cli.command {
        Command::GenData(c) => {
            let cfg = build_config(&c)?;
            let s = cmd_gen_data(&cfg, &c.out)?;
            println!(
                "wrote {} {} {}",
                s.embeddings.display(),
                s.features.display(),
                s.labels.display()
            );
            println!(
                "pairs seen={} unseen={} samples train={} test={} hash={}",
                s.n_seen, s.n_unseen, s.n_train, s.n_test, s.hash
            );
        }
        Command::Train(c) => {
            let cfg = build_config(&c)?;
            let every = (cfg.epochs / 20).max(1);
            let last = cfg.epochs - 1;
            let s = cmd_train(&cfg, &c.out, &mut |e| {
                if e.epoch % every == 0 || e.epoch == last {
                    println!("epoch {:>4} mean_loss {:.6}", e.epoch, e.mean_loss);
                }
            })?;
            println!(
                "train attr_acc={:.4} obj_acc={:.4} checkpoint={} log={}",
                s.train_attr_acc,
                s.train_obj_acc,
                s.checkpoint.display(),
                s.log_path.display()
            );
        }
        Command::Eval { common, checkpoint } => {
            let mut cfg = build_config(&common)?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            let r = cmd_eval(&cfg, &common.out)?;
            println!("{}", r.summary());
        }
        Command::Ablate(c) => {
            let cfg = build_config(&c)?;
            let t = cmd_ablate(&cfg, &c.out)?;
            println!("dataset {}", t.rows[0].dataset_hash);
            println!("{:<12} {:>8} {:>8} {:>8} {:>8}", "variant", "auc", "hm", "seen", "unseen");
            for v in ablation_variants(&cfg) {
                let (auc, hm, seen, unseen) = t.mean(v.name).expect("variant ran");
                println!("{:<12} {auc:>8.4} {hm:>8.4} {seen:>8.4} {unseen:>8.4}", v.name);
            }
        }
        Command::BetaSweep {
            common,
            checkpoint,
            betas,
        } => {
            let mut cfg = build_config(&common)?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            if let Some(b) = betas {
                cfg.betas = config::parse_list("betas", &b)?;
                cfg.validate()?;
            }
            let rows = cmd_beta_sweep(&cfg, &common.out)?;
            print!("{}", beta_sweep_csv(&rows));
        }
        Command::GradCheck { common, corrupt } => {
            let cfg = build_config(&common)?;
            let s = cmd_grad_check(&cfg, corrupt.as_deref())?;
            for (name, r) in &s.checks {
                println!(
                    "{name:<18} max_rel_err={:.3e} worst={}[{}] {}",
                    r.max_rel_error,
                    r.worst_block,
                    r.worst_index,
                    if r.passed { "PASS" } else { "FAIL" }
                );
            }
            if !s.passed() {
                let failing: Vec<&str> = s.checks.iter().flat_map(|(_, r)| r.failing_blocks()).collect();
                let mut uniq: Vec<&str> = Vec::new();
                for b in failing {
                    if !uniq.contains(&b) {
                        uniq.push(b);
                    }
                }
                return Err(Error::InvalidArgument(format!("gradient check failed in {}", uniq.join(", "))));
            }
        }
    }
    Ok(())
}
