//! `macforge`: synth, embed, mine, train, whiten and eval stages over a
//! shared working directory.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::RunConfig;
use macforge::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "macforge", version, about = "MAC descriptor fine-tuning pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap; defaults to the hardware parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory, also the default input directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override one config key, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Use R-MAC pooling instead of MAC.
    #[arg(long, global = true)]
    rmac: bool,

    /// MFPW projection applied after pooling.
    #[arg(long, global = true)]
    projection: Option<PathBuf>,

    /// `contrastive` or `triplet`.
    #[arg(long, global = true)]
    loss: Option<String>,

    /// Query mode for eval: `full`, `crop_i` or `crop_x`.
    #[arg(long, global = true)]
    mode: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate scenes, render images, write the cluster split and ground truth.
    Synth,
    /// Extract a descriptor database.
    Embed,
    /// Mine training and validation tuples.
    Mine,
    /// Fine-tune and write checkpoints plus per-epoch metrics.
    Train,
    /// Fit Lw and PCAw projections.
    Whiten,
    /// Per-query AP and the mAP line.
    Eval,
}

fn resolve(cli: &Cli) -> macforge::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.merge_file(path)?;
    }
    for kv in &cli.set {
        cfg.assign(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        cfg.set("out_dir", &out.to_string_lossy())?;
    }
    if cli.rmac {
        cfg.set("pooling", "rmac")?;
    }
    if let Some(p) = &cli.projection {
        cfg.set("projection", &p.to_string_lossy())?;
    }
    if let Some(l) = &cli.loss {
        cfg.set("loss", l)?;
    }
    if let Some(m) = &cli.mode {
        cfg.set("mode", m)?;
    }
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        _ => 4,
    }
}

fn run(cli: &Cli) -> macforge::Result<()> {
    let cfg = resolve(cli)?;
    let hash = cfg.hash();
    eprint!("{}", cfg.render());
    eprintln!("config_hash={hash}");
    cfg.validate()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Embed => commands::embed(&cfg),
        Command::Mine => commands::mine(&cfg),
        Command::Train => commands::train_cmd(&cfg, &hash),
        Command::Whiten => commands::whiten(&cfg),
        Command::Eval => commands::eval(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
