use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ednsc::pipeline::{self, PipelineConfig, System};

#[derive(Parser)]
#[command(name = "ednsc", version, about = "Exemplar NMF and encoder-decoder spectral conversion")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    system: Option<SystemArg>,
    #[arg(long = "dict-size", global = true)]
    dict_size: Option<usize>,
    /// Override any configuration key, e.g. `--set stage2_epochs=20`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemArg {
    Enmf,
    Edn,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic parallel corpus.
    Synth,
    /// Normalize, align and collect F0 statistics.
    Prepare {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Build exemplar dictionaries and train the network.
    Train {
        #[arg(long)]
        prepared: Option<PathBuf>,
    },
    /// Convert prepared source utterances.
    Convert {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Prepared directory holding the source frames.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score converted utterances against the prepared targets.
    Evaluate {
        #[arg(long)]
        converted: Vec<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

fn build_config(cli: &Cli) -> Result<PipelineConfig> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    for kv in &g.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("`--set {kv}` is not of the form key=value"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out_dir = Some(o.clone());
    }
    if let Some(s) = g.system {
        cfg.system = match s {
            SystemArg::Enmf => System::Enmf,
            SystemArg::Edn => System::Edn,
        };
    }
    if let Some(k) = g.dict_size {
        cfg.dict_size = Some(k);
    }
    match &cli.command {
        Command::Synth | Command::Train { prepared: None } => {}
        Command::Prepare { corpus } => {
            if let Some(c) = corpus {
                cfg.corpus_dir = Some(c.clone());
            }
        }
        Command::Train { prepared: Some(p) } => cfg.prepared_dir = Some(p.clone()),
        Command::Convert { model, input } => {
            if let Some(m) = model {
                cfg.model_dir = Some(m.clone());
            }
            if let Some(i) = input {
                cfg.input_dir = Some(i.clone());
            }
        }
        Command::Evaluate { converted, reference } => {
            if !converted.is_empty() {
                cfg.converted_dirs = converted.clone();
            }
            if let Some(r) = reference {
                cfg.reference_dir = Some(r.clone());
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = build_config(&cli)?;
    match cli.command {
        Command::Synth => {
            let s = pipeline::cmd_synth(&cfg)?;
            println!(
                "wrote {} training and {} evaluation utterances to {}",
                s.train.len(),
                s.eval.len(),
                s.dir.display()
            );
        }
        Command::Prepare { .. } => {
            let dir = pipeline::cmd_prepare(&cfg)?;
            println!("prepared pairs in {}", dir.display());
        }
        Command::Train { .. } => {
            let t = pipeline::cmd_train(&cfg)?;
            if let (Some(first), Some(last)) = (t.log.first(), t.log.last()) {
                println!("loss {:.6} -> {:.6}; model in {}", first.loss, last.loss, t.dir.display());
            }
        }
        Command::Convert { .. } => {
            let dir = pipeline::cmd_convert(&cfg)?;
            println!("converted features in {}", dir.display());
        }
        Command::Evaluate { .. } => {
            let reports = pipeline::cmd_evaluate(&cfg)?;
            print!("{}", ednsc::eval::format_table(&reports));
        }
    }
    Ok(())
}
