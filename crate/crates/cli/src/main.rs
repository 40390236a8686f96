use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::Parser;
use dgsipg_cli::{config::KEYS, run, RunConfig, Study};

/// Symmetry, convergence and throughput studies for the SIPG solver.
#[derive(Parser, Debug)]
#[command(name = "dgsipg", version)]
struct Args {
    /// symmetry | convergence | bench
    study: Option<String>,
    /// key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print every config key with its default and exit
    #[arg(long)]
    list_keys: bool,
}

fn main() -> Result<()> {
    let args = Args::parse();
    if args.list_keys {
        for (k, d, doc) in KEYS {
            println!("{k:<18} {d:<14} {doc}");
        }
        return Ok(());
    }
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::parse(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    for kv in &args.set {
        cfg.set_pair(kv)?;
    }
    if let Some(s) = &args.study {
        cfg.study = Study::parse(s).ok_or_else(|| anyhow!("unknown study {s:?}; expected symmetry, convergence or bench"))?;
    }
    for f in run(cfg.study, &cfg)? {
        println!("{}", f.display());
    }
    Ok(())
}
