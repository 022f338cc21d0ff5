use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use distdpo::cli_io::{self, RunConfig, RunManifest};
use distdpo::par::Exec;
use distdpo::{Error, Result};

/// Federated and decentralized DPO simulator.
#[derive(Debug, Parser)]
#[command(name = "distdpo", version)]
struct Cli {
    /// fed, dec, lowerbound, check-constants, gradcheck, sweep:<axis>, or
    /// replay (reruns a manifest)
    mode: String,
    /// TOML run configuration; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest to replay
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory, overriding the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding the config
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sections
    #[arg(long)]
    threads: Option<usize>,
    /// Run every section on the calling thread
    #[arg(long)]
    sequential: bool,
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = if cli.mode == "replay" {
        let path = cli.manifest.as_deref().ok_or_else(|| Error::Config("replay needs --manifest".into()))?;
        RunManifest::load(path)?.config
    } else {
        let mut cfg = match &cli.config {
            Some(p) => cli_io::load_config(p)?,
            None => RunConfig::default(),
        };
        cfg.mode = cli.mode.parse()?;
        cfg
    };
    if let Some(d) = &cli.out {
        cfg.output_dir = d.clone();
    }
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fail(dir: Option<&Path>, err: &Error) -> ExitCode {
    if let Some(d) = dir {
        cli_io::write_error(d, err);
    }
    eprintln!("{}", cli_io::error_json(err));
    ExitCode::from(cli_io::exit_code(err) as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads(cli.threads) {
        return fail(None, &e);
    }
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => return fail(cli.out.as_deref(), &e),
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match cli_io::execute(&cfg, exec) {
        Ok(outcome) => {
            for a in &outcome.artifacts {
                println!("{}", a.display());
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("check failed: {}", outcome.summary);
                ExitCode::from(cli_io::CHECK_FAILED_EXIT as u8)
            }
        }
        Err(e) => fail(Some(&cfg.output_dir), &e),
    }
}
