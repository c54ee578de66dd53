//! `ctfvem` command-line tool: dereverberation, blind RIR identification,
//! RT60/DRR estimation, synthetic data generation and scoring.

mod commands;
mod manifest;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ctfvem::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "ctfvem", version, about = "CTF-based variational EM dereverberation and RIR identification")]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// key = value config file applied over the defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Write the effective config to FILE ("-" for stdout) before running.
    #[arg(long, global = true, value_name = "FILE")]
    dump_config: Option<PathBuf>,
    /// Worker threads for band-parallel inference (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// VEM iterations (default 100 for dereverb, 300 for identify-rir).
    #[arg(long, global = true)]
    iters: Option<usize>,
    /// CTF filter length in frames.
    #[arg(long, global = true)]
    ctf_len: Option<usize>,
    /// Posterior smoothing factor in [0, 1).
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Lowest frequency bands left out of inference.
    #[arg(long, global = true)]
    skip_bands: Option<usize>,
    /// Seed for all randomness (simulation only).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write a JSON run manifest to FILE.
    #[arg(long, global = true, value_name = "FILE")]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct PriorArgs {
    /// Clean direct-path reference WAV used as an oracle prior.
    #[arg(long, value_name = "WAV")]
    oracle: Option<PathBuf>,
    /// VPRI file of prior magnitudes in the normalized observation domain.
    #[arg(long, value_name = "VPRI")]
    prior: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Enhance a reverberant recording.
    Dereverb {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        prior: PriorArgs,
        /// Per-band log-likelihood trace CSV.
        #[arg(long, value_name = "CSV")]
        trace: Option<PathBuf>,
        /// Estimated CTF taps CSV.
        #[arg(long, value_name = "CSV")]
        filter: Option<PathBuf>,
    },
    /// Estimate the room impulse response and its RT60/DRR.
    IdentifyRir {
        input: PathBuf,
        /// Output RIR WAV.
        #[arg(short, long)]
        output: PathBuf,
        /// Output CSV with id, rt60 and drr.
        #[arg(long, value_name = "CSV")]
        params: PathBuf,
        /// Item id written to the params CSV (default: input file stem).
        #[arg(long)]
        id: Option<String>,
        #[command(flatten)]
        prior: PriorArgs,
        #[arg(long, value_name = "CSV")]
        trace: Option<PathBuf>,
    },
    /// RT60 of impulse response WAVs.
    Rt60 {
        #[arg(required = true)]
        rirs: Vec<PathBuf>,
        #[arg(long, value_name = "CSV")]
        csv: Option<PathBuf>,
    },
    /// Direct-to-reverberant ratio of impulse response WAVs.
    Drr {
        #[arg(required = true)]
        rirs: Vec<PathBuf>,
        #[arg(long, value_name = "CSV")]
        csv: Option<PathBuf>,
    },
    /// Generate reverberant mixtures over an RT60 x DRR grid.
    Simulate(commands::SimulateArgs),
    /// Score RT60/DRR estimates against a simulate manifest, or an enhanced
    /// WAV against a reference by LSD.
    Eval(commands::EvalArgs),
}

fn build_config(opts: &GlobalOpts, default_iters: usize) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    cfg.vem.max_iters = default_iters;
    if let Some(path) = &opts.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in config {}", path.display()))?;
    }
    if let Some(v) = opts.iters {
        cfg.vem.max_iters = v;
    }
    if let Some(v) = opts.ctf_len {
        cfg.vem.ctf_len = v;
    }
    if let Some(v) = opts.lambda {
        cfg.vem.lambda = v;
    }
    if let Some(v) = opts.skip_bands {
        cfg.vem.skip_low_bands = v;
    }
    if let Some(v) = opts.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    if let Some(path) = &opts.dump_config {
        if path.as_os_str() == "-" {
            print!("{}", cfg.to_text());
        } else {
            fs::write(path, cfg.to_text()).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let opts = &cli.opts;
    let default_iters = match cli.command {
        Command::IdentifyRir { .. } => 300,
        _ => 100,
    };
    let cfg = build_config(opts, default_iters)?;
    let manifest = opts.manifest.as_deref();
    match &cli.command {
        Command::Dereverb { input, output, prior, trace, filter } => {
            commands::dereverb(&cfg, input, output, prior, trace.as_deref(), filter.as_deref(), manifest)?
        }
        Command::IdentifyRir { input, output, params, id, prior, trace } => {
            commands::identify_rir(&cfg, input, output, params, id.as_deref(), prior, trace.as_deref(), manifest)?
        }
        Command::Rt60 { rirs, csv } => return commands::rt60(&cfg, rirs, csv.as_deref()),
        Command::Drr { rirs, csv } => return commands::drr(&cfg, rirs, csv.as_deref()),
        Command::Simulate(args) => commands::simulate(&cfg, args, manifest)?,
        Command::Eval(args) => return commands::eval(&cfg, args),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.opts.threads {
        Some(0) => Err(anyhow::anyhow!("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")
            .and_then(|pool| pool.install(|| run(cli))),
        None => run(cli),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
