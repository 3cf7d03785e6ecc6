use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use m2td3::agents::train;
use m2td3::checkpoint::Checkpoint;
use m2td3::evaluation::{evaluate_grid, EvalReport};
use m2td3::saddle::{alternating_best_response, simultaneous_gda, SaddleTrajectory};
use m2td3::{RunConfig, Variant};

/// Worst-case robust policy training over parameter uncertainty sets.
#[derive(Parser)]
#[command(name = "m2td3", version, after_help = concat!(
    "Any config key can also be set through the environment as ",
    "M2TD3_<KEY>, e.g. M2TD3_T_MAX=20000. Command-line flags win over ",
    "environment variables, which win over the config file."
))]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write a run directory.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Evaluate a checkpoint's policy on the uncertainty grid.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the environment the checkpoint was trained on.
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Points per omega dimension (1 evaluates the nominal parameter only).
        #[arg(long, default_value_t = 10)]
        grid: usize,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every (variant, seed) pair and summarize the final evaluations.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated or repeated.
        #[arg(long, value_delimiter = ',', required = true)]
        variant: Vec<Variant>,
        /// Comma-separated or repeated.
        #[arg(long, value_delimiter = ',', required = true)]
        seed: Vec<u64>,
    },
    /// Compare alternating best response with simultaneous gradient
    /// ascent-descent on f(x, y) = y^2 - x^2 + alpha x y.
    Saddle {
        #[arg(long, default_value_t = 3.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
            None => RunConfig::from_toml_with_overrides("", std::env::vars()).context("reading environment overrides")?,
        };
        if let Some(env) = &self.env {
            cfg.env = env.clone();
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Train { run, seed, variant } => {
            let mut cfg = run.load()?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(v) = variant {
                cfg.variant = v;
            }
            cfg.validate()?;
            let out = train(&cfg, &run.out)?;
            println!("steps {} episodes {}", out.steps, out.episodes);
            println!("checkpoint {}", out.final_checkpoint.display());
            print_report(&out.report);
        }
        Command::Eval {
            checkpoint,
            env,
            out,
            grid,
            episodes,
            seed,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let env = env.unwrap_or(ck.env);
            let report = evaluate_grid(&ck.actor, &env, grid, episodes, seed)?;
            report.write(&out, "eval")?;
            print_report(&report);
        }
        Command::Sweep { run, variant, seed } => sweep(&run, &variant, &seed)?,
        Command::Saddle { alpha, eta, iters, out } => {
            if !(eta > 0.0) {
                bail!("--eta must be positive, got {eta}");
            }
            let alt = alternating_best_response(alpha, (0.0, 1.0), iters);
            let gda = simultaneous_gda(alpha, eta, (0.0, 1.0), iters);
            write_saddle(&out, &alt, &gda)?;
        }
    }
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("R_worst {}", r.worst);
    println!("R_average {}", r.average);
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn write_saddle(out: &Path, alt: &SaddleTrajectory, gda: &SaddleTrajectory) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join("alternating.csv"), alt.to_csv())?;
    write_file(&out.join("gda.csv"), gda.to_csv())?;
    let mut verdicts = String::new();
    for t in [alt, gda] {
        let line = format!("{} {} final_norm={:e}", t.method, t.verdict(), t.final_norm());
        println!("{line}");
        verdicts.push_str(&line);
        verdicts.push('\n');
    }
    write_file(&out.join("verdict.txt"), verdicts)
}

struct Cell {
    variant: Variant,
    seed: u64,
    dir: PathBuf,
    result: Result<EvalReport>,
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn sweep(run: &RunArgs, variants: &[Variant], seeds: &[u64]) -> Result<()> {
    let base = run.load()?;
    let jobs: Vec<(Variant, u64)> = variants.iter().flat_map(|v| seeds.iter().map(move |s| (*v, *s))).collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let dir = run.out.join(variant.name()).join(format!("seed_{seed}"));
            let cfg = RunConfig { variant, seed, ..base.clone() };
            let result = cfg
                .validate()
                .and_then(|_| train(&cfg, &dir))
                .map(|o| o.report)
                .map_err(anyhow::Error::from);
            Cell { variant, seed, dir, result }
        })
        .collect();

    let mut runs = String::from("variant,seed,status,r_worst,r_average,run_dir\n");
    for c in &cells {
        match &c.result {
            Ok(r) => runs.push_str(&format!("{},{},ok,{},{},{}\n", c.variant, c.seed, r.worst, r.average, c.dir.display())),
            Err(e) => {
                eprintln!("{} seed {} failed: {e:#}", c.variant, c.seed);
                runs.push_str(&format!("{},{},failed,,,{}\n", c.variant, c.seed, c.dir.display()));
            }
        }
    }
    let mut summary = String::from("variant,n_ok,n_failed,r_worst_mean,r_worst_stderr,r_average_mean,r_average_stderr\n");
    for v in variants {
        let mine: Vec<&Cell> = cells.iter().filter(|c| c.variant == *v).collect();
        let ok: Vec<&EvalReport> = mine.iter().filter_map(|c| c.result.as_ref().ok()).collect();
        let failed = mine.len() - ok.len();
        if ok.is_empty() {
            summary.push_str(&format!("{v},0,{failed},,,,\n"));
            continue;
        }
        let (wm, ws) = mean_stderr(&ok.iter().map(|r| r.worst).collect::<Vec<_>>());
        let (am, as_) = mean_stderr(&ok.iter().map(|r| r.average).collect::<Vec<_>>());
        summary.push_str(&format!("{v},{},{failed},{wm},{ws},{am},{as_}\n", ok.len()));
    }
    fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;
    write_file(&run.out.join("runs.csv"), &runs)?;
    write_file(&run.out.join("summary.csv"), &summary)?;
    print!("{summary}");
    let failures = cells.iter().filter(|c| c.result.is_err()).count();
    if failures > 0 {
        bail!("{failures} of {} runs failed", cells.len());
    }
    Ok(())
}
