use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ed2::harness::{self, ExperimentConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "ed2",
    version,
    about = "Ensemble deterministic-policy-gradient laboratory"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one seed and write its JSON-lines run log
    Train {
        /// Flat key = value config file
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Switch scale-dependent fields to the published full-scale values
        #[arg(long)]
        paper_scale: bool,
        /// Output directory; defaults to $ED2_OUT_DIR, then ./runs
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train several seeds (parallel workers) and write logs plus a summary CSV
    Suite {
        #[arg(long)]
        config: PathBuf,
        /// Half-open range `a..b` or comma list; defaults to the config's seed list
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize run logs as CSV on stdout
    Metrics {
        /// Glob over run logs, e.g. 'runs/run_*.jsonl'
        #[arg(long)]
        logs: String,
    },
    /// Emit learning-curve data (mean, CI, spread, smoothed) as CSV on stdout
    Plotdata {
        #[arg(long)]
        logs: String,
        /// EMA smoothing factor in (0, 1]
        #[arg(long, default_value_t = 0.4)]
        alpha: f64,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("ED2_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn load_config(path: &PathBuf, paper_scale: bool) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = ExperimentConfig::parse(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    if paper_scale {
        cfg.apply_paper_scale();
    }
    Ok(cfg)
}

/// Either `a..b` (half-open) or a comma-separated list.
fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().context("range start")?;
        let b: u64 = b.trim().parse().context("range end")?;
        if a >= b {
            bail!("empty seed range {s:?}");
        }
        return Ok((a..b).collect());
    }
    let seeds: Vec<u64> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().with_context(|| format!("bad seed {t:?}")))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        bail!("no seeds in {s:?}");
    }
    Ok(seeds)
}

fn expand_logs(pattern: &str) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .with_context(|| format!("bad glob {pattern:?}"))?
        .collect::<std::result::Result<_, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!("no logs match {pattern:?}");
    }
    Ok(paths)
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train { config, seed, paper_scale, out } => {
            let cfg = load_config(&config, paper_scale)?;
            let outcome = harness::train_run(&cfg, seed, &out_dir(out))?;
            println!("log: {}", outcome.log_path.display());
            println!(
                "episodes: {}, updates: {}, eval phases: {}",
                outcome.episode_returns.len(),
                outcome.updates,
                outcome.phases.len()
            );
            if let Some(last) = outcome.phases.last() {
                let mean = last.returns.iter().sum::<f64>() / last.returns.len() as f64;
                println!("final eval mean return: {mean}");
            }
            if let Some(rmsd) = outcome.rmsd {
                println!("rmsd: {rmsd}");
            }
            if let Some(step) = outcome.solved_first_step {
                println!("first solved eval at step {step}");
            }
        }
        Cmd::Suite { config, seeds, paper_scale, out } => {
            let cfg = load_config(&config, paper_scale)?;
            let seeds = match seeds {
                Some(s) => parse_seeds(&s)?,
                None => cfg.seeds.clone(),
            };
            let suite = harness::run_suite(&cfg, &seeds, &out_dir(out))?;
            for o in &suite.outcomes {
                eprintln!("seed {}: {}", o.seed, o.log_path.display());
            }
            for (seed, why) in &suite.failures {
                eprintln!("seed {seed} FAILED: {why}");
            }
            eprintln!("summary: {}", suite.summary_path.display());
            print!("{}", suite.summary_csv);
            if !suite.failures.is_empty() {
                bail!("{} of {} seeds failed", suite.failures.len(), seeds.len());
            }
        }
        Cmd::Metrics { logs } => {
            let runs = harness::load_run_series(&expand_logs(&logs)?)?;
            print!("{}", harness::metrics_csv(&runs)?);
        }
        Cmd::Plotdata { logs, alpha } => {
            let runs = harness::load_run_series(&expand_logs(&logs)?)?;
            print!("{}", harness::emit_plot_data(&runs, alpha)?);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("0..5").unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(parse_seeds("3,1,2").unwrap(), vec![3, 1, 2]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("a..b").is_err());
    }

    #[test]
    fn out_dir_precedence() {
        assert_eq!(out_dir(Some(PathBuf::from("x"))), PathBuf::from("x"));
        // without the flag the fallback is an env var, then ./runs; the env
        // var is process-global so only the default branch is probed here
        if std::env::var_os("ED2_OUT_DIR").is_none() {
            assert_eq!(out_dir(None), PathBuf::from("runs"));
        }
    }
}
