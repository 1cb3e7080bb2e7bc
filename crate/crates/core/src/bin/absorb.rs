use std::path::{Path, PathBuf};
use std::process::ExitCode;

use absorb_core::experiments::{
    run_bounds, run_scenario, write_run_manifest, ExperimentConfig, Scenario, ScenarioOutput,
};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

/// Convergence experiments and bound checks for absorbing discrete diffusion.
#[derive(Parser)]
#[command(name = "absorb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Exact KL between the forward marginal and the surrogate init.
    Forward,
    /// τ-leaping sweep.
    Tau,
    /// Uniformization sweep.
    Unif,
    /// Every bound check over the spec manifest.
    Bounds,
    /// All four scenarios. `--config` may hold a JSON array of configs.
    All,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trials per sweep cell.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Also compute the exact output law.
    #[arg(long, global = true, conflicts_with = "monte_carlo")]
    exact_law: bool,
    /// Monte Carlo estimates only.
    #[arg(long, global = true)]
    monte_carlo: bool,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

impl Common {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if self.exact_law {
            cfg.exact_law = true;
        }
        if self.monte_carlo {
            cfg.exact_law = false;
        }
        if self.jobs.is_some() {
            cfg.jobs = self.jobs;
        }
    }
}

fn scenario_of(command: &Command) -> Option<Scenario> {
    match command {
        Command::Forward => Some(Scenario::Forward),
        Command::Tau => Some(Scenario::Tau),
        Command::Unif => Some(Scenario::Unif),
        Command::Bounds => Some(Scenario::Bounds),
        Command::All => None,
    }
}

fn load_configs(cli: &Cli) -> anyhow::Result<Vec<ExperimentConfig>> {
    let mut configs = match (scenario_of(&cli.command), &cli.common.config) {
        (Some(s), None) => vec![ExperimentConfig::default_for(s)],
        (None, None) => Scenario::ALL
            .iter()
            .map(|&s| ExperimentConfig::default_for(s))
            .collect(),
        (Some(s), Some(path)) => {
            let cfg = ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
            if cfg.scenario != s {
                bail!("config is for scenario `{}`, not `{}`", cfg.scenario.name(), s.name());
            }
            vec![cfg]
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).context("`all` expects a JSON array of configs")?
        }
    };
    for cfg in &mut configs {
        cli.common.apply(cfg);
        cfg.validate()?;
    }
    Ok(configs)
}

fn print_bounds(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    for entry in run_bounds(cfg)? {
        println!("# {}", entry.label);
        for r in &entry.reports {
            println!("  {}", r.summary_line());
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let configs = load_configs(cli)?;
    let mut outputs: Vec<ScenarioOutput> = Vec::new();
    for cfg in &configs {
        let out_dir: &Path = &cfg.out;
        if cfg.scenario == Scenario::Bounds {
            print_bounds(cfg)?;
        }
        let output = run_scenario(cfg, out_dir)?;
        println!(
            "{}: {} rows -> {}",
            cfg.scenario.name(),
            output.rows,
            output.file.display()
        );
        outputs.push(output);
    }
    let dirs: std::collections::BTreeSet<&Path> = configs.iter().map(|c| c.out.as_path()).collect();
    for dir in dirs {
        let path = write_run_manifest(dir, &configs, &outputs)?;
        println!("manifest -> {}", path.display());
    }
    Ok(outputs.iter().all(|o| o.ok))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("an exact-constant bound check failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
