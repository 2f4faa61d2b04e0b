use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use consensus_scp::experiment::{resolve_output_dir, run_experiment, ExperimentKind, LoadedConfig, OUTPUT_ENV};

#[derive(Parser)]
#[command(name = "cscp", version, about = "Consensus-ADMM SCP trajectory optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the single problem in the config's `custom` section.
    Solve(Common),
    /// Sweep the final penalty and the inner iteration count.
    Ablation(Common),
    /// Randomized quadrotor scenes solved as one batch.
    Bench(Batched),
    /// Closed-loop scenario-coupled MPC under crosswind.
    Mpc(Mpc),
    /// Powered-descent Monte Carlo over dispersed initial states.
    Mars(Batched),
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; beats the environment and the config.
    #[arg(long, env = OUTPUT_ENV)]
    output: Option<PathBuf>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    inner_iterations: Option<usize>,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    rhof: Option<f64>,
}

#[derive(Args)]
struct Batched {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Args)]
struct Mpc {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    let (kind, common, batch, mpc) = match &cli.command {
        Command::Solve(c) => (ExperimentKind::Custom, c, None, None),
        Command::Ablation(c) => (ExperimentKind::Ablation, c, None, None),
        Command::Bench(b) => (ExperimentKind::QuadBench, &b.common, b.batch, None),
        Command::Mpc(m) => (ExperimentKind::RobustMpc, &m.common, None, Some(m)),
        Command::Mars(b) => (ExperimentKind::MarsBatch, &b.common, b.batch, None),
    };
    let loaded = LoadedConfig::read(&common.config)?;
    let mut config = loaded.config.clone();
    let mut overrides = Vec::new();
    let mut note = |s: String| overrides.push(s);
    if config.experiment != kind {
        note(format!("experiment={kind:?}"));
        config.experiment = kind;
    }
    if let Some(v) = common.seed {
        config.seed = v;
        note(format!("seed={v}"));
    }
    if let Some(v) = common.max_outer {
        config.scp.max_outer = v;
        note(format!("scp.max_outer={v}"));
    }
    if let Some(v) = common.inner_iterations {
        config.scp.inner_iterations = v;
        note(format!("scp.inner_iterations={v}"));
    }
    if let Some(v) = common.rho0 {
        config.scp.rho0 = v;
        note(format!("scp.rho0={v}"));
    }
    if let Some(v) = common.rhof {
        config.scp.rhof = v;
        note(format!("scp.rhof={v}"));
    }
    if let Some(v) = batch {
        config.batch = v;
        note(format!("batch={v}"));
    }
    if let Some(m) = mpc {
        if let Some(v) = m.scenarios {
            config.mpc.scenarios = v;
            note(format!("mpc.scenarios={v}"));
        }
        if let Some(v) = m.max_steps {
            config.mpc.max_steps = v;
            note(format!("mpc.max_steps={v}"));
        }
    }
    let dir = resolve_output_dir(common.output.as_deref(), &config);
    let bundle = run_experiment(&loaded, &config, overrides)?;
    bundle.write(&dir)?;
    for c in &bundle.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("results in {}", dir.display());
    Ok(bundle.passed())
}
