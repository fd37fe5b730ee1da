use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pathflow::cli::{BaselineKind, PotentialKind, Run, RunConfig};
use pathflow::coupling::CouplingKind;
use pathflow::gfm::Integrator;

#[derive(Parser)]
#[command(name = "pathflow", version, about = "Transition path sampling with generalized flow matching")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory, overriding `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides every stage seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Langevin endpoint pools around two minima.
    Simulate {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Fit the learned potential on the pooled endpoints.
    FitPotential {
        #[arg(long)]
        kind: Option<PotentialKind>,
    },
    /// Train the spline and velocity networks.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        coupling: Option<CouplingKind>,
        #[arg(long)]
        resample_rounds: Option<usize>,
    },
    /// Integrate paths with the trained velocity field.
    Sample {
        #[arg(long)]
        n_paths: Option<usize>,
        #[arg(long)]
        ode_steps: Option<usize>,
        #[arg(long)]
        integrator: Option<Integrator>,
        /// Keep the `k` highest-weighted paths.
        #[arg(long, conflicts_with = "all")]
        top_k: Option<usize>,
        /// Keep every sampled path.
        #[arg(long)]
        all: bool,
    },
    /// Energy and saddle metrics of a path file.
    Evaluate {
        /// Defaults to `paths.csv` in the run directory.
        #[arg(long)]
        paths: Option<PathBuf>,
        /// Where the report goes; defaults to the run directory.
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Linear or IDPP reference paths.
    Baseline {
        #[arg(long)]
        kind: Option<BaselineKind>,
        #[arg(long)]
        coupling: Option<CouplingKind>,
    },
}

fn configure(cli: &Cli) -> pathflow::Result<RunConfig> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = cli.common.seed {
        cfg.simulate.seed_a = s;
        cfg.simulate.seed_b = s + 1;
        cfg.potential.rbf.seed = s;
        cfg.potential.autoencoder.seed = s;
        cfg.train.seed = s;
        cfg.sample.seed = s;
        cfg.baseline.seed = s;
    }
    match &cli.command {
        Command::Simulate { steps, samples } => {
            if let Some(v) = steps {
                cfg.simulate.steps = *v;
            }
            if let Some(v) = samples {
                cfg.simulate.samples = *v;
            }
        }
        Command::FitPotential { kind } => {
            if let Some(v) = kind {
                cfg.potential.kind = *v;
            }
        }
        Command::Train {
            epochs,
            coupling,
            resample_rounds,
        } => {
            if let Some(v) = epochs {
                cfg.train.epochs = *v;
            }
            if let Some(v) = coupling {
                cfg.train.coupling = *v;
            }
            if let Some(v) = resample_rounds {
                cfg.train.resample_rounds = *v;
            }
        }
        Command::Sample {
            n_paths,
            ode_steps,
            integrator,
            top_k,
            all,
        } => {
            if let Some(v) = n_paths {
                cfg.sample.n_paths = *v;
            }
            if let Some(v) = ode_steps {
                cfg.sample.ode_steps = *v;
            }
            if let Some(v) = integrator {
                cfg.sample.integrator = *v;
            }
            if top_k.is_some() {
                cfg.sample.top_k = *top_k;
            }
            if *all {
                cfg.sample.top_k = None;
            }
        }
        Command::Evaluate { .. } => {}
        Command::Baseline { kind, coupling } => {
            if let Some(v) = kind {
                cfg.baseline.kind = *v;
            }
            if let Some(v) = coupling {
                cfg.baseline.coupling = *v;
            }
        }
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> pathflow::Result<String> {
    let run = Run::new(configure(cli)?)?;
    Ok(match &cli.command {
        Command::Simulate { .. } => {
            let d = run.simulate()?;
            format!("{} + {} endpoints, {} energy evaluations", d.pool_a.len(), d.pool_b.len(), d.meta.u_evaluations)
        }
        Command::FitPotential { .. } => format!("fitted {} potential", run.fit_potential()?.kind()),
        Command::Train { .. } => {
            let s = run.train()?;
            format!(
                "final spline loss {:.6}, {} energy evaluations",
                s.epoch_losses.last().copied().unwrap_or(f64::NAN),
                s.u_evaluations
            )
        }
        Command::Sample { .. } => format!("{} paths", run.sample()?.len()),
        Command::Evaluate { paths, report_dir } => {
            serde_json::to_string_pretty(&run.evaluate(paths.as_deref(), report_dir.as_deref())?)?
        }
        Command::Baseline { .. } => serde_json::to_string_pretty(&run.baseline()?)?,
    })
}

fn stage_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate { .. } => "simulate",
        Command::FitPotential { .. } => "fit-potential",
        Command::Train { .. } => "train",
        Command::Sample { .. } => "sample",
        Command::Evaluate { .. } => "evaluate",
        Command::Baseline { .. } => "baseline",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pathflow {}: {e}", stage_name(&cli.command));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
