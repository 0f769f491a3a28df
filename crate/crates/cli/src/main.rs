use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtrpo_core::experiments::{
    run_bound_verification, run_concentration, run_delay_sweep, run_fixed_baselines, run_kappa_sweep,
    run_learned_baselines, Experiment, ExperimentConfig, ExperimentError,
};
use mtrpo_core::multitask::CorruptionModel;

#[derive(Parser)]
#[command(name = "mtrpo", version, about = "Regularized policy optimization experiments on finite MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// TVPO against fixed default policies (log-barrier, entropy, none).
    FixedBaselines(Overrides),
    /// TVPO against learned default policies (Distral, forward and reverse KL).
    LearnedBaselines(Overrides),
    /// Reverse-KL distillation started later within each task.
    DelaySweep(Overrides),
    /// Amplification coefficient over a grid of alpha and action counts.
    KappaSweep(Overrides),
    /// Error bound against measured value gaps on random MDPs.
    VerifyBounds(Overrides),
    /// Sample barycenter against population barycenter as the task count grows.
    Concentration(Overrides),
}

#[derive(Clone, Copy, ValueEnum)]
enum Corruption {
    UniformMix,
    ActionFlip,
}

#[derive(Args, Default)]
struct Overrides {
    /// JSON file with experiment settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "MTRPO_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    n_seeds: Option<usize>,
    #[arg(long)]
    n_tasks: Option<usize>,
    #[arg(long)]
    env_steps_per_task: Option<u64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    eta_reg: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    p_geometric: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    horizon_cutoff: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    delays: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    action_counts: Option<Vec<usize>>,
    #[arg(long)]
    n_mdps: Option<usize>,
    #[arg(long)]
    verify_lambda: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    zetas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    k_values: Option<Vec<usize>>,
    #[arg(long)]
    n_repeats: Option<usize>,
    #[arg(long)]
    k_ref: Option<usize>,
    #[arg(long, value_enum)]
    corruption: Option<Corruption>,
    #[arg(long)]
    init_from_default: Option<bool>,
}

macro_rules! apply {
    ($cfg:ident, $o:ident, $($field:ident),*) => {
        $(if let Some(v) = $o.$field.clone() { $cfg.$field = v; })*
    };
}

impl Overrides {
    fn resolve(&self, experiment: Experiment) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
                ExperimentConfig::from_json(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(e) = cfg.experiment {
            if e != experiment {
                return Err(ExperimentError::Config(format!("config file is for {e:?}, not {experiment:?}")));
            }
        }
        cfg.experiment = Some(experiment);
        apply!(
            cfg,
            self,
            n_seeds,
            n_tasks,
            env_steps_per_task,
            eta,
            eta_reg,
            lambda,
            gamma,
            workers,
            seed,
            batch_size,
            horizon_cutoff,
            action_counts,
            n_mdps,
            verify_lambda,
            zetas,
            k_values,
            n_repeats,
            k_ref,
            init_from_default
        );
        if self.p_geometric.is_some() {
            cfg.p_geometric = self.p_geometric;
        }
        if self.delays.is_some() {
            cfg.delays = self.delays.clone();
        }
        if self.alphas.is_some() {
            cfg.alphas = self.alphas.clone();
        }
        if let Some(c) = self.corruption {
            cfg.corruption = match c {
                Corruption::UniformMix => CorruptionModel::UniformMix,
                Corruption::ActionFlip => CorruptionModel::ActionFlip,
            };
        }
        if self.output_dir.is_some() {
            cfg.output_dir = self.output_dir.clone();
        }
        if cfg.output_dir.is_none() {
            cfg.output_dir = Some(PathBuf::from("results"));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(command: &Command) -> Result<PathBuf, ExperimentError> {
    let (experiment, overrides) = match command {
        Command::FixedBaselines(o) => (Experiment::FixedBaselines, o),
        Command::LearnedBaselines(o) => (Experiment::LearnedBaselines, o),
        Command::DelaySweep(o) => (Experiment::DelaySweep, o),
        Command::KappaSweep(o) => (Experiment::KappaSweep, o),
        Command::VerifyBounds(o) => (Experiment::BoundVerification, o),
        Command::Concentration(o) => (Experiment::Concentration, o),
    };
    let cfg = overrides.resolve(experiment)?;
    match experiment {
        Experiment::FixedBaselines => drop(run_fixed_baselines(&cfg)?),
        Experiment::LearnedBaselines => drop(run_learned_baselines(&cfg)?),
        Experiment::DelaySweep => {
            let delays = cfg.delays.clone().unwrap_or_else(|| cfg.default_delays());
            drop(run_delay_sweep(&cfg, &delays)?)
        }
        Experiment::KappaSweep => drop(run_kappa_sweep(&cfg)?),
        Experiment::BoundVerification => drop(run_bound_verification(&cfg)?),
        Experiment::Concentration => drop(run_concentration(&cfg)?),
    }
    Ok(cfg.output_dir.unwrap_or_default())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(dir) => {
            eprintln!("wrote results to {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                ExperimentError::Config(_) => 2,
                ref e if e.is_io() => 3,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
