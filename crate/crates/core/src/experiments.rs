//! Experiment runners for the tree family and the bound checks. Each runner
//! computes its results in memory and, when an output directory is set,
//! writes them as CSV.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{kappa, verification_suite, write_verification_csv, BoundError, VerificationRecord};
use crate::mdp::Policy;
use crate::multitask::{
    concentration_experiment, run_multitask, ConcentrationConfig, ConcentrationReport, CorruptionModel,
    MultitaskSettings, FINAL_WINDOW,
};
use crate::optimizer::{Mode, OptimConfig, OptimError};
use crate::par::Executor;
use crate::regularizers::{RegKind, RegularizerSpec};
use crate::tree::{TreeFamily, TreeFamilyConfig, S1, S7, STATE_NAMES};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Bound(#[from] BoundError),
}

impl ExperimentError {
    pub fn is_io(&self) -> bool {
        match self {
            ExperimentError::Io(_) => true,
            ExperimentError::Csv(e) => e.is_io_error(),
            ExperimentError::Bound(BoundError::Io(_)) => true,
            ExperimentError::Bound(BoundError::Csv(e)) => e.is_io_error(),
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    FixedBaselines,
    LearnedBaselines,
    DelaySweep,
    KappaSweep,
    BoundVerification,
    Concentration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub n_seeds: usize,
    pub n_tasks: usize,
    pub env_steps_per_task: u64,
    pub eta: f64,
    pub eta_reg: f64,
    pub lambda: f64,
    /// Defaults to 0.5 with fixed defaults and 0.7 with learned ones.
    pub p_geometric: Option<f64>,
    pub gamma: f64,
    pub output_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Run-level seed combined with each seed index.
    pub seed: u64,
    pub batch_size: usize,
    pub horizon_cutoff: usize,
    /// Distillation delays in environment steps; defaults to fractions
    /// 0, 1/8, 1/4, 1/2, 3/4, 1 of the per-task budget.
    pub delays: Option<Vec<u64>>,
    pub alphas: Option<Vec<f64>>,
    pub action_counts: Vec<usize>,
    pub n_mdps: usize,
    pub verify_lambda: f64,
    pub zetas: Vec<f64>,
    pub k_values: Vec<usize>,
    pub n_repeats: usize,
    pub k_ref: usize,
    pub corruption: CorruptionModel,
    pub init_from_default: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            n_seeds: 20,
            n_tasks: 5,
            env_steps_per_task: 80_000,
            eta: 0.02,
            eta_reg: 0.01,
            lambda: 0.2,
            p_geometric: None,
            gamma: 0.99,
            output_dir: None,
            workers: 0,
            seed: 0,
            batch_size: 1,
            horizon_cutoff: 200,
            delays: None,
            alphas: None,
            action_counts: vec![2, 3, 4, 5, 10, 20],
            n_mdps: 50,
            verify_lambda: 0.1,
            zetas: vec![0.0, 0.3],
            k_values: vec![5, 20, 80, 320],
            n_repeats: 50,
            k_ref: 2000,
            corruption: CorruptionModel::UniformMix,
            init_from_default: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.n_seeds == 0 || self.n_tasks == 0 {
            return bad("n_seeds and n_tasks must be positive");
        }
        if !(self.eta > 0.0) || !(self.eta_reg >= 0.0) || !(self.lambda >= 0.0) {
            return bad("eta must be positive, eta_reg and lambda non-negative");
        }
        if let Some(p) = self.p_geometric {
            if !(p > 0.0 && p < 1.0) {
                return bad("p_geometric must lie in (0, 1)");
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.horizon_cutoff == 0 {
            return bad("batch_size and horizon_cutoff must be positive");
        }
        if self.action_counts.contains(&0) {
            return bad("action counts must be positive");
        }
        if !(self.verify_lambda > 0.0) {
            return bad("verify_lambda must be positive");
        }
        if self.k_values.contains(&0) || self.k_ref == 0 {
            return bad("task counts must be positive");
        }
        if self.zetas.iter().any(|z| !(0.0..=1.0).contains(z)) {
            return bad("zetas must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn executor(&self) -> Executor {
        Executor::new(self.workers)
    }

    fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            eta: self.eta,
            max_env_steps: self.env_steps_per_task,
            max_updates: 0,
            grad_tol: 0.0,
            batch_size: self.batch_size,
            horizon_cutoff: self.horizon_cutoff,
            mode: Mode::Sampled,
            seed: self.seed,
            eta_reg: self.eta_reg,
        }
    }

    fn family(&self, learned: bool) -> TreeFamily {
        let p = self.p_geometric.unwrap_or(if learned { 0.7 } else { 0.5 });
        TreeFamily::new(TreeFamilyConfig::new(p, self.gamma))
    }

    fn settings(&self) -> MultitaskSettings {
        MultitaskSettings { init_from_default: self.init_from_default, ..MultitaskSettings::default() }
    }

    pub fn default_delays(&self) -> Vec<u64> {
        let b = self.env_steps_per_task;
        vec![0, b / 8, b / 4, b / 2, 3 * b / 4, b]
    }
}

/// A compared method and its regularizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Tvpo,
    LogBarrier,
    Entropy,
    NoReg,
    Distral,
    ForwardKl,
    ReverseKl,
}

impl Method {
    pub const FIXED: [Method; 4] = [Method::Tvpo, Method::LogBarrier, Method::Entropy, Method::NoReg];
    pub const LEARNED: [Method; 4] = [Method::Tvpo, Method::Distral, Method::ForwardKl, Method::ReverseKl];

    pub fn label(self) -> &'static str {
        match self {
            Method::Tvpo => "tvpo",
            Method::LogBarrier => "log_barrier",
            Method::Entropy => "entropy",
            Method::NoReg => "none",
            Method::Distral => "distral",
            Method::ForwardKl => "forward_kl",
            Method::ReverseKl => "reverse_kl",
        }
    }

    pub fn kind(self) -> RegKind {
        match self {
            Method::Tvpo => RegKind::HabitDefault,
            Method::LogBarrier => RegKind::LogBarrier,
            Method::Entropy => RegKind::Entropy,
            Method::NoReg => RegKind::None,
            Method::Distral => RegKind::Distral,
            Method::ForwardKl => RegKind::ForwardKLLearned,
            Method::ReverseKl => RegKind::ReverseKLLearned,
        }
    }

    pub fn spec(self, lambda: f64, distill_delay: u64) -> RegularizerSpec {
        let lambda = if self == Method::NoReg { 0.0 } else { lambda };
        let delay = if self.kind().is_learned() { distill_delay } else { 0 };
        RegularizerSpec::new(self.kind(), lambda).with_delay(delay)
    }
}

/// One learning-curve row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub seed: usize,
    pub method: &'static str,
    pub task: usize,
    pub update_index: u64,
    pub env_steps: u64,
    pub episode_reward: f64,
    pub reward_ma100: f64,
    pub value_rho: f64,
}

/// Results of one `(seed, method)` multitask run.
#[derive(Clone, Debug, PartialEq)]
pub struct CellOutcome {
    pub seed: usize,
    pub method: Method,
    pub final_rewards: Vec<f64>,
    pub curves: Vec<CurveRow>,
    /// Default policy after each task.
    pub default_snapshots: Vec<Policy>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineOutcome {
    pub methods: Vec<Method>,
    pub cells: Vec<CellOutcome>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl BaselineOutcome {
    /// Final rewards of `method` over every seed and the given task indices.
    pub fn final_rewards(&self, method: Method, tasks: std::ops::Range<usize>) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.method == method)
            .flat_map(|c| c.final_rewards[tasks.clone()].iter().copied())
            .collect()
    }

    pub fn mean_final_reward(&self, method: Method, tasks: std::ops::Range<usize>) -> f64 {
        mean_std(&self.final_rewards(method, tasks)).0
    }

    /// Mean over seeds of `π₀(action | state)` after the last task.
    pub fn final_default_mass(&self, method: Method, state: usize, action: usize) -> f64 {
        let xs: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.method == method)
            .filter_map(|c| c.default_snapshots.last().map(|p| p.prob(state, action)))
            .collect();
        mean_std(&xs).0
    }

    fn n_tasks(&self) -> usize {
        self.cells.first().map_or(0, |c| c.final_rewards.len())
    }

    pub fn write(&self, dir: &Path, include_final_defaults: bool) -> Result<(), ExperimentError> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("curves.csv"))?;
        for cell in &self.cells {
            for row in &cell.curves {
                w.serialize(row)?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(["method", "mean_final_reward", "std"])?;
        for &m in &self.methods {
            let (mean, std) = mean_std(&self.final_rewards(m, 0..self.n_tasks()));
            w.serialize((m.label(), mean, std))?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("summary_by_task.csv"))?;
        w.write_record(["method", "task", "mean_final_reward", "std"])?;
        for &m in &self.methods {
            for t in 0..self.n_tasks() {
                let (mean, std) = mean_std(&self.final_rewards(m, t..t + 1));
                w.serialize((m.label(), t, mean, std))?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("default_snapshots.csv"))?;
        w.write_record(["seed", "method", "task", "state", "state_name", "p_action0", "p_action1"])?;
        for cell in &self.cells {
            for (t, pol) in cell.default_snapshots.iter().enumerate() {
                for (s, name) in STATE_NAMES.iter().enumerate().take(pol.n_states()) {
                    w.serialize((cell.seed, cell.method.label(), t, s, name, pol.prob(s, 0), pol.prob(s, 1)))?;
                }
            }
        }
        w.flush()?;

        if include_final_defaults {
            let mut w = csv::Writer::from_path(dir.join("final_defaults.csv"))?;
            w.write_record(["method", "seed", "state_name", "p_left", "p_right"])?;
            for cell in &self.cells {
                if let Some(pol) = cell.default_snapshots.last() {
                    for s in [S1, S7] {
                        w.serialize((cell.method.label(), cell.seed, STATE_NAMES[s], pol.prob(s, 0), pol.prob(s, 1)))?;
                    }
                }
            }
            w.flush()?;
        }
        fs::write(dir.join("state_names.csv"), crate::tree::state_names_csv())?;
        Ok(())
    }
}

fn run_cell(
    config: &ExperimentConfig,
    family: &TreeFamily,
    seed: usize,
    method: Method,
    distill_delay: u64,
) -> Result<CellOutcome, ExperimentError> {
    let spec = method.spec(config.lambda, distill_delay);
    let result = run_multitask(
        family,
        config.n_tasks,
        &spec,
        &config.optim_config(),
        &config.settings(),
        config.seed,
        seed as u64,
    )?;
    let mut curves = Vec::new();
    for rec in &result.per_task {
        let mut window = std::collections::VecDeque::with_capacity(FINAL_WINDOW);
        let mut sum = 0.0;
        for h in &rec.run.history {
            let Some(r) = h.batch_return else { continue };
            window.push_back(r);
            sum += r;
            if window.len() > FINAL_WINDOW {
                sum -= window.pop_front().unwrap_or(0.0);
            }
            curves.push(CurveRow {
                seed,
                method: method.label(),
                task: rec.task_index,
                update_index: h.update_index,
                env_steps: h.env_steps,
                episode_reward: r,
                reward_ma100: sum / window.len() as f64,
                value_rho: h.value_rho,
            });
        }
    }
    Ok(CellOutcome {
        seed,
        method,
        final_rewards: result.per_task.iter().map(|t| t.final_avg_reward).collect(),
        curves,
        default_snapshots: result.default_snapshots,
    })
}

fn run_methods(
    config: &ExperimentConfig,
    methods: &[Method],
    learned: bool,
) -> Result<BaselineOutcome, ExperimentError> {
    config.validate()?;
    let family = config.family(learned);
    let cells: Vec<(usize, Method)> = (0..config.n_seeds).flat_map(|s| methods.iter().map(move |&m| (s, m))).collect();
    let cells = config
        .executor()
        .map(cells, |(seed, method)| run_cell(config, &family, seed, method, 0))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BaselineOutcome { methods: methods.to_vec(), cells })
}

/// TVPO against log-barrier, entropy and unregularized learners.
pub fn run_fixed_baselines(config: &ExperimentConfig) -> Result<BaselineOutcome, ExperimentError> {
    let out = run_methods(config, &Method::FIXED, false)?;
    if let Some(dir) = &config.output_dir {
        out.write(dir, false)?;
    }
    Ok(out)
}

/// TVPO against Distral and forward/reverse-KL distilled defaults.
pub fn run_learned_baselines(config: &ExperimentConfig) -> Result<BaselineOutcome, ExperimentError> {
    let out = run_methods(config, &Method::LEARNED, true)?;
    if let Some(dir) = &config.output_dir {
        out.write(dir, true)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DelayRow {
    pub delay: u64,
    pub mean_final_reward: f64,
    pub std: f64,
}

/// Reverse-KL learned default with distillation starting `delay` steps
/// into each task.
pub fn run_delay_sweep(config: &ExperimentConfig, delays: &[u64]) -> Result<Vec<DelayRow>, ExperimentError> {
    config.validate()?;
    let family = config.family(true);
    let cells: Vec<(u64, usize)> = delays.iter().flat_map(|&d| (0..config.n_seeds).map(move |s| (d, s))).collect();
    let outcomes = config
        .executor()
        .map(cells, |(delay, seed)| run_cell(config, &family, seed, Method::ReverseKl, delay).map(|c| (delay, c)))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<DelayRow> = delays
        .iter()
        .map(|&d| {
            let xs: Vec<f64> = outcomes
                .iter()
                .filter(|(delay, _)| *delay == d)
                .flat_map(|(_, c)| c.final_rewards.iter().copied())
                .collect();
            let (mean_final_reward, std) = mean_std(&xs);
            DelayRow { delay: d, mean_final_reward, std }
        })
        .collect();
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir)?;
        write_rows(&dir.join("delay_sweep.csv"), &rows, &["delay", "mean_final_reward", "std"])?;
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KappaRow {
    pub n_actions: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub kappa_over_2: f64,
}

/// Grid of `α` values: 101 evenly spaced points plus, per action count, the
/// log-barrier point `1 − 1/|A|` and the vacuity point `1 − 1/(2|A|)`.
pub fn kappa_sweep_rows(alphas: Option<&[f64]>, action_counts: &[usize]) -> Vec<KappaRow> {
    let mut rows = Vec::new();
    for &n_a in action_counts {
        let mut grid: Vec<f64> = match alphas {
            Some(a) => a.to_vec(),
            None => {
                let mut g: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
                g.push(1.0 - 1.0 / n_a as f64);
                g.push(1.0 - 1.0 / (2 * n_a) as f64);
                g
            }
        };
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        for alpha in grid {
            let k = kappa(alpha, n_a);
            rows.push(KappaRow { n_actions: n_a, alpha, kappa: k, kappa_over_2: k / 2.0 });
        }
    }
    rows
}

pub fn run_kappa_sweep(config: &ExperimentConfig) -> Result<Vec<KappaRow>, ExperimentError> {
    config.validate()?;
    let rows = kappa_sweep_rows(config.alphas.as_deref(), &config.action_counts);
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir)?;
        write_rows(&dir.join("kappa_sweep.csv"), &rows, &["n_actions", "alpha", "kappa", "kappa_over_2"])?;
    }
    Ok(rows)
}

pub fn run_bound_verification(config: &ExperimentConfig) -> Result<Vec<VerificationRecord>, ExperimentError> {
    config.validate()?;
    let records = verification_suite(config.n_mdps, config.verify_lambda, config.seed, &config.executor())?;
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir)?;
        write_verification_csv(fs::File::create(dir.join("verification.csv"))?, &records)?;
    }
    Ok(records)
}

pub fn run_concentration(config: &ExperimentConfig) -> Result<Vec<ConcentrationReport>, ExperimentError> {
    config.validate()?;
    let family = config.family(false);
    let reports: Vec<ConcentrationReport> = config
        .zetas
        .iter()
        .map(|&zeta| {
            let c = ConcentrationConfig {
                k_values: config.k_values.clone(),
                zeta,
                n_repeats: config.n_repeats,
                k_ref: config.k_ref,
                corruption: config.corruption,
            };
            concentration_experiment(&family, &c, config.seed, &config.executor())
        })
        .collect();
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("concentration.csv"))?;
        w.write_record(["zeta", "k", "repeat", "gap", "envelope", "within_envelope"])?;
        for r in &reports {
            for row in &r.rows {
                w.serialize((r.zeta, row.k, row.repeat, row.gap, row.envelope, row.within_envelope))?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("concentration_summary.csv"))?;
        w.write_record(["zeta", "k", "mean_gap", "fraction_within_envelope", "spearman"])?;
        for r in &reports {
            for &(k, mean) in &r.mean_gap {
                w.serialize((r.zeta, k, mean, r.fraction_within_envelope(k), r.spearman))?;
            }
        }
        w.flush()?;
    }
    Ok(reports)
}

/// Writes serializable rows with an explicit header, so that an empty
/// table still gets one.
fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), ExperimentError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
