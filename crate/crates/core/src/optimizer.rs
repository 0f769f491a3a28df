//! Regularized objective, exact and sampled policy gradients, and the ascent
//! loops built on them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{evaluate, visitation, Mdp, MdpError, SoftmaxParams};
use crate::regularizers::{default_update, omega_grad, omega_value, DefaultPolicy, RegError, RegularizerSpec};
use crate::rng::{sample_index, stream, Purpose, Rng};
use crate::table::Table;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Reg(#[from] RegError),
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("non-finite gradient at update {update_index}")]
    NonFinite { update_index: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Exact,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub eta: f64,
    pub max_env_steps: u64,
    /// Update cap. In sampled mode `0` means no cap beyond the step budget.
    pub max_updates: u64,
    /// Stop once `‖∇‖∞ ≤ grad_tol` (exact mode); `0` disables.
    pub grad_tol: f64,
    pub batch_size: usize,
    pub horizon_cutoff: usize,
    pub mode: Mode,
    pub seed: u64,
    /// Step size of the learned-default distillation step.
    pub eta_reg: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            eta: 0.02,
            max_env_steps: 80_000,
            max_updates: 0,
            grad_tol: 0.0,
            batch_size: 1,
            horizon_cutoff: 200,
            mode: Mode::Sampled,
            seed: 0,
            eta_reg: 0.01,
        }
    }
}

impl OptimConfig {
    pub fn exact(eta: f64, max_updates: u64, grad_tol: f64) -> Self {
        Self { eta, max_updates, grad_tol, mode: Mode::Exact, max_env_steps: 0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(OptimError::Config("eta must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(OptimError::Config("batch_size must be at least 1".into()));
        }
        if self.horizon_cutoff == 0 {
            return Err(OptimError::Config("horizon_cutoff must be at least 1".into()));
        }
        if !(self.grad_tol >= 0.0) || !(self.eta_reg >= 0.0) {
            return Err(OptimError::Config("grad_tol and eta_reg must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradTol,
    StepBudget,
    UpdateBudget,
}

/// Metrics at one iterate. Record 0 is the initial point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub update_index: u64,
    pub env_steps: u64,
    pub value_rho: f64,
    pub value_mu: f64,
    pub objective: f64,
    pub grad_inf_norm: f64,
    pub grad_l2_norm: f64,
    /// Mean undiscounted return of the batch behind this update.
    pub batch_return: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub final_params: SoftmaxParams,
    pub history: Vec<HistoryRecord>,
    pub terminated_by: Termination,
    pub final_default: DefaultPolicy,
}

struct Snapshot {
    objective: f64,
    value_rho: f64,
    value_mu: f64,
    grad: Table,
}

fn snapshot(
    mdp: &Mdp,
    params: &SoftmaxParams,
    spec: &RegularizerSpec,
    default: &DefaultPolicy,
    with_grad: bool,
) -> Result<Snapshot, OptimError> {
    let policy = params.policy();
    let eval = evaluate(mdp, &policy)?;
    let penalty = omega_value(spec, params, default, mdp)?;
    let value_mu = eval.value_at(mdp.mu());
    let grad = if with_grad {
        let d = visitation(mdp, &policy, mdp.mu())?;
        let scale = 1.0 / (1.0 - mdp.gamma());
        let mut g = Table::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
            scale * d.0[s] * policy.prob(s, a) * eval.adv.get(s, a)
        });
        g.add_scaled(1.0, &omega_grad(spec, params, default, mdp)?);
        g
    } else {
        Table::zeros(0, 0)
    };
    Ok(Snapshot { objective: value_mu - penalty, value_rho: eval.value_at(mdp.rho()), value_mu, grad })
}

/// `V^{π_θ}(μ) − Ω(θ)`.
pub fn objective(
    mdp: &Mdp,
    params: &SoftmaxParams,
    spec: &RegularizerSpec,
    default: &DefaultPolicy,
) -> Result<f64, OptimError> {
    Ok(snapshot(mdp, params, spec, default, false)?.objective)
}

/// `(1−γ)⁻¹ d_μ(s) π(a|s) A(s,a)` plus the penalty gradient.
pub fn exact_gradient(
    mdp: &Mdp,
    params: &SoftmaxParams,
    spec: &RegularizerSpec,
    default: &DefaultPolicy,
) -> Result<Table, OptimError> {
    Ok(snapshot(mdp, params, spec, default, true)?.grad)
}

fn record(
    update_index: u64,
    env_steps: u64,
    snap: &Snapshot,
    grad: &Table,
    batch_return: Option<f64>,
) -> HistoryRecord {
    HistoryRecord {
        update_index,
        env_steps,
        value_rho: snap.value_rho,
        value_mu: snap.value_mu,
        objective: snap.objective,
        grad_inf_norm: grad.inf_norm(),
        grad_l2_norm: grad.l2_norm(),
        batch_return,
    }
}

/// Gradient ascent with the exact gradient and a fixed step `config.eta`.
pub fn run_exact(
    mdp: &Mdp,
    spec: &RegularizerSpec,
    default: &DefaultPolicy,
    config: &OptimConfig,
    init: &SoftmaxParams,
) -> Result<RunResult, OptimError> {
    config.validate()?;
    if config.mode != Mode::Exact {
        return Err(OptimError::Config("run_exact needs mode Exact".into()));
    }
    let mut params = init.clone();
    let mut history = Vec::new();
    let mut updates = 0;
    let terminated_by = loop {
        let snap = snapshot(mdp, &params, spec, default, true)?;
        if !snap.grad.all_finite() {
            return Err(OptimError::NonFinite { update_index: updates });
        }
        history.push(record(updates, 0, &snap, &snap.grad, None));
        if config.grad_tol > 0.0 && snap.grad.inf_norm() <= config.grad_tol {
            break Termination::GradTol;
        }
        if updates >= config.max_updates {
            break Termination::UpdateBudget;
        }
        params.theta.add_scaled(config.eta, &snap.grad);
        updates += 1;
    };
    Ok(RunResult { final_params: params, history, terminated_by, final_default: default.clone() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

/// `s₀ ∼ μ`, then actions from `π_θ` until an absorbing state or the cutoff.
pub fn sample_trajectory(mdp: &Mdp, params: &SoftmaxParams, rng: &mut Rng, horizon_cutoff: usize) -> Vec<Step> {
    let mut steps = Vec::new();
    let mut s = sample_index(rng, mdp.mu());
    let mut probs = vec![0.0; mdp.n_actions()];
    while steps.len() < horizon_cutoff && !mdp.is_absorbing(s) {
        crate::mdp::softmax_into(params.theta.row(s), &mut probs);
        let a = sample_index(rng, &probs);
        steps.push(Step { state: s, action: a, reward: mdp.reward_at(s, a) });
        s = sample_index(rng, mdp.next_dist(s, a));
    }
    steps
}

/// Value part of the REINFORCE estimate for one trajectory, added into `out`.
fn accumulate_reinforce(mdp: &Mdp, traj: &[Step], params: &SoftmaxParams, weight: f64, out: &mut Table) {
    let gamma = mdp.gamma();
    let mut to_go = vec![0.0; traj.len()];
    let mut acc = 0.0;
    for (t, step) in traj.iter().enumerate().rev() {
        acc = step.reward + gamma * acc;
        to_go[t] = acc;
    }
    let mut discount = 1.0;
    let mut probs = vec![0.0; mdp.n_actions()];
    for (t, step) in traj.iter().enumerate() {
        let coef = weight * discount * to_go[t];
        if coef != 0.0 {
            crate::mdp::softmax_into(params.theta.row(step.state), &mut probs);
            let row = out.row_mut(step.state);
            for (a, g) in row.iter_mut().enumerate() {
                let indicator = if a == step.action { 1.0 } else { 0.0 };
                *g += coef * (indicator - probs[a]);
            }
        }
        discount *= gamma;
    }
}

/// Batch-mean REINFORCE estimate of `∇V(μ)` plus the exact penalty gradient.
pub fn reinforce_gradient(
    mdp: &Mdp,
    trajectories: &[Vec<Step>],
    params: &SoftmaxParams,
    spec: &RegularizerSpec,
    default: &DefaultPolicy,
) -> Result<Table, OptimError> {
    if trajectories.is_empty() {
        return Err(OptimError::Config("empty trajectory batch".into()));
    }
    let mut grad = omega_grad(spec, params, default, mdp)?;
    let w = 1.0 / trajectories.len() as f64;
    for traj in trajectories {
        accumulate_reinforce(mdp, traj, params, w, &mut grad);
    }
    Ok(grad)
}

/// Stochastic ascent: one update per batch of `batch_size` episodes until the
/// environment-step budget is spent. Learned defaults are distilled after
/// every update once `distill_delay` steps have elapsed.
///
/// An episode that starts in an absorbing state is charged one step so the
/// loop always makes progress.
pub fn run_sampled(
    mdp: &Mdp,
    spec: &RegularizerSpec,
    default: &DefaultPolicy,
    config: &OptimConfig,
    init: &SoftmaxParams,
) -> Result<RunResult, OptimError> {
    config.validate()?;
    if config.mode != Mode::Sampled {
        return Err(OptimError::Config("run_sampled needs mode Sampled".into()));
    }
    let mut rng = stream(config.seed, 0, 0, Purpose::Trajectories);
    let mut params = init.clone();
    let mut default = default.clone();
    let mut env_steps = 0u64;
    let mut updates = 0u64;
    let snap = snapshot(mdp, &params, spec, &default, false)?;
    let mut history = vec![record(0, 0, &snap, &Table::zeros(0, 0), None)];
    let mut batch = Vec::with_capacity(config.batch_size);
    let terminated_by = loop {
        if env_steps >= config.max_env_steps {
            break Termination::StepBudget;
        }
        if config.max_updates > 0 && updates >= config.max_updates {
            break Termination::UpdateBudget;
        }
        batch.clear();
        let mut total_return = 0.0;
        for _ in 0..config.batch_size {
            let traj = sample_trajectory(mdp, &params, &mut rng, config.horizon_cutoff);
            env_steps += traj.len().max(1) as u64;
            total_return += traj.iter().map(|s| s.reward).sum::<f64>();
            batch.push(traj);
        }
        let grad = reinforce_gradient(mdp, &batch, &params, spec, &default)?;
        if !grad.all_finite() {
            return Err(OptimError::NonFinite { update_index: updates });
        }
        params.theta.add_scaled(config.eta, &grad);
        updates += 1;
        if spec.kind.is_learned() {
            default = default_update(spec, &default, &params, config.eta_reg, env_steps)?;
        }
        let snap = snapshot(mdp, &params, spec, &default, false)?;
        let mean_return = total_return / config.batch_size as f64;
        history.push(record(updates, env_steps, &snap, &grad, Some(mean_return)));
    };
    Ok(RunResult { final_params: params, history, terminated_by, final_default: default })
}
