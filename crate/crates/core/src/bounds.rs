//! Closed-form error and iteration bounds for default-policy regularization,
//! and an empirical verifier that checks measured suboptimality against them.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{
    alpha_profile, evaluate, mismatch_coefficient, solve_optimal, visitation, AlphaProfile, Mdp, MdpError, Policy,
    SoftmaxParams,
};
use crate::optimizer::{exact_gradient, objective, OptimError};
use crate::par::Executor;
use crate::regularizers::{DefaultPolicy, Lambda, RegKind, RegularizerSpec};
use crate::rng::{stream, Purpose};
use crate::table::Table;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("missing input for this bound: {0}")]
    MissingInput(&'static str),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `κ = 2|A|(1−α) / (2|A|(1−α) − 1)`, or `+∞` once the denominator is
/// non-positive, i.e. for `α ≥ 1 − 1/(2|A|)`.
pub fn kappa(alpha_s: f64, n_actions: usize) -> f64 {
    let two_a = 2.0 * n_actions as f64;
    let x = two_a * (1.0 - alpha_s);
    let denom = x - 1.0;
    if alpha_s >= 1.0 - 1.0 / two_a || denom <= 0.0 {
        f64::INFINITY
    } else {
        x / denom
    }
}

/// Smoothness constant `β_λ = 8/(1−γ)³ + 2λ/|S|`.
pub fn smoothness_beta(lambda: f64, n_states: usize, gamma: f64) -> f64 {
    8.0 / (1.0 - gamma).powi(3) + 2.0 * lambda / n_states as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// The iteration-complexity statement needs `λ < 1`.
    pub precondition_ok: bool,
}

/// `λ = ε(1−γ) / (E_U[κ] · mismatch)`.
pub fn lambda_for_eps(eps: f64, gamma: f64, mean_kappa: f64, mismatch: f64) -> LambdaChoice {
    let lambda = eps * (1.0 - gamma) / (mean_kappa * mismatch);
    LambdaChoice { lambda, precondition_ok: lambda < 1.0 }
}

/// Task-specific quantities for the multitask iteration bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskProfile {
    pub alpha: AlphaProfile,
    pub mismatch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub lambda: Lambda,
    pub eps_opt: f64,
    pub eps: f64,
    pub alpha: AlphaProfile,
    /// Restart distribution, for expectations under `μ`.
    pub mu: Vec<f64>,
    /// `‖d^{π*}_ρ / μ‖∞`.
    pub mismatch: f64,
    /// `‖d^{π_θ}_ρ / μ‖∞`.
    pub mismatch_theta: f64,
    /// `‖1/μ‖∞`.
    pub inv_mu_inf: f64,
    /// Per-task profiles for the multitask variants.
    pub tasks: Vec<TaskProfile>,
}

impl BoundInputs {
    /// Uniform `μ`, unit mismatch, `α ≡ 0`, and zero `λ`, `ε`, `ε_opt`.
    pub fn new(n_states: usize, n_actions: usize, gamma: f64) -> Self {
        Self {
            n_states,
            n_actions,
            gamma,
            lambda: Lambda::Scalar(0.0),
            eps_opt: 0.0,
            eps: 0.0,
            alpha: AlphaProfile::constant(n_states, 0.0),
            mu: vec![1.0 / n_states as f64; n_states],
            mismatch: 1.0,
            mismatch_theta: 1.0,
            inv_mu_inf: n_states as f64,
            tasks: Vec::new(),
        }
    }

    fn mean_kappa(&self) -> f64 {
        self.alpha.as_slice().iter().map(|&a| kappa(a, self.n_actions)).sum::<f64>() / self.n_states as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// Reward-dominated branch of the tight bound.
    Reward,
    /// KL-dominated branch of the tight bound.
    Kl,
    Kappa,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub bound_value: f64,
    pub branch: Branch,
    /// Larger than `1/(1−γ)`, i.e. no information.
    pub vacuous: bool,
    pub precondition_ok: bool,
    pub inputs: BoundInputs,
}

fn report(bound_value: f64, branch: Branch, precondition_ok: bool, inputs: &BoundInputs) -> BoundReport {
    BoundReport {
        bound_value,
        branch,
        vacuous: bound_value > 1.0 / (1.0 - inputs.gamma),
        precondition_ok,
        inputs: inputs.clone(),
    }
}

/// `x · y` with `0 · ∞ = 0`.
fn mul0(x: f64, y: f64) -> f64 {
    if x == 0.0 || y == 0.0 {
        0.0
    } else {
        x * y
    }
}

/// Reward-dominated branch of the tight bound:
/// `1/(1−γ) · E_U[ε_opt|S| / max{1−α−ε_opt|S|/λ, 0} + λα] · mismatch`.
pub fn tight_reward_branch(inputs: &BoundInputs) -> f64 {
    let n = inputs.n_states as f64;
    let mut acc = 0.0;
    for (s, &alpha) in inputs.alpha.as_slice().iter().enumerate() {
        let lambda = inputs.lambda.at(s);
        let slack = inputs.eps_opt * n / lambda;
        let denom = (1.0 - alpha - slack).max(0.0);
        let first = if inputs.eps_opt == 0.0 {
            0.0
        } else if denom == 0.0 {
            f64::INFINITY
        } else {
            inputs.eps_opt * n / denom
        };
        acc += first + mul0(lambda, alpha);
    }
    mul0(acc / n / (1.0 - inputs.gamma), inputs.mismatch)
}

/// KL-dominated branch of the tight bound. With scalar `λ`:
/// `(|A|−1)/(1−γ)² · (E_μ[α] · mismatch_θ + ε_opt|S|/λ)`. With per-state `λ`
/// the state-dependent form `|A|/(1−γ)² E_μ[α] mismatch_θ +
/// |S|/(1−γ)² ‖Σ_a ε_opt/λ(s)‖∞` is used.
pub fn tight_kl_branch(inputs: &BoundInputs) -> f64 {
    let n = inputs.n_states as f64;
    let a = inputs.n_actions as f64;
    let g2 = (1.0 - inputs.gamma).powi(2);
    let e_mu_alpha = inputs.alpha.mean_under(&inputs.mu);
    match &inputs.lambda {
        Lambda::Scalar(lambda) => {
            let slack = if inputs.eps_opt == 0.0 { 0.0 } else { inputs.eps_opt * n / lambda };
            (a - 1.0) / g2 * (mul0(e_mu_alpha, inputs.mismatch_theta) + slack)
        }
        Lambda::PerState(lambdas) => {
            let worst = lambdas
                .iter()
                .map(|&l| if inputs.eps_opt == 0.0 { 0.0 } else { a * inputs.eps_opt / l })
                .fold(0.0, f64::max);
            a / g2 * mul0(e_mu_alpha, inputs.mismatch_theta) + n / g2 * worst
        }
    }
}

/// Minimum of the reward- and KL-dominated branches.
pub fn error_bound_tight(inputs: &BoundInputs) -> BoundReport {
    let reward = tight_reward_branch(inputs);
    let kl = tight_kl_branch(inputs);
    let (value, branch) = if reward <= kl { (reward, Branch::Reward) } else { (kl, Branch::Kl) };
    report(value, branch, true, inputs)
}

/// `E_U[κ(s) λ(s)] / (1−γ) · mismatch`; `+∞` if any `κ` is infinite.
///
/// The precondition flag checks `ε_opt ≤ λ/(2|S||A|)`, `0 < λ < 1`.
pub fn error_bound_kappa(inputs: &BoundInputs) -> BoundReport {
    let n = inputs.n_states as f64;
    let kappas: Vec<f64> = inputs.alpha.as_slice().iter().map(|&a| kappa(a, inputs.n_actions)).collect();
    let value = if kappas.iter().any(|k| k.is_infinite()) {
        f64::INFINITY
    } else {
        let weighted: f64 = kappas.iter().enumerate().map(|(s, k)| k * inputs.lambda.at(s)).sum::<f64>() / n;
        weighted / (1.0 - inputs.gamma) * inputs.mismatch
    };
    let sa = 2.0 * n * inputs.n_actions as f64;
    let precondition_ok = (0..inputs.n_states).all(|s| {
        let l = inputs.lambda.at(s);
        l > 0.0 && l < 1.0 && inputs.eps_opt <= l / sa
    });
    report(value, Branch::Kappa, precondition_ok, inputs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IterationVariant {
    LogBarrier,
    AlphaRandomInit,
    AlphaPi0Init,
    MultitaskRandomInit,
    MultitaskPi0Init,
}

/// Iteration threshold `T` after which the minimum value error along the
/// run is guaranteed to be at most `ε`.
pub fn iteration_bound(variant: IterationVariant, inputs: &BoundInputs) -> Result<f64, BoundError> {
    if !(inputs.eps > 0.0) {
        return Err(BoundError::MissingInput("eps"));
    }
    let s2a2 = (inputs.n_states as f64).powi(2) * (inputs.n_actions as f64).powi(2);
    let e2 = inputs.eps * inputs.eps;
    let g = 1.0 - inputs.gamma;
    let m2 = inputs.mismatch * inputs.mismatch;
    let value = match variant {
        IterationVariant::LogBarrier => 320.0 * s2a2 / (g.powi(6) * e2) * m2,
        IterationVariant::AlphaRandomInit => {
            let ek = inputs.mean_kappa();
            80.0 * ek * ek * s2a2 / (g.powi(6) * e2) * m2
        }
        IterationVariant::AlphaPi0Init => {
            if inputs.mu.len() != inputs.n_states {
                return Err(BoundError::MissingInput("mu"));
            }
            let e_alpha = inputs.alpha.mean_under(&inputs.mu);
            320.0 * s2a2 / (e2 * g.powi(7)) * m2 * inputs.inv_mu_inf * e_alpha
        }
        IterationVariant::MultitaskRandomInit => {
            if inputs.tasks.is_empty() {
                return Err(BoundError::MissingInput("tasks"));
            }
            let mut acc = 0.0;
            for task in &inputs.tasks {
                let m2k = task.mismatch * task.mismatch;
                acc += task.alpha.as_slice().iter().map(|&a| kappa(a, inputs.n_actions) * m2k).sum::<f64>()
                    / inputs.n_states as f64;
            }
            80.0 * s2a2 / (e2 * g.powi(6)) * acc / inputs.tasks.len() as f64
        }
        IterationVariant::MultitaskPi0Init => {
            if inputs.tasks.is_empty() {
                return Err(BoundError::MissingInput("tasks"));
            }
            if inputs.mu.len() != inputs.n_states {
                return Err(BoundError::MissingInput("mu"));
            }
            let e_alpha =
                inputs.tasks.iter().map(|t| t.alpha.mean_under(&inputs.mu)).sum::<f64>() / inputs.tasks.len() as f64;
            320.0 * s2a2 / (e2 * g.powi(7)) * inputs.inv_mu_inf.powi(3) * e_alpha
        }
    };
    Ok(value)
}

/// Per-state weights and gradient tolerances for the state-dependent bound.
#[derive(Clone, Debug, PartialEq)]
pub struct StateDependentChoice {
    /// `+∞` where `α(s) = 0`.
    pub lambda: Vec<f64>,
    pub eps_opt: Table,
}

/// `λ(s) = ε(1−γ)/(2α(s)·mismatch)` and
/// `ε_opt(s,a) = min((1−α)ε(1−γ)/(4|S|·mismatch), (1−α)λ(s)/|S|)`.
pub fn lambda_state_dependent(
    eps: f64,
    gamma: f64,
    alpha: &AlphaProfile,
    mismatch: f64,
    n_actions: usize,
) -> StateDependentChoice {
    let n = alpha.0.len() as f64;
    let lambda: Vec<f64> = alpha
        .as_slice()
        .iter()
        .map(|&a| if a > 0.0 { eps * (1.0 - gamma) / (2.0 * a * mismatch) } else { f64::INFINITY })
        .collect();
    let eps_opt = Table::from_fn(alpha.0.len(), n_actions, |s, _| {
        let keep = 1.0 - alpha.0[s];
        let first = keep * eps * (1.0 - gamma) / (4.0 * n * mismatch);
        let second = if lambda[s].is_infinite() { f64::INFINITY } else { keep * lambda[s] / n };
        first.min(second)
    });
    StateDependentChoice { lambda, eps_opt }
}

/// One row of the bound-verification table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub mdp_id: usize,
    pub pi0_kind: String,
    pub lambda: f64,
    pub eps_opt: f64,
    pub gap: f64,
    pub bound_kappa: f64,
    pub bound_tight: f64,
    pub holds_kappa: bool,
    pub holds_tight: bool,
    /// Whether the gradient tolerance was reached within the safety budget.
    pub converged: bool,
}

/// Iteration cap of the verifier's ascent.
pub const VERIFY_MAX_ITERS: usize = 200_000;

/// Gradient ascent with an adaptive step: a step is accepted only if it
/// does not decrease the objective, the step grows after acceptance and is
/// halved after rejection.
fn ascend_to_tolerance(
    mdp: &Mdp,
    spec: &RegularizerSpec,
    default: &DefaultPolicy,
    init: SoftmaxParams,
    grad_tol: f64,
) -> Result<(SoftmaxParams, f64, bool), OptimError> {
    let mut params = init;
    let mut value = objective(mdp, &params, spec, default)?;
    let mut grad = exact_gradient(mdp, &params, spec, default)?;
    let mut eta = 1.0;
    for _ in 0..VERIFY_MAX_ITERS {
        let norm = grad.inf_norm();
        if norm <= grad_tol {
            return Ok((params, norm, true));
        }
        let mut candidate = params.clone();
        candidate.theta.add_scaled(eta, &grad);
        let next = objective(mdp, &candidate, spec, default)?;
        if next >= value {
            params = candidate;
            value = next;
            grad = exact_gradient(mdp, &params, spec, default)?;
            eta = (eta * 1.5).min(1e6);
        } else {
            eta *= 0.5;
            if eta < 1e-14 {
                break;
            }
        }
    }
    let norm = grad.inf_norm();
    Ok((params, norm, norm <= grad_tol))
}

/// Runs `FixedDefaultKL` ascent from a seeded random start until
/// `‖∇‖∞ ≤ λ/(2|S||A|)`, then compares the true gap `V*(ρ) − V^{π_θ}(ρ)` with
/// both error bounds evaluated at measured mismatch coefficients.
pub fn verify_error_bound(
    mdp: &Mdp,
    default: &DefaultPolicy,
    lambda: f64,
    seed: u64,
) -> Result<VerificationRecord, BoundError> {
    mdp.check_mu_positive()?;
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let (pi_star, eval_star) = solve_optimal(mdp);
    let spec = RegularizerSpec::new(RegKind::FixedDefaultKL, lambda);
    let grad_tol = lambda / (2.0 * n_s as f64 * n_a as f64);

    let mut rng = stream(seed, 0, 0, Purpose::Misc);
    let init = SoftmaxParams::new(Table::from_fn(n_s, n_a, |_, _| rng.random::<f64>() * 2.0 - 1.0));
    let (params, achieved, converged) = ascend_to_tolerance(mdp, &spec, default, init, grad_tol)?;

    let policy = params.policy();
    let eval = evaluate(mdp, &policy)?;
    let gap = eval_star.value_at(mdp.rho()) - eval.value_at(mdp.rho());
    let pi_star_policy = pi_star.to_policy(n_a);
    let mismatch = mismatch_coefficient(&visitation(mdp, &pi_star_policy, mdp.rho())?, mdp.mu())?;
    let mismatch_theta = mismatch_coefficient(&visitation(mdp, &policy, mdp.rho())?, mdp.mu())?;

    let inputs = BoundInputs {
        lambda: Lambda::Scalar(lambda),
        eps_opt: achieved,
        alpha: alpha_profile(&pi_star, &default.to_policy()),
        mu: mdp.mu().to_vec(),
        mismatch,
        mismatch_theta,
        inv_mu_inf: mdp.mu().iter().fold(0.0, |m, &u| m.max(1.0 / u)),
        ..BoundInputs::new(n_s, n_a, mdp.gamma())
    };
    let bound_kappa = error_bound_kappa(&inputs).bound_value;
    let bound_tight = error_bound_tight(&inputs).bound_value;
    Ok(VerificationRecord {
        mdp_id: 0,
        pi0_kind: String::new(),
        lambda,
        eps_opt: achieved,
        gap,
        bound_kappa,
        bound_tight,
        holds_kappa: gap <= bound_kappa,
        holds_tight: gap <= bound_tight,
        converged,
    })
}

/// Default policies exercised by the verification suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pi0Kind {
    Optimal,
    Uniform,
    Corrupted,
}

impl Pi0Kind {
    pub const ALL: [Pi0Kind; 3] = [Pi0Kind::Optimal, Pi0Kind::Uniform, Pi0Kind::Corrupted];

    pub fn label(self) -> &'static str {
        match self {
            Pi0Kind::Optimal => "optimal",
            Pi0Kind::Uniform => "uniform",
            Pi0Kind::Corrupted => "corrupted",
        }
    }
}

/// Builds the default policy of the given kind for `mdp`. The corrupted
/// default puts half its mass on the optimal action and spreads the rest
/// randomly.
pub fn suite_default(mdp: &Mdp, kind: Pi0Kind, seed: u64, mdp_id: usize) -> DefaultPolicy {
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let (pi_star, _) = solve_optimal(mdp);
    match kind {
        Pi0Kind::Optimal => DefaultPolicy::FixedTable(pi_star.to_policy(n_a)),
        Pi0Kind::Uniform => DefaultPolicy::uniform(n_s, n_a),
        Pi0Kind::Corrupted => {
            let mut rng = stream(seed, mdp_id as u64, 0, Purpose::Corruption);
            let mut t = Table::zeros(n_s, n_a);
            for s in 0..n_s {
                let noise: Vec<f64> = (0..n_a).map(|_| rng.random::<f64>() + 1e-3).collect();
                let z: f64 = noise.iter().sum();
                for (a, x) in noise.iter().enumerate() {
                    let point = if a == pi_star.action(s) { 0.5 } else { 0.0 };
                    t.set(s, a, point + 0.5 * x / z);
                }
            }
            DefaultPolicy::FixedTable(Policy::new(t).expect("mixture of distributions"))
        }
    }
}

/// The random MDP with index `mdp_id` of the verification suite:
/// `|S| ∈ [3,6]`, `|A| ∈ [2,4]`, `γ = 0.9`, uniform `μ = ρ`.
pub fn suite_mdp(seed: u64, mdp_id: usize) -> Mdp {
    let mut rng = stream(seed, mdp_id as u64, 0, Purpose::Suite);
    let n_s = rng.random_range(3..=6);
    let n_a = rng.random_range(2..=4);
    crate::mdp::random_mdp(&mut rng, n_s, n_a, 0.9)
}

/// Verifies every `(mdp, π₀ kind)` cell of an `n_mdps`-MDP suite.
pub fn verification_suite(
    n_mdps: usize,
    lambda: f64,
    seed: u64,
    executor: &Executor,
) -> Result<Vec<VerificationRecord>, BoundError> {
    let cells: Vec<(usize, Pi0Kind)> =
        (0..n_mdps).flat_map(|i| Pi0Kind::ALL.into_iter().map(move |k| (i, k))).collect();
    executor
        .map(cells, |(mdp_id, kind)| {
            let mdp = suite_mdp(seed, mdp_id);
            let default = suite_default(&mdp, kind, seed, mdp_id);
            let mut rec = verify_error_bound(&mdp, &default, lambda, seed ^ mdp_id as u64)?;
            rec.mdp_id = mdp_id;
            rec.pi0_kind = kind.label().to_string();
            Ok(rec)
        })
        .into_iter()
        .collect()
}

pub fn write_verification_csv<W: std::io::Write>(out: W, records: &[VerificationRecord]) -> Result<(), BoundError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "mdp_id",
        "pi0_kind",
        "lambda",
        "eps_opt",
        "gap",
        "bound_kappa",
        "bound_tight",
        "holds_kappa",
        "holds_tight",
        "converged",
    ])?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
