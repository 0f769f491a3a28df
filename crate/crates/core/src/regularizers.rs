//! Policy regularizers: penalty values, their exact θ-gradients, default
//! policies and the distillation step for learned defaults.
//!
//! Every penalty is an average over states with uniform weight `1/|S|`,
//! scaled per state by `λ(s)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{log_softmax, softmax, Mdp, Policy, SoftmaxParams};
use crate::table::Table;

/// Floor applied to default-policy probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("lambda must be finite and non-negative")]
    InvalidLambda,
    #[error("distill_delay must be 0 for non-learned regularizer {0:?}")]
    DelayOnFixedKind(RegKind),
    #[error("default_update needs a parametric default policy")]
    NotParametric,
    #[error("default_update called for non-learned regularizer {0:?}")]
    NotLearned(RegKind),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegKind {
    None,
    Entropy,
    LogBarrier,
    FixedDefaultKL,
    ForwardKLLearned,
    ReverseKLLearned,
    Distral,
    HabitDefault,
}

impl RegKind {
    pub const ALL: [RegKind; 8] = [
        RegKind::None,
        RegKind::Entropy,
        RegKind::LogBarrier,
        RegKind::FixedDefaultKL,
        RegKind::ForwardKLLearned,
        RegKind::ReverseKLLearned,
        RegKind::Distral,
        RegKind::HabitDefault,
    ];

    /// Kinds whose default policy is distilled from the learner.
    pub fn is_learned(self) -> bool {
        matches!(self, RegKind::ForwardKLLearned | RegKind::ReverseKLLearned | RegKind::Distral)
    }
}

/// Scalar or per-state regularization weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lambda {
    Scalar(f64),
    PerState(Vec<f64>),
}

impl Lambda {
    #[inline]
    pub fn at(&self, s: usize) -> f64 {
        match self {
            Lambda::Scalar(l) => *l,
            Lambda::PerState(v) => v[s],
        }
    }

    fn is_valid(&self) -> bool {
        let ok = |l: &f64| l.is_finite() && *l >= 0.0;
        match self {
            Lambda::Scalar(l) => ok(l),
            Lambda::PerState(v) => v.iter().all(ok),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub kind: RegKind,
    pub lambda: Lambda,
    /// Environment steps before a learned default starts updating.
    #[serde(default)]
    pub distill_delay: u64,
}

impl RegularizerSpec {
    pub fn new(kind: RegKind, lambda: f64) -> Self {
        Self { kind, lambda: Lambda::Scalar(lambda), distill_delay: 0 }
    }

    pub fn none() -> Self {
        Self::new(RegKind::None, 0.0)
    }

    pub fn with_delay(mut self, delay: u64) -> Self {
        self.distill_delay = delay;
        self
    }

    pub fn validate(&self, n_states: usize) -> Result<(), RegError> {
        if !self.lambda.is_valid() {
            return Err(RegError::InvalidLambda);
        }
        if let Lambda::PerState(v) = &self.lambda {
            if v.len() != n_states {
                return Err(RegError::Shape(format!("per-state lambda has {} entries for {n_states} states", v.len())));
            }
        }
        if !self.kind.is_learned() && self.distill_delay != 0 {
            return Err(RegError::DelayOnFixedKind(self.kind));
        }
        Ok(())
    }
}

/// The reference policy π₀.
#[derive(Clone, Debug, PartialEq)]
pub enum DefaultPolicy {
    Uniform { n_states: usize, n_actions: usize },
    FixedTable(Policy),
    Parametric(SoftmaxParams),
}

impl DefaultPolicy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        DefaultPolicy::Uniform { n_states, n_actions }
    }

    pub fn n_states(&self) -> usize {
        match self {
            DefaultPolicy::Uniform { n_states, .. } => *n_states,
            DefaultPolicy::FixedTable(p) => p.n_states(),
            DefaultPolicy::Parametric(p) => p.n_states(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            DefaultPolicy::Uniform { n_actions, .. } => *n_actions,
            DefaultPolicy::FixedTable(p) => p.n_actions(),
            DefaultPolicy::Parametric(p) => p.n_actions(),
        }
    }

    pub fn probs(&self, s: usize) -> Vec<f64> {
        match self {
            DefaultPolicy::Uniform { n_actions, .. } => vec![1.0 / *n_actions as f64; *n_actions],
            DefaultPolicy::FixedTable(p) => p.probs(s).to_vec(),
            DefaultPolicy::Parametric(p) => p.policy_probs(s),
        }
    }

    /// `ln max(π₀(a|s), 1e-12)`.
    pub fn floored_log_probs(&self, s: usize) -> Vec<f64> {
        self.probs(s).into_iter().map(|p| p.max(PROB_FLOOR).ln()).collect()
    }

    pub fn to_policy(&self) -> Policy {
        match self {
            DefaultPolicy::Uniform { n_states, n_actions } => Policy::uniform(*n_states, *n_actions),
            DefaultPolicy::FixedTable(p) => p.clone(),
            DefaultPolicy::Parametric(p) => p.policy(),
        }
    }
}

/// `KL(p ‖ q)` given `p` and both log-probability vectors.
fn kl_from_logs(p: &[f64], log_p: &[f64], log_q: &[f64]) -> f64 {
    p.iter().zip(log_p.iter().zip(log_q)).map(|(&pi, (&lp, &lq))| if pi > 0.0 { pi * (lp - lq) } else { 0.0 }).sum()
}

/// `KL(p ‖ q)` with both arguments floored at 1e-12 inside the logs.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let lp: Vec<f64> = p.iter().map(|x| x.max(PROB_FLOOR).ln()).collect();
    let lq: Vec<f64> = q.iter().map(|x| x.max(PROB_FLOOR).ln()).collect();
    kl_from_logs(p, &lp, &lq)
}

/// `Σ_a p(a) ln p(a)`, i.e. negative entropy.
fn neg_entropy(p: &[f64], log_p: &[f64]) -> f64 {
    p.iter().zip(log_p).map(|(&x, &l)| if x > 0.0 { x * l } else { 0.0 }).sum()
}

fn check_shapes(
    spec: &RegularizerSpec,
    params: &SoftmaxParams,
    default: &DefaultPolicy,
    mdp: &Mdp,
) -> Result<(), RegError> {
    let (s, a) = (mdp.n_states(), mdp.n_actions());
    if params.n_states() != s || params.n_actions() != a {
        return Err(RegError::Shape("parameters do not match the mdp".into()));
    }
    if default.n_states() != s || default.n_actions() != a {
        return Err(RegError::Shape("default policy does not match the mdp".into()));
    }
    spec.validate(s)
}

/// Per-state penalty and its objective-gradient row.
fn state_terms(
    kind: RegKind,
    log_pi: &[f64],
    pi: &[f64],
    default: &DefaultPolicy,
    s: usize,
    grad: Option<&mut [f64]>,
) -> f64 {
    let n_actions = pi.len();
    let forward = |p0: &[f64], grad: Option<&mut [f64]>| {
        let log_p0: Vec<f64> = p0.iter().map(|x| x.max(PROB_FLOOR).ln()).collect();
        if let Some(g) = grad {
            for a in 0..n_actions {
                g[a] = p0[a] - pi[a];
            }
        }
        kl_from_logs(p0, &log_p0, log_pi)
    };
    let entropy_term = |grad: Option<&mut [f64]>| {
        let ne = neg_entropy(pi, log_pi);
        if let Some(g) = grad {
            // ∂/∂θ_a Σ π ln π = π_a (ln π_a − Σ π ln π)
            for a in 0..n_actions {
                g[a] -= pi[a] * (log_pi[a] - ne);
            }
        }
        ne
    };
    let reverse = |grad: Option<&mut [f64]>| {
        let log_p0 = default.floored_log_probs(s);
        let kl = kl_from_logs(pi, log_pi, &log_p0);
        if let Some(g) = grad {
            for a in 0..n_actions {
                g[a] -= pi[a] * ((log_pi[a] - log_p0[a]) - kl);
            }
        }
        kl
    };
    match kind {
        RegKind::None => 0.0,
        RegKind::LogBarrier => forward(&vec![1.0 / n_actions as f64; n_actions], grad),
        RegKind::FixedDefaultKL | RegKind::HabitDefault | RegKind::ForwardKLLearned => forward(&default.probs(s), grad),
        RegKind::Entropy => entropy_term(grad),
        RegKind::ReverseKLLearned => reverse(grad),
        RegKind::Distral => match grad {
            Some(g) => {
                let kl = reverse(Some(&mut *g));
                kl + entropy_term(Some(g))
            }
            None => reverse(None) + entropy_term(None),
        },
    }
}

/// Penalty subtracted from the value in the regularized objective.
pub fn omega_value(
    spec: &RegularizerSpec,
    params: &SoftmaxParams,
    default: &DefaultPolicy,
    mdp: &Mdp,
) -> Result<f64, RegError> {
    check_shapes(spec, params, default, mdp)?;
    if spec.kind == RegKind::None {
        return Ok(0.0);
    }
    let n = mdp.n_states() as f64;
    let mut total = 0.0;
    for s in 0..mdp.n_states() {
        let w = spec.lambda.at(s) / n;
        if w == 0.0 {
            continue;
        }
        let log_pi = params.log_probs(s);
        let pi = params.policy_probs(s);
        total += w * state_terms(spec.kind, &log_pi, &pi, default, s, None);
    }
    Ok(total)
}

/// Gradient in θ of `−omega_value`, i.e. the penalty's contribution to the
/// gradient of the objective.
pub fn omega_grad(
    spec: &RegularizerSpec,
    params: &SoftmaxParams,
    default: &DefaultPolicy,
    mdp: &Mdp,
) -> Result<Table, RegError> {
    check_shapes(spec, params, default, mdp)?;
    let mut grad = Table::zeros(mdp.n_states(), mdp.n_actions());
    if spec.kind == RegKind::None {
        return Ok(grad);
    }
    let n = mdp.n_states() as f64;
    for s in 0..mdp.n_states() {
        let w = spec.lambda.at(s) / n;
        if w == 0.0 {
            continue;
        }
        let log_pi = params.log_probs(s);
        let pi = params.policy_probs(s);
        let row = grad.row_mut(s);
        state_terms(spec.kind, &log_pi, &pi, default, s, Some(row));
        for g in row.iter_mut() {
            *g *= w;
        }
    }
    Ok(grad)
}

/// Mean over states of the divergence the distillation step minimizes.
pub fn distillation_loss(spec: &RegularizerSpec, phi: &SoftmaxParams, learner: &SoftmaxParams) -> f64 {
    let n = phi.n_states();
    let mut total = 0.0;
    for s in 0..n {
        let (lp, lq) = (phi.log_probs(s), learner.log_probs(s));
        total += match spec.kind {
            RegKind::ForwardKLLearned => kl_from_logs(&softmax(phi.theta.row(s)), &lp, &lq),
            _ => kl_from_logs(&learner.policy_probs(s), &lq, &lp),
        };
    }
    total / n as f64
}

/// One gradient-descent step of the learned default towards the learner.
///
/// Before `t` reaches `distill_delay` the default is returned unchanged.
pub fn default_update(
    spec: &RegularizerSpec,
    default: &DefaultPolicy,
    learner: &SoftmaxParams,
    eta_reg: f64,
    t: u64,
) -> Result<DefaultPolicy, RegError> {
    if !spec.kind.is_learned() {
        return Err(RegError::NotLearned(spec.kind));
    }
    let DefaultPolicy::Parametric(phi) = default else {
        return Err(RegError::NotParametric);
    };
    if phi.n_states() != learner.n_states() || phi.n_actions() != learner.n_actions() {
        return Err(RegError::Shape("default and learner differ in shape".into()));
    }
    if t < spec.distill_delay {
        return Ok(default.clone());
    }
    let n = phi.n_states() as f64;
    let mut next = phi.clone();
    for s in 0..phi.n_states() {
        let p0 = phi.policy_probs(s);
        let pi = learner.policy_probs(s);
        let row = next.theta.row_mut(s);
        match spec.kind {
            RegKind::ForwardKLLearned => {
                let (lp0, lpi) = (log_softmax(phi.theta.row(s)), learner.log_probs(s));
                let kl = kl_from_logs(&p0, &lp0, &lpi);
                for a in 0..row.len() {
                    row[a] -= eta_reg * p0[a] * ((lp0[a] - lpi[a]) - kl) / n;
                }
            }
            _ => {
                for a in 0..row.len() {
                    row[a] -= eta_reg * (p0[a] - pi[a]) / n;
                }
            }
        }
    }
    Ok(DefaultPolicy::Parametric(next))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_state(n_actions: usize) -> Mdp {
        Mdp::from_nested(
            1,
            n_actions,
            &[vec![vec![1.0]; n_actions]],
            &[vec![0.0; n_actions]],
            0.9,
            vec![1.0],
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn kl_zero_at_default() {
        let mdp = one_state(3);
        let params = SoftmaxParams::new(Table::from_vec(1, 3, vec![0.3, -1.0, 2.0]));
        let default = DefaultPolicy::FixedTable(params.policy());
        let spec = RegularizerSpec::new(RegKind::FixedDefaultKL, 0.7);
        assert!(omega_value(&spec, &params, &default, &mdp).unwrap().abs() < 1e-15);
        assert!(omega_grad(&spec, &params, &default, &mdp).unwrap().inf_norm() < 1e-15);
    }

    #[test]
    fn entropy_of_uniform() {
        let mdp = one_state(2);
        let params = SoftmaxParams::zeros(1, 2);
        let spec = RegularizerSpec::new(RegKind::Entropy, 1.0);
        let v = omega_value(&spec, &params, &DefaultPolicy::uniform(1, 2), &mdp).unwrap();
        assert!((v + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_barrier_example() {
        let mdp = one_state(2);
        let params = SoftmaxParams::new(Table::from_vec(1, 2, vec![1.0, 0.0]));
        let spec = RegularizerSpec::new(RegKind::LogBarrier, 1.0);
        let v = omega_value(&spec, &params, &DefaultPolicy::uniform(1, 2), &mdp).unwrap();
        let pi = params.policy_probs(0);
        let expected = 0.5 * (0.5 / pi[0]).ln() + 0.5 * (0.5 / pi[1]).ln();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.1201).abs() < 1e-4);
        let g = omega_grad(&spec, &params, &DefaultPolicy::uniform(1, 2), &mdp).unwrap();
        assert!((g.get(0, 0) - (0.5 - pi[0])).abs() < 1e-15);
    }

    #[test]
    fn delay_gate() {
        let spec = RegularizerSpec::new(RegKind::ReverseKLLearned, 0.2).with_delay(40_000);
        let default = DefaultPolicy::Parametric(SoftmaxParams::zeros(2, 2));
        let learner = SoftmaxParams::new(Table::from_vec(2, 2, vec![1.0, 0.0, 0.0, 3.0]));
        assert_eq!(default_update(&spec, &default, &learner, 0.01, 0).unwrap(), default);
        assert_ne!(default_update(&spec, &default, &learner, 0.01, 40_000).unwrap(), default);
    }

    #[test]
    fn no_op_at_fixed_point() {
        let learner = SoftmaxParams::new(Table::from_vec(1, 2, vec![0.4, -0.2]));
        let default = DefaultPolicy::Parametric(learner.clone());
        for kind in [RegKind::ForwardKLLearned, RegKind::ReverseKLLearned, RegKind::Distral] {
            let next = default_update(&RegularizerSpec::new(kind, 0.2), &default, &learner, 0.5, 0).unwrap();
            let DefaultPolicy::Parametric(p) = next else { unreachable!() };
            assert!(p.theta.max_abs_diff(&learner.theta) < 1e-15);
        }
    }

    #[test]
    fn validation() {
        let bad = RegularizerSpec::new(RegKind::Entropy, -1.0);
        assert_eq!(bad.validate(1), Err(RegError::InvalidLambda));
        let bad = RegularizerSpec::new(RegKind::LogBarrier, 0.1).with_delay(5);
        assert!(matches!(bad.validate(1), Err(RegError::DelayOnFixedKind(_))));
        let spec = RegularizerSpec::new(RegKind::Entropy, 0.1);
        assert_eq!(
            default_update(&spec, &DefaultPolicy::uniform(1, 2), &SoftmaxParams::zeros(1, 2), 0.1, 0),
            Err(RegError::NotLearned(RegKind::Entropy))
        );
    }

    #[test]
    fn json_layout() {
        let spec: RegularizerSpec =
            serde_json::from_str(r#"{"kind":"Distral","lambda":[0.1,0.2],"distill_delay":7}"#).unwrap();
        assert_eq!(spec.lambda, Lambda::PerState(vec![0.1, 0.2]));
        let spec: RegularizerSpec = serde_json::from_str(r#"{"kind":"LogBarrier","lambda":0.2}"#).unwrap();
        assert_eq!(spec.lambda, Lambda::Scalar(0.2));
        assert_eq!(spec.distill_delay, 0);
    }
}
