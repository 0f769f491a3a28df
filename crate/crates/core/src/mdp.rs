//! Finite MDPs, exact policy evaluation, discounted visitation and optimal
//! policies.
//!
//! All evaluation is done with direct dense solves; state spaces here are
//! small (tens of states), so `(I - γ P_π) V = r_π` is solved exactly via LU.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::Table;

/// Tolerance on row sums of probability vectors.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Tolerance on visitation-distribution sums.
pub const DIST_SUM_TOL: f64 = 1e-10;
/// Maximum admissible residual of the Bellman linear solve.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-8;
/// Sup-norm stopping tolerance of value iteration.
pub const VALUE_ITERATION_TOL: f64 = 1e-10;
/// Relative gap under which two Q values are treated as tied.
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("transition row P[{state}][{action}] is not a distribution (sum {sum})")]
    Transition { state: usize, action: usize, sum: f64 },
    #[error("reward r[{state}][{action}] = {value} outside [0, 1]")]
    Reward { state: usize, action: usize, value: f64 },
    #[error("discount {0} outside [0, 1)")]
    Gamma(f64),
    #[error("{name} is not a probability distribution")]
    Distribution { name: &'static str },
    #[error("distribution has non-positive mass {value} at state {state}")]
    NonPositive { state: usize, value: f64 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// A finite discounted MDP `(S, A, P, r, γ, ρ, μ)`.
///
/// `rho` is the target start distribution, `mu` the restart distribution
/// used for training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDoc", into = "MdpDoc")]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Table,
    gamma: f64,
    rho: Vec<f64>,
    mu: Vec<f64>,
    absorbing: Vec<bool>,
}

/// JSON document layout of an [`Mdp`].
#[derive(Clone, Debug, Serialize, Deserialize)]
struct MdpDoc {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rho: Vec<f64>,
    mu: Vec<f64>,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
}

impl TryFrom<MdpDoc> for Mdp {
    type Error = MdpError;

    fn try_from(doc: MdpDoc) -> Result<Self, Self::Error> {
        Mdp::from_nested(doc.n_states, doc.n_actions, &doc.transition, &doc.reward, doc.gamma, doc.rho, doc.mu)
    }
}

impl From<Mdp> for MdpDoc {
    fn from(m: Mdp) -> Self {
        let transition =
            (0..m.n_states).map(|s| (0..m.n_actions).map(|a| m.next_dist(s, a).to_vec()).collect()).collect();
        MdpDoc {
            n_states: m.n_states,
            n_actions: m.n_actions,
            gamma: m.gamma,
            reward: m.reward.to_rows(),
            transition,
            rho: m.rho,
            mu: m.mu,
        }
    }
}

fn check_distribution(v: &[f64], tol: f64) -> bool {
    v.iter().all(|&x| x >= 0.0 && x.is_finite()) && (v.iter().sum::<f64>() - 1.0).abs() <= tol
}

impl Mdp {
    /// Validates and builds an MDP from a flat `[s][a][s']` transition buffer.
    ///
    /// `mu` only has to be a distribution here; strict positivity, which the
    /// bounds require, is checked by [`Mdp::check_mu_positive`].
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Table,
        gamma: f64,
        rho: Vec<f64>,
        mu: Vec<f64>,
    ) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::Shape("need at least one state and action".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(MdpError::Shape(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.rows() != n_states || reward.cols() != n_actions {
            return Err(MdpError::Shape("reward table shape".into()));
        }
        if rho.len() != n_states || mu.len() != n_states {
            return Err(MdpError::Shape("start distribution length".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(MdpError::Gamma(gamma));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let base = (s * n_actions + a) * n_states;
                let row = &transition[base..base + n_states];
                if !check_distribution(row, PROB_SUM_TOL) {
                    return Err(MdpError::Transition { state: s, action: a, sum: row.iter().sum() });
                }
                let r = reward.get(s, a);
                if !(0.0..=1.0).contains(&r) {
                    return Err(MdpError::Reward { state: s, action: a, value: r });
                }
            }
        }
        if !check_distribution(&rho, PROB_SUM_TOL) {
            return Err(MdpError::Distribution { name: "rho" });
        }
        if !check_distribution(&mu, PROB_SUM_TOL) {
            return Err(MdpError::Distribution { name: "mu" });
        }
        let absorbing = (0..n_states)
            .map(|s| {
                (0..n_actions).all(|a| transition[(s * n_actions + a) * n_states + s] == 1.0 && reward.get(s, a) == 0.0)
            })
            .collect();
        Ok(Self { n_states, n_actions, transition, reward, gamma, rho, mu, absorbing })
    }

    pub fn from_nested(
        n_states: usize,
        n_actions: usize,
        transition: &[Vec<Vec<f64>>],
        reward: &[Vec<f64>],
        gamma: f64,
        rho: Vec<f64>,
        mu: Vec<f64>,
    ) -> Result<Self, MdpError> {
        if transition.len() != n_states
            || transition.iter().any(|t| t.len() != n_actions || t.iter().any(|row| row.len() != n_states))
        {
            return Err(MdpError::Shape("transition tensor dimensions".into()));
        }
        let flat = transition.iter().flatten().flatten().copied().collect();
        let reward = Table::from_rows(reward).ok_or_else(|| MdpError::Shape("ragged reward table".into()))?;
        Self::new(n_states, n_actions, flat, reward, gamma, rho, mu)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mdp serialization is infallible")
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn reward(&self) -> &Table {
        &self.reward
    }

    #[inline]
    pub fn reward_at(&self, s: usize, a: usize) -> f64 {
        self.reward.get(s, a)
    }

    /// `P(· | s, a)`.
    #[inline]
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    /// A reward-free state that every action maps back to itself.
    #[inline]
    pub fn is_absorbing(&self, s: usize) -> bool {
        self.absorbing[s]
    }

    /// Returns a copy with different start distributions.
    pub fn with_starts(&self, rho: Vec<f64>, mu: Vec<f64>) -> Result<Self, MdpError> {
        Self::new(self.n_states, self.n_actions, self.transition.clone(), self.reward.clone(), self.gamma, rho, mu)
    }

    pub fn check_mu_positive(&self) -> Result<(), MdpError> {
        match self.mu.iter().position(|&m| m <= 0.0) {
            Some(state) => Err(MdpError::NonPositive { state, value: self.mu[state] }),
            None => Ok(()),
        }
    }

    fn check_policy(&self, policy: &Policy) -> Result<(), MdpError> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(MdpError::Shape(format!(
                "policy is {}x{}, mdp is {}x{}",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    /// `I - γ P_π` and `r_π`.
    fn policy_system(&self, policy: &Policy) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_states;
        let mut m = DMatrix::<f64>::identity(n, n);
        let mut r = DVector::<f64>::zeros(n);
        for s in 0..n {
            for (a, &p) in policy.probs(s).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                r[s] += p * self.reward_at(s, a);
                for (s2, &t) in self.next_dist(s, a).iter().enumerate() {
                    m[(s, s2)] -= self.gamma * p * t;
                }
            }
        }
        (m, r)
    }
}

/// A stochastic policy: one distribution over actions per state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy(Table);

impl Policy {
    /// Validates that every row is a distribution within [`PROB_SUM_TOL`].
    pub fn new(table: Table) -> Result<Self, MdpError> {
        for s in 0..table.rows() {
            if !check_distribution(table.row(s), PROB_SUM_TOL) {
                return Err(MdpError::Distribution { name: "policy row" });
            }
        }
        Ok(Self(table))
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self(Table::filled(n_states, n_actions, 1.0 / n_actions as f64))
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn probs(&self, s: usize) -> &[f64] {
        self.0.row(s)
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.0.get(s, a)
    }

    pub fn table(&self) -> &Table {
        &self.0
    }

    /// Greedy action per state, ties broken towards the lowest index.
    pub fn greedy(&self) -> DeterministicPolicy {
        DeterministicPolicy::new((0..self.n_states()).map(|s| argmax_lowest(self.probs(s))).collect())
    }
}

/// Index of the maximum; the first one wins on exact ties.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Tabular softmax parameters θ ∈ R^{|S|×|A|}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams {
    pub theta: Table,
}

impl SoftmaxParams {
    /// All-zero θ, i.e. the uniform policy.
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { theta: Table::zeros(n_states, n_actions) }
    }

    pub fn new(theta: Table) -> Self {
        Self { theta }
    }

    /// θ = log π, so that the induced softmax policy equals `policy` wherever
    /// `policy` is positive. Zero entries are floored at 1e-300.
    pub fn from_policy(policy: &Policy) -> Self {
        let theta = Table::from_fn(policy.n_states(), policy.n_actions(), |s, a| policy.prob(s, a).max(1e-300).ln());
        Self { theta }
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.theta.rows()
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.theta.cols()
    }

    /// `π_θ(·|s)`.
    pub fn policy_probs(&self, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions()];
        softmax_into(self.theta.row(s), &mut out);
        out
    }

    /// `log π_θ(·|s)`, computed without forming probabilities.
    pub fn log_probs(&self, s: usize) -> Vec<f64> {
        log_softmax(self.theta.row(s))
    }

    pub fn policy(&self) -> Policy {
        let mut table = Table::zeros(self.n_states(), self.n_actions());
        for s in 0..self.n_states() {
            softmax_into(self.theta.row(s), table.row_mut(s));
        }
        Policy(table)
    }
}

/// Row-max-stabilised softmax.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// `π_θ(·|s)` for a single state.
pub fn policy_probs(params: &SoftmaxParams, s: usize) -> Vec<f64> {
    params.policy_probs(s)
}

/// Exact value, action-value and advantage functions of a policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub v: Vec<f64>,
    pub q: Table,
    pub adv: Table,
}

impl Evaluation {
    /// `V(d) = Σ_s d(s) V(s)`.
    pub fn value_at(&self, dist: &[f64]) -> f64 {
        dist.iter().zip(&self.v).map(|(p, v)| p * v).sum()
    }
}

/// Solves `(I − γP_π)V = r_π` directly and derives `Q` and `A = Q − V`.
pub fn evaluate(mdp: &Mdp, policy: &Policy) -> Result<Evaluation, MdpError> {
    mdp.check_policy(policy)?;
    let (m, r) = mdp.policy_system(policy);
    let v = m.clone().lu().solve(&r).ok_or_else(|| MdpError::Numerical("singular Bellman system".into()))?;
    let residual = (&m * &v - &r).amax();
    if !(residual <= SOLVE_RESIDUAL_TOL) {
        return Err(MdpError::Numerical(format!("Bellman residual {residual:e}")));
    }
    let v: Vec<f64> = v.iter().copied().collect();
    let (q, adv) = q_and_adv(mdp, &v);
    Ok(Evaluation { v, q, adv })
}

fn q_and_adv(mdp: &Mdp, v: &[f64]) -> (Table, Table) {
    let q = Table::from_fn(mdp.n_states, mdp.n_actions, |s, a| {
        let next: f64 = mdp.next_dist(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
        mdp.reward_at(s, a) + mdp.gamma * next
    });
    let adv = Table::from_fn(mdp.n_states, mdp.n_actions, |s, a| q.get(s, a) - v[s]);
    (q, adv)
}

/// Discounted state-visitation distribution `d^π_start`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateDist(pub Vec<f64>);

impl StateDist {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Solves `dᵀ(I − γP_π) = (1−γ) startᵀ`.
pub fn visitation(mdp: &Mdp, policy: &Policy, start: &[f64]) -> Result<StateDist, MdpError> {
    mdp.check_policy(policy)?;
    if start.len() != mdp.n_states {
        return Err(MdpError::LengthMismatch { left: start.len(), right: mdp.n_states });
    }
    if !check_distribution(start, PROB_SUM_TOL) {
        return Err(MdpError::Distribution { name: "start" });
    }
    let (m, _) = mdp.policy_system(policy);
    let rhs = DVector::from_iterator(mdp.n_states, start.iter().map(|p| (1.0 - mdp.gamma) * p));
    let d = m.transpose().lu().solve(&rhs).ok_or_else(|| MdpError::Numerical("singular visitation system".into()))?;
    // Roundoff can leave entries at -1e-17.
    let d: Vec<f64> = d.iter().map(|&x| if x < 0.0 && x > -1e-14 { 0.0 } else { x }).collect();
    if d.iter().any(|&x| x < 0.0 || !x.is_finite()) || (d.iter().sum::<f64>() - 1.0).abs() > DIST_SUM_TOL {
        return Err(MdpError::Numerical("visitation is not a distribution".into()));
    }
    Ok(StateDist(d))
}

/// One action per state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    pub actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(actions: Vec<usize>) -> Self {
        Self { actions }
    }

    #[inline]
    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }

    pub fn n_states(&self) -> usize {
        self.actions.len()
    }

    pub fn to_policy(&self, n_actions: usize) -> Policy {
        let mut t = Table::zeros(self.actions.len(), n_actions);
        for (s, &a) in self.actions.iter().enumerate() {
            assert!(a < n_actions, "action index out of range");
            t.set(s, a, 1.0);
        }
        Policy(t)
    }
}

fn greedy_with_ties(q: &Table) -> Vec<usize> {
    (0..q.rows())
        .map(|s| {
            let row = q.row(s);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tol = TIE_TOL * max.abs().max(1.0);
            row.iter().position(|&x| x >= max - tol).unwrap_or(0)
        })
        .collect()
}

/// Value iteration to [`VALUE_ITERATION_TOL`], then the greedy policy (ties
/// to the lowest action index), polished by exact policy-iteration steps so
/// the returned policy is optimal rather than merely near-optimal.
pub fn solve_optimal(mdp: &Mdp) -> (DeterministicPolicy, Evaluation) {
    let n = mdp.n_states;
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let max_iters = 1_000_000;
    for _ in 0..max_iters {
        let mut delta: f64 = 0.0;
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions {
                let ev: f64 = mdp.next_dist(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                best = best.max(mdp.reward_at(s, a) + mdp.gamma * ev);
            }
            next[s] = best;
            delta = delta.max((best - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if delta <= VALUE_ITERATION_TOL {
            break;
        }
    }
    let (q, _) = q_and_adv(mdp, &v);
    let mut pi = DeterministicPolicy::new(greedy_with_ties(&q));
    let mut eval =
        evaluate(mdp, &pi.to_policy(mdp.n_actions)).expect("deterministic policy evaluation cannot fail for gamma < 1");
    for _ in 0..100 {
        let improved = DeterministicPolicy::new(greedy_with_ties(&eval.q));
        if improved == pi {
            break;
        }
        pi = improved;
        eval = evaluate(mdp, &pi.to_policy(mdp.n_actions))
            .expect("deterministic policy evaluation cannot fail for gamma < 1");
    }
    (pi, eval)
}

/// `½ Σ_a |p(a) − q(a)|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64, MdpError> {
    if p.len() != q.len() {
        return Err(MdpError::LengthMismatch { left: p.len(), right: q.len() });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `‖d / μ‖∞`.
pub fn mismatch_coefficient(d: &StateDist, mu: &[f64]) -> Result<f64, MdpError> {
    if d.0.len() != mu.len() {
        return Err(MdpError::LengthMismatch { left: d.0.len(), right: mu.len() });
    }
    if let Some(state) = mu.iter().position(|&m| m <= 0.0) {
        return Err(MdpError::NonPositive { state, value: mu[state] });
    }
    Ok(d.0.iter().zip(mu).fold(0.0, |m, (d, u)| m.max(d / u)))
}

/// Per-state TV radius `α(s)` of a default policy around an optimal policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaProfile(pub Vec<f64>);

impl AlphaProfile {
    pub fn constant(n_states: usize, alpha: f64) -> Self {
        Self(vec![alpha; n_states])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    /// `E_{s∼dist} α(s)`.
    pub fn mean_under(&self, dist: &[f64]) -> f64 {
        self.0.iter().zip(dist).map(|(a, p)| a * p).sum()
    }
}

/// `α(s) = d_TV(δ_{a*(s)}, π₀(·|s)) = 1 − π₀(a*(s)|s)`.
pub fn alpha_profile(pi_star: &DeterministicPolicy, pi0: &Policy) -> AlphaProfile {
    AlphaProfile((0..pi_star.n_states()).map(|s| (1.0 - pi0.prob(s, pi_star.action(s))).clamp(0.0, 1.0)).collect())
}

/// A random MDP with uniform `ρ = μ`: transition rows and rewards drawn
/// uniformly and normalised. Used by test suites and verifiers.
pub fn random_mdp(rng: &mut crate::rng::Rng, n_states: usize, n_actions: usize, gamma: f64) -> Mdp {
    use rand::Rng as _;
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let row: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 1e-3).collect();
        let z: f64 = row.iter().sum();
        transition.extend(row.iter().map(|x| x / z));
    }
    let reward = Table::from_fn(n_states, n_actions, |_, _| rng.random::<f64>());
    let uniform = vec![1.0 / n_states as f64; n_states];
    Mdp::new(n_states, n_actions, transition, reward, gamma, uniform.clone(), uniform)
        .expect("random mdp is valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Mdp {
        // s0 -> s1 with reward 0; s1 absorbing with reward 1.
        Mdp::from_nested(
            2,
            1,
            &[vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            &[vec![0.0], vec![1.0]],
            0.9,
            vec![1.0, 0.0],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = SoftmaxParams::new(Table::from_vec(3, 2, vec![0.0, 0.0, 1.0, 0.0, 5.0, 5.0]));
        assert_eq!(policy_probs(&p, 0), vec![0.5, 0.5]);
        let row = policy_probs(&p, 1);
        assert!((row[0] - 0.73106).abs() < 1e-5 && (row[1] - 0.26894).abs() < 1e-5);
        let c = SoftmaxParams::new(Table::from_vec(1, 3, vec![7.0; 3]));
        for x in policy_probs(&c, 0) {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_does_not_overflow() {
        let p = SoftmaxParams::new(Table::from_vec(1, 2, vec![1000.0, 999.0]));
        let row = p.policy_probs(0);
        assert!(row.iter().all(|x| x.is_finite()));
        assert!((row[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
        let lp = p.log_probs(0);
        assert!((lp[0].exp() - row[0]).abs() < 1e-12);
    }

    #[test]
    fn self_loop_value() {
        let m = Mdp::from_nested(1, 1, &[vec![vec![1.0]]], &[vec![1.0]], 0.5, vec![1.0], vec![1.0]).unwrap();
        let e = evaluate(&m, &Policy::uniform(1, 1)).unwrap();
        assert!((e.v[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn chain_value() {
        let m = chain();
        let e = evaluate(&m, &Policy::uniform(2, 1)).unwrap();
        assert!((e.v[1] - 10.0).abs() < 1e-10);
        assert!((e.v[0] - 9.0).abs() < 1e-10);
        assert!(e.adv.as_slice().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn zero_reward_evaluates_to_zero() {
        let m = Mdp::from_nested(
            2,
            2,
            &[vec![vec![0.3, 0.7], vec![1.0, 0.0]], vec![vec![0.5, 0.5], vec![0.0, 1.0]]],
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            0.95,
            vec![0.5, 0.5],
            vec![0.5, 0.5],
        )
        .unwrap();
        let e = evaluate(&m, &Policy::uniform(2, 2)).unwrap();
        assert!(e.v.iter().chain(e.q.as_slice()).chain(e.adv.as_slice()).all(|&x| x == 0.0));
        let (pi, e) = solve_optimal(&m);
        assert_eq!(pi.actions, vec![0, 0]);
        assert!(e.v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn visitation_examples() {
        let cycle = Mdp::from_nested(
            2,
            1,
            &[vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            &[vec![0.0], vec![0.0]],
            0.5,
            vec![1.0, 0.0],
            vec![1.0, 0.0],
        )
        .unwrap();
        let d = visitation(&cycle, &Policy::uniform(2, 1), &[1.0, 0.0]).unwrap();
        assert!((d.0[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.0[1] - 1.0 / 3.0).abs() < 1e-12);

        let g0 = Mdp::from_nested(
            2,
            1,
            &[vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            &[vec![0.0], vec![0.0]],
            0.0,
            vec![0.25, 0.75],
            vec![0.25, 0.75],
        )
        .unwrap();
        let d = visitation(&g0, &Policy::uniform(2, 1), &[0.25, 0.75]).unwrap();
        assert_eq!(d.0, vec![0.25, 0.75]);

        let single =
            Mdp::from_nested(1, 2, &[vec![vec![1.0], vec![1.0]]], &[vec![0.0, 0.0]], 0.9, vec![1.0], vec![1.0])
                .unwrap();
        let d = visitation(&single, &Policy::uniform(1, 2), &[1.0]).unwrap();
        assert!((d.0[0] - 1.0).abs() < 1e-12);
        assert!(single.is_absorbing(0));
    }

    #[test]
    fn bandit_optimal() {
        let m = Mdp::from_nested(1, 2, &[vec![vec![1.0], vec![1.0]]], &[vec![1.0, 0.0]], 0.9, vec![1.0], vec![1.0])
            .unwrap();
        let (pi, e) = solve_optimal(&m);
        assert_eq!(pi.actions, vec![0]);
        assert!((e.v[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert!((tv_distance(&[0.2, 0.8], &[0.6, 0.4]).unwrap() - 0.4).abs() < 1e-15);
        assert!(matches!(tv_distance(&[1.0], &[0.5, 0.5]), Err(MdpError::LengthMismatch { .. })));
    }

    #[test]
    fn mismatch_examples() {
        let mu = vec![0.25; 4];
        assert_eq!(mismatch_coefficient(&StateDist(mu.clone()), &mu).unwrap(), 1.0);
        let mut d = vec![0.0; 20];
        d[3] = 1.0;
        let c = mismatch_coefficient(&StateDist(d), &[0.05; 20]).unwrap();
        assert!((c - 20.0).abs() < 1e-12);
        assert_eq!(mismatch_coefficient(&StateDist(vec![0.0, 0.0, 1.0]), &[0.5, 0.25, 0.25]).unwrap(), 4.0);
        assert!(matches!(
            mismatch_coefficient(&StateDist(vec![1.0, 0.0]), &[1.0, 0.0]),
            Err(MdpError::NonPositive { state: 1, .. })
        ));
    }

    #[test]
    fn alpha_examples() {
        let pi_star = DeterministicPolicy::new(vec![0, 1]);
        let a = alpha_profile(&pi_star, &pi_star.to_policy(2));
        assert_eq!(a.0, vec![0.0, 0.0]);
        let a = alpha_profile(&pi_star, &Policy::uniform(2, 2));
        assert_eq!(a.0, vec![0.5, 0.5]);
        let pi0 = Policy::new(Table::from_vec(2, 2, vec![0.9, 0.1, 0.1, 0.9])).unwrap();
        let a = alpha_profile(&pi_star, &pi0);
        assert!(a.0.iter().all(|x| (x - 0.1).abs() < 1e-15));
    }

    #[test]
    fn invalid_mdps_rejected() {
        let bad_t = Mdp::from_nested(1, 1, &[vec![vec![0.5]]], &[vec![0.0]], 0.5, vec![1.0], vec![1.0]);
        assert!(matches!(bad_t, Err(MdpError::Transition { .. })));
        let bad_r = Mdp::from_nested(1, 1, &[vec![vec![1.0]]], &[vec![1.5]], 0.5, vec![1.0], vec![1.0]);
        assert!(matches!(bad_r, Err(MdpError::Reward { .. })));
        let bad_g = Mdp::from_nested(1, 1, &[vec![vec![1.0]]], &[vec![0.0]], 1.0, vec![1.0], vec![1.0]);
        assert!(matches!(bad_g, Err(MdpError::Gamma(_))));
        let bad_mu = Mdp::from_nested(1, 1, &[vec![vec![1.0]]], &[vec![0.0]], 0.5, vec![1.0], vec![0.9]);
        assert!(matches!(bad_mu, Err(MdpError::Distribution { name: "mu" })));
    }

    #[test]
    fn json_field_names() {
        let m = chain();
        let text = m.to_json();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["n_states", "n_actions", "gamma", "rho", "mu", "transition", "reward"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        assert_eq!(value["transition"][0][0][1], 1.0);
        assert_eq!(Mdp::from_json(&text).unwrap(), m);
        let broken = text.replace("\"gamma\":0.9", "\"gamma\":1.5");
        assert!(Mdp::from_json(&broken).is_err());
    }
}
