#![allow(dead_code)]

use mtrpo_core::mdp::random_mdp;
use mtrpo_core::rng::{stream, Purpose};
use mtrpo_core::{Mdp, SoftmaxParams, Table};
use rand::Rng as _;

/// Random MDP with `|S| ∈ [2,6]`, `|A| ∈ [2,4]` drawn from `seed`.
pub fn mdp_from_seed(seed: u64, gamma: f64) -> Mdp {
    let mut rng = stream(seed, 1, 0, Purpose::Misc);
    let n_s = rng.random_range(2..=6);
    let n_a = rng.random_range(2..=4);
    random_mdp(&mut rng, n_s, n_a, gamma)
}

/// Logits uniform in `[-scale, scale]`.
pub fn params_from_seed(seed: u64, n_s: usize, n_a: usize, scale: f64) -> SoftmaxParams {
    let mut rng = stream(seed, 2, 0, Purpose::Misc);
    SoftmaxParams::new(Table::from_fn(n_s, n_a, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * scale))
}

/// Central difference of `f` along every coordinate of `params`.
pub fn finite_difference(params: &SoftmaxParams, h: f64, f: impl Fn(&SoftmaxParams) -> f64) -> Table {
    let (n_s, n_a) = (params.n_states(), params.n_actions());
    Table::from_fn(n_s, n_a, |s, a| {
        let mut plus = params.clone();
        plus.theta.set(s, a, plus.theta.get(s, a) + h);
        let mut minus = params.clone();
        minus.theta.set(s, a, minus.theta.get(s, a) - h);
        (f(&plus) - f(&minus)) / (2.0 * h)
    })
}

/// `‖a − b‖∞ / ‖b‖∞`, with the denominator floored at 1e-12.
pub fn rel_err(a: &Table, b: &Table) -> f64 {
    a.max_abs_diff(b) / b.inf_norm().max(1e-12)
}
