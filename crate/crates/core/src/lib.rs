//! Regularized policy optimization with default policies on finite MDPs.
//!
//! The crate covers exact tabular evaluation, the penalty family used to pull
//! a softmax learner towards a default policy, exact and sampled policy
//! gradient loops, closed-form error and iteration bounds with empirical
//! verifiers, the multitask habit-based default (TVPO), and the tree task
//! family used by the experiments.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod experiments;
pub mod mdp;
pub mod multitask;
pub mod optimizer;
pub mod par;
pub mod regularizers;
pub mod rng;
pub mod table;
pub mod tree;

pub use mdp::{
    alpha_profile, evaluate, mismatch_coefficient, policy_probs, solve_optimal, tv_distance, visitation, AlphaProfile,
    DeterministicPolicy, Evaluation, Mdp, MdpError, Policy, SoftmaxParams, StateDist,
};
pub use optimizer::{
    exact_gradient, objective, reinforce_gradient, run_exact, run_sampled, sample_trajectory, Mode, OptimConfig,
    OptimError, RunResult, Termination,
};
pub use par::Executor;
pub use regularizers::{default_update, omega_grad, omega_value, DefaultPolicy, Lambda, RegKind, RegularizerSpec};
pub use table::Table;
