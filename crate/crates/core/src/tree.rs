//! The 20-state binary tree task family.
//!
//! Nine decision states lead to six zero-reward leaves and four candidate
//! leaves, some of which pay reward 1 in each sampled task. Every leaf moves
//! to an absorbing terminal state.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::mdp::Mdp;
use crate::multitask::TaskFamily;
use crate::rng::Rng;
use crate::table::Table;

pub const N_STATES: usize = 20;
pub const N_ACTIONS: usize = 2;
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

pub const S1: usize = 0;
pub const S3: usize = 2;
pub const S5: usize = 4;
pub const S6: usize = 5;
pub const S7: usize = 6;
pub const TERMINAL: usize = 19;
/// Candidate reward leaves q1..q4.
pub const CANDIDATES: [usize; 4] = [15, 16, 17, 18];
/// Decision states on the path every optimal policy shares.
pub const SHARED_STATES: [usize; 4] = [S1, S3, S5, S6];
/// The shared optimal action at each of [`SHARED_STATES`].
pub const SHARED_ACTIONS: [usize; 4] = [RIGHT, RIGHT, LEFT, LEFT];
/// Largest number of rewarded leaves.
pub const REWARD_LEAF_CAP: usize = 4;

/// State labels, indexed by state.
pub const STATE_NAMES: [&str; N_STATES] = [
    "s1", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "z1", "z2", "z3", "z4", "z5", "z6", "q1", "q2", "q3", "q4",
    "term",
];

/// `(left child, right child)` of each decision state s1..s9.
const CHILDREN: [(usize, usize); 9] = [
    (1, 2),   // s1 -> s2, s3
    (3, 11),  // s2 -> s4, z3
    (12, 4),  // s3 -> z4, s5
    (9, 10),  // s4 -> z1, z2
    (5, 13),  // s5 -> s6, z5
    (6, 14),  // s6 -> s7, z6
    (7, 8),   // s7 -> s8, s9
    (15, 16), // s8 -> q1, q2
    (17, 18), // s9 -> q3, q4
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeFamilyConfig {
    pub p_geometric: f64,
    pub gamma: f64,
}

impl Default for TreeFamilyConfig {
    fn default() -> Self {
        Self { p_geometric: 0.5, gamma: 0.99 }
    }
}

impl TreeFamilyConfig {
    pub fn new(p_geometric: f64, gamma: f64) -> Self {
        assert!(p_geometric > 0.0 && p_geometric < 1.0, "p_geometric must lie in (0, 1)");
        Self { p_geometric, gamma }
    }
}

/// Deterministic transitions of the tree as a flat `[s][a][s']` buffer.
pub fn transitions() -> Vec<f64> {
    let mut t = vec![0.0; N_STATES * N_ACTIONS * N_STATES];
    let mut set = |s: usize, a: usize, next: usize| t[(s * N_ACTIONS + a) * N_STATES + next] = 1.0;
    for (s, &(l, r)) in CHILDREN.iter().enumerate() {
        set(s, LEFT, l);
        set(s, RIGHT, r);
    }
    for s in 9..N_STATES {
        set(s, LEFT, TERMINAL);
        set(s, RIGHT, TERMINAL);
    }
    t
}

/// `(parent, action)` entering each candidate leaf.
pub fn candidate_entry(leaf: usize) -> (usize, usize) {
    CHILDREN
        .iter()
        .enumerate()
        .find_map(|(s, &(l, r))| {
            if l == leaf {
                Some((s, LEFT))
            } else if r == leaf {
                Some((s, RIGHT))
            } else {
                None
            }
        })
        .expect("leaf has a parent")
}

fn root_dist() -> Vec<f64> {
    let mut d = vec![0.0; N_STATES];
    d[S1] = 1.0;
    d
}

/// Tree with reward on the transitions into the given candidate leaves.
pub fn task_with_rewards(rewarded: &[usize], gamma: f64) -> Mdp {
    let mut reward = Table::zeros(N_STATES, N_ACTIONS);
    for &leaf in rewarded {
        let (s, a) = candidate_entry(leaf);
        reward.set(s, a, 1.0);
    }
    Mdp::new(N_STATES, N_ACTIONS, transitions(), reward, gamma, root_dist(), root_dist())
        .expect("tree task is valid by construction")
}

/// The reward-free tree.
pub fn build_topology(gamma: f64) -> Mdp {
    task_with_rewards(&[], gamma)
}

/// Count of rewarded leaves: Geometric(p) on `{1, 2, …}`, clamped to 4.
pub fn sample_leaf_count(p: f64, rng: &mut Rng) -> usize {
    let mut k = 1;
    while k < REWARD_LEAF_CAP && rng.random::<f64>() >= p {
        k += 1;
    }
    k
}

/// Draws which candidate leaves pay reward in one task.
pub fn sample_rewarded_leaves(config: &TreeFamilyConfig, rng: &mut Rng) -> Vec<usize> {
    let k = sample_leaf_count(config.p_geometric, rng);
    let mut leaves = CANDIDATES.to_vec();
    // Partial Fisher-Yates: the first k entries are a uniform k-subset.
    for i in 0..k {
        let j = rng.random_range(i..leaves.len());
        leaves.swap(i, j);
    }
    leaves.truncate(k);
    leaves.sort_unstable();
    leaves
}

pub fn sample_task(config: &TreeFamilyConfig, rng: &mut Rng) -> Mdp {
    task_with_rewards(&sample_rewarded_leaves(config, rng), config.gamma)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeFamily {
    pub config: TreeFamilyConfig,
}

impl TreeFamily {
    pub fn new(config: TreeFamilyConfig) -> Self {
        Self { config }
    }
}

impl TaskFamily for TreeFamily {
    fn n_states(&self) -> usize {
        N_STATES
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn sample(&self, rng: &mut Rng) -> Mdp {
        sample_task(&self.config, rng)
    }

    fn description(&self) -> String {
        format!("tree(p={}, gamma={})", self.config.p_geometric, self.config.gamma)
    }
}

/// State-name table as CSV (`state,name`).
pub fn state_names_csv() -> String {
    let mut out = String::from("state,name\n");
    for (i, name) in STATE_NAMES.iter().enumerate() {
        out.push_str(&format!("{i},{name}\n"));
    }
    out
}
