//! Multitask learning with a shared default policy.
//!
//! The habit table ξ averages greedy-action indicators over solved tasks; the
//! default policy is a tempered softmax of ξ. The greedy policy over ξ is
//! both the TV and the KL barycenter of the tasks' deterministic optimal
//! policies.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::mdp::{
    alpha_profile, argmax_lowest, softmax, solve_optimal, tv_distance, AlphaProfile, DeterministicPolicy, Mdp, Policy,
    SoftmaxParams,
};
use crate::optimizer::{run_sampled, OptimConfig, OptimError, RunResult};
use crate::par::Executor;
use crate::regularizers::{DefaultPolicy, RegKind, RegularizerSpec};
use crate::rng::{derive_key, stream, Purpose, Rng};
use crate::table::Table;

/// A distribution over MDPs sharing state and action spaces.
pub trait TaskFamily: Send + Sync {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn sample(&self, rng: &mut Rng) -> Mdp;
    fn description(&self) -> String {
        String::new()
    }
}

/// Running average ξ of optimal-action indicators over `k` tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HabitTable {
    pub xi: Table,
    pub k: u64,
}

impl HabitTable {
    /// ξ⁰ = uniform, no tasks observed.
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self { xi: Table::filled(n_states, n_actions, 1.0 / n_actions as f64), k: 0 }
    }

    /// Expected TV distance between the greedy policy over ξ and a policy
    /// drawn from ξ, at state `s`: `1 − max_a ξ(s,a)`.
    pub fn expected_tv_of_greedy(&self, s: usize) -> f64 {
        1.0 - self.xi.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// How new indicators are folded into ξ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum HabitAveraging {
    /// `ξ ← (k−1)/k · ξ + 1/k · indicator`.
    Cumulative,
    /// `ξ ← (1−w) ξ + w · indicator`, for drifting task distributions.
    Exponential { weight: f64 },
}

/// Folds the greedy actions of `greedy` into the habit.
pub fn habit_update_greedy(habit: &HabitTable, greedy: &DeterministicPolicy, averaging: HabitAveraging) -> HabitTable {
    let k = habit.k + 1;
    let w = match averaging {
        HabitAveraging::Cumulative => 1.0 / k as f64,
        HabitAveraging::Exponential { weight } => weight,
    };
    let mut xi = habit.xi.clone();
    for s in 0..xi.rows() {
        let best = greedy.action(s);
        for (a, x) in xi.row_mut(s).iter_mut().enumerate() {
            let indicator = if a == best { 1.0 } else { 0.0 };
            *x = (1.0 - w) * *x + w * indicator;
        }
    }
    HabitTable { xi, k }
}

/// Cumulative habit update with the learner's greedy policy.
pub fn habit_update(habit: &HabitTable, learned: &SoftmaxParams) -> HabitTable {
    habit_update_greedy(habit, &learned.policy().greedy(), HabitAveraging::Cumulative)
}

/// Temperature `β(k)` of the habit softmax.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TemperatureSchedule {
    /// `β(k) = exp(−rate · k)`.
    ExpDecay {
        rate: f64,
    },
    Constant {
        value: f64,
    },
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule::ExpDecay { rate: 0.1 }
    }
}

impl TemperatureSchedule {
    pub fn beta(&self, k: u64) -> f64 {
        match *self {
            TemperatureSchedule::ExpDecay { rate } => (-rate * k as f64).exp(),
            TemperatureSchedule::Constant { value } => value,
        }
    }
}

/// `π₀(·|s) = softmax(ξ(s,·)/β)`.
pub fn default_from_habit(habit: &HabitTable, beta: f64) -> DefaultPolicy {
    assert!(beta > 0.0, "temperature must be positive");
    let mut t = Table::zeros(habit.xi.rows(), habit.xi.cols());
    for s in 0..t.rows() {
        let logits: Vec<f64> = habit.xi.row(s).iter().map(|x| x / beta).collect();
        t.row_mut(s).copy_from_slice(&softmax(&logits));
    }
    DefaultPolicy::FixedTable(Policy::new(t).expect("softmax rows are distributions"))
}

/// Knobs of a multitask run beyond the optimizer config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultitaskSettings {
    pub schedule: TemperatureSchedule,
    pub averaging: HabitAveraging,
    /// Start each task from `θ = log π₀` instead of the uniform policy.
    pub init_from_default: bool,
}

impl Default for MultitaskSettings {
    fn default() -> Self {
        Self {
            schedule: TemperatureSchedule::default(),
            averaging: HabitAveraging::Cumulative,
            init_from_default: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskRecord {
    pub task_index: usize,
    pub run: RunResult,
    /// Mean episode return over the last [`FINAL_WINDOW`] updates.
    pub final_avg_reward: f64,
    /// TV radius of the default used on this task around the task's
    /// optimal policy.
    pub alpha_profile_vs_task_optimal: AlphaProfile,
    pub optimal_policy: DeterministicPolicy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultitaskResult {
    pub per_task: Vec<TaskRecord>,
    /// Habit after each task.
    pub habit_snapshots: Vec<HabitTable>,
    /// Default policy after each task.
    pub default_snapshots: Vec<Policy>,
}

/// Number of trailing updates averaged into a task's final reward.
pub const FINAL_WINDOW: usize = 100;

pub fn final_avg_reward(run: &RunResult) -> f64 {
    let returns: Vec<f64> = run.history.iter().filter_map(|h| h.batch_return).collect();
    if returns.is_empty() {
        return 0.0;
    }
    let tail = &returns[returns.len().saturating_sub(FINAL_WINDOW)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Runs `n_tasks` sequential tasks with one regularizer.
///
/// * `HabitDefault`: TVPO. Each task is regularized towards the current
///   habit-derived default, which is refreshed after the task.
/// * Learned kinds: one parametric default, uniform at start, persists
///   across tasks and is distilled during each.
/// * Other kinds: uniform default, fixed.
///
/// The task sequence depends only on `(master, seed)`, so every method sees
/// the same tasks. Each task gets a fresh learner.
pub fn run_multitask(
    family: &dyn TaskFamily,
    n_tasks: usize,
    spec: &RegularizerSpec,
    config: &OptimConfig,
    settings: &MultitaskSettings,
    master: u64,
    seed: u64,
) -> Result<MultitaskResult, OptimError> {
    let (n_s, n_a) = (family.n_states(), family.n_actions());
    let mut task_rng = stream(master, seed, 0, Purpose::TaskSampling);
    let mut habit = HabitTable::new(n_s, n_a);
    let mut default = if spec.kind.is_learned() {
        DefaultPolicy::Parametric(SoftmaxParams::zeros(n_s, n_a))
    } else {
        DefaultPolicy::uniform(n_s, n_a)
    };
    let mut out = MultitaskResult { per_task: Vec::new(), habit_snapshots: Vec::new(), default_snapshots: Vec::new() };
    for task_index in 0..n_tasks {
        let mdp = family.sample(&mut task_rng);
        let (pi_star, _) = solve_optimal(&mdp);
        let alpha = alpha_profile(&pi_star, &default.to_policy());
        let init = if settings.init_from_default && spec.kind == RegKind::HabitDefault {
            SoftmaxParams::from_policy(&default.to_policy())
        } else {
            SoftmaxParams::zeros(n_s, n_a)
        };
        let task_config = OptimConfig { seed: derive_key(master, seed, task_index as u64 + 1), ..config.clone() };
        let run = run_sampled(&mdp, spec, &default, &task_config, &init)?;
        habit = habit_update_greedy(&habit, &run.final_params.policy().greedy(), settings.averaging);
        default = match spec.kind {
            RegKind::HabitDefault => default_from_habit(&habit, settings.schedule.beta(habit.k)),
            k if k.is_learned() => run.final_default.clone(),
            _ => default,
        };
        out.habit_snapshots.push(habit.clone());
        out.default_snapshots.push(default.to_policy());
        out.per_task.push(TaskRecord {
            task_index,
            final_avg_reward: final_avg_reward(&run),
            run,
            alpha_profile_vs_task_optimal: alpha,
            optimal_policy: pi_star,
        });
    }
    Ok(out)
}

/// TVPO: [`run_multitask`] with the habit-derived default.
pub fn tvpo_run(
    family: &dyn TaskFamily,
    n_tasks: usize,
    spec: &RegularizerSpec,
    config: &OptimConfig,
    settings: &MultitaskSettings,
    master: u64,
    seed: u64,
) -> Result<MultitaskResult, OptimError> {
    if spec.kind != RegKind::HabitDefault {
        return Err(OptimError::Config("tvpo_run needs the HabitDefault regularizer".into()));
    }
    run_multitask(family, n_tasks, spec, config, settings, master, seed)
}

/// `ξ(s,a) = Σ_k w_k 1(π*_k(s) = a)`.
pub fn habit_from_policies(weights: &[f64], det_policies: &[DeterministicPolicy], n_actions: usize) -> Table {
    assert_eq!(weights.len(), det_policies.len(), "one weight per policy");
    let n_s = det_policies.first().map_or(0, DeterministicPolicy::n_states);
    let mut xi = Table::zeros(n_s, n_actions);
    for (w, pi) in weights.iter().zip(det_policies) {
        for s in 0..n_s {
            let a = pi.action(s);
            xi.set(s, a, xi.get(s, a) + w);
        }
    }
    xi
}

/// Greedy policy over ξ, ties to the lowest action index.
pub fn greedy_over(xi: &Table) -> DeterministicPolicy {
    DeterministicPolicy::new((0..xi.rows()).map(|s| argmax_lowest(xi.row(s))).collect())
}

/// TV barycenter of deterministic policies, with the habit table behind it.
pub fn tv_barycenter(
    weights: &[f64],
    det_policies: &[DeterministicPolicy],
    n_actions: usize,
) -> (DefaultPolicy, HabitTable) {
    let xi = habit_from_policies(weights, det_policies, n_actions);
    let policy = greedy_over(&xi).to_policy(n_actions);
    (DefaultPolicy::FixedTable(policy), HabitTable { xi, k: det_policies.len() as u64 })
}

/// KL barycenter (either direction); coincides with the TV barycenter.
pub fn kl_barycenter(weights: &[f64], det_policies: &[DeterministicPolicy], n_actions: usize) -> DefaultPolicy {
    tv_barycenter(weights, det_policies, n_actions).0
}

/// `Σ_k w_k d_TV(δ_{π*_k(s)}, candidate)`.
pub fn expected_tv(weights: &[f64], det_policies: &[DeterministicPolicy], s: usize, candidate: &[f64]) -> f64 {
    let n_a = candidate.len();
    weights
        .iter()
        .zip(det_policies)
        .map(|(w, pi)| {
            let mut point = vec![0.0; n_a];
            point[pi.action(s)] = 1.0;
            w * tv_distance(&point, candidate).expect("equal lengths")
        })
        .sum()
}

/// All points of the simplex over `n` actions with coordinates in
/// multiples of `1/resolution`.
pub fn simplex_grid(n: usize, resolution: usize) -> Vec<Vec<f64>> {
    fn rec(n: usize, left: usize, res: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == n - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / res as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(n, left - c, res, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, resolution, resolution, &mut Vec::new(), &mut out);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct BruteForceBarycenter {
    pub policy: Policy,
    /// Achieved expected TV per state.
    pub expected_tv: Vec<f64>,
}

/// Minimizes expected TV per state over deterministic candidates (in
/// action order) and then a simplex grid; a later candidate replaces the
/// incumbent only if it improves by more than 1e-12.
pub fn brute_force_barycenter(
    weights: &[f64],
    det_policies: &[DeterministicPolicy],
    n_actions: usize,
    candidate_grid_resolution: usize,
) -> BruteForceBarycenter {
    let n_s = det_policies.first().map_or(0, DeterministicPolicy::n_states);
    let mut candidates: Vec<Vec<f64>> = (0..n_actions)
        .map(|a| {
            let mut p = vec![0.0; n_actions];
            p[a] = 1.0;
            p
        })
        .collect();
    candidates.extend(simplex_grid(n_actions, candidate_grid_resolution.max(1)));
    let mut table = Table::zeros(n_s, n_actions);
    let mut achieved = Vec::with_capacity(n_s);
    for s in 0..n_s {
        let mut best = &candidates[0];
        let mut best_value = expected_tv(weights, det_policies, s, best);
        for c in &candidates[1..] {
            let v = expected_tv(weights, det_policies, s, c);
            if v < best_value - 1e-12 {
                best = c;
                best_value = v;
            }
        }
        table.row_mut(s).copy_from_slice(best);
        achieved.push(best_value);
    }
    BruteForceBarycenter { policy: Policy::new(table).expect("candidates are distributions"), expected_tv: achieved }
}

/// How an optimal deterministic policy is perturbed to a ζ-optimal one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorruptionModel {
    /// Mix with the uniform policy so that `d_TV = ζ` exactly in every state.
    UniformMix,
    /// With probability ζ per state, move all mass to a different action
    /// chosen uniformly; expected `d_TV = ζ`.
    ActionFlip,
}

/// A ζ-optimal perturbation of `pi_star`.
pub fn corrupt(
    pi_star: &DeterministicPolicy,
    n_actions: usize,
    zeta: f64,
    model: CorruptionModel,
    rng: &mut Rng,
) -> Policy {
    let n_s = pi_star.n_states();
    let mut t = Table::zeros(n_s, n_actions);
    for s in 0..n_s {
        let best = pi_star.action(s);
        match model {
            CorruptionModel::UniformMix => {
                let c = if n_actions > 1 { (zeta / (1.0 - 1.0 / n_actions as f64)).min(1.0) } else { 0.0 };
                for a in 0..n_actions {
                    let point = if a == best { 1.0 } else { 0.0 };
                    t.set(s, a, (1.0 - c) * point + c / n_actions as f64);
                }
            }
            CorruptionModel::ActionFlip => {
                let mut a = best;
                if n_actions > 1 && rng.random::<f64>() < zeta {
                    a = rng.random_range(0..n_actions - 1);
                    if a >= best {
                        a += 1;
                    }
                }
                t.set(s, a, 1.0);
            }
        }
    }
    Policy::new(t).expect("corrupted rows are distributions")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub k: usize,
    pub repeat: usize,
    /// Largest over states of the difference in expected TV between the
    /// sample and population barycenters.
    pub gap: f64,
    pub envelope: f64,
    pub within_envelope: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationReport {
    pub zeta: f64,
    pub rows: Vec<ConcentrationRow>,
    /// `(K, mean gap over repeats)` in input order.
    pub mean_gap: Vec<(usize, f64)>,
    /// Rank correlation of pooled `(K, gap)` pairs.
    pub spearman: f64,
}

impl ConcentrationReport {
    pub fn fraction_within_envelope(&self, k: usize) -> f64 {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.k == k).collect();
        rows.iter().filter(|r| r.within_envelope).count() as f64 / rows.len().max(1) as f64
    }
}

/// `2ζ + √(2 ln(2/δ)/K) + C √(|A|/K)` with `δ = 0.05`, `C = 1`.
pub fn concentration_envelope(zeta: f64, k: usize, n_actions: usize) -> f64 {
    let k = k as f64;
    2.0 * zeta + (2.0 * (2.0f64 / 0.05).ln() / k).sqrt() + (n_actions as f64 / k).sqrt()
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either variable is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationConfig {
    pub k_values: Vec<usize>,
    pub zeta: f64,
    pub n_repeats: usize,
    pub k_ref: usize,
    pub corruption: CorruptionModel,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        Self {
            k_values: vec![5, 20, 80, 320],
            zeta: 0.0,
            n_repeats: 50,
            k_ref: 2000,
            corruption: CorruptionModel::UniformMix,
        }
    }
}

/// Compares the barycenter of `K` corrupted optimal policies with the
/// population barycenter estimated from `k_ref` reference tasks.
///
/// For every `(K, repeat)` the statistic is
/// `max_s |E_ref d_TV(π*_k, π̂₀) − E_ref d_TV(π*_k, π₀)|`.
pub fn concentration_experiment(
    family: &dyn TaskFamily,
    config: &ConcentrationConfig,
    seed: u64,
    executor: &Executor,
) -> ConcentrationReport {
    let n_a = family.n_actions();
    let mut ref_rng = stream(seed, 0, 0, Purpose::Reference);
    let reference: Vec<DeterministicPolicy> =
        (0..config.k_ref).map(|_| solve_optimal(&family.sample(&mut ref_rng)).0).collect();
    let w_ref = vec![1.0 / reference.len() as f64; reference.len()];
    let (_, pop_habit) = tv_barycenter(&w_ref, &reference, n_a);
    let population = greedy_over(&pop_habit.xi);
    let pop_tv: Vec<f64> =
        (0..family.n_states()).map(|s| expected_tv(&w_ref, &reference, s, &det_row(&population, s, n_a))).collect();

    let cells: Vec<(usize, usize)> =
        config.k_values.iter().flat_map(|&k| (0..config.n_repeats).map(move |r| (k, r))).collect();
    let rows = executor.map(cells, |(k, repeat)| {
        let mut rng = stream(seed, repeat as u64 + 1, k as u64, Purpose::TaskSampling);
        let mut habit = HabitTable::new(family.n_states(), n_a);
        for _ in 0..k {
            let (pi_star, _) = solve_optimal(&family.sample(&mut rng));
            let noisy = corrupt(&pi_star, n_a, config.zeta, config.corruption, &mut rng);
            habit = habit_update_greedy(&habit, &noisy.greedy(), HabitAveraging::Cumulative);
        }
        let estimate = greedy_over(&habit.xi);
        let gap = (0..family.n_states())
            .map(|s| (expected_tv(&w_ref, &reference, s, &det_row(&estimate, s, n_a)) - pop_tv[s]).abs())
            .fold(0.0, f64::max);
        let envelope = concentration_envelope(config.zeta, k, n_a);
        ConcentrationRow { k, repeat, gap, envelope, within_envelope: gap <= envelope }
    });
    let mean_gap = config
        .k_values
        .iter()
        .map(|&k| {
            let gaps: Vec<f64> = rows.iter().filter(|r| r.k == k).map(|r| r.gap).collect();
            (k, gaps.iter().sum::<f64>() / gaps.len().max(1) as f64)
        })
        .collect();
    let ks: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    ConcentrationReport { zeta: config.zeta, spearman: spearman(&ks, &gaps), rows, mean_gap }
}

fn det_row(pi: &DeterministicPolicy, s: usize, n_actions: usize) -> Vec<f64> {
    let mut p = vec![0.0; n_actions];
    p[pi.action(s)] = 1.0;
    p
}
