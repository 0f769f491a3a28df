use mtrpo_core::multitask::{
    brute_force_barycenter, concentration_experiment, default_from_habit, expected_tv, habit_from_policies,
    habit_update_greedy, kl_barycenter, run_multitask, spearman, tv_barycenter, ConcentrationConfig, HabitAveraging,
    HabitTable, MultitaskSettings, TaskFamily,
};
use mtrpo_core::rng::{stream, Purpose, Rng};
use mtrpo_core::tree::{
    sample_leaf_count, task_with_rewards, TreeFamily, TreeFamilyConfig, CANDIDATES, S1, SHARED_ACTIONS, SHARED_STATES,
};
use mtrpo_core::{solve_optimal, DeterministicPolicy, Executor, Mdp, Mode, OptimConfig, RegKind, RegularizerSpec};
use proptest::prelude::*;
use rand::Rng as _;

fn det(actions: Vec<usize>) -> DeterministicPolicy {
    DeterministicPolicy::new(actions)
}

proptest! {
    #[test]
    fn habit_ignores_task_order(
        actions in prop::collection::vec(prop::collection::vec(0usize..3, 4), 1..8),
        perm_seed in any::<u64>(),
    ) {
        let fold = |order: &[usize]| {
            order.iter().fold(HabitTable::new(4, 3), |h, &i| {
                habit_update_greedy(&h, &det(actions[i].clone()), HabitAveraging::Cumulative)
            })
        };
        let order: Vec<usize> = (0..actions.len()).collect();
        let mut shuffled = order.clone();
        let mut rng = stream(perm_seed, 0, 0, Purpose::Misc);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let (a, b) = (fold(&order), fold(&shuffled));
        prop_assert!(a.xi.max_abs_diff(&b.xi) < 1e-12);
        let w = vec![1.0 / actions.len() as f64; actions.len()];
        let direct = habit_from_policies(&w, &actions.iter().cloned().map(det).collect::<Vec<_>>(), 3);
        prop_assert!(a.xi.max_abs_diff(&direct) < 1e-12);
    }

    #[test]
    fn barycenter_achieves_one_minus_max_habit(
        actions in prop::collection::vec(prop::collection::vec(0usize..4, 3), 1..6),
        raw_w in prop::collection::vec(0.05..1.0f64, 6),
    ) {
        let k = actions.len();
        let z: f64 = raw_w[..k].iter().sum();
        let w: Vec<f64> = raw_w[..k].iter().map(|x| x / z).collect();
        let pols: Vec<_> = actions.into_iter().map(det).collect();
        let (bary, habit) = tv_barycenter(&w, &pols, 4);
        let bp = bary.to_policy();
        prop_assert_eq!(&bp, &kl_barycenter(&w, &pols, 4).to_policy());
        let brute = brute_force_barycenter(&w, &pols, 4, 6);
        for s in 0..3 {
            let achieved = expected_tv(&w, &pols, s, bp.probs(s));
            prop_assert!((achieved - habit.expected_tv_of_greedy(s)).abs() <= 1e-12);
            prop_assert!(achieved <= brute.expected_tv[s] + 1e-12);
        }
    }

    #[test]
    fn all_optimal_tree_policies_share_the_spine(seed in any::<u64>()) {
        let family = TreeFamily::new(TreeFamilyConfig::new(0.5, 0.99));
        let mut rng = stream(seed, 0, 0, Purpose::TaskSampling);
        let (pi, _) = solve_optimal(&family.sample(&mut rng));
        for (&s, &a) in SHARED_STATES.iter().zip(&SHARED_ACTIONS) {
            prop_assert_eq!(pi.action(s), a);
        }
    }
}

#[test]
fn leaf_count_is_geometric_before_the_clamp() {
    let mut rng: Rng = stream(1, 0, 0, Purpose::TaskSampling);
    let n = 20_000;
    let ones = (0..n).filter(|_| sample_leaf_count(0.5, &mut rng) == 1).count();
    let freq = ones as f64 / n as f64;
    // four standard errors of a Bernoulli(0.5) mean
    assert!((freq - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "{freq}");
}

#[test]
fn single_leaf_tasks_value_gamma_to_the_fifth() {
    for gamma in [0.9, 0.99] {
        for &leaf in &CANDIDATES {
            let (_, e) = solve_optimal(&task_with_rewards(&[leaf], gamma));
            assert!((e.v[S1] - gamma.powi(5)).abs() < 1e-9);
        }
    }
}

/// Always the same single-reward-leaf task.
struct FixedTask(Mdp);

impl TaskFamily for FixedTask {
    fn n_states(&self) -> usize {
        self.0.n_states()
    }
    fn n_actions(&self) -> usize {
        self.0.n_actions()
    }
    fn sample(&self, _rng: &mut Rng) -> Mdp {
        self.0.clone()
    }
}

fn short_config() -> OptimConfig {
    OptimConfig { eta: 0.5, max_env_steps: 6000, mode: Mode::Sampled, ..OptimConfig::default() }
}

#[test]
fn shared_optimum_concentrates_the_default() {
    let family = FixedTask(task_with_rewards(&[CANDIDATES[0]], 0.99));
    let (pi_star, _) = solve_optimal(&family.0);
    let spec = RegularizerSpec::new(RegKind::HabitDefault, 0.2);
    let settings = MultitaskSettings::default();
    let run = |n| run_multitask(&family, n, &spec, &short_config(), &settings, 0, 0).unwrap();
    let on_path = [0usize, 2, 4, 5, 6, 7];

    // softmax(ξ/β(k)) with ξ one-hot on the optimum: e^{1/β}/(e^{1/β}+1)
    let mass = |k: f64| {
        let b = (-0.1 * k).exp();
        (1.0 / b).exp() / ((1.0 / b).exp() + 1.0)
    };
    let five = run(5);
    for &s in &on_path {
        let p = five.default_snapshots[4].prob(s, pi_star.action(s));
        assert!((p - mass(5.0)).abs() < 1e-12, "state {s}: {p}");
    }
    let eight = run(8);
    for &s in &on_path {
        assert!(eight.default_snapshots[7].prob(s, pi_star.action(s)) >= 0.9);
    }
}

#[test]
fn first_default_is_tempered_indicator() {
    let family = FixedTask(task_with_rewards(&[CANDIDATES[3]], 0.99));
    let spec = RegularizerSpec::new(RegKind::HabitDefault, 0.2);
    let r = run_multitask(&family, 1, &spec, &short_config(), &MultitaskSettings::default(), 4, 2).unwrap();
    let greedy = r.per_task[0].run.final_params.policy().greedy();
    let habit = habit_update_greedy(&HabitTable::new(20, 2), &greedy, HabitAveraging::Cumulative);
    let expected = default_from_habit(&habit, (-0.1f64).exp()).to_policy();
    assert_eq!(r.default_snapshots[0], expected);
}

#[test]
fn every_method_sees_the_same_tasks() {
    let family = TreeFamily::new(TreeFamilyConfig::default());
    let config = OptimConfig { max_env_steps: 200, ..short_config() };
    let settings = MultitaskSettings::default();
    let optima = |kind| {
        run_multitask(&family, 4, &RegularizerSpec::new(kind, 0.2), &config, &settings, 3, 1)
            .unwrap()
            .per_task
            .into_iter()
            .map(|t| t.optimal_policy)
            .collect::<Vec<_>>()
    };
    assert_eq!(optima(RegKind::HabitDefault), optima(RegKind::Distral));
    assert_eq!(optima(RegKind::HabitDefault), optima(RegKind::None));
}

#[test]
fn concentration_gap_shrinks_with_more_tasks() {
    let family = TreeFamily::new(TreeFamilyConfig::default());
    let config = ConcentrationConfig { n_repeats: 20, k_ref: 500, ..ConcentrationConfig::default() };
    let report = concentration_experiment(&family, &config, 0, &Executor::sequential());
    let ks: Vec<f64> = report.rows.iter().map(|r| r.k as f64).collect();
    let gaps: Vec<f64> = report.rows.iter().map(|r| r.gap).collect();
    assert!(spearman(&ks, &gaps) < 0.0);
    assert_eq!(report.spearman, spearman(&ks, &gaps));
    let parallel = concentration_experiment(&family, &config, 0, &Executor::new(3));
    assert_eq!(parallel, report);
}
