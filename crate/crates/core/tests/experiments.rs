use std::fs;
use std::path::Path;

use mtrpo_core::experiments::{
    run_bound_verification, run_concentration, run_delay_sweep, run_fixed_baselines, run_kappa_sweep,
    run_learned_baselines, ExperimentConfig, Method,
};

fn small(dir: Option<&Path>, workers: usize) -> ExperimentConfig {
    ExperimentConfig {
        n_seeds: 3,
        n_tasks: 2,
        env_steps_per_task: 700,
        workers,
        output_dir: dir.map(Path::to_path_buf),
        n_mdps: 2,
        k_values: vec![5, 20],
        n_repeats: 4,
        k_ref: 100,
        action_counts: vec![2, 3],
        ..ExperimentConfig::default()
    }
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn curve_rows_cover_every_update() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_fixed_baselines(&small(Some(dir.path()), 1)).unwrap();
    assert_eq!(out.cells.len(), 3 * 4);
    let total: usize = out.cells.iter().map(|c| c.curves.len()).sum();
    let text = fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "seed,method,task,update_index,env_steps,episode_reward,reward_ma100,value_rho");
    assert_eq!(lines.count(), total);
    for cell in &out.cells {
        for task in 0..2 {
            let rows: Vec<_> = cell.curves.iter().filter(|r| r.task == task).collect();
            assert_eq!(rows.first().unwrap().update_index, 1);
            assert_eq!(rows.last().unwrap().update_index as usize, rows.len());
            assert!(rows.last().unwrap().env_steps >= 700);
        }
    }
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.starts_with("method,mean_final_reward,std\ntvpo,"));
}

#[test]
fn csv_output_independent_of_worker_count() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_learned_baselines(&small(Some(a.path()), 1)).unwrap();
    run_learned_baselines(&small(Some(b.path()), 3)).unwrap();
    let files = read_dir(a.path());
    assert!(files.iter().any(|(n, _)| n == "final_defaults.csv"));
    assert_eq!(files, read_dir(b.path()));
}

#[test]
fn zero_delay_reproduces_reverse_kl_arm() {
    let cfg = small(None, 1);
    let learned = run_learned_baselines(&cfg).unwrap();
    let rows = run_delay_sweep(&cfg, &[0, 350]).unwrap();
    let expected = learned.mean_final_reward(Method::ReverseKl, 0..2);
    assert!((rows[0].mean_final_reward - expected).abs() < 1e-12);
    assert_eq!(rows[1].delay, 350);
}

#[test]
fn empty_suite_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { n_mdps: 0, ..small(Some(dir.path()), 1) };
    assert!(run_bound_verification(&cfg).unwrap().is_empty());
    let text = fs::read_to_string(dir.path().join("verification.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn kappa_and_concentration_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Some(dir.path()), 2);
    let rows = run_kappa_sweep(&cfg).unwrap();
    for n_a in [2usize, 3] {
        let col: Vec<_> = rows.iter().filter(|r| r.n_actions == n_a && r.kappa.is_finite()).collect();
        assert!(col.windows(2).all(|w| w[0].alpha < w[1].alpha && w[0].kappa <= w[1].kappa));
    }
    let kappa_csv = fs::read_to_string(dir.path().join("kappa_sweep.csv")).unwrap();
    assert!(kappa_csv.contains(",inf,inf"));
    let reports = run_concentration(&cfg).unwrap();
    assert_eq!(reports.len(), 2);
    let text = fs::read_to_string(dir.path().join("concentration.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 4);
}

#[test]
fn invalid_config_rejected() {
    let cfg = ExperimentConfig { gamma: 1.0, ..small(None, 1) };
    assert!(run_fixed_baselines(&cfg).is_err());
    let cfg = ExperimentConfig { p_geometric: Some(0.0), ..small(None, 1) };
    assert!(run_learned_baselines(&cfg).is_err());
}
