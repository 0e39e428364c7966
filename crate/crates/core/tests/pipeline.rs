use navlab::analysis::{collect_trial_samples, fit_alignment, AlignmentConfig};
use navlab::fixtures::{corridor, goal_seeker};
use navlab::harness::{cmd_hds, cmd_pipeline, ExperimentConfig, MazeSource, RunManifest};
use navlab::policy::{Checkpoint, RolloutConfig};
use navlab::ridge::RidgeConfig;
use navlab::rng;

#[test]
fn identical_trials_give_flagged_columns_and_null_correlation() {
    // The seeker walks the same two-step corridor every trial, so every
    // neural row and every ridge image is the same.
    let samples = collect_trial_samples(&goal_seeker(8), &[corridor()], RolloutConfig::greedy(60), None);
    assert_eq!(samples.len(), 30);
    assert_eq!(samples.neural.nrows(), samples.trajectories.len());
    let a = fit_alignment(&samples, &RidgeConfig::default(), &AlignmentConfig::default(), &mut rng::seeded(0)).unwrap();
    assert_eq!(a.neural_std.flagged_count(), 8);
    assert_eq!(a.behavior_std.flagged_count(), 441);
    assert!(a.cca.correlations.iter().all(|r| r.abs() < 1e-9), "{:?}", a.cca.correlations);
}

#[test]
fn neural_and_behavior_rows_always_pair_up() {
    let cfg = ExperimentConfig::default();
    let mazes: Vec<_> = navlab::evolution::maze_batch(&cfg.train, "analysis-maze", 0, 40)
        .unwrap()
        .into_iter()
        .map(|s| s.maze)
        .collect();
    let s = collect_trial_samples(&goal_seeker(32), &mazes, RolloutConfig::greedy(100), None);
    let trials: usize = s.origin.iter().filter(|o| o.1 == 0).count();
    assert!(trials > 0);
    assert_eq!(s.neural.nrows(), s.len());
    for (row, (_, _, len)) in s.origin.iter().enumerate() {
        assert_eq!(s.trajectories[row].points.len(), len + 1);
    }
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default().with_seed(2);
    cfg.analysis_mazes = 60;
    cfg.hds.lyapunov_samples = 20;
    cfg.hds.stim_initial = 10;
    cfg
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("seeker.txt");
    Checkpoint::new(goal_seeker(32), 0, 0).save(&ckpt).unwrap();
    let cfg = small_config();
    let mut digests = Vec::new();
    for tag in ["a", "b"] {
        let p = cmd_pipeline(&cfg, &ckpt, &dir.path().join(tag).join("pipeline")).unwrap();
        let h = cmd_hds(&cfg, &ckpt, &MazeSource::Generated(3), &dir.path().join(tag).join("hds")).unwrap();
        let all: Vec<_> = p.outputs().chain(h.outputs()).cloned().collect();
        digests.push(all);
    }
    assert!(digests[0].len() >= 8);
    assert_eq!(digests[0], digests[1]);
    RunManifest::load_verified(&dir.path().join("a/pipeline")).unwrap();
}

#[test]
fn a_different_seed_changes_the_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("seeker.txt");
    Checkpoint::new(goal_seeker(32), 0, 0).save(&ckpt).unwrap();
    let a = cmd_pipeline(&small_config(), &ckpt, &dir.path().join("a")).unwrap();
    let b = cmd_pipeline(&small_config().with_seed(3), &ckpt, &dir.path().join("b")).unwrap();
    let find = |m: &RunManifest| m.outputs().find(|o| o.path == "samples.csv").unwrap().sha256.clone();
    assert_ne!(find(&a), find(&b));
}
