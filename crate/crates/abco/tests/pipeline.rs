use abco::dataset::{self, SetKind};
use abco::envs::EnvId;
use abco::experts::{collect_expert_demos, collect_labelled_expert_demos, collect_pre_demos};
use abco::training::{abco_alpha, Baseline, FitConfig, LabelSource, RunConfig, SamplingMode};

fn small(env: EnvId, sampling: SamplingMode) -> RunConfig {
    let fit = FitConfig {
        epochs: 2,
        ..FitConfig::default()
    };
    RunConfig {
        alpha: 2,
        sampling,
        n_pre: 800,
        n_demos: 5,
        rollouts: 6,
        eval_episodes: 6,
        hidden: 16,
        attention_channels: 4,
        idm_fit: fit,
        policy_fit: fit,
        seed: 3,
        ..RunConfig::for_env(env)
    }
}

#[test]
fn files_feed_the_loop_exactly_like_memory() {
    let env = EnvId::Maze(3);
    let cfg = small(env, SamplingMode::Partial);
    let dir = tempfile::tempdir().unwrap();
    let pre = collect_pre_demos(env, cfg.n_pre, cfg.seed).unwrap();
    let demos = collect_expert_demos(env, cfg.n_demos, cfg.seed).unwrap();
    dataset::save(&pre, dir.path().join("pre.jsonl")).unwrap();
    dataset::save_demos(env, &demos, dir.path().join("demos.jsonl")).unwrap();
    let pre2 = dataset::load(dir.path().join("pre.jsonl")).unwrap();
    let (env2, demos2) = dataset::load_demos(dir.path().join("demos.jsonl")).unwrap();
    assert_eq!(pre2.kind, SetKind::Pre);
    assert_eq!(env2, env);

    let base = Baseline::measure(env, cfg.eval_episodes, cfg.seed).unwrap();
    let a = abco_alpha(&cfg, &pre, &demos, base, &mut |_| Ok(())).unwrap();
    let b = abco_alpha(&cfg, &pre2, &demos2, base, &mut |_| Ok(())).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), cfg.alpha + 1);
    // the first IDM fit sees only pre-demonstrations
    assert_eq!(a[0].idm_post_fraction, 0.0);
    assert_eq!(a[0].idm_set_size, cfg.n_pre);
}

#[test]
fn every_mode_runs_on_every_env_kind() {
    for env in [EnvId::CartPole, EnvId::MountainCar, EnvId::Maze(5)] {
        for sampling in [SamplingMode::None, SamplingMode::Partial, SamplingMode::Whole] {
            let cfg = RunConfig {
                alpha: 1,
                ..small(env, sampling)
            };
            let pre = collect_pre_demos(env, cfg.n_pre, cfg.seed).unwrap();
            let demos = collect_expert_demos(env, cfg.n_demos, cfg.seed).unwrap();
            let base = Baseline::measure(env, cfg.eval_episodes, cfg.seed).unwrap();
            let r = abco_alpha(&cfg, &pre, &demos, base, &mut |_| Ok(())).unwrap();
            assert_eq!(r.len(), 2, "{env} {sampling}");
            for rep in &r {
                assert!(rep.aer.is_finite() && rep.performance.is_finite());
                assert!((rep.action_prediction_histogram.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn behavioral_cloning_needs_actions() {
    let env = EnvId::Maze(3);
    let cfg = RunConfig {
        labels: LabelSource::GroundTruth,
        ..small(env, SamplingMode::None)
    };
    let pre = collect_pre_demos(env, cfg.n_pre, cfg.seed).unwrap();
    let base = Baseline::measure(env, cfg.eval_episodes, cfg.seed).unwrap();
    let bare = collect_expert_demos(env, cfg.n_demos, cfg.seed).unwrap();
    assert!(abco_alpha(&cfg, &pre, &bare, base, &mut |_| Ok(())).is_err());
    let labelled = collect_labelled_expert_demos(env, cfg.n_demos, cfg.seed).unwrap();
    let r = abco_alpha(&cfg, &pre, &labelled, base, &mut |_| Ok(())).unwrap();
    assert!(r.iter().all(|rep| rep.idm_validation_accuracy.is_none()));
    // the state sequences are the same with or without actions
    let stripped: Vec<_> = labelled.into_iter().map(|d| d.strip_actions()).collect();
    assert_eq!(stripped, bare);
}
