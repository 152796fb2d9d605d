use grainrl::corpus::{OracleSpec, Vocabulary};
use grainrl::editdiff::{build_dataset, DatasetOptions, EditorBackend};
use grainrl::harness::{
    dataset_size_for, run_table_experiments, ExperimentConfig, HarnessError, SftConfig, SEQUENCE_ARM, TOKEN_ARM,
};
use grainrl::ppo::{train_ppo, Policy, PpoConfig, RewardScheme};
use grainrl::reward::{train_rm, HeadKind, RmTrainConfig};
use grainrl::{Policy32, RewardModel32};

fn tiny(target: f64) -> ExperimentConfig {
    let ppo = |scheme| PpoConfig { scheme, max_iters: 3, batch_size: 8, target_oracle_reward: target, ..Default::default() };
    ExperimentConfig {
        name: "tiny".into(),
        seeds: vec![3],
        train_pairs: 100,
        eval_prompts: 100,
        sft: SftConfig { demonstrations: 200, epochs: 2, ..Default::default() },
        rm: RmTrainConfig { epochs: 3, ..Default::default() },
        ppo_token: ppo(RewardScheme::TokenLevel),
        ppo_sequence: ppo(RewardScheme::SequenceTerminal),
        ..Default::default()
    }
}

#[test]
fn tiny_experiment_fills_all_tables_deterministically() {
    let v = Vocabulary::standard();
    let config = tiny(10.0);
    let dir = tempfile::tempdir().unwrap();
    let (bundle, artifacts) = run_table_experiments(&v, &config, Some(dir.path())).unwrap();

    assert_eq!(bundle.t1.len(), 2);
    assert!(bundle.t1.iter().all(|r| r.n_comparisons == 100));
    assert_eq!(bundle.t2.len(), 1);
    assert_eq!(bundle.t2[0].heldout_pairs, dataset_size_for(100, 0.1) - 100);
    // An unreachable target is censored at max_iters + 1.
    for arm in [TOKEN_ARM, SEQUENCE_ARM] {
        let row = bundle.t3.iter().find(|r| r.arm == arm).unwrap();
        assert_eq!((row.iterations, row.reached), (4, false));
    }
    assert_eq!(artifacts.len(), 1);
    assert_eq!(artifacts[0].token_run.log.len(), 3);
    for f in ["config.toml", "reports/t1.csv", "reports/t2.csv", "reports/t3.csv", "logs/seed3_token_level.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let written = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&written).unwrap(), config);

    let (again, _) = run_table_experiments(&v, &config, None).unwrap();
    assert_eq!(again, bundle);
}

#[test]
fn arms_must_share_the_schedule() {
    let v = Vocabulary::standard();
    let mut config = tiny(0.5);
    config.ppo_sequence.batch_size = 16;
    assert!(matches!(run_table_experiments(&v, &config, None), Err(HarnessError::Config(_))));
    let mut config = tiny(0.5);
    config.ppo_sequence.scheme = RewardScheme::TokenLevel;
    assert!(matches!(config.validate(), Err(HarnessError::Config(_))));
}

#[test]
fn single_precision_pipeline_runs() {
    let v = Vocabulary::standard();
    let (pairs, _) =
        build_dataset(&v, 120, &EditorBackend::Synthetic { seed: 9 }, 9, &DatasetOptions::default()).unwrap();
    let trained = train_rm::<f32>(&v, &pairs, &RmTrainConfig { epochs: 3, ..Default::default() }).unwrap();
    let rm: RewardModel32 = trained.model;
    assert_eq!(rm.head, HeadKind::TokenLevel);
    assert!(trained.log.iter().all(|e| e.loss.is_finite()));
    assert!(trained.log.last().unwrap().heldout_accuracy > 0.5);

    let policy: Policy32 = Policy::new(&v, grainrl::ppo::default_policy_arch(), 1);
    let config = PpoConfig { max_iters: 2, batch_size: 8, ..Default::default() };
    let run = train_ppo(&v, &OracleSpec::default(), &policy, &policy, &rm, &config).unwrap();
    assert_eq!(run.log.len(), 2);
    assert!(run.log.iter().all(|r| r.policy_loss.is_finite() && r.mean_kl >= 0.0));
}
