use memdep_core::envgym::TaskKind;
use memdep_core::evaluator::{rollout, rollout_agent, ExpertAgent, RandomAgent, RunReport};
use memdep_core::model::{Model, ModelConfig};
use memdep_core::profile::Profile;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn expert_policy_always_succeeds() {
    for task in TaskKind::ALL {
        let rate = rollout_agent(&mut ExpertAgent, &Profile::Desk.task_params(task), 1000, 9).unwrap();
        assert_eq!(rate, 1.0, "{task}");
    }
}

#[test]
fn untrained_model_is_near_chance_on_hallway() {
    let params = Profile::Desk.task_params(TaskKind::Hallway);
    let model = Model::new(ModelConfig::desk(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let rate = rollout(&model, &params, 200, 4).unwrap();
    assert!(rate < 0.3, "{rate}");
    let random = rollout_agent(&mut RandomAgent::new(1), &params, 200, 4).unwrap();
    assert!(random < 0.3, "{random}");
}

#[test]
fn rollouts_are_deterministic() {
    let params = Profile::Desk.task_params(TaskKind::CommandRecall);
    let model = Model::new(ModelConfig::desk(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(rollout(&model, &params, 40, 8).unwrap(), rollout(&model, &params, 40, 8).unwrap());
}

#[test]
fn reports_summarize_seeds_and_compare() {
    let tuned = RunReport::new(TaskKind::Hallway, "tuned".into(), vec![0, 1, 2], vec![1.0, 0.99, 1.0], 200);
    let plain = RunReport::new(TaskKind::Hallway, "plain".into(), vec![0, 1, 2], vec![0.2, 0.5, 0.3], 200);
    assert!((tuned.mean - 0.99666).abs() < 1e-4);
    assert_eq!(tuned.median, 1.0);
    assert!(tuned.half_width > 0.0);
    let compared = tuned.with_baseline(&plain).unwrap();
    let p = compared.p_value.unwrap();
    assert!(p > 0.0 && p < 0.05, "{p}");
    let flat = RunReport::new(TaskKind::Hallway, "flat".into(), vec![0, 1], vec![0.5, 0.5], 200);
    assert_eq!(flat.half_width, 0.0);
}
